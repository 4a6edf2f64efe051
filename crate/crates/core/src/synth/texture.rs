//! Seeded multi-octave value noise.

/// Deterministic 3D value noise, summed over octaves of halving wavelength.
#[derive(Debug, Clone, Copy)]
pub struct ValueNoise {
    pub seed: u64,
    pub base_wavelength: f64,
    pub octaves: u32,
    /// Contrast gain applied about 0.5 before clamping to `[0, 1]`.
    pub gain: f64,
}

impl ValueNoise {
    pub fn new(seed: u64, base_wavelength: f64) -> Self {
        Self {
            seed,
            base_wavelength,
            octaves: 4,
            gain: 2.0,
        }
    }

    pub fn sample(&self, x: f64, y: f64, z: f64) -> f64 {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amplitude = 1.0;
        let mut freq = 1.0 / self.base_wavelength;
        for octave in 0..self.octaves {
            let salt = self.seed.wrapping_add((octave as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            total += amplitude * lattice_noise(salt, x * freq, y * freq, z * freq);
            norm += amplitude;
            amplitude *= 0.5;
            freq *= 2.0;
        }
        (0.5 + (total / norm - 0.5) * self.gain).clamp(0.0, 1.0)
    }
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn lattice_value(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((x as u64) ^ splitmix((y as u64) ^ splitmix(z as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lattice_noise(seed: u64, x: f64, y: f64, z: f64) -> f64 {
    let (xf, yf, zf) = (x.floor(), y.floor(), z.floor());
    let (xi, yi, zi) = (xf as i64, yf as i64, zf as i64);
    let (tx, ty, tz) = (fade(x - xf), fade(y - yf), fade(z - zf));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let corner = |dx, dy, dz| lattice_value(seed, xi + dx, yi + dy, zi + dz);
    let x00 = lerp(corner(0, 0, 0), corner(1, 0, 0), tx);
    let x10 = lerp(corner(0, 1, 0), corner(1, 1, 0), tx);
    let x01 = lerp(corner(0, 0, 1), corner(1, 0, 1), tx);
    let x11 = lerp(corner(0, 1, 1), corner(1, 1, 1), tx);
    lerp(lerp(x00, x10, ty), lerp(x01, x11, ty), tz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let n = ValueNoise::new(7, 0.5);
        for i in 0..500 {
            let p = (i as f64 * 0.137, i as f64 * -0.071, 3.0 + i as f64 * 0.01);
            let a = n.sample(p.0, p.1, p.2);
            assert_eq!(a, n.sample(p.0, p.1, p.2));
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn seeds_differ() {
        let a = ValueNoise::new(1, 0.5);
        let b = ValueNoise::new(2, 0.5);
        let differ = (0..100).filter(|&i| a.sample(i as f64 * 0.3, 0.1, 0.2) != b.sample(i as f64 * 0.3, 0.1, 0.2));
        assert!(differ.count() > 90);
    }

    #[test]
    fn has_contrast() {
        let n = ValueNoise::new(3, 1.0);
        let vals: Vec<f64> = (0..4000)
            .map(|i| n.sample((i % 63) as f64 * 0.173, (i / 63) as f64 * 0.191, 0.0))
            .collect();
        let (_, var) = crate::raster::mean_and_variance(vals.into_iter());
        assert!(var > 0.005, "variance {var}");
    }
}

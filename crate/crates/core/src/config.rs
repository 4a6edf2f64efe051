//! Pipeline configuration and its flat `key = value` file format.
//!
//! Every key is always written, so a saved file documents the full run.
//! Keys that accept `auto` are derived at run time: the focal length from
//! the field of view and image width, baselines and depth bounds from the
//! synthetic rig, `delta` from the image width.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::disambig::DisambigParams;
use crate::features::{HarrisParams, MatcherParams};
use crate::io::{parse_key_values, IoError};
use crate::rectify::RansacParams;
use crate::stereo::BlockMatchParams;
use crate::synth::{EulerRange, RigOptions, SceneSpec, SurfaceParams, SynthError};

/// Width and height of the full-resolution sensor; `scale` multiplies both.
pub const FULL_WIDTH: usize = 4608;
pub const FULL_HEIGHT: usize = 3456;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {value:?}")]
    BadValue { line: usize, key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Resolution relative to the 4608×3456 sensor.
    pub scale: f64,
    pub fov_deg: f64,
    pub focal_px: Option<f64>,
    pub c_lr: Option<f64>,
    pub c_lb: Option<f64>,

    pub surface_a: f64,
    pub surface_b: f64,
    pub surface_sigma: f64,
    pub footprint_half: f64,
    /// Half-ranges of the right camera's Euler perturbation, degrees.
    pub right_rot_deg: [f64; 3],
    /// Half-ranges of the back camera's Euler perturbation, degrees.
    pub back_rot_deg: [f64; 3],
    pub back_height: f64,
    pub baseline_ratio: f64,

    pub harris_k: f64,
    pub harris_sigma: f64,
    pub nms_radius: usize,
    pub max_corners: usize,
    pub patch_radius: usize,
    pub match_ratio: f64,
    pub match_min_score: f64,
    pub min_matches: usize,

    pub ransac_sample_size: usize,
    pub ransac_trials: usize,
    pub ransac_epsilon: f64,
    pub early_exit_ratio: f64,
    pub early_exit_patience: usize,
    pub min_inlier_ratio: f64,
    pub max_row_angle_deg: f64,
    pub phi: f64,

    pub block_radius: usize,
    pub lr_threshold: f64,
    pub min_ncc: f64,
    pub disparity_min: Option<f64>,
    pub disparity_max: Option<f64>,
    pub depth_min: Option<f64>,
    pub depth_max: Option<f64>,

    pub delta: Option<f64>,
    pub eta: f64,
    pub target_estimates: usize,
    pub max_trials: usize,
    pub min_estimates: usize,
    pub compensate_back_rotation: bool,

    /// Constant added to ground-truth disparity in oracle-stereo mode, pixels.
    pub oracle_offset: f64,
    pub histogram_bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let ransac = RansacParams::default();
        let matcher = MatcherParams::default();
        let block = BlockMatchParams::default();
        let dis = DisambigParams::default();
        let desk = SceneSpec::desk_default(0);
        Self {
            seed: 0,
            scale: 0.25,
            fov_deg: 6.0,
            focal_px: None,
            c_lr: None,
            c_lb: None,
            surface_a: desk.surface.a,
            surface_b: desk.surface.b,
            surface_sigma: desk.surface.sigma,
            footprint_half: desk.footprint_half,
            right_rot_deg: [5.0, 1.0, 1.0],
            back_rot_deg: [5.0, 1.0, 1.0],
            back_height: 0.0,
            baseline_ratio: 1.0 / 150.0,
            harris_k: matcher.harris.k,
            harris_sigma: matcher.harris.window_sigma,
            nms_radius: matcher.harris.nms_radius,
            max_corners: matcher.harris.max_corners,
            patch_radius: matcher.patch_radius,
            match_ratio: matcher.ratio,
            match_min_score: matcher.min_score,
            min_matches: matcher.min_matches,
            ransac_sample_size: ransac.sample_size,
            ransac_trials: ransac.trials,
            ransac_epsilon: ransac.epsilon,
            early_exit_ratio: ransac.early_exit_ratio,
            early_exit_patience: ransac.early_exit_patience,
            min_inlier_ratio: ransac.min_inlier_ratio,
            max_row_angle_deg: ransac.max_row_angle.to_degrees(),
            phi: 50.0,
            block_radius: block.radius,
            lr_threshold: block.lr_threshold,
            min_ncc: block.min_ncc,
            disparity_min: None,
            disparity_max: None,
            depth_min: None,
            depth_max: None,
            delta: None,
            eta: dis.eta,
            target_estimates: dis.target_estimates,
            max_trials: dis.max_trials,
            min_estimates: dis.min_estimates,
            compensate_back_rotation: dis.compensate_back_rotation,
            oracle_offset: -250.0,
            histogram_bins: 100,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

fn triple(v: [f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

impl PipelineConfig {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("scale", self.scale.to_string());
        kv("fov_deg", self.fov_deg.to_string());
        kv("focal_px", opt(self.focal_px));
        kv("c_lr", opt(self.c_lr));
        kv("c_lb", opt(self.c_lb));
        kv("surface_a", self.surface_a.to_string());
        kv("surface_b", self.surface_b.to_string());
        kv("surface_sigma", self.surface_sigma.to_string());
        kv("footprint_half", self.footprint_half.to_string());
        kv("right_rot_deg", triple(self.right_rot_deg));
        kv("back_rot_deg", triple(self.back_rot_deg));
        kv("back_height", self.back_height.to_string());
        kv("baseline_ratio", self.baseline_ratio.to_string());
        kv("harris_k", self.harris_k.to_string());
        kv("harris_sigma", self.harris_sigma.to_string());
        kv("nms_radius", self.nms_radius.to_string());
        kv("max_corners", self.max_corners.to_string());
        kv("patch_radius", self.patch_radius.to_string());
        kv("match_ratio", self.match_ratio.to_string());
        kv("match_min_score", self.match_min_score.to_string());
        kv("min_matches", self.min_matches.to_string());
        kv("ransac_sample_size", self.ransac_sample_size.to_string());
        kv("ransac_trials", self.ransac_trials.to_string());
        kv("ransac_epsilon", self.ransac_epsilon.to_string());
        kv("early_exit_ratio", self.early_exit_ratio.to_string());
        kv("early_exit_patience", self.early_exit_patience.to_string());
        kv("min_inlier_ratio", self.min_inlier_ratio.to_string());
        kv("max_row_angle_deg", self.max_row_angle_deg.to_string());
        kv("phi", self.phi.to_string());
        kv("block_radius", self.block_radius.to_string());
        kv("lr_threshold", self.lr_threshold.to_string());
        kv("min_ncc", self.min_ncc.to_string());
        kv("disparity_min", opt(self.disparity_min));
        kv("disparity_max", opt(self.disparity_max));
        kv("depth_min", opt(self.depth_min));
        kv("depth_max", opt(self.depth_max));
        kv("delta", opt(self.delta));
        kv("eta", self.eta.to_string());
        kv("target_estimates", self.target_estimates.to_string());
        kv("max_trials", self.max_trials.to_string());
        kv("min_estimates", self.min_estimates.to_string());
        kv("compensate_back_rotation", self.compensate_back_rotation.to_string());
        kv("oracle_offset", self.oracle_offset.to_string());
        kv("histogram_bins", self.histogram_bins.to_string());
        s
    }

    /// Starts from the defaults and applies every entry of `text`.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (line, key, value) in parse_key_values(text)? {
            c.set(line, &key, &value)?;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IoError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| {
            ConfigError::Io(IoError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        let f = || value.parse::<f64>().map_err(|_| bad());
        let u = || value.parse::<usize>().map_err(|_| bad());
        let o = || if value == "auto" { Ok(None) } else { f().map(Some) };
        let t = || -> Result<[f64; 3], ConfigError> {
            let v: Vec<f64> = value.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
            v.try_into().map_err(|_| bad())
        };
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "scale" => self.scale = f()?,
            "fov_deg" => self.fov_deg = f()?,
            "focal_px" => self.focal_px = o()?,
            "c_lr" => self.c_lr = o()?,
            "c_lb" => self.c_lb = o()?,
            "surface_a" => self.surface_a = f()?,
            "surface_b" => self.surface_b = f()?,
            "surface_sigma" => self.surface_sigma = f()?,
            "footprint_half" => self.footprint_half = f()?,
            "right_rot_deg" => self.right_rot_deg = t()?,
            "back_rot_deg" => self.back_rot_deg = t()?,
            "back_height" => self.back_height = f()?,
            "baseline_ratio" => self.baseline_ratio = f()?,
            "harris_k" => self.harris_k = f()?,
            "harris_sigma" => self.harris_sigma = f()?,
            "nms_radius" => self.nms_radius = u()?,
            "max_corners" => self.max_corners = u()?,
            "patch_radius" => self.patch_radius = u()?,
            "match_ratio" => self.match_ratio = f()?,
            "match_min_score" => self.match_min_score = f()?,
            "min_matches" => self.min_matches = u()?,
            "ransac_sample_size" => self.ransac_sample_size = u()?,
            "ransac_trials" => self.ransac_trials = u()?,
            "ransac_epsilon" => self.ransac_epsilon = f()?,
            "early_exit_ratio" => self.early_exit_ratio = f()?,
            "early_exit_patience" => self.early_exit_patience = u()?,
            "min_inlier_ratio" => self.min_inlier_ratio = f()?,
            "max_row_angle_deg" => self.max_row_angle_deg = f()?,
            "phi" => self.phi = f()?,
            "block_radius" => self.block_radius = u()?,
            "lr_threshold" => self.lr_threshold = f()?,
            "min_ncc" => self.min_ncc = f()?,
            "disparity_min" => self.disparity_min = o()?,
            "disparity_max" => self.disparity_max = o()?,
            "depth_min" => self.depth_min = o()?,
            "depth_max" => self.depth_max = o()?,
            "delta" => self.delta = o()?,
            "eta" => self.eta = f()?,
            "target_estimates" => self.target_estimates = u()?,
            "max_trials" => self.max_trials = u()?,
            "min_estimates" => self.min_estimates = u()?,
            "compensate_back_rotation" => self.compensate_back_rotation = value.parse().map_err(|_| bad())?,
            "oracle_offset" => self.oracle_offset = f()?,
            "histogram_bins" => self.histogram_bins = u()?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Synthetic image size at the configured scale.
    pub fn image_size(&self) -> Result<(usize, usize), ConfigError> {
        let w = (FULL_WIDTH as f64 * self.scale).round();
        let h = (FULL_HEIGHT as f64 * self.scale).round();
        if !(w >= 64.0 && h >= 64.0 && w <= 4.0 * FULL_WIDTH as f64) {
            return Err(ConfigError::Invalid(format!("scale {} gives a {w}x{h} image", self.scale)));
        }
        Ok((w as usize, h as usize))
    }

    pub fn fov(&self) -> f64 {
        self.fov_deg.to_radians()
    }

    pub fn scene_spec(&self, texture_seed: u64) -> Result<SceneSpec, SynthError> {
        SceneSpec::new(
            SurfaceParams {
                a: self.surface_a,
                b: self.surface_b,
                sigma: self.surface_sigma,
            },
            self.footprint_half,
            texture_seed,
        )
    }

    pub fn rig_options(&self) -> RigOptions {
        let range = |d: [f64; 3]| EulerRange {
            z: d[0].to_radians(),
            y: d[1].to_radians(),
            x: d[2].to_radians(),
        };
        RigOptions {
            right_perturbation: range(self.right_rot_deg),
            back_perturbation: range(self.back_rot_deg),
            back_height: self.back_height,
            baseline_ratio: self.baseline_ratio,
        }
    }

    pub fn matcher_params(&self) -> MatcherParams {
        MatcherParams {
            harris: HarrisParams {
                k: self.harris_k,
                window_sigma: self.harris_sigma,
                nms_radius: self.nms_radius,
                max_corners: self.max_corners,
                ..HarrisParams::default()
            },
            patch_radius: self.patch_radius,
            ratio: self.match_ratio,
            min_score: self.match_min_score,
            min_matches: self.min_matches,
            ..MatcherParams::default()
        }
    }

    pub fn ransac_params(&self) -> RansacParams {
        RansacParams {
            sample_size: self.ransac_sample_size,
            trials: self.ransac_trials,
            epsilon: self.ransac_epsilon,
            early_exit_ratio: self.early_exit_ratio,
            early_exit_patience: self.early_exit_patience,
            min_inlier_ratio: self.min_inlier_ratio,
            max_row_angle: self.max_row_angle_deg.to_radians(),
            ..RansacParams::default()
        }
    }

    pub fn block_params(&self) -> BlockMatchParams {
        BlockMatchParams {
            radius: self.block_radius,
            lr_threshold: self.lr_threshold,
            min_ncc: self.min_ncc,
        }
    }

    /// `delta` defaults to 300 px at full width, scaled linearly.
    pub fn disambig_params(&self, width: usize) -> DisambigParams {
        let base = DisambigParams::for_width(width);
        DisambigParams {
            delta: self.delta.unwrap_or(base.delta),
            eta: self.eta,
            target_estimates: self.target_estimates,
            max_trials: self.max_trials,
            min_estimates: self.min_estimates,
            compensate_back_rotation: self.compensate_back_rotation,
        }
    }
}

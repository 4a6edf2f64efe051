//! Plain-text records. Floats are printed with Rust's shortest round-trip
//! formatting, so every reader here recovers the written values exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point2;

use super::{parse_key_values, read_text, write_text, IoError};
use crate::disambig::OffsetEstimateSet;
use crate::features::{Match, MatchSet};
use crate::geometry::AffineTransform;
use crate::metrics::{AggregateReport, ErrorReport};
use crate::rectify::AffineRectification;
use crate::geometry::{Camera, ThreeViewRig};
use crate::sfm::SfmSimReport;
use crate::synth::SceneSpec;

const MATCH_HEADER: &str = "# a_x a_y b_x b_y score inlier";

/// One match per line; the inlier column is `1`, `0`, or `-` when the set
/// carries no inlier flags.
pub fn format_matches(set: &MatchSet) -> String {
    let mut s = String::from(MATCH_HEADER);
    s.push('\n');
    for (i, m) in set.matches.iter().enumerate() {
        let flag = match &set.inliers {
            Some(f) if f[i] => "1",
            Some(_) => "0",
            None => "-",
        };
        writeln!(s, "{} {} {} {} {} {flag}", m.a.x, m.a.y, m.b.x, m.b.y, m.score).unwrap();
    }
    s
}

pub fn parse_matches(text: &str) -> Result<MatchSet, IoError> {
    let mut matches = Vec::new();
    let mut flags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(IoError::parse(i + 1, format!("expected 6 columns, got {}", cols.len())));
        }
        let num = |c: &str| c.parse::<f64>().map_err(|_| IoError::parse(i + 1, format!("bad number {c:?}")));
        matches.push(Match {
            a: Point2::new(num(cols[0])?, num(cols[1])?),
            b: Point2::new(num(cols[2])?, num(cols[3])?),
            score: num(cols[4])?,
        });
        flags.push(match cols[5] {
            "1" => Some(true),
            "0" => Some(false),
            "-" => None,
            other => return Err(IoError::parse(i + 1, format!("bad inlier flag {other:?}"))),
        });
    }
    let inliers = if !flags.is_empty() && flags.iter().all(Option::is_some) {
        Some(flags.into_iter().map(Option::unwrap).collect())
    } else {
        None
    };
    Ok(MatchSet { matches, inliers })
}

pub fn write_matches(path: impl AsRef<Path>, set: &MatchSet) -> Result<(), IoError> {
    write_text(path.as_ref(), &format_matches(set))
}

pub fn read_matches(path: impl AsRef<Path>) -> Result<MatchSet, IoError> {
    parse_matches(&read_text(path.as_ref())?)
}

fn fmt_row(r: [f64; 3]) -> String {
    format!("{} {} {}", r[0], r[1], r[2])
}

pub fn format_rectification(r: &AffineRectification) -> String {
    let mut s = String::new();
    writeln!(s, "h_l.row0 = {}", fmt_row(r.h_l.row(0))).unwrap();
    writeln!(s, "h_l.row1 = {}", fmt_row(r.h_l.row(1))).unwrap();
    writeln!(s, "h_r.row0 = {}", fmt_row(r.h_r.row(0))).unwrap();
    writeln!(s, "h_r.row1 = {}", fmt_row(r.h_r.row(1))).unwrap();
    writeln!(s, "inlier_count = {}", r.inlier_count).unwrap();
    writeln!(s, "inlier_ratio = {}", r.inlier_ratio).unwrap();
    writeln!(s, "seed = {}", r.seed).unwrap();
    writeln!(s, "trials_run = {}", r.trials_run).unwrap();
    s
}

pub fn parse_rectification(text: &str) -> Result<AffineRectification, IoError> {
    let mut rows: [Option<[f64; 3]>; 4] = [None; 4];
    let (mut count, mut ratio, mut seed, mut trials) = (None, None, None, None);
    for (line, k, v) in parse_key_values(text)? {
        let bad = || IoError::parse(line, format!("bad value for {k}: {v:?}"));
        let row = || -> Result<[f64; 3], IoError> {
            let vals: Vec<f64> = v.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
            vals.try_into().map_err(|_| bad())
        };
        match k.as_str() {
            "h_l.row0" => rows[0] = Some(row()?),
            "h_l.row1" => rows[1] = Some(row()?),
            "h_r.row0" => rows[2] = Some(row()?),
            "h_r.row1" => rows[3] = Some(row()?),
            "inlier_count" => count = Some(v.parse().map_err(|_| bad())?),
            "inlier_ratio" => ratio = Some(v.parse().map_err(|_| bad())?),
            "seed" => seed = Some(v.parse().map_err(|_| bad())?),
            "trials_run" => trials = Some(v.parse().map_err(|_| bad())?),
            _ => return Err(IoError::parse(line, format!("unknown key {k:?}"))),
        }
    }
    let missing = |name: &str| IoError::parse(0, format!("missing {name}"));
    let get = |i: usize, name: &str| rows[i].ok_or_else(|| missing(name));
    Ok(AffineRectification {
        h_l: AffineTransform::from_rows(get(0, "h_l.row0")?, get(1, "h_l.row1")?),
        h_r: AffineTransform::from_rows(get(2, "h_r.row0")?, get(3, "h_r.row1")?),
        inlier_count: count.ok_or_else(|| missing("inlier_count"))?,
        inlier_ratio: ratio.ok_or_else(|| missing("inlier_ratio"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        trials_run: trials.ok_or_else(|| missing("trials_run"))?,
    })
}

pub fn write_rectification(path: impl AsRef<Path>, r: &AffineRectification) -> Result<(), IoError> {
    write_text(path.as_ref(), &format_rectification(r))
}

pub fn read_rectification(path: impl AsRef<Path>) -> Result<AffineRectification, IoError> {
    parse_rectification(&read_text(path.as_ref())?)
}

/// Summary lines followed by `bins` histogram rows `lo hi count`.
pub fn format_offset_histogram(set: &OffsetEstimateSet, bins: usize) -> String {
    let mut s = String::new();
    writeln!(s, "# accepted_offset = {}", set.accepted_offset).unwrap();
    writeln!(s, "# estimates = {}", set.estimates.len()).unwrap();
    writeln!(s, "# trials_run = {}", set.trials_run).unwrap();
    writeln!(s, "# bin_lo bin_hi count").unwrap();
    let (edges, counts) = set.histogram(bins);
    for (i, c) in counts.iter().enumerate() {
        writeln!(s, "{} {} {c}", edges[i], edges[i + 1]).unwrap();
    }
    s
}

pub fn write_offset_histogram(path: impl AsRef<Path>, set: &OffsetEstimateSet, bins: usize) -> Result<(), IoError> {
    write_text(path.as_ref(), &format_offset_histogram(set, bins))
}

/// Raw estimates, one per line, in sampling order.
pub fn write_offset_estimates(path: impl AsRef<Path>, set: &OffsetEstimateSet) -> Result<(), IoError> {
    let mut s = String::new();
    for q in &set.estimates {
        writeln!(s, "{q}").unwrap();
    }
    write_text(path.as_ref(), &s)
}

pub fn format_error_report(r: &ErrorReport) -> String {
    let mut s = String::new();
    writeln!(s, "valid_pixels = {}", r.valid_pixel_count).unwrap();
    for (t, f) in r.thresholds.iter().zip(&r.fractions) {
        writeln!(s, "below_{t} = {f}").unwrap();
    }
    s
}

pub fn format_aggregate_report(r: &AggregateReport) -> String {
    let mut s = String::new();
    writeln!(s, "successful_scenes = {}", r.successes).unwrap();
    writeln!(s, "failed_scenes = {}", r.failures).unwrap();
    for (t, f) in r.thresholds.iter().zip(&r.mean_fractions) {
        writeln!(s, "mean_below_{t} = {f}").unwrap();
    }
    s
}

pub fn format_sfm_report(r: &SfmSimReport) -> String {
    let mut s = String::new();
    writeln!(s, "runs = {}", r.runs.len()).unwrap();
    writeln!(s, "failures = {}", r.failures).unwrap();
    let m = r.median_abs_rotation_error_deg;
    writeln!(s, "median_abs_rotation_error_x_deg = {}", m[0]).unwrap();
    writeln!(s, "median_abs_rotation_error_y_deg = {}", m[1]).unwrap();
    writeln!(s, "median_abs_rotation_error_z_deg = {}", m[2]).unwrap();
    writeln!(s, "median_translation_error_deg = {}", r.median_translation_error_deg).unwrap();
    writeln!(s, "median_point_rmse_m = {}", r.median_point_rmse).unwrap();
    s
}

pub fn format_sfm_csv(r: &SfmSimReport) -> String {
    let mut s = String::from("run,rot_x_deg,rot_y_deg,rot_z_deg,translation_deg,point_rmse_m\n");
    for (i, run) in r.runs.iter().enumerate() {
        let e = run.rotation_error_deg;
        writeln!(s, "{i},{},{},{},{},{}", e[0], e[1], e[2], run.translation_error_deg, run.point_rmse).unwrap();
    }
    s
}

fn camera_lines(s: &mut String, name: &str, cam: &Camera) {
    let c = cam.pose.center;
    let r = cam.pose.rotation;
    writeln!(s, "{name}.f = {}", cam.f).unwrap();
    writeln!(s, "{name}.principal_point = {} {}", cam.cx, cam.cy).unwrap();
    writeln!(s, "{name}.size = {} {}", cam.width, cam.height).unwrap();
    writeln!(s, "{name}.center = {} {} {}", c.x, c.y, c.z).unwrap();
    writeln!(
        s,
        "{name}.euler_zyx_deg = {} {} {}",
        r.euler_z.to_degrees(),
        r.euler_y.to_degrees(),
        r.euler_x.to_degrees()
    )
    .unwrap();
}

/// Scene and rig description: surface parameters, bounding box, then per
/// camera the focal length, principal point, image size, centre (meters)
/// and camera-to-world `z-y-x` Euler angles (degrees).
pub fn format_scene_metadata(spec: &SceneSpec, rig: &ThreeViewRig) -> String {
    let mut s = String::new();
    writeln!(s, "surface.a = {}", spec.surface.a).unwrap();
    writeln!(s, "surface.b = {}", spec.surface.b).unwrap();
    writeln!(s, "surface.sigma = {}", spec.surface.sigma).unwrap();
    writeln!(s, "footprint_half = {}", spec.footprint_half).unwrap();
    writeln!(s, "texture_seed = {}", spec.texture_seed).unwrap();
    let (lo, hi) = (spec.bbox.min, spec.bbox.max);
    writeln!(s, "bbox.min = {} {} {}", lo.x, lo.y, lo.z).unwrap();
    writeln!(s, "bbox.max = {} {} {}", hi.x, hi.y, hi.z).unwrap();
    writeln!(s, "bbox.diagonal = {}", spec.diagonal).unwrap();
    writeln!(s, "c_lr = {}", rig.c_lr).unwrap();
    writeln!(s, "c_lb = {}", rig.c_lb).unwrap();
    camera_lines(&mut s, "left", &rig.left);
    camera_lines(&mut s, "right", &rig.right);
    camera_lines(&mut s, "back", &rig.back);
    s
}

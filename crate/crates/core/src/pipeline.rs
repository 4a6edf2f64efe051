//! End-to-end depth estimation: match and pseudo-rectify the left/right
//! pair, compute disparity, resolve the disparity offset with the back view,
//! convert to depth, and (for synthetic scenes) score against ground truth.

use std::path::Path;

use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::disambig::{disparity_to_depth, remove_ambiguity, DisambigError, OffsetEstimateSet, RigConstants};
use crate::features::{FeatureError, FeatureMatcher, HarrisNccMatcher, MatchSet};
use crate::geometry::ThreeViewRig;
use crate::io::{self, BitDepth, IoError};
use crate::metrics::{evaluate_depth, warp_depth_to_rectified, ErrorReport, MetricsError, DEFAULT_THRESHOLDS};
use crate::raster::{DepthMap, GrayImage};
use crate::rectify::{pseudo_rectify, RectifiedPair, RectifyError};
use crate::seed::derive_seed;
use crate::stereo::{compute_disparity, oracle_disparity, DisparityMap, SearchRange, StereoError};
use crate::synth::{build_rig_with, render_rig, RenderedView, SceneSpec, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("configuration: {0}")]
    MissingSetting(String),
    #[error("render: {0}")]
    Render(#[from] SynthError),
    #[error("matching ({pair}): {source}")]
    Matching {
        pair: &'static str,
        #[source]
        source: FeatureError,
    },
    #[error("rectification: {0}")]
    Rectify(#[from] RectifyError),
    #[error("stereo: {0}")]
    Stereo(#[from] StereoError),
    #[error("disambiguation requires back view")]
    MissingBackView,
    #[error("disambiguation: {0}")]
    Disambig(#[from] DisambigError),
    #[error("evaluation: {0}")]
    Metrics(#[from] MetricsError),
    #[error("output: {0}")]
    Io(#[from] IoError),
}

/// A rendered three-view scene with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub rig: ThreeViewRig,
    pub left: RenderedView,
    pub right: RenderedView,
    pub back: RenderedView,
}

/// Renders the configured surface from a rig whose texture and camera
/// perturbations are both seeded from `config.seed`.
pub fn render_scene(config: &PipelineConfig) -> Result<SyntheticScene, PipelineError> {
    let (w, h) = config.image_size()?;
    let spec = config.scene_spec(derive_seed(config.seed, "texture"))?;
    let rig = build_rig_with(
        &spec,
        config.fov(),
        w,
        h,
        derive_seed(config.seed, "rig"),
        &config.rig_options(),
    )?;
    let [left, right, back] = render_rig(&rig, &spec);
    Ok(SyntheticScene {
        spec,
        rig,
        left,
        right,
        back,
    })
}

pub enum PipelineInput<'a> {
    Images {
        left: &'a GrayImage,
        right: &'a GrayImage,
        back: Option<&'a GrayImage>,
    },
    Synthetic(&'a SyntheticScene),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PipelineOptions {
    /// Replace block matching by ground-truth disparity plus
    /// `config.oracle_offset`; synthetic input only.
    pub oracle_stereo: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub rig: RigConstants,
    pub rectified: RectifiedPair,
    pub search: SearchRange,
    pub raw_disparity: DisparityMap,
    pub resolved_disparity: DisparityMap,
    pub offsets: OffsetEstimateSet,
    pub back_matches: MatchSet,
    /// Depth in the rectified left frame.
    pub depth: DepthMap,
    /// Ground-truth depth warped into the rectified left frame.
    pub gt_depth: Option<DepthMap>,
    pub report: Option<ErrorReport>,
}

/// Rig constants from the config, falling back to the synthetic rig.
pub fn rig_constants(
    config: &PipelineConfig,
    width: usize,
    rig: Option<&ThreeViewRig>,
) -> Result<RigConstants, PipelineError> {
    let f = config
        .focal_px
        .unwrap_or_else(|| crate::geometry::focal_from_fov(config.fov(), width));
    let pick = |v: Option<f64>, from_rig: Option<f64>, name: &str| {
        v.or(from_rig)
            .ok_or_else(|| PipelineError::MissingSetting(format!("{name} must be set for image inputs")))
    };
    Ok(RigConstants {
        f,
        c_lr: pick(config.c_lr, rig.map(|r| r.c_lr), "c_lr")?,
        c_lb: pick(config.c_lb, rig.map(|r| r.c_lb), "c_lb")?,
    })
}

/// Disparity search range from explicit disparity bounds, else depth
/// bounds. For synthetic scenes the depth bounds default to the bounding
/// box depth range seen from the left camera, widened by 10%.
pub fn search_range(
    config: &PipelineConfig,
    rig: &RigConstants,
    width: usize,
    scene: Option<&SyntheticScene>,
) -> Result<SearchRange, PipelineError> {
    if let (Some(min), Some(max)) = (config.disparity_min, config.disparity_max) {
        return Ok(SearchRange { min, max });
    }
    let scene_bounds = scene.map(|s| {
        let cz = s.rig.left.center().z;
        (0.9 * (s.spec.bbox.min.z - cz), 1.1 * (s.spec.bbox.max.z - cz))
    });
    let z_min = config.depth_min.or(scene_bounds.map(|b| b.0));
    let z_max = config.depth_max.or(scene_bounds.map(|b| b.1));
    match (z_min, z_max) {
        (Some(lo), Some(hi)) if lo > 0.0 && hi > lo => {
            Ok(SearchRange::from_depth_bounds(config.phi, rig.f, rig.c_lr, lo, hi, width))
        }
        (Some(_), Some(_)) => Err(PipelineError::MissingSetting("need 0 < depth_min < depth_max".into())),
        _ => Err(PipelineError::MissingSetting(
            "stereo needs disparity_min/disparity_max or depth_min/depth_max for image inputs".into(),
        )),
    }
}

pub fn run_pipeline(
    input: PipelineInput<'_>,
    config: &PipelineConfig,
    options: PipelineOptions,
) -> Result<PipelineOutput, PipelineError> {
    let (left, right, back, scene) = match input {
        PipelineInput::Images { left, right, back } => (left, right, back, None),
        PipelineInput::Synthetic(s) => (&s.left.image, &s.right.image, Some(&s.back.image), Some(s)),
    };
    if options.oracle_stereo && scene.is_none() {
        return Err(PipelineError::MissingSetting("oracle stereo needs a synthetic scene".into()));
    }
    let width = left.width();
    let rig = rig_constants(config, width, scene.map(|s| &s.rig))?;
    let matcher = HarrisNccMatcher {
        params: config.matcher_params(),
    };

    let lr = matcher
        .match_images(left, right)
        .map_err(|source| PipelineError::Matching { pair: "left/right", source })?;
    let rectified = pseudo_rectify(
        left,
        right,
        &lr,
        &config.ransac_params(),
        config.phi,
        derive_seed(config.seed, "ransac"),
    )?;
    let h_l = rectified.rectification.h_l;
    let gt_depth = scene
        .map(|s| warp_depth_to_rectified(&s.left.depth, &h_l))
        .transpose()?;

    let search = search_range(config, &rig, width, scene)?;
    let raw_disparity = match (&gt_depth, options.oracle_stereo) {
        (Some(gt), true) => oracle_disparity(gt, rig.f, rig.c_lr, config.oracle_offset),
        _ => compute_disparity(&rectified.left, &rectified.right, search, &config.block_params())?,
    };

    let back = back.ok_or(PipelineError::MissingBackView)?;
    let (resolved_disparity, offsets, back_matches) = remove_ambiguity(
        left,
        back,
        &raw_disparity,
        &h_l,
        &rig,
        &config.disambig_params(width),
        &matcher,
        derive_seed(config.seed, "disambig"),
    )?;
    let depth = disparity_to_depth(&resolved_disparity, rig.f, rig.c_lr)?;
    let report = gt_depth
        .as_ref()
        .map(|gt| evaluate_depth(&depth, gt, &DEFAULT_THRESHOLDS))
        .transpose()?;

    Ok(PipelineOutput {
        rig,
        rectified,
        search,
        raw_disparity,
        resolved_disparity,
        offsets,
        back_matches,
        depth,
        gt_depth,
        report,
    })
}

/// Upper end of the false-colour scale for relative error maps.
const ERROR_COLOR_MAX: f32 = 0.05;

/// Writes every pipeline artifact into `dir`:
/// `config.txt`, `matches_lr.txt`, `matches_lb.txt`, `rectification.txt`,
/// `rectified_left.png`, `rectified_right.png`, `disparity_raw.pfm`,
/// `disparity_resolved.pfm`, `offset_histogram.txt`, `offset_estimates.txt`,
/// `depth.pfm`, `depth.png`, and with ground truth `gt_depth.pfm`,
/// `error_map.pfm`, `error_map.png`, `error_report.txt`.
pub fn write_artifacts(out: &PipelineOutput, config: &PipelineConfig, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    config.save(dir.join("config.txt"))?;
    io::write_matches(dir.join("matches_lr.txt"), &out.rectified.matches)?;
    io::write_matches(dir.join("matches_lb.txt"), &out.back_matches)?;
    io::write_rectification(dir.join("rectification.txt"), &out.rectified.rectification)?;
    io::write_masked_png(dir.join("rectified_left.png"), &out.rectified.left, BitDepth::Eight)?;
    io::write_masked_png(dir.join("rectified_right.png"), &out.rectified.right, BitDepth::Eight)?;
    io::write_pfm_masked(dir.join("disparity_raw.pfm"), &out.raw_disparity.map)?;
    io::write_pfm_masked(dir.join("disparity_resolved.pfm"), &out.resolved_disparity.map)?;
    io::write_offset_histogram(dir.join("offset_histogram.txt"), &out.offsets, config.histogram_bins)?;
    io::write_offset_estimates(dir.join("offset_estimates.txt"), &out.offsets)?;
    io::write_pfm_masked(dir.join("depth.pfm"), &out.depth)?;
    let (lo, hi) = depth_color_range(&out.depth);
    io::write_false_color_png(dir.join("depth.png"), &out.depth, lo, hi)?;
    if let Some(gt) = &out.gt_depth {
        io::write_pfm_masked(dir.join("gt_depth.pfm"), gt)?;
    }
    if let Some(report) = &out.report {
        io::write_pfm_masked(dir.join("error_map.pfm"), &report.relative_error)?;
        io::write_false_color_png(dir.join("error_map.png"), &report.relative_error, 0.0, ERROR_COLOR_MAX)?;
        std::fs::write(dir.join("error_report.txt"), io::format_error_report(report)).map_err(|e| IoError::Io {
            path: dir.join("error_report.txt"),
            source: e,
        })?;
    }
    Ok(())
}

/// 2nd to 98th percentile of the valid depths.
pub fn depth_color_range(depth: &DepthMap) -> (f32, f32) {
    let mut v: Vec<f32> = depth
        .values
        .as_slice()
        .iter()
        .zip(depth.valid.as_slice())
        .filter(|(_, &ok)| ok)
        .map(|(&z, _)| z)
        .collect();
    if v.is_empty() {
        return (0.0, 1.0);
    }
    v.sort_by(f32::total_cmp);
    let at = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
    (at(0.02), at(0.98))
}

/// Writes the rendered views: `{left,right,back}.png` (16-bit),
/// `{left,right,back}_depth.pfm` and `scene.txt`.
pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (name, view) in [("left", &scene.left), ("right", &scene.right), ("back", &scene.back)] {
        io::write_gray_png(dir.join(format!("{name}.png")), &view.image, BitDepth::Sixteen)?;
        io::write_pfm_masked(dir.join(format!("{name}_depth.pfm")), &view.depth)?;
    }
    let meta = io::format_scene_metadata(&scene.spec, &scene.rig);
    std::fs::write(dir.join("scene.txt"), meta).map_err(|e| IoError::Io {
        path: dir.join("scene.txt"),
        source: e,
    })?;
    Ok(())
}

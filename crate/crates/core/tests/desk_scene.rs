//! End-to-end checks on one rendered desk-scale scene.

use std::sync::OnceLock;

use nalgebra::Vector3;
use telestereo::config::PipelineConfig;
use telestereo::features::detect_and_match;
use telestereo::pipeline::{render_scene, run_pipeline, write_artifacts, PipelineError, PipelineInput, PipelineOptions, SyntheticScene};
use telestereo::rectify::{pseudo_rectify, RansacParams};
use telestereo::sfm::essential_from_pose;
use telestereo::stereo::{compute_disparity, BlockMatchParams, SearchRange};
use telestereo::synth::cast_ray;

fn config() -> PipelineConfig {
    PipelineConfig {
        seed: 11,
        ..PipelineConfig::default()
    }
}

fn scene() -> &'static SyntheticScene {
    static SCENE: OnceLock<SyntheticScene> = OnceLock::new();
    SCENE.get_or_init(|| render_scene(&config()).unwrap())
}

#[test]
fn detected_matches_follow_true_epipolar_geometry() {
    let s = scene();
    let m = detect_and_match(&s.left.image, &s.right.image, &Default::default()).unwrap();
    assert!(m.len() >= 300, "{} matches", m.len());

    let (l, r) = (&s.rig.left, &s.rig.right);
    let rl = l.pose.rotation.matrix();
    let rr = r.pose.rotation.matrix();
    let rot = rr.transpose() * rl;
    let t = rr.transpose() * (l.center() - r.center());
    let k_inv = l.intrinsics_inverse();
    let f = k_inv.transpose() * essential_from_pose(&rot, &t) * k_inv;
    let consistent = m
        .matches
        .iter()
        .filter(|x| {
            let line = f * Vector3::new(x.a.x, x.a.y, 1.0);
            let d = line.dot(&Vector3::new(x.b.x, x.b.y, 1.0)) / line.x.hypot(line.y);
            d.abs() < 2.0
        })
        .count();
    assert!(consistent as f64 >= 0.8 * m.len() as f64, "{consistent}/{}", m.len());
}

#[test]
fn block_matching_tracks_true_rectified_disparity() {
    let s = scene();
    let c = config();
    let m = detect_and_match(&s.left.image, &s.right.image, &c.matcher_params()).unwrap();
    let pair = pseudo_rectify(&s.left.image, &s.right.image, &m, &RansacParams::default(), c.phi, 5).unwrap();
    let search = SearchRange::from_depth_bounds(c.phi, s.rig.left.f, s.rig.c_lr, 250.0, 350.0, s.left.image.width());
    let disp = compute_disparity(&pair.left, &pair.right, search, &BlockMatchParams::default()).unwrap();

    let (h_l, h_r) = (pair.rectification.h_l, pair.rectification.h_r);
    let inv = h_l.inverse().unwrap();
    let mut errs = Vec::new();
    for y in (0..disp.map.height()).step_by(4) {
        for x in (0..disp.map.width()).step_by(4) {
            let Some(d) = disp.map.at(x, y) else { continue };
            let (u, v) = inv.apply(x as f64, y as f64);
            let Some(hit) = cast_ray(&s.rig.left, &s.spec, u, v) else { continue };
            let Ok(p) = s.rig.right.project_world(&hit.point) else { continue };
            let (xr, _) = h_r.apply(p.x, p.y);
            errs.push((d as f64 - (x as f64 - xr)).abs());
        }
    }
    errs.sort_by(f64::total_cmp);
    assert!(errs.len() > 1000);
    let median = errs[errs.len() / 2];
    assert!(median <= 1.0, "median |d_est - d_gt| = {median}");
}

#[test]
fn oracle_pipeline_recovers_offset_and_depth() {
    let c = config();
    let out = run_pipeline(PipelineInput::Synthetic(scene()), &c, PipelineOptions { oracle_stereo: true }).unwrap();
    let correction = out.offsets.accepted_offset;
    assert!((correction + c.oracle_offset).abs() <= 1.0, "correction {correction}");
    let f = out.report.unwrap().fractions;
    assert!(f[0] >= 0.95 && f[1] >= 0.99 && f[2] >= 0.99, "{f:?}");
}

#[test]
fn pipeline_artifacts_do_not_depend_on_thread_count() {
    let c = config();
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        pool.install(|| {
            let out = run_pipeline(PipelineInput::Synthetic(scene()), &c, PipelineOptions::default()).unwrap();
            write_artifacts(&out, &c, dir.path()).unwrap();
        });
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let one = run_with(1);
    assert!(one.iter().any(|(n, _)| n == "depth.pfm"));
    assert_eq!(one, run_with(4));
}

#[test]
fn missing_back_view_is_labelled() {
    let s = scene();
    let c = PipelineConfig {
        c_lr: Some(s.rig.c_lr),
        c_lb: Some(s.rig.c_lb),
        depth_min: Some(250.0),
        depth_max: Some(350.0),
        ..config()
    };
    let input = PipelineInput::Images {
        left: &s.left.image,
        right: &s.right.image,
        back: None,
    };
    let err = run_pipeline(input, &c, PipelineOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::MissingBackView));
    assert_eq!(err.to_string(), "disambiguation requires back view");
}

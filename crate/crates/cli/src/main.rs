//! `telestereo` command-line driver.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 when a stage fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use telestereo::config::PipelineConfig;
use telestereo::disambig::{disparity_to_depth, remove_ambiguity};
use telestereo::features::{FeatureMatcher, HarrisNccMatcher};
use telestereo::io::{self, BitDepth};
use telestereo::metrics::{evaluate_depth, warp_depth_to_rectified, DEFAULT_THRESHOLDS};
use telestereo::pipeline::{
    render_scene, rig_constants, run_pipeline, search_range, write_artifacts, write_scene, PipelineInput,
    PipelineOptions,
};
use telestereo::raster::MaskedRaster;
use telestereo::rectify::pseudo_rectify;
use telestereo::seed::derive_seed;
use telestereo::sfm::{simulate_two_view_sfm, SfmSimConfig};
use telestereo::stereo::{compute_disparity, DisparityMap, SearchRange};

#[derive(Parser, Debug)]
#[command(name = "telestereo", version, about = "Long-range depth from a three-camera rig")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOpts {
    /// Key-value configuration file; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Synthetic resolution relative to 4608×3456; overrides the config file.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Use ground-truth disparity plus the configured offset instead of block matching.
    #[arg(long, global = true)]
    oracle_stereo: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic three-view scene with ground-truth depth.
    Render,
    /// Match and pseudo-rectify a left/right pair.
    Rectify {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
    },
    /// Block-match a rectified pair (PFM from `rectify`).
    Disparity {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        /// Disparity search range `min,max`; defaults to the config bounds.
        #[arg(long, value_parser = parse_pair)]
        range: Option<(f64, f64)>,
    },
    /// Resolve the disparity offset using the back view.
    Disambiguate {
        /// Raw (unrectified) left image.
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        back: PathBuf,
        /// Offset-ambiguous disparity PFM.
        #[arg(long)]
        disparity: PathBuf,
        /// Rectification record from `rectify`.
        #[arg(long)]
        rectification: PathBuf,
    },
    /// Convert a resolved disparity PFM to depth.
    Depth {
        #[arg(long)]
        disparity: PathBuf,
        /// Print the depth at pixel `u,v` of the rectified frame.
        #[arg(long, value_parser = parse_pair)]
        at: Option<(f64, f64)>,
    },
    /// Run every stage; without image paths a synthetic scene is rendered.
    Pipeline {
        #[arg(long, requires = "right")]
        left: Option<PathBuf>,
        #[arg(long, requires = "left")]
        right: Option<PathBuf>,
        #[arg(long, requires = "left")]
        back: Option<PathBuf>,
    },
    /// Two-view structure-from-motion simulation of the bas-relief ambiguity.
    SimulateBasrelief {
        #[arg(long, default_value_t = 20)]
        runs: usize,
        /// Per-axis pixel noise standard deviation.
        #[arg(long, default_value_t = std::f64::consts::FRAC_1_SQRT_2)]
        noise: f64,
        #[arg(long, default_value_t = 1500)]
        points: usize,
    },
    /// Score a depth PFM against ground truth.
    Eval {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Warp the ground truth into the rectified frame of this record first.
        #[arg(long)]
        rectification: Option<PathBuf>,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?}"));
    Ok((num(a)?, num(b)?))
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    // An unreadable or invalid config file is a usage error.
    let config = match load_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(g: &GlobalOpts) -> Result<PipelineConfig, Failure> {
    let mut c = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(s) = g.scale {
        c.scale = s;
    }
    Ok(c)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    Ok(())
}

fn write(path: PathBuf, text: &str) -> Result<(), Failure> {
    std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn run(cli: &Cli, config: PipelineConfig) -> Result<(), Failure> {
    let g = &cli.global;
    let out = &g.out;
    match &cli.command {
        Command::Render => {
            let scene = render_scene(&config)?;
            write_scene(&scene, out)?;
            config.save(out.join("config.txt"))?;
            println!("rendered {}x{} views to {}", scene.left.image.width(), scene.left.image.height(), out.display());
        }
        Command::Rectify { left, right } => {
            let (l, r) = (io::read_gray_png(left)?, io::read_gray_png(right)?);
            let matcher = HarrisNccMatcher {
                params: config.matcher_params(),
            };
            let matches = matcher.match_images(&l, &r)?;
            let pair = pseudo_rectify(
                &l,
                &r,
                &matches,
                &config.ransac_params(),
                config.phi,
                derive_seed(config.seed, "ransac"),
            )?;
            ensure_dir(out)?;
            io::write_rectification(out.join("rectification.txt"), &pair.rectification)?;
            io::write_matches(out.join("matches_lr.txt"), &pair.matches)?;
            io::write_pfm_masked(out.join("rectified_left.pfm"), &pair.left)?;
            io::write_pfm_masked(out.join("rectified_right.pfm"), &pair.right)?;
            io::write_masked_png(out.join("rectified_left.png"), &pair.left, BitDepth::Eight)?;
            io::write_masked_png(out.join("rectified_right.png"), &pair.right, BitDepth::Eight)?;
            println!(
                "{} matches, {} inliers ({:.1}%)",
                pair.matches.len(),
                pair.rectification.inlier_count,
                100.0 * pair.rectification.inlier_ratio
            );
        }
        Command::Disparity { left, right, range } => {
            let (l, r) = (io::read_pfm_masked(left)?, io::read_pfm_masked(right)?);
            let search = match range {
                Some((min, max)) => SearchRange { min: *min, max: *max },
                None => {
                    let rig = rig_constants(&config, l.width(), None)?;
                    search_range(&config, &rig, l.width(), None)?
                }
            };
            let disp = compute_disparity(&l, &r, search, &config.block_params())?;
            ensure_dir(out)?;
            io::write_pfm_masked(out.join("disparity_raw.pfm"), &disp.map)?;
            println!("{} valid disparities in [{}, {}]", disp.map.valid_count(), search.min, search.max);
        }
        Command::Disambiguate {
            left,
            back,
            disparity,
            rectification,
        } => {
            let (l, b) = (io::read_gray_png(left)?, io::read_gray_png(back)?);
            let disp = DisparityMap {
                map: io::read_pfm_masked(disparity)?,
                offset_resolved: false,
            };
            let rect = io::read_rectification(rectification)?;
            let rig = rig_constants(&config, l.width(), None)?;
            let matcher = HarrisNccMatcher {
                params: config.matcher_params(),
            };
            let (resolved, offsets, matches) = remove_ambiguity(
                &l,
                &b,
                &disp,
                &rect.h_l,
                &rig,
                &config.disambig_params(l.width()),
                &matcher,
                derive_seed(config.seed, "disambig"),
            )?;
            ensure_dir(out)?;
            io::write_pfm_masked(out.join("disparity_resolved.pfm"), &resolved.map)?;
            io::write_matches(out.join("matches_lb.txt"), &matches)?;
            io::write_offset_histogram(out.join("offset_histogram.txt"), &offsets, config.histogram_bins)?;
            io::write_offset_estimates(out.join("offset_estimates.txt"), &offsets)?;
            println!("offset {} from {} estimates", offsets.accepted_offset, offsets.estimates.len());
        }
        Command::Depth { disparity, at } => {
            // The file is taken to hold offset-resolved disparity.
            let disp = DisparityMap {
                map: io::read_pfm_masked(disparity)?,
                offset_resolved: true,
            };
            let rig = rig_constants(&config, disp.map.width(), None)?;
            let depth = disparity_to_depth(&disp, rig.f, rig.c_lr)?;
            ensure_dir(out)?;
            io::write_pfm_masked(out.join("depth.pfm"), &depth)?;
            if let Some((u, v)) = at {
                println!("{}", depth_at(&depth, *u, *v)?);
            }
        }
        Command::Pipeline { left, right, back } => {
            let options = PipelineOptions {
                oracle_stereo: g.oracle_stereo,
            };
            let result = match (left, right) {
                (Some(lp), Some(rp)) => {
                    let l = io::read_gray_png(lp)?;
                    let r = io::read_gray_png(rp)?;
                    let b = back.as_ref().map(io::read_gray_png).transpose()?;
                    let input = PipelineInput::Images {
                        left: &l,
                        right: &r,
                        back: b.as_ref(),
                    };
                    run_pipeline(input, &config, options)?
                }
                _ => {
                    let scene = render_scene(&config)?;
                    write_scene(&scene, out)?;
                    run_pipeline(PipelineInput::Synthetic(&scene), &config, options)?
                }
            };
            write_artifacts(&result, &config, out)?;
            println!("offset {}", result.offsets.accepted_offset);
            if let Some(r) = &result.report {
                print!("{}", io::format_error_report(r));
            }
        }
        Command::SimulateBasrelief { runs, noise, points } => {
            let sim = SfmSimConfig {
                runs: *runs,
                noise_std: *noise,
                n_points: *points,
                seed: config.seed,
                ..SfmSimConfig::default()
            };
            let report = simulate_two_view_sfm(&sim)?;
            ensure_dir(out)?;
            let text = io::format_sfm_report(&report);
            write(out.join("sfm_report.txt"), &text)?;
            write(out.join("sfm_runs.csv"), &io::format_sfm_csv(&report))?;
            print!("{text}");
        }
        Command::Eval {
            depth,
            gt,
            rectification,
        } => {
            let est = io::read_pfm_masked(depth)?;
            let mut truth = io::read_pfm_masked(gt)?;
            if let Some(p) = rectification {
                truth = warp_depth_to_rectified(&truth, &io::read_rectification(p)?.h_l)?;
            }
            let report = evaluate_depth(&est, &truth, &DEFAULT_THRESHOLDS)?;
            ensure_dir(out)?;
            io::write_pfm_masked(out.join("error_map.pfm"), &report.relative_error)?;
            let text = io::format_error_report(&report);
            write(out.join("error_report.txt"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn depth_at(depth: &MaskedRaster, u: f64, v: f64) -> Result<f32, Failure> {
    let (x, y) = ((u + 0.5).floor(), (v + 0.5).floor());
    if x < 0.0 || y < 0.0 || x >= depth.width() as f64 || y >= depth.height() as f64 {
        return Err(format!("pixel ({u}, {v}) is outside the {}x{} map", depth.width(), depth.height()).into());
    }
    depth
        .at(x as usize, y as usize)
        .ok_or_else(|| format!("no valid depth at ({u}, {v})").into())
}

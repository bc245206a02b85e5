use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use splatsynth::augment::{apply_stack, AugmentationStack};
use splatsynth::cluster::{ClusterCache, ClusterKind, DEFAULT_COLOR_CLUSTERS, DEFAULT_SPATIAL_CLUSTERS};
use splatsynth::composite::OBJECT_ALPHA_THRESHOLD;
use splatsynth::imageio::{write_depth_pfm, write_mask_png, write_rgb_png};
use splatsynth::noise::pose::{init_episode, write_pose_stream, PoseNoiseConfig, PoseStreamRecord};
use splatsynth::noise::corrupt_stream;
use splatsynth::pipeline::eval::read_poses;
use splatsynth::pipeline::{self, JobConfig};
use splatsynth::render::{object_centric_camera, rasterize, DEFAULT_TILE_SIZE};
use splatsynth::scene::{load_ply, save_ply};
use splatsynth::synth::synthetic_object;
use splatsynth::{Camera, Error, Pose, SplitMix64};

/// Environment variable that overrides the worker thread count.
const THREADS_ENV: &str = "SPLATSYNTH_THREADS";

#[derive(Parser)]
#[command(name = "splatsynth", version, about = "Synthetic pose datasets from Gaussian splat objects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset from a job config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply an augmentation stack to a scene and save the result.
    Augment {
        #[arg(long)]
        scene: PathBuf,
        /// Stack name (`table1`, `none`) or path to a JSON stack.
        #[arg(long, default_value = "table1")]
        stack: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SPATIAL_CLUSTERS)]
        spatial_clusters: usize,
        #[arg(long, default_value_t = DEFAULT_COLOR_CLUSTERS)]
        color_clusters: usize,
        #[arg(long)]
        cluster_cache: Option<PathBuf>,
    },
    /// Render one view to `rgb.png`, `depth.pfm` and `mask.png` in a directory.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Camera JSON with intrinsics, size and optional placement.
        #[arg(long)]
        camera: PathBuf,
        /// Object pose JSON; identity when omitted.
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
        tile_size: u32,
    },
    /// Corrupt a pose stream with episode noise.
    Corrupt {
        /// Pose-stream or label JSONL.
        #[arg(long)]
        poses: PathBuf,
        /// Noise config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted poses against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// `.ply`, `.obj` or JSON array of points.
        #[arg(long)]
        model_points: PathBuf,
        /// JSON array of occlusion ratios aligned with the ground truth.
        #[arg(long)]
        occlusion: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time augmentation against rasterization.
    Bench {
        /// Scene to time; a synthetic object is used when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Size of the synthetic object.
        #[arg(long, default_value_t = 50_000)]
        gaussians: usize,
        #[arg(long, default_value = "table1")]
        stack: String,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long, num_args = 2, default_values_t = [120, 120])]
        resolution: Vec<u32>,
        /// Worker threads for this run.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let mut cfg = JobConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let dir = cfg.output_dir.clone();
            let m = pipeline::generate(cfg)?;
            log::info!("wrote {} frames to {}", m.entries.len(), dir.display());
        }
        Command::Augment {
            scene,
            stack,
            seed,
            out,
            spatial_clusters,
            color_clusters,
            cluster_cache,
        } => {
            let scene = load_ply(&scene)?;
            let stack = AugmentationStack::load(&stack)?;
            let mut cache = match &cluster_cache {
                Some(p) if p.is_file() => ClusterCache::load(p)?,
                _ => ClusterCache::default(),
            };
            let spatial = cache.get_or_compute(&scene, ClusterKind::Spatial, spatial_clusters, seed)?;
            let color = cache.get_or_compute(&scene, ClusterKind::Color, color_clusters, seed)?;
            if let Some(p) = &cluster_cache {
                cache.save(p)?;
            }
            let augmented = apply_stack(&scene, &spatial, &color, &stack, seed)?;
            save_ply(&augmented, &out)?;
        }
        Command::Render {
            scene,
            camera,
            pose,
            out,
            tile_size,
        } => {
            let scene = load_ply(&scene)?;
            let camera: Camera = read_json(&camera)?;
            let pose = match pose {
                Some(p) => read_json(&p)?,
                None => Pose::identity(),
            };
            let r = rasterize(&scene, &object_centric_camera(&camera, &pose), tile_size)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_rgb_png(&out.join("rgb.png"), r.width, r.height, &r.rgb)?;
            write_depth_pfm(&out.join("depth.pfm"), r.width, r.height, &r.depth)?;
            let mask: Vec<bool> = r.alpha.iter().map(|&a| a >= OBJECT_ALPHA_THRESHOLD).collect();
            write_mask_png(&out.join("mask.png"), r.width, r.height, &mask)?;
        }
        Command::Corrupt { poses, config, seed, out } => {
            let input = read_poses(&poses)?;
            let cfg: PoseNoiseConfig = match config {
                Some(p) => read_json(&p)?,
                None => PoseNoiseConfig::default(),
            };
            let mut rng = SplitMix64::new(seed);
            let mut state = init_episode(&cfg, &mut rng)?;
            let clean: Vec<Pose> = input.iter().map(|p| p.pose).collect();
            let noisy = corrupt_stream(&clean, &mut state, &mut rng)?;
            let records: Vec<_> = input
                .iter()
                .zip(&noisy)
                .map(|(k, p)| PoseStreamRecord::new(k.key, p))
                .collect();
            write_pose_stream(&out, &records)?;
        }
        Command::Eval {
            pred,
            gt,
            model_points,
            occlusion,
            out,
        } => {
            let report = pipeline::evaluate_files(&pred, &gt, &model_points, occlusion.as_deref())?;
            log::info!(
                "{} poses: ADD {:.3} mm, accuracy {:.1}%",
                report.count,
                report.add_mm_mean,
                report.accuracy_pct
            );
            write_json(&out, &report)?;
        }
        Command::Bench {
            scene,
            gaussians,
            stack,
            iterations,
            resolution,
            threads,
            out,
        } => {
            let scene = match scene {
                Some(p) => load_ply(&p)?,
                None => synthetic_object(gaussians, 0),
            };
            let stack = AugmentationStack::load(&stack)?;
            let report = splatsynth::par::with_threads(threads, || {
                pipeline::bench(&scene, &stack, iterations, resolution[0], resolution[1])
            })?;
            log::info!(
                "apply_stack {:.3} ms, rasterize {:.3} ms, ratio {:.4}",
                report.apply_stack.mean_ms,
                report.rasterize.mean_ms,
                report.ratio
            );
            write_json(&out, &report)?;
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV}={value} is not a thread count")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring thread pool")?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .filter_map(|e| e.downcast_ref::<Error>())
        .any(Error::is_validation);
    if validation {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

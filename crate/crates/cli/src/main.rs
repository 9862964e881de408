//! Batch front end for the TLS instance-segmentation pipeline.
//!
//! Subcommands mirror the processing flow: `synth` builds a synthetic
//! dataset, `project` renders per-station panoramas, `fuse` turns external
//! 2D masks into merged 3D instances, `transfer` produces the pseudo-labeled
//! cloud and sphere samples, `eval` scores predictions against sparse
//! references, and `merge` NMS-combines two prediction sets.
//!
//! Exit codes: 0 success, 2 validation/parameter error, 1 runtime error.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use tlseg_core::{eval, pipeline, Error, PipelineConfig};

#[derive(Parser)]
#[command(name = "tlseg", version, about = "Multi-view projection-based 3D instance segmentation for TLS point clouds")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Cap the worker pool (parallel builds only).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Target point spacing in meters.
    #[arg(long)]
    point_spacing: Option<f64>,
    /// Maximum range of interest in meters.
    #[arg(long)]
    max_range: Option<f64>,
    /// OBB IoU edge-pruning threshold.
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Fusion kNN count (defaults to the number of stations).
    #[arg(long)]
    knn: Option<usize>,
    /// Minimum cluster size for a fused instance.
    #[arg(long)]
    min_support: Option<usize>,
    /// Evaluation matching gate in meters.
    #[arg(long)]
    match_distance: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, config: &mut PipelineConfig) {
        let p = &mut config.pipeline;
        if let Some(v) = self.point_spacing {
            p.point_spacing = v;
        }
        if let Some(v) = self.max_range {
            p.max_range = v;
        }
        if let Some(v) = self.iou_threshold {
            p.iou_threshold = v;
        }
        if let Some(v) = self.knn {
            p.knn = Some(v);
        }
        if let Some(v) = self.min_support {
            p.min_support = v;
        }
        if let Some(v) = self.match_distance {
            p.match_distance = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (scans, poses, oracle masks, references).
    Synth {
        /// Output dataset directory.
        #[arg(long, default_value = "synth_out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Project stations to compressed range/intensity panoramas.
    Project {
        #[arg(long)]
        scans: Option<PathBuf>,
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Back-project 2D masks and fuse them into 3D instances.
    Fuse {
        #[arg(long)]
        scans: Option<PathBuf>,
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        panoramas: Option<PathBuf>,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Transfer fused labels onto the merged cloud and export spheres.
    Transfer {
        #[arg(long)]
        scans: Option<PathBuf>,
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Labeled instance PLY (with instances.json sidecar).
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a prediction cloud against sparse references.
    Eval {
        /// Labeled prediction PLY.
        #[arg(long)]
        predictions: PathBuf,
        /// References: JSON ([{id, xyz}]) or 3-column text in meters.
        #[arg(long)]
        refs: PathBuf,
        /// Report path (eval.json).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// NMS-merge two prediction sets.
    Merge {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = "merged")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            log::error!("{err:#}");
            let code = match err.downcast_ref::<Error>() {
                Some(e) if e.is_validation() => 2,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}

/// Base directory for relative config paths: the config file's directory.
fn config_base(cli_config: &Option<PathBuf>) -> PathBuf {
    cli_config
        .as_deref()
        .and_then(Path::parent)
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_config(cli: &Cli, overrides: &Overrides) -> anyhow::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    if let Some(threads) = cli.threads {
        tlseg_core::set_thread_cap(threads);
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let base = config_base(&cli.config);
    match &cli.command {
        Command::Synth { out, overrides } => {
            let config = load_config(&cli, overrides)?;
            let summary = pipeline::run_synth(&config, out)?;
            println!(
                "synth: {} heads, {} stations, {} masks -> {}",
                summary.n_heads,
                summary.n_stations,
                summary.n_masks,
                out.display()
            );
        }
        Command::Project {
            scans,
            poses,
            out,
            overrides,
        } => {
            let config = load_config(&cli, overrides)?;
            let paths = &config.paths;
            let scans = resolve(scans, &base, paths, &paths.scans);
            let poses = resolve(poses, &base, paths, &paths.poses);
            let out = resolve(out, &base, paths, &paths.panoramas);
            let geometries = pipeline::run_project(&config, &scans, &poses, &out)?;
            println!("project: {} stations -> {}", geometries.len(), out.display());
        }
        Command::Fuse {
            scans,
            poses,
            panoramas,
            masks,
            out,
            overrides,
        } => {
            let config = load_config(&cli, overrides)?;
            let paths = &config.paths;
            let scans = resolve(scans, &base, paths, &paths.scans);
            let poses = resolve(poses, &base, paths, &paths.poses);
            let panoramas = resolve(panoramas, &base, paths, &paths.panoramas);
            let masks = resolve(masks, &base, paths, &paths.masks_manifest);
            let out = resolve(out, &base, paths, &paths.fused);
            let (set, summary) =
                pipeline::run_fuse(&config, &scans, &poses, &panoramas, &masks, &out)?;
            println!(
                "fuse: {} partial -> {} instances ({} edges, {} nodes discarded) -> {}",
                summary.n_partial,
                set.len(),
                summary.n_edges,
                summary.n_discarded_nodes,
                out.display()
            );
        }
        Command::Transfer {
            scans,
            poses,
            instances,
            out,
            overrides,
        } => {
            let config = load_config(&cli, overrides)?;
            let paths = &config.paths;
            let scans = resolve(scans, &base, paths, &paths.scans);
            let poses = resolve(poses, &base, paths, &paths.poses);
            let instances = resolve(
                instances,
                &base,
                paths,
                &paths.fused.join("instances.ply"),
            );
            let out = resolve(out, &base, paths, &paths.transfer);
            let summary = pipeline::run_transfer(&config, &scans, &poses, &instances, &out)?;
            println!(
                "transfer: {} of {} points labeled, {} spheres -> {}",
                summary.n_labeled_points,
                summary.n_target_points,
                summary.n_spheres,
                out.display()
            );
        }
        Command::Eval {
            predictions,
            refs,
            out,
            overrides,
        } => {
            let config = load_config(&cli, overrides)?;
            let paths = &config.paths;
            let out = resolve(out, &base, paths, &paths.eval.join("eval.json"));
            let file = pipeline::run_eval(&config, predictions, refs, &out)?;
            print!("{}", eval::render_report("result", &file.report));
            println!("eval report -> {}", out.display());
        }
        Command::Merge {
            a,
            b,
            out,
            overrides,
        } => {
            let config = load_config(&cli, overrides)?;
            let merged = pipeline::run_merge(&config, a, b, out)?;
            println!("merge: {} instances -> {}", merged.len(), out.display());
        }
    }
    Ok(())
}

fn resolve(
    flag: &Option<PathBuf>,
    base: &Path,
    paths: &tlseg_core::config::PathsSection,
    default: &Path,
) -> PathBuf {
    match flag {
        Some(p) => p.clone(),
        None => paths.resolve(base, default),
    }
}

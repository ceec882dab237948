//! `carloc`: every stage of the localization pipeline as a subcommand.
//!
//! Exit status is 0 on success, 2 when arguments or configuration are
//! invalid, 3 when a stage fails while running.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use carloc_core::{LabelField, Split};

mod commands;
mod failure;

use failure::Failure;

#[derive(Parser)]
#[command(name = "carloc", version, about = "Car localization from image-level labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset manifest.
    #[command(subcommand)]
    Ingest(IngestCmd),
    /// Build, cluster and inspect label spaces.
    #[command(subcommand)]
    Label(LabelCmd),
    /// Train CAM classifiers and export heatmaps.
    #[command(subcommand)]
    Camnet(CamnetCmd),
    /// Turn heatmaps into boxes.
    #[command(subcommand)]
    Boxer(BoxerCmd),
    /// Score predictions and compare runs.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Render overlays and CAM panels.
    #[command(subcommand)]
    Viz(VizCmd),
    /// Run whole experiments.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand)]
enum IngestCmd {
    /// Render a synthetic car dataset next to the manifest.
    Synth {
        /// TOML file with a `[synth]` table; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read an unpacked CompCars release.
    Compcars {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum LabelCmd {
    /// One annotated field as the label space.
    Human {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        field: LabelField,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two fields joined with `#`.
    Merge {
        #[arg(long)]
        manifest: PathBuf,
        /// Two fields, e.g. `make,year`.
        #[arg(long, value_parser = field_pair)]
        fields: (LabelField, LabelField),
        #[arg(long)]
        out: PathBuf,
    },
    /// Uniformly random labels.
    Random {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 75)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pooled backbone embeddings of every manifest image.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        /// `tiny:<seed>` or `file:<path>`.
        #[arg(long)]
        backbone: String,
        #[arg(long, default_value_t = 224)]
        input_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-means pseudo-labels over an embedding file.
    Cluster {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the full clustering (centroids, inertia history).
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Class size statistics of a label file.
    Stats {
        #[arg(long)]
        labels: PathBuf,
        /// Adds per-split statistics.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CamnetCmd {
    /// Fine-tune a CAM classifier on one label space.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// TOML file with `[model]` and `[train]` tables.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heatmaps for one split.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        /// Also write normalized 8-bit maps.
        #[arg(long)]
        pgm: bool,
    },
    /// Pretrain a backbone on the generic pretext corpus.
    Pretrain {
        /// TOML file with a `[pretext]` table.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BoxerCmd {
    /// One box per heatmap in a directory.
    Run {
        #[arg(long)]
        heatmaps: PathBuf,
        /// TOML file with a `[boxer]` table.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Mean IoU of a predictions file.
    Run {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        config_digest: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Table of several reports, best first.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Reduce an external detector's CSV to one box per image.
    IngestYolo {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "car")]
        class: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum VizCmd {
    /// Predicted (and ground-truth) boxes drawn on the images.
    Overlay(OverlayArgs),
    /// Grid of heatmaps.
    Panel {
        /// Heatmap grid files (`.pfm`), in cell order.
        #[arg(required = true)]
        heatmaps: Vec<PathBuf>,
        #[arg(long, default_value_t = 8)]
        columns: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct OverlayArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Draw at most this many images.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    no_gt: bool,
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Labels, training, inference, boxing and evaluation from one config.
    /// Stage outputs are cached under CARLOC_CACHE_DIR when it is set.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn field_pair(s: &str) -> Result<(LabelField, LabelField), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated fields")?;
    Ok((a.parse()?, b.parse()?))
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    use commands::*;
    match cmd {
        Command::Ingest(IngestCmd::Synth { config, out }) => ingest_synth(config.as_deref(), &out),
        Command::Ingest(IngestCmd::Compcars { root, out }) => ingest_compcars(&root, &out),
        Command::Label(c) => match c {
            LabelCmd::Human { manifest, field, out } => label_human(&manifest, field, &out),
            LabelCmd::Merge { manifest, fields, out } => label_merge(&manifest, fields, &out),
            LabelCmd::Random { manifest, n, seed, out } => label_random(&manifest, n, seed, &out),
            LabelCmd::Extract {
                manifest,
                backbone,
                input_size,
                out,
            } => label_extract(&manifest, &backbone, input_size, &out),
            LabelCmd::Cluster {
                features,
                k,
                seed,
                max_iter,
                tol,
                out,
                clusters,
            } => label_cluster(&features, k, seed, max_iter, tol, &out, clusters.as_deref()),
            LabelCmd::Stats { labels, manifest } => label_stats(&labels, manifest.as_deref()),
        },
        Command::Camnet(c) => match c {
            CamnetCmd::Train {
                manifest,
                labels,
                config,
                out,
            } => camnet_train(&manifest, &labels, config.as_deref(), &out),
            CamnetCmd::Infer {
                weights,
                manifest,
                split,
                out,
                pgm,
            } => camnet_infer(&weights, &manifest, split, &out, pgm),
            CamnetCmd::Pretrain { config, out } => camnet_pretrain(config.as_deref(), &out),
        },
        Command::Boxer(BoxerCmd::Run { heatmaps, config, out }) => boxer_run(&heatmaps, config.as_deref(), &out),
        Command::Eval(c) => match c {
            EvalCmd::Run {
                predictions,
                manifest,
                split,
                name,
                config_digest,
                out,
            } => eval_run(&predictions, &manifest, split, &name, &config_digest, &out),
            EvalCmd::Compare { reports, csv } => eval_compare(&reports, csv.as_deref()),
            EvalCmd::IngestYolo {
                detections,
                manifest,
                class,
                out,
            } => eval_ingest_yolo(&detections, &manifest, &class, &out),
        },
        Command::Viz(VizCmd::Overlay(a)) => viz_overlay(&a.manifest, &a.predictions, &a.out_dir, a.limit, !a.no_gt),
        Command::Viz(VizCmd::Panel { heatmaps, columns, out }) => viz_panel(&heatmaps, columns, &out),
        Command::Pipeline(PipelineCmd::Run { config }) => pipeline_run(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use avs_data::{generate_synthetic, Split, SynthConfig};
use avs_train::config::resolve_layers;
use avs_train::run::{self, load_for_inference};
use avs_train::{TrainConfig, TrainError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avs", version, about = "Audio-visual segmentation: synthesize data, train, evaluate, inspect")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Layers {
    /// TOML file merged over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted `key=value` override, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct Inference {
    /// Checkpoint written by `avs train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic audio-visual corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layers: Layers,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Train a model; writes config, metrics log and checkpoints.
    Train {
        #[command(flatten)]
        layers: Layers,
        #[arg(long)]
        print_config: bool,
    },
    /// Score a checkpoint (mIoU and F-score).
    Eval {
        #[command(flatten)]
        inference: Inference,
        /// Directory for metrics.txt and metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write palette-encoded predicted masks.
    Predict {
        #[command(flatten)]
        inference: Inference,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export TPAVI attention heatmaps as grayscale PNGs.
    Heatmap {
        #[command(flatten)]
        inference: Inference,
        #[arg(long, default_value_t = 4)]
        stage: usize,
        /// Restrict to these video ids; repeatable.
        #[arg(long = "video")]
        videos: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster per-clip audio embeddings (PCA to 2-D, then K-means).
    Cluster {
        #[command(flatten)]
        inference: Inference,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output TSV.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), TrainError> {
    match cli.command {
        Command::Synth { out, layers, print_config } => {
            let cfg: SynthConfig = resolve_layers(layers.config.as_deref(), &layers.set)?;
            if print_config {
                print!("{}", toml::to_string_pretty(&cfg).expect("config serializes"));
                return Ok(());
            }
            let summary = generate_synthetic(&cfg, &out)?;
            for m in &summary.manifests {
                println!("{}: {} videos in {}", m.subset.dir_name(), m.entries.len(), m.subset_dir().display());
            }
        }
        Command::Train { layers, print_config } => {
            let cfg = TrainConfig::resolve(layers.config.as_deref(), &layers.set)?;
            if print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let outcome = run::run_train(&cfg, |log| {
                let r = &log.record;
                let val = r.val_miou.map_or("-".into(), |m| format!("{m:.4}"));
                eprintln!("epoch {:>3}  loss {:.4}  main {:.4}  val_miou {val}  lr {:.2e}  {:.1}s", r.epoch, r.train_loss, r.main_loss, log.lr, log.seconds);
            })?;
            println!(
                "best epoch {} (val mIoU {}), checkpoints in {}",
                outcome.best.epoch,
                outcome.best.best_val_miou().map_or("-".into(), |m| format!("{m:.4}")),
                cfg.output_dir.display()
            );
        }
        Command::Eval { inference, out } => {
            let loaded = load_for_inference(&inference.checkpoint, inference.data_root.as_deref(), inference.split, None)?;
            let report = run::run_eval(&loaded, inference.split, out.as_deref())?;
            print!("split={}\n{}", inference.split.as_str(), report.to_kv());
        }
        Command::Predict { inference, out } => {
            let loaded = load_for_inference(&inference.checkpoint, inference.data_root.as_deref(), inference.split, None)?;
            let n = run::run_predict(&loaded, &out)?;
            println!("wrote {n} masks to {}", out.display());
        }
        Command::Heatmap { inference, stage, videos, out } => {
            let loaded = load_for_inference(&inference.checkpoint, inference.data_root.as_deref(), inference.split, None)?;
            let paths = run::run_heatmaps(&loaded, stage, &videos, &out)?;
            println!("wrote {} heatmaps to {}", paths.len(), out.display());
        }
        Command::Cluster { inference, k, seed, out } => {
            let loaded = load_for_inference(&inference.checkpoint, inference.data_root.as_deref(), inference.split, None)?;
            let n = run::run_cluster(&loaded, k, seed, &out)?;
            println!("clustered {n} clips into {k} groups, wrote {}", out.display());
        }
    }
    Ok(())
}

//! Command-line surface for the tracker: scene synthesis, tracking,
//! evaluation, timing benchmarks, invariant verification and overlays.

pub mod bench;
pub mod commands;
pub mod config;
pub mod overlay;
pub mod verify;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "dintr", version, about = "Diffusion-interpolation tracking on synthetic video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scene {
    /// One disc, the default acceptance clip.
    Disc,
    /// Two well-separated discs.
    TwoDiscs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Point,
    Box,
    Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InversionArg {
    Network,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mutation {
    /// Flip the sign of the from-next operator's carried term.
    FlipFromNext,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic clip with ground truth.
    Synth {
        /// Scene description; overrides --scene.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "disc")]
        scene: Scene,
        /// Override the number of frames.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track targets through a frame directory.
    Track {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of frame_%05d.ppm files.
        #[arg(long)]
        seq: PathBuf,
        /// Indicator JSON (one object or an array).
        #[arg(long, conflicts_with = "init_from_gt")]
        indicator: Option<PathBuf>,
        /// Take frame-0 indicators of this kind from the sequence's gt.jsonl.
        #[arg(long, value_enum)]
        init_from_gt: Option<InitKind>,
        /// Vocabulary table for text indicators.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-pair timing and evaluation counts as JSON.
        #[arg(long)]
        telemetry: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue finetuned parameters across pairs.
        #[arg(long)]
        warm_start: bool,
        /// Print the effective configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Ground-truth JSONL; repeat together with --pred for several sequences.
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "point,box,mask,jf,id")]
        metrics: Vec<String>,
        /// Point-accuracy thresholds in pixels.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Frame size as WxH; read from manifest.json beside the gt file otherwise.
        #[arg(long)]
        size: Option<String>,
        /// Also score frame 0.
        #[arg(long)]
        include_first: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time reconstruction against interpolation over a T grid.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "t", value_delimiter = ',', default_value = "50,100,150,200,250")]
        ts: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, value_enum, default_value = "network")]
        inversion: InversionArg,
        /// Finetune steps applied before timing; the config value otherwise.
        #[arg(long)]
        finetune_steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for bench.csv, bench.json and bench.svg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant suite and report pass/fail per check.
    Verify {
        /// Deliberately break one component to confirm the suite notices.
        #[arg(long, value_enum)]
        mutate: Option<Mutation>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Draw predictions onto frames.
    Overlay {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Caps worker threads from `DINTR_THREADS` when set.
pub fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("DINTR_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("DINTR_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(anyhow::Error::from)?;
    }
    Ok(())
}

/// Runs one parsed command, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = init_threads().and_then(|_| dispatch(cli.command));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<i32> {
    match cmd {
        Command::Synth { config, scene, frames, out } => commands::synth(config.as_deref(), scene, frames, &out),
        Command::Track {
            config,
            seq,
            indicator,
            init_from_gt,
            vocab,
            out,
            telemetry,
            seed,
            warm_start,
            print_config,
        } => commands::track(&commands::TrackArgs {
            config,
            seq,
            indicator,
            init_from_gt,
            vocab,
            out,
            telemetry,
            seed,
            warm_start,
            print_config,
        }),
        Command::Eval { gt, pred, metrics, thresholds, size, include_first, out } => {
            commands::eval(&gt, &pred, &metrics, thresholds, size.as_deref(), include_first, out.as_deref())
        }
        Command::Bench { config, ts, repeats, inversion, finetune_steps, seed, out } => {
            let mut cfg = config::load_config(config.as_deref(), seed)?;
            if let Some(s) = finetune_steps {
                cfg.engine.finetune_steps = s;
            }
            let inversion = match inversion {
                InversionArg::Network => dintr_core::engine::Inversion::Network,
                InversionArg::ClosedForm => dintr_core::engine::Inversion::ClosedForm,
            };
            let table = bench::run_bench(&cfg, &ts, repeats, inversion)?;
            bench::write_outputs(&table, &out)?;
            print!("{}", bench::to_csv(&table));
            Ok(0)
        }
        Command::Verify { mutate, json } => {
            let report = verify::run_checks(mutate);
            let mut stdout = std::io::stdout().lock();
            for c in &report.checks {
                let _ = writeln!(
                    stdout,
                    "{} {} (measured {:.3e}, tolerance {:.1e}) {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance,
                    c.detail
                );
            }
            if let Some(p) = json {
                std::fs::write(p, serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?)?;
            }
            Ok(if report.all_pass() { 0 } else { 1 })
        }
        Command::Overlay { seq, pred, out } => {
            overlay::overlay_dir(&seq, &pred, &out)?;
            Ok(0)
        }
    }
}

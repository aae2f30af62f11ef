use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use memvo::eval::{AlignMode, MetricSelection, SegmentOptions};
use memvo::model::AttentionMode;
use memvo_cli::{
    default_run_dir, load_run_config, output_root, resolve_dir, run_eval, run_infer, run_sweep, run_train, InferInput,
    SweepAxis, OUTPUT_ROOT_ENV,
};

#[derive(Parser)]
#[command(name = "memvo", version, about = "Memory-guided recurrent visual odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate trajectories with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `synthetic`, a dataset manifest, or a synthetic spec (JSON).
        #[arg(long)]
        input: String,
        #[arg(long)]
        ablation: Option<AttentionMode>,
        /// Seed for `--input synthetic`.
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        /// Sequence count for `--input synthetic`.
        #[arg(long, default_value_t = 20)]
        sequences: usize,
        #[arg(long, default_value = "infer")]
        out: PathBuf,
    },
    /// Compare an estimated trajectory file with a reference.
    Eval(EvalArgs),
    /// Train and evaluate one run per value of a parameter axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// sequence_length, thresholds or ablations.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Absolute trajectory error.
    #[arg(long)]
    ate: bool,
    /// Relative pose error per second.
    #[arg(long)]
    rpe: bool,
    /// Segment drift over path lengths.
    #[arg(long)]
    kitti: bool,
    #[arg(long, default_value = "sim3")]
    align: AlignMode,
    #[arg(long, default_value_t = 1.0)]
    rpe_delta: f64,
    /// Segment lengths in meters, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0])]
    lengths: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    step: usize,
    /// Report path; defaults to `<output root>/eval/<estimate name>.json`.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn eval(args: EvalArgs) -> Result<()> {
    let all = !(args.ate || args.rpe || args.kitti);
    let selection = MetricSelection {
        kitti: (all || args.kitti).then(|| SegmentOptions {
            lengths: args.lengths.clone(),
            step: args.step,
        }),
        ate: (all || args.ate).then_some(args.align),
        rpe: (all || args.rpe).then_some(args.rpe_delta),
    };
    let json = args.json.unwrap_or_else(|| {
        let name = args.est.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        output_root().join("eval").join(format!("{name}.json"))
    });
    let report = run_eval(&args.est, &args.reference, &selection, &json)?;
    print!("{}", report.to_table());
    eprintln!("report written to {}", json.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_run_config(&config)?;
            let dir = out.map(|d| resolve_dir(&d)).unwrap_or_else(|| default_run_dir(&cfg));
            let outcome = run_train(&cfg, &dir)?;
            println!(
                "held-out L_total {:.6} -> {:.6}, ATE sim3 {:.6} -> {:.6} m",
                outcome.initial.losses.total, outcome.last.losses.total, outcome.initial.ate_sim3, outcome.last.ate_sim3
            );
            println!("checkpoint {}", outcome.checkpoint.display());
        }
        Command::Infer {
            checkpoint,
            input,
            ablation,
            seed,
            sequences,
            out,
        } => {
            let input = InferInput::parse(&input, seed, sequences)?;
            let dir = resolve_dir(&out);
            let report = run_infer(&checkpoint, &input, ablation, &dir)?;
            println!(
                "{} sequences ({}) written to {}",
                report.sequences.len(),
                report.ablation,
                dir.join("trajectories").display()
            );
        }
        Command::Eval(args) => eval(args)?,
        Command::Sweep { config, axis, out } => {
            let cfg = load_run_config(&config)?;
            let dir = resolve_dir(&out.unwrap_or_else(|| PathBuf::from(format!("sweep-{}", axis.as_str()))));
            let report = run_sweep(&cfg, axis, &dir).context("sweep failed")?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if std::env::var_os(OUTPUT_ROOT_ENV).is_none() {
                eprintln!("(outputs default to ./runs; set {OUTPUT_ROOT_ENV} to change)");
            }
            ExitCode::FAILURE
        }
    }
}

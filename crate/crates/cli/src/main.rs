use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rim_core::config::ExperimentConfig;
use rim_core::fedsim::{run_experiment, Strategy};
use rim_core::mlp::Checkpoint;
use rim_core::pipeline;
use rim_core::report::{read_rows_csv, MetricsReport};
use rim_core::sensorsim::{
    parse_schedule, process_trace, read_trace_csv, synth_trace, write_summary_csv, write_trace_csv,
};
use rim_core::synthgen::{self, Generator};
use rim_core::{seed, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Lifestyle deficit prediction, federated fine-tuning and recommendations.
#[derive(Debug, Parser)]
#[command(name = "rim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic user-day dataset as CSV.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        users: usize,
        #[arg(long)]
        days: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize or replay accelerometer traces.
    Trace {
        #[command(subcommand)]
        action: TraceAction,
    },
    /// Pre-train the network on synthetic data and save a checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch losses and validation accuracy as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run a federated fine-tuning experiment and write its report.
    Fed {
        #[command(flatten)]
        common: Common,
        /// fedavg or fedper; overrides the config.
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Pre-trained checkpoint; pre-trains from the config when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print recommendations for each day in a dataset CSV.
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        record: PathBuf,
        /// Predict deficits with this model instead of computing them directly.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render a saved report (JSON) or client rows (CSV) as a table.
    Report {
        /// Report JSON written by `fed`.
        #[arg(long, conflicts_with = "rows", required_unless_present = "rows")]
        input: Option<PathBuf>,
        /// CSV with header client_id,accuracy_pct,mae.
        #[arg(long)]
        rows: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum TraceAction {
    /// Build a trace CSV from a JSON schedule of walk/idle segments.
    Synth {
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Spacing of idle readings.
        #[arg(long, default_value_t = 1000)]
        idle_sample_ms: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a trace CSV into a one-row day summary CSV.
    Replay {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> rim_core::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn output(path: Option<&Path>) -> rim_core::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> rim_core::Result<()> {
    match cli.command {
        Command::Generate {
            common,
            users,
            days,
            out,
        } => {
            let cfg = load_config(&common)?;
            let data = Generator::new(cfg.generator)?.generate_dataset(users, days, cfg.seed)?;
            let mut w = output(out.as_deref())?;
            synthgen::write_csv(&mut w, &synthgen::flatten(&data))?;
            w.flush()?;
        }
        Command::Trace { action } => trace(action)?,
        Command::Pretrain { common, out, history } => {
            let cfg = load_config(&common)?;
            let result = pipeline::pretrain(&cfg)?;
            result.checkpoint.save(&out)?;
            if let Some(h) = history {
                fs::write(h, serde_json::to_string_pretty(&result.history)? + "\n")?;
            }
            let best = &result.history.epochs[result.history.best_epoch - 1];
            eprintln!(
                "trained {} epochs on {} rows; best epoch {} val_loss {:.4} val_sign_accuracy {:.2}%",
                result.history.epochs.len(),
                result.train_rows,
                best.epoch,
                best.val_loss,
                100.0 * best.val_sign_accuracy
            );
        }
        Command::Fed {
            common,
            strategy,
            checkpoint,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = strategy {
                cfg.federated.strategy = s;
            }
            cfg.validate()?;
            let ckpt = match checkpoint {
                Some(p) => Checkpoint::load(p, Some(&cfg.architecture()))?,
                None => pipeline::pretrain(&cfg)?.checkpoint,
            };
            let run = run_experiment(&cfg, &ckpt)?;
            let mut w = output(out.as_deref())?;
            w.write_all(run.report.to_json()?.as_bytes())?;
            w.flush()?;
            if out.is_some() {
                print!("{}", run.report.render_table());
            }
        }
        Command::Recommend {
            common,
            record,
            checkpoint,
        } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let recommender = pipeline::recommender_from_config(&cfg)?;
            let ckpt = checkpoint.map(|p| Checkpoint::load(p, None)).transpose()?;
            let records = synthgen::read_csv(File::open(record)?)?;
            let ranges = cfg.model.ideal_ranges();
            let mut out = io::stdout().lock();
            for r in &records {
                let rec = pipeline::recommend_record(&recommender, r, &ranges, ckpt.as_ref())?;
                writeln!(
                    out,
                    "user {} {}: sleep deficit {:+.2} h, distance deficit {:+.2} km, composite risk {:.2}",
                    r.user_id, r.date, rec.deficits.sleep, rec.deficits.distance, rec.set.composite
                )?;
                for line in rec.set.render().lines() {
                    writeln!(out, "  {line}")?;
                }
            }
        }
        Command::Report { input, rows, json } => {
            let report = match (input, rows) {
                (Some(p), _) => MetricsReport::load(p)?,
                (None, Some(p)) => MetricsReport::aggregate(read_rows_csv(File::open(p)?)?)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            print!("{}", report.render_table());
            if let Some(p) = json {
                report.save(p)?;
            }
        }
    }
    Ok(())
}

fn trace(action: TraceAction) -> rim_core::Result<()> {
    match action {
        TraceAction::Synth {
            schedule,
            seed: s,
            idle_sample_ms,
            out,
        } => {
            let segments = parse_schedule(&fs::read_to_string(schedule)?)?;
            let trace = synth_trace(&segments, idle_sample_ms, &mut seed::rng(s, seed::Stream::Trace, 0))?;
            let mut w = output(out.as_deref())?;
            write_trace_csv(&mut w, &trace)?;
            w.flush()?;
        }
        TraceAction::Replay { input, config, out } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            let trace = read_trace_csv(File::open(input)?)?;
            let summary = process_trace(&trace, &cfg.sensors)?;
            let first = trace.first().map_or(0, |s| s.t_ms);
            let date = chrono::DateTime::from_timestamp_millis(first)
                .ok_or_else(|| Error::InvalidRecord(format!("timestamp {first} out of range")))?
                .date_naive();
            let mut w = output(out.as_deref())?;
            write_summary_csv(&mut w, &[(date, summary)])?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // Output piped into `head` and friends.
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geossm_core::error::{Error, Result};
use geossm_core::tasks::TaskSpec;

use geossm_cli::bench::{run_bench, BenchSpec};
use geossm_cli::config::{resolve_out, ExperimentConfig};
use geossm_cli::fmt::sig6;
use geossm_cli::runs::{self, demo_run, eval_run, gendata_run, train_run, write_out};

#[derive(Parser)]
#[command(name = "expcli", version, about = "Train and probe gated LTI sequence models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train per a config file; writes checkpoint, metrics and a config copy
    Train {
        /// Experiment config (JSON)
        config: PathBuf,
    },
    /// Accuracy table for a checkpoint across sequence lengths
    Eval {
        /// checkpoint.json written by train (config.json must sit next to it)
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256,512,1024")]
        lengths: Vec<usize>,
        /// Fresh samples per length
        #[arg(long, default_value_t = runs::EVAL_SAMPLES)]
        samples: usize,
        /// Output CSV (default: eval.csv next to the checkpoint)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Step-time and memory scaling sweeps with fitted exponents
    Bench {
        /// Sweep spec (JSON); omit for the default sweep
        spec: Option<PathBuf>,
        /// Output CSV (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace of the hand-built blank/data filtering system
    DemoSelective {
        /// Output CSV
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dump task batches as text lines
    GenData {
        /// Task spec (JSON)
        spec: PathBuf,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Output file (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {}", path.display(), e))))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = train_run(&cfg)?;
            let last = outcome.losses.last().copied();
            println!(
                "trained {} steps, final loss {}",
                outcome.losses.len(),
                last.map_or("-".into(), sig6)
            );
            println!("artifacts in {}", outcome.out_dir.display());
        }
        Cmd::Eval { checkpoint, lengths, samples, out } => {
            let outcome = eval_run(&checkpoint, &lengths, samples, out.as_deref())?;
            print!("{}", outcome.csv);
            println!("written to {}", outcome.out_path.display());
        }
        Cmd::Bench { spec, out } => {
            let spec: BenchSpec = match spec {
                Some(path) => read_json(&path)?,
                None => BenchSpec::default(),
            };
            let report = run_bench(&spec)?;
            let csv = report.to_csv(&spec);
            match out {
                Some(path) => {
                    let path = resolve_out(&path);
                    write_out(&path, &csv)?;
                    println!("written to {}", path.display());
                }
                None => print!("{}", csv),
            }
            println!("{}", report.summary());
        }
        Cmd::DemoSelective { out, length, seed } => {
            let outcome = demo_run(length, seed)?;
            let path = resolve_out(&out);
            write_out(&path, &outcome.csv)?;
            println!(
                "worst post-blank |y| {}, worst post-data |y - 0.5| {}",
                sig6(outcome.worst_blank),
                sig6(outcome.worst_data)
            );
            println!("written to {}", path.display());
        }
        Cmd::GenData { spec, batch, out } => {
            let task: TaskSpec = read_json(&spec)?;
            let lines = gendata_run(&task, batch)?;
            match out {
                Some(path) => {
                    let path = resolve_out(&path);
                    write_out(&path, &lines)?;
                    println!("written to {}", path.display());
                }
                None => print!("{}", lines),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e);
            ExitCode::FAILURE
        }
    }
}

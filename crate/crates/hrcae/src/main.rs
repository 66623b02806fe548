use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hrcae::config::RunConfig;
use hrcae::error::{Error, Result};
use hrcae::formats::{checkpoint, write_json};
use hrcae::pipeline::{self, PRETRAINED};
use hrcae_core::eval::ScanOutcome;
use hrcae_core::gradcheck::{op_kind, run_suite, GradcheckConfig};
use hrcae_core::tensor::FaultInjection;

#[derive(Parser)]
#[command(name = "hrcae", version, about = "Heart-rate anomaly detection with a contrastive convolutional auto-encoder")]
struct Cli {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the fold loop.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort into the data directory.
    Synth,
    /// Resample and segment the cohort into the cache directory.
    Preprocess,
    /// Pre-train on the pre-training participants only.
    Train,
    /// Pre-train, then run every leave-one-pair-out fold.
    Loso,
    /// Slide the symptomatic window of one positive participant.
    Scan {
        #[arg(long)]
        participant: String,
    },
    /// Compare analytic and numerical gradients of every operator.
    Gradcheck {
        /// Negate the backward pass of this operator.
        #[arg(long)]
        fault: Option<String>,
        #[arg(long, default_value_t = 50)]
        probes: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .with_env();
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &cli.output {
        cfg.paths.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth => {
            let c = pipeline::synth_to_dir(&cfg.generator, &cfg.paths.data_dir)?;
            println!(
                "wrote {} participants ({} pretrain, {} positive, {} control), {} samples to {}",
                c.pretrain + c.positive + c.control,
                c.pretrain,
                c.positive,
                c.control,
                c.samples,
                cfg.paths.data_dir.display()
            );
        }
        Command::Preprocess => {
            let (manifest, raw) = pipeline::load_cohort(&cfg.paths.data_dir)?;
            let data = pipeline::preprocess_cohort(manifest, &raw, &cfg.segment)?;
            pipeline::write_cache(&cfg.paths.cache_dir, &data)?;
            println!("subset      symptomatic  asymptomatic  discarded  completeness(mean/min)");
            for c in &data.summary.counts {
                println!(
                    "{:<10}  {:>11}  {:>12}  {:>9}  {:.3}/{:.3}",
                    c.subset, c.symptomatic, c.asymptomatic, c.discarded, c.mean_completeness, c.min_completeness
                );
            }
        }
        Command::Train => {
            let data = pipeline::load_preprocessed(&cfg)?;
            let ck = pipeline::pretrain(&data, &cfg.experiment, cfg.seed)?;
            let path = cfg.paths.output_dir.join(PRETRAINED);
            checkpoint::write(&path, &ck)?;
            hrcae::formats::reports::write_training_log(&cfg.paths.output_dir.join("training_log.csv"), &ck.trace)?;
            if let Some(last) = ck.trace.last() {
                println!("epoch {} loss {:.5}", last.epoch, last.loss);
            }
            println!("wrote {}", path.display());
        }
        Command::Loso => {
            let data = pipeline::load_preprocessed(&cfg)?;
            let run = pipeline::run_loso(&data, &cfg.experiment, cfg.seed, cfg.jobs)?;
            pipeline::write_loso(&cfg.paths.output_dir, &run)?;
            write_json(&cfg.paths.output_dir.join("config.json"), &cfg)?;
            for o in &run.folds {
                println!("fold {:>3} {:?} uar {}", o.fold.index, o.fold.held_out, fmt_opt(o.report.uar));
            }
            if let Some(r) = run.summary.overall {
                println!(
                    "overall uar {} precision {} f1 {} sensitivity {} specificity {}",
                    fmt_opt(r.uar),
                    fmt_opt(r.precision),
                    fmt_opt(r.f1),
                    fmt_opt(r.sensitivity),
                    fmt_opt(r.specificity)
                );
            }
        }
        Command::Scan { participant } => {
            let data = pipeline::load_preprocessed(&cfg)?;
            let rows = pipeline::scan_participant(&data, &cfg.paths.output_dir, participant, &cfg.scan_shifts)?;
            for r in rows {
                match r.outcome {
                    ScanOutcome::Scored { recon_error, decision } => {
                        println!("shift {:>3} error {recon_error:.5} decision {}", r.shift, decision as u8)
                    }
                    ScanOutcome::Skipped { reason } => eprintln!("shift {:>3} skipped: {reason}", r.shift),
                }
            }
        }
        Command::Gradcheck { fault, probes } => {
            let fault = match fault {
                Some(name) => Some(FaultInjection { op: op_kind(name).ok_or_else(|| Error::Invalid(format!("unknown operator {name}")))? }),
                None => None,
            };
            let gc = GradcheckConfig { probes: *probes, seed: cfg.seed, fault, ..GradcheckConfig::default() };
            let reports = run_suite(&gc)?;
            let mut failed = Vec::new();
            for r in &reports {
                println!("{:<20} max_rel_err {:.3e} {}", r.op, r.max_rel_err, if r.passed { "ok" } else { "FAIL" });
                if !r.passed {
                    failed.push(r.op.to_string());
                }
            }
            if !failed.is_empty() {
                return Err(Error::Gradcheck(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

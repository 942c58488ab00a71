//! Command-line driver: train amortized posterior samplers, evaluate
//! checkpoints, run the built-in oracle checks, and summarize reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use davi_core::harness::{
    config::ExperimentConfig, evaluate, read_report, report::emit_report, run_experiment_in,
    selfcheck, EvalSplit,
};
use davi_core::trainer::Checkpoint;

#[derive(Parser)]
#[command(
    name = "davi",
    about = "Amortized single-step posterior sampling for noisy linear inverse problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation; training is always sequential.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train per a JSON config, then evaluate on held-out measurements.
    Train {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Evaluate a saved checkpoint on the problem described by a config.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Run the built-in oracle and identity checks.
    Check {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Summarize a report directory (rewrites summary.json from report.csv).
    Report { dir: PathBuf },
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .ok();
    }
}

fn load_config(path: &Path, opts: &CommonOpts) -> davi_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &opts.out {
        cfg.output_dir = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn print_summary(report: &davi_core::harness::EvalReport) {
    let s = report.summary();
    println!("measurements: {}", s.rows);
    println!(
        "mean: mean_err {:.6}  std_err {:.6}  swd {:.6}  psnr {:.3}  residual {:.6}  nfe {}",
        s.mean.mean_err, s.mean.std_err, s.mean.swd, s.mean.psnr, s.mean.residual, s.mean.nfe
    );
}

fn run() -> davi_core::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, opts } => {
            init_threads(opts.threads);
            let cfg = load_config(&config, &opts)?;
            let out_dir = cfg.output_dir.as_ref().map(PathBuf::from);
            let arts = run_experiment_in(&cfg, out_dir.as_deref())?;
            println!(
                "trained {} iterations (final loss_c {:.6})",
                arts.state.iteration,
                arts.state.log.last().map(|l| l.loss_c).unwrap_or(f64::NAN)
            );
            print_summary(&arts.report);
            match &arts.out_dir {
                Some(dir) => println!("artifacts in {}", dir.display()),
                None => println!("no output directory configured; artifacts not persisted"),
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            config,
            opts,
        } => {
            init_threads(opts.threads);
            let cfg = load_config(&config, &opts)?;
            let cp = Checkpoint::load(&checkpoint)?;
            let trainer = cfg.build_trainer()?;
            let peak = cfg.psnr_peak(&trainer.prior);
            let report = evaluate(
                &cp.phi,
                &trainer,
                &cfg.eval,
                cfg.seed,
                EvalSplit::Heldout,
                peak,
            )?;
            print_summary(&report);
            let out = opts.out.or_else(|| {
                cfg.output_dir
                    .as_ref()
                    .map(|d| PathBuf::from(d).join("eval"))
            });
            match out {
                Some(dir) => {
                    emit_report(&report, &dir, &cfg)?;
                    println!("report in {}", dir.display());
                }
                None => println!("no output directory configured; report not persisted"),
            }
            Ok(())
        }
        Command::Check { seed } => {
            let results = selfcheck::run_all(seed);
            let mut all_ok = true;
            for r in &results {
                println!(
                    "{} {} ({})",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
                all_ok &= r.passed;
            }
            if all_ok {
                Ok(())
            } else {
                Err(davi_core::Error::State("self-check failed".into()))
            }
        }
        Command::Report { dir } => {
            let report = read_report(&dir)?;
            print_summary(&report);
            let mut text = serde_json::to_string_pretty(&report.summary())?;
            text.push('\n');
            let path = dir.join("summary.json");
            std::fs::write(&path, text)
                .map_err(|e| davi_core::Error::io(path.display().to_string(), e))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

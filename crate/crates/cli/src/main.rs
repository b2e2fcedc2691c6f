//! `otac`: command-line driver for over-the-air consensus simulations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ota_consensus::analysis::BoundMode;
use ota_consensus::channel::NegativePolicy;
use ota_consensus::graph::TopologySequence;
use ota_consensus::harness::{self, MomentsSpec, RunOptions, Scenario};
use ota_consensus::rng::{stream, StreamDomain};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "otac",
    version,
    about = "Over-the-air average consensus simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo trials of a scenario.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Attach bound constants to the aggregate.
        #[arg(long)]
        bounds: bool,
    },
    /// Paired comparison of two scenarios differing only in one field.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Dotted path of the swept field, e.g. `channel.sigma2`.
        #[arg(long)]
        sweep: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check step-size admissibility and joint connectivity.
    Validate {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Certify every aligned window of a topology sequence file.
    CheckConnectivity {
        sequence: PathBuf,
        /// Steps to check; defaults to the file horizon or one window.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Monte Carlo estimates of the conditional channel moments.
    Moments {
        model: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory for traces and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep every N-th step in traces.
    #[arg(long)]
    thin: Option<usize>,
    /// clamp | abort | offset-warn
    #[arg(long)]
    policy: Option<NegativePolicy>,
    /// paper | consistent
    #[arg(long)]
    bound_mode: Option<BoundMode>,
}

impl Overrides {
    fn apply(&self, sc: &mut Scenario) {
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(trials) = self.trials {
            sc.trials = trials;
        }
        if let Some(out) = &self.out {
            sc.output.dir = Some(absolute(out));
        }
        if let Some(thin) = self.thin {
            sc.output.thin = Some(thin);
            sc.output.full_traces = false;
        }
        if let Some(policy) = self.policy {
            sc.policy = policy;
        }
        if let Some(mode) = self.bound_mode {
            sc.bound_mode = mode;
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn load(path: &Path, overrides: &Overrides) -> Result<Scenario> {
    let mut sc = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    overrides.apply(&mut sc);
    Ok(sc)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>, file: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(file);
            fs::write(&path, text + "\n")?;
            log::info!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn exit_for(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            overrides,
            bounds,
        } => {
            let sc = load(&scenario, &overrides)?;
            let resolved = sc.resolve()?;
            let opts = RunOptions {
                keep_traces: false,
                compute_bounds: bounds,
            };
            let report = harness::run(&resolved, &opts)?;
            println!("{}", harness::describe(&report.aggregate));
            if sc.output.dir.is_none() && bounds {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report.aggregate.bounds)?
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            a,
            b,
            sweep,
            overrides,
        } => {
            let out = overrides.out.as_deref().map(absolute);
            let strip = Overrides {
                out: None,
                ..overrides
            };
            let ra = load(&a, &strip)?.resolve()?;
            let rb = load(&b, &strip)?.resolve()?;
            let report = harness::compare(&ra, &rb, &sweep)?;
            eprintln!(
                "{sweep}: b higher in {}/{} paired trials (p = {:.3e}), Var(x*) {:.4e} vs {:.4e}",
                report.b_higher,
                report.trials,
                report.sign_test_p,
                report.var_x_star_a,
                report.var_x_star_b
            );
            emit(&report, out.as_deref(), "compare.json")?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate {
            scenario,
            overrides,
        } => {
            let out = overrides.out.as_deref().map(absolute);
            let resolved = load(
                &scenario,
                &Overrides {
                    out: None,
                    ..overrides
                },
            )?
            .resolve()?;
            let bundle = harness::validate(&resolved);
            for v in &bundle.verdicts {
                let tag = if v.passed { "ok" } else { "FAIL" };
                let limited = if v.horizon_limited {
                    " (horizon-limited)"
                } else {
                    ""
                };
                eprintln!("{tag:>4} {}{limited}: {}", v.name, v.reason);
            }
            emit(&bundle, out.as_deref(), "validation.json")?;
            Ok(exit_for(bundle.passed))
        }
        Command::CheckConnectivity { sequence, horizon } => {
            let seq = TopologySequence::load(&sequence)
                .with_context(|| format!("loading {}", sequence.display()))?;
            let horizon = horizon.or(seq.horizon()).unwrap_or(seq.window());
            let report = harness::check_connectivity(&seq, horizon);
            emit(&report, None, "")?;
            Ok(exit_for(report.passed))
        }
        Command::Moments {
            model,
            draws,
            seed,
            out,
        } => {
            let (spec, model, topo) = MomentsSpec::load(&model)
                .with_context(|| format!("loading {}", model.display()))?;
            let mut rng = stream(seed.unwrap_or(spec.seed), StreamDomain::Validation, 0);
            let report = ota_consensus::estimate_conditional_moments(
                &model, &topo, &spec.x, draws, &mut rng,
            )?;
            for e in report.estimates.iter().filter(|e| e.gated && !e.pass) {
                eprintln!(
                    "FAIL {}: {:.6e} vs {:.6e} (se {:.2e})",
                    e.name, e.empirical, e.expected, e.std_error
                );
            }
            emit(
                &report,
                out.as_deref().map(absolute).as_deref(),
                "moments.json",
            )?;
            Ok(exit_for(report.all_passed))
        }
    }
}

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{ConfigError, RunConfig};
use normform::harness::{decay_fit, verify_lemma, write_lemma_report};
use normform::trees::{chronicle_count, enumerate_ordered_trees};
use normform::{compare_solutions, export_trajectory, solve_normal_form, Error, SolverConfig};

#[derive(Parser)]
#[command(
    name = "normform",
    version,
    about = "Normal form reduction engine for the cubic NLS and mKdV"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run on a single thread for bit-reproducible output.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the number of ordered trees of generation J.
    Trees {
        j: usize,
        /// Also print every tree as JSON, one per line.
        #[arg(long)]
        serialize: bool,
    },
    /// Solve the normal form equation and export the trajectory.
    Solve,
    /// Compare the normal form solution with the reference integrator.
    Compare,
    /// Sup-ratio sweep of one estimate.
    Verify {
        /// Overrides `[verify] lemma`.
        #[arg(long)]
        lemma: Option<String>,
    },
    /// Decay-rate fit of a normal form term.
    Decay,
}

/// Failures that map to exit status 2.
fn is_io_or_config(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<ConfigError>()
            || e.is::<std::io::Error>()
            || matches!(
                e.downcast_ref::<Error>(),
                Some(Error::Io(_) | Error::Csv(_) | Error::Json(_))
            )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.deterministic {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(1).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_io_or_config(&e) { 2 } else { 1 })
        }
    }
}

fn load(cli: &Cli) -> anyhow::Result<(RunConfig, PathBuf)> {
    let Some(path) = &cli.config else {
        return Err(ConfigError(anyhow::anyhow!("this command needs --config PATH")).into());
    };
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Returns whether the command's check passed.
fn run(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Trees { j, serialize } => {
            let trees = enumerate_ordered_trees(*j)?;
            debug_assert_eq!(trees.len() as u64, chronicle_count(*j));
            println!("{}", trees.len());
            if *serialize {
                for t in &trees {
                    println!("{}", serde_json::to_string(&t.to_json_node())?);
                }
            }
            Ok(true)
        }
        Command::Solve => {
            let (cfg, out) = load(cli)?;
            let u0 = cfg.datum()?;
            let mut solver = prepared_solver(&cfg, &u0)?;
            let mut attempt = 0;
            let (traj, report) = loop {
                match solve_normal_form(&u0, &solver) {
                    Err(Error::NoContraction { .. }) if attempt < cfg.solver.retries => {
                        attempt += 1;
                        solver.t_final /= 2.0;
                        eprintln!("no contraction; retrying with T = {:e}", solver.t_final);
                    }
                    other => break other?,
                }
            };
            export_trajectory(&traj, &cfg, &report, &out)?;
            write_json(&out.join("report.json"), &report)?;
            println!(
                "converged: {} after {} iterations, residual {:e}, N = {}, T = {:e}",
                report.converged, report.iterations, report.final_residual, report.n, report.t_final
            );
            Ok(report.converged)
        }
        Command::Compare => {
            let (cfg, out) = load(cli)?;
            let u0 = cfg.datum()?;
            let solver = prepared_solver(&cfg, &u0)?;
            let (report, _, _) = compare_solutions(&u0, &solver)?;
            write_json(&out.join("compare.json"), &report)?;
            let mut csv = String::from("t,discrepancy\n");
            for (t, d) in report.times.iter().zip(&report.discrepancy) {
                csv.push_str(&format!("{t:e},{d:e}\n"));
            }
            std::fs::write(out.join("discrepancy.csv"), csv)?;
            println!(
                "max discrepancy {:e}, budget {:e}: {}",
                report.max_discrepancy,
                report.budget.total,
                if report.within_budget() {
                    "within budget"
                } else {
                    "over budget"
                }
            );
            Ok(report.within_budget())
        }
        Command::Verify { lemma } => {
            let (mut cfg, out) = load(cli)?;
            if let Some(l) = lemma {
                cfg.verify.lemma = l.clone();
            }
            let sweep = cfg.lemma_sweep()?;
            let report = verify_lemma(&sweep)?;
            write_lemma_report(&report, &out)?;
            println!(
                "{}: slope {:.4} (bound {:.4}), r2 {:.3}",
                report.lemma, report.fit.slope, report.slope_bound, report.fit.r2
            );
            Ok(report.slope_ok)
        }
        Command::Decay => {
            let (cfg, out) = load(cli)?;
            let sweep = cfg.decay_sweep()?;
            let fit = decay_fit(&sweep)?;
            write_json(&out.join("fit.json"), &fit)?;
            println!(
                "slope {:.4}, predicted {:.4}, r2 {:.3}: {}",
                fit.fit.slope,
                fit.predicted,
                fit.fit.r2,
                if fit.passes { "pass" } else { "fail" }
            );
            Ok(fit.passes)
        }
    }
}

fn prepared_solver(cfg: &RunConfig, u0: &normform::GridFunction) -> anyhow::Result<SolverConfig> {
    let solver = cfg.solver()?;
    if cfg.solver.pick_parameters {
        return Ok(solver.with_picked_parameters(u0)?);
    }
    Ok(solver)
}

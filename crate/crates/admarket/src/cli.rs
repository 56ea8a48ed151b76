//! Command line entry points: generate, run, audit, montecarlo.
//!
//! Exit codes: 0 when the requested work succeeded and every requested
//! check passed, 1 when a check failed, 2 on malformed files or flags.
//! Identical flags and files produce byte-identical output files. The
//! ADMARKET_THREADS environment variable caps the worker pool used for
//! parallel trials and grid sweeps.

use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use num_rational::BigRational;
use rayon::prelude::*;
use serde_json::json;

use crate::audit::{
    self, check_bb, check_ic_all, check_ir, competitive_ratio, prm_bound, tpm_bound, CheckStatus,
    InvariantCheck, Mechanism, RatioVerdict,
};
use crate::canonical::full_canonical;
use crate::gen::{generate, GeneratorSpec};
use crate::io::{
    load_instance, parse_rational_arg, save_instance, write_montecarlo_csv, AuditReportDoc,
    BbEntry, IcEntry, InvariantEntry, IrEntry, RatioEntry, RunReport,
};
use crate::market::{MarketInstance, Outcome, Reports};
use crate::money::format_rational;
use crate::prm::{run_prm, PrmConfig, PrmTrace};
use crate::scalar::ExtendedScalar;
use crate::tpm::{run_tpm, TpmConfig, TpmTrace};

#[derive(Parser)]
#[command(
    name = "admarket",
    version,
    about = "Double-sided ad market mechanisms with an economic audit harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a generator spec into an instance file.
    Generate {
        /// Generator spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Instance file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a mechanism truthfully on an instance and write a report.
    Run {
        #[arg(long)]
        mechanism: MechanismArg,
        #[arg(long)]
        instance: PathBuf,
        /// Capacity bound gamma (prm).
        #[arg(long)]
        gamma: Option<usize>,
        /// Relative capacity bound alpha, exact rational (tpm).
        #[arg(long)]
        alpha: Option<String>,
        /// Mechanism seed (tpm).
        #[arg(long)]
        seed: Option<u64>,
        /// Report file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check economic properties of a mechanism on an instance.
    Audit {
        #[arg(long)]
        mechanism: MechanismArg,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        gamma: Option<usize>,
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Which checks to run.
        #[arg(long, value_delimiter = ',', required = true)]
        checks: Vec<CheckArg>,
        /// Trials for the tpm ratio check (seeds seed..seed+trials).
        #[arg(long, default_value_t = 1)]
        trials: u64,
        /// Optional JSON report file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run many seeded trials and write per-seed gains as CSV.
    Montecarlo {
        #[arg(long)]
        mechanism: MechanismArg,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        alpha: String,
        #[arg(long)]
        trials: u64,
        /// Base seed; trial i uses seeds + i.
        #[arg(long)]
        seeds: u64,
        /// CSV file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MechanismArg {
    Prm,
    Tpm,
    /// First-price variant of prm; a knowingly broken negative control
    /// for exercising the incentive auditor.
    PrmBroken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckArg {
    Bb,
    Ir,
    Ic,
    Ratio,
    Invariants,
}

type CliResult<T> = Result<T, Box<dyn Error>>;

pub fn main() -> ExitCode {
    if let Ok(text) = std::env::var("ADMARKET_THREADS") {
        match text.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // Ignore the error if a pool already exists.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: ADMARKET_THREADS must be a positive integer, got {text:?}");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> CliResult<bool> {
    match command {
        Command::Generate { spec, out } => {
            let text = std::fs::read_to_string(&spec)?;
            let spec: GeneratorSpec = serde_json::from_str(&text)?;
            let instance = generate(&spec)?;
            save_instance(&out, &instance)?;
            println!(
                "generated {} mediators, {} advertisers -> {}",
                instance.mediators().len(),
                instance.advertisers().len(),
                out.display()
            );
            Ok(true)
        }
        Command::Run { mechanism, instance, gamma, alpha, seed, out } => {
            let instance = load_instance(&instance)?;
            let reports = Reports::truthful(&instance);
            let report = match mechanism {
                MechanismArg::Prm => {
                    let config = prm_config(gamma)?;
                    let (outcome, trace) = run_prm(&instance, &reports, config)?;
                    RunReport::new(
                        "prm",
                        json!({ "gamma": config.gamma }),
                        &outcome,
                        prm_trace_summary(&trace),
                    )
                }
                MechanismArg::Tpm => {
                    let config = tpm_config(alpha.as_deref(), seed)?;
                    let (outcome, trace) = run_tpm(&instance, &reports, &config)?;
                    RunReport::new(
                        "tpm",
                        json!({
                            "alpha": format_rational(&config.alpha),
                            "seed": config.seed,
                        }),
                        &outcome,
                        tpm_trace_summary(&trace),
                    )
                }
                MechanismArg::PrmBroken => {
                    return Err("the broken control is only available under `audit`".into())
                }
            };
            report.write(&out)?;
            println!(
                "{}: gain from trade {} ({} pairs) -> {}",
                report.mechanism,
                report.gain_from_trade.exact,
                report.pairs.len(),
                out.display()
            );
            Ok(true)
        }
        Command::Audit { mechanism, instance, gamma, alpha, seed, checks, trials, out } => {
            run_audit(mechanism, &instance, gamma, alpha.as_deref(), seed, &checks, trials, out)
        }
        Command::Montecarlo { mechanism, instance, alpha, trials, seeds, out } => {
            if mechanism != MechanismArg::Tpm {
                return Err("montecarlo supports only --mechanism tpm".into());
            }
            let instance = load_instance(&instance)?;
            let reports = Reports::truthful(&instance);
            let alpha = parse_rational_arg(&alpha)?;
            let opt = full_canonical(&instance).gain_from_trade();
            let rows: Result<Vec<(u64, BigRational)>, crate::tpm::TpmError> = (0..trials)
                .into_par_iter()
                .map(|i| {
                    let config = TpmConfig::new(alpha.clone(), seeds + i)?;
                    let (outcome, _) = run_tpm(&instance, &reports, &config)?;
                    Ok((seeds + i, outcome.assignment.gain_from_trade()))
                })
                .collect();
            let rows = rows?;
            write_montecarlo_csv(&out, &opt, &rows)?;
            let verdict = competitive_ratio(
                &rows.iter().map(|(_, g)| g.clone()).collect::<Vec<_>>(),
                &opt,
                &tpm_bound(&alpha),
            );
            match &verdict.ratio {
                Some(ratio) => println!(
                    "montecarlo: {} trials, mean ratio {} ~ {:.6} -> {}",
                    rows.len(),
                    format_rational(ratio),
                    crate::money::rational_to_f64(ratio),
                    out.display()
                ),
                None => println!(
                    "montecarlo: {} trials, ratio vacuous -> {}",
                    rows.len(),
                    out.display()
                ),
            }
            Ok(true)
        }
    }
}

fn prm_config(gamma: Option<usize>) -> CliResult<PrmConfig> {
    let gamma = gamma.ok_or("--gamma is required for prm")?;
    Ok(PrmConfig::new(gamma)?)
}

fn tpm_config(alpha: Option<&str>, seed: Option<u64>) -> CliResult<TpmConfig> {
    let alpha = parse_rational_arg(alpha.ok_or("--alpha is required for tpm")?)?;
    let seed = seed.ok_or("--seed is required for tpm")?;
    Ok(TpmConfig::new(alpha, seed)?)
}

fn scalar_text(s: &ExtendedScalar) -> String {
    s.to_string()
}

fn prm_trace_summary(trace: &PrmTrace) -> serde_json::Value {
    json!({
        "thresholds": trace
            .thresholds
            .iter()
            .map(|(id, t)| (id.to_string(), scalar_text(t)))
            .collect::<std::collections::BTreeMap<_, _>>(),
        "tradable_counts": trace
            .tradable
            .iter()
            .map(|(id, users)| (id.to_string(), users.len()))
            .collect::<std::collections::BTreeMap<_, _>>(),
        "dummy_value": scalar_text(&trace.dummy_value),
        "dummy_capacity": trace.dummy_capacity,
        "vcg_welfare": format_rational(&trace.vcg.welfare),
    })
}

fn tpm_trace_summary(trace: &TpmTrace) -> serde_json::Value {
    let side = |s: &crate::tpm::TpmSide| {
        json!({
            "location": s.thresholds.location,
            "phat": scalar_text(&s.thresholds.phat),
            "bhat": scalar_text(&s.thresholds.bhat),
            "threshold_users": s.phat.len(),
            "threshold_slots": s.bhat.len(),
            "pairs": s.matched.len(),
        })
    };
    json!({
        "m1": trace.partition.m1.len(),
        "m2": trace.partition.m2.len(),
        "a1": trace.partition.a1.len(),
        "a2": trace.partition.a2.len(),
        "low_mediators": trace.partition.low_mediators.len(),
        "low_advertisers": trace.partition.low_advertisers.len(),
        "side1": side(&trace.side1),
        "side2": side(&trace.side2),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_audit(
    mechanism: MechanismArg,
    instance_path: &std::path::Path,
    gamma: Option<usize>,
    alpha: Option<&str>,
    seed: Option<u64>,
    checks: &[CheckArg],
    trials: u64,
    out: Option<PathBuf>,
) -> CliResult<bool> {
    let instance = load_instance(instance_path)?;
    let reports = Reports::truthful(&instance);

    // A truthful run (plus trace) backs the bb/ir/invariants checks.
    let (mech, params, outcome, prm_trace, tpm_trace): (
        Mechanism,
        serde_json::Value,
        Outcome,
        Option<PrmTrace>,
        Option<TpmTrace>,
    ) = match mechanism {
        MechanismArg::Prm => {
            let config = prm_config(gamma)?;
            let (outcome, trace) = run_prm(&instance, &reports, config)?;
            (
                Mechanism::Prm(config),
                json!({ "gamma": config.gamma }),
                outcome,
                Some(trace),
                None,
            )
        }
        MechanismArg::PrmBroken => {
            let config = prm_config(gamma)?;
            let mech = Mechanism::PrmFirstPrice(config);
            let outcome = mech.run(&instance, &reports)?;
            let (_, trace) = run_prm(&instance, &reports, config)?;
            (
                mech,
                json!({ "gamma": config.gamma, "variant": "first-price control" }),
                outcome,
                Some(trace),
                None,
            )
        }
        MechanismArg::Tpm => {
            let config = tpm_config(alpha, seed)?;
            let (outcome, trace) = run_tpm(&instance, &reports, &config)?;
            (
                Mechanism::Tpm(config.clone()),
                json!({
                    "alpha": format_rational(&config.alpha),
                    "seed": config.seed,
                }),
                outcome,
                None,
                Some(trace),
            )
        }
    };

    let mechanism_name = match mechanism {
        MechanismArg::Prm => "prm",
        MechanismArg::PrmBroken => "prm-broken",
        MechanismArg::Tpm => "tpm",
    };
    let mut doc = AuditReportDoc {
        mechanism: mechanism_name.to_string(),
        params,
        bb: None,
        ir: None,
        ic: None,
        ratio: None,
        invariants: None,
        pass: true,
    };

    for check in checks {
        match check {
            CheckArg::Bb => {
                let verdict = check_bb(&outcome);
                println!(
                    "bb: {} (surplus {})",
                    pass_text(verdict.holds),
                    format_rational(&verdict.surplus)
                );
                doc.pass &= verdict.holds;
                doc.bb = Some(BbEntry::from(&verdict));
            }
            CheckArg::Ir => {
                let verdict = check_ir(&instance, &outcome);
                println!("ir: {}", pass_text(verdict.holds));
                doc.pass &= verdict.holds;
                doc.ir = Some(IrEntry::from(&verdict));
            }
            CheckArg::Ic => {
                let verdicts = check_ic_all(&instance, &mech)?;
                let entry = IcEntry::from_verdicts(&verdicts);
                for v in verdicts.iter().filter(|v| v.violated) {
                    println!(
                        "ic: {} profits by deviating ({})",
                        v.agent,
                        v.best_deviation.as_deref().unwrap_or("?")
                    );
                }
                println!("ic: {}", pass_text(entry.holds));
                doc.pass &= entry.holds;
                doc.ic = Some(entry);
            }
            CheckArg::Ratio => {
                let verdict = ratio_check(&instance, &reports, &mech, trials)?;
                match (&verdict.ratio, verdict.vacuous) {
                    (Some(ratio), _) => println!(
                        "ratio: {} ({} vs bound {})",
                        pass_text(verdict.holds),
                        format_rational(ratio),
                        format_rational(&verdict.bound)
                    ),
                    (None, _) => println!("ratio: pass (vacuous)"),
                }
                doc.pass &= verdict.holds;
                doc.ratio = Some(RatioEntry::from(&verdict));
            }
            CheckArg::Invariants => {
                let checks: Vec<InvariantCheck> = match (&prm_trace, &tpm_trace, &mech) {
                    (Some(trace), _, Mechanism::Prm(c) | Mechanism::PrmFirstPrice(c)) => {
                        audit::prm_invariant_suite(&instance, &outcome, trace, c.gamma)
                    }
                    (_, Some(trace), Mechanism::Tpm(c)) => {
                        audit::tpm_invariant_suite(&instance, trace, &c.alpha)
                    }
                    _ => unreachable!("trace always matches the mechanism"),
                };
                let mut ok = true;
                for c in &checks {
                    let status = match c.status {
                        CheckStatus::Pass => "pass",
                        CheckStatus::Fail => "FAIL",
                        CheckStatus::NotApplicable => "not-applicable",
                    };
                    println!("invariant {}: {} ({})", c.name, status, c.detail);
                    ok &= c.status != CheckStatus::Fail;
                }
                doc.pass &= ok;
                doc.invariants = Some(checks.iter().map(InvariantEntry::from).collect());
            }
        }
    }

    if let Some(path) = out {
        doc.write(&path)?;
    }
    println!("audit: {}", pass_text(doc.pass));
    Ok(doc.pass)
}

fn ratio_check(
    instance: &MarketInstance,
    reports: &Reports,
    mech: &Mechanism,
    trials: u64,
) -> CliResult<RatioVerdict> {
    let full = full_canonical(instance);
    let opt = full.gain_from_trade();
    match mech {
        Mechanism::Prm(config) | Mechanism::PrmFirstPrice(config) => {
            let (outcome, _) = run_prm(instance, reports, *config)?;
            let bound = prm_bound(config.gamma, full.tau());
            Ok(competitive_ratio(&[outcome.assignment.gain_from_trade()], &opt, &bound))
        }
        Mechanism::Tpm(config) => {
            let gfts: Result<Vec<BigRational>, crate::tpm::TpmError> = (0..trials.max(1))
                .into_par_iter()
                .map(|i| {
                    let config = TpmConfig::new(config.alpha.clone(), config.seed + i)?;
                    let (outcome, _) = run_tpm(instance, reports, &config)?;
                    Ok(outcome.assignment.gain_from_trade())
                })
                .collect();
            Ok(competitive_ratio(&gfts?, &opt, &tpm_bound(&config.alpha)))
        }
    }
}

fn pass_text(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

//! Experiment driver: single equilibrium solves, population-size sweeps
//! written as CSV, and the mechanism property report.
//!
//! Exit codes: 0 success, 2 input error, 3 non-convergence, 4 property
//! violation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use coopmarket::equilibrium::{
    solve_nash, solve_nash_with_incentives, solve_optimal, solve_price_taker, EquilibriumReport,
    SolverSettings,
};
use coopmarket::market::{DemandProfile, MarketConfig};
use coopmarket::mechanism::{
    budget_report, impossibility_demo, incentive, individual_rationality_check, MechanismSpec,
};
use coopmarket::metrics::customer_surplus;
use coopmarket::rng::SplitMix64;

mod sweep;

#[derive(Parser)]
#[command(name = "coopmarket", version, about = "Non-profit electricity market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one equilibrium of a market config and print the report.
    Solve {
        /// Market configuration document (TOML).
        config: PathBuf,
        /// Which equilibrium to compute.
        #[arg(long, value_enum)]
        equilibrium: EquilibriumArg,
        /// Mechanism instance for the incentivized game.
        #[arg(long, value_enum, default_value_t = MechanismArg::None)]
        mechanism: MechanismArg,
        /// Fixed unit price observed by price takers.
        #[arg(long)]
        price: Option<f64>,
        /// Also write the solved profile as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a population-size sweep and write fig1.csv / fig3.csv.
    Sweep {
        /// Sweep specification document (TOML).
        spec: PathBuf,
        /// Additionally emit gnuplot scripts next to the CSV files.
        #[arg(long)]
        gnuplot: bool,
    },
    /// Check the mechanism properties on seeded random profiles.
    MechanismReport {
        /// Market configuration document (TOML).
        config: PathBuf,
        /// Number of sampled profiles.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Seed of the profile stream.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EquilibriumArg {
    PriceTaker,
    Optimal,
    Nash,
    NashIncentivized,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MechanismArg {
    None,
    Deficit,
    Surplus,
}

impl MechanismArg {
    fn spec(self) -> Option<MechanismSpec> {
        match self {
            MechanismArg::None => None,
            MechanismArg::Deficit => Some(MechanismSpec::Deficit),
            MechanismArg::Surplus => Some(MechanismSpec::Surplus),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<coopmarket::Error>() {
        Some(coopmarket::Error::NonConvergence(_)) | Some(coopmarket::Error::StepSize(_)) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Solve {
            config,
            equilibrium,
            mechanism,
            price,
            csv,
        } => cmd_solve(&config, equilibrium, mechanism, price, csv.as_deref()),
        Command::Sweep { spec, gnuplot } => sweep::cmd_sweep(&spec, gnuplot),
        Command::MechanismReport {
            config,
            samples,
            seed,
        } => cmd_mechanism_report(&config, samples, seed),
    }
}

fn cmd_solve(
    config_path: &Path,
    equilibrium: EquilibriumArg,
    mechanism: MechanismArg,
    price: Option<f64>,
    csv: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let cfg = MarketConfig::from_path(config_path)?;
    let settings = SolverSettings::default();
    let report: EquilibriumReport = match equilibrium {
        EquilibriumArg::PriceTaker => {
            let price =
                price.context("--equilibrium price-taker requires --price")?;
            solve_price_taker(&cfg, price, &settings)?
        }
        EquilibriumArg::Optimal => solve_optimal(&cfg, &settings)?,
        EquilibriumArg::Nash => solve_nash(&cfg, &settings)?,
        EquilibriumArg::NashIncentivized => {
            let Some(mech) = mechanism.spec() else {
                bail!("--equilibrium nash-incentivized requires --mechanism deficit or surplus");
            };
            solve_nash_with_incentives(&cfg, &mech, &settings)?
        }
    };
    println!("{report}");
    println!("customer_surplus: {}", customer_surplus(&cfg, &report.profile)?);

    if let Some(path) = csv {
        let mut out = String::from("user,q\n");
        for (i, q) in report.profile.values().iter().enumerate() {
            writeln!(out, "{},{q}", i + 1).unwrap();
        }
        std::fs::write(path, out)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }

    Ok(if report.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

struct Check {
    label: &'static str,
    passed: bool,
    detail: String,
    counterexample: Option<Vec<f64>>,
}

fn cmd_mechanism_report(
    config_path: &Path,
    samples: usize,
    seed: u64,
) -> anyhow::Result<ExitCode> {
    if samples == 0 {
        bail!("--samples must be at least 1");
    }
    let cfg = MarketConfig::from_path(config_path)?;
    let n = cfg.n_users();
    if n < 2 {
        return Err(coopmarket::Error::Domain(
            "the mechanism report covers the budget-surplus instance, which needs at least \
             two users"
                .into(),
        )
        .into());
    }

    let mut rng = SplitMix64::new(seed);
    let mut checks = Vec::new();

    // Uniform-profile row of the property table.
    let mut worst_uniform_surplus = 0.0f64;
    let mut worst_uniform_deficit = f64::NEG_INFINITY;
    let mut uniform_counterexample = None;
    for _ in 0..samples {
        let q = DemandProfile::uniform(n, rng.uniform(0.0, 10.0)).unwrap();
        for i in 0..n {
            let i_s = incentive(&MechanismSpec::Surplus, &cfg, &q, i)?;
            if i_s.abs() > worst_uniform_surplus {
                worst_uniform_surplus = i_s.abs();
                if i_s.abs() > 1e-10 {
                    uniform_counterexample = Some(q.values().to_vec());
                }
            }
            let i_d = incentive(&MechanismSpec::Deficit, &cfg, &q, i)?;
            worst_uniform_deficit = worst_uniform_deficit.max(i_d);
        }
    }
    checks.push(Check {
        label: "uniform profiles: surplus incentives vanish",
        passed: worst_uniform_surplus <= 1e-10,
        detail: format!("max |I^s_i| = {worst_uniform_surplus:e}"),
        counterexample: uniform_counterexample,
    });
    checks.push(Check {
        label: "uniform profiles: deficit incentives non-positive",
        passed: worst_uniform_deficit <= 1e-9,
        detail: format!("max I^d_i = {worst_uniform_deficit:e}"),
        counterexample: None,
    });

    // Weak budget balance on random profiles.
    let mut max_deficit_sum = f64::NEG_INFINITY;
    let mut min_surplus_sum = f64::INFINITY;
    let mut max_per_user_deficit = f64::NEG_INFINITY;
    let mut budget_counterexample = None;
    for _ in 0..samples {
        let q = DemandProfile::new((0..n).map(|_| rng.uniform(0.0, 10.0)).collect()).unwrap();
        let deficit = budget_report(&MechanismSpec::Deficit, &cfg, &q)?;
        let surplus = budget_report(&MechanismSpec::Surplus, &cfg, &q)?;
        if deficit.total_incentive > max_deficit_sum {
            max_deficit_sum = deficit.total_incentive;
            if deficit.total_incentive > 1e-9 {
                budget_counterexample = Some(q.values().to_vec());
            }
        }
        if surplus.total_incentive < min_surplus_sum {
            min_surplus_sum = surplus.total_incentive;
            if surplus.total_incentive < -1e-9 {
                budget_counterexample = Some(q.values().to_vec());
            }
        }
        for i in 0..n {
            max_per_user_deficit = max_per_user_deficit.max(incentive(
                &MechanismSpec::Deficit,
                &cfg,
                &q,
                i,
            )?);
        }
    }
    checks.push(Check {
        label: "weak budget balance: sum I^d <= 0",
        passed: max_deficit_sum <= 1e-9,
        detail: format!("max sum = {max_deficit_sum:e}"),
        counterexample: budget_counterexample.clone(),
    });
    checks.push(Check {
        label: "weak budget balance: sum I^s >= 0",
        passed: min_surplus_sum >= -1e-9,
        detail: format!("min sum = {min_surplus_sum:e}"),
        counterexample: budget_counterexample,
    });
    checks.push(Check {
        label: "per-user deficit incentive never positive",
        passed: max_per_user_deficit <= 1e-9,
        detail: format!("max I^d_i = {max_per_user_deficit:e}"),
        counterexample: None,
    });

    // Individual rationality at the optimum.
    let settings = SolverSettings::default();
    for (mech, label) in [
        (MechanismSpec::Deficit, "individual rationality (deficit)"),
        (MechanismSpec::Surplus, "individual rationality (surplus)"),
    ] {
        let ir = individual_rationality_check(&mech, &cfg, &settings)?;
        let min_w = ir.w_at_optimum.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(Check {
            label,
            passed: ir.passes,
            detail: format!("min W_i(mu) = {min_w}"),
            counterexample: None,
        });
    }

    println!("mechanism property report");
    println!("config: N={n}, samples={samples}, seed={seed}");
    let mut all_passed = true;
    for check in &checks {
        let status = if check.passed { "pass" } else { "FAIL" };
        println!("[{status}] {}: {}", check.label, check.detail);
        if !check.passed {
            all_passed = false;
            if let Some(profile) = &check.counterexample {
                println!("       counterexample profile: {profile:?}");
            }
        }
    }

    let witness = impossibility_demo(&cfg, n as f64)?;
    println!("no budget-balancing h exists; witness at {witness}");

    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    })
}


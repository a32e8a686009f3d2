//! Population-size sweeps: one market template instantiated per N, solved
//! for its equilibria, and written out as `fig1.csv` (demand and efficiency
//! ratios) and `fig3.csv` (surplus with and without incentives).
//!
//! Output is deterministic for a fixed spec. A sweep point whose solver
//! fails keeps its row with empty metric cells and turns the exit code to 3.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use coopmarket::equilibrium::{
    solve_nash, solve_nash_with_incentives, solve_optimal, SolverSettings,
};
use coopmarket::market::MarketConfig;
use coopmarket::mechanism::{incentive, incentivized_surplus, MechanismSpec};
use coopmarket::metrics::{customer_surplus, EfficiencyReport};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDoc {
    n_values: Vec<usize>,
    mechanisms: Vec<String>,
    output_dir: PathBuf,
    valuation: toml::Table,
    cost: toml::Table,
}

#[derive(Debug, Clone, Copy, Default)]
struct MechanismSet {
    none: bool,
    deficit: bool,
    surplus: bool,
}

impl SweepDoc {
    fn mechanism_set(&self) -> anyhow::Result<MechanismSet> {
        let mut set = MechanismSet::default();
        for name in &self.mechanisms {
            match name.as_str() {
                "none" => set.none = true,
                "deficit" => set.deficit = true,
                "surplus" => set.surplus = true,
                other => bail!("unknown mechanism {other:?}; expected none, deficit, surplus"),
            }
        }
        Ok(set)
    }

    fn validate(&self, set: MechanismSet) -> anyhow::Result<()> {
        if self.n_values.is_empty() {
            bail!("n_values must not be empty");
        }
        if self.n_values.contains(&0) {
            bail!("population sizes must be at least 1");
        }
        if set.surplus && self.n_values.iter().any(|&n| n < 2) {
            bail!("the surplus mechanism needs every population size to be at least 2");
        }
        Ok(())
    }

    fn config_for(&self, n: usize) -> anyhow::Result<MarketConfig> {
        let mut table = toml::Table::new();
        table.insert("n_users".into(), toml::Value::Integer(n as i64));
        table.insert("valuation".into(), toml::Value::Table(self.valuation.clone()));
        table.insert("cost".into(), toml::Value::Table(self.cost.clone()));
        let text = toml::to_string(&table).context("cannot re-render config template")?;
        Ok(MarketConfig::from_toml_str(&text)?)
    }
}

/// Optional cell: empty when the producing solver failed.
fn cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub(crate) fn cmd_sweep(spec_path: &Path, gnuplot: bool) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("cannot read {}", spec_path.display()))?;
    let doc: SweepDoc = toml::from_str(&text)
        .map_err(|e| coopmarket::Error::Config(e.to_string()))?;
    let set = doc.mechanism_set()?;
    doc.validate(set)?;

    let settings = SolverSettings::default();
    let mut fig1 = String::from("N,demand_ratio,efficiency_ratio\n");
    let mut fig3 = String::from(
        "N,surplus_no_mech,surplus_deficit,surplus_surplus_mech,sum_incentives_deficit,\
         sum_incentives_surplus\n",
    );
    let mut any_failure = false;

    for &n in &doc.n_values {
        let cfg = doc.config_for(n)?;

        let nash = solve_nash(&cfg, &settings);
        let optimal = solve_optimal(&cfg, &settings);
        let (mut demand_ratio, mut efficiency_ratio) = (None, None);
        if let (Ok(nash), Ok(optimal)) = (&nash, &optimal) {
            match EfficiencyReport::evaluate(&cfg, &nash.profile, &optimal.profile) {
                Ok(report) => {
                    demand_ratio = Some(report.demand_ratio);
                    efficiency_ratio = Some(report.efficiency_ratio);
                }
                Err(err) => {
                    any_failure = true;
                    eprintln!("warning: N={n}: {err}");
                }
            }
        } else {
            any_failure = true;
            for err in [nash.as_ref().err(), optimal.as_ref().err()].into_iter().flatten() {
                eprintln!("warning: N={n}: {err}");
            }
        }
        writeln!(fig1, "{n},{},{}", cell(demand_ratio), cell(efficiency_ratio)).unwrap();

        let mut surplus_no_mech = None;
        if set.none {
            if let Ok(nash) = &nash {
                surplus_no_mech = customer_surplus(&cfg, &nash.profile).ok();
            }
        }
        let mut mech_cells = |mech: MechanismSpec, wanted: bool| -> (Option<f64>, Option<f64>) {
            if !wanted {
                return (None, None);
            }
            match solve_nash_with_incentives(&cfg, &mech, &settings) {
                Ok(eq) => {
                    let total_w = (0..n)
                        .map(|i| incentivized_surplus(&mech, &cfg, &eq.profile, i).unwrap())
                        .sum::<f64>();
                    let total_i = (0..n)
                        .map(|i| incentive(&mech, &cfg, &eq.profile, i).unwrap())
                        .sum::<f64>();
                    (Some(total_w), Some(total_i))
                }
                Err(err) => {
                    any_failure = true;
                    eprintln!("warning: N={n} {mech}: {err}");
                    (None, None)
                }
            }
        };
        let (surplus_deficit, incentives_deficit) = mech_cells(MechanismSpec::Deficit, set.deficit);
        let (surplus_surplus, incentives_surplus) = mech_cells(MechanismSpec::Surplus, set.surplus);

        writeln!(
            fig3,
            "{n},{},{},{},{},{}",
            cell(surplus_no_mech),
            cell(surplus_deficit),
            cell(surplus_surplus),
            cell(incentives_deficit),
            cell(incentives_surplus)
        )
        .unwrap();
    }

    std::fs::create_dir_all(&doc.output_dir)
        .with_context(|| format!("cannot create {}", doc.output_dir.display()))?;
    let fig1_path = doc.output_dir.join("fig1.csv");
    let fig3_path = doc.output_dir.join("fig3.csv");
    std::fs::write(&fig1_path, fig1)
        .with_context(|| format!("cannot write {}", fig1_path.display()))?;
    std::fs::write(&fig3_path, fig3)
        .with_context(|| format!("cannot write {}", fig3_path.display()))?;
    println!("wrote {}", fig1_path.display());
    println!("wrote {}", fig3_path.display());

    if gnuplot {
        let fig1_gp = doc.output_dir.join("fig1.gp");
        std::fs::write(&fig1_gp, FIG1_SCRIPT)?;
        let fig3_gp = doc.output_dir.join("fig3.gp");
        std::fs::write(&fig3_gp, FIG3_SCRIPT)?;
        println!("wrote {}", fig1_gp.display());
        println!("wrote {}", fig3_gp.display());
    }

    Ok(if any_failure {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    })
}

const FIG1_SCRIPT: &str = r#"set datafile separator ","
set key autotitle columnhead
set xlabel "number of users N"
set terminal pngcairo size 900,600
set output "fig1.png"
plot "fig1.csv" using 1:2 with linespoints title "demand ratio", \
     "fig1.csv" using 1:3 with linespoints title "efficiency ratio"
"#;

const FIG3_SCRIPT: &str = r#"set datafile separator ","
set key autotitle columnhead
set xlabel "number of users N"
set ylabel "customer surplus"
set terminal pngcairo size 900,600
set output "fig3.png"
plot "fig3.csv" using 1:2 with linespoints title "no incentives", \
     "fig3.csv" using 1:3 with linespoints title "budget deficit", \
     "fig3.csv" using 1:4 with linespoints title "budget surplus"
"#;

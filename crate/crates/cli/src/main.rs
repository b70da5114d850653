use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ltd_market::io::output::{write_des_csv, write_json};
use ltd_market::io::runs::{converge, mean_and_half_width, simulate, sweep_v, write_converge};
use ltd_market::io::{PriceSeries, RunConfig};
use ltd_market::validation::{des_suite, validate, Check, Fault, ValidationOptions, DES_EVENTS};

#[derive(Parser, Debug)]
#[command(name = "ltd", version, about = "Auction-based fresh status acquisition markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one period's auction at fixed backlog-over-V values and write the
    /// per-iteration trace.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Backlog over V; repeatable. Defaults to the config's `q_over_v`.
        #[arg(long = "q-over-v")]
        q_over_v: Vec<f64>,
    },
    /// Run the horizon for every (V, seed) pair.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate, then compare each V's mean welfare with the S* estimate.
    SweepV {
        #[command(flatten)]
        common: Common,
        /// Factor draws per seed used for S*.
        #[arg(long, default_value_t = 100)]
        sstar_per_seed: usize,
    },
    /// Run every self-check and write `validation_report.json`.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Deliberate defect for a negative control. Only `gradient` exists.
        #[arg(long)]
        inject_fault: Option<Fault>,
        #[arg(long, default_value_t = DES_EVENTS)]
        des_events: u64,
        #[arg(long, default_value_t = 1000)]
        gradient_points: usize,
        #[arg(long, default_value_t = 20)]
        triangle_instances: usize,
    },
    /// Compare the closed-form age with a discrete-event simulation.
    DesCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DES_EVENTS)]
        events: u64,
    },
}

/// Overrides shared by every command. Unset flags keep the config's value.
#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration. Without it a built-in experiment is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the seed list; repeatable.
    #[arg(long)]
    seed: Vec<u64>,
    /// Replaces the V sweep; repeatable.
    #[arg(long = "v")]
    v: Vec<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Horizon length in periods.
    #[arg(long)]
    periods: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `datetime,price` CSV, `synthetic` or `flat`.
    #[arg(long)]
    price_file: Option<String>,
}

struct Loaded {
    config: RunConfig,
    prices: PriceSeries,
    out: PathBuf,
}

impl Common {
    fn load(&self, default: fn() -> RunConfig) -> Result<Loaded> {
        let (mut config, base) = match &self.config {
            Some(path) => (
                RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
                path.parent().map(Path::to_path_buf),
            ),
            None => (default(), None),
        };
        if !self.seed.is_empty() {
            config.seeds = self.seed.clone();
            config.scenario.rng_seed = self.seed[0];
        }
        if !self.v.is_empty() {
            config.v_values = self.v.clone();
        }
        if let Some(e) = self.epsilon {
            config.epsilon = e;
        }
        if let Some(g) = self.gamma {
            config.gamma = g;
        }
        if let Some(p) = self.periods {
            config.scenario.horizon = p;
        }
        let mut base = base;
        if let Some(p) = &self.price_file {
            config.price_file = p.clone();
            base = None;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.validate().context("invalid configuration")?;
        let prices = config
            .load_prices(base.as_deref())
            .with_context(|| format!("loading prices from {}", config.price_file))?;
        let out = config.output_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Loaded { config, prices, out })
    }
}

fn print_checks(checks: &[Check]) -> bool {
    for c in checks {
        println!("{c}");
    }
    checks.iter().all(|c| c.passed)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Converge { common, q_over_v } => {
            let Loaded { config, prices, out } = common.load(RunConfig::convergence_experiment)?;
            let values = if q_over_v.is_empty() { config.q_over_v.clone() } else { q_over_v };
            for q in values {
                let run = converge(&config, &prices, q).with_context(|| format!("auction at Q/V={q}"))?;
                let path = out.join(format!("trace_qv{q}.csv"));
                write_converge(&run, &path, &config)?;
                println!(
                    "Q/V={q}: {} iterations, residual {:.3e}, max|x - social optimum| {:.4}, max|x - age minimizer| {:.4} -> {}",
                    run.outcome.iterations,
                    run.outcome.residual,
                    run.outcome.x.max_abs_diff(&run.social_optimum),
                    run.outcome.x.max_abs_diff(&run.age_minimizing),
                    path.display()
                );
            }
            Ok(true)
        }
        Command::Simulate { common } => {
            let Loaded { config, prices, out } = common.load(RunConfig::default_experiment)?;
            let output = simulate(&config, &prices, &out)?;
            for v in &config.v_values {
                let welfare: Vec<f64> = output
                    .rows
                    .iter()
                    .filter(|r| r.v == *v)
                    .map(|r| r.summary.time_average_welfare)
                    .collect();
                if let Ok((mean, hw)) = mean_and_half_width(&welfare) {
                    println!("V={v}: time-average welfare {mean:.5} +/- {hw:.5} over {} seeds", welfare.len());
                }
            }
            let failed: Vec<_> = output.manifest.cells.iter().filter(|c| !c.ok).collect();
            for c in &failed {
                eprintln!("cell V={} seed={} failed: {}", c.v, c.seed, c.error.as_deref().unwrap_or(""));
            }
            println!("wrote {}", output.summary_path.display());
            Ok(failed.is_empty())
        }
        Command::SweepV { common, sstar_per_seed } => {
            let Loaded { config, prices, out } = common.load(RunConfig::default_experiment)?;
            let output = sweep_v(&config, &prices, &out, sstar_per_seed)?;
            let t = &output.tradeoff;
            println!(
                "S* {:.5} (duality gap {:.2e}, {} scenarios)",
                t.sstar.estimate, t.sstar.duality_gap, t.sstar.scenarios
            );
            for r in &t.rows {
                println!(
                    "V={}: welfare {:.5} +/- {:.5}, gap {:.5}, max age/threshold {:.4}, {} seeds satisfied",
                    r.v, r.mean_welfare, r.welfare_half_width, r.gap, r.max_age_ratio, r.seeds_satisfied
                );
            }
            print_checks(&t.checks());
            println!("wrote {}", output.sweep_path.display());
            Ok(output.simulate.manifest.cells.iter().all(|c| c.ok))
        }
        Command::Validate {
            common,
            inject_fault,
            des_events,
            gradient_points,
            triangle_instances,
        } => {
            let Loaded { config, prices, out } = common.load(RunConfig::default_experiment)?;
            let options = ValidationOptions {
                des_events,
                gradient_points,
                triangle_instances,
                fault: inject_fault,
                ..ValidationOptions::default()
            };
            let report = validate(&config, &prices, &options)?;
            let path = out.join("validation_report.json");
            write_json(&path, &report)?;
            let passed = print_checks(&report.checks);
            println!("wrote {}", path.display());
            Ok(passed)
        }
        Command::DesCheck { common, events } => {
            if common.config.is_some() {
                bail!("des-check takes no config");
            }
            let seed = common.seed.first().copied().unwrap_or(ValidationOptions::default().seed);
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            std::fs::create_dir_all(&out)?;
            let suite = des_suite(events, seed)?;
            for p in &suite.points {
                println!(
                    "r={} rates={:?} utilization {:.3}: formula {:.5}, simulated {:.5}, relative error {:.4}",
                    p.serving_rate, p.input_rates, p.utilization, p.formula, p.simulated, p.relative_error
                );
            }
            let path = out.join("des_check.csv");
            write_des_csv(&path, seed, &suite)?;
            let passed = print_checks(&[suite.check()]);
            println!("wrote {}", path.display());
            Ok(passed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

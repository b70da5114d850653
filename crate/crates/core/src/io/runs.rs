//! The experiments behind the CLI commands, with their file output.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::auction::{run_auction, AuctionOutcome};
use crate::error::{Error, Result};
use crate::horizon::{aggregate_metrics, run_horizon, PeriodRecord, Summary};
use crate::io::config::RunConfig;
use crate::io::output::{
    periods_file_name, write_json, write_periods_csv, write_summary_csv, write_trace_csv, write_tradeoff_csv,
    Manifest, ManifestEntry, SummaryRow, TraceReferences,
};
use crate::io::prices::PriceSeries;
use crate::market::sample_factors;
use crate::matrix::{PairMatrix, PriceMatrix, RateMatrix};
use crate::oracles::centralized_virtual_optimum;
use crate::validation::{pooled_sstar, tradeoff, Tradeoff};

/// One period's auction at a fixed backlog-over-V, with the two reference
/// allocations it is compared against.
#[derive(Debug, Clone)]
pub struct ConvergeRun {
    pub q_over_v: f64,
    pub outcome: AuctionOutcome,
    /// Welfare maximizer with no age penalty.
    pub social_optimum: RateMatrix,
    /// Per-platform age minimizer.
    pub age_minimizing: RateMatrix,
}

pub fn converge(config: &RunConfig, prices: &PriceSeries, q_over_v: f64) -> Result<ConvergeRun> {
    let scenario = &config.scenario;
    scenario.validate()?;
    let (pois, platforms) = (scenario.num_pois, scenario.num_platforms);
    let ages = scenario.age_models()?;
    let factors = sample_factors(scenario, 0, prices);
    let mut params = config.auction_params();
    params.record_trace = true;
    let initial = PriceMatrix(PairMatrix::filled(pois, platforms, config.initial_price));
    let outcome = run_auction(scenario, &ages, &factors, &vec![q_over_v; platforms], &initial, &params)?;
    let social_optimum = centralized_virtual_optimum(&factors, &vec![0.0; platforms], 1.0, scenario)?;
    let mut age_minimizing = PairMatrix::zeros(pois, platforms);
    for (n, age) in ages.iter().enumerate() {
        age_minimizing.set_column(n, &age.minimizing_rates(pois)?);
    }
    Ok(ConvergeRun {
        q_over_v,
        outcome,
        social_optimum,
        age_minimizing: age_minimizing.into(),
    })
}

pub fn write_converge(run: &ConvergeRun, path: &Path, config: &RunConfig) -> Result<()> {
    write_trace_csv(
        path,
        &config.hash()?,
        config.scenario.rng_seed,
        &run.outcome.trace,
        &TraceReferences {
            social_optimum: &run.social_optimum,
            age_minimizing: &run.age_minimizing,
        },
    )
}

/// One `(V, seed)` horizon run.
pub fn simulate_cell(config: &RunConfig, prices: &PriceSeries, v: f64, seed: u64) -> Result<(Vec<PeriodRecord>, Summary)> {
    let scenario = config.scenario_for_seed(seed);
    let records = run_horizon(&scenario, prices, &config.horizon_params(v))?;
    let summary = aggregate_metrics(&records, &scenario.freshness_thresholds)?;
    Ok((records, summary))
}

pub struct SimulateOutput {
    pub manifest: Manifest,
    pub summary_path: PathBuf,
    pub rows: Vec<SummaryRow>,
}

/// Runs every `(V, seed)` cell, writing one periods file per cell, then
/// `summary.csv` and `manifest.json`. A failing cell is recorded in the
/// manifest and the others still run.
pub fn simulate(config: &RunConfig, prices: &PriceSeries, out_dir: &Path) -> Result<SimulateOutput> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let hash = config.hash()?;
    let cells: Vec<(f64, u64)> = config
        .v_values
        .iter()
        .flat_map(|v| config.seeds.iter().map(move |s| (*v, *s)))
        .collect();
    let results: Vec<(ManifestEntry, Option<SummaryRow>)> = cells
        .par_iter()
        .map(|&(v, seed)| {
            let file = periods_file_name(v, seed);
            let outcome = simulate_cell(config, prices, v, seed).and_then(|(records, summary)| {
                write_periods_csv(&out_dir.join(&file), &hash, seed, &records)?;
                Ok(summary)
            });
            match outcome {
                Ok(summary) => (
                    ManifestEntry {
                        v,
                        seed,
                        file,
                        ok: true,
                        error: None,
                    },
                    Some(SummaryRow { v, seed, summary }),
                ),
                Err(e) => (
                    ManifestEntry {
                        v,
                        seed,
                        file,
                        ok: false,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    let mut entries = Vec::with_capacity(results.len());
    let mut rows = Vec::new();
    for (entry, row) in results {
        entries.push(entry);
        rows.extend(row);
    }
    let summary_path = out_dir.join("summary.csv");
    write_summary_csv(&summary_path, &hash, &config.seeds, &rows)?;
    let manifest = Manifest {
        config_hash: hash,
        cells: entries,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(SimulateOutput {
        manifest,
        summary_path,
        rows,
    })
}

pub struct SweepOutput {
    pub simulate: SimulateOutput,
    pub tradeoff: Tradeoff,
    pub sweep_path: PathBuf,
}

/// [`simulate`], then S* from `sstar_per_seed` factor draws per seed and the
/// per-`V` welfare gaps, written to `sweep.csv` and `tradeoff.json`.
pub fn sweep_v(config: &RunConfig, prices: &PriceSeries, out_dir: &Path, sstar_per_seed: usize) -> Result<SweepOutput> {
    let simulate = simulate(config, prices, out_dir)?;
    let sstar = pooled_sstar(config, prices, sstar_per_seed)?;
    let tradeoff = tradeoff(
        simulate.rows.iter().map(|r| (r.v, r.seed, &r.summary)),
        &config.scenario.freshness_thresholds,
        sstar,
    )?;
    let sweep_path = out_dir.join("sweep.csv");
    write_tradeoff_csv(&sweep_path, &config.hash()?, &config.seeds, &tradeoff)?;
    write_json(&out_dir.join("tradeoff.json"), &tradeoff)?;
    Ok(SweepOutput {
        simulate,
        tradeoff,
        sweep_path,
    })
}

/// Mean and 95% normal-approximation half width.
pub fn mean_and_half_width(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("no values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * (var / n).sqrt()))
}

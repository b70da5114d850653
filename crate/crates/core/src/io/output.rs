//! CSV and JSON result files.
//!
//! Every CSV starts with a `# config_hash=<sha256> seed=<seed>` comment row
//! followed by a header row. Floats are written in their shortest
//! round-trip form, so identical runs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::auction::IterationRecord;
use crate::error::Result;
use crate::horizon::{PeriodRecord, Summary};
use crate::matrix::PairMatrix;
use crate::validation::{DesSuite, Tradeoff};

fn open_with_comment(path: &Path, config_hash: &str, seed: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# config_hash={config_hash} seed={seed}")?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn pair_names(prefix: &str, pois: usize, platforms: usize) -> impl Iterator<Item = String> + '_ {
    (0..pois).flat_map(move |i| (0..platforms).map(move |n| format!("{prefix}_{i}_{n}")))
}

fn indexed(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (0..count).map(move |k| format!("{prefix}_{k}"))
}

fn cells(values: &[f64]) -> impl Iterator<Item = String> + '_ {
    values.iter().map(f64::to_string)
}

/// Reference rates repeated on every trace row.
pub struct TraceReferences<'a> {
    pub social_optimum: &'a PairMatrix,
    pub age_minimizing: &'a PairMatrix,
}

/// `trace.csv`: `k`, the `x`, `y` and `lambda` pairs, `residual`, then the
/// reference rates.
pub fn write_trace_csv(
    path: &Path,
    config_hash: &str,
    seed: u64,
    trace: &[IterationRecord],
    refs: &TraceReferences<'_>,
) -> Result<()> {
    let (pois, platforms) = (refs.social_optimum.pois(), refs.social_optimum.platforms());
    let mut w = open_with_comment(path, config_hash, &seed.to_string())?;
    let header: Vec<String> = std::iter::once("k".to_string())
        .chain(pair_names("x", pois, platforms))
        .chain(pair_names("y", pois, platforms))
        .chain(pair_names("lambda", pois, platforms))
        .chain(std::iter::once("residual".to_string()))
        .chain(pair_names("social_opt", pois, platforms))
        .chain(pair_names("age_min", pois, platforms))
        .collect();
    w.write_record(&header)?;
    for rec in trace {
        let row: Vec<String> = std::iter::once(rec.k.to_string())
            .chain(cells(rec.x.as_slice()))
            .chain(cells(rec.y.as_slice()))
            .chain(cells(rec.prices.as_slice()))
            .chain(std::iter::once(rec.residual.to_string()))
            .chain(cells(refs.social_optimum.as_slice()))
            .chain(cells(refs.age_minimizing.as_slice()))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-period rows: `t, welfare, age_n.., platform_payoff_n..,
/// poi_payoff_i.., budget, iterations`.
pub fn write_periods_csv(path: &Path, config_hash: &str, seed: u64, records: &[PeriodRecord]) -> Result<()> {
    let mut w = open_with_comment(path, config_hash, &seed.to_string())?;
    let (platforms, pois) = records
        .first()
        .map_or((0, 0), |r| (r.ages.len(), r.poi_payoffs.len()));
    let header: Vec<String> = ["t", "welfare"]
        .into_iter()
        .map(String::from)
        .chain(indexed("age", platforms))
        .chain(indexed("platform_payoff", platforms))
        .chain(indexed("poi_payoff", pois))
        .chain(["budget", "iterations"].into_iter().map(String::from))
        .collect();
    w.write_record(&header)?;
    for r in records {
        let row: Vec<String> = [r.t.to_string(), r.welfare.to_string()]
            .into_iter()
            .chain(cells(&r.ages))
            .chain(cells(&r.platform_payoffs))
            .chain(cells(&r.poi_payoffs))
            .chain([r.broker_budget.to_string(), r.iterations.to_string()])
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One finished horizon run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub v: f64,
    pub seed: u64,
    pub summary: Summary,
}

pub fn write_summary_csv(path: &Path, config_hash: &str, seeds: &[u64], rows: &[SummaryRow]) -> Result<()> {
    let seed_list = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    let mut w = open_with_comment(path, config_hash, &seed_list)?;
    let (platforms, pois) = rows.first().map_or((0, 0), |r| {
        (r.summary.final_average_ages.len(), r.summary.cumulative_poi_payoffs.len())
    });
    let header: Vec<String> = ["V", "seed", "periods", "time_average_welfare"]
        .into_iter()
        .map(String::from)
        .chain(indexed("final_average_age", platforms))
        .chain(indexed("first_satisfied", platforms))
        .chain(std::iter::once("first_all_satisfied".to_string()))
        .chain(indexed("cumulative_platform_payoff", platforms))
        .chain(indexed("cumulative_poi_payoff", pois))
        .chain(["max_abs_budget", "mean_iterations", "max_iterations"].into_iter().map(String::from))
        .collect();
    w.write_record(&header)?;
    let opt = |v: Option<usize>| v.map_or_else(String::new, |t| t.to_string());
    for r in rows {
        let s = &r.summary;
        let row: Vec<String> = [
            r.v.to_string(),
            r.seed.to_string(),
            s.periods.to_string(),
            s.time_average_welfare.to_string(),
        ]
        .into_iter()
        .chain(cells(&s.final_average_ages))
        .chain(s.first_satisfied.iter().map(|v| opt(*v)))
        .chain(std::iter::once(opt(s.first_all_satisfied)))
        .chain(cells(&s.cumulative_platform_payoffs))
        .chain(cells(&s.cumulative_poi_payoffs))
        .chain([
            s.max_abs_budget.to_string(),
            s.mean_iterations.to_string(),
            s.max_iterations.to_string(),
        ])
        .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub v: f64,
    pub seed: u64,
    pub file: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub cells: Vec<ManifestEntry>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

/// `sweep.csv`: one row per `V` with the welfare gap to S*.
pub fn write_tradeoff_csv(path: &Path, config_hash: &str, seeds: &[u64], tradeoff: &Tradeoff) -> Result<()> {
    let seed_list = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    let mut w = open_with_comment(path, config_hash, &seed_list)?;
    w.write_record([
        "V",
        "mean_welfare",
        "welfare_half_width",
        "sstar",
        "sstar_duality_gap",
        "gap",
        "max_age_ratio",
        "seeds_satisfied",
    ])?;
    for r in &tradeoff.rows {
        w.write_record([
            r.v.to_string(),
            r.mean_welfare.to_string(),
            r.welfare_half_width.to_string(),
            tradeoff.sstar.estimate.to_string(),
            tradeoff.sstar.duality_gap.to_string(),
            r.gap.to_string(),
            r.max_age_ratio.to_string(),
            r.seeds_satisfied.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `des_check.csv`: formula against simulation, one row per point. Input
/// rates are `;`-joined.
pub fn write_des_csv(path: &Path, seed: u64, suite: &DesSuite) -> Result<()> {
    let mut w = open_with_comment(path, "none", &seed.to_string())?;
    w.write_record(["serving_rate", "input_rates", "utilization", "events", "formula", "simulated", "relative_error"])?;
    for p in &suite.points {
        let rates = p.input_rates.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        w.write_record([
            p.serving_rate.to_string(),
            rates,
            p.utilization.to_string(),
            suite.events.to_string(),
            p.formula.to_string(),
            p.simulated.to_string(),
            p.relative_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run periods file name.
pub fn periods_file_name(v: f64, seed: u64) -> String {
    format!("sim_V{v}_s{seed}.csv")
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ltd_market::io::runs::{converge, simulate, write_converge};
use ltd_market::io::RunConfig;
use ltd_market::validation::{
    audit_sweep, budget_check, des_suite, gradient_suite, participation_check, pooled_sstar, tradeoff,
    triangle_suite, truthfulness_check, Check, DES_EVENTS, GRADIENT_POINTS, TRIANGLE_INSTANCES,
};

const SEED: u64 = 2020;
const CONVERGE_MAX_ITERS: usize = 100;
const CONVERGE_GAMMA: f64 = 1e-4;
const CONVERGE_RATE_TOL: f64 = 2e-2;
const MIN_AUDITED_PERIODS: usize = 60_000;
const DUAL_FEASIBILITY_TOL: f64 = 1e-3;
const SSTAR_DRAWS_PER_SEED: usize = 100;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn from_checks(checks: &[Check]) -> Self {
        Self {
            passed: checks.iter().all(|c| c.passed),
            detail: checks.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n    "),
        }
    }
}

type Criterion<'a> = Box<dyn FnOnce() -> Result<Outcome, String> + 'a>;

fn des_agreement() -> Result<Outcome, String> {
    let suite = des_suite(DES_EVENTS, SEED).map_err(|e| e.to_string())?;
    let mut detail = vec![suite.check().to_string()];
    for p in &suite.points {
        detail.push(format!(
            "utilization {:.3}, {} sources: formula {:.5}, simulated {:.5}, relative error {:.4}",
            p.utilization,
            p.input_rates.len(),
            p.formula,
            p.simulated,
            p.relative_error
        ));
    }
    Ok(Outcome {
        passed: suite.check().passed,
        detail: detail.join("\n    "),
    })
}

fn gradients() -> Result<Outcome, String> {
    let suite = gradient_suite(GRADIENT_POINTS, SEED, None).map_err(|e| e.to_string())?;
    Ok(Outcome::from_checks(&suite.checks()))
}

fn oracle_triangle() -> Result<Outcome, String> {
    let suite = triangle_suite(TRIANGLE_INSTANCES, SEED).map_err(|e| e.to_string())?;
    Ok(Outcome::from_checks(&[suite.check()]))
}

fn convergence() -> Result<Outcome, String> {
    let mut config = RunConfig::convergence_experiment();
    config.gamma = CONVERGE_GAMMA;
    let prices = config.load_prices(None).map_err(|e| e.to_string())?;
    let mut checks = Vec::new();
    for q in [0.1, 1.0, 100.0] {
        let run = converge(&config, &prices, q).map_err(|e| format!("Q/V={q}: {e}"))?;
        checks.push(Check::at_most(
            &format!("iterations at Q/V={q}"),
            run.outcome.iterations as f64,
            CONVERGE_MAX_ITERS as f64,
            format!("final residual {:.3e}", run.outcome.residual),
        ));
        checks.push(Check::at_most(
            &format!("residual at Q/V={q}"),
            run.outcome.residual,
            CONVERGE_GAMMA,
            "",
        ));
        if q == 0.1 {
            checks.push(Check::at_most(
                "distance to social optimum at Q/V=0.1",
                run.outcome.x.max_abs_diff(&run.social_optimum),
                CONVERGE_RATE_TOL,
                format!("x {:?}", run.outcome.x.as_slice()),
            ));
        }
        if q == 100.0 {
            checks.push(Check::at_most(
                "distance to age minimizer at Q/V=100",
                run.outcome.x.max_abs_diff(&run.age_minimizing),
                CONVERGE_RATE_TOL,
                format!("x {:?}", run.outcome.x.as_slice()),
            ));
        }
    }
    Ok(Outcome::from_checks(&checks))
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output directory exists")
        .map(|e| {
            let path = e.expect("directory entry").path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read(&path).expect("readable output"))
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Result<Outcome, String> {
    let mut config = RunConfig::default_experiment();
    config.seeds = vec![4, 9];
    config.v_values = vec![0.5, 100.0];
    config.scenario.horizon = 150;
    let prices = config.load_prices(None).map_err(|e| e.to_string())?;
    let converge_config = RunConfig::convergence_experiment();
    let converge_prices = converge_config.load_prices(None).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        simulate(&config, &prices, dir.path()).map_err(|e| e.to_string())?;
        let run = converge(&converge_config, &converge_prices, 1.0).map_err(|e| e.to_string())?;
        write_converge(&run, &dir.path().join("trace.csv"), &converge_config).map_err(|e| e.to_string())?;
        outputs.push(read_dir_bytes(dir.path()));
    }
    let differing: Vec<&str> = outputs[0]
        .iter()
        .zip(&outputs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let same_listing = outputs[0].len() == outputs[1].len();
    Ok(Outcome {
        passed: same_listing && differing.is_empty(),
        detail: format!("{} files compared, differing: {differing:?}", outputs[0].len()),
    })
}

/// Criteria 5 to 8 share one audited V-sweep.
struct Sweep {
    cells: Vec<ltd_market::validation::CellAudit>,
    config: RunConfig,
    prices: ltd_market::io::PriceSeries,
}

fn sweep() -> Result<Sweep, String> {
    let config = RunConfig::default_experiment();
    let prices = config.load_prices(None).map_err(|e| e.to_string())?;
    let cells = audit_sweep(&config, &prices).map_err(|e| e.to_string())?;
    Ok(Sweep { cells, config, prices })
}

fn budget(sweep: &Sweep) -> Result<Outcome, String> {
    let periods: usize = sweep.cells.iter().map(|c| c.periods).sum();
    let count = Check::at_most(
        "audited periods (negated)",
        -(periods as f64),
        -(MIN_AUDITED_PERIODS as f64),
        format!("{periods} periods"),
    );
    Ok(Outcome::from_checks(&[budget_check(&sweep.cells), count]))
}

fn tradeoff_criterion(sweep: &Sweep) -> Result<Outcome, String> {
    let sstar = pooled_sstar(&sweep.config, &sweep.prices, SSTAR_DRAWS_PER_SEED).map_err(|e| e.to_string())?;
    let thresholds = &sweep.config.scenario.freshness_thresholds;
    let feasibility = sstar
        .platforms
        .iter()
        .zip(thresholds)
        .map(|(p, t)| p.average_age - t)
        .fold(f64::NEG_INFINITY, f64::max);
    let t = tradeoff(
        sweep.cells.iter().map(|c| (c.v, c.seed, &c.summary)),
        thresholds,
        sstar,
    )
    .map_err(|e| e.to_string())?;
    let mut checks = t.checks();
    checks.push(Check::at_most(
        "sstar_dual_feasibility",
        feasibility,
        DUAL_FEASIBILITY_TOL,
        format!(
            "{} scenarios, duality gap {:.3e}",
            t.sstar.scenarios, t.sstar.duality_gap
        ),
    ));
    let mut outcome = Outcome::from_checks(&checks);
    for r in &t.rows {
        outcome.detail.push_str(&format!(
            "\n    V={}: welfare {:.5} +/- {:.5}, gap {:.5}, max age/threshold {:.4}",
            r.v, r.mean_welfare, r.welfare_half_width, r.gap, r.max_age_ratio
        ));
    }
    Ok(outcome)
}

fn report(number: usize, name: &str, criterion: impl FnOnce() -> Result<Outcome, String>) -> bool {
    let start = Instant::now();
    let result = criterion();
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(o) => (o.passed, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "criterion {number} {}: {name} ({:.1?})\n    {detail}",
        if passed { "PASS" } else { "FAIL" },
        elapsed
    );
    passed
}

fn main() -> ExitCode {
    let mut passed = Vec::new();
    let first: Vec<(usize, &str, Criterion)> = vec![
        (1, "age formula against discrete-event simulation", Box::new(des_agreement)),
        (2, "analytic derivatives against finite differences", Box::new(gradients)),
        (3, "grid, centralized and auction allocations agree", Box::new(oracle_triangle)),
        (4, "single-period auction convergence", Box::new(convergence)),
    ];
    for (n, name, c) in first {
        passed.push((n, report(n, name, c)));
    }

    let start = Instant::now();
    let shared = sweep();
    println!("audited V-sweep in {:.1?}", start.elapsed());
    let with = |f: fn(&Sweep) -> Result<Outcome, String>| {
        let shared = &shared;
        move || shared.as_ref().map_err(Clone::clone).and_then(f)
    };
    passed.push((5, report(5, "broker budget balance", with(budget))));
    passed.push((
        6,
        report(6, "voluntary PoI participation", with(|s| Ok(Outcome::from_checks(&[participation_check(&s.cells)])))),
    ));
    passed.push((
        7,
        report(7, "truthful bids at converged auctions", with(|s| Ok(Outcome::from_checks(&[truthfulness_check(&s.cells)])))),
    ));
    passed.push((8, report(8, "welfare and freshness trade-off in V", with(tradeoff_criterion))));
    passed.push((9, report(9, "byte-identical repeated runs", determinism)));

    let failed: Vec<usize> = passed.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", passed.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}

use std::path::Path;
use std::process::{Command, Output};

use ltd_market::io::RunConfig;
use serde_json::Value;

fn ltd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn converge_writes_one_trace_per_backlog() {
    let dir = tempfile::tempdir().unwrap();
    let out = ltd(&["converge", "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    for q in ["0.1", "1", "100"] {
        assert!(dir.path().join(format!("trace_qv{q}.csv")).exists());
    }
    assert!(text(&out.stdout).contains("Q/V=100:"));
}

#[test]
fn converge_from_a_config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/converge.toml");
    let out = ltd(&[
        "converge",
        "--config",
        path(&config),
        "--q-over-v",
        "0.1",
        "--gamma",
        "10",
        "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("1 iterations"));
}

fn write_config(dir: &Path, edit: impl FnOnce(String) -> String) -> std::path::PathBuf {
    let file = dir.join("run.toml");
    std::fs::write(&file, edit(RunConfig::default_experiment().to_toml().unwrap())).unwrap();
    file
}

#[test]
fn utilization_cap_violation_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |t| t.replace("rho_cap = 0.95", "rho_cap = 1.5"));
    let out_dir = dir.path().join("out");
    let out = ltd(&["simulate", "--config", path(&config), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("rho_cap"));
    assert!(!out_dir.exists());
}

#[test]
fn empty_seed_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |t| {
        t.lines()
            .map(|l| if l.starts_with("seeds") { "seeds = []" } else { l })
            .collect::<Vec<_>>()
            .join("\n")
    });
    let out = ltd(&["simulate", "--config", path(&config)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("seeds"));
}

#[test]
fn simulate_and_sweep_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--periods", "30", "--seed", "1", "--seed", "2", "--v", "0.5", "--v", "100"];
    let mut args = vec!["sweep-v", "--out", path(dir.path()), "--sstar-per-seed", "10"];
    args.extend(common);
    let out = ltd(&args);
    assert!(out.status.success(), "{}", text(&out.stderr));
    for f in ["sim_V0.5_s1.csv", "sim_V100_s2.csv", "summary.csv", "manifest.json", "sweep.csv", "tradeoff.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 2 + 2);
}

fn validate(dir: &Path, extra: &[&str]) -> (Output, Value) {
    let mut args = vec![
        "validate",
        "--out",
        path(dir),
        "--periods",
        "20",
        "--seed",
        "1",
        "--v",
        "1",
        "--des-events",
        "1000000",
        "--gradient-points",
        "200",
        "--triangle-instances",
        "6",
    ];
    args.extend(extra);
    let out = ltd(&args);
    let report = std::fs::read_to_string(dir.join("validation_report.json")).expect("report written");
    (out, serde_json::from_str(&report).unwrap())
}

fn check<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no check named {name}"))
}

#[test]
fn validate_reports_every_suite() {
    let dir = tempfile::tempdir().unwrap();
    let (out, report) = validate(dir.path(), &[]);
    let stdout = text(&out.stdout);
    for name in [
        "oracle_triangle",
        "age_gradient",
        "utility_derivative",
        "cost_derivative",
        "des_agreement",
        "budget_balance",
        "voluntary_participation",
        "truthfulness",
    ] {
        assert!(stdout.contains(name), "{name} missing from output");
        let c = check(&report, name);
        if name != "des_agreement" {
            assert_eq!(c["passed"], true, "{c}");
        }
    }
    let des_passed = check(&report, "des_agreement")["passed"] == true;
    assert_eq!(out.status.success(), des_passed);
}

#[test]
fn injected_gradient_fault_is_named_in_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let (out, report) = validate(dir.path(), &["--inject-fault", "gradient"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(check(&report, "age_gradient")["passed"], false);
    assert_eq!(check(&report, "utility_derivative")["passed"], true);
    assert!(text(&out.stdout).contains("FAIL age_gradient"));
}

#[test]
fn unknown_fault_is_a_usage_error() {
    let out = ltd(&["validate", "--inject-fault", "budget"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("gradient"));
}

#[test]
fn des_check_writes_a_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = ltd(&["des-check", "--events", "1000000", "--out", path(dir.path())]);
    assert!(matches!(out.status.code(), Some(0 | 1)), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("des_check.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 10);
    assert!(text(&out.stdout).contains("des_agreement"));
}

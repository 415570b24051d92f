use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn afpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afpo"))
        .args(args)
        .env_remove("AFPO_OUTPUT_DIR")
        .output()
        .expect("spawn afpo")
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let o = afpo(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_succeeds_and_documents_flags() {
    let o = afpo(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["simulate", "solve", "analytic", "sensitivity", "compare", "transfers", "run"] {
        assert!(stdout(&o).contains(sub), "{sub} missing from help");
    }
    let o = afpo(&["transfers", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    for flag in ["--config", "--scenario", "--event", "--mechanism", "--threads"] {
        assert!(stdout(&o).contains(flag), "{flag} missing from transfers help");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(afpo(&["analytic", "--bogus"]).status.code(), Some(1));
    assert_eq!(afpo(&["analytic", "--w1", "4.5"]).status.code(), Some(1));
    assert_eq!(afpo(&["sensitivity", "--vary", "theta", "--min", "1", "--max", "2", "--steps", "3"]).status.code(), Some(1));
    assert_eq!(afpo(&["transfers", "--config", "x.json"]).status.code(), Some(1));
}

#[test]
fn analytic_prints_the_case_two_solution() {
    let o = afpo(&["analytic", "--w1", "4.5", "--w2", "10", "--gamma1", "1", "--gamma2", "2", "--mu2", "4", "--p0", "0.2"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("case=2"), "{out}");
    assert!(out.contains("zeta=-0.250000"), "{out}");
    assert!(out.contains("alpha1=0.562177"), "{out}");
}

#[test]
fn analytic_rejects_infeasible_parameters() {
    let o = afpo(&["analytic", "--w1", "4.5", "--w2", "10", "--gamma1", "1", "--gamma2", "2", "--mu2", "4", "--p0", "0.2", "--mu1", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn gamma_sensitivity_has_two_cases() {
    let o = afpo(&["sensitivity", "--vary", "gamma", "--min", "0.1", "--max", "10", "--steps", "100", "--p0", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().nth(1) == Some("ratio,case,alpha1,alpha2,zeta"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 100);
    let mut cases: Vec<&str> = rows.iter().map(|r| r[1].as_str()).filter(|c| !c.is_empty()).collect();
    cases.dedup();
    assert_eq!(cases, ["2", "1"]);
}

#[test]
fn run_compare_and_transfers_on_a_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let cfg = fixture("run_2.json");
    let o = afpo(&["--threads", "2", "run", "--config", &cfg, "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let total: u64 = manifest["class_counts"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 4000);
    assert_eq!(manifest["seed"], 11);

    let o = afpo(&["compare", "--config", &cfg, "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    let compare = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(compare.lines().next().unwrap().contains("loss_cache_hit=true"));
    assert_eq!(
        compare.lines().nth(1),
        Some("mechanism,class,region,mean_outlay,mean_disutility,n_scenarios")
    );
    // Four mechanisms, three classes, two regions.
    assert_eq!(csv_rows(&compare).len(), 24);

    let o = afpo(&["transfers", "--config", &cfg, "--out", &out, "--scenario", "0", "--mechanism", "pure_risk_sharing"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    let net: f64 = rows.iter().map(|r| r[3].parse::<f64>().unwrap()).sum();
    assert!(net.abs() < 1e-9);

    let o = afpo(&["transfers", "--config", &cfg, "--out", &out, "--scenario", "0", "--mechanism", "baseline"]);
    assert_eq!(o.status.code(), Some(2));
    let o = afpo(&["transfers", "--config", &cfg, "--out", &out, "--scenario", "999999"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn coastal_event_transfers_have_the_expected_signs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let o = afpo(&[
        "transfers",
        "--config",
        &fixture("run_50.json"),
        "--event",
        &fixture("coastal_event.csv"),
        "--out",
        &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().nth(1), Some("region,epsilon,tax,net"));
    let rows: Vec<(f64, f64, f64)> = csv_rows(&text)
        .iter()
        .map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()))
        .collect();
    assert_eq!(rows.len(), 50);
    let total: f64 = rows.iter().map(|r| r.0).sum();
    let net: f64 = rows.iter().map(|r| r.2).sum();
    assert!(net.abs() <= 1e-9 * total);
    for (eps, tax, net) in rows {
        if eps == 0.0 {
            assert!(net > 0.0, "unaffected region receives");
        } else {
            // Affected regions receive on balance but still fund part of their own claim.
            assert!(net < 0.0 && tax > 0.0, "eps {eps} tax {tax}");
        }
    }
}

#[test]
fn simulate_then_solve_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let o = Command::new(env!("CARGO_BIN_EXE_afpo"))
        .args(["simulate", "--config", &fixture("run_3.json")])
        .env("AFPO_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let losses = dir.path().join("losses.csv");
    let head = std::fs::read_to_string(&losses).unwrap();
    assert!(head.starts_with("# afpo=") && head.lines().next().unwrap().contains("seed=13"));

    let fit = dir.path().join("fit");
    let fit_s = fit.to_string_lossy().into_owned();
    let o = afpo(&[
        "solve",
        "--samples",
        &losses.to_string_lossy(),
        "--regions",
        &fixture("regions_3.csv"),
        "--config",
        &fixture("solve.json"),
        "--grid-points",
        "64",
        "--out",
        &fit_s,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("stop=Fairness"));
    let alpha = std::fs::read_to_string(fit.join("alpha.csv")).unwrap();
    let sum: f64 = csv_rows(&alpha).iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-12);
    let rule = std::fs::read_to_string(fit.join("rule.csv")).unwrap();
    assert_eq!(rule.lines().nth(1), Some("s,T_R001,T_R002,T_R003,lambda"));
    assert_eq!(csv_rows(&rule).len(), 64);
    assert!(fit.join("trace.csv").exists());
}

#[test]
fn solve_reports_capacity_breaches() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.csv");
    std::fs::write(&samples, "scenario,R001,R002\n0,1,1\n1,20,30\n").unwrap();
    let regions = dir.path().join("regions.csv");
    std::fs::write(&regions, "id,name,wealth,cx,cy\nR001,A,10,0,0\nR002,B,10,1,1\n").unwrap();
    let cfg = dir.path().join("solve.json");
    std::fs::write(&cfg, "{}").unwrap();
    let o = afpo(&[
        "solve",
        "--samples",
        p(&samples),
        "--regions",
        p(&regions),
        "--config",
        p(&cfg),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pool cannot absorb worst loss"));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

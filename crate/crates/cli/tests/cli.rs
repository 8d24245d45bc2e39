use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
seed = 2
scenario.n_patients = 120
scenario.require_confounding = false
matching.replicates = 2
matching.n_boot = 20
sensitivity.n_boot = 10
sensitivity.psi_grid = [-0.5, 0.0, 0.5]
sensitivity.rho1_grid = [0.2, 0.25]
sensitivity.rho2_grid = [0.75]
baselines.replicates = 3
";

fn eacause(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eacause"))
        .args(args)
        .env("EACAUSE_LOG", "error")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stage(name: &str, config: &str, out: &Path, extra: &[&str]) -> Output {
    let out = out.display().to_string();
    let mut args = vec![name, "--config", config, "--out", &out];
    args.extend_from_slice(extra);
    eacause(&args)
}

/// Every file under `dir`, relative path → bytes.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const STAGES: [&str; 8] = [
    "simulate",
    "fit-pd",
    "burden",
    "match",
    "estimate",
    "sensitivity",
    "baselines",
    "report",
];

#[test]
fn simulate_then_estimate_writes_eight_arm_rows_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = tmp.path().join("run");
    assert!(stage("simulate", &cfg, &run, &[]).status.success());
    let o = stage("estimate", &cfg, &run, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let apo = std::fs::read_to_string(run.join("estimate/apo.csv")).unwrap();
    let mut lines = apo.lines();
    assert_eq!(lines.next(), Some("arm_burden,arm_treated,estimate,ci_low,ci_high,n"));
    assert_eq!(lines.count(), 8);
    let manifests = std::fs::read_dir(run.join("estimate"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() == "manifest.json")
        .count();
    assert_eq!(manifests, 1);
}

#[test]
fn every_stage_is_deterministic_across_runs_and_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let dirs = [("a", "1"), ("b", "1"), ("c", "4")];
    for (name, workers) in dirs {
        let run = tmp.path().join(name);
        for s in STAGES {
            let o = stage(s, &cfg, &run, &["--workers", workers]);
            assert!(o.status.success(), "{s}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    let a = snapshot(&tmp.path().join("a"));
    assert!(a.iter().any(|(p, _)| p.ends_with("plot_surface.csv")));
    assert_eq!(a, snapshot(&tmp.path().join("b")));
    assert_eq!(a, snapshot(&tmp.path().join("c")));
}

#[test]
fn reports_for_different_seeds_share_a_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    for (name, seed) in [("s1", "11"), ("s2", "12")] {
        let run = tmp.path().join(name);
        for s in STAGES {
            assert!(stage(s, &cfg, &run, &["--seed", seed]).status.success(), "{s}");
        }
    }
    for file in ["plot_apo.csv", "plot_psi.csv", "plot_surface.csv", "weight_ranking.csv"] {
        let read = |n: &str| std::fs::read_to_string(tmp.path().join(n).join("report").join(file)).unwrap();
        let (x, y) = (read("s1"), read("s2"));
        assert_eq!(x.lines().next(), y.lines().next(), "{file} header");
        assert_eq!(x.lines().count(), y.lines().count(), "{file} rows");
    }
    let md = |n: &str| std::fs::read_to_string(tmp.path().join(n).join("report/report.md")).unwrap();
    assert!(md("s1").contains("## Matching weight ranking"));
    let headings = |s: String| s.lines().filter(|l| l.starts_with('#')).map(str::to_string).collect::<Vec<_>>();
    assert_eq!(headings(md("s1")), headings(md("s2")));
}

#[test]
fn report_on_empty_run_dir_exits_1_without_files() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("empty");
    std::fs::create_dir(&run).unwrap();
    let o = eacause(&["report", "--out", &run.display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(std::fs::read_dir(&run).unwrap().count(), 0);
}

#[test]
fn missing_cohort_exits_1_naming_the_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = eacause(&["fit-pd", "--out", &tmp.path().display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cohort.csv") && err.contains("doses.csv") && err.contains("transition.txt"), "{err}");
}

#[test]
fn invalid_config_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "matching.k_per_arm = 0\n");
    let o = stage("simulate", &cfg, &tmp.path().join("run"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("k_per_arm"));
    let cfg = write_config(tmp.path(), "no_such_section.x = 1\n");
    assert_eq!(stage("simulate", &cfg, &tmp.path().join("run"), &[]).status.code(), Some(1));
}

#[test]
fn unknown_subcommand_exits_1() {
    assert_eq!(eacause(&["frobnicate"]).status.code(), Some(1));
    assert!(eacause(&["--help"]).status.success());
}

#[test]
fn runtime_failure_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = tmp.path().join("run");
    assert!(stage("simulate", &cfg, &run, &[]).status.success());
    // a directory where a file is expected is an i/o failure, not bad input
    let out = run.join("burden");
    std::fs::create_dir_all(out.join("burden.csv")).unwrap();
    std::fs::write(out.join("manifest.json"), "{}").unwrap();
    let o = stage("match", &cfg, &run, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

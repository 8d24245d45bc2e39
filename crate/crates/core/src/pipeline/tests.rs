use super::*;

#[test]
fn canonical_text_round_trips() {
    let cfg = PipelineConfig::default();
    let text = cfg.canonical().unwrap();
    println!("{text}");
    let back = parse_config(&text, Path::new("x.toml")).unwrap();
    assert_eq!(back.config, cfg);
}

fn shipped(name: &str) -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config").join(name);
    load_config(&path).unwrap().config
}

#[test]
fn shipped_default_config_equals_built_in_defaults() {
    assert_eq!(shipped("default.toml"), PipelineConfig::default());
}

#[test]
fn shipped_calibrated_config_differs_only_in_scenario() {
    let cfg = shipped("calibrated.toml");
    assert_eq!(cfg.scenario, crate::simulator::ScenarioConfig::calibrated());
    assert_eq!(
        PipelineConfig {
            scenario: PipelineConfig::default().scenario,
            ..cfg
        },
        PipelineConfig::default()
    );
}

#[test]
fn unknown_keys_are_rejected_with_a_line_number() {
    let err = parse_config("seed = 1\nmatching.k_per_arms = 3\n", Path::new("c.toml")).unwrap_err();
    match err {
        Error::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn validation_lists_every_bad_field() {
    let mut cfg = PipelineConfig::default();
    cfg.matching.k_per_arm = 0;
    cfg.baselines.replicates = 0;
    cfg.analysis.contrasts = vec![[9, 0]];
    match cfg.validate() {
        Err(Error::Config(v)) => assert_eq!(v.len(), 3, "{v:?}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn explicit_sections_are_tracked() {
    let c = parse_config("seed = 4\n[matching]\nk_per_arm = 3\n", Path::new("c.toml")).unwrap();
    assert_eq!(c.explicit, vec!["seed", "matching"]);
    assert!(c.defaulted().contains(&"scenario".to_string()));
    assert!(!c.defaulted().contains(&"matching".to_string()));
}

#[test]
fn hash_changes_with_any_field() {
    let a = PipelineConfig::default();
    let mut b = a.clone();
    b.sensitivity.psi_grid.push(2.0);
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    assert_eq!(a.hash().unwrap(), PipelineConfig::default().hash().unwrap());
    assert_eq!(a.hash().unwrap().len(), 64);
}

#[test]
fn stage_names_parse_back() {
    for s in Stage::ALL {
        assert_eq!(Stage::parse(s.name()), Some(s));
    }
    assert_eq!(Stage::parse("fit_pd"), None);
}

#[test]
fn pd_table_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pd.csv");
    let mut pd = BTreeMap::new();
    let mut p = PdParams::new();
    p.insert(
        "propofol".to_string(),
        crate::pkpd::DrugResponse {
            hill_n: 1.0 / 3.0,
            ed50: 0.1 + 0.2,
            status: crate::pkpd::FitStatus::Fitted,
        },
    );
    pd.insert("A".to_string(), p);
    write_pd_csv(&path, &pd).unwrap();
    assert_eq!(read_pd_csv(&path, &crate::pkpd::DrugTable::default()).unwrap(), pd);
}

#[test]
fn burden_table_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("burden.csv");
    let mut rows = BTreeMap::new();
    rows.insert(
        "A".to_string(),
        BurdenRow {
            e_max: 0.7,
            e_mean: 1.0 / 3.0,
            e_median: None,
            treated: true,
            artifact_excluded: false,
        },
    );
    rows.insert(
        "B".to_string(),
        BurdenRow {
            e_max: 0.1,
            e_mean: 0.05,
            e_median: Some(0.04),
            treated: false,
            artifact_excluded: true,
        },
    );
    let b = BinScheme::e_max_default();
    write_burden_csv(&path, &rows, &b, &BinScheme::e_mean_default()).unwrap();
    assert_eq!(read_burden_csv(&path).unwrap(), rows);
}

fn small_config() -> LoadedConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = 5;
    cfg.scenario.n_patients = 120;
    cfg.scenario.require_confounding = false;
    cfg.matching.replicates = 2;
    cfg.matching.n_boot = 20;
    cfg.sensitivity.n_boot = 10;
    cfg.sensitivity.psi_grid = vec![0.0, 0.5];
    cfg.sensitivity.rho1_grid = vec![0.25];
    cfg.sensitivity.rho2_grid = vec![0.75];
    cfg.baselines.replicates = 3;
    LoadedConfig {
        config: cfg,
        explicit: vec![],
    }
}

#[test]
fn report_on_empty_run_dir_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        config: small_config(),
        seed: None,
        out: dir.path().to_path_buf(),
        input: None,
    };
    let err = run_stage(Stage::Report, &opts).unwrap_err();
    assert!(matches!(err, Error::MissingInputs(_)));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn stage_without_cohort_names_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        config: small_config(),
        seed: None,
        out: dir.path().to_path_buf(),
        input: None,
    };
    match run_stage(Stage::FitPd, &opts).unwrap_err() {
        Error::MissingInputs(v) => {
            assert_eq!(v.len(), 3);
            assert!(v[0].ends_with("simulate/cohort.csv"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn estimate_recomputes_missing_upstream_stages_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let opts = |d: &Path| RunOptions {
        config: small_config(),
        seed: None,
        out: d.to_path_buf(),
        input: None,
    };
    for s in [Stage::Simulate, Stage::FitPd, Stage::Burden, Stage::Match, Stage::Estimate] {
        run_stage(s, &opts(a.path())).unwrap();
    }
    run_stage(Stage::Simulate, &opts(b.path())).unwrap();
    let out = run_stage(Stage::Estimate, &opts(b.path())).unwrap();
    let read = |d: &Path| std::fs::read(d.join("estimate/apo.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(out.manifest.inputs.len(), 1);
    let apo = std::fs::read_to_string(b.path().join("estimate/apo.csv")).unwrap();
    assert_eq!(apo.lines().count(), 9);
    let m = RunManifest::read(&b.path().join("estimate").join(MANIFEST)).unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(m.outputs, vec!["apo.csv", "contrasts.csv"]);
}

use super::*;

fn tiny(dir: &Path) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "schema_version": 1,
            "corpus": {{"synth": {{"size": 30, "seed": 3}}}},
            "patterns": ["pin"],
            "n": [2],
            "repetitions": [10],
            "trials": 2,
            "model": {{"embedding_dim": 4, "hidden_dim": 3}},
            "train": {{"max_epochs": 2, "patience": 1}},
            "attack": {{"attack_epochs": 5}},
            "methods": ["discrete", "continuous"],
            "output_dir": {:?},
            "master_seed": 42
        }}"#,
        dir.to_str().unwrap()
    );
    ExperimentConfig::from_json(&text).unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn single_cell_writes_trials_and_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(&tmp.path().join("a"));
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.exit_code(), 0);
    assert_eq!(outcome.summaries.len(), 2);
    for s in &outcome.summaries {
        assert_eq!(s.trials.len(), 2);
        for t in &s.trials {
            assert_eq!(t.parameter_hash_before, t.parameter_hash_after);
        }
    }
    let trials = read_dir_sorted(&cfg.output_dir.join("trials").join("pin-n2-R10-none"));
    let names: Vec<_> = trials.iter().map(|t| t.0.as_str()).collect();
    assert_eq!(
        names,
        [
            "trial-000-continuous.json",
            "trial-000-discrete.json",
            "trial-001-continuous.json",
            "trial-001-discrete.json"
        ]
    );
    assert_eq!(read_dir_sorted(&cfg.output_dir.join("checkpoints")).len(), 2);
    assert!(cfg.output_dir.join("manifest.json").exists());
    let csv = std::fs::read_to_string(cfg.output_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn rerun_is_byte_identical_and_never_overwrites() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tiny(&tmp.path().join("a"));
    let mut b = tiny(&tmp.path().join("b"));
    b.workers = 2;
    run_experiment(&a).unwrap();
    run_experiment(&b).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(
        read_dir_sorted(&a.output_dir.join("summaries")),
        read_dir_sorted(&b.output_dir.join("summaries"))
    );
    assert_eq!(
        std::fs::read(a.output_dir.join("results.csv")).unwrap(),
        std::fs::read(b.output_dir.join("results.csv")).unwrap()
    );
    let again = run_experiment(&a);
    assert!(matches!(again, Err(ExperimentError::Io { .. })));
}

#[test]
fn trial_seeds_depend_only_on_coordinates() {
    let cell = Cell {
        pattern: Pattern::Pin,
        n: 4,
        repetitions: 10,
        defenses: vec![],
    };
    let s = trial_seed(1, &cell, 0);
    assert_eq!(s, trial_seed(1, &cell, 0));
    assert_ne!(s, trial_seed(1, &cell, 1));
    assert_ne!(s, trial_seed(2, &cell, 0));
    let defended = Cell {
        defenses: vec![Defense::Dropout],
        ..cell.clone()
    };
    assert_ne!(s, trial_seed(1, &defended, 0));
}

#[test]
fn defense_sweep_yields_one_summary_per_combination() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&tmp.path().join("d"));
    cfg.trials = 1;
    cfg.methods = vec![Method::Discrete];
    cfg.attack.attack_epochs = 1;
    cfg.train.max_epochs = 1;
    cfg.defenses = ExperimentConfig::all_defense_combinations()[1..].to_vec();
    let outcome = run_experiment(&cfg).unwrap();
    let labels: Vec<_> = outcome.summaries.iter().map(|s| s.cell.defenses.as_str()).collect();
    assert_eq!(labels, ["D", "ES", "CE", "D+ES", "D+CE", "ES+CE", "D+ES+CE"]);
}

#[test]
fn failures_are_recorded_and_set_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&tmp.path().join("f"));
    cfg.v0 = Some(vec!["one".into()]);
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.failures.len(), 2);
    assert_eq!(outcome.exit_code(), 3);
    assert_eq!(outcome.failed_cells, ["pin-n2-R10-none"]);
    assert!(cfg
        .output_dir
        .join("trials/pin-n2-R10-none/trial-000-error.json")
        .exists());
}

#[test]
fn config_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tiny(tmp.path());
    let mut c = base.clone();
    c.schema_version = 2;
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.n = vec![0];
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.defenses = vec![vec![Defense::Dropout], vec![Defense::Dropout]];
    assert!(c.validate().is_err());
    assert!(ExperimentConfig::from_json(r#"{"schema_version": 1, "bogus": 1}"#).is_err());
    let mut c = base.clone();
    c.output_dir = "/elsewhere".into();
    c.workers = 8;
    assert_eq!(c.hash(), base.hash());
    c.master_seed = 1;
    assert_ne!(c.hash(), base.hash());
}

use std::fs;
use std::path::Path;
use std::process::Command;

use msgen::eval::MetricsReport;
use msgen::pipeline::{
    self, artifacts, read_samples, ExperimentConfig, MethodConfig, MethodEntry, MethodKind, Preset, Stage, VGroup,
};
use msgen::scm::StaticCovariate;

fn small(preset: Preset, methods: Vec<MethodEntry>, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(preset, methods, out);
    cfg.seed = 12;
    cfg.scm.n_traj = 60;
    cfg.scm.horizon = 20;
    cfg.propensity.model.train.epochs = 2;
    cfg.eval.oracle_samples = 500;
    cfg.eval.generated_samples = 200;
    cfg
}

fn quick(kind: MethodKind) -> MethodEntry {
    MethodEntry::Full(MethodConfig::new(kind).with_epochs(2))
}

fn combos_in(report: &MetricsReport, method: &str) -> Vec<String> {
    report.records.iter().filter(|r| r.method == method).map(|r| r.combo.clone()).collect()
}

#[test]
fn metrics_cover_every_combination() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Preset::Table4D1, vec![quick(MethodKind::Mscvae)], dir.path());
    let report = pipeline::run_pipeline(&cfg).unwrap();
    assert_eq!(combos_in(&report, "mscvae"), ["0", "1"]);
    let csv = fs::read_to_string(artifacts::metrics_csv(dir.path())).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Preset::Table4D3, vec![MethodEntry::Name(MethodKind::Kde)], dir.path());
    let report = pipeline::run_pipeline(&cfg).unwrap();
    assert_eq!(combos_in(&report, "kde").len(), 8);
    for combo in ["000", "101", "111"] {
        assert!(artifacts::histograms(dir.path()).join("kde").join(format!("{combo}.csv")).exists());
    }
}

#[test]
fn separate_stages_equal_one_pipeline_run() {
    let methods = || {
        vec![
            quick(MethodKind::Mscvae),
            quick(MethodKind::Msdiffusion),
            MethodEntry::Name(MethodKind::PluginKde),
        ]
    };
    let whole = tempfile::tempdir().unwrap();
    pipeline::run_pipeline(&small(Preset::Table4D1, methods(), whole.path())).unwrap();

    let staged = tempfile::tempdir().unwrap();
    let cfg = small(Preset::Table4D1, methods(), staged.path());
    for stage in Stage::ALL {
        pipeline::run_stage(stage, &cfg).unwrap();
    }

    let same = |f: fn(&Path) -> std::path::PathBuf| {
        assert_eq!(fs::read(f(whole.path())).unwrap(), fs::read(f(staged.path())).unwrap());
    };
    same(artifacts::dataset);
    same(artifacts::weights);
    same(artifacts::metrics_csv);
    for label in ["mscvae", "msdiffusion", "plugin_kde"] {
        assert_eq!(
            fs::read(artifacts::model(whole.path(), label)).unwrap(),
            fs::read(artifacts::model(staged.path(), label)).unwrap()
        );
    }
}

#[test]
fn generate_writes_requested_rows_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Preset::Table4D1, vec![MethodEntry::Name(MethodKind::Kde)], dir.path());
    for stage in [Stage::Simulate, Stage::FitPropensity, Stage::Train] {
        pipeline::run_stage(stage, &cfg).unwrap();
    }
    pipeline::generate(&cfg, Some(1000)).unwrap();
    let dump = read_samples(&artifacts::samples(dir.path(), "kde")).unwrap();
    assert_eq!(dump.len(), 2);
    assert!(dump.values().all(|rows| rows.len() == 1000));
}

#[test]
fn missing_inputs_name_the_stage_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Preset::Table4D1, vec![MethodEntry::Name(MethodKind::Kde)], dir.path());
    let err = pipeline::run_stage(Stage::Train, &cfg).unwrap_err().to_string();
    assert!(err.contains("train") && err.contains("dataset.jsonl"), "{err}");

    pipeline::run_stage(Stage::Simulate, &cfg).unwrap();
    let err = pipeline::run_stage(Stage::Train, &cfg).unwrap_err().to_string();
    assert!(err.contains("weights.csv"), "{err}");

    pipeline::run_stage(Stage::FitPropensity, &cfg).unwrap();
    let err = pipeline::run_stage(Stage::Evaluate, &cfg).unwrap_err().to_string();
    assert!(err.contains("evaluate") && err.contains("kde.csv"), "{err}");
}

#[test]
fn report_merges_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline::run_pipeline(&small(Preset::Table4D1, vec![MethodEntry::Name(MethodKind::Kde)], a.path())).unwrap();
    pipeline::run_pipeline(&small(Preset::Table4D1, vec![quick(MethodKind::MsmNn)], b.path())).unwrap();
    let out = tempfile::tempdir().unwrap();
    let merged = pipeline::report(&[a.path().to_path_buf(), b.path().to_path_buf()], out.path()).unwrap();
    assert_eq!(merged.records.len(), 4);
    assert!(merged.aggregate("kde", "w1").is_some());
    assert!(merged.aggregate("msm_nn", "mean_dist").is_some());
    assert!(out.path().join("report.csv").exists());

    let missing = pipeline::report(&[out.path().join("nope")], out.path()).unwrap_err();
    assert!(missing.to_string().contains("metrics.json"), "{missing}");
}

#[test]
fn covariate_groups_are_scored_separately() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Preset::Table4D1, vec![quick(MethodKind::Mscvae)], dir.path());
    cfg.scm.static_covariate = Some(StaticCovariate::default());
    cfg.eval.v_groups = vec![VGroup { low: -1.0, high: 0.0 }, VGroup { low: 0.0, high: 1.0 }];
    let report = pipeline::run_pipeline(&cfg).unwrap();
    let keys = combos_in(&report, "mscvae");
    assert_eq!(keys.len(), 4);
    assert!(keys.contains(&"1@[0,1]".to_string()), "{keys:?}");
}

#[test]
fn config_round_trips_and_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "seed": 3,
        "scm": {"preset": "table4-d3", "T": 30},
        "methods": ["kde", {"method": "mscvae", "label": "mscvae-small", "cvae": {"width": 16}}],
        "eval": {"combos": ["000", "111"]}
    }"#;
    let path = dir.path().join("c.json");
    fs::write(&path, json).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.combos().unwrap(), ["000", "111"]);
    let labels: Vec<String> = cfg.methods().iter().map(|m| m.label()).collect();
    assert_eq!(labels, ["kde", "mscvae-small"]);
    cfg.save(&dir.path().join("back.json")).unwrap();
    assert_eq!(ExperimentConfig::load(&dir.path().join("back.json")).unwrap(), cfg);

    fs::write(&path, r#"{"scm": {"preset": "table4-d1", "horizon": 5}, "methods": ["kde"]}"#).unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
    fs::write(&path, r#"{"scm": {"preset": "table4-d1"}, "methods": ["kde"], "eval": {"combos": ["01"]}}"#).unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
}

fn msgen(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_msgen"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_runs_stages_and_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small(Preset::Table4D1, vec![MethodEntry::Name(MethodKind::PluginKde)], &out);
    let cfg_path = dir.path().join("config.json");
    cfg.save(&cfg_path).unwrap();
    let c = cfg_path.to_str().unwrap();

    let o = msgen(&["--config", c, "evaluate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset.jsonl"));

    for cmd in ["simulate", "fit-propensity", "train"] {
        let o = msgen(&["--config", c, cmd]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(msgen(&["--config", c, "generate", "--n", "50"]).status.success());
    let o = msgen(&["--config", c, "evaluate"]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("plugin_kde") && stdout.contains("w1"), "{stdout}");
    assert_eq!(read_samples(&artifacts::samples(&out, "plugin_kde")).unwrap()["1"].len(), 50);

    let other = dir.path().join("seeded");
    let o = msgen(&["--config", c, "--seed", "99", "--out", other.to_str().unwrap(), "run"]);
    assert!(o.status.success());
    assert!(artifacts::metrics_csv(&other).exists());

    let o = msgen(&["--config", dir.path().join("absent.json").to_str().unwrap(), "run"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.json"));
}

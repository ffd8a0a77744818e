use std::fs;
use std::path::Path;

use hpinn_core::experiments::{
    compare_methods, derive_seed, generate, run_experiment, run_sweep, seed_dir, ExperimentConfig, Method, RunOptions,
    SweepSpec, SymregProtocol, TableKind,
};
use hpinn_core::sampling::{CollocationSet, Dataset, TimeSchedule};
use hpinn_core::trainer::TrainReport;
use hpinn_core::{load_checkpoint, Error};

const TINY: &str = r#"
name = "tiny"
seeds = [1, 2]

[system]
kind = "lotka_volterra"

[data]
schedule = { count = 6 }
noise = 0.01

[collocation]
n_interior = 40

[train]
iterations = 30
surrogate_layers = [6]
hidden_layers = [5]
eval_grid = 20

[ude]
hidden_layers = [5]
iterations = 10
step = 0.05
eval_grid = 20

[symreg]
protocol = "both"
trajectory_points = 30
target = ["x*y", "x*y"]
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml(TINY).unwrap()
}

fn quiet() -> RunOptions {
    RunOptions {
        quiet: true,
        ..RunOptions::default()
    }
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if name.contains("sweep") {
            let spec = SweepSpec::load(&path).unwrap();
            assert!(!spec.cells().unwrap().is_empty(), "{name}");
        } else {
            ExperimentConfig::load(&path).unwrap().validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        seen += 1;
    }
    assert!(seen >= 10);
}

#[test]
fn dry_run_writes_only_the_manifest() {
    let out = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        dry_run: true,
        ..quiet()
    };
    let outcome = run_experiment(&tiny(), out.path(), &opts).unwrap();
    assert!(outcome.runs.is_empty());
    let names: Vec<String> = fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .collect();
    assert_eq!(names, vec!["manifest.json".to_string()]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dry_run"], true);
    assert_eq!(manifest["config"]["seeds"], serde_json::json!([1, 2]));
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn invalid_configs_fail_before_compute() {
    let mut cfg = tiny();
    cfg.seeds.clear();
    let out = tempfile::tempdir().unwrap();
    assert!(matches!(run_experiment(&cfg, out.path(), &quiet()), Err(Error::Config(_))));
    assert!(fs::read_dir(out.path()).unwrap().next().is_none());

    let mut cfg = tiny();
    cfg.method = Method::Ude;
    cfg.ude = None;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));

    let text = TINY.replace("n_interior = 40", "n_interior = 40\nn_boundry = 3");
    assert!(ExperimentConfig::from_toml(&text).is_err());
}

#[test]
fn unwritable_output_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let err = run_experiment(&tiny(), &blocker.join("sub"), &quiet()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn compare_writes_all_artifacts_that_round_trip() {
    let out = tempfile::tempdir().unwrap();
    let outcome = compare_methods(&tiny(), out.path(), &quiet()).unwrap();
    assert_eq!(outcome.runs.len(), 2);
    for run in &outcome.runs {
        let pinn = run.pinn.as_ref().unwrap();
        let protocols: Vec<SymregProtocol> = pinn.symbolic.iter().map(|f| f.protocol).collect();
        assert_eq!(protocols, vec![SymregProtocol::TrainingData, SymregProtocol::Trajectory]);
        assert_eq!(pinn.symbolic[1].samples, 30);
        assert!(run.ude.is_some());
    }
    let dir = seed_dir(out.path(), 1);
    for f in [
        "dataset.csv",
        "collocation.csv",
        "surrogate.json",
        "hidden.json",
        "report.json",
        "loss.csv",
        "timing.json",
        "hidden_eval.csv",
        "symbolic.json",
        "ude_network.json",
        "ude_report.json",
        "ude_loss.csv",
        "ude_symbolic.json",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }

    let data = Dataset::read_csv(&dir.join("dataset.csv")).unwrap();
    assert_eq!(data.len(), 6);
    assert_eq!(data.noise, 0.01);
    let copy = out.path().join("copy.csv");
    data.write_csv(&copy).unwrap();
    assert_eq!(Dataset::read_csv(&copy).unwrap(), data);

    let colloc = CollocationSet::read_csv(&dir.join("collocation.csv"), derive_seed(1, 2)).unwrap();
    assert_eq!(colloc.n_interior(), 40);

    let report = TrainReport::read_json(&dir.join("report.json")).unwrap();
    let first = &outcome.runs[0].pinn.as_ref().unwrap().report;
    assert_eq!(report.hidden_mse, first.hidden_mse);
    assert_eq!(report.loss_measurement, first.loss_measurement);
    assert_eq!(report.iterations, 30);

    let (header, rows) = read_rows(&dir.join("loss.csv"));
    assert_eq!(header, ["iteration", "L_M", "L_B", "L_P"]);
    assert_eq!(rows.len(), 30);
    assert_eq!(rows[29][1].parse::<f64>().unwrap(), report.loss_measurement[29]);

    let (header, rows) = read_rows(&dir.join("hidden_eval.csv"));
    assert_eq!(header, ["t", "x", "y", "pred_0", "true_0", "pred_1", "true_1"]);
    assert_eq!(rows.len(), 20);

    load_checkpoint(&dir.join("surrogate.json")).unwrap().to_mlp().unwrap();

    let (header, rows) = read_rows(&out.path().join("comparison.csv"));
    assert_eq!(header, ["seed", "pinn_hidden_mse", "ude_hidden_mse", "winner"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][0], "median");
    let (_, rows) = read_rows(&out.path().join("summary.csv"));
    assert_eq!(rows.len(), 4);
}

#[test]
fn generate_writes_data_without_training() {
    let out = tempfile::tempdir().unwrap();
    generate(&tiny(), out.path(), &quiet()).unwrap();
    let dir = seed_dir(out.path(), 2);
    assert!(dir.join("dataset.csv").is_file());
    assert!(dir.join("collocation.csv").is_file());
    assert!(!dir.join("report.json").exists());
}

#[test]
fn seed_option_overrides_the_list() {
    let out = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        seed: Some(9),
        method: Some(Method::Pinn),
        ..quiet()
    };
    let outcome = run_experiment(&tiny(), out.path(), &opts).unwrap();
    assert_eq!(outcome.runs.len(), 1);
    assert_eq!(outcome.runs[0].seed, 9);
    assert!(outcome.runs[0].ude.is_none());
}

#[test]
fn derived_seeds_are_distinct_streams() {
    let mut all = std::collections::HashSet::new();
    for seed in 0..50 {
        for purpose in 1..4 {
            assert!(all.insert(derive_seed(seed, purpose)));
        }
    }
}

fn tiny_sweep() -> SweepSpec {
    let mut spec = SweepSpec::from_toml(
        r#"
name = "grid"
[[axes]]
key = "data.schedule.count"
label = "n"
values = [3, 6]
[[axes]]
key = "collocation.n_interior"
label = "n_P"
values = [20, 40]
"#,
    )
    .unwrap();
    let mut base: toml::Value = toml::from_str(TINY).unwrap();
    base["seeds"] = toml::Value::Array(vec![toml::Value::Integer(1)]);
    spec.config = Some(base);
    spec
}

#[test]
fn sweep_overrides_apply_to_each_cell() {
    let spec = tiny_sweep();
    let cells = spec.cells().unwrap();
    assert_eq!(cells.len(), 4);
    assert_eq!(cells[1].data.schedule, TimeSchedule::Count(3));
    assert_eq!(cells[1].collocation.n_interior, 40);
    assert_eq!(cells[2].data.schedule, TimeSchedule::Count(6));
    assert_eq!(cells[2].collocation.n_interior, 20);

    let mut spacing = spec.clone();
    spacing.axes.truncate(1);
    spacing.axes[0].key = "data.schedule.spacing".into();
    spacing.axes[0].values = vec![toml::Value::Float(0.5)];
    assert_eq!(spacing.cells().unwrap()[0].data.schedule, TimeSchedule::Spacing(0.5));

    let mut bad = spec.clone();
    bad.axes[1].values.push(toml::Value::Integer(0));
    let err = bad.cells().unwrap_err().to_string();
    assert!(err.contains("n_P"), "{err}");
}

#[test]
fn sweep_tables_and_partial_failure() {
    let spec = tiny_sweep();
    let out = tempfile::tempdir().unwrap();
    fs::write(out.path().join("cell_003"), b"not a directory").unwrap();
    let outcome = run_sweep(&spec, out.path(), &quiet()).unwrap();
    assert_eq!(outcome.failed(), 1);
    assert!(outcome.cells[3].error.is_some());

    let (header, rows) = read_rows(&out.path().join("cells.csv"));
    assert_eq!(header, ["n", "n_P", "method", "seeds", "median_hidden_mse", "median_surrogate_mse", "error"]);
    assert_eq!(rows.len(), 4);
    assert!(!rows[3][6].is_empty());

    let (header, rows) = read_rows(&out.path().join("table_pinn.csv"));
    assert_eq!(header, ["n", "n_P=20", "n_P=40"]);
    assert_eq!(rows.len(), 2);
    assert!(rows[0][1].parse::<f64>().is_ok());
    assert!(rows[1][2].is_empty());
}

#[test]
fn sweep_workers_do_not_change_results() {
    let mut spec = tiny_sweep();
    spec.axes.truncate(1);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_sweep(&spec, a.path(), &quiet()).unwrap();
    spec.workers = 2;
    run_sweep(&spec, b.path(), &quiet()).unwrap();
    for f in ["cells.csv", "table_pinn.csv", "cell_001/seed_1/report.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn symbolic_sweep_table_covers_both_methods_and_terms() {
    let mut spec = tiny_sweep();
    spec.axes.truncate(1);
    spec.table = TableKind::Symbolic;
    if let Some(cfg) = spec.config.as_mut() {
        cfg.as_table_mut().unwrap().insert("method".into(), toml::Value::String("both".into()));
    }
    let out = tempfile::tempdir().unwrap();
    run_sweep(&spec, out.path(), &quiet()).unwrap();
    let (header, rows) = read_rows(&out.path().join("symbolic_table.csv"));
    for m in ["pinn", "ude"] {
        for j in 1..=2 {
            for suffix in ["expression", "coefficient", "recovered"] {
                let col = format!("{m}_F{j}_{suffix}");
                assert!(header.contains(&col), "{col} missing from {header:?}");
            }
        }
    }
    assert_eq!(rows.len(), 2);
}

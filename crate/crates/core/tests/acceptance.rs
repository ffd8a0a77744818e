//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! nonzero status if any fails.
//!
//! `HPINN_ACCEPTANCE=1,8,9` restricts the run to the listed criteria.

mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{finite_difference_check, small_cases};
use hpinn_core::dynamics::{cell_apoptosis, ApoptosisParams, ApoptosisTarget};
use hpinn_core::experiments::{median, run_experiment, seed_dir, ExperimentConfig, ExperimentOutcome, Method, RunOptions,
    SymregProtocol};
use hpinn_core::load_checkpoint;
use hpinn_core::sampling::{
    burgers_reference, latin_hypercube, ode_reference, rk4_path, BurgersSettings, Dataset, TimeSchedule,
};

const BURGERS_NU: f64 = 1.0 / (1000.0 * std::f64::consts::PI);

struct Check {
    id: String,
    pass: bool,
    detail: String,
}

struct Suite {
    selected: Option<BTreeSet<u32>>,
    checks: Vec<Check>,
    scratch: tempfile::TempDir,
}

impl Suite {
    fn wants(&self, criterion: u32) -> bool {
        self.selected.as_ref().is_none_or(|s| s.contains(&criterion))
    }

    fn record(&mut self, id: impl Into<String>, pass: bool, detail: impl Into<String>) {
        let check = Check {
            id: id.into(),
            pass,
            detail: detail.into(),
        };
        println!("{} {:<6} {}", if check.pass { "PASS" } else { "FAIL" }, check.id, check.detail);
        self.checks.push(check);
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.scratch.path().join(name)
    }
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(cfg: &ExperimentConfig, out: &Path) -> ExperimentOutcome {
    let opts = RunOptions {
        quiet: true,
        ..RunOptions::default()
    };
    run_experiment(cfg, out, &opts).unwrap_or_else(|e| panic!("{}: {e}", cfg.name))
}

fn within_two_orders(measured: f64, paper: f64) -> bool {
    (measured / paper).log10().abs() <= 2.0
}

fn fmt_all(values: &[f64]) -> String {
    let v: Vec<String> = values.iter().map(|v| format!("{v:.2e}")).collect();
    format!("[{}]", v.join(", "))
}

fn gradient_correctness(s: &mut Suite) {
    for case in small_cases() {
        let mut worst = 0.0f64;
        let mut params = 0;
        for seed in 0..20 {
            let c = finite_difference_check(&case, 1000 + seed);
            worst = worst.max(c.rel_error);
            params = params.max(c.params);
        }
        s.record(
            format!("1/{}", case.name),
            worst <= 1e-4 && params <= 50,
            format!("{params} params, worst relative error over 20 draws {worst:.2e} (tol 1e-4)"),
        );
    }
}

fn lv_cell(n: usize, n_p: usize, noise: f64) -> ExperimentConfig {
    let mut cfg = config(if noise > 0.0 { "lv_table2.toml" } else { "lv_table1.toml" });
    cfg.name = format!("lv_n{n}_np{n_p}_eps{noise}");
    cfg.data.schedule = TimeSchedule::Count(n);
    cfg.data.noise = noise;
    cfg.collocation.n_interior = n_p;
    cfg.symreg.protocol = SymregProtocol::TrainingData;
    cfg
}

fn table1(s: &mut Suite) {
    let cells = [
        ("2/n1", 1, 100, 2e1, "median >= 1e0", &(|m: f64| m >= 1.0) as &dyn Fn(f64) -> bool),
        ("2/n5", 5, 100, 9e-4, "median <= 1e-2", &|m| m <= 1e-2),
        ("2/n10", 10, 10_000, 5e-6, "median <= 1e-4", &|m| m <= 1e-4),
    ];
    for (id, n, n_p, paper, rule, bound) in cells {
        let cfg = lv_cell(n, n_p, 0.0);
        let out = run(&cfg, &s.dir(&cfg.name));
        let mse = out.pinn_hidden_mse();
        let m = median(&mse);
        s.record(
            id,
            bound(m) && within_two_orders(m, paper),
            format!(
                "noiseless n={n} n_P={n_p}: median hidden MSE {m:.2e} ({rule}, paper {paper:.0e} within 2 orders) seeds {}",
                fmt_all(&mse)
            ),
        );
    }
}

fn table2(s: &mut Suite) {
    let ten = run(&lv_cell(10, 1000, 5e-3), &s.dir("t2_n10"));
    let five = run(&lv_cell(5, 1000, 5e-3), &s.dir("t2_n5"));
    let m10 = ten.pinn_hidden_mse();
    let m5 = five.pinn_hidden_mse();
    let med = median(&m10);
    s.record(
        "3/n10",
        med <= 1e-2,
        format!("eps=5e-3 n=10 n_P=1e3: median hidden MSE {med:.2e} (<= 1e-2, paper 6e-4) seeds {}", fmt_all(&m10)),
    );
    let improved = m5.iter().zip(&m10).filter(|(a, b)| b < a).count();
    s.record(
        "3/trend",
        improved >= 4,
        format!(
            "eps=5e-3 n_P=1e3: n=5 -> n=10 improves in {improved}/{} seeds (>= 4); n=5 {} n=10 {}",
            m10.len(),
            fmt_all(&m5),
            fmt_all(&m10)
        ),
    );
}

fn comparison(s: &mut Suite) -> Option<ExperimentOutcome> {
    let mut clean = config("lv_spacing.toml");
    clean.method = Method::Both;
    clean.data.schedule = TimeSchedule::Spacing(0.1);
    clean.data.noise = 0.0;
    let clean_out = run(&clean, &s.dir("cmp_clean"));
    let (p, u) = (clean_out.pinn_hidden_mse(), clean_out.ude_hidden_mse());
    let (mp, mu) = (median(&p), median(&u));
    s.record(
        "4/clean",
        mu <= 2.0 * mp,
        format!("spacing 0.1 noiseless: UDE median {mu:.2e} <= 2 x PINN median {mp:.2e}; PINN {} UDE {}", fmt_all(&p), fmt_all(&u)),
    );
    let mut noisy = config("lv_noise.toml");
    noisy.method = Method::Both;
    noisy.data.schedule = TimeSchedule::Spacing(0.1);
    noisy.data.noise = 0.1;
    let noisy_out = run(&noisy, &s.dir("cmp_noisy"));
    let (p, u) = (noisy_out.pinn_hidden_mse(), noisy_out.ude_hidden_mse());
    let (mp, mu) = (median(&p), median(&u));
    s.record(
        "4/noisy",
        mp < mu,
        format!("spacing 0.1 noise 0.1: PINN median {mp:.2e} < UDE median {mu:.2e}; PINN {} UDE {}", fmt_all(&p), fmt_all(&u)),
    );
    Some(clean_out)
}

fn symbolic_recovery(s: &mut Suite, clean: Option<&ExperimentOutcome>) {
    let bands = [(-0.94, -0.86), (0.76, 0.84)];
    for spacing in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6] {
        let reuse = if spacing == 0.1 { clean } else { None };
        let owned;
        let outcome = match reuse {
            Some(o) => o,
            None => {
                let mut cfg = config("lv_spacing.toml");
                cfg.method = Method::Pinn;
                cfg.seeds = vec![0];
                cfg.data.schedule = TimeSchedule::Spacing(spacing);
                cfg.data.noise = 0.0;
                cfg.name = format!("symreg_spacing_{spacing}");
                owned = run(&cfg, &s.dir(&cfg.name));
                &owned
            }
        };
        let run0 = outcome.runs.iter().find(|r| r.seed == 0).expect("seed 0 present");
        let fit = run0
            .pinn
            .as_ref()
            .and_then(|m| m.symbolic.iter().find(|f| f.protocol == SymregProtocol::TrainingData))
            .expect("training-data symbolic fit");
        let mut ok = fit.selected.len() == 2;
        let mut parts = Vec::new();
        for (j, model) in fit.selected.iter().enumerate() {
            let single = model.terms.len() == 1 && model.recovered == Some(true);
            let c = model.coefficient("x*y").unwrap_or(f64::NAN);
            let (lo, hi) = bands[j];
            ok &= single && c >= lo && c <= hi;
            parts.push(format!("F{} = {} (band [{lo}, {hi}])", j + 1, model.expression()));
        }
        s.record(format!("5/s{spacing}"), ok, format!("noiseless spacing {spacing}, seed 0: {}", parts.join("; ")));
    }
}

fn burgers(s: &mut Suite) {
    let cfg = config("burgers.toml");
    let nu = match &cfg.system {
        hpinn_core::experiments::SystemConfig::Burgers { nu, .. } => *nu,
        _ => f64::NAN,
    };
    let setup_ok = (nu - BURGERS_NU).abs() <= 1e-15
        && cfg.data.schedule == TimeSchedule::Times(vec![0.0, 0.5])
        && cfg.data.noise == 5e-3
        && cfg.collocation.n_interior == 10_000
        && cfg.collocation.n_boundary == 100
        && cfg.train.shock_band == 0.05;
    let out = run(&cfg, &s.dir("burgers"));
    let report = &out.runs[0].pinn.as_ref().expect("pinn run").report;
    s.record(
        "6/setup",
        setup_ok,
        format!("nu = {nu:.6e}, times {:?}, eps {}, n_P {}, n_B {}", cfg.data.schedule, cfg.data.noise, cfg.collocation.n_interior, cfg.collocation.n_boundary),
    );
    s.record(
        "6/surr",
        report.surrogate_mse <= 1e-3,
        format!("surrogate MSE off the shock band {:.2e} (<= 1e-3, paper 3e-4)", report.surrogate_mse),
    );
    s.record(
        "6/hidden",
        report.hidden_mse <= 5e-2,
        format!("hidden MSE off the shock band {:.2e} (<= 5e-2, paper 2e-2)", report.hidden_mse),
    );
}

fn apoptosis(s: &mut Suite) {
    for (target, file) in [(ApoptosisTarget::V1, "apoptosis_v1.toml"), (ApoptosisTarget::V2, "apoptosis_v2.toml")] {
        let sys = cell_apoptosis(ApoptosisParams::default(), target).unwrap();
        let traj = ode_reference(&sys, 1e-3).unwrap();
        let mut worst_rate = 0.0f64;
        for u in &traj.states {
            let r = sys.ode_rhs(u);
            worst_rate = worst_rate.max((r[1] + r[2]).abs());
        }
        let total0 = traj.states[0][1] + traj.states[0][2];
        let drift = traj.states.iter().map(|u| (u[1] + u[2] - total0).abs()).fold(0.0, f64::max);
        let tag = format!("{target:?}").to_lowercase();
        s.record(
            format!("7/{tag}/cons"),
            worst_rate == 0.0 && drift <= 1e-14,
            format!("max |dAkt_s/dt + dAkt/dt| = {worst_rate:.1e}, max drift of Akt_s + Akt = {drift:.1e}"),
        );

        let mut cfg = config(file);
        cfg.seeds = vec![0];
        let dir = s.dir(&format!("apoptosis_{tag}"));
        let out = run(&cfg, &dir);
        let report = &out.runs[0].pinn.as_ref().expect("pinn run").report;
        let data = Dataset::read_csv(&seed_dir(&dir, 0).join("dataset.csv")).unwrap();
        let u = load_checkpoint(&seed_dir(&dir, 0).join("surrogate.json")).unwrap().to_mlp().unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for r in &data.records {
            let pred = u.forward(&[r.t]).unwrap();
            for (p, v) in pred.iter().zip(&r.u) {
                sum += (p - v).powi(2);
                count += 1;
            }
        }
        let fit = sum / count as f64;
        s.record(
            format!("7/{tag}/fit"),
            data.len() == 30 && cfg.data.noise == 0.0 && fit <= 1e-6,
            format!("{} noiseless points, surrogate data MSE {fit:.2e} (<= 1e-6)", data.len()),
        );
        println!(
            "INFO   7/{tag}/hidden hidden MSE {:.2e} (1e-3 target is not binding: parameters are a placeholder set)",
            report.hidden_mse
        );
    }
}

fn strata_exact(points: &[Vec<f64>], bounds: &[(f64, f64)]) -> bool {
    let n = points.len();
    bounds.iter().enumerate().all(|(d, &(lo, hi))| {
        let mut seen = vec![false; n];
        for p in points {
            let k = (((p[d] - lo) / (hi - lo)) * n as f64).floor() as usize;
            if k >= n || seen[k] {
                return false;
            }
            seen[k] = true;
        }
        seen.iter().all(|&v| v)
    })
}

fn samplers_and_integrators(s: &mut Suite) {
    let bounds = [(0.0, 3.0), (-1.0, 1.0)];
    for n in [1, 4, 100, 10_000] {
        let ok = (0..5).all(|seed| strata_exact(&latin_hypercube(n, &bounds, seed).unwrap(), &bounds));
        s.record(format!("8/lhs{n}"), ok, format!("n = {n}: one point per stratum in each coordinate, 5 seeds"));
    }

    let err = |h: f64| {
        let path = rk4_path(|u: &[f64]| Ok(vec![u[0]]), &[1.0], &[0.0, 1.0], h).unwrap();
        (path[1][0] - 1f64.exp()).abs()
    };
    let hs = [0.1, 0.05, 0.025, 0.0125];
    let orders: Vec<f64> = hs.windows(2).map(|w| (err(w[0]) / err(w[1])).log2()).collect();
    s.record(
        "8/rk4",
        orders.iter().all(|p| (p - 4.0).abs() <= 0.1),
        format!("du/dt = u observed orders {:?} (4 +- 0.1)", orders.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>()),
    );

    let fine = BurgersSettings::default();
    let grid = burgers_reference(BURGERS_NU, &fine).unwrap();
    let n = grid.nx();
    let mut asym = 0.0f64;
    for ti in 0..grid.ts.len() {
        for xi in 0..n {
            asym = asym.max((grid.at(ti, xi) + grid.at(ti, n - 1 - xi)).abs());
        }
    }
    s.record("8/odd", asym < 1e-6, format!("max |u(x) + u(-x)| = {asym:.1e} (< 1e-6)"));

    let finer = burgers_reference(
        BURGERS_NU,
        &BurgersSettings {
            intervals: 2 * fine.intervals,
            ..fine
        },
    )
    .unwrap();
    let mut diff = 0.0f64;
    for ti in 0..grid.ts.len() {
        for xi in 0..n {
            if grid.xs[xi].abs() > 0.05 {
                diff = diff.max((grid.at(ti, xi) - finer.at(ti, 2 * xi)).abs());
            }
        }
    }
    s.record(
        "8/refine",
        diff < 1e-3,
        format!("{} vs {} intervals, max difference off |x| <= 0.05: {diff:.1e} (< 1e-3)", fine.intervals, 2 * fine.intervals),
    );
}

fn determinism(s: &mut Suite) {
    let mut cfg = config("lv_compare.toml");
    cfg.name = "determinism".into();
    cfg.seeds = vec![3];
    cfg.collocation.n_interior = 200;
    cfg.train.iterations = 300;
    cfg.train.lbfgs_iterations = 100;
    if let Some(u) = cfg.ude.as_mut() {
        u.iterations = 100;
        u.lbfgs_iterations = 20;
    }
    let a = s.dir("det_a");
    let b = s.dir("det_b");
    run(&cfg, &a);
    run(&cfg, &b);
    let files = [
        "dataset.csv",
        "collocation.csv",
        "report.json",
        "loss.csv",
        "surrogate.json",
        "hidden.json",
        "hidden_eval.csv",
        "symbolic.json",
        "ude_report.json",
        "ude_network.json",
        "ude_symbolic.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            let x = std::fs::read(seed_dir(&a, 3).join(f)).ok();
            let y = std::fs::read(seed_dir(&b, 3).join(f)).ok();
            x.is_none() || x != y
        })
        .collect();
    s.record(
        "9",
        differing.is_empty(),
        format!("repeated run, {} artifacts compared byte for byte; differing: {differing:?}", files.len()),
    );
}

fn main() {
    let selected = std::env::var("HPINN_ACCEPTANCE").ok().map(|v| {
        v.split(',')
            .filter_map(|t| t.trim().parse().ok())
            .collect::<BTreeSet<u32>>()
    });
    let mut suite = Suite {
        selected,
        checks: Vec::new(),
        scratch: tempfile::tempdir().expect("scratch directory"),
    };
    let start = Instant::now();
    let criteria: [(u32, fn(&mut Suite)); 6] = [
        (1, gradient_correctness),
        (8, samplers_and_integrators),
        (9, determinism),
        (7, apoptosis),
        (2, table1),
        (3, table2),
    ];
    for (id, f) in criteria {
        if suite.wants(id) {
            f(&mut suite);
        }
    }
    let clean = if suite.wants(4) { comparison(&mut suite) } else { None };
    if suite.wants(5) {
        symbolic_recovery(&mut suite, clean.as_ref());
    }
    if suite.wants(6) {
        burgers(&mut suite);
    }
    let failed = suite.checks.iter().filter(|c| !c.pass).count();
    println!(
        "acceptance: {} checks, {} failed, {:.0} s",
        suite.checks.len(),
        failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

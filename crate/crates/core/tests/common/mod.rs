#![allow(dead_code)]

use hpinn_core::dynamics::{
    cell_apoptosis, lotka_volterra, viscous_burgers, ApoptosisParams, ApoptosisTarget, DifferentialSystem, HiddenMode,
    LvParams,
};
use hpinn_core::sampling::{
    burgers_reference, collocation, ode_reference, sample_measurements, BurgersSettings, CollocationSet, Dataset,
    ReferenceSolution, TimeSchedule,
};
use hpinn_core::trainer::{HybridModel, LossWeights, Problem, TrainConfig, Workspace};

pub struct Case {
    pub name: &'static str,
    pub system: DifferentialSystem,
    pub reference: ReferenceSolution,
    pub dataset: Dataset,
    pub collocation: CollocationSet,
    pub config: TrainConfig,
}

pub fn small_burgers_settings() -> BurgersSettings {
    BurgersSettings {
        intervals: 64,
        output_times: 11,
        horizon: 1.0,
        cfl: 0.4,
    }
}

/// One small problem per system, each with at most 50 trainable parameters.
pub fn small_cases() -> Vec<Case> {
    let lv = lotka_volterra(LvParams::default(), HiddenMode::Decoupled).unwrap();
    let lv_shared = lotka_volterra(LvParams::default(), HiddenMode::SharedScaled).unwrap();
    let apo = cell_apoptosis(ApoptosisParams::default(), ApoptosisTarget::V1).unwrap();
    let burgers = viscous_burgers(0.01 / std::f64::consts::PI).unwrap();
    let mut out = Vec::new();
    for (name, sys, u, f) in [
        ("lotka_volterra", lv, vec![4], vec![3]),
        ("lotka_volterra_shared", lv_shared, vec![4], vec![3]),
        ("apoptosis", apo, vec![3], vec![3]),
        ("burgers", burgers, vec![4], vec![3]),
    ] {
        let reference = if sys.is_ode() {
            ReferenceSolution::Ode(ode_reference(&sys, 1e-2).unwrap())
        } else {
            ReferenceSolution::Pde(burgers_reference(0.01 / std::f64::consts::PI, &small_burgers_settings()).unwrap())
        };
        let schedule = if sys.is_ode() {
            TimeSchedule::Count(6)
        } else {
            TimeSchedule::Times(vec![0.0, 0.5])
        };
        let dataset = sample_measurements(&sys, &reference, &schedule, 8).unwrap();
        let nb = if sys.is_ode() { 0 } else { 6 };
        let colloc = collocation(&sys, 24, nb, 7).unwrap();
        let config = TrainConfig {
            surrogate_layers: u,
            hidden_layers: f,
            iterations: 50,
            ..TrainConfig::default()
        };
        out.push(Case {
            name,
            system: sys,
            reference,
            dataset,
            collocation: colloc,
            config,
        });
    }
    out
}

pub struct GradCheck {
    pub params: usize,
    /// `|g - fd| / |fd|` in the Euclidean norm.
    pub rel_error: f64,
}

/// Compares the analytic gradient of the total loss with central finite
/// differences for the model initialised from `seed`.
pub fn finite_difference_check(case: &Case, seed: u64) -> GradCheck {
    let cfg = TrainConfig { seed, ..case.config.clone() };
    let mut model = HybridModel::init(&case.system, &case.dataset, &cfg).unwrap();
    let problem = Problem {
        system: &case.system,
        dataset: &case.dataset,
        collocation: &case.collocation,
        weights: LossWeights::default(),
    };
    let mut ws = Workspace::default();
    let n = model.param_count();
    let mut grad = vec![0.0; n];
    problem.evaluate(&model, Some(&mut grad), &mut ws, None).unwrap();
    let base = model.params();
    let mut fd = vec![0.0; n];
    for i in 0..n {
        let h = 1e-6 * base[i].abs().max(1.0);
        let mut p = base.clone();
        p[i] = base[i] + h;
        model.set_params(&p).unwrap();
        let up = problem.total(&problem.evaluate(&model, None, &mut ws, None).unwrap());
        p[i] = base[i] - h;
        model.set_params(&p).unwrap();
        let down = problem.total(&problem.evaluate(&model, None, &mut ws, None).unwrap());
        fd[i] = (up - down) / (2.0 * h);
    }
    model.set_params(&base).unwrap();
    let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    GradCheck {
        params: n,
        rel_error: diff / norm.max(1e-300),
    }
}

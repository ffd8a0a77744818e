//! Universal-differential-equation baseline: `du/dt = N_K(u) + H(u)` with a
//! network `H`, fitted to data by differentiating through an unrolled RK4
//! solve.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dynamics::{DifferentialSystem, FieldJet};
use crate::error::{Error, Result};
use crate::neural::{ForwardCache, Mlp};
use crate::sampling::ode::{rk4_path, substeps};
use crate::sampling::{Dataset, ReferenceSolution};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::trainer::{evaluation_points, Adam, RunSeeds, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UdeConfig {
    /// Hidden-layer widths of `H`.
    pub hidden_layers: Vec<usize>,
    /// Largest integration step; every data interval is split evenly.
    pub step: f64,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub iterations: usize,
    /// L-BFGS iterations run after the Adam phase.
    pub lbfgs_iterations: usize,
    pub lbfgs_memory: usize,
    pub seed: u64,
    pub eval_grid: usize,
}

impl Default for UdeConfig {
    fn default() -> Self {
        UdeConfig {
            hidden_layers: vec![32, 32],
            step: 0.01,
            learning_rate: 1e-3,
            betas: (0.9, 0.999),
            iterations: 30_000,
            lbfgs_iterations: 0,
            lbfgs_memory: 20,
            seed: 0,
            eval_grid: 300,
        }
    }
}

impl UdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config(format!("integration step {} must be positive", self.step)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if self.eval_grid < 2 {
            return Err(Error::config("evaluation grid needs at least two points"));
        }
        if self.lbfgs_iterations > 0 && self.lbfgs_memory == 0 {
            return Err(Error::config("lbfgs_memory must be at least 1"));
        }
        Ok(())
    }
}

fn require_ode(system: &DifferentialSystem) -> Result<()> {
    if system.is_ode() {
        Ok(())
    } else {
        Err(Error::config("the UDE baseline supports ODE systems only"))
    }
}

fn known_at(system: &DifferentialSystem, u: &[f64]) -> Vec<f64> {
    let f: Vec<_> = u.iter().map(|&v| FieldJet::state(v)).collect();
    system.known(&f)
}

/// Builds `H`: state in, one additive term per state component out. Inputs
/// are centred and scaled by the spread of the measured states.
pub fn init_network(system: &DifferentialSystem, dataset: &Dataset, config: &UdeConfig) -> Result<Mlp> {
    let m = system.state_dim();
    let mut widths = vec![m];
    widths.extend(&config.hidden_layers);
    widths.push(m);
    let (mut shift, mut scale) = (vec![0.0; m], vec![1.0; m]);
    for c in 0..m {
        let vals = dataset.records.iter().map(|r| r.u[c]);
        let lo = vals.clone().fold(f64::INFINITY, f64::min);
        let hi = vals.fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi.is_finite() {
            shift[c] = (lo + hi) / 2.0;
            scale[c] = 1.0 / ((hi - lo) / 2.0).max(0.5 * lo.abs().max(hi.abs())).max(1e-3);
        }
    }
    Mlp::init_glorot(&widths, config.seed)?.with_input_map(shift, scale)
}

/// Integrates `du/dt = N_K(u) + H(u)` and returns the state at each grid time.
pub fn ude_solve(system: &DifferentialSystem, h: &Mlp, t_grid: &[f64], u0: &[f64], step: f64) -> Result<Vec<Vec<f64>>> {
    require_ode(system)?;
    rk4_path(
        |u| {
            let extra = h.forward(u)?;
            Ok(known_at(system, u).iter().zip(extra).map(|(a, b)| a + b).collect())
        },
        u0,
        t_grid,
        step,
    )
}

/// One recorded RK4 step: the state it starts from and the four stage slopes.
struct StepRecord {
    h: f64,
    u: Vec<f64>,
    k: [Vec<f64>; 4],
}

/// Unrolled solve with stage records for the reverse sweep.
struct Unrolled {
    steps: Vec<StepRecord>,
    /// Index into `steps` after which each grid time is reached.
    marks: Vec<usize>,
    states: Vec<Vec<f64>>,
}

fn unroll(system: &DifferentialSystem, net: &Mlp, t_grid: &[f64], u0: &[f64], max_step: f64) -> Result<Unrolled> {
    let mut cache = ForwardCache::default();
    let mut f = |u: &[f64]| -> Result<Vec<f64>> {
        let extra = net.forward_cached(u, &mut cache)?;
        Ok(known_at(system, u).iter().zip(extra).map(|(a, b)| a + b).collect())
    };
    let mut steps = Vec::new();
    let mut marks = vec![0];
    let mut states = vec![u0.to_vec()];
    let mut u = u0.to_vec();
    for w in t_grid.windows(2) {
        let n = substeps(w[0], w[1], max_step);
        let h = (w[1] - w[0]) / n as f64;
        for s in 0..n {
            let axpy = |k: &[f64], a: f64| -> Vec<f64> { u.iter().zip(k).map(|(ui, ki)| ui + a * ki).collect() };
            let k1 = f(&u)?;
            let k2 = f(&axpy(&k1, 0.5 * h))?;
            let k3 = f(&axpy(&k2, 0.5 * h))?;
            let k4 = f(&axpy(&k3, h))?;
            let next: Vec<f64> = (0..u.len())
                .map(|i| u[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect();
            if let Some(v) = next.iter().find(|v| !v.is_finite()) {
                return Err(Error::Integration {
                    time: w[0] + (s + 1) as f64 * h,
                    reason: format!("state became {v}"),
                });
            }
            steps.push(StepRecord {
                h,
                u: std::mem::replace(&mut u, next),
                k: [k1, k2, k3, k4],
            });
        }
        marks.push(steps.len());
        states.push(u.clone());
    }
    Ok(Unrolled { steps, marks, states })
}

/// Adjoint of `f(s) = N_K(s) + H(s)`: adds parameter adjoints into `grad` and
/// returns the state adjoint.
fn field_vjp(
    system: &DifferentialSystem,
    net: &Mlp,
    s: &[f64],
    d_k: &[f64],
    cache: &mut ForwardCache,
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    let m = s.len();
    net.forward_cached(s, cache)?;
    let mut d_s = vec![0.0; m];
    net.vjp(cache, d_k, grad, &mut d_s);
    let tape = Tape::new();
    let vars: Vec<FieldJet<_>> = s
        .iter()
        .map(|&v| {
            let zero = tape.constant(0.0);
            FieldJet {
                u: tape.input(v),
                u_t: zero,
                u_x: zero,
                u_xx: zero,
            }
        })
        .collect();
    let known = system.known(&vars);
    let mut dot = tape.constant(0.0);
    for (k, d) in known.iter().zip(d_k) {
        dot = dot + *k * *d;
    }
    let adj = tape.gradient(dot)?;
    for (ds, v) in d_s.iter_mut().zip(&vars) {
        *ds += adj.wrt(&v.u);
    }
    Ok(d_s)
}

/// Data misfit `mean_k sum_c (u(t_k) - u_k)^2` of the UDE trajectory started
/// from the first record, and its gradient with respect to `H`'s parameters.
pub fn ude_loss_and_grad(
    system: &DifferentialSystem,
    net: &Mlp,
    dataset: &Dataset,
    step: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    require_ode(system)?;
    let (times, targets) = data_grid(dataset)?;
    let run = unroll(system, net, &times, &targets[0], step)?;
    let n = times.len() as f64;
    let m = system.state_dim();
    let mut loss = 0.0;
    let mut d_states = vec![vec![0.0; m]; times.len()];
    for (k, (u, target)) in run.states.iter().zip(&targets).enumerate() {
        for c in 0..m {
            let r = u[c] - target[c];
            loss += r * r;
            d_states[k][c] = 2.0 * r / n;
        }
    }
    let Some(grad) = grad else {
        return Ok(loss / n);
    };
    let mut cache = ForwardCache::default();
    let mut a = d_states[times.len() - 1].clone();
    let mut mark = times.len() - 1;
    for (idx, rec) in run.steps.iter().enumerate().rev() {
        // `a` is the adjoint of the state after step `idx`.
        let h = rec.h;
        let axpy = |k: &[f64], c: f64| -> Vec<f64> { rec.u.iter().zip(k).map(|(ui, ki)| ui + c * ki).collect() };
        let mut d_k: [Vec<f64>; 4] = [
            a.iter().map(|v| v * h / 6.0).collect(),
            a.iter().map(|v| v * h / 3.0).collect(),
            a.iter().map(|v| v * h / 3.0).collect(),
            a.iter().map(|v| v * h / 6.0).collect(),
        ];
        let mut d_u = a.clone();
        let stages = [
            (3, axpy(&rec.k[2], h), h),
            (2, axpy(&rec.k[1], 0.5 * h), 0.5 * h),
            (1, axpy(&rec.k[0], 0.5 * h), 0.5 * h),
        ];
        for (i, s, c) in stages {
            let g = field_vjp(system, net, &s, &d_k[i], &mut cache, grad)?;
            for j in 0..m {
                d_u[j] += g[j];
                d_k[i - 1][j] += c * g[j];
            }
        }
        let g = field_vjp(system, net, &rec.u, &d_k[0], &mut cache, grad)?;
        for j in 0..m {
            d_u[j] += g[j];
        }
        a = d_u;
        while mark > 0 && run.marks[mark - 1] == idx {
            mark -= 1;
            for j in 0..m {
                a[j] += d_states[mark][j];
            }
        }
    }
    Ok(loss / n)
}

fn data_grid(dataset: &Dataset) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if dataset.is_empty() {
        return Err(Error::validation("UDE training needs a nonempty dataset"));
    }
    let mut recs: Vec<_> = dataset.records.iter().collect();
    recs.sort_by(|a, b| a.t.total_cmp(&b.t));
    if recs.windows(2).any(|w| w[0].t == w[1].t) {
        return Err(Error::validation("UDE data must have distinct measurement times"));
    }
    Ok((recs.iter().map(|r| r.t).collect(), recs.iter().map(|r| r.u.clone()).collect()))
}

#[derive(Clone, Debug)]
pub struct UdeOutcome {
    pub network: Mlp,
    pub report: TrainReport,
}

/// Mean over evaluation states and components of `(H_c(u) - true_c(u))^2`,
/// where `true` is the hidden contribution to each state derivative.
pub fn ude_hidden_mse(system: &DifferentialSystem, net: &Mlp, reference: &ReferenceSolution, grid_n: usize) -> Result<f64> {
    let points = evaluation_points(system, reference, grid_n, 0.0)?;
    let mut sum = 0.0;
    for p in &points {
        let u: Vec<f64> = p.fields.iter().map(|f| f.u).collect();
        let pred = net.forward(&u)?;
        let truth = system.embed(&system.hidden_true(&p.fields));
        sum += pred.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sum / (points.len() * system.state_dim()) as f64)
}

/// Adam, then optionally L-BFGS, on the UDE data misfit.
pub fn ude_train(
    system: &DifferentialSystem,
    dataset: &Dataset,
    config: &UdeConfig,
    reference: &ReferenceSolution,
) -> Result<UdeOutcome> {
    config.validate()?;
    require_ode(system)?;
    let start = Instant::now();
    let mut net = init_network(system, dataset, config)?;
    let mut params = net.params().to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len(), config.learning_rate, config.betas);
    let mut trace = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        grad.fill(0.0);
        let loss = ude_loss_and_grad(system, &net, dataset, config.step, Some(&mut grad))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                location: format!("iteration {it}, UDE data loss"),
                value: loss,
            });
        }
        if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("iteration {it}, gradient entry {j}"),
                value: grad[j],
            });
        }
        trace.push(loss);
        adam.step(&mut params, &grad);
        net.params_mut().copy_from_slice(&params);
    }
    let mut lbfgs_done = 0;
    if config.lbfgs_iterations > 0 {
        let options = LbfgsOptions {
            iterations: config.lbfgs_iterations,
            memory: config.lbfgs_memory,
            ..LbfgsOptions::default()
        };
        let mut probe = net.clone();
        let (_, done) = lbfgs(
            |p, g| {
                probe.params_mut().copy_from_slice(p);
                g.fill(0.0);
                let loss = ude_loss_and_grad(system, &probe, dataset, config.step, Some(g))?;
                if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        location: "L-BFGS phase, UDE data loss".into(),
                        value: loss,
                    });
                }
                Ok(loss)
            },
            &mut params,
            &options,
            |_, loss| trace.push(loss),
        )?;
        lbfgs_done = done;
        net.params_mut().copy_from_slice(&params);
    }
    let hidden_mse = ude_hidden_mse(system, &net, reference, config.eval_grid)?;
    let surrogate_mse = {
        let (times, targets) = data_grid(dataset)?;
        let t0 = times[0];
        let t_end = system.domain.horizon;
        let grid: Vec<f64> = (0..config.eval_grid)
            .map(|i| t0 + (t_end - t0) * i as f64 / (config.eval_grid - 1) as f64)
            .collect();
        let path = ude_solve(system, &net, &grid, &targets[0], config.step)?;
        let ReferenceSolution::Ode(traj) = reference else {
            return Err(Error::config("UDE needs an ODE reference"));
        };
        let sum: f64 = grid
            .iter()
            .zip(&path)
            .map(|(t, u)| traj.at(*t).iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        sum / (grid.len() * system.state_dim()) as f64
    };
    let iterations = config.iterations + lbfgs_done;
    let report = TrainReport {
        method: "ude".into(),
        system: system.name.clone(),
        iterations,
        loss_measurement: trace,
        loss_boundary: vec![0.0; iterations],
        loss_pinn: vec![0.0; iterations],
        hidden_mse,
        surrogate_mse,
        scale: None,
        seeds: RunSeeds {
            model: config.seed,
            noise: dataset.noise_seed,
            collocation: None,
        },
        config: serde_json::to_value(config)?,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(UdeOutcome { network: net, report })
}

/// Shared evaluation settings expressed as a trainer config, for callers
/// scoring a UDE network with trainer utilities.
pub fn eval_config(config: &UdeConfig) -> TrainConfig {
    TrainConfig {
        eval_grid: config.eval_grid,
        shock_band: 0.0,
        ..TrainConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{lotka_volterra, HiddenMode, LvParams};
    use crate::sampling::{ode_reference, sample_measurements, TimeSchedule};

    fn lv() -> DifferentialSystem {
        lotka_volterra(LvParams::default(), HiddenMode::Decoupled).unwrap()
    }

    #[test]
    fn zero_network_reproduces_known_part() {
        let sys = lv();
        let net = Mlp::zeros(&[2, 8, 2]).unwrap();
        let grid: Vec<f64> = (0..31).map(|k| k as f64 * 0.1).collect();
        let u0 = sys.initial_state().unwrap();
        let a = ude_solve(&sys, &net, &grid, &u0, 0.01).unwrap();
        let b = rk4_path(|u| Ok(known_at(&sys, u)), &u0, &grid, 0.01).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unrolled_states_match_plain_solve() {
        let sys = lv();
        let net = Mlp::init_glorot(&[2, 5, 2], 3).unwrap();
        let grid = [0.0, 0.25, 0.7, 1.0];
        let u0 = sys.initial_state().unwrap();
        let a = ude_solve(&sys, &net, &grid, &u0, 0.1).unwrap();
        let b = unroll(&sys, &net, &grid, &u0, 0.1).unwrap();
        assert_eq!(a, b.states);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sys = lv();
        let reference = ReferenceSolution::Ode(ode_reference(&sys, 1e-3).unwrap());
        let data = sample_measurements(&sys, &reference, &TimeSchedule::Spacing(0.5), 0).unwrap();
        // 2 -> 2 -> 2 network: 12 parameters.
        let mut net = Mlp::init_glorot(&[2, 2, 2], 11).unwrap();
        let mut grad = vec![0.0; net.params().len()];
        ude_loss_and_grad(&sys, &net, &data, 0.05, Some(&mut grad)).unwrap();
        let base = net.params().to_vec();
        for i in 0..base.len() {
            let h = 1e-6 * base[i].abs().max(1.0);
            net.params_mut()[i] = base[i] + h;
            let up = ude_loss_and_grad(&sys, &net, &data, 0.05, None).unwrap();
            net.params_mut()[i] = base[i] - h;
            let dn = ude_loss_and_grad(&sys, &net, &data, 0.05, None).unwrap();
            net.params_mut()[i] = base[i];
            let fd = (up - dn) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() <= tol, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn oracle_hidden_term_matches_reference() {
        let sys = lv();
        let reference = ode_reference(&sys, 1e-3).unwrap();
        let grid: Vec<f64> = (0..31).map(|k| k as f64 * 0.1).collect();
        let u0 = sys.initial_state().unwrap();
        let path = rk4_path(
            |u| {
                let f: Vec<_> = u.iter().map(|&v| FieldJet::state(v)).collect();
                let known = sys.known(&f);
                let hidden = sys.embed(&sys.hidden_true(&f));
                Ok(known.iter().zip(hidden).map(|(a, b)| a + b).collect())
            },
            &u0,
            &grid,
            0.01,
        )
        .unwrap();
        for (t, u) in grid.iter().zip(&path) {
            let r = reference.at(*t);
            assert!((r[0] - u[0]).abs() < 1e-7 && (r[1] - u[1]).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_iterations_keep_initial_network() {
        let sys = lv();
        let reference = ReferenceSolution::Ode(ode_reference(&sys, 1e-3).unwrap());
        let data = sample_measurements(&sys, &reference, &TimeSchedule::Spacing(0.5), 0).unwrap();
        let cfg = UdeConfig {
            iterations: 0,
            hidden_layers: vec![4],
            ..UdeConfig::default()
        };
        let out = ude_train(&sys, &data, &cfg, &reference).unwrap();
        assert_eq!(out.network, init_network(&sys, &data, &cfg).unwrap());
        assert!(out.report.loss_measurement.is_empty());
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        let sys = lv();
        let mut net = Mlp::zeros(&[2, 1, 2]).unwrap();
        let n = net.params().len();
        net.params_mut()[n - 2] = 1e308;
        match ude_solve(&sys, &net, &[0.0, 1.0], &[1.0, 1.0], 0.1) {
            Err(Error::Integration { time, .. }) => assert!(time > 0.0 && time <= 1.0),
            other => panic!("expected integration failure, got {other:?}"),
        }
    }

    #[test]
    fn pde_rejected() {
        let sys = crate::dynamics::viscous_burgers(0.01).unwrap();
        let net = Mlp::zeros(&[1, 2, 1]).unwrap();
        assert!(matches!(ude_solve(&sys, &net, &[0.0, 1.0], &[0.0], 0.1), Err(Error::Config(_))));
    }
}

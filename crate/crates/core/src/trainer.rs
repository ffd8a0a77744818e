//! Hybrid loss `L = L_M + L_B + L_P` and joint Adam training of the surrogate
//! `U`, the hidden-term network `F`, the optional boundary network `B` and
//! the shared scale `phi`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DerivSpec, JetBatch, Real, Tape, Var};
use crate::dynamics::{BoundaryKind, Derivative, DifferentialSystem, FieldJet, HiddenMode, SystemKind};
use crate::error::{Error, Result};
use crate::neural::Mlp;
pub use crate::optim::Adam;
use crate::optim::{lbfgs, LbfgsOptions};
use crate::sampling::{CollocationSet, Dataset, ReferenceSolution};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub measurement: f64,
    pub boundary: f64,
    pub pinn: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            measurement: 1.0,
            boundary: 1.0,
            pinn: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate reached at the last iteration by geometric decay from
    /// `learning_rate`; `None` keeps it constant.
    pub final_learning_rate: Option<f64>,
    pub betas: (f64, f64),
    pub iterations: usize,
    /// Leading Adam iterations that fit the data alone (residual weight 0).
    pub warmup_iterations: usize,
    /// L-BFGS iterations run after the Adam phase.
    pub lbfgs_iterations: usize,
    pub lbfgs_memory: usize,
    pub weights: LossWeights,
    /// Hidden-layer widths of `U`.
    pub surrogate_layers: Vec<usize>,
    /// Hidden-layer widths of `F`.
    pub hidden_layers: Vec<usize>,
    /// Hidden-layer widths of `B`; `None` disables the boundary network.
    pub boundary_layers: Option<Vec<usize>>,
    /// Overrides the system's hidden mode (Lotka-Volterra only).
    pub hidden_mode: Option<HiddenMode>,
    pub seed: u64,
    /// Number of evaluation times along the reference (per axis for PDEs).
    pub eval_grid: usize,
    /// Half-width of the band around `x = 0` left out of PDE evaluation.
    pub shock_band: f64,
    /// Keep `F` at zero and untrained.
    pub freeze_hidden: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            final_learning_rate: None,
            betas: (0.9, 0.999),
            iterations: 30_000,
            warmup_iterations: 0,
            lbfgs_iterations: 0,
            lbfgs_memory: 20,
            weights: LossWeights::default(),
            surrogate_layers: vec![32, 32, 32],
            hidden_layers: vec![32, 32],
            boundary_layers: None,
            hidden_mode: None,
            seed: 0,
            eval_grid: 300,
            shock_band: 0.05,
            freeze_hidden: false,
        }
    }
}

impl TrainConfig {
    /// Defaults with the iteration count suited to the system type.
    pub fn for_system(system: &DifferentialSystem) -> Self {
        TrainConfig {
            iterations: if system.is_ode() { 30_000 } else { 50_000 },
            ..Self::default()
        }
    }

    /// Step size used at iteration `it`.
    pub fn learning_rate_at(&self, it: usize) -> f64 {
        match self.final_learning_rate {
            Some(end) if self.iterations > 1 => {
                let frac = it as f64 / (self.iterations - 1) as f64;
                self.learning_rate * (end / self.learning_rate).powf(frac)
            }
            _ => self.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if let Some(lr) = self.final_learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("final learning rate {lr} must be positive")));
            }
        }
        if self.iterations + self.lbfgs_iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if self.lbfgs_iterations > 0 && self.lbfgs_memory == 0 {
            return Err(Error::config("lbfgs_memory must be at least 1"));
        }
        if self.warmup_iterations > self.iterations {
            return Err(Error::config("warmup_iterations cannot exceed iterations"));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config(format!("Adam decay pair {:?} must lie in [0, 1)", self.betas)));
        }
        let w = self.weights;
        if [w.measurement, w.boundary, w.pinn].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config(format!("loss weights must be nonnegative: {w:?}")));
        }
        if self.eval_grid < 2 {
            return Err(Error::config("evaluation grid needs at least two points"));
        }
        let nets = [Some(&self.surrogate_layers), Some(&self.hidden_layers), self.boundary_layers.as_ref()];
        if nets.iter().flatten().any(|l| l.contains(&0)) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }

    /// Applies `hidden_mode` to the system.
    pub fn apply_to(&self, system: &DifferentialSystem) -> Result<DifferentialSystem> {
        let mut sys = system.clone();
        if let Some(mode) = self.hidden_mode {
            match &mut sys.kind {
                SystemKind::LotkaVolterra { mode: m, .. } => *m = mode,
                _ if mode == HiddenMode::Decoupled => {}
                _ => return Err(Error::config("shared_scaled hidden mode applies to Lotka-Volterra only")),
            }
        }
        Ok(sys)
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Input map for `F`: value inputs are centred and scaled by the spread of
/// the measured states; derivative inputs pass through unchanged.
fn hidden_input_map(system: &DifferentialSystem, dataset: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let mut shift = Vec::new();
    let mut scale = Vec::new();
    for h in &system.hidden_inputs {
        if h.derivative != Derivative::Value || dataset.is_empty() {
            shift.push(0.0);
            scale.push(1.0);
            continue;
        }
        let vals = dataset.records.iter().map(|r| r.u[h.component]);
        let lo = vals.clone().fold(f64::INFINITY, f64::min);
        let hi = vals.fold(f64::NEG_INFINITY, f64::max);
        let half = ((hi - lo) / 2.0).max(0.5 * lo.abs().max(hi.abs())).max(1e-3);
        shift.push((lo + hi) / 2.0);
        scale.push(1.0 / half);
    }
    (shift, scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridModel {
    pub surrogate: Mlp,
    pub hidden: Mlp,
    pub boundary: Option<Mlp>,
    pub scale: Option<f64>,
}

impl HybridModel {
    pub fn init(system: &DifferentialSystem, dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        let m = system.state_dim();
        let surrogate = Mlp::init_glorot(&widths(system.input_dim(), &config.surrogate_layers, m), config.seed)?
            .with_input_bounds(&system.input_bounds())?;
        let hidden_widths = widths(system.hidden_inputs.len(), &config.hidden_layers, system.hidden_outputs());
        let hidden = if config.freeze_hidden {
            Mlp::zeros(&hidden_widths)?
        } else {
            Mlp::init_glorot(&hidden_widths, config.seed.wrapping_add(1))?
        };
        let (shift, scale) = hidden_input_map(system, dataset);
        let hidden = hidden.with_input_map(shift, scale)?;
        let boundary = match &config.boundary_layers {
            Some(layers) if !system.is_ode() => {
                Some(Mlp::init_glorot(&widths(m, layers, m), config.seed.wrapping_add(2))?)
            }
            _ => None,
        };
        Ok(HybridModel {
            surrogate,
            hidden,
            boundary,
            scale: system.uses_scale().then_some(1.0),
        })
    }

    fn sizes(&self) -> [usize; 4] {
        [
            self.surrogate.params().len(),
            self.hidden.params().len(),
            self.boundary.as_ref().map_or(0, |b| b.params().len()),
            usize::from(self.scale.is_some()),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.sizes().iter().sum()
    }

    /// All trainable parameters: `U`, `F`, `B`, then `phi`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.surrogate.params().to_vec();
        p.extend_from_slice(self.hidden.params());
        if let Some(b) = &self.boundary {
            p.extend_from_slice(b.params());
        }
        p.extend(self.scale);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                p.len()
            )));
        }
        let [nu, nf, nb, _] = self.sizes();
        self.surrogate.params_mut().copy_from_slice(&p[..nu]);
        self.hidden.params_mut().copy_from_slice(&p[nu..nu + nf]);
        if let Some(b) = &mut self.boundary {
            b.params_mut().copy_from_slice(&p[nu + nf..nu + nf + nb]);
        }
        if let Some(s) = &mut self.scale {
            *s = p[nu + nf + nb];
        }
        Ok(())
    }

    /// Expanded hidden terms predicted at one point.
    pub fn hidden_terms(&self, system: &DifferentialSystem, fields: &[FieldJet<f64>]) -> Result<Vec<f64>> {
        let raw = self.hidden.forward(&system.hidden_input_values(fields))?;
        Ok(system.expand(&raw, self.scale))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub measurement: f64,
    pub boundary: f64,
    pub pinn: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.measurement + self.boundary + self.pinn
    }
}

/// Reusable buffers for repeated loss/gradient evaluations.
#[derive(Default)]
pub struct Workspace {
    data: JetBatch,
    bound: JetBatch,
    bnet: JetBatch,
    colloc: JetBatch,
    hidden: JetBatch,
    d_u: Vec<f64>,
    d_aux: Vec<f64>,
    d_in: Vec<f64>,
    f_in: Vec<f64>,
}

fn non_finite(iteration: Option<usize>, term: &str, point: usize, value: f64) -> Error {
    let at = iteration.map_or(String::new(), |i| format!("iteration {i}, "));
    Error::NonFinite {
        location: format!("{at}{term}, point {point}"),
        value,
    }
}

/// `mean_k sum_c (U(x_k, t_k) - u_k)^2`.
pub fn loss_measurement(surrogate: &Mlp, dataset: &Dataset) -> Result<f64> {
    let mut batch = JetBatch::new();
    measurement_term(surrogate, dataset, &mut batch, None, &mut Vec::new(), 1.0, None)
}

fn measurement_term(
    u: &Mlp,
    dataset: &Dataset,
    batch: &mut JetBatch,
    grad: Option<&mut [f64]>,
    d_u: &mut Vec<f64>,
    weight: f64,
    iteration: Option<usize>,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::validation("measurement loss needs a nonempty dataset"));
    }
    batch.evaluate(u, &dataset.inputs(), &DerivSpec::values())?;
    let m = u.output_width();
    let n = dataset.len() as f64;
    let out = batch.output();
    d_u.clear();
    d_u.resize(out.len(), 0.0);
    let mut loss = 0.0;
    for (k, rec) in dataset.records.iter().enumerate() {
        for c in 0..m {
            let r = out[k * m + c] - rec.u[c];
            if !r.is_finite() {
                return Err(non_finite(iteration, "L_M", k, r));
            }
            loss += r * r;
            d_u[k * m + c] = 2.0 * r * weight / n;
        }
    }
    if let Some(g) = grad {
        batch.backward(u, d_u, g, None)?;
    }
    Ok(loss / n)
}

/// `mean_b sum_c (beta_K[U] + B(U))^2` over boundary points.
pub fn loss_boundary(
    surrogate: &Mlp,
    boundary_net: Option<&Mlp>,
    points: &CollocationSet,
    system: &DifferentialSystem,
) -> Result<f64> {
    if system.is_ode() {
        return Err(Error::config("boundary loss requested for an ODE system"));
    }
    let mut ws = Workspace::default();
    boundary_term(surrogate, boundary_net, points, system, &mut ws, None, 1.0, None)
}

#[allow(clippy::too_many_arguments)]
fn boundary_term(
    u: &Mlp,
    bnet: Option<&Mlp>,
    points: &CollocationSet,
    system: &DifferentialSystem,
    ws: &mut Workspace,
    grads: Option<(&mut [f64], &mut [f64])>,
    weight: f64,
    iteration: Option<usize>,
) -> Result<f64> {
    let nb = points.n_boundary();
    if nb == 0 {
        return Ok(0.0);
    }
    let BoundaryKind::Dirichlet { value } = system.boundary else {
        return Err(Error::config("boundary loss needs a Dirichlet boundary"));
    };
    let m = u.output_width();
    ws.bound.evaluate(u, &points.boundary, &DerivSpec::values())?;
    let mut beta: Vec<f64> = ws.bound.output().iter().map(|v| v - value).collect();
    if let Some(b) = bnet {
        ws.bnet.evaluate(b, ws.bound.output(), &DerivSpec::values())?;
        for (r, extra) in beta.iter_mut().zip(ws.bnet.output()) {
            *r += extra;
        }
    }
    let mut loss = 0.0;
    for (i, r) in beta.iter().enumerate() {
        if !r.is_finite() {
            return Err(non_finite(iteration, "L_B", i / m, *r));
        }
        loss += r * r;
    }
    if let Some((gu, gb)) = grads {
        let d_beta: Vec<f64> = beta.iter().map(|r| 2.0 * r * weight / nb as f64).collect();
        let mut d_u = d_beta.clone();
        if let Some(b) = bnet {
            let mut d_in = vec![0.0; d_u.len()];
            ws.bnet.backward(b, &d_beta, gb, Some(&mut d_in))?;
            for (a, d) in d_u.iter_mut().zip(d_in) {
                *a += d;
            }
        }
        ws.bound.backward(u, &d_u, gu, None)?;
    }
    Ok(loss / nb as f64)
}

/// `mean_p sum_c (N_K[U] + F(...) - U_t)^2` over interior collocation points.
pub fn loss_pinn(
    surrogate: &Mlp,
    hidden: &Mlp,
    scale: Option<f64>,
    points: &CollocationSet,
    system: &DifferentialSystem,
) -> Result<f64> {
    let mut ws = Workspace::default();
    pinn_term(surrogate, hidden, scale, points, system, &mut ws, None, 1.0, None)
}

fn surrogate_spec(system: &DifferentialSystem) -> Result<DerivSpec> {
    let t = system.time_coord();
    if system.is_ode() {
        DerivSpec::new(&[t], &[])
    } else {
        DerivSpec::new(&[0, t], &[(0, 0)])
    }
}

fn field_row(spec: &DerivSpec, system: &DifferentialSystem, d: Derivative) -> Option<usize> {
    match d {
        Derivative::Value => Some(0),
        Derivative::T => spec.first_row(system.time_coord()),
        Derivative::X => spec.first_row(0).filter(|_| !system.is_ode()),
        Derivative::Xx => spec.second_row(0, 0).filter(|_| !system.is_ode()),
    }
}

struct PinnGrads<'a> {
    u: &'a mut [f64],
    f: &'a mut [f64],
    scale: Option<&'a mut f64>,
}

#[allow(clippy::too_many_arguments)]
fn pinn_term(
    u: &Mlp,
    f: &Mlp,
    scale: Option<f64>,
    points: &CollocationSet,
    system: &DifferentialSystem,
    ws: &mut Workspace,
    grads: Option<PinnGrads<'_>>,
    weight: f64,
    iteration: Option<usize>,
) -> Result<f64> {
    let np = points.n_interior();
    if np == 0 {
        return Err(Error::validation("PINN loss needs interior collocation points"));
    }
    if f.input_width() != system.hidden_inputs.len() {
        return Err(Error::config(format!(
            "hidden network takes {} inputs but the descriptor lists {}",
            f.input_width(),
            system.hidden_inputs.len()
        )));
    }
    let spec = surrogate_spec(system)?;
    let rows = [Derivative::Value, Derivative::T, Derivative::X, Derivative::Xx].map(|d| field_row(&spec, system, d));
    for h in &system.hidden_inputs {
        if rows[h.derivative as usize].is_none() {
            return Err(Error::config(format!("hidden input {h} needs a derivative the system lacks")));
        }
    }
    let m = system.state_dim();
    let c = spec.components();
    ws.colloc.evaluate(u, &points.interior, &spec)?;
    let uo = ws.colloc.output();
    let fetch = |p: usize, row: Option<usize>, comp: usize| row.map_or(0.0, |r| uo[(p * c + r) * m + comp]);
    let fields_at = |p: usize| -> Vec<FieldJet<f64>> {
        (0..m)
            .map(|comp| FieldJet {
                u: fetch(p, rows[0], comp),
                u_t: fetch(p, rows[1], comp),
                u_x: fetch(p, rows[2], comp),
                u_xx: fetch(p, rows[3], comp),
            })
            .collect()
    };

    let k = system.hidden_inputs.len();
    ws.f_in.clear();
    for p in 0..np {
        ws.f_in.extend(system.hidden_input_values(&fields_at(p)));
    }
    ws.hidden.evaluate(f, &ws.f_in, &DerivSpec::values())?;
    let fo = ws.hidden.output();
    let of = f.output_width();

    let want_grad = grads.is_some();
    let w = weight / np as f64;
    ws.d_u.clear();
    ws.d_u.resize(uo.len(), 0.0);
    ws.d_aux.clear();
    ws.d_aux.resize(fo.len(), 0.0);
    let mut d_scale = 0.0;
    let mut loss = 0.0;
    let mut tape = Tape::with_capacity(64);
    for p in 0..np {
        let fields = fields_at(p);
        {
            let mk = |v: f64, row: Option<usize>| if row.is_some() { tape.input(v) } else { tape.constant(v) };
            let vars: Vec<FieldJet<Var<'_>>> = fields
                .iter()
                .map(|fj| FieldJet {
                    u: mk(fj.u, rows[0]),
                    u_t: mk(fj.u_t, rows[1]),
                    u_x: mk(fj.u_x, rows[2]),
                    u_xx: mk(fj.u_xx, rows[3]),
                })
                .collect();
            let raw: Vec<Var<'_>> = (0..of).map(|o| tape.input(fo[p * of + o])).collect();
            let phi = scale.map(|s| tape.input(s));
            let known = system.known(&vars);
            let hidden = system.embed(&system.expand(&raw, phi));
            let mut local = tape.constant(0.0);
            for comp in 0..m {
                let r = known[comp] + hidden[comp] - vars[comp].u_t;
                if !r.value().is_finite() {
                    return Err(non_finite(iteration, "L_P", p, r.value()));
                }
                local = local + r.square();
            }
            loss += local.value();
            if want_grad {
                let adj = tape.gradient(local)?;
                for (comp, v) in vars.iter().enumerate() {
                    let parts = [v.u, v.u_t, v.u_x, v.u_xx];
                    for (row, var) in rows.iter().zip(parts) {
                        if let Some(r) = row {
                            ws.d_u[(p * c + r) * m + comp] += w * adj.wrt(&var);
                        }
                    }
                }
                for (o, var) in raw.iter().enumerate() {
                    ws.d_aux[p * of + o] = w * adj.wrt(var);
                }
                if let Some(phi) = phi {
                    d_scale += w * adj.wrt(&phi);
                }
            }
        }
        tape.clear();
    }
    if let Some(g) = grads {
        ws.d_in.clear();
        ws.d_in.resize(np * k, 0.0);
        ws.hidden.backward(f, &ws.d_aux, g.f, Some(&mut ws.d_in))?;
        for p in 0..np {
            for (j, h) in system.hidden_inputs.iter().enumerate() {
                let r = rows[h.derivative as usize].expect("checked above");
                ws.d_u[(p * c + r) * m + h.component] += ws.d_in[p * k + j];
            }
        }
        ws.colloc.backward(u, &ws.d_u, g.u, None)?;
        if let Some(s) = g.scale {
            *s += d_scale;
        }
    }
    Ok(loss / np as f64)
}

/// Inputs of one loss evaluation.
pub struct Problem<'a> {
    pub system: &'a DifferentialSystem,
    pub dataset: &'a Dataset,
    pub collocation: &'a CollocationSet,
    pub weights: LossWeights,
}

impl Problem<'_> {
    /// Loss parts and (optionally) the gradient of the weighted total with
    /// respect to [`HybridModel::params`].
    pub fn evaluate(
        &self,
        model: &HybridModel,
        grad: Option<&mut [f64]>,
        ws: &mut Workspace,
        iteration: Option<usize>,
    ) -> Result<LossParts> {
        let [nu, nf, nb, _] = model.sizes();
        let w = self.weights;
        let mut parts = LossParts::default();
        let mut d_u = Vec::new();
        match grad {
            None => {
                parts.measurement =
                    measurement_term(&model.surrogate, self.dataset, &mut ws.data, None, &mut d_u, 1.0, iteration)?;
                if !self.system.is_ode() {
                    parts.boundary = boundary_term(
                        &model.surrogate,
                        model.boundary.as_ref(),
                        self.collocation,
                        self.system,
                        ws,
                        None,
                        1.0,
                        iteration,
                    )?;
                }
                parts.pinn = pinn_term(
                    &model.surrogate,
                    &model.hidden,
                    model.scale,
                    self.collocation,
                    self.system,
                    ws,
                    None,
                    1.0,
                    iteration,
                )?;
            }
            Some(g) => {
                g.fill(0.0);
                let (gu, rest) = g.split_at_mut(nu);
                let (gf, rest) = rest.split_at_mut(nf);
                let (gb, gs) = rest.split_at_mut(nb);
                parts.measurement = measurement_term(
                    &model.surrogate,
                    self.dataset,
                    &mut ws.data,
                    Some(&mut *gu),
                    &mut d_u,
                    w.measurement,
                    iteration,
                )?;
                if !self.system.is_ode() {
                    parts.boundary = boundary_term(
                        &model.surrogate,
                        model.boundary.as_ref(),
                        self.collocation,
                        self.system,
                        ws,
                        Some((&mut *gu, &mut *gb)),
                        w.boundary,
                        iteration,
                    )?;
                }
                parts.pinn = pinn_term(
                    &model.surrogate,
                    &model.hidden,
                    model.scale,
                    self.collocation,
                    self.system,
                    ws,
                    Some(PinnGrads {
                        u: gu,
                        f: gf,
                        scale: gs.first_mut(),
                    }),
                    w.pinn,
                    iteration,
                )?;
            }
        }
        Ok(parts)
    }

    /// Weighted total loss.
    pub fn total(&self, parts: &LossParts) -> f64 {
        let w = self.weights;
        w.measurement * parts.measurement + w.boundary * parts.boundary + w.pinn * parts.pinn
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub model: u64,
    pub noise: Option<u64>,
    pub collocation: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: String,
    pub system: String,
    pub iterations: usize,
    pub loss_measurement: Vec<f64>,
    pub loss_boundary: Vec<f64>,
    pub loss_pinn: Vec<f64>,
    pub hidden_mse: f64,
    pub surrogate_mse: f64,
    pub scale: Option<f64>,
    pub seeds: RunSeeds,
    pub config: serde_json::Value,
    /// Wall-clock seconds; kept out of the serialized report so that reports
    /// of repeated runs compare bit-identically.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> LossParts {
        let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
        LossParts {
            measurement: last(&self.loss_measurement),
            boundary: last(&self.loss_boundary),
            pinn: last(&self.loss_pinn),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `iteration,L_M,L_B,L_P`.
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "L_M", "L_B", "L_P"])?;
        for i in 0..self.loss_measurement.len() {
            w.write_record([
                i.to_string(),
                self.loss_measurement[i].to_string(),
                self.loss_boundary[i].to_string(),
                self.loss_pinn[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: HybridModel,
    pub report: TrainReport,
}

fn check_consistency(system: &DifferentialSystem, dataset: &Dataset, colloc: &CollocationSet) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    if dataset.state_dim() != system.state_dim() || dataset.records.iter().any(|r| r.u.len() != system.state_dim()) {
        return Err(Error::validation("dataset state width does not match the system"));
    }
    if dataset.records.iter().any(|r| r.x.len() != system.domain.spatial_dim()) {
        return Err(Error::validation("dataset spatial width does not match the system"));
    }
    if colloc.input_dim != system.input_dim() {
        return Err(Error::validation("collocation points have the wrong input width"));
    }
    Ok(())
}

/// Runs Adam, then optionally L-BFGS, on the hybrid loss. Deterministic
/// given the config seed and the inputs. The reference is used only for the final scores.
pub fn train(
    system: &DifferentialSystem,
    dataset: &Dataset,
    collocation: &CollocationSet,
    config: &TrainConfig,
    reference: &ReferenceSolution,
) -> Result<TrainOutcome> {
    train_with_callback(system, dataset, collocation, config, reference, |_, _| {})
}

/// As [`train`], calling `progress(iteration, parts)` after each evaluation.
pub fn train_with_callback<C: FnMut(usize, &LossParts)>(
    system: &DifferentialSystem,
    dataset: &Dataset,
    collocation: &CollocationSet,
    config: &TrainConfig,
    reference: &ReferenceSolution,
    mut progress: C,
) -> Result<TrainOutcome> {
    config.validate()?;
    let system = config.apply_to(system)?;
    check_consistency(&system, dataset, collocation)?;
    let start = Instant::now();
    let mut model = HybridModel::init(&system, dataset, config)?;
    let problem = Problem {
        system: &system,
        dataset,
        collocation,
        weights: config.weights,
    };
    let warmup = Problem {
        weights: LossWeights {
            pinn: 0.0,
            ..config.weights
        },
        ..problem
    };
    let n = model.param_count();
    let f_range = {
        let nu = model.surrogate.params().len();
        nu..nu + model.hidden.params().len()
    };
    let mut params = model.params();
    let mut grad = vec![0.0; n];
    let mut adam = Adam::new(n, config.learning_rate, config.betas);
    let mut ws = Workspace::default();
    let mut traces = (Vec::new(), Vec::new(), Vec::new());
    let mut lbfgs_done = 0;
    for it in 0..config.iterations {
        let stage = if it < config.warmup_iterations { &warmup } else { &problem };
        let parts = stage.evaluate(&model, Some(&mut grad), &mut ws, Some(it))?;
        if config.freeze_hidden {
            grad[f_range.clone()].fill(0.0);
        }
        if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("iteration {it}, gradient entry {j}"),
                value: grad[j],
            });
        }
        traces.0.push(parts.measurement);
        traces.1.push(parts.boundary);
        traces.2.push(parts.pinn);
        progress(it, &parts);
        adam.set_learning_rate(config.learning_rate_at(it));
        adam.step(&mut params, &grad);
        model.set_params(&params)?;
    }
    if config.lbfgs_iterations > 0 {
        let options = LbfgsOptions {
            iterations: config.lbfgs_iterations,
            memory: config.lbfgs_memory,
            ..LbfgsOptions::default()
        };
        let last = std::cell::Cell::new(LossParts::default());
        let model_cell = std::cell::RefCell::new(&mut model);
        let objective = |p: &[f64], g: &mut [f64]| -> Result<f64> {
            let mut m = model_cell.borrow_mut();
            m.set_params(p)?;
            let parts = problem.evaluate(&m, Some(g), &mut ws, None)?;
            if config.freeze_hidden {
                g[f_range.clone()].fill(0.0);
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    location: format!("L-BFGS phase, gradient entry {j}"),
                    value: g[j],
                });
            }
            last.set(parts);
            Ok(problem.total(&parts))
        };
        let (_, done) = lbfgs(objective, &mut params, &options, |it, _| {
            let parts = last.get();
            traces.0.push(parts.measurement);
            traces.1.push(parts.boundary);
            traces.2.push(parts.pinn);
            progress(config.iterations + it, &parts);
        })?;
        lbfgs_done = done;
        model.set_params(&params)?;
    }
    let hidden_mse = evaluate_hidden_mse(&model.hidden, model.scale, &system, reference, config)?;
    let surrogate_mse = evaluate_surrogate_mse(&model.surrogate, &system, reference, config)?;
    let report = TrainReport {
        method: "pinn".into(),
        system: system.name.clone(),
        iterations: config.iterations + lbfgs_done,
        loss_measurement: traces.0,
        loss_boundary: traces.1,
        loss_pinn: traces.2,
        hidden_mse,
        surrogate_mse,
        scale: model.scale,
        seeds: RunSeeds {
            model: config.seed,
            noise: dataset.noise_seed,
            collocation: Some(collocation.seed),
        },
        config: serde_json::to_value(config)?,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { model, report })
}

/// A point of the evaluation set: network coordinates and reference fields.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub coords: Vec<f64>,
    pub fields: Vec<FieldJet<f64>>,
}

/// Reference states on which hidden terms and surrogates are scored.
///
/// ODEs: `grid_n` times spread uniformly over `[0, T]` along the trajectory,
/// with `u_t` taken from the full right-hand side. PDEs: up to `grid_n`
/// stored time slices times up to `grid_n` grid nodes, leaving out interior
/// nodes with `|x| <= band` and the boundary nodes; `u_x`, `u_xx` are central
/// differences and `u_t` follows from the equation.
pub fn evaluation_points(
    system: &DifferentialSystem,
    reference: &ReferenceSolution,
    grid_n: usize,
    band: f64,
) -> Result<Vec<EvalPoint>> {
    if grid_n < 2 {
        return Err(Error::config("evaluation grid needs at least two points"));
    }
    match reference {
        ReferenceSolution::Ode(traj) => {
            if !system.is_ode() {
                return Err(Error::config("ODE reference given for a PDE system"));
            }
            let t_end = system.domain.horizon.min(traj.horizon());
            Ok((0..grid_n)
                .map(|i| {
                    let t = t_end * i as f64 / (grid_n - 1) as f64;
                    let u = traj.at(t);
                    let rhs = system.ode_rhs(&u);
                    let fields = u
                        .iter()
                        .zip(&rhs)
                        .map(|(&u, &u_t)| FieldJet {
                            u_t,
                            ..FieldJet::state(u)
                        })
                        .collect();
                    EvalPoint { coords: vec![t], fields }
                })
                .collect())
        }
        ReferenceSolution::Pde(grid) => {
            let nu = system
                .viscosity()
                .ok_or_else(|| Error::config("PDE reference given for a non-PDE system"))?;
            let nt = grid.ts.len();
            let nx = grid.nx();
            let t_stride = nt.div_ceil(grid_n).max(1);
            let x_stride = (nx - 2).div_ceil(grid_n).max(1);
            let mut out = Vec::new();
            for ti in (0..nt).step_by(t_stride) {
                for xi in (1..nx - 1).step_by(x_stride) {
                    let x = grid.xs[xi];
                    if x.abs() <= band {
                        continue;
                    }
                    let u = grid.at(ti, xi);
                    let u_x = grid.u_x(ti, xi);
                    let u_xx = grid.u_xx(ti, xi);
                    out.push(EvalPoint {
                        coords: vec![x, grid.ts[ti]],
                        fields: vec![FieldJet {
                            u,
                            u_t: -u * u_x + nu * u_xx,
                            u_x,
                            u_xx,
                        }],
                    });
                }
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenEvaluation {
    pub points: Vec<EvalPoint>,
    /// Hidden-network inputs at each point.
    pub inputs: Vec<Vec<f64>>,
    pub predicted: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
    pub mse: f64,
}

impl HiddenEvaluation {
    /// Columns: coordinates, hidden inputs, then `pred_i`, `true_i` per term.
    pub fn write_csv(&self, path: &Path, system: &DifferentialSystem) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = Vec::new();
        if !system.is_ode() {
            header.push(crate::sampling::SPACE_COLUMN.into());
        }
        header.push("t".into());
        header.extend(system.hidden_input_names());
        for i in 0..system.hidden_terms() {
            header.push(format!("pred_{i}"));
            header.push(format!("true_{i}"));
        }
        w.write_record(&header)?;
        for (i, p) in self.points.iter().enumerate() {
            let mut row: Vec<f64> = p.coords.clone();
            row.extend(&self.inputs[i]);
            for (a, b) in self.predicted[i].iter().zip(&self.truth[i]) {
                row.push(*a);
                row.push(*b);
            }
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Scores an arbitrary hidden-term predictor (expanded terms per point).
pub fn evaluate_hidden_with<P>(
    system: &DifferentialSystem,
    reference: &ReferenceSolution,
    grid_n: usize,
    band: f64,
    mut predict: P,
) -> Result<HiddenEvaluation>
where
    P: FnMut(&[FieldJet<f64>]) -> Result<Vec<f64>>,
{
    let points = evaluation_points(system, reference, grid_n, band)?;
    let mut inputs = Vec::with_capacity(points.len());
    let mut predicted = Vec::with_capacity(points.len());
    let mut truth = Vec::with_capacity(points.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in &points {
        let pred = predict(&p.fields)?;
        let tru = system.hidden_true(&p.fields);
        sum += pred.iter().zip(&tru).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += tru.len();
        inputs.push(system.hidden_input_values(&p.fields));
        predicted.push(pred);
        truth.push(tru);
    }
    let mse = sum / count.max(1) as f64;
    Ok(HiddenEvaluation {
        points,
        inputs,
        predicted,
        truth,
        mse,
    })
}

/// Hidden-term evaluation of a trained `F` (with the shared scale, if any).
pub fn evaluate_hidden(
    hidden: &Mlp,
    scale: Option<f64>,
    system: &DifferentialSystem,
    reference: &ReferenceSolution,
    config: &TrainConfig,
) -> Result<HiddenEvaluation> {
    let points = evaluation_points(system, reference, config.eval_grid, config.shock_band)?;
    let fin: Vec<f64> = points.iter().flat_map(|p| system.hidden_input_values(&p.fields)).collect();
    let batch = JetBatch::forward(hidden, &fin, &DerivSpec::values())?;
    let of = hidden.output_width();
    let mut k = 0;
    evaluate_hidden_with(system, reference, config.eval_grid, config.shock_band, |_| {
        let raw = &batch.output()[k * of..(k + 1) * of];
        k += 1;
        Ok(system.expand(raw, scale))
    })
}

/// Mean over evaluation points of the summed squared hidden-term error.
pub fn evaluate_hidden_mse(
    hidden: &Mlp,
    scale: Option<f64>,
    system: &DifferentialSystem,
    reference: &ReferenceSolution,
    config: &TrainConfig,
) -> Result<f64> {
    Ok(evaluate_hidden(hidden, scale, system, reference, config)?.mse)
}

/// Mean over evaluation points of the summed squared surrogate error.
pub fn evaluate_surrogate_mse(
    surrogate: &Mlp,
    system: &DifferentialSystem,
    reference: &ReferenceSolution,
    config: &TrainConfig,
) -> Result<f64> {
    let points = evaluation_points(system, reference, config.eval_grid, config.shock_band)?;
    let coords: Vec<f64> = points.iter().flat_map(|p| p.coords.iter().copied()).collect();
    let batch = JetBatch::forward(surrogate, &coords, &DerivSpec::values())?;
    let m = system.state_dim();
    let out = batch.output();
    let sum: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.fields
                .iter()
                .enumerate()
                .map(|(c, f)| (out[i * m + c] - f.u).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(sum / (points.len() * m).max(1) as f64)
}

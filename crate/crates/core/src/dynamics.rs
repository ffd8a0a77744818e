//! Differential systems: domain, known operator part, true hidden term (for
//! data synthesis and scoring), hidden-input descriptor and boundary kind.
//!
//! Operators are written once over [`Real`] so the same code evaluates plain
//! states, propagates jets and records on the reverse tape.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Solution value and the derivatives a system may use, for one state
/// component at one space-time point. ODE systems leave the spatial entries
/// at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldJet<S> {
    pub u: S,
    pub u_t: S,
    pub u_x: S,
    pub u_xx: S,
}

impl FieldJet<f64> {
    pub fn state(u: f64) -> Self {
        FieldJet {
            u,
            u_t: 0.0,
            u_x: 0.0,
            u_xx: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivative {
    Value,
    T,
    X,
    Xx,
}

impl Derivative {
    pub fn order(self) -> usize {
        match self {
            Derivative::Value => 0,
            Derivative::T | Derivative::X => 1,
            Derivative::Xx => 2,
        }
    }
}

/// One input of the hidden-term network, e.g. `u0` or `u0_x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HiddenInput {
    pub component: usize,
    pub derivative: Derivative,
}

impl HiddenInput {
    pub fn value(component: usize) -> Self {
        HiddenInput {
            component,
            derivative: Derivative::Value,
        }
    }

    pub fn pick<S: Copy>(&self, fields: &[FieldJet<S>]) -> S {
        let f = &fields[self.component];
        match self.derivative {
            Derivative::Value => f.u,
            Derivative::T => f.u_t,
            Derivative::X => f.u_x,
            Derivative::Xx => f.u_xx,
        }
    }
}

impl fmt::Display for HiddenInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = match self.derivative {
            Derivative::Value => "",
            Derivative::T => "_t",
            Derivative::X => "_x",
            Derivative::Xx => "_xx",
        };
        write!(f, "u{}{}", self.component, suffix)
    }
}

impl FromStr for HiddenInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("bad hidden input {s:?} (expected e.g. u0, u0_x, u1_t)"));
        let rest = s.strip_prefix('u').ok_or_else(bad)?;
        let (idx, derivative) = match rest.split_once('_') {
            None => (rest, Derivative::Value),
            Some((i, "t")) => (i, Derivative::T),
            Some((i, "x")) => (i, Derivative::X),
            Some((i, "xx")) => (i, Derivative::Xx),
            Some(_) => return Err(bad()),
        };
        let component = idx.parse().map_err(|_| bad())?;
        Ok(HiddenInput {
            component,
            derivative,
        })
    }
}

impl TryFrom<String> for HiddenInput {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<HiddenInput> for String {
    fn from(h: HiddenInput) -> String {
        h.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Bounds per spatial dimension; empty for an ODE.
    pub spatial: Vec<(f64, f64)>,
    pub horizon: f64,
}

impl DomainSpec {
    pub fn ode(horizon: f64) -> Self {
        DomainSpec {
            spatial: Vec::new(),
            horizon,
        }
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::validation(format!("time horizon {} must be positive", self.horizon)));
        }
        if let Some((lo, hi)) = self.spatial.iter().find(|(lo, hi)| !(lo < hi)) {
            return Err(Error::validation(format!("spatial bounds [{lo}, {hi}] are not ordered")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BoundaryKind {
    None,
    /// `u = value` on the spatial boundary, known in advance.
    Dirichlet { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenMode {
    /// Both interaction terms learned as separate network outputs.
    #[default]
    Decoupled,
    /// One network output `g` with `F = (-phi * g, g)`; `phi` is learned.
    SharedScaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LvParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub x0: f64,
    pub y0: f64,
}

impl Default for LvParams {
    fn default() -> Self {
        LvParams {
            alpha: 1.3,
            beta: 0.9,
            gamma: 0.8,
            delta: 1.8,
            x0: 0.442_492_96,
            y0: 4.628_059_4,
        }
    }
}

impl LvParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.delta, self.x0, self.y0];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::validation(format!("Lotka-Volterra parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Rate constants of the three-species Akt/p53 apoptosis model.
///
/// The shipped [`Default`] is a placeholder set chosen to give a smooth,
/// non-trivial trajectory; it is not taken from the model's original
/// publication. Supply measured constants through the experiment config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApoptosisParams {
    pub k0: f64,
    pub k1: f64,
    pub km1: f64,
    pub k2: f64,
    pub km3: f64,
    pub kd: f64,
    pub j1: f64,
    pub jm1: f64,
    pub j2: f64,
    pub jm3: f64,
    /// Initial (p53, Akt_s, Akt).
    pub initial: [f64; 3],
    pub horizon: f64,
}

impl Default for ApoptosisParams {
    fn default() -> Self {
        ApoptosisParams {
            k0: 0.05,
            k1: 2.0,
            km1: 0.02,
            k2: 0.4,
            km3: 0.1,
            kd: 0.1,
            j1: 0.1,
            jm1: 0.1,
            j2: 0.2,
            jm3: 0.1,
            initial: [0.248, 0.0973, 0.0027],
            horizon: 10.0,
        }
    }
}

impl ApoptosisParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.k0, self.k1, self.km1, self.k2, self.km3, self.kd, self.j1];
        if rates.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::validation("apoptosis rate constants must be nonnegative"));
        }
        for (name, v) in [("jm1", self.jm1), ("j2", self.j2), ("jm3", self.jm3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!(
                    "apoptosis denominator offset {name} = {v} must be strictly positive"
                )));
            }
        }
        if self.initial.iter().any(|v| !(*v >= 0.0)) || !(self.horizon > 0.0) {
            return Err(Error::validation("apoptosis initial state and horizon must be nonnegative/positive"));
        }
        Ok(())
    }

    pub fn v1<S: Real>(&self, akt_s: S, akt: S) -> S {
        akt * (akt_s + self.j1) * self.k1
    }

    pub fn vm1<S: Real>(&self, akt_s: S) -> S {
        akt_s * self.km1 / (akt_s + self.jm1)
    }

    pub fn v2<S: Real>(&self, p53: S, akt_s: S) -> S {
        akt_s * p53 * self.k2 / (p53 + self.j2)
    }

    pub fn vm3<S: Real>(&self, p53: S, akt_s: S) -> S {
        p53 * akt_s * self.km3 / (akt_s + self.jm3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApoptosisTarget {
    V1,
    V2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SystemKind {
    LotkaVolterra { params: LvParams, mode: HiddenMode },
    Apoptosis { params: ApoptosisParams, target: ApoptosisTarget },
    Burgers { nu: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferentialSystem {
    pub name: String,
    pub domain: DomainSpec,
    pub state_names: Vec<String>,
    pub kind: SystemKind,
    pub hidden_inputs: Vec<HiddenInput>,
    pub boundary: BoundaryKind,
}

/// Lotka-Volterra predator-prey system with the two interaction terms hidden.
pub fn lotka_volterra(params: LvParams, mode: HiddenMode) -> Result<DifferentialSystem> {
    params.validate()?;
    let sys = DifferentialSystem {
        name: "lotka_volterra".into(),
        domain: DomainSpec::ode(3.0),
        state_names: vec!["x".into(), "y".into()],
        kind: SystemKind::LotkaVolterra { params, mode },
        hidden_inputs: vec![HiddenInput::value(0), HiddenInput::value(1)],
        boundary: BoundaryKind::None,
    };
    sys.validate()?;
    Ok(sys)
}

/// Akt/p53 apoptosis model with either `v1` or `v2` hidden.
pub fn cell_apoptosis(params: ApoptosisParams, target: ApoptosisTarget) -> Result<DifferentialSystem> {
    params.validate()?;
    let sys = DifferentialSystem {
        name: "apoptosis".into(),
        domain: DomainSpec::ode(params.horizon),
        state_names: vec!["p53".into(), "Akt_s".into(), "Akt".into()],
        kind: SystemKind::Apoptosis { params, target },
        hidden_inputs: (0..3).map(HiddenInput::value).collect(),
        boundary: BoundaryKind::None,
    };
    sys.validate()?;
    Ok(sys)
}

/// Viscous Burgers on `[-1, 1] x [0, 1]` with `u(x, 0) = -sin(pi x)`, known
/// diffusion and hidden advection `-u u_x`.
pub fn viscous_burgers(nu: f64) -> Result<DifferentialSystem> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::validation(format!("viscosity {nu} must be positive")));
    }
    let sys = DifferentialSystem {
        name: "burgers".into(),
        domain: DomainSpec {
            spatial: vec![(-1.0, 1.0)],
            horizon: 1.0,
        },
        state_names: vec!["u".into()],
        kind: SystemKind::Burgers { nu },
        hidden_inputs: vec![
            HiddenInput::value(0),
            HiddenInput {
                component: 0,
                derivative: Derivative::X,
            },
            HiddenInput {
                component: 0,
                derivative: Derivative::T,
            },
        ],
        boundary: BoundaryKind::Dirichlet { value: 0.0 },
    };
    sys.validate()?;
    Ok(sys)
}

impl DifferentialSystem {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let d = self.domain.spatial_dim();
        if d > 1 {
            return Err(Error::config("only one spatial dimension is supported"));
        }
        match (self.boundary, d) {
            (BoundaryKind::None, 0) | (BoundaryKind::Dirichlet { .. }, 1) => {}
            (BoundaryKind::None, _) => {
                return Err(Error::config("a spatial domain needs a boundary specification"))
            }
            (_, 0) => return Err(Error::config("an ODE system has no boundary")),
            _ => {}
        }
        if self.hidden_inputs.is_empty() {
            return Err(Error::config("hidden-term network needs at least one input"));
        }
        for h in &self.hidden_inputs {
            if h.component >= self.state_dim() {
                return Err(Error::config(format!("hidden input {h} names a missing component")));
            }
            if d == 0 && matches!(h.derivative, Derivative::X | Derivative::Xx) {
                return Err(Error::config(format!("hidden input {h}: ODE systems have no spatial derivatives")));
            }
            if h.derivative.order() > 2 {
                return Err(Error::UnsupportedOrder(h.derivative.order()));
            }
        }
        Ok(())
    }

    /// Replaces the hidden-input descriptor.
    pub fn with_hidden_inputs(mut self, inputs: Vec<HiddenInput>) -> Result<Self> {
        self.hidden_inputs = inputs;
        self.validate()?;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn is_ode(&self) -> bool {
        self.domain.spatial_dim() == 0
    }

    /// Surrogate input width: spatial coordinates followed by time.
    pub fn input_dim(&self) -> usize {
        self.domain.spatial_dim() + 1
    }

    pub fn time_coord(&self) -> usize {
        self.domain.spatial_dim()
    }

    /// Bounds of the surrogate inputs, in input order.
    pub fn input_bounds(&self) -> Vec<(f64, f64)> {
        let mut b = self.domain.spatial.clone();
        b.push((0.0, self.domain.horizon));
        b
    }

    pub fn hidden_mode(&self) -> HiddenMode {
        match self.kind {
            SystemKind::LotkaVolterra { mode, .. } => mode,
            _ => HiddenMode::Decoupled,
        }
    }

    pub fn uses_scale(&self) -> bool {
        self.hidden_mode() == HiddenMode::SharedScaled
    }

    /// Number of outputs of the hidden-term network.
    pub fn hidden_outputs(&self) -> usize {
        match &self.kind {
            SystemKind::LotkaVolterra { mode, .. } => match mode {
                HiddenMode::Decoupled => 2,
                HiddenMode::SharedScaled => 1,
            },
            SystemKind::Apoptosis { .. } | SystemKind::Burgers { .. } => 1,
        }
    }

    /// Number of hidden terms after expansion (the space in which hidden-term
    /// errors are measured).
    pub fn hidden_terms(&self) -> usize {
        match self.kind {
            SystemKind::LotkaVolterra { .. } => 2,
            _ => 1,
        }
    }

    /// Human-readable names of the hidden-term inputs.
    pub fn hidden_input_names(&self) -> Vec<String> {
        self.hidden_inputs
            .iter()
            .map(|h| {
                let base = &self.state_names[h.component];
                match h.derivative {
                    Derivative::Value => base.clone(),
                    Derivative::T => format!("{base}_t"),
                    Derivative::X => format!("{base}_x"),
                    Derivative::Xx => format!("{base}_xx"),
                }
            })
            .collect()
    }

    pub fn hidden_input_values<S: Copy>(&self, fields: &[FieldJet<S>]) -> Vec<S> {
        self.hidden_inputs.iter().map(|h| h.pick(fields)).collect()
    }

    /// Known operator part, one entry per state component.
    pub fn known<S: Real>(&self, f: &[FieldJet<S>]) -> Vec<S> {
        match &self.kind {
            SystemKind::LotkaVolterra { params, .. } => {
                vec![f[0].u * params.alpha, f[1].u * (-params.delta)]
            }
            SystemKind::Apoptosis { params, target } => {
                let (p53, akt_s, akt) = (f[0].u, f[1].u, f[2].u);
                let mut dp53 = -(p53 * params.kd) + params.k0;
                let mut dakt_s = -params.vm1(akt_s) - params.vm3(p53, akt_s);
                match target {
                    ApoptosisTarget::V1 => dp53 = dp53 - params.v2(p53, akt_s),
                    ApoptosisTarget::V2 => dakt_s = dakt_s + params.v1(akt_s, akt),
                }
                vec![dp53, dakt_s, -dakt_s]
            }
            SystemKind::Burgers { nu } => vec![f[0].u_xx * *nu],
        }
    }

    /// True hidden terms (expanded form).
    pub fn hidden_true<S: Real>(&self, f: &[FieldJet<S>]) -> Vec<S> {
        match &self.kind {
            SystemKind::LotkaVolterra { params, .. } => {
                let xy = f[0].u * f[1].u;
                vec![xy * (-params.beta), xy * params.gamma]
            }
            SystemKind::Apoptosis { params, target } => match target {
                ApoptosisTarget::V1 => vec![params.v1(f[1].u, f[2].u)],
                ApoptosisTarget::V2 => vec![params.v2(f[0].u, f[1].u)],
            },
            SystemKind::Burgers { .. } => vec![-(f[0].u * f[0].u_x)],
        }
    }

    /// Maps raw hidden-network outputs to expanded hidden terms.
    pub fn expand<S: Real>(&self, raw: &[S], scale: Option<S>) -> Vec<S> {
        match self.hidden_mode() {
            HiddenMode::SharedScaled => {
                let g = raw[0];
                let phi = scale.expect("shared mode needs a scale");
                vec![-(phi * g), g]
            }
            HiddenMode::Decoupled => raw.to_vec(),
        }
    }

    /// Contribution of expanded hidden terms to each state derivative.
    pub fn embed<S: Real>(&self, hidden: &[S]) -> Vec<S> {
        match &self.kind {
            SystemKind::LotkaVolterra { .. } | SystemKind::Burgers { .. } => hidden.to_vec(),
            SystemKind::Apoptosis { target, .. } => {
                let v = hidden[0];
                let zero = v.lift(0.0);
                match target {
                    ApoptosisTarget::V1 => vec![zero, v, -v],
                    ApoptosisTarget::V2 => vec![-v, zero, zero],
                }
            }
        }
    }

    /// Full right-hand side `N_K + F_true`.
    pub fn rhs<S: Real>(&self, f: &[FieldJet<S>]) -> Vec<S> {
        let known = self.known(f);
        let hidden = self.embed(&self.hidden_true(f));
        known.into_iter().zip(hidden).map(|(a, b)| a + b).collect()
    }

    /// Right-hand side of an ODE system at a plain state.
    pub fn ode_rhs(&self, u: &[f64]) -> Vec<f64> {
        let f: Vec<_> = u.iter().map(|&v| FieldJet::state(v)).collect();
        self.rhs(&f)
    }

    pub fn initial_state(&self) -> Result<Vec<f64>> {
        match &self.kind {
            SystemKind::LotkaVolterra { params, .. } => Ok(vec![params.x0, params.y0]),
            SystemKind::Apoptosis { params, .. } => Ok(params.initial.to_vec()),
            SystemKind::Burgers { .. } => Err(Error::config("PDE initial data is a profile; use initial_profile")),
        }
    }

    /// Initial condition of a PDE system at spatial point `x`.
    pub fn initial_profile(&self, x: f64) -> Vec<f64> {
        match &self.kind {
            SystemKind::Burgers { .. } => vec![-(PI * x).sin()],
            _ => vec![f64::NAN; self.state_dim()],
        }
    }

    pub fn viscosity(&self) -> Option<f64> {
        match self.kind {
            SystemKind::Burgers { nu } => Some(nu),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn fields(u: &[f64]) -> Vec<FieldJet<f64>> {
        u.iter().map(|&v| FieldJet::state(v)).collect()
    }

    #[test]
    fn lv_rhs_at_unit_state() {
        let sys = lotka_volterra(LvParams::default(), HiddenMode::Decoupled).unwrap();
        let r = sys.ode_rhs(&[1.0, 1.0]);
        assert!((r[0] - 0.4).abs() < 1e-15);
        assert!((r[1] + 1.0).abs() < 1e-15);
        for y in [0.0, 2.5, -7.0] {
            let h = sys.hidden_true(&fields(&[0.0, y]));
            assert!(h.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn lv_rejects_nonpositive_params() {
        let p = LvParams {
            beta: 0.0,
            ..LvParams::default()
        };
        assert!(matches!(lotka_volterra(p, HiddenMode::Decoupled), Err(Error::Validation(_))));
    }

    #[test]
    fn shared_mode_expands_with_scale() {
        let sys = lotka_volterra(LvParams::default(), HiddenMode::SharedScaled).unwrap();
        assert_eq!(sys.hidden_outputs(), 1);
        assert_eq!(sys.expand(&[2.0], Some(1.5)), vec![-3.0, 2.0]);
    }

    #[test]
    fn apoptosis_conserves_total_akt() {
        let p = ApoptosisParams::default();
        for target in [ApoptosisTarget::V1, ApoptosisTarget::V2] {
            let sys = cell_apoptosis(p, target).unwrap();
            for state in [[0.248, 0.0973, 0.0027], [1.0, 0.5, 0.2], [0.0, 0.0, 3.0]] {
                let r = sys.ode_rhs(&state);
                assert_eq!(r[1] + r[2], 0.0);
            }
        }
    }

    #[test]
    fn apoptosis_zero_rates_give_zero_rhs() {
        let p = ApoptosisParams {
            k0: 0.0,
            k1: 0.0,
            km1: 0.0,
            k2: 0.0,
            km3: 0.0,
            kd: 0.0,
            ..ApoptosisParams::default()
        };
        let sys = cell_apoptosis(p, ApoptosisTarget::V1).unwrap();
        assert!(sys.ode_rhs(&[0.3, 0.2, 0.1]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn apoptosis_v2_vanishes_without_p53() {
        let p = ApoptosisParams::default();
        assert_eq!(p.v2(0.0, 0.7), 0.0);
        assert_eq!(p.v2(0.0, 123.0), 0.0);
    }

    #[test]
    fn apoptosis_zero_denominator_offset_rejected() {
        let p = ApoptosisParams {
            j2: 0.0,
            ..ApoptosisParams::default()
        };
        assert!(matches!(cell_apoptosis(p, ApoptosisTarget::V2), Err(Error::Validation(_))));
    }

    #[test]
    fn burgers_definition() {
        let sys = viscous_burgers(1.0 / (1000.0 * PI)).unwrap();
        assert_eq!(sys.initial_profile(0.0)[0], 0.0);
        assert!((sys.initial_profile(-0.5)[0] - 1.0).abs() < 1e-15);
        let f = [FieldJet {
            u: 2.0,
            u_t: 0.0,
            u_x: 3.0,
            u_xx: 0.0,
        }];
        assert_eq!(sys.hidden_true(&f), vec![-6.0]);
        assert!(matches!(viscous_burgers(0.0), Err(Error::Validation(_))));
        assert!(matches!(viscous_burgers(-1.0), Err(Error::Validation(_))));
        assert_eq!(sys.hidden_input_names(), vec!["u", "u_x", "u_t"]);
    }

    #[test]
    fn hidden_input_descriptor_round_trip() {
        for s in ["u0", "u1_t", "u0_x", "u2_xx"] {
            let h: HiddenInput = s.parse().unwrap();
            assert_eq!(h.to_string(), s);
            let json = serde_json::to_string(&h).unwrap();
            assert_eq!(serde_json::from_str::<HiddenInput>(&json).unwrap(), h);
        }
        assert!("v0".parse::<HiddenInput>().is_err());
        assert!("u0_xt".parse::<HiddenInput>().is_err());
    }

    #[test]
    fn ode_rejects_spatial_hidden_inputs() {
        let sys = lotka_volterra(LvParams::default(), HiddenMode::Decoupled).unwrap();
        let bad = vec!["u0_x".parse().unwrap()];
        assert!(matches!(sys.with_hidden_inputs(bad), Err(Error::Config(_))));
    }

    #[test]
    fn operators_record_on_tape() {
        let p = ApoptosisParams::default();
        let sys = cell_apoptosis(p, ApoptosisTarget::V2).unwrap();
        let tape = Tape::new();
        let state = [0.3, 0.08, 0.02];
        let vars: Vec<_> = state
            .iter()
            .map(|&v| {
                let u = tape.input(v);
                let z = u.lift(0.0);
                FieldJet { u, u_t: z, u_x: z, u_xx: z }
            })
            .collect();
        let r = sys.known(&vars);
        let g = tape.gradient(r[1]).unwrap();
        let h = 1e-6;
        let mut up = state;
        up[1] += h;
        let mut dn = state;
        dn[1] -= h;
        let fd = (sys.known(&fields(&up))[1] - sys.known(&fields(&dn))[1]) / (2.0 * h);
        assert!((g.wrt(&vars[1].u) - fd).abs() < 1e-8);
    }
}

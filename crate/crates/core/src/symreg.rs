//! Sparse polynomial regression of a trained hidden-term network: sequential
//! thresholded least squares over a monomial library, with Pareto ranking of
//! the models found across a threshold sweep.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::DifferentialSystem;
use crate::error::{Error, Result};
use crate::neural::Mlp;

/// Exponent of each library input.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product()
    }

    /// `1`, `x`, `x*y`, `x^2*y`, ...
    pub fn render(&self, names: &[String]) -> String {
        let parts: Vec<String> = self
            .0
            .iter()
            .zip(names)
            .filter(|(p, _)| **p > 0)
            .map(|(&p, n)| if p == 1 { n.clone() } else { format!("{n}^{p}") })
            .collect();
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join("*")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisLibrary {
    pub input_names: Vec<String>,
    pub terms: Vec<Monomial>,
}

impl BasisLibrary {
    pub fn new(input_names: Vec<String>, terms: Vec<Monomial>) -> Result<Self> {
        for (i, t) in terms.iter().enumerate() {
            if t.0.len() != input_names.len() {
                return Err(Error::config(format!("monomial {i} has the wrong number of exponents")));
            }
            if terms[..i].contains(t) {
                return Err(Error::config(format!(
                    "duplicate library term {}",
                    t.render(&input_names)
                )));
            }
        }
        Ok(BasisLibrary { input_names, terms })
    }

    /// Every monomial of total degree `<= max_degree`, ordered by degree and
    /// then by descending power of the earlier inputs.
    pub fn polynomial(input_names: Vec<String>, max_degree: u32) -> Self {
        let k = input_names.len();
        let mut terms = Vec::new();
        for d in 0..=max_degree {
            let mut current = vec![0u32; k];
            compositions(d, 0, &mut current, &mut terms);
        }
        BasisLibrary { input_names, terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term_name(&self, i: usize) -> String {
        self.terms[i].render(&self.input_names)
    }

    pub fn position(&self, m: &Monomial) -> Option<usize> {
        self.terms.iter().position(|t| t == m)
    }

    /// Parses `x*y`, `x^2`, `1` against the input names.
    pub fn parse_term(&self, s: &str) -> Result<Monomial> {
        let mut powers = vec![0u32; self.input_names.len()];
        if s.trim() == "1" {
            return Ok(Monomial(powers));
        }
        for factor in s.split('*') {
            let (name, p) = match factor.trim().split_once('^') {
                Some((n, p)) => (n, p.parse().map_err(|_| Error::config(format!("bad exponent in {s:?}")))?),
                None => (factor.trim(), 1),
            };
            let i = self
                .input_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::config(format!("unknown input {name:?} in term {s:?}")))?;
            powers[i] += p;
        }
        Ok(Monomial(powers))
    }

    fn row(&self, x: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.eval(x)).collect()
    }
}

fn compositions(remaining: u32, i: usize, current: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if i + 1 == current.len() {
        current[i] = remaining;
        out.push(Monomial(current.clone()));
        return;
    }
    if current.is_empty() {
        return;
    }
    for p in (0..=remaining).rev() {
        current[i] = p;
        compositions(remaining - p, i + 1, current, out);
    }
    current[i] = 0;
}

/// Regression targets: network inputs and one output column per hidden term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTable {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl SampleTable {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.outputs.iter().map(|o| o[j]).collect()
    }
}

/// Raw network outputs at the given input rows.
pub fn evaluate_network_on_data(net: &Mlp, inputs: &[Vec<f64>]) -> Result<SampleTable> {
    let mut outputs = Vec::with_capacity(inputs.len());
    for x in inputs {
        if x.len() != net.input_width() {
            return Err(Error::config(format!(
                "network takes {} inputs, sample has {}",
                net.input_width(),
                x.len()
            )));
        }
        outputs.push(net.forward(x)?);
    }
    Ok(SampleTable {
        inputs: inputs.to_vec(),
        outputs,
    })
}

/// Expanded hidden terms of a trained `F` at plain states (no derivative
/// inputs), e.g. the measured states of the training data.
pub fn evaluate_hidden_on_states(
    system: &DifferentialSystem,
    net: &Mlp,
    scale: Option<f64>,
    states: &[Vec<f64>],
) -> Result<SampleTable> {
    let mut inputs = Vec::with_capacity(states.len());
    let mut outputs = Vec::with_capacity(states.len());
    for u in states {
        if u.len() != system.state_dim() {
            return Err(Error::config("state width does not match the system"));
        }
        let fields: Vec<_> = u.iter().map(|&v| crate::dynamics::FieldJet::state(v)).collect();
        let x = system.hidden_input_values(&fields);
        if x.len() != net.input_width() {
            return Err(Error::config("network input width does not match the hidden-input descriptor"));
        }
        let raw = net.forward(&x)?;
        outputs.push(system.expand(&raw, scale));
        inputs.push(x);
    }
    Ok(SampleTable { inputs, outputs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicTerm {
    pub term: String,
    pub powers: Vec<u32>,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicModel {
    pub terms: Vec<SymbolicTerm>,
    pub mse: f64,
    pub complexity: usize,
    /// Whether the active set equals the declared target set; `None` when no
    /// target was declared.
    pub recovered: Option<bool>,
    pub threshold: f64,
    /// Ridge penalty used in the final fit, if any.
    pub ridge: Option<f64>,
    pub samples: usize,
}

impl SymbolicModel {
    /// Human-readable expression such as `-0.897*x*y`.
    pub fn expression(&self) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut s = String::new();
        for (i, t) in self.terms.iter().enumerate() {
            let c = t.coefficient;
            let sign = if c < 0.0 { "-" } else if i > 0 { "+" } else { "" };
            if i > 0 {
                s.push(' ');
            }
            s.push_str(sign);
            if i > 0 {
                s.push(' ');
            }
            let mag = format!("{:.4}", c.abs());
            if t.term == "1" {
                s.push_str(&mag);
            } else {
                let _ = write!(s, "{mag}*{}", t.term);
            }
        }
        s
    }

    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.term == term).map(|t| t.coefficient)
    }

    /// Sets [`Self::recovered`] against a target monomial set.
    pub fn mark_target(&mut self, target: &[Monomial]) {
        let mut active: Vec<&Vec<u32>> = self.terms.iter().map(|t| &t.powers).collect();
        let mut want: Vec<&Vec<u32>> = target.iter().map(|m| &m.0).collect();
        active.sort();
        want.sort();
        want.dedup();
        self.recovered = Some(active == want);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub threshold: f64,
    /// Ridge penalty relative to the mean squared column norm; `None` means
    /// plain least squares.
    pub ridge: Option<f64>,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            threshold: 0.05,
            ridge: None,
            max_iterations: 50,
        }
    }
}

/// Least squares on the columns `active` of `theta`.
fn solve(theta: &DMatrix<f64>, y: &DVector<f64>, active: &[usize], ridge: Option<f64>) -> Result<Vec<f64>> {
    let a = theta.select_columns(active);
    // Column scaling keeps mixed-degree monomials comparable.
    let norms: Vec<f64> = (0..a.ncols()).map(|j| a.column(j).norm().max(1e-300)).collect();
    let mut a_s = a.clone();
    for (j, n) in norms.iter().enumerate() {
        a_s.column_mut(j).scale_mut(1.0 / n);
    }
    let z = match ridge {
        Some(lambda) => {
            let k = a_s.ncols();
            let mut normal = a_s.transpose() * &a_s;
            for i in 0..k {
                normal[(i, i)] += lambda;
            }
            let rhs = a_s.transpose() * y;
            normal
                .cholesky()
                .ok_or_else(|| Error::Conditioning("ridge normal equations are not positive definite".into()))?
                .solve(&rhs)
        }
        None => {
            let svd = a_s.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let tol = smax * 1e-12 * a_s.nrows().max(a_s.ncols()) as f64;
            let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
            if rank < a_s.ncols() {
                return Err(Error::Conditioning(format!(
                    "design matrix has rank {rank} < {} active terms; enable ridge regularization",
                    a_s.ncols()
                )));
            }
            svd.solve(y, tol).map_err(|e| Error::Conditioning(e.to_string()))?
        }
    };
    Ok(z.iter().zip(&norms).map(|(c, n)| c / n).collect())
}

/// Sequential thresholded least squares: fit, drop coefficients below the
/// threshold, refit, until the active set stops changing.
pub fn sparse_fit(
    inputs: &[Vec<f64>],
    targets: &[f64],
    library: &BasisLibrary,
    options: &FitOptions,
) -> Result<SymbolicModel> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::validation("sample inputs and targets must be nonempty and of equal length"));
    }
    if library.is_empty() {
        return Err(Error::config("empty basis library"));
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != library.input_names.len()) {
        return Err(Error::config(format!(
            "sample has {} inputs, library expects {}",
            bad.len(),
            library.input_names.len()
        )));
    }
    let n = inputs.len();
    let rows: Vec<Vec<f64>> = inputs.iter().map(|x| library.row(x)).collect();
    let theta = DMatrix::from_fn(n, library.len(), |i, j| rows[i][j]);
    let y = DVector::from_column_slice(targets);
    // Columns are scaled to unit norm before solving, so the ridge penalty is
    // relative to that scale.
    let lambda = options.ridge;
    // Plain least squares when determined and well conditioned, ridge otherwise.
    let fit = |active: &[usize]| -> Result<(Vec<f64>, Option<f64>)> {
        if n >= active.len() {
            match solve(&theta, &y, active, None) {
                Ok(c) => return Ok((c, None)),
                Err(e) if lambda.is_none() => return Err(e),
                Err(_) => {}
            }
        }
        match lambda {
            Some(l) => Ok((solve(&theta, &y, active, Some(l))?, Some(l))),
            None => Err(Error::Conditioning(format!(
                "{n} samples for {} library terms; enable ridge regularization",
                active.len()
            ))),
        }
    };
    let mut active: Vec<usize> = (0..library.len()).collect();
    let mut coefs = Vec::new();
    let mut ridge_used = None;
    for _ in 0..options.max_iterations.max(1) {
        if active.is_empty() {
            break;
        }
        (coefs, ridge_used) = fit(&active)?;
        let keep: Vec<usize> = active
            .iter()
            .zip(&coefs)
            .filter(|(_, c)| c.abs() >= options.threshold)
            .map(|(i, _)| *i)
            .collect();
        if keep.len() == active.len() {
            break;
        }
        active = keep;
        coefs.clear();
    }
    if !active.is_empty() && coefs.len() != active.len() {
        (coefs, ridge_used) = fit(&active)?;
    }
    if active.is_empty() {
        ridge_used = None;
    }
    let mut mse = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let pred: f64 = active.iter().zip(&coefs).map(|(&j, c)| c * row[j]).sum();
        mse += (pred - targets[i]).powi(2);
    }
    mse /= n as f64;
    let terms: Vec<SymbolicTerm> = active
        .iter()
        .zip(&coefs)
        .map(|(&j, &c)| SymbolicTerm {
            term: library.term_name(j),
            powers: library.terms[j].0.clone(),
            coefficient: c,
        })
        .collect();
    Ok(SymbolicModel {
        complexity: terms.len(),
        terms,
        mse,
        recovered: None,
        threshold: options.threshold,
        ridge: ridge_used,
        samples: n,
    })
}

/// One model per threshold.
pub fn threshold_sweep(
    inputs: &[Vec<f64>],
    targets: &[f64],
    library: &BasisLibrary,
    thresholds: &[f64],
    ridge: Option<f64>,
) -> Result<Vec<SymbolicModel>> {
    thresholds
        .iter()
        .map(|&threshold| {
            sparse_fit(
                inputs,
                targets,
                library,
                &FitOptions {
                    threshold,
                    ridge,
                    ..FitOptions::default()
                },
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    /// Pareto front index, starting at 1.
    pub front: usize,
    pub model: SymbolicModel,
}

fn dominates(a: &SymbolicModel, b: &SymbolicModel) -> bool {
    a.complexity <= b.complexity && a.mse <= b.mse && (a.complexity < b.complexity || a.mse < b.mse)
}

/// Non-dominated sort on (complexity, MSE). Within a front, lower complexity
/// comes first, then lower MSE. Identical models (same terms) are kept once.
pub fn pareto_rank(models: &[SymbolicModel]) -> Vec<RankedModel> {
    let mut pool: Vec<&SymbolicModel> = Vec::new();
    for m in models {
        if !pool.iter().any(|p| p.terms == m.terms) {
            pool.push(m);
        }
    }
    let mut ranked = Vec::with_capacity(pool.len());
    let mut front = 1;
    while !pool.is_empty() {
        let (mut current, rest): (Vec<&SymbolicModel>, Vec<&SymbolicModel>) = pool
            .iter()
            .partition(|m| !pool.iter().any(|o| dominates(o, m)));
        current.sort_by(|a, b| a.complexity.cmp(&b.complexity).then(a.mse.total_cmp(&b.mse)));
        ranked.extend(current.into_iter().map(|m| RankedModel {
            front,
            model: m.clone(),
        }));
        pool = rest;
        front += 1;
    }
    ranked
}

/// Picks the least complex first-front model whose MSE is at most
/// `tolerance * mean(y^2)`, falling back to the most accurate first-front
/// model when none qualifies.
pub fn select_model<'a>(ranked: &'a [RankedModel], targets: &[f64], tolerance: f64) -> Option<&'a SymbolicModel> {
    let power = targets.iter().map(|y| y * y).sum::<f64>() / targets.len().max(1) as f64;
    let front: Vec<&SymbolicModel> = ranked.iter().filter(|r| r.front == 1).map(|r| &r.model).collect();
    front
        .iter()
        .find(|m| m.mse <= tolerance * power)
        .or_else(|| front.iter().min_by(|a, b| a.mse.total_cmp(&b.mse)))
        .copied()
}

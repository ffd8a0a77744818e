//! First-order and quasi-Newton optimizers over flat parameter vectors.

use std::collections::VecDeque;

use crate::error::Result;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, betas: (f64, f64)) -> Self {
        Adam {
            lr,
            b1: betas.0,
            b2: betas.1,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g;
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Why an L-BFGS run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbfgsStop {
    Iterations,
    /// Gradient norm fell below the tolerance.
    Converged,
    /// No step along the search direction decreased the objective.
    LineSearch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub iterations: usize,
    pub memory: usize,
    pub gradient_tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            iterations: 1000,
            memory: 20,
            gradient_tolerance: 1e-12,
            c1: 1e-4,
            max_backtracks: 30,
        }
    }
}

/// Limited-memory BFGS with backtracking Armijo line search.
///
/// `f(x, grad)` returns the objective and writes its gradient. `accepted` is
/// called with the iteration index and objective after every accepted step.
/// On return `x` holds the best iterate.
pub fn lbfgs<F, C>(mut f: F, x: &mut [f64], options: &LbfgsOptions, mut accepted: C) -> Result<(LbfgsStop, usize)>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
    C: FnMut(usize, f64),
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g)?;
    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut rho: VecDeque<f64> = VecDeque::new();
    let mut d = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha = vec![0.0; options.memory];
    for it in 0..options.iterations {
        if dot(&g, &g).sqrt() <= options.gradient_tolerance {
            return Ok((LbfgsStop::Converged, it));
        }
        // Two-loop recursion for d = -H g.
        d.iter_mut().zip(&g).for_each(|(d, g)| *d = -g);
        for k in (0..s_hist.len()).rev() {
            alpha[k] = rho[k] * dot(&s_hist[k], &d);
            d.iter_mut().zip(&y_hist[k]).for_each(|(d, y)| *d -= alpha[k] * y);
        }
        let gamma = match (s_hist.back(), y_hist.back()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / dot(&g, &g).sqrt().max(1.0),
        };
        d.iter_mut().for_each(|d| *d *= gamma);
        for k in 0..s_hist.len() {
            let beta = rho[k] * dot(&y_hist[k], &d);
            d.iter_mut().zip(&s_hist[k]).for_each(|(d, s)| *d += (alpha[k] - beta) * s);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // Not a descent direction: restart from steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            let scale = 1.0 / dot(&g, &g).sqrt().max(1.0);
            d.iter_mut().zip(&g).for_each(|(d, g)| *d = -g * scale);
            slope = dot(&g, &d);
        }
        let mut step = 1.0;
        let mut found = None;
        for _ in 0..options.max_backtracks {
            trial.iter_mut().zip(x.iter().zip(&d)).for_each(|(t, (x, d))| *t = x + step * d);
            match f(&trial, &mut g_new) {
                Ok(ft) if ft.is_finite() && ft <= fx + options.c1 * step * slope => {
                    found = Some(ft);
                    break;
                }
                Ok(_) | Err(crate::Error::NonFinite { .. }) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some(ft) = found else {
            if s_hist.is_empty() {
                return Ok((LbfgsStop::LineSearch, it));
            }
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            continue;
        };
        let s: Vec<f64> = d.iter().map(|d| step * d).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if s_hist.len() == options.memory {
                s_hist.pop_front();
                y_hist.pop_front();
                rho.pop_front();
            }
            rho.push_back(1.0 / sy);
            s_hist.push_back(s);
            y_hist.push_back(y);
        }
        x.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut g_new);
        fx = ft;
        accepted(it, fx);
    }
    Ok((LbfgsStop::Iterations, options.iterations))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> Result<f64> {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        Ok((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let mut x = vec![-1.2, 1.0];
        let opts = LbfgsOptions {
            iterations: 500,
            ..LbfgsOptions::default()
        };
        let mut last = f64::INFINITY;
        let mut monotone = true;
        lbfgs(rosenbrock, &mut x, &opts, |_, f| {
            monotone &= f <= last;
            last = f;
        })
        .unwrap();
        assert!(monotone);
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn lbfgs_quadratic_converges_fast() {
        let diag = [1.0, 10.0, 100.0];
        let f = |x: &[f64], g: &mut [f64]| -> Result<f64> {
            let mut v = 0.0;
            for i in 0..3 {
                g[i] = diag[i] * (x[i] - 1.0);
                v += 0.5 * diag[i] * (x[i] - 1.0).powi(2);
            }
            Ok(v)
        };
        let mut x = vec![0.0; 3];
        let (stop, its) = lbfgs(f, &mut x, &LbfgsOptions::default(), |_, _| {}).unwrap();
        assert_eq!(stop, LbfgsStop::Converged);
        assert!(its < 30);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut a = Adam::new(2, 0.1, (0.9, 0.999));
        a.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }
}

//! Finite-difference reference solver for viscous Burgers on `[-1, 1]` with
//! homogeneous Dirichlet boundaries and `u(x, 0) = -sin(pi x)`.
//!
//! Each step advances the conservative advection term explicitly (MC-limited
//! reconstruction, Rusanov flux, SSP-RK2) and then the diffusion term
//! implicitly (Crank-Nicolson, tridiagonal solve).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurgersSettings {
    /// Number of grid intervals; the grid has `intervals + 1` nodes.
    pub intervals: usize,
    /// Number of stored time slices, uniformly spaced over `[0, horizon]`.
    pub output_times: usize,
    pub horizon: f64,
    /// Target advective Courant number.
    pub cfl: f64,
}

impl Default for BurgersSettings {
    fn default() -> Self {
        BurgersSettings {
            intervals: 2048,
            output_times: 201,
            horizon: 1.0,
            cfl: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub scheme: String,
    pub intervals: usize,
    pub steps: usize,
    pub smallest_dt: f64,
}

/// Dense space-time solution, `u[ti * xs.len() + xi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub nu: f64,
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub u: Vec<f64>,
    pub meta: SolverMeta,
}

impl FieldGrid {
    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn slice(&self, ti: usize) -> &[f64] {
        let n = self.nx();
        &self.u[ti * n..(ti + 1) * n]
    }

    pub fn dx(&self) -> f64 {
        self.xs[1] - self.xs[0]
    }

    pub fn at(&self, ti: usize, xi: usize) -> f64 {
        self.u[ti * self.nx() + xi]
    }

    /// Central first difference at an interior node.
    pub fn u_x(&self, ti: usize, xi: usize) -> f64 {
        let s = self.slice(ti);
        (s[xi + 1] - s[xi - 1]) / (self.xs[xi + 1] - self.xs[xi - 1])
    }

    /// Central second difference at an interior node.
    pub fn u_xx(&self, ti: usize, xi: usize) -> f64 {
        let s = self.slice(ti);
        let h = self.dx();
        (s[xi + 1] - 2.0 * s[xi] + s[xi - 1]) / (h * h)
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.ts.iter().position(|&s| (s - t).abs() < 1e-9)
    }

    /// Linear interpolation in `x` on slice `ti`.
    pub fn interpolate(&self, ti: usize, x: f64) -> f64 {
        let s = self.slice(ti);
        let n = self.nx();
        let i = self.xs.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
        let w = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        (1.0 - w) * s[i] + w * s[i + 1]
    }
}

/// Grid nodes on `[-1, 1]`, built so that `x[n - 1 - i] == -x[i]` exactly.
fn symmetric_nodes(intervals: usize) -> Vec<f64> {
    let n = intervals + 1;
    let mut xs = vec![0.0; n];
    for i in 0..n / 2 + n % 2 {
        let v = -1.0 + 2.0 * i as f64 / intervals as f64;
        xs[i] = v;
        xs[n - 1 - i] = -v;
    }
    if n % 2 == 1 {
        xs[n / 2] = 0.0;
    }
    xs
}

fn minmod3(a: f64, b: f64, c: f64) -> f64 {
    if a > 0.0 && b > 0.0 && c > 0.0 {
        a.min(b).min(c)
    } else if a < 0.0 && b < 0.0 && c < 0.0 {
        a.max(b).max(c)
    } else {
        0.0
    }
}

/// Advective tendency `-(f(u))_x`, zero on the boundary nodes.
fn advection(u: &[f64], dx: f64, slope: &mut [f64], flux: &mut [f64], out: &mut [f64]) {
    let n = u.len();
    slope[0] = 0.0;
    slope[n - 1] = 0.0;
    for i in 1..n - 1 {
        let (a, b) = (u[i] - u[i - 1], u[i + 1] - u[i]);
        slope[i] = minmod3(2.0 * a, 0.5 * (a + b), 2.0 * b);
    }
    for i in 0..n - 1 {
        let ul = u[i] + 0.5 * slope[i];
        let ur = u[i + 1] - 0.5 * slope[i + 1];
        let speed = ul.abs().max(ur.abs());
        flux[i] = 0.25 * (ul * ul + ur * ur) - 0.5 * speed * (ur - ul);
    }
    out[0] = 0.0;
    out[n - 1] = 0.0;
    for i in 1..n - 1 {
        out[i] = -(flux[i] - flux[i - 1]) / dx;
    }
}

/// Solves the Crank-Nicolson diffusion system in place with zero boundary
/// values. `r = nu * dt / (2 dx^2)`.
fn diffuse(u: &mut [f64], r: f64, rhs: &mut [f64], c_prime: &mut [f64]) {
    let n = u.len();
    for i in 1..n - 1 {
        rhs[i] = (1.0 - 2.0 * r) * u[i] + r * (u[i - 1] + u[i + 1]);
    }
    // Thomas algorithm on interior nodes 1..n-1 (boundary values are 0).
    let (a, b) = (-r, 1.0 + 2.0 * r);
    c_prime[1] = a / b;
    rhs[1] /= b;
    for i in 2..n - 1 {
        let m = b - a * c_prime[i - 1];
        c_prime[i] = a / m;
        rhs[i] = (rhs[i] - a * rhs[i - 1]) / m;
    }
    u[n - 2] = rhs[n - 2];
    for i in (1..n - 2).rev() {
        u[i] = rhs[i] - c_prime[i] * u[i + 1];
    }
    u[0] = 0.0;
    u[n - 1] = 0.0;
}

pub fn burgers_reference(nu: f64, settings: &BurgersSettings) -> Result<FieldGrid> {
    if !(nu > 0.0) {
        return Err(Error::validation(format!("viscosity {nu} must be positive")));
    }
    if settings.intervals < 4 || settings.output_times < 2 || !(settings.horizon > 0.0) {
        return Err(Error::config("Burgers grid needs >= 4 intervals, >= 2 output times and a positive horizon"));
    }
    let xs = symmetric_nodes(settings.intervals);
    let n = xs.len();
    let dx = 2.0 / settings.intervals as f64;
    let nt = settings.output_times;
    let ts: Vec<f64> = (0..nt)
        .map(|k| settings.horizon * k as f64 / (nt - 1) as f64)
        .collect();

    let mut u: Vec<f64> = xs.iter().map(|&x| -(PI * x).sin()).collect();
    u[0] = 0.0;
    u[n - 1] = 0.0;
    let mut out = Vec::with_capacity(nt * n);
    out.extend_from_slice(&u);

    let (mut slope, mut flux) = (vec![0.0; n], vec![0.0; n]);
    let (mut k1, mut k2) = (vec![0.0; n], vec![0.0; n]);
    let mut stage = vec![0.0; n];
    let (mut rhs, mut cp) = (vec![0.0; n], vec![0.0; n]);
    let mut steps = 0;
    let mut smallest_dt = f64::INFINITY;

    for w in ts.windows(2) {
        let span = w[1] - w[0];
        let start = u.clone();
        let mut refine = 1.0;
        'attempt: loop {
            u.copy_from_slice(&start);
            let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let dt_cfl = settings.cfl * dx / umax / refine;
            let m = (span / dt_cfl).ceil().max(1.0) as usize;
            let dt = span / m as f64;
            let r = nu * dt / (2.0 * dx * dx);
            for s in 0..m {
                advection(&u, dx, &mut slope, &mut flux, &mut k1);
                for i in 0..n {
                    stage[i] = u[i] + dt * k1[i];
                }
                advection(&stage, dx, &mut slope, &mut flux, &mut k2);
                for i in 0..n {
                    u[i] = 0.5 * u[i] + 0.5 * (stage[i] + dt * k2[i]);
                }
                diffuse(&mut u, r, &mut rhs, &mut cp);
                let new_max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if !new_max.is_finite() {
                    return Err(Error::Integration {
                        time: w[0] + (s + 1) as f64 * dt,
                        reason: "non-finite solution".into(),
                    });
                }
                if new_max * dt / dx > 0.9 {
                    refine *= 2.0;
                    if refine > 1024.0 {
                        return Err(Error::Integration {
                            time: w[0] + (s + 1) as f64 * dt,
                            reason: "CFL condition cannot be restored".into(),
                        });
                    }
                    continue 'attempt;
                }
            }
            steps += m;
            smallest_dt = smallest_dt.min(dt);
            break;
        }
        out.extend_from_slice(&u);
    }

    Ok(FieldGrid {
        nu,
        xs,
        ts,
        u: out,
        meta: SolverMeta {
            scheme: "MC-limited Rusanov advection (SSP-RK2) + Crank-Nicolson diffusion".into(),
            intervals: settings.intervals,
            steps,
            smallest_dt,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nu() -> f64 {
        1.0 / (1000.0 * PI)
    }

    #[test]
    fn initial_slice_is_exact() {
        let g = burgers_reference(nu(), &BurgersSettings { intervals: 256, ..Default::default() }).unwrap();
        for (x, u) in g.xs.iter().zip(g.slice(0)) {
            let expect = if x.abs() == 1.0 { 0.0 } else { -(PI * x).sin() };
            assert_eq!(*u, expect);
        }
    }

    #[test]
    fn nodes_are_mirror_symmetric() {
        let xs = symmetric_nodes(2048);
        assert_eq!(xs.len(), 2049);
        assert_eq!(xs[1024], 0.0);
        for i in 0..xs.len() {
            assert_eq!(xs[i], -xs[xs.len() - 1 - i]);
        }
    }

    #[test]
    fn stays_bounded_and_decays() {
        let g = burgers_reference(nu(), &BurgersSettings { intervals: 512, ..Default::default() }).unwrap();
        let last = g.slice(g.ts.len() - 1);
        let m = last.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(m <= 1.0 + 1e-12 && m > 0.3);
    }

    #[test]
    fn rejects_bad_viscosity() {
        assert!(burgers_reference(0.0, &BurgersSettings::default()).is_err());
    }
}

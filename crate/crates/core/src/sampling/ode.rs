use serde::{Deserialize, Serialize};

use crate::dynamics::DifferentialSystem;
use crate::error::{Error, Result};

/// Default internal step of the reference integrator.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Number of equal sub-steps used to cross `[t0, t1]` with steps no longer
/// than `max_step`.
pub fn substeps(t0: f64, t1: f64, max_step: f64) -> usize {
    (((t1 - t0) / max_step) - 1e-9).ceil().max(1.0) as usize
}

/// One classical fourth-order Runge-Kutta step for an autonomous field.
pub fn rk4_step<F>(f: &mut F, u: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let axpy = |k: &[f64], a: f64| -> Vec<f64> { u.iter().zip(k).map(|(ui, ki)| ui + a * ki).collect() };
    let k1 = f(u)?;
    let k2 = f(&axpy(&k1, 0.5 * h))?;
    let k3 = f(&axpy(&k2, 0.5 * h))?;
    let k4 = f(&axpy(&k3, h))?;
    Ok((0..u.len())
        .map(|i| u[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrates `du/dt = f(u)` from `t_grid[0]` and returns the state at every
/// grid time. Each grid interval is split into equal steps of at most
/// `max_step`.
pub fn rk4_path<F>(mut f: F, u0: &[f64], t_grid: &[f64], max_step: f64) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    check_grid(t_grid)?;
    if !(max_step > 0.0) {
        return Err(Error::config("integration step must be positive"));
    }
    let mut out = Vec::with_capacity(t_grid.len());
    let mut u = u0.to_vec();
    out.push(u.clone());
    for w in t_grid.windows(2) {
        let n = substeps(w[0], w[1], max_step);
        let h = (w[1] - w[0]) / n as f64;
        for s in 0..n {
            u = rk4_step(&mut f, &u, h)?;
            if let Some(v) = u.iter().find(|v| !v.is_finite()) {
                return Err(Error::Integration {
                    time: w[0] + (s + 1) as f64 * h,
                    reason: format!("state became {v}"),
                });
            }
        }
        out.push(u.clone());
    }
    Ok(out)
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::config("empty time grid"));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("time grid must be strictly ascending"));
    }
    Ok(())
}

/// Dense ODE solution with slopes, interpolated by cubic Hermite polynomials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub slopes: Vec<Vec<f64>>,
    pub step: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// State at time `t` (clamped to the covered interval).
    pub fn at(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (h00, h10) = (2.0 * s * s * s - 3.0 * s * s + 1.0, s * s * s - 2.0 * s * s + s);
        let (h01, h11) = (-2.0 * s * s * s + 3.0 * s * s, s * s * s - s * s);
        (0..self.states[i].len())
            .map(|c| {
                h00 * self.states[i][c]
                    + h10 * h * self.slopes[i][c]
                    + h01 * self.states[i + 1][c]
                    + h11 * h * self.slopes[i + 1][c]
            })
            .collect()
    }
}

/// Integrates an ODE system with classical RK4 and samples it at `t_grid`
/// (ascending, starting at 0).
pub fn rk4_integrate(system: &DifferentialSystem, t_grid: &[f64], step: f64) -> Result<Trajectory> {
    if !system.is_ode() {
        return Err(Error::config(format!("{} is not an ODE system", system.name)));
    }
    check_grid(t_grid)?;
    if t_grid[0] != 0.0 {
        return Err(Error::config("time grid must start at t = 0"));
    }
    let u0 = system.initial_state()?;
    let states = rk4_path(|u| Ok(system.ode_rhs(u)), &u0, t_grid, step)?;
    let slopes = states.iter().map(|u| system.ode_rhs(u)).collect();
    Ok(Trajectory {
        times: t_grid.to_vec(),
        states,
        slopes,
        step,
    })
}

/// Dense reference trajectory on a uniform grid of spacing `step` over the
/// system horizon.
pub fn ode_reference(system: &DifferentialSystem, step: f64) -> Result<Trajectory> {
    let horizon = system.domain.horizon;
    let n = substeps(0.0, horizon, step);
    let grid: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    rk4_integrate(system, &grid, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{lotka_volterra, HiddenMode, LvParams};

    #[test]
    fn constant_field() {
        let path = rk4_path(|u| Ok(vec![0.0; u.len()]), &[2.5, -1.0], &[0.0, 0.7, 3.0], 1e-3).unwrap();
        assert!(path.iter().all(|u| u == &vec![2.5, -1.0]));
    }

    #[test]
    fn exponential_growth() {
        let path = rk4_path(|u| Ok(u.to_vec()), &[1.0], &[0.0, 1.0], 1e-3).unwrap();
        assert!((path[1][0] - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |h: f64| {
            let p = rk4_path(|u| Ok(u.to_vec()), &[1.0], &[0.0, 1.0], h).unwrap();
            (p[1][0] - std::f64::consts::E).abs()
        };
        let (e1, e2, e3) = (err(1e-2), err(5e-3), err(2.5e-3));
        for ratio in [e1 / e2, e2 / e3] {
            assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
        }
    }

    #[test]
    fn blow_up_reports_time() {
        match rk4_path(|u| Ok(vec![u[0] * u[0] * 1e3]), &[1e3], &[0.0, 1.0], 1e-2) {
            Err(Error::Integration { time, .. }) => assert!(time > 0.0 && time <= 1.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn lv_step_refinement() {
        let sys = lotka_volterra(LvParams::default(), HiddenMode::Decoupled).unwrap();
        let grid = [0.0, 3.0];
        let a = rk4_integrate(&sys, &grid, 2e-2).unwrap();
        let b = rk4_integrate(&sys, &grid, 1e-2).unwrap();
        let c = rk4_integrate(&sys, &grid, 5e-3).unwrap();
        for i in 0..2 {
            let d1 = (a.states[1][i] - b.states[1][i]).abs();
            let d2 = (b.states[1][i] - c.states[1][i]).abs();
            assert!(d1 < 1e-4, "component {i}: {d1}");
            assert!(d1 / d2 > 12.0 && d1 / d2 < 20.0, "ratio {}", d1 / d2);
        }
    }

    #[test]
    fn initial_slope_matches_rhs() {
        let sys = lotka_volterra(LvParams::default(), HiddenMode::Decoupled).unwrap();
        let u0 = sys.initial_state().unwrap();
        let h = 1e-3;
        let grid: Vec<f64> = (0..5).map(|k| k as f64 * h).collect();
        let p = rk4_integrate(&sys, &grid, 1e-5).unwrap();
        // Fourth-order one-sided difference at t = 0.
        let c = [-25.0, 48.0, -36.0, 16.0, -3.0];
        for i in 0..2 {
            let slope: f64 = c.iter().zip(&p.states).map(|(c, s)| c * s[i]).sum::<f64>() / (12.0 * h);
            assert!((slope - sys.ode_rhs(&u0)[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn hermite_interpolation_is_accurate() {
        let sys = lotka_volterra(LvParams::default(), HiddenMode::Decoupled).unwrap();
        let dense = ode_reference(&sys, 1e-3).unwrap();
        let t = 1.2345678;
        let direct = rk4_integrate(&sys, &[0.0, t], 1e-4).unwrap();
        let interp = dense.at(t);
        for i in 0..2 {
            assert!((interp[i] - direct.states[1][i]).abs() < 1e-10);
        }
    }
}

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;

/// Second-order forward jet over `N` tagged directions.
///
/// `d1[k]` holds the first partial along direction `k`, `d2[k][l]` the mixed
/// second partial. `d2` stays symmetric under every operation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub value: f64,
    pub d1: [f64; N],
    pub d2: [[f64; N]; N],
}

impl<const N: usize> Jet<N> {
    pub fn constant(value: f64) -> Self {
        Jet {
            value,
            d1: [0.0; N],
            d2: [[0.0; N]; N],
        }
    }

    /// The independent variable for direction `k`.
    pub fn variable(value: f64, k: usize) -> Self {
        let mut j = Self::constant(value);
        j.d1[k] = 1.0;
        j
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.value`.
    fn chain(self, f: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self::constant(f);
        for k in 0..N {
            out.d1[k] = f1 * self.d1[k];
        }
        for k in 0..N {
            for l in 0..N {
                out.d2[k][l] = f1 * self.d2[k][l] + f2 * self.d1[k] * self.d1[l];
            }
        }
        out
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.value;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.value += rhs.value;
        for k in 0..N {
            self.d1[k] += rhs.d1[k];
            for l in 0..N {
                self.d2[k][l] += rhs.d2[k][l];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(mut self) -> Self {
        self.value = -self.value;
        for k in 0..N {
            self.d1[k] = -self.d1[k];
            for l in 0..N {
                self.d2[k][l] = -self.d2[k][l];
            }
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.value * rhs.value);
        for k in 0..N {
            out.d1[k] = self.value * rhs.d1[k] + rhs.value * self.d1[k];
        }
        for k in 0..N {
            for l in 0..N {
                out.d2[k][l] = self.value * rhs.d2[k][l]
                    + rhs.value * self.d2[k][l]
                    + self.d1[k] * rhs.d1[l]
                    + self.d1[l] * rhs.d1[k];
            }
        }
        out
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.value += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.value -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        self.value *= rhs;
        for k in 0..N {
            self.d1[k] *= rhs;
            for l in 0..N {
                self.d2[k][l] *= rhs;
            }
        }
        self
    }
}

impl<const N: usize> Div<f64> for Jet<N> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<const N: usize> Real for Jet<N> {
    fn value(&self) -> f64 {
        self.value
    }
    fn lift(&self, c: f64) -> Self {
        Self::constant(c)
    }
    fn tanh(self) -> Self {
        let s = self.value.tanh();
        let s1 = 1.0 - s * s;
        self.chain(s, s1, -2.0 * s * s1)
    }
    fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }
}

//! Batched second-order jets through an [`Mlp`] and the reverse sweep over
//! them.
//!
//! Activations for a batch of `P` points are stored as a `(P * C) x width`
//! row-major matrix where `C` is the number of jet components: one value row,
//! one row per first-order direction and one row per requested second-order
//! pair. Every component passes through the same weight matrix (only the value
//! row receives the bias), so each layer is a single gemm.

use crate::error::{Error, Result};
use crate::neural::{activation, Mlp};

/// Which input derivatives to propagate.
///
/// `first` lists input coordinates; `second` lists pairs of positions in
/// `first`. Row order within a point is: value, `first...`, `second...`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivSpec {
    first: Vec<usize>,
    second: Vec<(usize, usize)>,
}

impl DerivSpec {
    pub fn values() -> Self {
        DerivSpec {
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// First-order directions `first` (input coordinates) and second-order
    /// pairs `second` (also input coordinates; each must appear in `first`).
    pub fn new(first: &[usize], second: &[(usize, usize)]) -> Result<Self> {
        let mut seen = first.to_vec();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != first.len() {
            return Err(Error::config("repeated derivative direction"));
        }
        let pos = |c: usize| {
            first
                .iter()
                .position(|&f| f == c)
                .ok_or_else(|| Error::config(format!("second derivative along untagged input {c}")))
        };
        let second = second
            .iter()
            .map(|&(a, b)| Ok((pos(a)?, pos(b)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(DerivSpec {
            first: first.to_vec(),
            second,
        })
    }

    /// Every derivative of order `<= order` along `tags`.
    pub fn full(tags: &[usize], order: usize) -> Result<Self> {
        match order {
            0 => Ok(Self::values()),
            1 => Self::new(tags, &[]),
            2 => {
                let mut pairs = Vec::new();
                for (i, &a) in tags.iter().enumerate() {
                    for &b in &tags[i..] {
                        pairs.push((a, b));
                    }
                }
                Self::new(tags, &pairs)
            }
            n => Err(Error::UnsupportedOrder(n)),
        }
    }

    pub fn components(&self) -> usize {
        1 + self.first.len() + self.second.len()
    }

    /// Row offset (within a point) of the first derivative along input `coord`.
    pub fn first_row(&self, coord: usize) -> Option<usize> {
        self.first.iter().position(|&c| c == coord).map(|i| 1 + i)
    }

    /// Row offset of the second derivative along input coordinates `(a, b)`.
    pub fn second_row(&self, a: usize, b: usize) -> Option<usize> {
        let pa = self.first.iter().position(|&c| c == a)?;
        let pb = self.first.iter().position(|&c| c == b)?;
        self.second
            .iter()
            .position(|&(x, y)| (x, y) == (pa, pb) || (x, y) == (pb, pa))
            .map(|i| 1 + self.first.len() + i)
    }

    fn max_coord(&self) -> Option<usize> {
        self.first.iter().copied().max()
    }
}

/// `c = a * b + beta * c` with explicit strides (row, column) for each matrix.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: extents checked above (and by construction of the callers); the
    // three buffers are distinct borrows.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Forward cache for one batch. Reusable across evaluations to keep the
/// buffers allocated.
#[derive(Clone, Debug, Default)]
pub struct JetBatch {
    points: usize,
    comps: usize,
    spec: Option<DerivSpec>,
    widths: Vec<usize>,
    /// `acts[l]`: input of layer `l` (post-activation of layer `l - 1`).
    acts: Vec<Vec<f64>>,
    /// `pre[l]`: pre-activation of hidden layer `l`.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl JetBatch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Convenience constructor running one forward pass.
    pub fn forward(net: &Mlp, inputs: &[f64], spec: &DerivSpec) -> Result<Self> {
        let mut b = Self::new();
        b.evaluate(net, inputs, spec)?;
        Ok(b)
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn components(&self) -> usize {
        self.comps
    }

    /// `(points * components) x outputs`, row `p * components + r`.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    #[inline]
    pub fn get(&self, point: usize, row: usize, out: usize) -> f64 {
        let w = *self.widths.last().unwrap();
        self.output[(point * self.comps + row) * w + out]
    }

    /// Runs the forward pass for `inputs` (points x input width, row-major).
    pub fn evaluate(&mut self, net: &Mlp, inputs: &[f64], spec: &DerivSpec) -> Result<()> {
        let d = net.input_width();
        if inputs.len() % d != 0 {
            return Err(Error::config(format!(
                "input buffer of length {} is not a multiple of the input width {d}",
                inputs.len()
            )));
        }
        if spec.max_coord().is_some_and(|c| c >= d) {
            return Err(Error::config(format!(
                "derivative requested along input {} of a {d}-input network",
                spec.max_coord().unwrap()
            )));
        }
        let p_count = inputs.len() / d;
        let c = spec.components();
        let rows = p_count * c;
        let layers = net.num_layers();
        self.points = p_count;
        self.comps = c;
        self.widths = net.widths().to_vec();
        if self.spec.as_ref() != Some(spec) {
            self.spec = Some(spec.clone());
        }
        self.acts.resize_with(layers, Vec::new);
        self.pre.resize_with(layers.saturating_sub(1), Vec::new);

        let a0 = &mut self.acts[0];
        a0.clear();
        a0.resize(rows * d, 0.0);
        let (shift, scale) = (net.input_shift(), net.input_scale());
        for p in 0..p_count {
            let base = p * c * d;
            for i in 0..d {
                a0[base + i] = (inputs[p * d + i] - shift[i]) * scale[i];
            }
            for (r, &coord) in spec.first.iter().enumerate() {
                a0[base + (1 + r) * d + coord] = scale[coord];
            }
        }

        for l in 0..layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let (w, b) = net.layer(l);
            let mut z = if l + 1 < layers {
                std::mem::take(&mut self.pre[l])
            } else {
                std::mem::take(&mut self.output)
            };
            z.resize(rows * n_out, 0.0);
            gemm(
                rows,
                n_in,
                n_out,
                &self.acts[l],
                (n_in, 1),
                w,
                (1, n_in),
                0.0,
                &mut z,
                n_out,
            );
            for p in 0..p_count {
                for (v, bias) in z[p * c * n_out..p * c * n_out + n_out].iter_mut().zip(b) {
                    *v += bias;
                }
            }
            if l + 1 < layers {
                let mut next = std::mem::take(&mut self.acts[l + 1]);
                tanh_forward(&z, &mut next, p_count, n_out, spec);
                self.acts[l + 1] = next;
                self.pre[l] = z;
            } else {
                self.output = z;
            }
        }
        Ok(())
    }

    /// Reverse sweep. `d_out` is the adjoint of [`Self::output`]; parameter
    /// adjoints are added into `grad` (same layout as [`Mlp::params`]). When
    /// `d_input` is given it receives the adjoint of the raw input values
    /// (points x input width).
    pub fn backward(
        &self,
        net: &Mlp,
        d_out: &[f64],
        grad: &mut [f64],
        d_input: Option<&mut [f64]>,
    ) -> Result<()> {
        let spec = self
            .spec
            .as_ref()
            .ok_or_else(|| Error::config("backward called before forward"))?;
        if net.widths() != self.widths.as_slice() {
            return Err(Error::config("network differs from the one evaluated"));
        }
        if d_out.len() != self.output.len() || grad.len() != net.params().len() {
            return Err(Error::config("adjoint buffer has the wrong length"));
        }
        let (p_count, c) = (self.points, self.comps);
        let rows = p_count * c;
        let layers = net.num_layers();
        let mut dy = d_out.to_vec();
        let mut dz = Vec::new();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let dz_ref: &[f64] = if l + 1 < layers {
                tanh_backward(&self.pre[l], &self.acts[l + 1], &dy, &mut dz, p_count, n_out, spec);
                &dz
            } else {
                &dy
            };
            let (w_off, b_off) = net.layer_offsets(l);
            {
                let gw = &mut grad[w_off..b_off];
                // gW (n_out x n_in) += dZ^T (n_out x rows) * A (rows x n_in)
                gemm(
                    n_out,
                    rows,
                    n_in,
                    dz_ref,
                    (1, n_out),
                    &self.acts[l],
                    (n_in, 1),
                    1.0,
                    gw,
                    n_in,
                );
            }
            let gb = &mut grad[b_off..b_off + n_out];
            for p in 0..p_count {
                let row = &dz_ref[p * c * n_out..p * c * n_out + n_out];
                for (g, v) in gb.iter_mut().zip(row) {
                    *g += v;
                }
            }
            if l > 0 || d_input.is_some() {
                let (w, _) = net.layer(l);
                let mut da = vec![0.0; rows * n_in];
                gemm(rows, n_out, n_in, dz_ref, (n_out, 1), w, (n_in, 1), 0.0, &mut da, n_in);
                dy = da;
            }
        }
        if let Some(dx) = d_input {
            let d = net.input_width();
            if dx.len() != p_count * d {
                return Err(Error::config("input adjoint buffer has the wrong length"));
            }
            let scale = net.input_scale();
            for p in 0..p_count {
                for i in 0..d {
                    dx[p * d + i] = dy[p * c * d + i] * scale[i];
                }
            }
        }
        Ok(())
    }
}

fn tanh_forward(z: &[f64], y: &mut Vec<f64>, points: usize, w: usize, spec: &DerivSpec) {
    let c = spec.components();
    let nf = spec.first.len();
    y.resize(z.len(), 0.0);
    let mut s1 = vec![0.0; w];
    let mut s2 = vec![0.0; w];
    for p in 0..points {
        let base = p * c * w;
        let zp = &z[base..base + c * w];
        let yp = &mut y[base..base + c * w];
        for j in 0..w {
            let s = activation(zp[j]);
            yp[j] = s;
            s1[j] = 1.0 - s * s;
            s2[j] = -2.0 * s * s1[j];
        }
        for r in 1..=nf {
            for j in 0..w {
                yp[r * w + j] = s1[j] * zp[r * w + j];
            }
        }
        for (q, &(a, b)) in spec.second.iter().enumerate() {
            let r = 1 + nf + q;
            let (ra, rb) = ((1 + a) * w, (1 + b) * w);
            for j in 0..w {
                yp[r * w + j] = s1[j] * zp[r * w + j] + s2[j] * zp[ra + j] * zp[rb + j];
            }
        }
    }
}

/// Adjoint of [`tanh_forward`]. With `s = tanh(z_v)`:
/// `y_v = s`, `y_k = s' z_k`, `y_ab = s' z_ab + s'' z_a z_b`.
fn tanh_backward(
    z: &[f64],
    y: &[f64],
    dy: &[f64],
    dz: &mut Vec<f64>,
    points: usize,
    w: usize,
    spec: &DerivSpec,
) {
    let c = spec.components();
    let nf = spec.first.len();
    dz.resize(z.len(), 0.0);
    let mut s1 = vec![0.0; w];
    let mut s2 = vec![0.0; w];
    let mut s3 = vec![0.0; w];
    for p in 0..points {
        let base = p * c * w;
        let zp = &z[base..base + c * w];
        let yp = &y[base..base + c * w];
        let gp = &dy[base..base + c * w];
        let dp = &mut dz[base..base + c * w];
        for j in 0..w {
            let s = yp[j];
            s1[j] = 1.0 - s * s;
            s2[j] = -2.0 * s * s1[j];
            s3[j] = -2.0 * (s1[j] * s1[j] + s * s2[j]);
            dp[j] = gp[j] * s1[j];
        }
        for r in 1..=nf {
            for j in 0..w {
                let g = gp[r * w + j];
                dp[r * w + j] = g * s1[j];
                dp[j] += g * s2[j] * zp[r * w + j];
            }
        }
        for (q, &(a, b)) in spec.second.iter().enumerate() {
            let r = (1 + nf + q) * w;
            let (ra, rb) = ((1 + a) * w, (1 + b) * w);
            for j in 0..w {
                let g = gp[r + j];
                dp[r + j] = g * s1[j];
                dp[ra + j] += g * s2[j] * zp[rb + j];
                dp[rb + j] += g * s2[j] * zp[ra + j];
                dp[j] += g * (s2[j] * zp[r + j] + s3[j] * zp[ra + j] * zp[rb + j]);
            }
        }
    }
}

/// Value and input derivatives of every network output at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputJet {
    pub value: f64,
    /// `d1[i]`: partial along `tags[i]`.
    pub d1: Vec<f64>,
    /// `d2[i][j]`: mixed partial along `tags[i]`, `tags[j]` (symmetric).
    pub d2: Vec<Vec<f64>>,
}

/// Evaluates `net` at `point` with derivatives of order `<= order` along the
/// input coordinates in `tags`.
pub fn jet_eval(net: &Mlp, point: &[f64], tags: &[usize], order: usize) -> Result<Vec<OutputJet>> {
    if point.len() != net.input_width() {
        return Err(Error::config(format!(
            "network expects {} inputs, got {}",
            net.input_width(),
            point.len()
        )));
    }
    let spec = DerivSpec::full(tags, order)?;
    let batch = JetBatch::forward(net, point, &spec)?;
    let n = tags.len();
    Ok((0..net.output_width())
        .map(|o| {
            let d1 = if order >= 1 {
                tags.iter()
                    .map(|&t| batch.get(0, spec.first_row(t).unwrap(), o))
                    .collect()
            } else {
                vec![0.0; n]
            };
            let mut d2 = vec![vec![0.0; n]; n];
            if order >= 2 {
                for i in 0..n {
                    for j in 0..n {
                        d2[i][j] = batch.get(0, spec.second_row(tags[i], tags[j]).unwrap(), o);
                    }
                }
            }
            OutputJet {
                value: batch.get(0, 0, o),
                d1,
                d2,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs())
    }

    #[test]
    fn constant_network_has_zero_partials() {
        let mut net = Mlp::zeros(&[2, 3, 1]).unwrap();
        let n = net.params().len();
        net.params_mut()[n - 1] = 1.5;
        let jets = jet_eval(&net, &[0.4, -2.0], &[0, 1], 2).unwrap();
        assert_eq!(jets[0].value, 1.5);
        assert!(jets[0].d1.iter().all(|&v| v == 0.0));
        assert!(jets[0].d2.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn order_above_two_is_rejected() {
        let net = Mlp::zeros(&[2, 1]).unwrap();
        assert!(matches!(
            jet_eval(&net, &[0.0, 0.0], &[0], 3),
            Err(Error::UnsupportedOrder(3))
        ));
        assert!(matches!(jet_eval(&net, &[0.0], &[0], 1), Err(Error::Config(_))));
    }

    #[test]
    fn random_tanh_net_matches_finite_differences() {
        let net = Mlp::init_glorot(&[2, 16, 1], 11).unwrap();
        let (x, t, h) = (0.3, 0.7, 1e-4);
        let f = |a: f64, b: f64| net.forward(&[a, b]).unwrap()[0];
        let j = &jet_eval(&net, &[x, t], &[0, 1], 2).unwrap()[0];
        assert!(close(j.value, f(x, t), 1e-14));
        let fx = (f(x + h, t) - f(x - h, t)) / (2.0 * h);
        let ft = (f(x, t + h) - f(x, t - h)) / (2.0 * h);
        let fxx = (f(x + h, t) - 2.0 * f(x, t) + f(x - h, t)) / (h * h);
        let ftt = (f(x, t + h) - 2.0 * f(x, t) + f(x, t - h)) / (h * h);
        let fxt = (f(x + h, t + h) - f(x + h, t - h) - f(x - h, t + h) + f(x - h, t - h))
            / (4.0 * h * h);
        assert!(close(j.d1[0], fx, 1e-5));
        assert!(close(j.d1[1], ft, 1e-5));
        assert!(close(j.d2[0][0], fxx, 1e-5), "{} {}", j.d2[0][0], fxx);
        assert!(close(j.d2[1][1], ftt, 1e-5), "{} {}", j.d2[1][1], ftt);
        assert!(close(j.d2[0][1], fxt, 1e-5), "{} {}", j.d2[0][1], fxt);
        assert_eq!(j.d2[0][1], j.d2[1][0]);
    }

    #[test]
    fn batch_rows_agree_with_single_point_evaluation() {
        let net = Mlp::init_glorot(&[2, 8, 8, 3], 5)
            .unwrap()
            .with_input_bounds(&[(-1.0, 1.0), (0.0, 2.0)])
            .unwrap();
        let spec = DerivSpec::new(&[0, 1], &[(0, 0)]).unwrap();
        let pts = [0.1, 0.2, -0.5, 1.5, 0.9, 0.01];
        let batch = JetBatch::forward(&net, &pts, &spec).unwrap();
        for p in 0..3 {
            let single = JetBatch::forward(&net, &pts[2 * p..2 * p + 2], &spec).unwrap();
            for r in 0..spec.components() {
                for o in 0..3 {
                    assert!(close(batch.get(p, r, o), single.get(0, r, o), 1e-13));
                }
            }
            let v = net.forward(&pts[2 * p..2 * p + 2]).unwrap();
            for o in 0..3 {
                assert!(close(batch.get(p, 0, o), v[o], 1e-13));
            }
        }
    }

    #[test]
    fn reverse_sweep_through_jets_matches_finite_differences() {
        // Scalar objective mixing value, first and second derivative rows.
        let spec = DerivSpec::new(&[0, 1], &[(0, 0), (0, 1)]).unwrap();
        let pts = [0.3, 0.7, -0.4, 0.2];
        let weights: Vec<f64> = (0..2 * spec.components() * 2)
            .map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3)
            .collect();
        let objective = |net: &Mlp| {
            let b = JetBatch::forward(net, &pts, &spec).unwrap();
            b.output().iter().zip(&weights).map(|(o, w)| w * o * o).sum::<f64>()
        };
        let net = Mlp::init_glorot(&[2, 6, 5, 2], 3).unwrap();
        let b = JetBatch::forward(&net, &pts, &spec).unwrap();
        let d_out: Vec<f64> = b.output().iter().zip(&weights).map(|(o, w)| 2.0 * w * o).collect();
        let mut grad = vec![0.0; net.params().len()];
        let mut dx = vec![0.0; 4];
        b.backward(&net, &d_out, &mut grad, Some(&mut dx)).unwrap();
        let h = 1e-6;
        for i in 0..grad.len() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert!(close(grad[i], fd, 1e-6), "param {i}: {} vs {fd}", grad[i]);
        }
        // Input adjoint only covers dependence through the value rows, which
        // equals the total input derivative for a value-only objective.
        let vspec = DerivSpec::values();
        let bv = JetBatch::forward(&net, &pts, &vspec).unwrap();
        let ones = vec![1.0; bv.output().len()];
        let mut g = vec![0.0; net.params().len()];
        let mut dxv = vec![0.0; 4];
        bv.backward(&net, &ones, &mut g, Some(&mut dxv)).unwrap();
        for i in 0..4 {
            let mut p = pts;
            p[i] += h;
            let mut m = pts;
            m[i] -= h;
            let s = |q: &[f64]| {
                JetBatch::forward(&net, q, &vspec).unwrap().output().iter().sum::<f64>()
            };
            let fd = (s(&p) - s(&m)) / (2.0 * h);
            assert!(close(dxv[i], fd, 1e-6));
        }
    }
}

//! Multilayer perceptrons used as the solution surrogate, the hidden-term
//! network and the boundary network.
//!
//! Parameters live in one flat vector. Layer `l` occupies a weight block of
//! shape `widths[l+1] x widths[l]` (row-major) followed by its bias.
//! Hidden layers use tanh; the output layer is affine.
//!
//! An optional fixed input map `x -> (x - shift) * scale` is applied before
//! the first layer. It is part of the network (saved with checkpoints) but is
//! not trained.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::config(format!(
            "network needs at least an input and an output width, got {widths:?}"
        )));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::config(format!("zero layer width in {widths:?}")));
    }
    Ok(())
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// Hidden-layer activation, `tanh` evaluated through one `exp` call.
#[inline]
pub(crate) fn activation(z: f64) -> f64 {
    let e = (-2.0 * z.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(z)
}

impl Mlp {
    /// A network with every weight and bias set to zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        validate_widths(widths)?;
        Ok(Mlp {
            widths: widths.to_vec(),
            params: vec![0.0; param_count(widths)],
            input_shift: vec![0.0; widths[0]],
            input_scale: vec![1.0; widths[0]],
        })
    }

    /// Glorot-uniform weights, zero biases. Deterministic per seed.
    pub fn init_glorot(widths: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        if params.len() != net.params.len() {
            return Err(Error::config(format!(
                "architecture {widths:?} needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    /// Sets the fixed affine input map applied before the first layer.
    pub fn with_input_map(mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if shift.len() != self.input_width() || scale.len() != self.input_width() {
            return Err(Error::config("input map length differs from input width"));
        }
        if scale.iter().any(|s| !s.is_finite() || *s == 0.0) {
            return Err(Error::config("input scale must be finite and nonzero"));
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(self)
    }

    /// Input map sending each interval `[lo, hi]` onto `[-1, 1]`.
    pub fn with_input_bounds(self, bounds: &[(f64, f64)]) -> Result<Self> {
        let shift = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        let scale = bounds.iter().map(|(lo, hi)| 2.0 / (hi - lo)).collect();
        self.with_input_map(shift, scale)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_shift(&self) -> &[f64] {
        &self.input_shift
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    /// Offsets of (weights, bias) for layer `l` in the flat parameter vector.
    pub(crate) fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start = param_count(&self.widths[..=l]);
        (start, start + self.widths[l] * self.widths[l + 1])
    }

    pub(crate) fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (w, b) = self.layer_offsets(l);
        let out = self.widths[l + 1];
        (&self.params[w..b], &self.params[b..b + out])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_width() {
            return Err(Error::config(format!(
                "network expects {} inputs, got {}",
                self.input_width(),
                input.len()
            )));
        }
        let mut a: Vec<f64> = input
            .iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(x, (s, k))| (x - s) * k)
            .collect();
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let n_in = self.widths[l];
            let mut z: Vec<f64> = b.to_vec();
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                *zj += row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            if l + 1 < self.num_layers() {
                z.iter_mut().for_each(|v| *v = activation(*v));
            }
            a = z;
        }
        Ok(a)
    }
    /// Single-point forward pass that keeps the layer activations for
    /// [`Mlp::vjp`].
    pub fn forward_cached<'c>(&self, input: &[f64], cache: &'c mut ForwardCache) -> Result<&'c [f64]> {
        if input.len() != self.input_width() {
            return Err(Error::config(format!(
                "network expects {} inputs, got {}",
                self.input_width(),
                input.len()
            )));
        }
        let layers = self.num_layers();
        cache.acts.resize_with(layers + 1, Vec::new);
        let a0 = &mut cache.acts[0];
        a0.clear();
        a0.extend(
            input
                .iter()
                .zip(self.input_shift.iter().zip(&self.input_scale))
                .map(|(x, (s, k))| (x - s) * k),
        );
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let n_in = self.widths[l];
            let (done, rest) = cache.acts.split_at_mut(l + 1);
            let a = &done[l];
            let z = &mut rest[0];
            z.clear();
            z.extend_from_slice(b);
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                *zj += row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            if l + 1 < layers {
                z.iter_mut().for_each(|v| *v = activation(*v));
            }
        }
        Ok(&cache.acts[layers])
    }

    /// Vector-Jacobian product at the point last passed to
    /// [`Mlp::forward_cached`]: adds `d_out^T dy/dparams` into `grad` and
    /// writes `d_out^T dy/dinput` into `d_input`.
    pub fn vjp(&self, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64], d_input: &mut [f64]) {
        let layers = self.num_layers();
        let mut dz = d_out.to_vec();
        let mut da = Vec::new();
        for l in (0..layers).rev() {
            let n_in = self.widths[l];
            let (w_off, b_off) = self.layer_offsets(l);
            let a = &cache.acts[l];
            for (j, g) in dz.iter().enumerate() {
                let gw = &mut grad[w_off + j * n_in..w_off + (j + 1) * n_in];
                for (gi, ai) in gw.iter_mut().zip(a) {
                    *gi += g * ai;
                }
                grad[b_off + j] += g;
            }
            let (w, _) = self.layer(l);
            da.clear();
            da.resize(n_in, 0.0);
            for (j, g) in dz.iter().enumerate() {
                for (d, wi) in da.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *d += g * wi;
                }
            }
            if l > 0 {
                for (d, s) in da.iter_mut().zip(a) {
                    *d *= 1.0 - s * s;
                }
            }
            std::mem::swap(&mut dz, &mut da);
        }
        for (i, d) in d_input.iter_mut().enumerate() {
            *d = dz[i] * self.input_scale[i];
        }
    }
}

/// Layer activations of one single-point forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
}

const CHECKPOINT_FORMAT: &str = "hpinn-mlp";
const CHECKPOINT_VERSION: u32 = 1;

/// On-disk form of a network: JSON with the architecture, the input map and
/// the flat parameter array (shortest round-trip decimal floats).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub version: u32,
    pub widths: Vec<usize>,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub params: Vec<f64>,
    pub seed: Option<u64>,
    pub step: u64,
}

impl MlpCheckpoint {
    pub fn new(net: &Mlp, seed: Option<u64>, step: u64) -> Self {
        MlpCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            widths: net.widths.clone(),
            input_shift: net.input_shift.clone(),
            input_scale: net.input_scale.clone(),
            params: net.params.clone(),
            seed,
            step,
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        Mlp::from_params(&self.widths, self.params.clone())?
            .with_input_map(self.input_shift.clone(), self.input_scale.clone())
    }
}

pub fn save_checkpoint(ckpt: &MlpCheckpoint, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(ckpt)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpCheckpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let ckpt: MlpCheckpoint =
        serde_json::from_str(&text).map_err(|e| bad(format!("unreadable: {e}")))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unknown format tag {:?}", ckpt.format)));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "version {} (this build reads {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    ckpt.to_mlp().map_err(|e| bad(e.to_string()))?;
    Ok(ckpt)
}

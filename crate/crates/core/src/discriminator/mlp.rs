//! Dense tanh network with a single linear logit output.
//!
//! Parameters live in one flat vector (per layer: row-major weights, then
//! biases) so optimizers can treat them uniformly. The network's input is
//! `(x, ln sigma)`.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::world::CorrectionField;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activation: Activation,
    seed: u64,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; the last entry holds the logit.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logit(&self) -> f64 {
        self.activations.last().expect("nonempty")[0]
    }
}

fn layer_offsets(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut acc = 0;
    offsets.push(0);
    for w in dims.windows(2) {
        acc += w[0] * w[1] + w[1];
        offsets.push(acc);
    }
    offsets
}

impl Mlp {
    /// Zero-initialised network; its logit is identically 0.
    pub fn zeros(layer_dims: Vec<usize>) -> Result<Self> {
        Self::validate_dims(&layer_dims)?;
        let offsets = layer_offsets(&layer_dims);
        let n = *offsets.last().expect("nonempty");
        Ok(Self {
            layer_dims,
            activation: Activation::Tanh,
            seed: 0,
            params: vec![0.0; n],
            offsets,
        })
    }

    /// Xavier-uniform weights and zero biases, drawn from `seed`.
    pub fn xavier(layer_dims: Vec<usize>, seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(layer_dims)?;
        mlp.seed = seed;
        let mut rng = rng::aux_stream(seed, 0);
        for l in 0..mlp.layer_count() {
            let (fan_in, fan_out) = (mlp.layer_dims[l], mlp.layer_dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let start = mlp.offsets[l];
            for w in &mut mlp.params[start..start + fan_in * fan_out] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(mlp)
    }

    pub fn from_params(
        layer_dims: Vec<usize>,
        activation: Activation,
        seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut mlp = Self::zeros(layer_dims)?;
        if params.len() != mlp.params.len() {
            return Err(Error::DimensionMismatch {
                expected: mlp.params.len(),
                actual: params.len(),
            });
        }
        mlp.activation = activation;
        mlp.seed = seed;
        mlp.params = params;
        Ok(mlp)
    }

    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("layer_dims needs >= 2 positive entries"));
        }
        if dims[0] < 2 {
            return Err(Error::invalid("input layer must hold x plus the noise feature"));
        }
        if *dims.last().expect("nonempty") != 1 {
            return Err(Error::invalid("output layer must be a single logit"));
        }
        Ok(())
    }

    /// The default discriminator shape for data dimension `d`.
    pub fn default_dims(d: usize) -> Vec<usize> {
        vec![d + 1, 64, 64, 64, 1]
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data_dim(&self) -> usize {
        self.layer_dims[0] - 1
    }

    pub fn layer_count(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weights(&self, l: usize) -> &[f64] {
        let start = self.offsets[l];
        &self.params[start..start + self.layer_dims[l] * self.layer_dims[l + 1]]
    }

    fn biases(&self, l: usize) -> &[f64] {
        let start = self.offsets[l] + self.layer_dims[l] * self.layer_dims[l + 1];
        &self.params[start..start + self.layer_dims[l + 1]]
    }

    /// Network input `(x, ln sigma)`.
    pub fn features(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if x.len() != self.data_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data_dim(),
                actual: x.len(),
            });
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!(
                "discriminator needs sigma > 0, got {sigma}"
            )));
        }
        let mut f = x.to_vec();
        f.push(sigma.ln());
        Ok(f)
    }

    /// A cache sized for this network, for use with [`Mlp::forward_into`].
    pub fn cache(&self) -> ForwardCache {
        ForwardCache {
            activations: self.layer_dims.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn forward(&self, input: &[f64]) -> ForwardCache {
        let mut cache = self.cache();
        self.forward_into(input, &mut cache);
        cache
    }

    /// Forward pass reusing the buffers of `cache`.
    pub fn forward_into(&self, input: &[f64], cache: &mut ForwardCache) {
        cache.activations[0].copy_from_slice(input);
        for l in 0..self.layer_count() {
            let n_in = self.layer_dims[l];
            let w = self.weights(l);
            let b = self.biases(l);
            let last = l + 1 == self.layer_count();
            let (done, rest) = cache.activations.split_at_mut(l + 1);
            let prev = &done[l];
            for (o, out) in rest[0].iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
                *out = if last { z } else { z.tanh() };
            }
        }
    }

    pub fn logit(&self, x: &[f64], sigma: f64) -> Result<f64> {
        Ok(self.forward(&self.features(x, sigma)?).logit())
    }

    pub fn probability(&self, x: &[f64], sigma: f64) -> Result<f64> {
        Ok(sigmoid(self.logit(x, sigma)?))
    }

    /// Backpropagates `d_logit` through a cached pass. Parameter gradients are
    /// added into `grad` (same layout as the parameters) and the gradient with
    /// respect to the full input vector is returned.
    pub fn backward(&self, cache: &ForwardCache, d_logit: f64, grad: Option<&mut [f64]>) -> Vec<f64> {
        let width = self.layer_dims.iter().copied().max().expect("nonempty");
        let mut bufs = (vec![0.0; width], vec![0.0; width]);
        self.backward_into(cache, d_logit, grad, &mut bufs);
        bufs.0.truncate(self.layer_dims[0]);
        bufs.0
    }

    /// As [`Mlp::backward`], using two caller-provided work buffers at least
    /// as wide as the widest layer. The input gradient is left in `bufs.0`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        d_logit: f64,
        mut grad: Option<&mut [f64]>,
        bufs: &mut (Vec<f64>, Vec<f64>),
    ) {
        let (delta, back) = (&mut bufs.0, &mut bufs.1);
        delta[0] = d_logit;
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let prev = &cache.activations[l];
            if let Some(g) = grad.as_deref_mut() {
                let start = self.offsets[l];
                for o in 0..n_out {
                    let row = &mut g[start + o * n_in..start + (o + 1) * n_in];
                    for (gi, a) in row.iter_mut().zip(prev) {
                        *gi += delta[o] * a;
                    }
                }
                let bstart = start + n_in * n_out;
                for o in 0..n_out {
                    g[bstart + o] += delta[o];
                }
            }
            let w = self.weights(l);
            back[..n_in].iter_mut().for_each(|v| *v = 0.0);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                for (bi, wi) in back[..n_in].iter_mut().zip(row) {
                    *bi += wi * delta[o];
                }
            }
            if l > 0 {
                for (bi, a) in back[..n_in].iter_mut().zip(prev) {
                    *bi *= 1.0 - a * a;
                }
            }
            std::mem::swap(delta, back);
        }
    }

    /// Forward pass over a batch stored one input per column. Returns the
    /// activations of every layer; the last has a single row of logits.
    pub fn forward_batch(&self, inputs: DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = Vec::with_capacity(self.layer_dims.len());
        acts.push(inputs);
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w_t = DMatrixView::from_slice(self.weights(l), n_in, n_out);
            let mut z = w_t.tr_mul(&acts[l]);
            let b = self.biases(l);
            let last = l + 1 == self.layer_count();
            for mut col in z.column_iter_mut() {
                for (v, bi) in col.iter_mut().zip(b) {
                    *v = if last { *v + bi } else { (*v + bi).tanh() };
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Accumulates into `grad` the parameter gradient of
    /// `sum_j d_logits[j] * logit_j` for a batch run through [`Mlp::forward_batch`].
    pub fn backward_batch(&self, acts: &[DMatrix<f64>], d_logits: &[f64], grad: &mut [f64]) {
        let mut delta = DMatrix::from_row_slice(1, d_logits.len(), d_logits);
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let start = self.offsets[l];
            let (g_w, g_b) = grad[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut g_w_t = DMatrixViewMut::from_slice(g_w, n_in, n_out);
            g_w_t.gemm(1.0, &acts[l], &delta.transpose(), 1.0);
            for (gb, row) in g_b.iter_mut().zip(delta.row_iter()) {
                *gb += row.sum();
            }
            if l > 0 {
                let w_t = DMatrixView::from_slice(self.weights(l), n_in, n_out);
                let mut back = w_t * &delta;
                back.zip_apply(&acts[l], |b, a| *b *= 1.0 - a * a);
                delta = back;
            }
        }
    }

    /// `grad_x logit(x, sigma)`: the discriminator's estimate of the correction term.
    pub fn input_gradient(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let cache = self.forward(&self.features(x, sigma)?);
        let mut g = self.backward(&cache, 1.0, None);
        g.truncate(self.data_dim());
        Ok(g)
    }
}

impl CorrectionField for Mlp {
    fn dim(&self) -> usize {
        self.data_dim()
    }

    fn correction_into(&self, x: &[f64], sigma: f64, out: &mut [f64]) -> Result<()> {
        let g = self.input_gradient(x, sigma)?;
        out.copy_from_slice(&g);
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Header recorded alongside the weights in a saved network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    header: WeightsHeader,
    params: Vec<f64>,
}

impl Mlp {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = WeightsFile {
            header: WeightsHeader {
                layer_dims: self.layer_dims.clone(),
                activation: self.activation,
                seed: self.seed,
            },
            params: self.params.clone(),
        };
        crate::output::write_json(path, &file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: WeightsFile = serde_json::from_str(&text)?;
        Self::from_params(
            file.header.layer_dims,
            file.header.activation,
            file.header.seed,
            file.params,
        )
    }
}

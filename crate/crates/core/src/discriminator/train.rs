//! Real-versus-generated classifier training across noise levels.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};
use crate::world::IsotropicGaussianMixture;
use crate::{Error, Result};

use super::mlp::{sigmoid, Mlp};

/// Logits are clamped to this magnitude when the loss is evaluated.
pub const LOSS_LOGIT_CLAMP: f64 = 15.0;
/// An output within this distance of 0 or 1 counts as saturated.
pub const SATURATION_EPS: f64 = 1e-6;
pub const SATURATION_LIMIT: f64 = 0.99;

/// Anything that can produce i.i.d. clean points.
pub trait SampleSource: Sync {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut StreamRng, out: &mut [f64]);
}

impl SampleSource for IsotropicGaussianMixture {
    fn dim(&self) -> usize {
        IsotropicGaussianMixture::dim(self)
    }

    fn draw(&self, rng: &mut StreamRng, out: &mut [f64]) {
        self.sample_into(rng, out);
    }
}

/// A fixed set of generated samples, drawn uniformly with replacement.
#[derive(Debug, Clone)]
pub struct StoredSamples {
    samples: Vec<Vec<f64>>,
}

impl StoredSamples {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        let d = samples
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("stored sample set is empty"))?;
        if let Some(bad) = samples.iter().find(|s| s.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: bad.len(),
            });
        }
        Ok(Self { samples })
    }
}

impl SampleSource for StoredSamples {
    fn dim(&self) -> usize {
        self.samples[0].len()
    }

    fn draw(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let i = rng.random_range(0..self.samples.len());
        out.copy_from_slice(&self.samples[i]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseLevels {
    /// `ln sigma` uniform on `[ln min, ln max]`.
    LogUniform { min: f64, max: f64 },
    /// Uniform over a fixed set of levels.
    Discrete { levels: Vec<f64> },
}

impl NoiseLevels {
    fn validate(&self) -> Result<()> {
        match self {
            NoiseLevels::LogUniform { min, max } => {
                if !(*min > 0.0 && max >= min && max.is_finite()) {
                    return Err(Error::invalid(format!(
                        "log-uniform noise range [{min}, {max}] is invalid"
                    )));
                }
            }
            NoiseLevels::Discrete { levels } => {
                if levels.is_empty() || levels.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                    return Err(Error::invalid("noise levels must be a nonempty set of positive values"));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut StreamRng) -> f64 {
        match self {
            NoiseLevels::LogUniform { min, max } => {
                if min == max {
                    *min
                } else {
                    rng.random_range(min.ln()..max.ln()).exp()
                }
            }
            NoiseLevels::Discrete { levels } => levels[rng.random_range(0..levels.len())],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    /// Adam with the usual `(0.9, 0.999, 1e-8)` constants.
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { momentum: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Points per class in each minibatch.
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub noise_levels: NoiseLevels,
    pub optimizer: Optimizer,
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
    /// Points per class in the held-out evaluation set.
    pub holdout: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 128,
            steps_per_epoch: 100,
            noise_levels: NoiseLevels::LogUniform { min: 0.002, max: 80.0 },
            optimizer: Optimizer::default(),
            hidden_layers: vec![64, 64, 64],
            seed: 0,
            holdout: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 || self.holdout == 0 {
            return Err(Error::invalid(
                "epochs, batch_size, steps_per_epoch and holdout must be positive",
            ));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        self.noise_levels.validate()
    }

    pub fn layer_dims(&self, d: usize) -> Vec<usize> {
        let mut dims = vec![d + 1];
        dims.extend(&self.hidden_layers);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub holdout_loss: f64,
    pub holdout_accuracy: f64,
    pub mean_abs_logit: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedDiscriminator {
    pub mlp: Mlp,
    pub log: Vec<EpochLog>,
}

impl TrainedDiscriminator {
    pub fn final_epoch(&self) -> &EpochLog {
        self.log.last().expect("at least one epoch")
    }

    pub fn write_log_csv(&self, path: &std::path::Path) -> Result<()> {
        use crate::output::fmt_f64;
        crate::output::write_rows(
            path,
            &["epoch", "loss", "holdout_loss", "holdout_accuracy", "mean_abs_logit"],
            self.log.iter().map(|e| {
                vec![
                    e.epoch.to_string(),
                    fmt_f64(e.loss),
                    fmt_f64(e.holdout_loss),
                    fmt_f64(e.holdout_accuracy),
                    fmt_f64(e.mean_abs_logit),
                ]
            }),
        )
    }
}

/// Binary cross-entropy of a logit against a 0/1 label, logit clamped.
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    let z = logit.clamp(-LOSS_LOGIT_CLAMP, LOSS_LOGIT_CLAMP);
    // softplus(z) - label * z
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - label * z
}

/// Noised inputs `(x + sigma * z, ln sigma)`, one per column, with their labels.
struct LabeledBatch {
    inputs: DMatrix<f64>,
    labels: Vec<f64>,
}

/// Draws `pairs` real/fake pairs, interleaved, using `buf` as scratch.
fn draw_batch(
    real: &dyn SampleSource,
    fake: &dyn SampleSource,
    pairs: usize,
    levels: &NoiseLevels,
    rng: &mut StreamRng,
    buf: &mut [f64],
) -> LabeledBatch {
    let d = buf.len();
    let mut inputs = DMatrix::zeros(d + 1, 2 * pairs);
    let mut labels = Vec::with_capacity(2 * pairs);
    for j in 0..2 * pairs {
        let (source, label) = if j % 2 == 0 { (real, 1.0) } else { (fake, 0.0) };
        source.draw(rng, buf);
        let sigma = levels.draw(rng);
        let mut col = inputs.column_mut(j);
        for (c, x) in col.iter_mut().zip(buf.iter()) {
            let e: f64 = rng.sample(StandardNormal);
            *c = x + sigma * e;
        }
        col[d] = sigma.ln();
        labels.push(label);
    }
    LabeledBatch { inputs, labels }
}

struct Evaluation {
    loss: f64,
    accuracy: f64,
    mean_abs_logit: f64,
    saturated: f64,
}

fn evaluate(mlp: &Mlp, set: &LabeledBatch) -> Evaluation {
    let acts = mlp.forward_batch(set.inputs.clone());
    let logits = acts.last().expect("nonempty");
    let n = set.labels.len() as f64;
    let (mut loss, mut correct, mut abs_logit, mut saturated) = (0.0, 0.0, 0.0, 0.0);
    for (&z, &label) in logits.iter().zip(&set.labels) {
        loss += bce_with_logit(z, label);
        if (z > 0.0) == (label > 0.5) {
            correct += 1.0;
        }
        abs_logit += z.abs();
        let p = sigmoid(z);
        if !(SATURATION_EPS..=1.0 - SATURATION_EPS).contains(&p) {
            saturated += 1.0;
        }
    }
    Evaluation {
        loss: loss / n,
        accuracy: correct / n,
        mean_abs_logit: abs_logit / n,
        saturated: saturated / n,
    }
}

/// Trains a discriminator with real points labelled 1 and fake points labelled 0.
///
/// Single-threaded and fully determined by `config.seed`.
pub fn train(
    real: &dyn SampleSource,
    fake: &dyn SampleSource,
    config: &TrainConfig,
) -> Result<TrainedDiscriminator> {
    config.validate()?;
    let d = real.dim();
    if fake.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: fake.dim(),
        });
    }
    let mut mlp = Mlp::xavier(config.layer_dims(d), config.seed)?;
    let mut rng = rng::stream(config.seed, 0);
    let mut hold_rng = rng::aux_stream(config.seed, 1);
    let mut buf = vec![0.0; d];
    let holdout = draw_batch(real, fake, config.holdout, &config.noise_levels, &mut hold_rng, &mut buf);

    let n_params = mlp.params().len();
    let mut grad = vec![0.0; n_params];
    let mut m1 = vec![0.0; n_params];
    let mut m2 = vec![0.0; n_params];
    let mut t = 0i32;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..config.steps_per_epoch {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let batch = draw_batch(real, fake, config.batch_size, &config.noise_levels, &mut rng, &mut buf);
            let acts = mlp.forward_batch(batch.inputs);
            let logits = acts.last().expect("nonempty");
            let mut batch_loss = 0.0;
            let d_logits: Vec<f64> = logits
                .iter()
                .zip(&batch.labels)
                .map(|(&z, &label)| {
                    batch_loss += bce_with_logit(z, label);
                    sigmoid(z) - label
                })
                .collect();
            mlp.backward_batch(&acts, &d_logits, &mut grad);
            let count = (2 * config.batch_size) as f64;
            batch_loss /= count;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += batch_loss;
            t += 1;
            let lr = config.learning_rate;
            let params = mlp.params_mut();
            match config.optimizer {
                Optimizer::Sgd { momentum } => {
                    for i in 0..n_params {
                        m1[i] = momentum * m1[i] + grad[i] / count;
                        params[i] -= lr * m1[i];
                    }
                }
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..n_params {
                        let g = grad[i] / count;
                        m1[i] = beta1 * m1[i] + (1.0 - beta1) * g;
                        m2[i] = beta2 * m2[i] + (1.0 - beta2) * g * g;
                        params[i] -= lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + epsilon);
                    }
                }
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
        }
        let eval = evaluate(&mlp, &holdout);
        log.push(EpochLog {
            epoch,
            loss: epoch_loss / config.steps_per_epoch as f64,
            holdout_loss: eval.loss,
            holdout_accuracy: eval.accuracy,
            mean_abs_logit: eval.mean_abs_logit,
        });
        if eval.saturated > SATURATION_LIMIT {
            return Err(Error::Saturated {
                fraction: eval.saturated,
            });
        }
    }
    Ok(TrainedDiscriminator { mlp, log })
}

/// Held-out accuracy of a network on freshly drawn points at the given noise levels.
pub fn holdout_accuracy(
    mlp: &Mlp,
    real: &dyn SampleSource,
    fake: &dyn SampleSource,
    levels: &NoiseLevels,
    n: usize,
    seed: u64,
) -> Result<f64> {
    levels.validate()?;
    let d = real.dim();
    let mut rng = rng::aux_stream(seed, 2);
    let mut buf = vec![0.0; d];
    let set = draw_batch(real, fake, n, levels, &mut rng, &mut buf);
    Ok(evaluate(mlp, &set).accuracy)
}

//! Discriminator guidance.
//!
//! A classifier `d(x, sigma)` trained to separate noised real data from
//! noised model samples has `log(d / (1 - d)) = logit`, and at the optimum
//! its input gradient is the correction `grad log(p_real / p_model)`.

mod mlp;
mod train;

pub use mlp::{sigmoid, Activation, ForwardCache, Mlp, WeightsHeader};
pub use train::{
    bce_with_logit, holdout_accuracy, train, EpochLog, NoiseLevels, Optimizer, SampleSource,
    StoredSamples, TrainConfig, TrainedDiscriminator, LOSS_LOGIT_CLAMP,
};

use crate::world::{analytic_correction, IsotropicGaussianMixture};
use crate::{Error, Result};

/// `grad_x log(d / (1 - d))`, which is the gradient of the pre-sigmoid logit.
pub fn logit_ratio_correction(mlp: &Mlp, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    mlp.input_gradient(x, sigma)
}

/// `mean ||c_est - c|| / mean ||c||` over `points`, or the plain
/// `mean ||c_est - c||` when the true correction vanishes on all of them.
pub fn correction_quality(
    mlp: &Mlp,
    real: &IsotropicGaussianMixture,
    model: &IsotropicGaussianMixture,
    sigma: f64,
    points: &[Vec<f64>],
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("correction quality needs evaluation points"));
    }
    let (mut err, mut size) = (0.0, 0.0);
    for x in points {
        let truth = analytic_correction(real, model, sigma, x)?;
        let est = logit_ratio_correction(mlp, x, sigma)?;
        err += truth
            .iter()
            .zip(&est)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        size += truth.iter().map(|a| a * a).sum::<f64>().sqrt();
    }
    let n = points.len() as f64;
    if size == 0.0 {
        Ok(err / n)
    } else {
        Ok(err / size)
    }
}

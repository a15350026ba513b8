//! Analytic data worlds.
//!
//! An [`IsotropicGaussianMixture`] convolved with `N(0, sigma^2 I)` is again a
//! mixture with component variances `s_k^2 + sigma^2`, so densities, scores
//! and the density-ratio correction between two mixtures are exact at every
//! noise level. Evaluation goes through log-sum-exp throughout.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};
use crate::{Error, Result};

pub const MAX_COMPONENTS: usize = 64;

/// A vector field `x, sigma -> R^d` that plays the role of a score.
pub trait ScoreField: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate_into(&self, x: &[f64], sigma: f64, out: &mut [f64]) -> Result<()>;

    fn evaluate(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.evaluate_into(x, sigma, &mut out)?;
        Ok(out)
    }
}

/// Estimate (or exact value) of `grad log(p_real^sigma / p_model^sigma)`.
pub trait CorrectionField: Send + Sync {
    fn dim(&self) -> usize;

    fn correction_into(&self, x: &[f64], sigma: f64, out: &mut [f64]) -> Result<()>;

    fn correction(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.correction_into(x, sigma, &mut out)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct IsotropicGaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

/// Serialized form of a mixture: the config-file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub dimension: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl TryFrom<MixtureSpec> for IsotropicGaussianMixture {
    type Error = Error;

    fn try_from(spec: MixtureSpec) -> Result<Self> {
        IsotropicGaussianMixture::new(spec.dimension, spec.weights, spec.means, spec.variances)
    }
}

impl From<IsotropicGaussianMixture> for MixtureSpec {
    fn from(m: IsotropicGaussianMixture) -> Self {
        MixtureSpec {
            dimension: m.dim,
            weights: m.weights,
            means: m.means,
            variances: m.variances,
        }
    }
}

/// How the "model" mixture departs from the real one.
///
/// Model means are `mean_scale * mu + mean_shift` and model standard
/// deviations are `std_scale * s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    pub mean_scale: f64,
    pub mean_shift: Vec<f64>,
    pub std_scale: f64,
}

impl Default for Perturbation {
    /// The experiment default: ring pulled in by 10%, components 5/3 wider.
    fn default() -> Self {
        Self {
            mean_scale: 0.9,
            mean_shift: Vec::new(),
            std_scale: 5.0 / 3.0,
        }
    }
}

impl Perturbation {
    pub fn none() -> Self {
        Self {
            mean_scale: 1.0,
            mean_shift: Vec::new(),
            std_scale: 1.0,
        }
    }
}

impl IsotropicGaussianMixture {
    pub fn new(
        dim: usize,
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<f64>,
    ) -> Result<Self> {
        let k = weights.len();
        if dim == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        if k == 0 || k > MAX_COMPONENTS {
            return Err(Error::invalid(format!(
                "mixture needs 1..={MAX_COMPONENTS} components, got {k}"
            )));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::invalid(format!(
                "{k} weights but {} means and {} variances",
                means.len(),
                variances.len()
            )));
        }
        for m in &means {
            if m.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: m.len(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("mixture means must be finite"));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("mixture variances must be positive"));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            dim,
            weights,
            log_weights,
            means,
            variances,
        })
    }

    pub fn gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(d, vec![1.0], vec![mean], vec![variance])
    }

    /// `k` equal-weight components with means evenly spaced on a circle.
    pub fn ring(k: usize, radius: f64, std: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("ring needs at least one component"));
        }
        let means = (0..k)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / k as f64;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Self::new(2, vec![1.0 / k as f64; k], means, vec![std * std; k])
    }

    /// The default experiment world: 8 components on a radius-4 circle, s = 0.3.
    pub fn default_ring() -> Self {
        Self::ring(8, 4.0, 0.3).expect("static ring parameters are valid")
    }

    pub fn perturbed(&self, p: &Perturbation) -> Result<Self> {
        if !p.mean_shift.is_empty() && p.mean_shift.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: p.mean_shift.len(),
            });
        }
        if !(p.std_scale > 0.0) {
            return Err(Error::invalid("std_scale must be positive"));
        }
        let means = self
            .means
            .iter()
            .map(|m| {
                m.iter()
                    .enumerate()
                    .map(|(j, v)| p.mean_scale * v + p.mean_shift.get(j).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect();
        let variances = self
            .variances
            .iter()
            .map(|v| v * p.std_scale * p.std_scale)
            .collect();
        Self::new(self.dim, self.weights.clone(), means, variances)
    }

    pub fn from_spec(spec: MixtureSpec) -> Result<Self> {
        spec.try_into()
    }

    /// Loads a mixture spec from a `.json` or `.toml` file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: MixtureSpec = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)?,
            _ => serde_json::from_str(&text)?,
        };
        spec.try_into()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Per-component log joint `log w_k + log N(x; mu_k, (s_k^2 + sigma^2) I)`
    /// written into `lp`; returns the log-sum-exp.
    fn component_log_joint(&self, x: &[f64], sigma: f64, lp: &mut [f64]) -> Result<f64> {
        let d = self.dim as f64;
        let s2 = sigma * sigma;
        let mut max = f64::NEG_INFINITY;
        for (k, out) in lp.iter_mut().enumerate() {
            let var = self.variances[k] + s2;
            let dist2: f64 = x
                .iter()
                .zip(&self.means[k])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = self.log_weights[k] - 0.5 * dist2 / var - 0.5 * d * (2.0 * PI * var).ln();
            *out = v;
            if v > max {
                max = v;
            }
        }
        if !max.is_finite() {
            return Err(Error::Underflow);
        }
        let sum: f64 = lp.iter().map(|v| (v - max).exp()).sum();
        Ok(max + sum.ln())
    }

    pub fn log_noised_density(&self, sigma: f64, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        check_sigma(sigma)?;
        let mut lp = [0.0; MAX_COMPONENTS];
        self.component_log_joint(x, sigma, &mut lp[..self.components()])
    }

    /// Density of the mixture convolved with `N(0, sigma^2 I)` at `x`.
    pub fn noised_density(&self, sigma: f64, x: &[f64]) -> Result<f64> {
        let p = self.log_noised_density(sigma, x)?.exp();
        if p > 0.0 {
            Ok(p)
        } else {
            Err(Error::Underflow)
        }
    }

    /// Posterior component probabilities at `x` under the noised mixture.
    pub fn responsibilities(&self, sigma: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        check_sigma(sigma)?;
        let mut lp = vec![0.0; self.components()];
        let lse = self.component_log_joint(x, sigma, &mut lp)?;
        Ok(lp.into_iter().map(|v| (v - lse).exp()).collect())
    }

    /// `grad_x log p_sigma(x)` written into `out`.
    pub fn score_into(&self, sigma: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(x)?;
        check_sigma(sigma)?;
        let k_count = self.components();
        let mut lp = [0.0; MAX_COMPONENTS];
        let lse = self.component_log_joint(x, sigma, &mut lp[..k_count])?;
        let s2 = sigma * sigma;
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..k_count {
            let r = (lp[k] - lse).exp();
            if r == 0.0 {
                continue;
            }
            let var = self.variances[k] + s2;
            for (o, (xi, mi)) in out.iter_mut().zip(x.iter().zip(&self.means[k])) {
                *o -= r * (xi - mi) / var;
            }
        }
        Ok(())
    }

    pub fn score(&self, sigma: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.score_into(sigma, x, &mut out)?;
        Ok(out)
    }

    /// Draws one point into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        for (k, w) in self.weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            acc += w;
            chosen = Some(k);
            if u < acc {
                break;
            }
        }
        let k = chosen.expect("weights sum to one");
        let s = self.variances[k].sqrt();
        rng::fill_standard_normal(rng, out);
        for (o, m) in out.iter_mut().zip(&self.means[k]) {
            *o = m + s * *o;
        }
    }

    /// Exact mean vector and covariance matrix (row-major `d x d`).
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for j in 0..d {
                mean[j] += w * m[j];
            }
        }
        let mut cov = vec![0.0; d * d];
        for ((w, m), v) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for i in 0..d {
                cov[i * d + i] += w * v;
                for j in 0..d {
                    cov[i * d + j] += w * (m[i] - mean[i]) * (m[j] - mean[j]);
                }
            }
        }
        (mean, cov)
    }
}

impl ScoreField for IsotropicGaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate_into(&self, x: &[f64], sigma: f64, out: &mut [f64]) -> Result<()> {
        self.score_into(sigma, x, out)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma = {sigma} must be finite and >= 0")))
    }
}

pub fn noised_density(mixture: &IsotropicGaussianMixture, sigma: f64, x: &[f64]) -> Result<f64> {
    mixture.noised_density(sigma, x)
}

pub fn score(mixture: &IsotropicGaussianMixture, sigma: f64, x: &[f64]) -> Result<Vec<f64>> {
    mixture.score(sigma, x)
}

/// `eps = -sigma * score`: the noise a denoiser would predict at level sigma.
pub fn epsilon_from_score(score_value: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon is undefined at sigma = {sigma}"
        )));
    }
    Ok(score_value.iter().map(|s| -sigma * s).collect())
}

/// Exact correction `grad log p_real^sigma - grad log p_model^sigma`.
pub fn analytic_correction(
    real: &IsotropicGaussianMixture,
    model: &IsotropicGaussianMixture,
    sigma: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    AnalyticCorrection::new(real.clone(), model.clone())?.correction(x, sigma)
}

/// The exact density-ratio correction between a real and a model mixture.
#[derive(Debug, Clone)]
pub struct AnalyticCorrection {
    real: IsotropicGaussianMixture,
    model: IsotropicGaussianMixture,
}

impl AnalyticCorrection {
    pub fn new(real: IsotropicGaussianMixture, model: IsotropicGaussianMixture) -> Result<Self> {
        if real.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: real.dim(),
                actual: model.dim(),
            });
        }
        Ok(Self { real, model })
    }

    pub fn real(&self) -> &IsotropicGaussianMixture {
        &self.real
    }

    pub fn model(&self) -> &IsotropicGaussianMixture {
        &self.model
    }
}

impl CorrectionField for AnalyticCorrection {
    fn dim(&self) -> usize {
        self.real.dim()
    }

    fn correction_into(&self, x: &[f64], sigma: f64, out: &mut [f64]) -> Result<()> {
        let model_score = self.model.score(sigma, x)?;
        self.real.score_into(sigma, x, out)?;
        out.iter_mut().zip(model_score).for_each(|(o, v)| *o -= v);
        Ok(())
    }
}

/// `n` i.i.d. draws, deterministic in `seed`.
pub fn sample_mixture(mixture: &IsotropicGaussianMixture, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, 0);
    sample_with(mixture, n, &mut rng)
}

pub fn sample_with(mixture: &IsotropicGaussianMixture, n: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut x = vec![0.0; mixture.dim()];
            mixture.sample_into(rng, &mut x);
            x
        })
        .collect()
}

/// Where on the forward process a point is noised to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Variance-preserving form `sqrt(ab) x0 + sqrt(1 - ab) eps`.
    AlphaBar(f64),
    /// Variance-exploding form `x0 + sigma eps`.
    Sigma(f64),
}

pub fn forward_noise(x0: &[f64], level: NoiseLevel, epsilon: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != epsilon.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            actual: epsilon.len(),
        });
    }
    match level {
        NoiseLevel::AlphaBar(ab) => {
            if !(ab > 0.0 && ab <= 1.0) {
                return Err(Error::invalid(format!("alpha_bar = {ab} outside (0, 1]")));
            }
            let a = ab.sqrt();
            let b = (1.0 - ab).sqrt();
            Ok(x0.iter().zip(epsilon).map(|(x, e)| a * x + b * e).collect())
        }
        NoiseLevel::Sigma(sigma) => {
            check_sigma(sigma)?;
            Ok(x0.iter().zip(epsilon).map(|(x, e)| x + sigma * e).collect())
        }
    }
}

/// Variance-exploding SDE with `sigma(t) = t`: `f = 0`, `g(t) = sqrt(2 t)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SdeCoefficients;

impl SdeCoefficients {
    pub fn drift(&self, x: &[f64], _t: f64) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    pub fn diffusion(&self, t: f64) -> f64 {
        (2.0 * t).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn std_normal_1d() -> IsotropicGaussianMixture {
        IsotropicGaussianMixture::gaussian(vec![0.0], 1.0).unwrap()
    }

    fn symmetric_pair() -> IsotropicGaussianMixture {
        IsotropicGaussianMixture::new(1, vec![0.5, 0.5], vec![vec![-1.0], vec![1.0]], vec![1.0, 1.0])
            .unwrap()
    }

    #[test]
    fn density_examples() {
        let n = std_normal_1d();
        assert_relative_eq!(n.noised_density(0.0, &[0.0]).unwrap(), 0.3989422804014327, max_relative = 1e-14);
        assert_relative_eq!(n.noised_density(1.0, &[0.0]).unwrap(), 1.0 / (4.0 * PI).sqrt(), max_relative = 1e-14);
        // both components sit one unit away: 0.5 N(0;1,1) + 0.5 N(0;-1,1) = N(0;1,1)
        let p = symmetric_pair().noised_density(0.0, &[0.0]).unwrap();
        let hand = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert_relative_eq!(p, hand, max_relative = 1e-14);
        assert_relative_eq!(p, 0.24197, epsilon = 1e-5);
    }

    #[test]
    fn score_examples() {
        assert_relative_eq!(std_normal_1d().score(1.0, &[2.0]).unwrap()[0], -1.0);
        for sigma in [0.0, 0.3, 2.0] {
            assert_eq!(symmetric_pair().score(sigma, &[0.0]).unwrap()[0], 0.0);
        }
        let ring = IsotropicGaussianMixture::default_ring();
        assert!(ring.score(1.0, &[0.0, 0.0]).unwrap().iter().map(|v| v.abs()).sum::<f64>() < 1e-12);
    }

    #[test]
    fn single_gaussian_closed_form() {
        let g = IsotropicGaussianMixture::gaussian(vec![1.0, -2.0], 0.25).unwrap();
        let x = [0.3, 0.7];
        for sigma in [0.0, 0.5, 3.0] {
            let s = g.score(sigma, &x).unwrap();
            let v = 0.25 + sigma * sigma;
            assert_eq!(s[0], -(x[0] - 1.0) / v);
            assert_eq!(s[1], -(x[1] + 2.0) / v);
        }
    }

    #[test]
    fn score_far_from_support_still_finite() {
        let ring = IsotropicGaussianMixture::default_ring();
        let s = ring.score(0.0, &[1e6, -3e5]).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        assert!(matches!(ring.score(0.0, &[f64::INFINITY, 0.0]), Err(Error::Underflow)));
    }

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon_from_score(&[-0.5], 2.0).unwrap(), vec![1.0]);
        assert_eq!(epsilon_from_score(&[0.0, 0.0], 0.7).unwrap(), vec![-0.0, -0.0]);
        assert!(epsilon_from_score(&[1.0], 0.0).is_err());
    }

    #[test]
    fn exact_epsilon_norm_matches_closed_form() {
        // For x0 ~ N(0, I2) and sigma = 1 the exact eps prediction is (x0 + eps) / 2,
        // distributed N(0, I2 / 2), whose norm has mean sqrt(pi/2) / sqrt(2).
        let g =IsotropicGaussianMixture::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let mut rng = crate::rng::stream(11, 0);
        let count = 200_000;
        let mut acc = 0.0;
        for _ in 0..count {
            let x0 = crate::rng::standard_normal_vec(&mut rng, 2);
            let e = crate::rng::standard_normal_vec(&mut rng, 2);
            let x = forward_noise(&x0, NoiseLevel::Sigma(1.0), &e).unwrap();
            let eps = epsilon_from_score(&g.score(1.0, &x).unwrap(), 1.0).unwrap();
            acc += (eps[0] * eps[0] + eps[1] * eps[1]).sqrt();
        }
        let mean = acc / count as f64;
        // eps_hat ~ N(0, I/2): chi_2 mean scaled by 1/sqrt(2)
        let expected = (PI / 2.0).sqrt() / 2f64.sqrt();
        assert!((mean - expected).abs() < 3.0 * 0.5 / (count as f64).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn correction_examples() {
        let ring = IsotropicGaussianMixture::default_ring();
        let c = analytic_correction(&ring, &ring, 0.7, &[1.0, 2.0]).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
        let real = IsotropicGaussianMixture::gaussian(vec![1.0], 1.0).unwrap();
        let model = IsotropicGaussianMixture::gaussian(vec![-1.0], 1.0).unwrap();
        for x in [-3.0, 0.0, 0.4, 5.0] {
            let c = analytic_correction(&real, &model, 1.0, &[x]).unwrap();
            assert_relative_eq!(c[0], 1.0, max_relative = 1e-14);
        }
        let other = IsotropicGaussianMixture::gaussian(vec![0.0, 0.0], 1.0).unwrap();
        assert!(AnalyticCorrection::new(real, other).is_err());
    }

    fn log_density_fd(m: &IsotropicGaussianMixture, sigma: f64, x: &[f64], j: usize, h: f64) -> f64 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        (m.log_noised_density(sigma, &xp).unwrap() - m.log_noised_density(sigma, &xm).unwrap()) / (2.0 * h)
    }

    #[test]
    fn score_matches_finite_differences_on_grid() {
        let n = std_normal_1d();
        for i in 0..100 {
            let x = -4.0 + 8.0 * i as f64 / 99.0;
            let fd = log_density_fd(&n, 0.0, &[x], 0, 1e-5);
            let s = n.score(0.0, &[x]).unwrap()[0];
            assert!((fd - s).abs() <= 1e-6 * s.abs().max(1.0), "x={x}: {fd} vs {s}");
        }
        let ring = IsotropicGaussianMixture::default_ring();
        for i in 0..100 {
            let a = i as f64 * 0.37;
            let x = [4.5 * a.cos() * (i as f64 / 100.0), 4.5 * a.sin()];
            for sigma in [0.0, 0.4, 2.0] {
                let s = ring.score(sigma, &x).unwrap();
                for j in 0..2 {
                    let fd = log_density_fd(&ring, sigma, &x, j, 1e-5);
                    assert!((fd - s[j]).abs() <= 1e-6 * s[j].abs().max(1.0), "{fd} vs {}", s[j]);
                }
            }
        }
    }

    #[test]
    fn correction_matches_log_ratio_fd() {
        let real = symmetric_pair();
        let model = real
            .perturbed(&Perturbation {
                mean_scale: 1.0,
                mean_shift: vec![0.4],
                std_scale: 1.2,
            })
            .unwrap();
        for i in 0..50 {
            let x = -4.0 + 8.0 * i as f64 / 49.0;
            let sigma = 0.5;
            let h = 1e-5;
            let lr = |x: f64| {
                real.log_noised_density(sigma, &[x]).unwrap() - model.log_noised_density(sigma, &[x]).unwrap()
            };
            let fd = (lr(x + h) - lr(x - h)) / (2.0 * h);
            let c = analytic_correction(&real, &model, sigma, &[x]).unwrap()[0];
            assert!((fd - c).abs() <= 1e-6 * c.abs().max(1.0), "{fd} vs {c}");
        }
    }

    #[test]
    fn sampling_examples() {
        let n = std_normal_1d();
        let draws = sample_mixture(&n, 100_000, 5);
        let mean = draws.iter().map(|x| x[0]).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 3.0 / (draws.len() as f64).sqrt());
        assert_eq!(draws, sample_mixture(&n, 100_000, 5));

        let degenerate =
            IsotropicGaussianMixture::new(1, vec![1.0, 0.0], vec![vec![-50.0], vec![50.0]], vec![1.0, 1.0])
                .unwrap();
        assert!(sample_mixture(&degenerate, 10_000, 1).iter().all(|x| x[0] < 0.0));
    }

    #[test]
    fn forward_noise_examples() {
        assert_eq!(forward_noise(&[1.0], NoiseLevel::AlphaBar(0.25), &[0.0]).unwrap(), vec![0.5]);
        assert_eq!(forward_noise(&[3.7, -1.0], NoiseLevel::AlphaBar(1.0), &[9.0, 2.0]).unwrap(), vec![3.7, -1.0]);
        assert_eq!(forward_noise(&[1.0], NoiseLevel::Sigma(2.0), &[-0.5]).unwrap(), vec![0.0]);
        assert!(forward_noise(&[1.0], NoiseLevel::AlphaBar(0.0), &[0.0]).is_err());
        assert!(forward_noise(&[1.0], NoiseLevel::AlphaBar(1.5), &[0.0]).is_err());
    }

    #[test]
    fn forward_noise_moments_match() {
        let x0 = [1.5];
        let ab = 0.3;
        let n = 100_000;
        let mut rng = crate::rng::stream(2, 0);
        let xs: Vec<f64> = (0..n)
            .map(|_| forward_noise(&x0, NoiseLevel::AlphaBar(ab), &crate::rng::standard_normal_vec(&mut rng, 1)).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let true_var = 1.0 - ab;
        assert!((mean - ab.sqrt() * x0[0]).abs() < 3.0 * (true_var / n as f64).sqrt());
        assert!((var - true_var).abs() < 3.0 * true_var * (2.0 / (n - 1) as f64).sqrt());
    }

    #[test]
    fn validation() {
        assert!(IsotropicGaussianMixture::new(1, vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(IsotropicGaussianMixture::new(1, vec![1.0], vec![vec![0.0]], vec![0.0]).is_err());
        assert!(IsotropicGaussianMixture::new(2, vec![1.0], vec![vec![0.0]], vec![1.0]).is_err());
        assert!(IsotropicGaussianMixture::ring(65, 1.0, 1.0).is_err());
        let ring = IsotropicGaussianMixture::default_ring();
        assert!(ring.score(0.1, &[1.0]).is_err());
        assert!(ring.score(-0.1, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn spec_roundtrip_through_json_and_toml() {
        let ring = IsotropicGaussianMixture::ring(3, 2.0, 0.5).unwrap();
        let json = serde_json::to_string(&ring).unwrap();
        let back: IsotropicGaussianMixture = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ring);

        let text = "dimension = 1\nweights = [0.25, 0.75]\nmeans = [[-1.0], [2.0]]\nvariances = [1.0, 0.5]\n";
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.toml");
        std::fs::write(&path, text).unwrap();
        let m = IsotropicGaussianMixture::load(&path).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
        let bad: std::result::Result<IsotropicGaussianMixture, _> =
            serde_json::from_str(r#"{"dimension":1,"weights":[0.3],"means":[[0.0]],"variances":[1.0]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn ring_moments() {
        let (mean, cov) = IsotropicGaussianMixture::default_ring().moments();
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
        assert_relative_eq!(cov[0], 8.09, max_relative = 1e-12);
        assert_relative_eq!(cov[3], 8.09, max_relative = 1e-12);
        assert!(cov[1].abs() < 1e-12);
    }

    #[test]
    fn ve_coefficients() {
        let sde = SdeCoefficients;
        assert_eq!(sde.drift(&[1.0, 2.0], 3.0), vec![0.0, 0.0]);
        assert_eq!(sde.diffusion(2.0), 2.0);
    }

    proptest! {
        #[test]
        fn responsibilities_sum_to_one(x in -20.0f64..20.0, y in -20.0f64..20.0, sigma in 0.0f64..10.0) {
            let ring = IsotropicGaussianMixture::default_ring();
            let r = ring.responsibilities(sigma, &[x, y]).unwrap();
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn correction_plus_model_is_real(x in -8.0f64..8.0, y in -8.0f64..8.0, sigma in 0.0f64..5.0) {
            let real = IsotropicGaussianMixture::default_ring();
            let model = real.perturbed(&Perturbation::default()).unwrap();
            let c = analytic_correction(&real, &model, sigma, &[x, y]).unwrap();
            let sm = model.score(sigma, &[x, y]).unwrap();
            let sr = real.score(sigma, &[x, y]).unwrap();
            for j in 0..2 {
                prop_assert!((c[j] + sm[j] - sr[j]).abs() <= 1e-12 * sr[j].abs().max(1.0));
            }
        }
    }
}

//! Distributional distances between sample sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::world::IsotropicGaussianMixture;
use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// Mean vector and covariance of a fitted Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StatsRecord", into = "StatsRecord")]
pub struct FrechetStats {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct StatsRecord {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl TryFrom<StatsRecord> for FrechetStats {
    type Error = Error;

    fn try_from(r: StatsRecord) -> Result<Self> {
        let d = r.mean.len();
        let mut flat = Vec::with_capacity(d * d);
        for row in &r.covariance {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        if r.covariance.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.covariance.len(),
            });
        }
        FrechetStats::new(r.mean, flat)
    }
}

impl From<FrechetStats> for StatsRecord {
    fn from(s: FrechetStats) -> Self {
        let d = s.mean.len();
        StatsRecord {
            mean: s.mean.iter().copied().collect(),
            covariance: (0..d)
                .map(|i| (0..d).map(|j| s.covariance[(i, j)]).collect())
                .collect(),
        }
    }
}

impl FrechetStats {
    /// `covariance` is row-major `d x d`; it must be symmetric and PSD.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("statistics need dimension >= 1"));
        }
        if covariance.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                actual: covariance.len(),
            });
        }
        let cov = DMatrix::from_row_slice(d, d, &covariance);
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let min_eigenvalue = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eigenvalue < -PSD_TOL || !min_eigenvalue.is_finite() {
            return Err(Error::NotPsd { min_eigenvalue });
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance: cov,
        })
    }

    /// Sample mean and unbiased sample covariance.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::invalid("need at least two samples for a covariance"));
        }
        let d = samples[0].len();
        let mut mean = vec![0.0; d];
        for s in samples {
            if s.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: s.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; d * d];
        for s in samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n as f64 - 1.0);
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Self::new(mean, cov)
    }

    /// Exact moments of a mixture.
    pub fn from_mixture(mixture: &IsotropicGaussianMixture) -> Result<Self> {
        let (mean, cov) = mixture.moments();
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.covariance[(i, j)]
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Frechet distance between two Gaussians (not squared).
///
/// The trace term `tr sqrt(A^1/2 B A^1/2)` is computed as the sum of singular
/// values of `A^1/2 B^1/2`, which avoids squaring small eigenvalues.
pub fn frechet_distance(a: &FrechetStats, b: &FrechetStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let cross: f64 = (psd_sqrt(&a.covariance) * psd_sqrt(&b.covariance))
        .singular_values()
        .sum();
    let d2 = diff + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    Ok(d2.max(0.0).sqrt())
}

/// 2-Wasserstein distance between two 1-D empirical distributions given as
/// sorted samples. Sizes may differ: the quantile functions are compared on
/// the common refinement of their step boundaries.
pub fn wasserstein_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as u128, b.len() as u128);
    if na == 0 || nb == 0 {
        return f64::NAN;
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos: u128 = 0;
    let total = na * nb;
    let mut acc = 0.0;
    while pos < total {
        let next_a = (i as u128 + 1) * nb;
        let next_b = (j as u128 + 1) * na;
        let next = next_a.min(next_b);
        let diff = a[i] - b[j];
        acc += diff * diff * (next - pos) as f64;
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    (acc / total as f64).sqrt()
}

/// Mean over random unit directions of the 1-D W2 distance between projections.
pub fn sliced_wasserstein(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    SlicedReference::new(b, n_projections, seed)?.distance(a)
}

/// A reference sample set with its projections pre-sorted, for repeated
/// sliced-Wasserstein comparisons against the same target.
#[derive(Debug, Clone)]
pub struct SlicedReference {
    directions: Vec<Vec<f64>>,
    sorted: Vec<Vec<f64>>,
}

impl SlicedReference {
    pub fn new(reference: &[Vec<f64>], n_projections: usize, seed: u64) -> Result<Self> {
        if n_projections == 0 {
            return Err(Error::invalid("need at least one projection"));
        }
        let d = check_set(reference, None)?;
        let directions = projection_directions(d, n_projections, seed);
        let sorted = directions.iter().map(|u| sorted_projection(reference, u)).collect();
        Ok(Self { directions, sorted })
    }

    pub fn dim(&self) -> usize {
        self.directions[0].len()
    }

    pub fn distance(&self, samples: &[Vec<f64>]) -> Result<f64> {
        check_set(samples, Some(self.dim()))?;
        let total: f64 = self
            .directions
            .iter()
            .zip(&self.sorted)
            .map(|(u, r)| wasserstein_1d_sorted(&sorted_projection(samples, u), r))
            .sum();
        Ok(total / self.directions.len() as f64)
    }
}

fn check_set(set: &[Vec<f64>], dim: Option<usize>) -> Result<usize> {
    let Some(first) = set.first() else {
        return Err(Error::invalid("sliced Wasserstein needs nonempty sample sets"));
    };
    let d = dim.unwrap_or(first.len());
    if let Some(bad) = set.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        });
    }
    Ok(d)
}

fn sorted_projection(set: &[Vec<f64>], u: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = set
        .iter()
        .map(|x| x.iter().zip(u).map(|(xi, ui)| xi * ui).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

pub(crate) fn projection_directions(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::aux_stream(seed, 0);
    (0..n)
        .map(|_| loop {
            let mut u = rng::standard_normal_vec(&mut rng, d);
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                u.iter_mut().for_each(|v| *v /= norm);
                break u;
            }
        })
        .collect()
}

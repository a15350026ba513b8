//! Training-side versus sampling-side epsilon norms.

use serde::{Deserialize, Serialize};

use crate::output::{fmt_f64, write_rows};
use crate::parallel::{self, Execution};
use crate::rng;
use crate::samplers::{self, mean_and_stderr, SamplerConfig, ScalingSchedule, Timeline};
use crate::world::{CorrectionField, IsotropicGaussianMixture, ScoreField};
use crate::{Error, Result};

pub const TRAINING_VARIANT: &str = "training";

/// How per-sample norms are reduced to one number per level.
pub const NORM_AGGREGATION: &str = "mean_of_per_sample_l2_norms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStat {
    pub sigma: f64,
    pub mean_eps_norm: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean `||eps||` of the score field on forward-noised real data, one entry per sigma.
///
/// Each level draws fresh data from its own auxiliary stream.
pub fn epsilon_norm_training(
    field: &dyn ScoreField,
    world: &IsotropicGaussianMixture,
    sigmas: &[f64],
    n: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<LevelStat>> {
    if n == 0 {
        return Err(Error::invalid("training-side batch must be >= 1"));
    }
    if field.dim() != world.dim() {
        return Err(Error::DimensionMismatch {
            expected: world.dim(),
            actual: field.dim(),
        });
    }
    let d = world.dim();
    parallel::try_map_indexed(sigmas.len(), execution, |level| {
        let sigma = sigmas[level];
        let mut rng = rng::aux_stream(seed, 1 + level as u64);
        let mut x = vec![0.0; d];
        let mut e = vec![0.0; d];
        let mut norms = Vec::with_capacity(n);
        for _ in 0..n {
            world.sample_into(&mut rng, &mut x);
            rng::fill_standard_normal(&mut rng, &mut e);
            for (xi, ei) in x.iter_mut().zip(&e) {
                *xi += sigma * ei;
            }
            field.evaluate_into(&x, sigma, &mut e)?;
            norms.push(sigma * samplers::norm(&e));
        }
        let (mean, stderr) = mean_and_stderr(norms.iter().copied(), n);
        Ok(LevelStat {
            sigma,
            mean_eps_norm: mean,
            stderr,
            n,
        })
    })
}

/// A named modification of a sampler config: guidance weights and scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftVariant {
    pub name: String,
    pub w_dg_1st: f64,
    #[serde(default)]
    pub w_dg_2nd: f64,
    pub scaling: ScalingSchedule,
}

impl DriftVariant {
    /// The four standard variants: baseline, guidance, scaling, both.
    pub fn standard(w_dg: f64, scaling: ScalingSchedule) -> Vec<Self> {
        let id = ScalingSchedule::identity();
        [
            ("baseline", 0.0, id),
            ("dg", w_dg, id),
            ("es", 0.0, scaling),
            ("dg+es", w_dg, scaling),
        ]
        .into_iter()
        .map(|(name, w, scaling)| DriftVariant {
            name: name.to_string(),
            w_dg_1st: w,
            w_dg_2nd: 0.0,
            scaling,
        })
        .collect()
    }

    pub fn apply(&self, template: &SamplerConfig) -> SamplerConfig {
        SamplerConfig {
            w_dg_1st: self.w_dg_1st,
            w_dg_2nd: self.w_dg_2nd,
            scaling: self.scaling,
            ..template.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub step: usize,
    pub sigma: f64,
    pub variant: String,
    pub mean_eps_norm: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Aligned per-step epsilon-norm curves; one training curve plus one per sampling variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCurve {
    pub points: Vec<DriftPoint>,
    pub aggregation: String,
}

impl DriftCurve {
    pub fn variant(&self, name: &str) -> Vec<&DriftPoint> {
        self.points.iter().filter(|p| p.variant == name).collect()
    }

    pub fn variants(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for p in &self.points {
            if !names.contains(&p.variant.as_str()) {
                names.push(&p.variant);
            }
        }
        names
    }

    /// `sampling - training` per step, with the combined standard error.
    pub fn gap(&self, variant: &str) -> Vec<(f64, f64)> {
        self.variant(variant)
            .into_iter()
            .zip(self.variant(TRAINING_VARIANT))
            .map(|(s, t)| {
                (
                    s.mean_eps_norm - t.mean_eps_norm,
                    (s.stderr * s.stderr + t.stderr * t.stderr).sqrt(),
                )
            })
            .collect()
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        write_rows(
            path,
            &["step", "sigma", "variant", "mean_eps_norm", "stderr", "n"],
            self.points.iter().map(|p| {
                vec![
                    p.step.to_string(),
                    fmt_f64(p.sigma),
                    p.variant.clone(),
                    fmt_f64(p.mean_eps_norm),
                    fmt_f64(p.stderr),
                    p.n.to_string(),
                ]
            }),
        )
    }
}

/// Runs every variant on the same seed and grid and aligns their traces
/// with a training-side curve at the same noise levels.
pub fn epsilon_norm_sampling(
    template: &SamplerConfig,
    variants: &[DriftVariant],
    world: &IsotropicGaussianMixture,
    model: &dyn ScoreField,
    correction: Option<&dyn CorrectionField>,
    timeline: Timeline<'_>,
    training_n: usize,
) -> Result<DriftCurve> {
    if variants.is_empty() {
        return Err(Error::invalid("drift needs at least one sampling variant"));
    }
    let sigmas = timeline.step_sigmas();
    let training = epsilon_norm_training(
        model,
        world,
        &sigmas,
        training_n,
        template.seed,
        template.execution,
    )?;
    let mut points: Vec<DriftPoint> = training
        .iter()
        .enumerate()
        .map(|(i, l)| DriftPoint {
            step: i + 1,
            sigma: l.sigma,
            variant: TRAINING_VARIANT.to_string(),
            mean_eps_norm: l.mean_eps_norm,
            stderr: l.stderr,
            n: l.n,
        })
        .collect();
    for v in variants {
        let config = v.apply(template);
        let out = samplers::sample(&config, model, correction, timeline)?;
        points.extend(out.trace.records.iter().map(|r| DriftPoint {
            step: r.step,
            sigma: r.sigma,
            variant: v.name.clone(),
            mean_eps_norm: r.mean_eps_norm,
            stderr: r.stderr,
            n: r.n,
        }));
    }
    Ok(DriftCurve {
        points,
        aggregation: NORM_AGGREGATION.to_string(),
    })
}

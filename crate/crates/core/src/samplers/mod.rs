//! Reverse-process samplers with discriminator guidance and epsilon scaling.
//!
//! Four solvers share one driver: DDPM ancestral sampling on a
//! [`DiscreteNoiseSchedule`], and probability-flow Euler, probability-flow
//! Heun and reverse-SDE Euler-Maruyama on a [`ContinuousTimeGrid`]. Every
//! solver extracts `eps = -sigma * score` from a [`GuidedScore`], divides it by
//! `lambda_t = k t + b`, and logs the unscaled `eps` norm per step.
//!
//! The [`reference`] module holds the same solvers without any guidance or
//! scaling code, used to check that `w = 0, lambda = 1` changes nothing.

use serde::{Deserialize, Serialize};

use crate::parallel::{self, Execution};
use crate::rng;
use crate::schedules::{ContinuousTimeGrid, DiscreteNoiseSchedule};
use crate::world::{CorrectionField, ScoreField};
use crate::{Error, Result};

pub mod reference;
mod steps;

pub use steps::{
    ancestral_step, apply_epsilon_scaling, pf_euler_step, pf_heun_step, reverse_sde_step,
};

/// Trajectories whose norm exceeds this are aborted.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ancestral,
    PfEuler,
    PfHeun,
    ReverseSde,
}

impl SamplerKind {
    pub fn is_discrete(self) -> bool {
        self == SamplerKind::Ancestral
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ancestral => "ancestral",
            SamplerKind::PfEuler => "pf_euler",
            SamplerKind::PfHeun => "pf_heun",
            SamplerKind::ReverseSde => "reverse_sde",
        }
    }
}

/// Which Heun stages divide their `eps` by lambda.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingStages {
    #[default]
    All,
    PredictorOnly,
}

/// `lambda_t = k t + b`, where `t` is the discrete step index for the
/// ancestral sampler and `sigma_from` for the continuous solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSchedule {
    pub k: f64,
    pub b: f64,
}

impl Default for ScalingSchedule {
    fn default() -> Self {
        Self::identity()
    }
}

impl ScalingSchedule {
    pub fn identity() -> Self {
        Self { k: 0.0, b: 1.0 }
    }

    pub fn uniform(b: f64) -> Self {
        Self { k: 0.0, b }
    }

    pub fn lambda_at(&self, t: f64) -> Result<f64> {
        let lambda = self.k * t + self.b;
        if lambda > 0.0 && lambda.is_finite() {
            Ok(lambda)
        } else {
            Err(Error::invalid(format!(
                "epsilon scale k*t + b = {lambda} at t = {t} is not positive"
            )))
        }
    }

    /// Lambda at each step time, failing on the first step where it is not positive.
    pub fn lambdas(&self, times: &[f64]) -> Result<Vec<f64>> {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                self.lambda_at(t).map_err(|_| Error::NonPositiveLambda {
                    step: i + 1,
                    time: t,
                    lambda: self.k * t + self.b,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Ancestral: number of chain steps `T`. Continuous: grid nodes `N`.
    pub steps: usize,
    pub w_dg_1st: f64,
    pub w_dg_2nd: f64,
    pub scaling: ScalingSchedule,
    pub es_stages: ScalingStages,
    pub seed: u64,
    pub batch: usize,
    pub execution: Execution,
    /// Perturbs every lambda division; used to check that the reduction test bites.
    #[doc(hidden)]
    #[serde(skip)]
    pub corrupt_lambda: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::PfEuler,
            steps: 21,
            w_dg_1st: 0.0,
            w_dg_2nd: 0.0,
            scaling: ScalingSchedule::identity(),
            es_stages: ScalingStages::All,
            seed: 0,
            batch: 10_000,
            execution: Execution::Parallel,
            corrupt_lambda: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("sampler steps must be >= 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("sampler batch must be >= 1"));
        }
        for (name, w) in [("w_dg_1st", self.w_dg_1st), ("w_dg_2nd", self.w_dg_2nd)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Score evaluations per trajectory.
    pub fn nfe(&self) -> usize {
        match self.kind {
            SamplerKind::PfHeun => 2 * self.steps - 1,
            _ => self.steps,
        }
    }
}

/// `base + weight * correction`; with `weight == 0` it is exactly `base`.
#[derive(Clone, Copy)]
pub struct GuidedScore<'a> {
    base: &'a dyn ScoreField,
    correction: Option<&'a dyn CorrectionField>,
    weight: f64,
}

impl<'a> GuidedScore<'a> {
    pub fn unguided(base: &'a dyn ScoreField) -> Self {
        Self {
            base,
            correction: None,
            weight: 0.0,
        }
    }

    pub fn new(
        base: &'a dyn ScoreField,
        correction: Option<&'a dyn CorrectionField>,
        weight: f64,
    ) -> Result<Self> {
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::invalid(format!("guidance weight {weight} must be >= 0")));
        }
        if weight > 0.0 {
            let c = correction
                .ok_or_else(|| Error::invalid("nonzero guidance weight without a correction"))?;
            if c.dim() != base.dim() {
                return Err(Error::DimensionMismatch {
                    expected: base.dim(),
                    actual: c.dim(),
                });
            }
        }
        Ok(Self {
            base,
            correction,
            weight,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

impl ScoreField for GuidedScore<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn evaluate_into(&self, x: &[f64], sigma: f64, out: &mut [f64]) -> Result<()> {
        self.base.evaluate_into(x, sigma, out)?;
        if self.weight == 0.0 {
            return Ok(());
        }
        let Some(correction) = self.correction else {
            return Ok(());
        };
        let c = correction.correction(x, sigma)?;
        for (o, ci) in out.iter_mut().zip(c) {
            *o += self.weight * ci;
        }
        Ok(())
    }
}

/// The time axis a sampler walks.
#[derive(Debug, Clone, Copy)]
pub enum Timeline<'a> {
    Discrete(&'a DiscreteNoiseSchedule),
    Continuous(&'a ContinuousTimeGrid),
}

impl Timeline<'_> {
    /// Number of logged steps (one per first-order slope evaluation).
    pub fn steps(&self) -> usize {
        match self {
            Timeline::Discrete(s) => s.step_count(),
            Timeline::Continuous(g) => g.node_count(),
        }
    }

    /// Lambda time variable per step in sampling order.
    pub fn step_times(&self) -> Vec<f64> {
        match self {
            Timeline::Discrete(s) => (1..=s.step_count()).rev().map(|t| t as f64).collect(),
            Timeline::Continuous(g) => g.sigmas()[..g.node_count()].to_vec(),
        }
    }

    /// Noise level seen by the score at each step, in sampling order.
    pub fn step_sigmas(&self) -> Vec<f64> {
        match self {
            Timeline::Discrete(s) => (1..=s.step_count())
                .rev()
                .map(|t| s.equivalent_sigma(t).expect("t in range"))
                .collect(),
            Timeline::Continuous(g) => g.sigmas()[..g.node_count()].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based position in sampling order.
    pub step: usize,
    /// Lambda time variable: discrete `t` or `sigma_from`.
    pub time: f64,
    pub sigma: f64,
    pub lambda: f64,
    /// Batch mean of the unscaled `||eps||_2`.
    pub mean_eps_norm: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTrace {
    pub kind: SamplerKind,
    pub records: Vec<TraceRecord>,
    /// Score evaluations per trajectory.
    pub nfe: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub samples: Vec<Vec<f64>>,
    pub trace: TrajectoryTrace,
}

/// Runs `config.batch` independent trajectories of the configured solver.
///
/// Trajectory `i` draws all of its randomness from stream `(seed, i)`, so
/// output does not depend on the execution mode.
pub fn sample(
    config: &SamplerConfig,
    base: &dyn ScoreField,
    correction: Option<&dyn CorrectionField>,
    timeline: Timeline<'_>,
) -> Result<SampleOutput> {
    config.validate()?;
    match (config.kind.is_discrete(), timeline) {
        (true, Timeline::Discrete(_)) | (false, Timeline::Continuous(_)) => {}
        _ => {
            return Err(Error::invalid(format!(
                "{} sampler cannot run on this time grid",
                config.kind.name()
            )))
        }
    }
    if timeline.steps() != config.steps {
        return Err(Error::invalid(format!(
            "sampler configured for {} steps but the grid has {}",
            config.steps,
            timeline.steps()
        )));
    }
    let first = GuidedScore::new(base, correction, config.w_dg_1st)?;
    let second = GuidedScore::new(base, correction, config.w_dg_2nd)?;
    let times = timeline.step_times();
    let lambdas = config.scaling.lambdas(&times)?;
    let plan = Plan {
        config,
        first,
        second,
        timeline,
        lambdas: &lambdas,
    };

    let runs = parallel::try_map_indexed(config.batch, config.execution, |i| plan.trajectory(i))?;
    let sigmas = timeline.step_sigmas();
    let steps = config.steps;
    let n = runs.len();
    let records = (0..steps)
        .map(|s| {
            let (mean, stderr) = mean_and_stderr(runs.iter().map(|r| r.1[s]), n);
            TraceRecord {
                step: s + 1,
                time: times[s],
                sigma: sigmas[s],
                lambda: lambdas[s],
                mean_eps_norm: mean,
                stderr,
                n,
            }
        })
        .collect();
    Ok(SampleOutput {
        samples: runs.into_iter().map(|r| r.0).collect(),
        trace: TrajectoryTrace {
            kind: config.kind,
            records,
            nfe: config.nfe(),
        },
    })
}

/// Mean and standard error of the mean of `n` values.
pub(crate) fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (nf - 1.0) / nf).sqrt())
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn check_divergence(x: &[f64], trajectory: usize, step: usize) -> Result<()> {
    let n = norm(x);
    if n > DIVERGENCE_NORM || !n.is_finite() {
        return Err(Error::Divergence {
            trajectory,
            step,
            norm: n,
        });
    }
    Ok(())
}

struct Plan<'a> {
    config: &'a SamplerConfig,
    first: GuidedScore<'a>,
    second: GuidedScore<'a>,
    timeline: Timeline<'a>,
    lambdas: &'a [f64],
}

impl Plan<'_> {
    fn lambda(&self, step: usize) -> f64 {
        let l = self.lambdas[step];
        if self.config.corrupt_lambda {
            l * (1.0 + 1e-3)
        } else {
            l
        }
    }

    fn trajectory(&self, index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.first.dim();
        let mut rng = rng::stream(self.config.seed, index as u64);
        let mut norms = Vec::with_capacity(self.config.steps);
        let mut z = vec![0.0; d];
        let mut scratch = steps::Scratch::new(d);
        let x = match self.timeline {
            Timeline::Discrete(schedule) => {
                let mut x = rng::standard_normal_vec(&mut rng, d);
                let big_t = schedule.step_count();
                for (s, t) in (1..=big_t).rev().enumerate() {
                    if t > 1 {
                        rng::fill_standard_normal(&mut rng, &mut z);
                    } else {
                        z.iter_mut().for_each(|v| *v = 0.0);
                    }
                    let e = steps::ancestral_in_place(
                        &mut x,
                        t,
                        schedule,
                        &self.first,
                        self.lambda(s),
                        &z,
                        &mut scratch,
                    )?;
                    norms.push(e);
                    check_divergence(&x, index, s + 1)?;
                }
                x
            }
            Timeline::Continuous(grid) => {
                let mut x = rng::standard_normal_vec(&mut rng, d);
                let scale = grid.sigma_max();
                x.iter_mut().for_each(|v| *v *= scale);
                for (s, (from, to)) in grid.intervals().enumerate() {
                    let lambda = self.lambda(s);
                    let e = match self.config.kind {
                        SamplerKind::PfEuler => steps::euler_in_place(
                            &mut x,
                            from,
                            to,
                            &self.first,
                            lambda,
                            &mut scratch,
                        )?,
                        SamplerKind::PfHeun => {
                            let corrector_lambda = match self.config.es_stages {
                                ScalingStages::All => lambda,
                                ScalingStages::PredictorOnly => 1.0,
                            };
                            steps::heun_in_place(
                                &mut x,
                                from,
                                to,
                                &self.first,
                                &self.second,
                                lambda,
                                corrector_lambda,
                                &mut scratch,
                            )?
                        }
                        SamplerKind::ReverseSde => {
                            rng::fill_standard_normal(&mut rng, &mut z);
                            steps::sde_in_place(
                                &mut x,
                                from,
                                to,
                                &self.first,
                                lambda,
                                &z,
                                &mut scratch,
                            )?
                        }
                        SamplerKind::Ancestral => unreachable!("checked against the timeline"),
                    };
                    norms.push(e);
                    check_divergence(&x, index, s + 1)?;
                }
                x
            }
        };
        Ok((x, norms))
    }
}

/// Writes samples as CSV with columns `x0..x{d-1}`.
pub fn write_samples_csv(path: &std::path::Path, samples: &[Vec<f64>]) -> Result<()> {
    let d = samples.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    crate::output::write_rows(path, &header, samples.iter().map(|s| {
        s.iter().map(|v| crate::output::fmt_f64(*v)).collect::<Vec<_>>()
    }))
}

/// Reads a file written by [`write_samples_csv`].
pub fn read_samples_csv(path: &std::path::Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let d = r.headers()?.len();
    let mut out = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: record.len(),
            });
        }
        let row = record
            .iter()
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| {
                    Error::invalid(format!("{}: row {}: {v:?} is not a number", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

/// Writes a trace as CSV with columns `step, sigma, mean_eps_norm`.
pub fn write_trace_csv(path: &std::path::Path, trace: &TrajectoryTrace) -> Result<()> {
    crate::output::write_rows(
        path,
        &["step", "sigma", "mean_eps_norm"],
        trace.records.iter().map(|r| {
            vec![
                r.step.to_string(),
                crate::output::fmt_f64(r.sigma),
                crate::output::fmt_f64(r.mean_eps_norm),
            ]
        }),
    )
}

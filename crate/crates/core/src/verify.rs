//! Self-check suite: reduction, guidance exactness, gradients against finite
//! differences, one-step variance inflation and solver order.
//!
//! Each check yields one [`CheckOutcome`]; [`VerifyReport::render`] lays them
//! out as a pass/fail table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{solver_order, variance_inflation_check, OrderProblem};
use crate::discriminator::Mlp;
use crate::parallel::Execution;
use crate::rng;
use crate::samplers::{reference, sample, SamplerConfig, SamplerKind, Timeline};
use crate::schedules::{linear_beta_schedule, power_sigma_grid};
use crate::world::{AnalyticCorrection, IsotropicGaussianMixture, Perturbation};
use crate::Result;

/// Monte-Carlo size at which the variance check is specified.
pub const FULL_VARIANCE_SAMPLES: usize = 100_000;
pub const VARIANCE_Z_LIMIT: f64 = 3.0;
pub const GUIDANCE_TOLERANCE: f64 = 1e-10;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const ORDER_TOLERANCE: f64 = 0.3;
pub const ORDER_NODE_COUNTS: [usize; 5] = [10, 20, 40, 80, 160];
/// `(t, e_{t+1})` pairs swept by the variance check on a 1000-step linear schedule.
pub const VARIANCE_PAIRS: [(usize, f64); 6] =
    [(10, 0.0), (500, 0.0), (50, 0.05), (200, 0.2), (600, 0.5), (900, 1.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Trajectories per solver in the reduction and guidance checks.
    pub batch: usize,
    /// Draws per `(t, e)` pair in the variance check.
    pub variance_samples: usize,
    pub execution: Execution,
    /// Runs the samplers with a perturbed lambda division.
    #[serde(skip)]
    pub corrupt_lambda: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 2_000,
            variance_samples: FULL_VARIANCE_SAMPLES,
            execution: Execution::default(),
            corrupt_lambda: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    /// `<invariant>/<case>`.
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// The invariant part of the name.
    pub fn invariant(&self) -> &str {
        self.name.split('/').next().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    pub notes: Vec<String>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Distinct invariants with at least one failing case, in check order.
    pub fn failed_invariants(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in self.checks.iter().filter(|c| !c.passed) {
            if !out.contains(&c.invariant()) {
                out.push(c.invariant());
            }
        }
        out
    }

    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{mark}  {:width$}  {}", c.name, c.detail);
        }
        for note in &self.notes {
            let _ = writeln!(s, "note: {note}");
        }
        s
    }
}

/// Runs every check. Errors are only returned for broken setup; a sampler
/// error inside a check is reported as a failed case.
pub fn run(options: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    let real = IsotropicGaussianMixture::default_ring();
    let model = real.perturbed(&Perturbation::default())?;
    let correction = AnalyticCorrection::new(real.clone(), model.clone())?;

    checks.extend(reduction(options, &model, &correction)?);
    checks.extend(guidance_exactness(options, &real, &model, &correction)?);
    checks.extend(gradients(options.seed)?);
    let (variance, note) = variance_inflation(options)?;
    checks.extend(variance);
    notes.extend(note);
    checks.extend(order()?);
    if options.corrupt_lambda {
        notes.push("lambda division deliberately perturbed by a factor 1.001".into());
    }
    Ok(VerifyReport { checks, notes })
}

const DISCRETE_STEPS: usize = 100;
const CONTINUOUS_NODES: usize = 18;

fn timelines() -> Result<(crate::schedules::DiscreteNoiseSchedule, crate::schedules::ContinuousTimeGrid)> {
    Ok((
        linear_beta_schedule(DISCRETE_STEPS, 1e-4, 0.2)?,
        power_sigma_grid(CONTINUOUS_NODES, 0.002, 80.0, 7.0)?,
    ))
}

fn base_config(options: &VerifyOptions, kind: SamplerKind) -> SamplerConfig {
    SamplerConfig {
        kind,
        steps: if kind.is_discrete() { DISCRETE_STEPS } else { CONTINUOUS_NODES },
        seed: options.seed,
        batch: options.batch,
        execution: options.execution,
        corrupt_lambda: options.corrupt_lambda,
        ..SamplerConfig::default()
    }
}

const SOLVERS: [SamplerKind; 4] = [
    SamplerKind::Ancestral,
    SamplerKind::PfEuler,
    SamplerKind::PfHeun,
    SamplerKind::ReverseSde,
];

fn max_abs_difference(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn reduction(
    options: &VerifyOptions,
    model: &IsotropicGaussianMixture,
    correction: &AnalyticCorrection,
) -> Result<Vec<CheckOutcome>> {
    let (schedule, grid) = timelines()?;
    let mut out = Vec::new();
    for kind in SOLVERS {
        let timeline = if kind.is_discrete() {
            Timeline::Discrete(&schedule)
        } else {
            Timeline::Continuous(&grid)
        };
        let name = format!("reduction/{}", kind.name());
        let config = base_config(options, kind);
        let guided = sample(&config, model, Some(correction), timeline);
        let plain = reference::sample(kind, model, timeline, config.seed, config.batch, config.execution);
        out.push(match (guided, plain) {
            (Ok(g), Ok(p)) if g.samples == p => CheckOutcome::new(
                name,
                true,
                format!("bit-identical over {} trajectories", config.batch),
            ),
            (Ok(g), Ok(p)) => CheckOutcome::new(
                name,
                false,
                format!("outputs differ, max |diff| = {:.3e}", max_abs_difference(&g.samples, &p)),
            ),
            (Err(e), _) | (_, Err(e)) => CheckOutcome::new(name, false, format!("sampler error: {e}")),
        });
    }
    Ok(out)
}

fn guidance_exactness(
    options: &VerifyOptions,
    real: &IsotropicGaussianMixture,
    model: &IsotropicGaussianMixture,
    correction: &AnalyticCorrection,
) -> Result<Vec<CheckOutcome>> {
    let (schedule, grid) = timelines()?;
    let mut out = Vec::new();
    for kind in SOLVERS {
        let timeline = if kind.is_discrete() {
            Timeline::Discrete(&schedule)
        } else {
            Timeline::Continuous(&grid)
        };
        let name = format!("guidance_exactness/{}", kind.name());
        let guided_config = SamplerConfig {
            w_dg_1st: 1.0,
            w_dg_2nd: 1.0,
            ..base_config(options, kind)
        };
        let guided = sample(&guided_config, model, Some(correction), timeline);
        let truth = sample(&base_config(options, kind), real, None, timeline);
        out.push(match (guided, truth) {
            (Ok(g), Ok(t)) => {
                let diff = max_abs_difference(&g.samples, &t.samples);
                CheckOutcome::new(
                    name,
                    diff <= GUIDANCE_TOLERANCE,
                    format!("max |guided - true| = {diff:.3e} (limit {GUIDANCE_TOLERANCE:e})"),
                )
            }
            (Err(e), _) | (_, Err(e)) => CheckOutcome::new(name, false, format!("sampler error: {e}")),
        });
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|)`, or zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn central_difference(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], j: usize, h: f64) -> Result<f64> {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[j] += h;
    down[j] -= h;
    Ok((f(&up)? - f(&down)?) / (2.0 * h))
}

fn worst_case(name: &str, worst: f64) -> CheckOutcome {
    CheckOutcome::new(
        name,
        worst <= GRADIENT_TOLERANCE,
        format!("max relative error {worst:.2e} (limit {GRADIENT_TOLERANCE:e})"),
    )
}

fn gradients(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = rng::aux_stream(seed, 10);
    let real = IsotropicGaussianMixture::default_ring();
    let model = real.perturbed(&Perturbation::default())?;
    let points: Vec<Vec<f64>> = (0..20).map(|_| rng::standard_normal_vec(&mut rng, 2)).collect();
    let points: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|v| 3.0 * v).collect()).collect();
    let h = 1e-5;

    let mut score_worst: f64 = 0.0;
    let mut correction_worst: f64 = 0.0;
    for sigma in [0.1, 0.5, 2.0] {
        for x in &points {
            let s = real.score(sigma, x)?;
            let c = crate::world::analytic_correction(&real, &model, sigma, x)?;
            for j in 0..2 {
                let fd = central_difference(|y| real.log_noised_density(sigma, y), x, j, h)?;
                score_worst = score_worst.max(relative_error(s[j], fd));
                let fd = central_difference(
                    |y| Ok(real.log_noised_density(sigma, y)? - model.log_noised_density(sigma, y)?),
                    x,
                    j,
                    h,
                )?;
                correction_worst = correction_worst.max(relative_error(c[j], fd));
            }
        }
    }

    let mlp = Mlp::xavier(Mlp::default_dims(2), seed)?;
    let mut input_worst: f64 = 0.0;
    for sigma in [0.1, 0.5, 1.0] {
        for x in &points {
            let g = mlp.input_gradient(x, sigma)?;
            for j in 0..2 {
                let fd = central_difference(|y| mlp.logit(y, sigma), x, j, h)?;
                input_worst = input_worst.max(relative_error(g[j], fd));
            }
        }
    }

    let input = mlp.features(&points[0], 0.5)?;
    let mut analytic = vec![0.0; mlp.params().len()];
    mlp.backward(&mlp.forward(&input), 1.0, Some(&mut analytic));
    let mut param_worst: f64 = 0.0;
    let mut probe = mlp.clone();
    for i in (0..analytic.len()).step_by(37) {
        let p0 = probe.params()[i];
        probe.params_mut()[i] = p0 + h;
        let up = probe.forward(&input).logit();
        probe.params_mut()[i] = p0 - h;
        let down = probe.forward(&input).logit();
        probe.params_mut()[i] = p0;
        let fd = (up - down) / (2.0 * h);
        // Parameters whose gradient is below roundoff in the difference are skipped.
        if analytic[i].abs().max(fd.abs()) > 1e-8 {
            param_worst = param_worst.max(relative_error(analytic[i], fd));
        }
    }

    Ok(vec![
        worst_case("gradient/mixture_score", score_worst),
        worst_case("gradient/analytic_correction", correction_worst),
        worst_case("gradient/discriminator_input", input_worst),
        worst_case("gradient/discriminator_params", param_worst),
    ])
}

fn variance_inflation(options: &VerifyOptions) -> Result<(Vec<CheckOutcome>, Option<String>)> {
    let schedule = linear_beta_schedule(1000, 1e-4, 0.02)?;
    let mut out = Vec::new();
    for (t, e) in VARIANCE_PAIRS {
        let check = variance_inflation_check(&schedule, t, e, options.variance_samples, options.seed)?;
        let z = check.z_score();
        out.push(CheckOutcome::new(
            format!("variance_inflation/t={t},e={e}"),
            z.abs() <= VARIANCE_Z_LIMIT,
            format!(
                "empirical {:.6} predicted {:.6} se {:.2e} z {z:+.2}",
                check.empirical, check.predicted, check.stderr
            ),
        ));
    }
    let note = (options.variance_samples < FULL_VARIANCE_SAMPLES).then(|| {
        format!(
            "variance check run at n = {} instead of {}: the {}-SE band is {:.1}x wider",
            options.variance_samples,
            FULL_VARIANCE_SAMPLES,
            VARIANCE_Z_LIMIT,
            (FULL_VARIANCE_SAMPLES as f64 / options.variance_samples as f64).sqrt()
        )
    });
    Ok((out, note))
}

fn order() -> Result<Vec<CheckOutcome>> {
    let problem = OrderProblem::default();
    let mut out = Vec::new();
    for (kind, target) in [(SamplerKind::PfEuler, -1.0), (SamplerKind::PfHeun, -2.0)] {
        let fit = solver_order(kind, &ORDER_NODE_COUNTS, &problem)?;
        out.push(CheckOutcome::new(
            format!("solver_order/{}", kind.name()),
            (fit.slope - target).abs() <= ORDER_TOLERANCE,
            format!("slope {:.3} (target {target} +/- {ORDER_TOLERANCE})", fit.slope),
        ));
    }
    Ok(out)
}

//! Guidance-weight by epsilon-scale ablation grids.
//!
//! Every cell reuses the template seed, so all cells see the same initial
//! states and noise draws and cell-to-cell differences are paired. Monte-Carlo
//! error comes from batch means: the cell's samples are split into
//! `batches` contiguous groups and the metric is recomputed on each.

use serde::{Deserialize, Serialize};

use crate::output::{fmt_f64, write_rows};
use crate::parallel;
use crate::rng;
use crate::samplers::{self, SamplerConfig, SamplerKind, ScalingSchedule, Timeline};
use crate::world::{self, CorrectionField, IsotropicGaussianMixture, ScoreField};
use crate::{Error, Result};

use super::metrics::{frechet_distance, FrechetStats, SlicedReference};

pub const FRECHET: &str = "frechet";
pub const SLICED_WASSERSTEIN: &str = "sliced_wasserstein";
pub const METRICS: [&str; 2] = [FRECHET, SLICED_WASSERSTEIN];

const REFERENCE_STREAM_TAG: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub w_values: Vec<f64>,
    pub b_values: Vec<f64>,
    /// Slope of the scaling schedule, shared by all cells.
    pub k: f64,
    pub batches: usize,
    pub n_projections: usize,
    /// Size of the true-world sample the sliced-Wasserstein metric compares against.
    pub reference_size: usize,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            w_values: vec![0.0, 1.0, 1.67, 2.0],
            b_values: vec![1.0, 1.0004, 1.001, 1.01],
            k: 0.0,
            batches: 10,
            n_projections: 64,
            reference_size: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetric {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
    pub batch_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub w_dg: f64,
    pub lambda_b: f64,
    pub status: CellStatus,
    pub failure: Option<String>,
    pub metrics: Vec<CellMetric>,
}

impl AblationCell {
    pub fn metric(&self, name: &str) -> Option<&CellMetric> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Difference `a - b` of a metric between two cells and its paired standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDifference {
    pub difference: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub solver: SamplerKind,
    pub steps: usize,
    pub seed: u64,
    pub n_per_cell: usize,
    pub batches: usize,
    pub w_values: Vec<f64>,
    pub b_values: Vec<f64>,
    /// Row-major: `cells[i * b_values.len() + j]` is `(w_values[i], b_values[j])`.
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    pub fn cell(&self, w_index: usize, b_index: usize) -> &AblationCell {
        &self.cells[w_index * self.b_values.len() + b_index]
    }

    pub fn failed_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| c.status == CellStatus::Failed)
            .count()
    }

    /// `(w_index, b_index)` of the valued cell with the smallest metric.
    pub fn argmin(&self, metric: &str) -> Option<(usize, usize)> {
        let nb = self.b_values.len();
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.metric(metric).map(|m| (i, m.value)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| (i / nb, i % nb))
    }

    pub fn paired_difference(
        &self,
        a: (usize, usize),
        b: (usize, usize),
        metric: &str,
    ) -> Option<PairedDifference> {
        let ma = self.cell(a.0, a.1).metric(metric)?;
        let mb = self.cell(b.0, b.1).metric(metric)?;
        let diffs: Vec<f64> = ma
            .batch_values
            .iter()
            .zip(&mb.batch_values)
            .map(|(x, y)| x - y)
            .collect();
        Some(PairedDifference {
            difference: ma.value - mb.value,
            stderr: batch_stderr(&diffs),
        })
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut rows = Vec::new();
        for c in &self.cells {
            for name in METRICS {
                let (value, stderr) = match c.metric(name) {
                    Some(m) => (fmt_f64(m.value), fmt_f64(m.stderr)),
                    None => (String::new(), String::new()),
                };
                rows.push(vec![
                    fmt_f64(c.w_dg),
                    fmt_f64(c.lambda_b),
                    name.to_string(),
                    value,
                    stderr,
                    match c.status {
                        CellStatus::Ok => "ok".to_string(),
                        CellStatus::Failed => "failed".to_string(),
                    },
                ]);
            }
        }
        write_rows(
            path,
            &["w_dg", "lambda_b", "metric_name", "value", "stderr", "status"],
            rows,
        )
    }
}

/// Standard error of a full-sample statistic estimated from `B` batch values.
fn batch_stderr(values: &[f64]) -> f64 {
    let b = values.len() as f64;
    if values.len() < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / b;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1.0);
    (var / b).sqrt()
}

/// Both quality metrics against the true world.
pub struct MetricTargets {
    stats: FrechetStats,
    sliced: SlicedReference,
}

impl MetricTargets {
    pub fn new(world: &IsotropicGaussianMixture, spec: &AblationSpec, seed: u64) -> Result<Self> {
        let mut rng = rng::aux_stream(seed, REFERENCE_STREAM_TAG);
        let reference = world::sample_with(world, spec.reference_size, &mut rng);
        Ok(Self {
            stats: FrechetStats::from_mixture(world)?,
            sliced: SlicedReference::new(&reference, spec.n_projections, seed)?,
        })
    }

    pub fn frechet(&self, samples: &[Vec<f64>]) -> Result<f64> {
        frechet_distance(&FrechetStats::from_samples(samples)?, &self.stats)
    }

    pub fn sliced_wasserstein(&self, samples: &[Vec<f64>]) -> Result<f64> {
        self.sliced.distance(samples)
    }

    fn evaluate(&self, name: &str, samples: &[Vec<f64>]) -> Result<f64> {
        match name {
            FRECHET => self.frechet(samples),
            _ => self.sliced_wasserstein(samples),
        }
    }

    /// Full-sample value plus batch-means standard error for each metric.
    pub fn cell_metrics(
        &self,
        samples: &[Vec<f64>],
        batches: usize,
        execution: crate::Execution,
    ) -> Result<Vec<CellMetric>> {
        let size = samples.len() / batches;
        METRICS
            .iter()
            .map(|&name| {
                let value = self.evaluate(name, samples)?;
                let batch_values = parallel::try_map_indexed(batches, execution, |b| {
                    let end = if b + 1 == batches { samples.len() } else { (b + 1) * size };
                    self.evaluate(name, &samples[b * size..end])
                })?;
                Ok(CellMetric {
                    name: name.to_string(),
                    value,
                    stderr: batch_stderr(&batch_values),
                    batch_values,
                })
            })
            .collect()
    }
}

/// Evaluates every `(w, b)` pair of the grid; diverging cells are marked failed.
pub fn ablate(
    template: &SamplerConfig,
    spec: &AblationSpec,
    world: &IsotropicGaussianMixture,
    model: &dyn ScoreField,
    correction: Option<&dyn CorrectionField>,
    timeline: Timeline<'_>,
) -> Result<AblationGrid> {
    if spec.w_values.is_empty() || spec.b_values.is_empty() {
        return Err(Error::invalid("ablation axes must be nonempty"));
    }
    if spec.batches < 2 || template.batch < 2 * spec.batches {
        return Err(Error::invalid(format!(
            "need batches >= 2 and at least two samples per batch (n = {}, batches = {})",
            template.batch, spec.batches
        )));
    }
    let targets = MetricTargets::new(world, spec, template.seed)?;
    let mut cells = Vec::with_capacity(spec.w_values.len() * spec.b_values.len());
    for &w in &spec.w_values {
        for &b in &spec.b_values {
            let config = SamplerConfig {
                w_dg_1st: w,
                scaling: ScalingSchedule { k: spec.k, b },
                ..template.clone()
            };
            let cell = match samplers::sample(&config, model, correction, timeline) {
                Ok(out) => AblationCell {
                    w_dg: w,
                    lambda_b: b,
                    status: CellStatus::Ok,
                    failure: None,
                    metrics: targets.cell_metrics(&out.samples, spec.batches, template.execution)?,
                },
                Err(e) if e.is_divergence() => AblationCell {
                    w_dg: w,
                    lambda_b: b,
                    status: CellStatus::Failed,
                    failure: Some(e.to_string()),
                    metrics: Vec::new(),
                },
                Err(e) => return Err(e),
            };
            cells.push(cell);
        }
    }
    Ok(AblationGrid {
        solver: template.kind,
        steps: template.steps,
        seed: template.seed,
        n_per_cell: template.batch,
        batches: spec.batches,
        w_values: spec.w_values.clone(),
        b_values: spec.b_values.clone(),
        cells,
    })
}

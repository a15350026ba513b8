//! Plain samplers with no guidance and no epsilon scaling.
//!
//! These duplicate the update rules of the main driver on purpose: with
//! `w = 0` and `lambda = 1` the guided driver must reproduce them bit for bit
//! under a shared seed.

use crate::parallel::{self, Execution};
use crate::rng;
use crate::world::ScoreField;
use crate::Result;

use super::{check_divergence, SamplerKind, Timeline};

pub fn sample(
    kind: SamplerKind,
    field: &dyn ScoreField,
    timeline: Timeline<'_>,
    seed: u64,
    batch: usize,
    execution: Execution,
) -> Result<Vec<Vec<f64>>> {
    parallel::try_map_indexed(batch, execution, |i| trajectory(kind, field, timeline, seed, i))
}

fn eps_at(field: &dyn ScoreField, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let mut e = field.evaluate(x, sigma)?;
    e.iter_mut().for_each(|v| *v *= -sigma);
    Ok(e)
}

fn trajectory(
    kind: SamplerKind,
    field: &dyn ScoreField,
    timeline: Timeline<'_>,
    seed: u64,
    index: usize,
) -> Result<Vec<f64>> {
    let d = field.dim();
    let mut rng = rng::stream(seed, index as u64);
    let mut x = rng::standard_normal_vec(&mut rng, d);
    let mut z = vec![0.0; d];
    match timeline {
        Timeline::Discrete(schedule) => {
            for (s, t) in (1..=schedule.step_count()).rev().enumerate() {
                if t > 1 {
                    rng::fill_standard_normal(&mut rng, &mut z);
                } else {
                    z.iter_mut().for_each(|v| *v = 0.0);
                }
                let ab = schedule.alpha_bar(t)?;
                let inv = 1.0 / ab.sqrt();
                let y: Vec<f64> = x.iter().map(|v| v * inv).collect();
                let eps = eps_at(field, &y, schedule.equivalent_sigma(t)?)?;
                let coef = schedule.beta(t)? / (1.0 - ab).sqrt();
                let inv_sqrt_alpha = 1.0 / schedule.alpha(t)?.sqrt();
                let noise = schedule.posterior_beta(t)?.sqrt();
                for j in 0..d {
                    x[j] = inv_sqrt_alpha * (x[j] - coef * eps[j]) + noise * z[j];
                }
                check_divergence(&x, index, s + 1)?;
            }
        }
        Timeline::Continuous(grid) => {
            let scale = grid.sigma_max();
            x.iter_mut().for_each(|v| *v *= scale);
            for (s, (from, to)) in grid.intervals().enumerate() {
                let h = to - from;
                match kind {
                    SamplerKind::PfEuler => {
                        let e = eps_at(field, &x, from)?;
                        for j in 0..d {
                            x[j] += h * e[j];
                        }
                    }
                    SamplerKind::PfHeun => {
                        let e1 = eps_at(field, &x, from)?;
                        let pred: Vec<f64> = (0..d).map(|j| x[j] + h * e1[j]).collect();
                        if to == 0.0 {
                            x = pred;
                        } else {
                            let e2 = eps_at(field, &pred, to)?;
                            for j in 0..d {
                                x[j] += h * (e1[j] + e2[j]) / 2.0;
                            }
                        }
                    }
                    SamplerKind::ReverseSde => {
                        rng::fill_standard_normal(&mut rng, &mut z);
                        let e = eps_at(field, &x, from)?;
                        let dt = from - to;
                        let noise = (2.0 * from * dt).sqrt();
                        for j in 0..d {
                            x[j] += -2.0 * dt * e[j] + noise * z[j];
                        }
                    }
                    SamplerKind::Ancestral => {
                        return Err(crate::Error::invalid(
                            "ancestral sampling needs a discrete schedule",
                        ))
                    }
                }
                check_divergence(&x, index, s + 1)?;
            }
        }
    }
    Ok(x)
}

//! End-to-end use of the public API: worlds, samplers, guidance and metrics together.

use difflab::diagnostics::ablation::{AblationSpec, FRECHET, SLICED_WASSERSTEIN};
use difflab::diagnostics::{ablate, epsilon_norm_sampling, DriftVariant, FrechetStats, MetricTargets};
use difflab::discriminator::Mlp;
use difflab::samplers::{sample, SamplerConfig, SamplerKind, ScalingSchedule, Timeline};
use difflab::schedules::{linear_beta_schedule, power_sigma_grid};
use difflab::world::{AnalyticCorrection, IsotropicGaussianMixture, Perturbation};
use difflab::Execution;
use proptest::prelude::*;

fn worlds() -> (IsotropicGaussianMixture, IsotropicGaussianMixture, AnalyticCorrection) {
    let real = IsotropicGaussianMixture::default_ring();
    let model = real.perturbed(&Perturbation::default()).unwrap();
    let correction = AnalyticCorrection::new(real.clone(), model.clone()).unwrap();
    (real, model, correction)
}

fn heun(nodes: usize, batch: usize) -> SamplerConfig {
    SamplerConfig {
        kind: SamplerKind::PfHeun,
        steps: nodes,
        batch,
        seed: 21,
        ..SamplerConfig::default()
    }
}

#[test]
fn true_score_samples_are_closer_to_the_world_than_model_samples() {
    let (real, model, _) = worlds();
    let grid = power_sigma_grid(35, 0.002, 80.0, 7.0).unwrap();
    let config = heun(35, 5000);
    let spec = AblationSpec {
        reference_size: 20_000,
        ..AblationSpec::default()
    };
    let targets = MetricTargets::new(&real, &spec, 3).unwrap();
    let good = sample(&config, &real, None, Timeline::Continuous(&grid)).unwrap().samples;
    let bad = sample(&config, &model, None, Timeline::Continuous(&grid)).unwrap().samples;
    let fd_good = targets.frechet(&good).unwrap();
    let fd_bad = targets.frechet(&bad).unwrap();
    let sw_good = targets.sliced_wasserstein(&good).unwrap();
    let sw_bad = targets.sliced_wasserstein(&bad).unwrap();
    assert!(fd_good < 0.05, "FD of exact-score samples {fd_good}");
    assert!(fd_bad > 5.0 * fd_good, "{fd_bad} vs {fd_good}");
    assert!(sw_bad > 2.0 * sw_good, "{sw_bad} vs {sw_good}");

    let fitted = FrechetStats::from_samples(&good).unwrap();
    let truth = FrechetStats::from_mixture(&real).unwrap();
    assert!((fitted.covariance(0, 0) - truth.covariance(0, 0)).abs() < 0.3);
}

#[test]
fn ablation_is_deterministic_and_complete() {
    let (real, model, correction) = worlds();
    let grid = power_sigma_grid(12, 0.002, 80.0, 7.0).unwrap();
    let spec = AblationSpec {
        w_values: vec![0.0, 1.0],
        b_values: vec![1.0, 1.01, 1e-9],
        reference_size: 2000,
        n_projections: 16,
        ..AblationSpec::default()
    };
    let config = heun(12, 400);
    let run = |exec| {
        let c = SamplerConfig {
            execution: exec,
            ..config.clone()
        };
        ablate(&c, &spec, &real, &model, Some(&correction), Timeline::Continuous(&grid)).unwrap()
    };
    let a = run(Execution::Parallel);
    let b = run(Execution::Sequential);
    assert_eq!(a, b);
    assert_eq!(a.cells.len(), 6);
    assert_eq!(a.failed_count(), 2);
    for (i, _) in spec.w_values.iter().enumerate() {
        assert!(a.cell(i, 2).failure.as_deref().unwrap().contains("diverged"));
        assert!(a.cell(i, 0).metric(FRECHET).is_some());
    }
    // Guidance with the exact correction must beat the unguided baseline.
    for metric in [FRECHET, SLICED_WASSERSTEIN] {
        let d = a.paired_difference((1, 0), (0, 0), metric).unwrap();
        assert!(d.difference < -3.0 * d.stderr, "{metric}: {d:?}");
    }
}

#[test]
fn drift_variants_share_the_training_curve() {
    let (real, model, correction) = worlds();
    let schedule = linear_beta_schedule(200, 1e-4, 0.1).unwrap();
    let config = SamplerConfig {
        kind: SamplerKind::Ancestral,
        steps: 200,
        batch: 500,
        ..SamplerConfig::default()
    };
    let variants = DriftVariant::standard(1.0, ScalingSchedule::uniform(1.001));
    let curve = epsilon_norm_sampling(
        &config,
        &variants,
        &real,
        &model,
        Some(&correction),
        Timeline::Discrete(&schedule),
        500,
    )
    .unwrap();
    assert_eq!(curve.variants(), vec!["training", "baseline", "dg", "es", "dg+es"]);
    for v in curve.variants() {
        let points = curve.variant(v);
        assert_eq!(points.len(), 200);
        assert!(points.iter().all(|p| p.mean_eps_norm > 0.0 && p.stderr > 0.0));
    }
}

#[test]
fn saved_discriminator_guides_identically_after_reload() {
    let (_, model, _) = worlds();
    let grid = power_sigma_grid(10, 0.002, 80.0, 7.0).unwrap();
    let mlp = Mlp::xavier(Mlp::default_dims(2), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    mlp.save(&path).unwrap();
    let loaded = Mlp::load(&path).unwrap();
    let config = SamplerConfig {
        w_dg_1st: 0.5,
        w_dg_2nd: 0.5,
        ..heun(10, 50)
    };
    let a = sample(&config, &model, Some(&mlp), Timeline::Continuous(&grid)).unwrap();
    let b = sample(&config, &model, Some(&loaded), Timeline::Continuous(&grid)).unwrap();
    assert_eq!(a, b);
    let unguided = sample(&heun(10, 50), &model, None, Timeline::Continuous(&grid)).unwrap();
    assert_ne!(a.samples, unguided.samples);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn trajectories_do_not_depend_on_batch_size(seed in 0u64..1000, small in 1usize..8, kind in 0usize..4) {
        let (_, model, _) = worlds();
        let kind = [SamplerKind::Ancestral, SamplerKind::PfEuler, SamplerKind::PfHeun, SamplerKind::ReverseSde][kind];
        let schedule = linear_beta_schedule(30, 1e-3, 0.2).unwrap();
        let grid = power_sigma_grid(9, 0.002, 80.0, 7.0).unwrap();
        let timeline = if kind.is_discrete() { Timeline::Discrete(&schedule) } else { Timeline::Continuous(&grid) };
        let config = SamplerConfig {
            kind,
            steps: timeline.steps(),
            seed,
            batch: small,
            ..SamplerConfig::default()
        };
        let few = sample(&config, &model, None, timeline).unwrap();
        let many = sample(&SamplerConfig { batch: small + 5, ..config }, &model, None, timeline).unwrap();
        prop_assert_eq!(&few.samples[..], &many.samples[..small]);
    }
}

use std::path::Path;

use difflab::diagnostics::{ablate, epsilon_norm_sampling};
use difflab::discriminator::{train, SampleSource, StoredSamples};
use difflab::output::write_json;
use difflab::samplers::{read_samples_csv, sample, write_samples_csv, write_trace_csv, SamplerConfig, Timeline};
use difflab::schedules::{ContinuousTimeGrid, DiscreteNoiseSchedule, ScheduleRecord};
use difflab::verify::{self, VerifyOptions, FULL_VARIANCE_SAMPLES};
use difflab::world::{AnalyticCorrection, CorrectionField, IsotropicGaussianMixture, MixtureSpec};
use serde_json::{json, Value};

use crate::{Failure, RunConfig, VerifyArgs};

pub const MANIFEST: &str = "run-manifest.json";

pub(crate) struct Context {
    pub config: RunConfig,
    pub quiet: bool,
}

/// Everything a sampling command needs, resolved from the config.
struct Setup {
    real: IsotropicGaussianMixture,
    model: IsotropicGaussianMixture,
    correction: Box<dyn CorrectionField>,
    sampler: SamplerConfig,
    schedule: DiscreteNoiseSchedule,
    grid: ContinuousTimeGrid,
}

impl Setup {
    fn timeline(&self) -> Timeline<'_> {
        if self.sampler.kind.is_discrete() {
            Timeline::Discrete(&self.schedule)
        } else {
            Timeline::Continuous(&self.grid)
        }
    }

    fn schedule_record(&self) -> ScheduleRecord {
        if self.sampler.kind.is_discrete() {
            ScheduleRecord::new(Some(&self.schedule), None)
        } else {
            ScheduleRecord::new(None, Some(&self.grid))
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

impl Context {
    fn info(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn setup(&self) -> Result<Setup, Failure> {
        let (real, model) = self.config.worlds()?;
        let correction: Box<dyn CorrectionField> = match self.config.discriminator(real.dim())? {
            Some(mlp) => Box::new(mlp),
            None => Box::new(AnalyticCorrection::new(real.clone(), model.clone())?),
        };
        Ok(Setup {
            sampler: self.config.sampler_config()?,
            schedule: self.config.discrete_schedule()?,
            grid: self.config.sigma_grid()?,
            real,
            model,
            correction,
        })
    }

    /// Writes the manifest: resolved config, seed, worlds and command extras.
    fn write_manifest(&self, dir: &Path, command: &str, outputs: &[&str], extra: Value) -> Result<(), Failure> {
        let (real, model) = self.config.worlds()?;
        let mut manifest = json!({
            "command": command,
            "seed": self.config.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "true_world": MixtureSpec::from(real),
            "model_world": MixtureSpec::from(model),
            "outputs": outputs,
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut manifest, extra) {
            m.extend(e);
        }
        let path = dir.join(MANIFEST);
        write_json(&path, &manifest).map_err(|e| io_failure(&path, e))
    }

    pub fn simulate(&self) -> Result<(), Failure> {
        let dir = self.config.output_dir()?;
        let setup = self.setup()?;
        self.info(&format!(
            "simulate: {} x {} steps, batch {}",
            setup.sampler.kind.name(),
            setup.sampler.steps,
            setup.sampler.batch
        ));
        let output = sample(&setup.sampler, &setup.model, Some(setup.correction.as_ref()), setup.timeline())?;
        let samples = dir.join("samples.csv");
        write_samples_csv(&samples, &output.samples).map_err(|e| io_failure(&samples, e))?;
        let trace = dir.join("trace.csv");
        write_trace_csv(&trace, &output.trace).map_err(|e| io_failure(&trace, e))?;
        self.write_manifest(
            &dir,
            "simulate",
            &["samples.csv", "trace.csv"],
            json!({
                "sampler": setup.sampler,
                "schedule": setup.schedule_record(),
                "nfe": output.trace.nfe,
            }),
        )?;
        self.info(&format!("wrote {}", dir.display()));
        Ok(())
    }

    pub fn drift(&self) -> Result<(), Failure> {
        let dir = self.config.output_dir()?;
        let setup = self.setup()?;
        let variants = self.config.drift_variants()?;
        let training_n = self.config.drift.training_n.unwrap_or(setup.sampler.batch);
        self.info(&format!(
            "drift: {} variants on {} x {}, batch {}",
            variants.len(),
            setup.sampler.kind.name(),
            setup.sampler.steps,
            setup.sampler.batch
        ));
        let curve = epsilon_norm_sampling(
            &setup.sampler,
            &variants,
            &setup.real,
            &setup.model,
            Some(setup.correction.as_ref()),
            setup.timeline(),
            training_n,
        )?;
        let path = dir.join("drift.csv");
        curve.write_csv(&path).map_err(|e| io_failure(&path, e))?;
        self.write_manifest(
            &dir,
            "drift",
            &["drift.csv"],
            json!({
                "sampler": setup.sampler,
                "schedule": setup.schedule_record(),
                "variants": variants,
                "training_n": training_n,
                "norm_aggregation": curve.aggregation,
            }),
        )?;
        self.info(&format!("wrote {}", path.display()));
        Ok(())
    }

    pub fn ablate(&self) -> Result<(), Failure> {
        let dir = self.config.output_dir()?;
        let setup = self.setup()?;
        let spec = &self.config.ablation;
        self.info(&format!(
            "ablate: {} x {} cells, {} samples each",
            spec.w_values.len(),
            spec.b_values.len(),
            setup.sampler.batch
        ));
        let grid = ablate(
            &setup.sampler,
            spec,
            &setup.real,
            &setup.model,
            Some(setup.correction.as_ref()),
            setup.timeline(),
        )?;
        let path = dir.join("ablation.csv");
        grid.write_csv(&path).map_err(|e| io_failure(&path, e))?;
        let failed = grid.failed_count();
        self.write_manifest(
            &dir,
            "ablate",
            &["ablation.csv"],
            json!({
                "sampler": setup.sampler,
                "schedule": setup.schedule_record(),
                "failed_cells": failed,
            }),
        )?;
        if failed > 0 {
            eprintln!("warning: {failed} of {} cells failed", grid.cells.len());
        }
        self.info(&format!("wrote {}", path.display()));
        Ok(())
    }

    pub fn train_disc(&self) -> Result<(), Failure> {
        let dir = self.config.output_dir()?;
        let (real, model) = self.config.worlds()?;
        let training = self.config.training_config();
        training.validate()?;
        let stored;
        let fake: &dyn SampleSource = match &self.config.discriminator.fake_samples {
            Some(path) => {
                stored = StoredSamples::new(read_samples_csv(path).map_err(|e| {
                    Failure::Config(format!("{}: {e}", path.display()))
                })?)?;
                &stored
            }
            None => &model,
        };
        self.info(&format!(
            "train-disc: {} epochs x {} steps, batch {} per class",
            training.epochs, training.steps_per_epoch, training.batch_size
        ));
        let trained = train(&real, fake, &training)?;
        let weights = dir.join("weights.json");
        trained.mlp.save(&weights).map_err(|e| io_failure(&weights, e))?;
        let log = dir.join("training-log.csv");
        trained.write_log_csv(&log).map_err(|e| io_failure(&log, e))?;
        let last = trained.final_epoch();
        self.write_manifest(
            &dir,
            "train-disc",
            &["weights.json", "training-log.csv"],
            json!({ "training": training, "final_epoch": last }),
        )?;
        self.info(&format!(
            "final epoch: loss {:.4}, holdout accuracy {:.4}, mean |logit| {:.4}",
            last.loss, last.holdout_accuracy, last.mean_abs_logit
        ));
        Ok(())
    }

    pub fn verify(&self, args: &VerifyArgs, batch: Option<usize>) -> Result<(), Failure> {
        let defaults = VerifyOptions::default();
        let options = VerifyOptions {
            seed: self.config.seed,
            batch: batch.unwrap_or(defaults.batch),
            variance_samples: args.n.unwrap_or(FULL_VARIANCE_SAMPLES),
            execution: self.config.sampler.execution,
            corrupt_lambda: args.mutate_lambda,
        };
        if options.batch == 0 || options.variance_samples < 2 {
            return Err(Failure::Config("verify needs --batch >= 1 and --n >= 2".into()));
        }
        let report = verify::run(&options)?;
        print!("{}", report.render());
        if let Some(out) = &self.config.out {
            std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
            let path = out.join("verify-report.json");
            write_json(&path, &report).map_err(|e| io_failure(&path, e))?;
            self.write_manifest(out, "verify", &["verify-report.json"], json!({ "options": options }))?;
        }
        if report.all_passed() {
            Ok(())
        } else {
            Err(Failure::Verify(
                report.failed_invariants().iter().map(|s| s.to_string()).collect(),
            ))
        }
    }
}

//! The TOML run configuration and its resolution into runnable parts.
//!
//! Every section is optional. Relative paths inside the file are taken
//! relative to the file's directory.

use std::path::{Path, PathBuf};

use difflab::diagnostics::ablation::AblationSpec;
use difflab::diagnostics::DriftVariant;
use difflab::discriminator::{Mlp, TrainConfig};
use difflab::samplers::{ScalingSchedule, ScalingStages, SamplerConfig, SamplerKind};
use difflab::schedules::{linear_beta_schedule, power_sigma_grid, ContinuousTimeGrid, DiscreteNoiseSchedule};
use difflab::world::{IsotropicGaussianMixture, MixtureSpec, Perturbation};
use difflab::Execution;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub world: WorldSection,
    pub schedules: ScheduleSection,
    pub sampler: SamplerSection,
    pub guidance: GuidanceSection,
    pub drift: DriftSection,
    pub ablation: AblationSpec,
    pub discriminator: DiscriminatorSection,
}

/// The true data distribution and how the model's version of it is off.
///
/// By default the true world is a ring of isotropic Gaussians; `mixture`
/// (inline) or `file` (JSON or TOML) replace it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub components: usize,
    pub radius: f64,
    pub std: f64,
    pub mixture: Option<MixtureSpec>,
    pub file: Option<PathBuf>,
    pub perturbation: Perturbation,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            components: 8,
            radius: 4.0,
            std: 0.3,
            mixture: None,
            file: None,
            perturbation: Perturbation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// Chain length `T` of the ancestral sampler.
    pub discrete_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Node count `N` of the continuous solvers.
    pub nodes: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            discrete_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            nodes: 21,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
        }
    }
}

/// Sampler settings; the step count comes from `[schedules]` and the seed
/// from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    pub w_dg_1st: f64,
    pub w_dg_2nd: f64,
    pub scaling: ScalingSchedule,
    pub es_stages: ScalingStages,
    pub batch: usize,
    pub execution: Execution,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let base = SamplerConfig::default();
        Self {
            kind: base.kind,
            w_dg_1st: base.w_dg_1st,
            w_dg_2nd: base.w_dg_2nd,
            scaling: base.scaling,
            es_stages: base.es_stages,
            batch: base.batch,
            execution: base.execution,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuidanceSection {
    /// The exact correction between the true and model mixtures.
    #[default]
    Analytic,
    /// A trained discriminator's logit gradient.
    Discriminator { weights_file: PathBuf },
}

pub const STANDARD_VARIANTS: [&str; 4] = ["baseline", "dg", "es", "dg+es"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSection {
    /// Any of `baseline`, `dg`, `es`, `dg+es`.
    pub variants: Vec<String>,
    pub w_dg: f64,
    pub scaling: ScalingSchedule,
    /// Points per level on the training side; defaults to the sampler batch.
    pub training_n: Option<usize>,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            variants: STANDARD_VARIANTS.iter().map(|s| s.to_string()).collect(),
            w_dg: 1.67,
            scaling: ScalingSchedule::uniform(1.0004),
            training_n: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSection {
    /// Generated samples (as written by `simulate`) used as the fake class.
    /// Without it the fake class is drawn from the model mixture.
    pub fake_samples: Option<PathBuf>,
    pub training: TrainConfig,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub batch: Option<usize>,
}

fn config_error(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(config_error)
    }

    /// Reads `path` (or starts from defaults), applies `overrides` and
    /// checks that every referenced file exists.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, Failure> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", p.display())))?;
                let mut c = Self::parse(&text)
                    .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                c.rebase(p.parent().unwrap_or(Path::new(".")));
                c
            }
            None => Self::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(out) = &overrides.out {
            config.out = Some(out.clone());
        }
        if let Some(batch) = overrides.batch {
            config.sampler.batch = batch;
        }
        config.check_files()?;
        Ok(config)
    }

    fn rebase(&mut self, dir: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(p) = self.world.file.as_mut() {
            join(p);
        }
        if let GuidanceSection::Discriminator { weights_file } = &mut self.guidance {
            join(weights_file);
        }
        if let Some(p) = self.discriminator.fake_samples.as_mut() {
            join(p);
        }
    }

    fn check_files(&self) -> Result<(), Failure> {
        let mut referenced: Vec<&Path> = Vec::new();
        referenced.extend(self.world.file.as_deref());
        if let GuidanceSection::Discriminator { weights_file } = &self.guidance {
            referenced.push(weights_file);
        }
        referenced.extend(self.discriminator.fake_samples.as_deref());
        match referenced.into_iter().find(|p| !p.is_file()) {
            Some(missing) => Err(Failure::Config(format!(
                "referenced file {} does not exist",
                missing.display()
            ))),
            None => Ok(()),
        }
    }

    /// The output directory, created if needed.
    pub fn output_dir(&self) -> Result<PathBuf, Failure> {
        let dir = self
            .out
            .clone()
            .ok_or_else(|| Failure::Config("no output directory: pass --out or set `out` in the config".into()))?;
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    pub fn true_world(&self) -> Result<IsotropicGaussianMixture, Failure> {
        let w = &self.world;
        match (&w.mixture, &w.file) {
            (Some(_), Some(_)) => Err(Failure::Config("[world] sets both `mixture` and `file`".into())),
            (Some(spec), None) => IsotropicGaussianMixture::from_spec(spec.clone()).map_err(config_error),
            (None, Some(path)) => IsotropicGaussianMixture::load(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display()))),
            (None, None) => IsotropicGaussianMixture::ring(w.components, w.radius, w.std).map_err(config_error),
        }
    }

    pub fn worlds(&self) -> Result<(IsotropicGaussianMixture, IsotropicGaussianMixture), Failure> {
        let real = self.true_world()?;
        let model = real.perturbed(&self.world.perturbation).map_err(config_error)?;
        Ok((real, model))
    }

    pub fn discrete_schedule(&self) -> Result<DiscreteNoiseSchedule, Failure> {
        let s = &self.schedules;
        linear_beta_schedule(s.discrete_steps, s.beta_start, s.beta_end).map_err(config_error)
    }

    pub fn sigma_grid(&self) -> Result<ContinuousTimeGrid, Failure> {
        let s = &self.schedules;
        power_sigma_grid(s.nodes, s.sigma_min, s.sigma_max, s.rho).map_err(config_error)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig, Failure> {
        let s = &self.sampler;
        let config = SamplerConfig {
            kind: s.kind,
            steps: if s.kind.is_discrete() {
                self.schedules.discrete_steps
            } else {
                self.schedules.nodes
            },
            w_dg_1st: s.w_dg_1st,
            w_dg_2nd: s.w_dg_2nd,
            scaling: s.scaling,
            es_stages: s.es_stages,
            seed: self.seed,
            batch: s.batch,
            execution: s.execution,
            corrupt_lambda: false,
        };
        config.validate().map_err(config_error)?;
        Ok(config)
    }

    pub fn drift_variants(&self) -> Result<Vec<DriftVariant>, Failure> {
        let d = &self.drift;
        if d.variants.is_empty() {
            return Err(Failure::Config("[drift] variants is empty".into()));
        }
        let standard = DriftVariant::standard(d.w_dg, d.scaling);
        d.variants
            .iter()
            .map(|name| {
                standard
                    .iter()
                    .find(|v| &v.name == name)
                    .cloned()
                    .ok_or_else(|| {
                        Failure::Config(format!(
                            "unknown drift variant {name:?}; expected one of {}",
                            STANDARD_VARIANTS.join(", ")
                        ))
                    })
            })
            .collect()
    }

    pub fn training_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.discriminator.training.clone()
        }
    }

    /// The discriminator named by `[guidance]`, if any.
    pub fn discriminator(&self, dim: usize) -> Result<Option<Mlp>, Failure> {
        match &self.guidance {
            GuidanceSection::Analytic => Ok(None),
            GuidanceSection::Discriminator { weights_file } => {
                let mlp = Mlp::load(weights_file)
                    .map_err(|e| Failure::Config(format!("{}: {e}", weights_file.display())))?;
                if mlp.data_dim() != dim {
                    return Err(Failure::Config(format!(
                        "discriminator expects {}-dimensional data but the world is {dim}-dimensional",
                        mlp.data_dim()
                    )));
                }
                Ok(Some(mlp))
            }
        }
    }
}

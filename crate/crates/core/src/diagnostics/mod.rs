//! Exposure-bias diagnostics and sample-quality metrics.
//!
//! - [`drift`]: training-side versus sampling-side `||eps||` curves.
//! - [`variance`]: Monte-Carlo check of one-step variance inflation.
//! - [`metrics`]: Frechet distance on fitted Gaussians and sliced Wasserstein.
//! - [`ablation`]: guidance-weight by epsilon-scale grids with paired errors.
//! - [`order`]: empirical convergence order of the ODE solvers.

pub mod ablation;
pub mod drift;
pub mod metrics;
pub mod order;
pub mod variance;

pub use ablation::{ablate, AblationCell, AblationGrid, AblationSpec, CellStatus, MetricTargets};
pub use drift::{epsilon_norm_sampling, epsilon_norm_training, DriftCurve, DriftPoint, DriftVariant};
pub use metrics::{frechet_distance, sliced_wasserstein, FrechetStats, SlicedReference};
pub use order::{solver_order, OrderFit, OrderProblem};
pub use variance::{variance_inflation_check, VarianceCheck};

//! Conditional VAE for state-dependent residual distributions, plus a
//! mean-only regression baseline.

mod baseline;
mod dataset;
mod estimate;
mod model;
mod train;

pub use baseline::{train_regressor, Regressor, REGRESSOR_MAGIC};
pub use dataset::{DatasetMeta, ResidualDataset};
pub use estimate::{estimate_density, estimate_moments_gmm, estimate_moments_sampling, MomentEstimate};
pub use model::{CvaeArchitecture, CvaeGradients, CvaeModel, ElboTerms, Standardizer, CVAE_MAGIC};
pub use train::{train_cvae, LrSchedule, TrainConfig, TrainTrace};

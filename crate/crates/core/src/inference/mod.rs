//! Fitting: initialization, the Adam loop with restarts, and posterior summaries.

mod fit;
mod init;
mod optimizer;
mod summary;

pub use crate::truncnorm::sample_trunc_normal;
pub use fit::{fit, Diagnostics, FitResult, Objective, LATENT_SCALE_RANGE};
pub use init::{init_latent, InitStrategy};
pub use optimizer::OptimizerConfig;
pub use summary::{censored_posterior, evaluate_recovery, CensoredPosteriorEntry, CensoredPosteriorSummary};

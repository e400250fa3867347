//! The c-GPLVM objective: data, parameters, priors, and likelihood terms.

mod censoring;
mod dataset;
mod objective;
mod params;

pub use censoring::{
    kl_q_censored, kl_q_censored_grad, kl_q_censored_with_order, trunc_weibull_logpdf, CensoringPrior, KL_ORDER,
    KL_WINDOW, PRIOR_MASS_FLOOR,
};
pub use dataset::{Affine, CensorRecord, CensoredEntry, Dataset};
pub use objective::{
    cgplvm_nll, elbo, kl_standard_normal, likelihood_and_grad, log_priors, LikelihoodGrad, LogPriorTerms,
};
pub use params::{FeatureParams, LatentState, Mode, ModelConfig, ModelParams, PriorConfig, MAX_LATENT_DIM};
pub(crate) use objective::{censored_posterior, draw, kl_censored, kl_latent};

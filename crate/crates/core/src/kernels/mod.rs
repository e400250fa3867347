//! SE-ARD, mean-zero SE, and the joint-space ADD / INT / ADD+INT kernels.

mod additive;
mod block;
mod mean_zero;
mod se;

pub use additive::{
    add_int_kernel, component_gram, cross_gram, gram, gram_gradients, kernel, kernel_diag, AddIntParams, Component,
    ComponentMask, GramGradients, HyperParam, JointInputs, KernelKind,
};
pub(crate) use additive::UnitGrams;
pub(crate) use block::BaseKernel;
pub use mean_zero::{mean_zero_se, se_double_integral, se_single_integral, IntegrationDomain, DOUBLE_INTEGRAL_FLOOR};
pub use se::{se_ard, SeArdParams};

pub mod data;
pub mod error;
pub mod gp;
pub mod inference;
pub mod kernels;
pub mod linalg;
pub mod model;
mod parallel;
pub mod quadrature;
pub mod special;
pub mod truncnorm;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use parallel::set_thread_limit;

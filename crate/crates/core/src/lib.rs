//! Gaussian variational approximations of Gibbs posteriors for linear
//! classification and ranking, with computable PAC-Bayes bounds, a tempering
//! SMC sampler used as a reference, and mean-field matrix completion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod completion;
pub mod data;
pub mod error;
pub mod experiment;
pub mod measure;
pub mod normal;
pub mod optim;
pub mod risk;
pub mod smc;

pub use error::{Error, ErrorClass, Result};

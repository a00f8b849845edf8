//! Group tensor network autoregression.
//!
//! A tensor-valued time series observed over several networks is modeled
//! with one latent group structure per network mode: nodes in the same group
//! share their network (momentum) effect, covariate effects, and the
//! group-tuple autoregressive effect. The crate provides
//!
//! - dense tensor algebra ([`tensor`]),
//! - synthetic network, membership, and covariate generators ([`netgen`], [`model`]),
//! - model simulation and stability checks ([`model`]),
//! - alternating least-squares estimation with latent memberships ([`estimator`]),
//! - information-criterion selection of the group counts ([`selection`]),
//! - plug-in asymptotic inference and evaluation metrics ([`inference`]),
//! - CSV/JSON dataset formats shared with the command-line driver ([`io`]).

pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod model;
pub mod netgen;
pub mod rng;
pub mod selection;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DenseTensor, IndexSubset};

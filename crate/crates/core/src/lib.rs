//! Mixture disease course mapping.
//!
//! A nonlinear mixed-effects logistic progression model whose individual
//! latent parameters (onset `tau`, log-rate `xi`, sources `s`) follow a
//! Gaussian mixture, estimated with a mixture MCMC-SAEM loop. The crate also
//! carries the simulation scenarios, a post-hoc clustering baseline and the
//! evaluation metrics used to compare the two.
//!
//! The crate is `no_std` and only needs `alloc`. IO, command-line handling
//! and file formats live in the `mixcourse` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod error;
pub mod evaluation;
pub mod gmm;
pub mod laplace;
pub mod likelihood;
pub mod linalg;
pub mod math;
pub mod model;
pub mod posthoc;
pub mod rng;
pub mod saem;
pub mod simulator;

pub use error::{Error, Result};
pub use likelihood::{LatentState, MembershipMatrix};
pub use model::{Dataset, HyperParams, IndividualParams, MixtureParams, Patient, PopulationParams, Visit};
pub use saem::{FitConfig, FittedModel};
pub use simulator::Scenario;

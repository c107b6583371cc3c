//! Mixture MCMC-SAEM estimation.
//!
//! Each iteration runs three steps:
//!
//! 1. **Simulation**: one Metropolis-Hastings-within-Gibbs sweep over the
//!    population block `(g̃, ṽ, β)`, every patient's `(τ_i, ξ_i, s_i)`, and the
//!    cluster indicators ([`mh_gibbs_sweep`]).
//! 2. **Stochastic approximation**: `S ← S + ε_k (s(z) − S)` on the sufficient
//!    statistics ([`SufficientStats::update`]).
//! 3. **Maximization**: closed-form per-cluster updates followed by the
//!    weighted centering of `ξ̄` and `s̄` ([`maximize`]).

mod config;
mod fit;
mod init;
mod mstep;
mod personalize;
mod sampler;
mod stats;

pub use config::{step_size, FitConfig, IndicatorUpdate, ProposalConfig};
pub use fit::{fit, fit_from, FittedModel, TraceRow};
pub use init::initialize;
pub use mstep::{apply_xi_shift, maximize, maximize_with, MStep, ModelParams, CLUSTER_SD_FLOOR, NOISE_SD_FLOOR};
pub use personalize::{personalize, PersonalizeConfig, Personalization};
pub use sampler::{mh_gibbs_sweep, Acceptance, Block, Chains, ProposalScales};
pub use stats::SufficientStats;

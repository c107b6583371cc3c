use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{floor, powf};
use crate::model::HyperParams;

/// How the cluster indicators are refreshed at the end of each sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum IndicatorUpdate {
    /// `r_i` set to the argmax of the current responsibilities.
    HardArgmax,
    /// `r_i` drawn from the current responsibilities.
    Sample,
    /// Indicators integrated out: individual blocks target the marginal
    /// mixture prior and the statistics are weighted by the responsibilities.
    /// Labels still track the argmax for reporting.
    #[default]
    Soft,
}

/// Initial random-walk scales and the adaptation schedule.
///
/// Individual scales are relative to the cluster prior standard deviations,
/// population scales are absolute (see [`super::ProposalScales`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub tau: f64,
    pub xi: f64,
    pub sources: f64,
    pub g_tilde: f64,
    pub v_tilde: f64,
    pub beta: f64,
    /// Iterations between rescalings; adaptation stops after burn-in.
    pub adapt_window: usize,
    pub target_acceptance: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self { tau: 0.5, xi: 0.5, sources: 0.5, g_tilde: 0.01, v_tilde: 0.01, beta: 0.01, adapt_window: 50, target_acceptance: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_clusters: usize,
    pub n_sources: usize,
    pub n_iterations: usize,
    /// Fraction of iterations run with unit step size.
    pub burn_in: f64,
    /// Robbins-Monro exponent `α ∈ (0.5, 1]`.
    pub step_exponent: f64,
    pub proposal: ProposalConfig,
    pub indicator_update: IndicatorUpdate,
    pub hyper: HyperParams,
    pub seed: u64,
    /// Keep every `trace_stride`-th iteration in the diagnostics trace (0 disables it).
    pub trace_stride: usize,
}

impl FitConfig {
    pub fn new(n_clusters: usize, n_sources: usize, seed: u64) -> Self {
        Self {
            n_clusters,
            n_sources,
            n_iterations: 10_000,
            burn_in: 0.9,
            step_exponent: 0.65,
            proposal: ProposalConfig::default(),
            indicator_update: IndicatorUpdate::default(),
            hyper: HyperParams::default(),
            seed,
            trace_stride: 1,
        }
    }

    pub fn with_iterations(mut self, n: usize) -> Self {
        self.n_iterations = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::Config("n_clusters must be at least 1".into()));
        }
        if self.n_iterations == 0 {
            return Err(Error::Config("n_iterations must be positive".into()));
        }
        if !(self.burn_in > 0.0 && self.burn_in < 1.0) {
            return Err(Error::Config(format!("burn_in {} must lie in (0,1)", self.burn_in)));
        }
        if !(self.step_exponent > 0.5 && self.step_exponent <= 1.0) {
            return Err(Error::Config(format!("step exponent {} must lie in (0.5, 1]", self.step_exponent)));
        }
        let p = &self.proposal;
        if [p.tau, p.xi, p.sources, p.g_tilde, p.v_tilde, p.beta].iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("proposal scales must be finite and nonnegative".into()));
        }
        if p.adapt_window == 0 || !(p.target_acceptance > 0.0 && p.target_acceptance < 1.0) {
            return Err(Error::Config("adaptation window must be positive and target acceptance in (0,1)".into()));
        }
        self.hyper.validate()
    }

    /// Last iteration with unit step size.
    pub fn burn_in_iterations(&self) -> usize {
        floor(self.burn_in * self.n_iterations as f64) as usize
    }
}

/// Step size `ε_k`: 1 during burn-in, `(k − k_burn)^{−α}` afterwards. `k` starts at 1.
pub fn step_size(k: usize, config: &FitConfig) -> f64 {
    let k_burn = config.burn_in_iterations();
    if k <= k_burn {
        1.0
    } else {
        powf((k - k_burn) as f64, -config.step_exponent)
    }
}

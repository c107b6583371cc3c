use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::likelihood::{patient_residuals, posterior_membership, LatentState, Workspace};
use crate::linalg::Matrix;
use crate::model::{Dataset, ForwardModel, HyperParams, MixtureParams};

/// Sufficient statistics of the complete-data model given the indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// `Σ_i r_i^c`.
    pub counts: Vec<f64>,
    pub tau_sum: Vec<f64>,
    pub tau_sq: Vec<f64>,
    pub xi_sum: Vec<f64>,
    pub xi_sq: Vec<f64>,
    /// `n_c × N_s` sums of the sources.
    pub source_sum: Matrix,
    /// Flat `(g̃, ṽ, β)` population latents.
    pub population: Vec<f64>,
    /// Residual sum of squares per feature.
    pub rss: Vec<f64>,
    /// Observed entries per feature.
    pub obs_count: Vec<f64>,
}

impl SufficientStats {
    /// Statistics `s(z)` of the current iterate with one-hot indicators.
    pub fn from_state(state: &LatentState, data: &Dataset, fm: &ForwardModel) -> Self {
        Self::accumulate(state, data, fm, |i, w| w[state.labels[i]] = 1.0)
    }

    /// Statistics with the indicators replaced by their conditional
    /// expectations, the responsibilities `π_i^c` of the current latents.
    pub fn from_state_soft(state: &LatentState, data: &Dataset, fm: &ForwardModel, mix: &MixtureParams, hyper: &HyperParams) -> Self {
        Self::accumulate(state, data, fm, |i, w| w.copy_from_slice(&posterior_membership(&state.individuals[i], mix, hyper)))
    }

    fn accumulate(state: &LatentState, data: &Dataset, fm: &ForwardModel, weights: impl Fn(usize, &mut [f64])) -> Self {
        let nc = state.n_clusters;
        let ns = state.pop.n_sources();
        let d = data.n_features();
        let mut s = Self {
            counts: vec![0.0; nc],
            tau_sum: vec![0.0; nc],
            tau_sq: vec![0.0; nc],
            xi_sum: vec![0.0; nc],
            xi_sq: vec![0.0; nc],
            source_sum: Matrix::zeros(nc, ns),
            population: state.pop.to_flat(),
            rss: vec![0.0; d],
            obs_count: vec![0.0; d],
        };
        let mut ws = Workspace::new(d);
        let mut w = vec![0.0; nc];
        for (i, (ind, patient)) in state.individuals.iter().zip(data.patients()).enumerate() {
            w.iter_mut().for_each(|x| *x = 0.0);
            weights(i, &mut w);
            for (c, &r) in w.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                s.counts[c] += r;
                s.tau_sum[c] += r * ind.tau;
                s.tau_sq[c] += r * ind.tau * ind.tau;
                s.xi_sum[c] += r * ind.xi;
                s.xi_sq[c] += r * ind.xi * ind.xi;
                for (acc, src) in s.source_sum.row_mut(c).iter_mut().zip(&ind.sources) {
                    *acc += r * src;
                }
            }
            patient_residuals(fm, patient, ind, &mut ws, &mut s.rss, &mut s.obs_count);
        }
        s
    }

    /// Stochastic-approximation step `S ← S + ε (s − S)`, componentwise.
    pub fn update(&mut self, current: &Self, eps: f64) {
        fn blend(dst: &mut [f64], src: &[f64], eps: f64) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += eps * (s - *d);
            }
        }
        if eps == 1.0 {
            self.clone_from(current);
            return;
        }
        blend(&mut self.counts, &current.counts, eps);
        blend(&mut self.tau_sum, &current.tau_sum, eps);
        blend(&mut self.tau_sq, &current.tau_sq, eps);
        blend(&mut self.xi_sum, &current.xi_sum, eps);
        blend(&mut self.xi_sq, &current.xi_sq, eps);
        blend(self.source_sum.as_mut_slice(), current.source_sum.as_slice(), eps);
        blend(&mut self.population, &current.population, eps);
        blend(&mut self.rss, &current.rss, eps);
        blend(&mut self.obs_count, &current.obs_count, eps);
    }
}

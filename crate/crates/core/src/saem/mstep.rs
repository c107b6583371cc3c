use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::likelihood::LatentState;
use crate::math::sqrt;
use crate::model::{MixtureParams, PopulationParams};

use super::stats::SufficientStats;

/// Floor applied to the cluster standard deviations of `τ` and `ξ`.
pub const CLUSTER_SD_FLOOR: f64 = 1e-3;
/// Floor applied to the observation-noise standard deviations.
pub const NOISE_SD_FLOOR: f64 = 1e-4;
/// Smoothed cluster counts below this are treated as an empty cluster.
pub const EMPTY_CLUSTER_COUNT: f64 = 1e-8;

/// Current parameter estimates `θ`: population means and the mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub population_means: PopulationParams,
    pub mixture: MixtureParams,
}

/// Result of one maximization step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub params: ModelParams,
    /// Weighted mean `m = Σ_c π^c ξ̄^c` removed from every `ξ̄^c` and added to `ṽ̄`.
    /// The caller applies the same shift to the latent state ([`apply_xi_shift`]).
    pub xi_shift: f64,
    /// Clusters whose smoothed count vanished; their parameters were carried over.
    pub empty_clusters: Vec<usize>,
}

/// Mean and SD from weighted sums, the variance shrunk towards `reference`
/// by `prior` pseudo-observations.
fn moments(sum: f64, sq: f64, n: f64, prior: f64, reference: f64) -> (f64, f64) {
    let mean = sum / n;
    let ss = (sq - n * mean * mean).max(0.0);
    (mean, sqrt((ss + prior * reference) / (n + prior)).max(CLUSTER_SD_FLOOR))
}

/// Variance of all patients pooled over clusters.
fn pooled_variance(sum: &[f64], sq: &[f64], total: f64) -> f64 {
    let mean = sum.iter().sum::<f64>() / total;
    (sq.iter().sum::<f64>() / total - mean * mean).max(0.0)
}

/// Closed-form maximizer of the approximate expected complete-data log-likelihood.
///
/// Proportions are `N_c / N`; cluster means and SDs are the count-weighted
/// moments (SDs floored at [`CLUSTER_SD_FLOOR`]); population means equal the
/// smoothed latents; noise SDs are `√(RSS_k / n_k)` floored at
/// [`NOISE_SD_FLOOR`]. Afterwards `ξ̄` and `s̄` are re-centered so that
/// `Σ_c π^c ξ̄^c = 0` and `Σ_c π^c s̄_l^c = 0`; the `ξ` offset is moved into `ṽ̄`
/// (predictions are invariant), the source offset is dropped.
pub fn maximize(stats: &SufficientStats, previous: &ModelParams) -> MStep {
    maximize_with(stats, previous, 0.0)
}

/// [`maximize`] with the cluster variances of `τ` and `ξ` regularized by a
/// conjugate prior worth `prior_weight` patients at the pooled variance.
/// A weight of zero gives the maximum-likelihood update.
pub fn maximize_with(stats: &SufficientStats, previous: &ModelParams, prior_weight: f64) -> MStep {
    let mut params = previous.clone();
    let nc = stats.counts.len();
    let total: f64 = stats.counts.iter().sum();
    let mut empty = Vec::new();
    let (tau_ref, xi_ref) = if prior_weight > 0.0 && total > 0.0 {
        (pooled_variance(&stats.tau_sum, &stats.tau_sq, total), pooled_variance(&stats.xi_sum, &stats.xi_sq, total))
    } else {
        (0.0, 0.0)
    };

    params.population_means.set_flat(&stats.population);
    let mix = &mut params.mixture;
    for c in 0..nc {
        let n = stats.counts[c];
        if n < EMPTY_CLUSTER_COUNT {
            empty.push(c);
            mix.proportions[c] = 0.0;
            continue;
        }
        mix.proportions[c] = n / total;
        (mix.tau_mean[c], mix.tau_sd[c]) = moments(stats.tau_sum[c], stats.tau_sq[c], n, prior_weight, tau_ref);
        (mix.xi_mean[c], mix.xi_sd[c]) = moments(stats.xi_sum[c], stats.xi_sq[c], n, prior_weight, xi_ref);
        for (m, s) in mix.source_means.row_mut(c).iter_mut().zip(stats.source_sum.row(c)) {
            *m = s / n;
        }
    }
    if !empty.is_empty() {
        log::warn!("M-step: clusters {:?} are empty; keeping their previous parameters", empty);
    }
    // renormalize against round-off so the simplex invariant holds tightly
    let psum: f64 = mix.proportions.iter().sum();
    for p in &mut mix.proportions {
        *p /= psum;
    }
    for (k, sd) in mix.noise_sd.iter_mut().enumerate() {
        if stats.obs_count[k] > 0.0 {
            *sd = sqrt(stats.rss[k] / stats.obs_count[k]).max(NOISE_SD_FLOOR);
        }
    }

    let xi_shift: f64 = mix.proportions.iter().zip(&mix.xi_mean).map(|(p, m)| p * m).sum();
    for m in &mut mix.xi_mean {
        *m -= xi_shift;
    }
    for v in &mut params.population_means.v_tilde {
        *v += xi_shift;
    }
    for l in 0..mix.n_sources() {
        let offset: f64 = (0..nc).map(|c| mix.proportions[c] * mix.source_means[(c, l)]).sum();
        for c in 0..nc {
            mix.source_means[(c, l)] -= offset;
        }
    }
    MStep { params, xi_shift, empty_clusters: empty }
}

/// Moves a `ξ` offset from the individuals into the velocities: `ξ_i −= m`,
/// `ṽ += m`. The data likelihood is unchanged because only `ṽ_k + ξ_i` enters it.
/// The smoothed statistics are shifted consistently.
pub fn apply_xi_shift(state: &mut LatentState, stats: &mut SufficientStats, shift: f64) {
    if shift == 0.0 {
        return;
    }
    for ind in &mut state.individuals {
        ind.xi -= shift;
    }
    for v in &mut state.pop.v_tilde {
        *v += shift;
    }
    for c in 0..stats.counts.len() {
        let (n, s) = (stats.counts[c], stats.xi_sum[c]);
        stats.xi_sq[c] += -2.0 * shift * s + shift * shift * n;
        stats.xi_sum[c] -= shift * n;
    }
    let d = state.pop.n_features();
    for v in &mut stats.population[d..2 * d] {
        *v += shift;
    }
}

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{membership_matrix, mixture_log_density, mixture_re_logdensity, population_prior, LatentState, MembershipMatrix};
use crate::math::exp;
use crate::model::{Dataset, ForwardModel, HyperParams, IndividualParams, MixtureParams, PopulationParams};

use super::config::{step_size, FitConfig, IndicatorUpdate};
use super::init::initialize;
use super::mstep::{apply_xi_shift, maximize_with, ModelParams};
use super::sampler::{mh_gibbs_sweep, Acceptance, Block, Chains, ProposalScales};
use super::stats::SufficientStats;

/// Iterations with a non-finite log-likelihood tolerated before giving up.
const MAX_NON_FINITE_ITERATIONS: usize = 100;

/// One row of the diagnostics trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub step_size: f64,
    pub complete_loglik: f64,
    pub data_loglik: f64,
    /// Per-block acceptance of this sweep in [`Block::ALL`] order (`None` if not proposed).
    pub acceptance: [Option<f64>; 6],
    pub proportions: Vec<f64>,
    pub tau_mean: Vec<f64>,
    pub tau_sd: Vec<f64>,
    pub xi_mean: Vec<f64>,
    pub xi_sd: Vec<f64>,
    pub noise_sd: Vec<f64>,
}

/// Output of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub features: Vec<String>,
    pub patient_ids: Vec<String>,
    pub population: PopulationParams,
    pub mixture: MixtureParams,
    pub hyper: HyperParams,
    /// Posterior means over the post-burn-in iterates.
    pub individuals: Vec<IndividualParams>,
    pub membership: MembershipMatrix,
    /// Proposal scales at the end of adaptation.
    pub proposal_scales: ProposalScales,
    pub trace: Vec<TraceRow>,
    pub config: FitConfig,
}

impl FittedModel {
    pub fn n_clusters(&self) -> usize {
        self.mixture.n_clusters()
    }

    /// Mean space shift of cluster `c`: `w̄^c = A s̄^c`.
    pub fn cluster_space_shift(&self, c: usize) -> Result<Vec<f64>> {
        let a = self.population.mixing_matrix()?;
        Ok(a.mul_vec(self.mixture.cluster_source_mean(c)))
    }

    /// `(τ̄^c, ξ̄^c, w̄_1^c, …, w̄_d^c)` for every cluster.
    pub fn cluster_summaries(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.n_clusters())
            .map(|c| {
                let mut row = vec![self.mixture.tau_mean[c], self.mixture.xi_mean[c]];
                row.extend(self.cluster_space_shift(c)?);
                Ok(row)
            })
            .collect()
    }

    /// Most probable cluster of each patient.
    pub fn labels(&self) -> Vec<usize> {
        self.membership.hard_labels()
    }
}

fn complete_loglik(state: &LatentState, data_ll: f64, params: &ModelParams, hyper: &HyperParams, indicator: IndicatorUpdate) -> f64 {
    let prior = population_prior(&state.pop, &params.population_means, hyper).unwrap_or(f64::NAN);
    let re = match indicator {
        IndicatorUpdate::Soft => state.individuals.iter().map(|ind| mixture_log_density(ind, &params.mixture, hyper)).sum(),
        _ => mixture_re_logdensity(state, &params.mixture, hyper),
    };
    data_ll + re + prior
}

fn initial_scales(config: &FitConfig) -> ProposalScales {
    let p = &config.proposal;
    ProposalScales { tau: p.tau, xi: p.xi, sources: p.sources, g_tilde: p.g_tilde, v_tilde: p.v_tilde, beta: p.beta }
}

/// Fits the mixture model from the deterministic data-driven initialization.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FittedModel> {
    let (state, params) = initialize(data, config)?;
    fit_from(data, config, state, params)
}

/// Fits the mixture model from a given starting state and parameters.
pub fn fit_from(data: &Dataset, config: &FitConfig, mut state: LatentState, mut params: ModelParams) -> Result<FittedModel> {
    config.validate()?;
    params.mixture.validate()?;
    if state.individuals.len() != data.n_patients() || state.labels.len() != data.n_patients() {
        return Err(Error::Config("initial state does not match the dataset".into()));
    }
    if state.n_clusters != config.n_clusters || params.mixture.n_clusters() != config.n_clusters {
        return Err(Error::Config("initial state does not match the configured cluster count".into()));
    }
    let hyper = config.hyper;
    let n = data.n_patients();
    let ns = state.pop.n_sources();
    let k_burn = config.burn_in_iterations();
    let mut scales = initial_scales(config);
    let mut chains = Chains::new(config.seed, n);
    let mut stats: Option<SufficientStats> = None;
    let mut window = Acceptance::default();
    let mut non_finite = 0usize;
    let mut trace = Vec::new();

    let mut tau_acc = vec![0.0; n];
    let mut xi_acc = vec![0.0; n];
    let mut src_acc = vec![vec![0.0; ns]; n];
    let mut n_acc = 0usize;

    for k in 1..=config.n_iterations {
        let sweep = mh_gibbs_sweep(&mut state, data, &params, &hyper, &scales, config.indicator_update, &mut chains)?;
        let cll = complete_loglik(&state, sweep.data_loglik, &params, &hyper, config.indicator_update);
        if cll.is_finite() {
            non_finite = 0;
        } else {
            non_finite += 1;
            if non_finite > MAX_NON_FINITE_ITERATIONS {
                return Err(Error::Divergence {
                    iteration: k,
                    detail: format!(
                        "log-likelihood non-finite for {non_finite} iterations; proportions {:?}, tau means {:?}, xi means {:?}, noise {:?}",
                        params.mixture.proportions, params.mixture.tau_mean, params.mixture.xi_mean, params.mixture.noise_sd
                    ),
                });
            }
        }

        let eps = step_size(k, config);
        let fm = ForwardModel::new(&state.pop)?;
        let current = match config.indicator_update {
            IndicatorUpdate::Soft => SufficientStats::from_state_soft(&state, data, &fm, &params.mixture, &hyper),
            _ => SufficientStats::from_state(&state, data, &fm),
        };
        let smoothed = match stats.as_mut() {
            Some(s) => {
                s.update(&current, eps);
                s
            }
            None => stats.insert(current),
        };
        let m = maximize_with(smoothed, &params, hyper.cluster_variance_prior);
        apply_xi_shift(&mut state, smoothed, m.xi_shift);
        params = m.params;
        if n_acc > 0 && m.xi_shift != 0.0 {
            // keep the running means in the current identifiability frame
            let shift = m.xi_shift * n_acc as f64;
            for x in &mut xi_acc {
                *x -= shift;
            }
        }

        if k > k_burn {
            for i in 0..n {
                let ind = &state.individuals[i];
                tau_acc[i] += ind.tau;
                xi_acc[i] += ind.xi;
                for (a, s) in src_acc[i].iter_mut().zip(&ind.sources) {
                    *a += s;
                }
            }
            n_acc += 1;
        }

        window.merge(&sweep.acceptance);
        if k <= k_burn && k % config.proposal.adapt_window == 0 {
            for b in Block::ALL {
                if let Some(rate) = window.rate(b) {
                    *scales.get_mut(b) *= exp(rate - config.proposal.target_acceptance);
                }
            }
            window = Acceptance::default();
        }

        if config.trace_stride > 0 && (k % config.trace_stride == 0 || k == config.n_iterations) {
            trace.push(TraceRow {
                iteration: k,
                step_size: eps,
                complete_loglik: cll,
                data_loglik: sweep.data_loglik,
                acceptance: Block::ALL.map(|b| sweep.acceptance.rate(b)),
                proportions: params.mixture.proportions.clone(),
                tau_mean: params.mixture.tau_mean.clone(),
                tau_sd: params.mixture.tau_sd.clone(),
                xi_mean: params.mixture.xi_mean.clone(),
                xi_sd: params.mixture.xi_sd.clone(),
                noise_sd: params.mixture.noise_sd.clone(),
            });
        }
    }

    let denom = n_acc.max(1) as f64;
    let individuals: Vec<IndividualParams> = (0..n)
        .map(|i| IndividualParams::new(tau_acc[i] / denom, xi_acc[i] / denom, src_acc[i].iter().map(|s| s / denom).collect()))
        .collect();
    let membership = membership_matrix(&individuals, &params.mixture, &hyper)?;
    Ok(FittedModel {
        features: data.features().to_vec(),
        patient_ids: data.patients().iter().map(|p| p.id.clone()).collect(),
        population: params.population_means,
        mixture: params.mixture,
        hyper,
        individuals,
        membership,
        proposal_scales: scales,
        trace,
        config: config.clone(),
    })
}

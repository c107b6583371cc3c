use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::likelihood::{argmax, cluster_log_density, mixture_log_density, patient_data_loglik, population_prior, posterior_membership, LatentState, NoiseModel, Workspace};
use crate::math::ln;
use crate::model::{Dataset, ForwardModel, HyperParams, IndividualParams, PopulationParams};
use crate::rng::{domain, stream, StreamRng};

use super::config::IndicatorUpdate;
use super::mstep::ModelParams;

/// Gibbs blocks of the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Tau,
    Xi,
    Sources,
    GTilde,
    VTilde,
    Beta,
}

impl Block {
    pub const ALL: [Block; 6] = [Block::Tau, Block::Xi, Block::Sources, Block::GTilde, Block::VTilde, Block::Beta];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::Tau => "tau",
            Block::Xi => "xi",
            Block::Sources => "sources",
            Block::GTilde => "g_tilde",
            Block::VTilde => "v_tilde",
            Block::Beta => "beta",
        }
    }
}

/// Random-walk scale of each block.
///
/// Population scales are absolute standard deviations. Individual scales are
/// multiples of the prior standard deviation of the patient's current cluster
/// (`σ_τ^c`, `σ_ξ^c`, `σ_s`), or of the π-weighted average over clusters in
/// [`IndicatorUpdate::Soft`] mode, so the chains keep mixing as the cluster
/// spreads change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub tau: f64,
    pub xi: f64,
    pub sources: f64,
    pub g_tilde: f64,
    pub v_tilde: f64,
    pub beta: f64,
}

impl ProposalScales {
    pub fn get(&self, block: Block) -> f64 {
        match block {
            Block::Tau => self.tau,
            Block::Xi => self.xi,
            Block::Sources => self.sources,
            Block::GTilde => self.g_tilde,
            Block::VTilde => self.v_tilde,
            Block::Beta => self.beta,
        }
    }

    pub fn get_mut(&mut self, block: Block) -> &mut f64 {
        match block {
            Block::Tau => &mut self.tau,
            Block::Xi => &mut self.xi,
            Block::Sources => &mut self.sources,
            Block::GTilde => &mut self.g_tilde,
            Block::VTilde => &mut self.v_tilde,
            Block::Beta => &mut self.beta,
        }
    }
}

/// Accepted and proposed move counts per block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub accepted: [u64; 6],
    pub proposed: [u64; 6],
}

impl Acceptance {
    fn record(&mut self, block: Block, accepted: bool) {
        self.proposed[block.index()] += 1;
        self.accepted[block.index()] += accepted as u64;
    }

    /// Acceptance rate of a block, `None` if it was never proposed.
    pub fn rate(&self, block: Block) -> Option<f64> {
        let p = self.proposed[block.index()];
        (p > 0).then(|| self.accepted[block.index()] as f64 / p as f64)
    }

    pub fn merge(&mut self, other: &Acceptance) {
        for i in 0..6 {
            self.accepted[i] += other.accepted[i];
            self.proposed[i] += other.proposed[i];
        }
    }
}

/// Random streams of the sampler: one per patient plus one for the population block.
#[derive(Debug, Clone)]
pub struct Chains {
    patients: Vec<StreamRng>,
    population: StreamRng,
}

impl Chains {
    pub fn new(seed: u64, n_patients: usize) -> Self {
        Self {
            patients: (0..n_patients).map(|i| stream(seed, domain::SAEM_PATIENT, i as u64)).collect(),
            population: stream(seed, domain::SAEM_POPULATION, 0),
        }
    }

    pub fn patient(&mut self, i: usize) -> &mut StreamRng {
        &mut self.patients[i]
    }
}

/// Outcome of one sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOutcome {
    pub acceptance: Acceptance,
    /// Data log-likelihood at the end of the sweep.
    pub data_loglik: f64,
}

#[inline]
fn metropolis_accept<R: Rng>(rng: &mut R, log_ratio: f64) -> bool {
    if !log_ratio.is_finite() {
        // a NaN or infinite proposal target is rejected; +inf cannot arise from finite states
        return false;
    }
    let u: f64 = rng.random();
    ln(u) < log_ratio
}

#[inline]
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn population_block_range(pop: &PopulationParams, block: Block) -> core::ops::Range<usize> {
    let d = pop.n_features();
    match block {
        Block::GTilde => 0..d,
        Block::VTilde => d..2 * d,
        Block::Beta => 2 * d..2 * d + pop.beta.as_slice().len(),
        _ => 0..0,
    }
}

fn patient_prior(ind: &IndividualParams, params: &ModelParams, hyper: &HyperParams, c: usize, indicator: IndicatorUpdate) -> f64 {
    match indicator {
        IndicatorUpdate::Soft => mixture_log_density(ind, &params.mixture, hyper),
        _ => cluster_log_density(ind, &params.mixture, hyper.sigma_source, c),
    }
}

/// One Metropolis-Hastings-within-Gibbs sweep.
///
/// Order: population sub-blocks `g̃`, `ṽ`, `β` (target: data attachment plus
/// population prior), then for each patient the `τ`, `ξ` and source blocks
/// (target: the patient's data term plus its cluster prior, or the marginal
/// mixture prior in [`IndicatorUpdate::Soft`] mode), then the indicator
/// refresh. Each conditional update is a symmetric random walk, so detailed
/// balance holds per block given the indicators. Proposals with a non-finite
/// target are rejected.
pub fn mh_gibbs_sweep(
    state: &mut LatentState,
    data: &Dataset,
    params: &ModelParams,
    hyper: &HyperParams,
    scales: &ProposalScales,
    indicator: IndicatorUpdate,
    chains: &mut Chains,
) -> Result<SweepOutcome> {
    let noise = NoiseModel::new(&params.mixture.noise_sd)?;
    let mut fm = ForwardModel::new(&state.pop)?;
    let mut ws = Workspace::new(data.n_features());
    let patients = data.patients();
    let mut ll: Vec<f64> = patients
        .iter()
        .zip(&state.individuals)
        .map(|(p, ind)| patient_data_loglik(&fm, &noise, p, ind, &mut ws))
        .collect();
    let mut acc = Acceptance::default();

    // population block
    let mut current_prior = population_prior(&state.pop, &params.population_means, hyper)?;
    let mut current_total: f64 = ll.iter().sum();
    let mut proposal_ll = alloc::vec![0.0; ll.len()];
    for block in [Block::GTilde, Block::VTilde, Block::Beta] {
        let range = population_block_range(&state.pop, block);
        if range.is_empty() {
            continue;
        }
        let sd = scales.get(block);
        let mut flat = state.pop.to_flat();
        for x in &mut flat[range] {
            *x += sd * gaussian(&mut chains.population);
        }
        let mut candidate = state.pop.clone();
        candidate.set_flat(&flat);
        let accepted = match ForwardModel::new(&candidate) {
            Ok(cfm) => {
                for ((slot, p), ind) in proposal_ll.iter_mut().zip(patients).zip(&state.individuals) {
                    *slot = patient_data_loglik(&cfm, &noise, p, ind, &mut ws);
                }
                let total: f64 = proposal_ll.iter().sum();
                let prior = population_prior(&candidate, &params.population_means, hyper)?;
                let ok = metropolis_accept(&mut chains.population, (total + prior) - (current_total + current_prior));
                if ok {
                    state.pop = candidate;
                    fm = cfm;
                    core::mem::swap(&mut ll, &mut proposal_ll);
                    current_total = total;
                    current_prior = prior;
                }
                ok
            }
            Err(_) => false,
        };
        acc.record(block, accepted);
    }

    // individual blocks
    let n_sources = state.pop.n_sources();
    let mix = &params.mixture;
    // marginal target: the step must not depend on the state, so use the π-weighted SDs
    let weighted = |sd: &[f64]| mix.proportions.iter().zip(sd).map(|(p, s)| p * s).sum::<f64>();
    let (soft_tau_sd, soft_xi_sd) = (weighted(&mix.tau_sd), weighted(&mix.xi_sd));
    for (i, patient) in patients.iter().enumerate() {
        let c = state.labels[i];
        let (tau_sd, xi_sd) = match indicator {
            IndicatorUpdate::Soft => (soft_tau_sd, soft_xi_sd),
            _ => (mix.tau_sd[c], mix.xi_sd[c]),
        };
        let rng = &mut chains.patients[i];
        let mut cur_prior = patient_prior(&state.individuals[i], params, hyper, c, indicator);
        for block in [Block::Tau, Block::Xi, Block::Sources] {
            if block == Block::Sources && n_sources == 0 {
                continue;
            }
            let mut cand = state.individuals[i].clone();
            match block {
                Block::Tau => cand.tau += scales.tau * tau_sd * gaussian(rng),
                Block::Xi => cand.xi += scales.xi * xi_sd * gaussian(rng),
                _ => {
                    let sd = scales.sources * hyper.sigma_source;
                    for s in &mut cand.sources {
                        *s += sd * gaussian(rng);
                    }
                }
            }
            let cand_ll = patient_data_loglik(&fm, &noise, patient, &cand, &mut ws);
            let cand_prior = patient_prior(&cand, params, hyper, c, indicator);
            let ok = metropolis_accept(rng, (cand_ll + cand_prior) - (ll[i] + cur_prior));
            if ok {
                state.individuals[i] = cand;
                ll[i] = cand_ll;
                cur_prior = cand_prior;
            }
            acc.record(block, ok);
        }
    }

    // indicators
    for (i, ind) in state.individuals.iter().enumerate() {
        let probs = posterior_membership(ind, &params.mixture, hyper);
        state.labels[i] = match indicator {
            IndicatorUpdate::HardArgmax | IndicatorUpdate::Soft => argmax(&probs),
            IndicatorUpdate::Sample => {
                let u: f64 = chains.patients[i].random();
                let mut cum = 0.0;
                let mut pick = probs.len() - 1;
                for (c, p) in probs.iter().enumerate() {
                    cum += p;
                    if u < cum {
                        pick = c;
                        break;
                    }
                }
                pick
            }
        };
    }

    Ok(SweepOutcome { acceptance: acc, data_loglik: ll.iter().sum() })
}

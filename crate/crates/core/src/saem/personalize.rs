use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{membership_matrix, mixture_log_density, patient_data_loglik, MembershipMatrix, NoiseModel, Workspace};
use crate::math::ln;
use crate::model::{Dataset, ForwardModel, IndividualParams, Patient};
use crate::rng::{domain, stream};

use super::fit::FittedModel;

const MAX_POLISH_ROUNDS: usize = 10_000;

/// Settings of the per-patient MAP search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonalizeConfig {
    /// Random-walk iterations before the local polish.
    pub n_iterations: usize,
    pub seed: u64,
    pub tau_scale: f64,
    pub xi_scale: f64,
    pub source_scale: f64,
    /// Smallest step of the coordinate search, relative to the initial scales.
    pub tolerance: f64,
}

impl Default for PersonalizeConfig {
    fn default() -> Self {
        Self { n_iterations: 2000, seed: 0, tau_scale: 1.0, xi_scale: 0.1, source_scale: 0.3, tolerance: 1e-6 }
    }
}

/// Individual parameters and memberships of new patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Personalization {
    pub patient_ids: Vec<String>,
    pub individuals: Vec<IndividualParams>,
    pub membership: MembershipMatrix,
}

struct Target<'a> {
    fm: &'a ForwardModel,
    noise: &'a NoiseModel,
    model: &'a FittedModel,
    patient: &'a Patient,
}

impl Target<'_> {
    fn eval(&self, ind: &IndividualParams, ws: &mut Workspace) -> f64 {
        let v = patient_data_loglik(self.fm, self.noise, self.patient, ind, ws) + mixture_log_density(ind, &self.model.mixture, &self.model.hyper);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    }
}

fn coordinate(ind: &mut IndividualParams, j: usize) -> &mut f64 {
    match j {
        0 => &mut ind.tau,
        1 => &mut ind.xi,
        _ => &mut ind.sources[j - 2],
    }
}

/// Posterior mode of `(τ, ξ, s)` for each patient with the population frozen.
///
/// The target is the data term plus the marginal mixture prior. The search
/// starts at the best cluster mean, runs the individual random-walk blocks of
/// the sampler while tracking the best point, then polishes it with a
/// shrinking coordinate search.
pub fn personalize(model: &FittedModel, data: &Dataset, config: &PersonalizeConfig) -> Result<Personalization> {
    if data.features() != model.features.as_slice() {
        return Err(Error::Schema(alloc::format!("dataset features {:?} do not match the model features {:?}", data.features(), model.features)));
    }
    let fm = ForwardModel::new(&model.population)?;
    let noise = NoiseModel::new(&model.mixture.noise_sd)?;
    let mut ws = Workspace::new(data.n_features());
    let ns = model.population.n_sources();
    let scales: Vec<f64> = [config.tau_scale, config.xi_scale].into_iter().chain(core::iter::repeat_n(config.source_scale, ns)).collect();

    let mut individuals = Vec::with_capacity(data.n_patients());
    for (i, patient) in data.patients().iter().enumerate() {
        let target = Target { fm: &fm, noise: &noise, model, patient };
        let mut rng = stream(config.seed, domain::PERSONALIZE, i as u64);

        let mut best = IndividualParams::new(model.mixture.tau_mean[0], model.mixture.xi_mean[0], model.mixture.cluster_source_mean(0).to_vec());
        let mut best_val = target.eval(&best, &mut ws);
        for c in 1..model.n_clusters() {
            let cand = IndividualParams::new(model.mixture.tau_mean[c], model.mixture.xi_mean[c], model.mixture.cluster_source_mean(c).to_vec());
            let v = target.eval(&cand, &mut ws);
            if v > best_val {
                best = cand;
                best_val = v;
            }
        }

        let mut cur = best.clone();
        let mut cur_val = best_val;
        for _ in 0..config.n_iterations {
            for (lo, hi) in [(0, 1), (1, 2), (2, 2 + ns)] {
                if lo == hi {
                    continue;
                }
                let mut cand = cur.clone();
                for j in lo..hi {
                    let z: f64 = rng.sample(StandardNormal);
                    *coordinate(&mut cand, j) += scales[j] * z;
                }
                let v = target.eval(&cand, &mut ws);
                let u: f64 = rng.random();
                if v.is_finite() && ln(u) < v - cur_val {
                    cur = cand;
                    cur_val = v;
                    if cur_val > best_val {
                        best = cur.clone();
                        best_val = cur_val;
                    }
                }
            }
        }

        let mut steps = scales.clone();
        for _ in 0..MAX_POLISH_ROUNDS {
            let mut improved = false;
            for j in 0..steps.len() {
                for sign in [1.0, -1.0] {
                    let mut cand = best.clone();
                    *coordinate(&mut cand, j) += sign * steps[j];
                    let v = target.eval(&cand, &mut ws);
                    if v > best_val {
                        best = cand;
                        best_val = v;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                for s in &mut steps {
                    *s *= 0.5;
                }
                if steps.iter().zip(&scales).all(|(s, s0)| *s <= config.tolerance * s0) {
                    break;
                }
            }
        }
        individuals.push(best);
    }
    let membership = membership_matrix(&individuals, &model.mixture, &model.hyper)?;
    Ok(Personalization { patient_ids: data.patients().iter().map(|p| p.id.clone()).collect(), individuals, membership })
}

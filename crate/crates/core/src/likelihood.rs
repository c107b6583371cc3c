//! Log-densities of the mixture model: data attachment, population prior,
//! mixture prior on the individual parameters, posterior memberships,
//! assignment entropy and the ICL selection criterion.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math::{ln, log_sum_exp, normal_logpdf, LN_SQRT_2PI};
use crate::model::{Dataset, ForwardModel, HyperParams, IndividualParams, MixtureParams, Patient, PopulationParams};

/// Current values of every latent variable.
///
/// Cluster indicators are stored as labels; `labels[i] = c` encodes the one-hot
/// vector with `r_i^c = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub pop: PopulationParams,
    pub individuals: Vec<IndividualParams>,
    pub labels: Vec<usize>,
    pub n_clusters: usize,
}

impl LatentState {
    pub fn one_hot(&self, i: usize) -> Vec<u8> {
        let mut r = vec![0u8; self.n_clusters];
        r[self.labels[i]] = 1;
        r
    }

    /// `N_c = Σ_i r_i^c`.
    pub fn cluster_counts(&self) -> Vec<usize> {
        let mut n = vec![0usize; self.n_clusters];
        for &c in &self.labels {
            n[c] += 1;
        }
        n
    }
}

/// Posterior cluster-membership probabilities, one row per patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipMatrix {
    probs: Matrix,
}

impl MembershipMatrix {
    /// Wraps an `N × n_c` matrix whose rows are probability vectors (sum 1 within 1e-10).
    pub fn new(probs: Matrix) -> Result<Self> {
        for i in 0..probs.rows() {
            let row = probs.row(i);
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Domain(format!("membership row {i} has entries outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(Error::Domain(format!("membership row {i} sums to {s}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = Matrix::from_rows(rows).ok_or_else(|| Error::Schema("ragged membership rows".into()))?;
        Self::new(m)
    }

    pub fn n_patients(&self) -> usize {
        self.probs.rows()
    }

    pub fn n_clusters(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.probs
    }

    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.n_patients()).map(|i| argmax(self.row(i))).collect()
    }
}

/// Caches `ln σ_k` and `1/σ_k²` for the Gaussian residual density.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    log_norm: Vec<f64>,
    half_inv_var: Vec<f64>,
}

impl NoiseModel {
    pub fn new(noise_sd: &[f64]) -> Result<Self> {
        if noise_sd.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Domain("noise standard deviations must be strictly positive".into()));
        }
        Ok(Self {
            log_norm: noise_sd.iter().map(|&s| -ln(s) - LN_SQRT_2PI).collect(),
            half_inv_var: noise_sd.iter().map(|&s| 0.5 / (s * s)).collect(),
        })
    }

    #[inline]
    pub fn logpdf(&self, k: usize, residual: f64) -> f64 {
        self.log_norm[k] - self.half_inv_var[k] * residual * residual
    }
}

/// Reusable buffers for per-patient evaluations.
#[derive(Debug, Clone)]
pub struct Workspace {
    shifts: Vec<f64>,
    pred: Vec<f64>,
}

impl Workspace {
    pub fn new(n_features: usize) -> Self {
        Self { shifts: vec![0.0; n_features], pred: vec![0.0; n_features] }
    }
}

fn fill_shifts(fm: &ForwardModel, sources: &[f64], shifts: &mut [f64]) {
    let a = fm.mixing();
    for (k, w) in shifts.iter_mut().enumerate() {
        *w = a.row(k).iter().zip(sources).map(|(x, s)| x * s).sum();
    }
}

/// Data log-likelihood of one patient.
pub fn patient_data_loglik(fm: &ForwardModel, noise: &NoiseModel, patient: &Patient, ind: &IndividualParams, ws: &mut Workspace) -> f64 {
    fill_shifts(fm, &ind.sources, &mut ws.shifts);
    let mut ll = 0.0;
    for visit in &patient.visits {
        fm.predict_into(ind, &ws.shifts, visit.time, &mut ws.pred);
        for (k, y) in visit.values.iter().enumerate() {
            if let Some(y) = *y {
                ll += noise.logpdf(k, y - ws.pred[k]);
            }
        }
    }
    ll
}

/// Accumulates the residual sum of squares and observation count per feature for one patient.
pub fn patient_residuals(
    fm: &ForwardModel,
    patient: &Patient,
    ind: &IndividualParams,
    ws: &mut Workspace,
    rss: &mut [f64],
    count: &mut [f64],
) {
    fill_shifts(fm, &ind.sources, &mut ws.shifts);
    for visit in &patient.visits {
        fm.predict_into(ind, &ws.shifts, visit.time, &mut ws.pred);
        for (k, y) in visit.values.iter().enumerate() {
            if let Some(y) = *y {
                let r = y - ws.pred[k];
                rss[k] += r * r;
                count[k] += 1.0;
            }
        }
    }
}

/// Gaussian log-likelihood of every observed entry given the latent state.
/// Missing entries contribute nothing.
pub fn data_attachment(data: &Dataset, state: &LatentState, noise_sd: &[f64]) -> Result<f64> {
    if noise_sd.len() != data.n_features() {
        return Err(Error::Schema(format!("{} noise SDs for {} features", noise_sd.len(), data.n_features())));
    }
    if state.individuals.len() != data.n_patients() {
        return Err(Error::Schema("latent state and dataset disagree on the number of patients".into()));
    }
    let noise = NoiseModel::new(noise_sd)?;
    let fm = ForwardModel::new(&state.pop)?;
    let mut ws = Workspace::new(data.n_features());
    Ok(data
        .patients()
        .iter()
        .zip(&state.individuals)
        .map(|(p, ind)| patient_data_loglik(&fm, &noise, p, ind, &mut ws))
        .sum())
}

/// Independent Gaussian priors of `g̃_k`, `ṽ_k` and `β_ml` around `means`.
pub fn population_prior(pop: &PopulationParams, means: &PopulationParams, hyper: &HyperParams) -> Result<f64> {
    hyper.validate()?;
    if pop.g_tilde.len() != means.g_tilde.len() || pop.beta.as_slice().len() != means.beta.as_slice().len() {
        return Err(Error::Schema("population latent and mean shapes differ".into()));
    }
    let block = |xs: &[f64], ms: &[f64], sd: f64| -> f64 { xs.iter().zip(ms).map(|(&x, &m)| normal_logpdf(x, m, sd)).sum() };
    Ok(block(&pop.g_tilde, &means.g_tilde, hyper.sigma_g_tilde)
        + block(&pop.v_tilde, &means.v_tilde, hyper.sigma_v_tilde)
        + block(pop.beta.as_slice(), means.beta.as_slice(), hyper.sigma_beta))
}

/// `ln p(z_i | c)` for the individual parameters of one patient under cluster `c`
/// (without the `ln π^c` term).
#[inline]
pub fn cluster_log_density(ind: &IndividualParams, mix: &MixtureParams, sigma_source: f64, c: usize) -> f64 {
    let mut lp = normal_logpdf(ind.tau, mix.tau_mean[c], mix.tau_sd[c]) + normal_logpdf(ind.xi, mix.xi_mean[c], mix.xi_sd[c]);
    for (s, m) in ind.sources.iter().zip(mix.cluster_source_mean(c)) {
        lp += normal_logpdf(*s, *m, sigma_source);
    }
    lp
}

/// Complete-data log-density of the individual parameters given the indicators:
/// `Σ_i [ln π^{c_i} + ln p(z_i | c_i)]`.
///
/// Returns `-inf` when a patient sits in a cluster with zero proportion.
pub fn mixture_re_logdensity(state: &LatentState, mix: &MixtureParams, hyper: &HyperParams) -> f64 {
    state
        .individuals
        .iter()
        .zip(&state.labels)
        .map(|(ind, &c)| {
            let pi = mix.proportions[c];
            if pi <= 0.0 {
                f64::NEG_INFINITY
            } else {
                ln(pi) + cluster_log_density(ind, mix, hyper.sigma_source, c)
            }
        })
        .sum()
}

/// Log of the marginal mixture density `ln Σ_c π^c p(z | c)`.
pub fn mixture_log_density(ind: &IndividualParams, mix: &MixtureParams, hyper: &HyperParams) -> f64 {
    let terms: Vec<f64> = (0..mix.n_clusters())
        .map(|c| ln(mix.proportions[c]) + cluster_log_density(ind, mix, hyper.sigma_source, c))
        .collect();
    log_sum_exp(&terms)
}

/// Responsibilities `π_i^c ∝ π^c p(z_i | c)`, normalized in log space.
pub fn posterior_membership(ind: &IndividualParams, mix: &MixtureParams, hyper: &HyperParams) -> Vec<f64> {
    let logs: Vec<f64> = (0..mix.n_clusters())
        .map(|c| ln(mix.proportions[c]) + cluster_log_density(ind, mix, hyper.sigma_source, c))
        .collect();
    let norm = log_sum_exp(&logs);
    if !norm.is_finite() {
        // every component has zero weight or density; fall back to the prior weights
        return mix.proportions.clone();
    }
    logs.iter().map(|&l| crate::math::exp(l - norm)).collect()
}

pub fn membership_matrix(individuals: &[IndividualParams], mix: &MixtureParams, hyper: &HyperParams) -> Result<MembershipMatrix> {
    let rows: Vec<Vec<f64>> = individuals.iter().map(|ind| posterior_membership(ind, mix, hyper)).collect();
    if rows.is_empty() {
        return Ok(MembershipMatrix { probs: Matrix::zeros(0, mix.n_clusters()) });
    }
    MembershipMatrix::from_rows(&rows)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = c;
        }
    }
    best
}

/// One-hot vector of the argmax (lowest index wins ties).
pub fn hard_assign(row: &[f64]) -> Vec<u8> {
    let mut r = vec![0u8; row.len()];
    if !row.is_empty() {
        r[argmax(row)] = 1;
    }
    r
}

/// `−Σ_i Σ_c π_i^c ln π_i^c`, with `0 ln 0 = 0`.
pub fn raw_entropy(membership: &MembershipMatrix) -> f64 {
    let mut e = 0.0;
    for i in 0..membership.n_patients() {
        for &p in membership.row(i) {
            if p > 0.0 {
                e -= p * ln(p);
            }
        }
    }
    e
}

/// Entropy scaled by `N ln n_c` into `[0, 1]`: 0 for crisp, 1 for uniform memberships.
pub fn normalized_entropy(membership: &MembershipMatrix) -> Result<f64> {
    let nc = membership.n_clusters();
    if nc < 2 {
        return Err(Error::Config("normalized entropy needs at least two clusters".into()));
    }
    let n = membership.n_patients();
    if n == 0 {
        return Err(Error::Config("normalized entropy needs at least one patient".into()));
    }
    Ok((raw_entropy(membership) / (n as f64 * ln(nc as f64))).clamp(0.0, 1.0))
}

/// Number of free parameters updated by the M-step:
/// `2d + (d−1)N_s + n_c(2 + N_s) + 2n_c + (n_c − 1) + d`.
pub fn free_parameter_count(n_features: usize, n_sources: usize, n_clusters: usize) -> usize {
    let d = n_features;
    2 * d + (d - 1) * n_sources + n_clusters * (2 + n_sources) + 2 * n_clusters + (n_clusters - 1) + d
}

/// Terms of the ICL criterion. Lower values are better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Icl {
    pub complete_loglik: f64,
    pub n_free_params: usize,
    pub n_patients: usize,
    pub entropy: f64,
    pub value: f64,
}

/// `ICL = −2 L̂ + ν ln N + 2 E`.
pub fn icl_from_parts(complete_loglik: f64, n_free_params: usize, n_patients: usize, entropy: f64) -> Icl {
    let value = -2.0 * complete_loglik + n_free_params as f64 * ln(n_patients as f64) + 2.0 * entropy;
    Icl { complete_loglik, n_free_params, n_patients, entropy, value }
}

/// ICL of a fitted model.
///
/// `L̂ = Σ_i [ln π^{ĉ_i} + ln ∫ p(y_i | z) p(z | ĉ_i) dz]` is the classification
/// log-likelihood at the final estimates with the hard assignments `ĉ_i`; the
/// individual parameters are integrated out by a Laplace approximation. The
/// population latents are held at their estimates.
pub fn icl(model: &crate::saem::FittedModel, data: &Dataset) -> Result<Icl> {
    if model.individuals.len() != data.n_patients() || model.membership.n_patients() != data.n_patients() {
        return Err(Error::Config("model was not fitted on this dataset".into()));
    }
    let fm = ForwardModel::new(&model.population)?;
    let noise = NoiseModel::new(&model.mixture.noise_sd)?;
    let labels = model.membership.hard_labels();
    let mut ll = 0.0;
    for ((patient, ind), &c) in data.patients().iter().zip(&model.individuals).zip(&labels) {
        let pi = model.mixture.proportions[c];
        let (_, marginal) = crate::laplace::laplace_log_marginal(&fm, &noise, patient, &model.mixture, &model.hyper, c, ind)
            .ok_or_else(|| Error::Domain(format!("no Laplace approximation for patient {}", patient.id)))?;
        ll += ln(pi) + marginal;
    }
    let nu = free_parameter_count(data.n_features(), model.population.n_sources(), model.mixture.n_clusters());
    Ok(icl_from_parts(ll, nu, data.n_patients(), raw_entropy(&model.membership)))
}

//! Domain types and the deterministic forward model.
//!
//! Each feature `k` of patient `i` follows a logistic curve on the disease
//! timeline `ψ = e^ξ (t − τ)`:
//!
//! ```text
//! y_k = 1 / (1 + g_k · exp(−(v_k ψ + w_k) / (p_k (1 − p_k))))
//! ```
//!
//! with position `p_k`, velocity `v_k`, `g_k = (1 − p_k)/p_k`, and space shift
//! `w = A s` where the mixing matrix `A` has columns orthogonal to `v`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{householder_complement, Matrix};
use crate::math::{exp, ln};

/// Exponents are clamped to this magnitude before exponentiation.
pub const EXPONENT_CLAMP: f64 = 700.0;
/// Model outputs are clamped to `[OUTPUT_MARGIN, 1 − OUTPUT_MARGIN]`.
pub const OUTPUT_MARGIN: f64 = 1e-15;

/// One visit: age in years and one optional value per feature (`None` = missing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub time: f64,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    pub visits: Vec<Visit>,
}

impl Patient {
    pub fn n_observed(&self) -> usize {
        self.visits.iter().map(|v| v.values.iter().flatten().count()).sum()
    }

    /// Midpoint between first and last visit.
    pub fn visit_midpoint(&self) -> f64 {
        let first = self.visits.first().map_or(0.0, |v| v.time);
        let last = self.visits.last().map_or(0.0, |v| v.time);
        0.5 * (first + last)
    }
}

/// Long-format longitudinal observations for `N` patients over `d` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<String>,
    patients: Vec<Patient>,
}

impl Dataset {
    /// Validates and wraps the observations.
    ///
    /// Every patient needs at least one visit, strictly increasing finite visit
    /// times, one value slot per feature, and observed values in the open
    /// interval `(0, 1)`.
    pub fn new(features: Vec<String>, patients: Vec<Patient>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("dataset needs at least one feature".into()));
        }
        let d = features.len();
        for p in &patients {
            if p.visits.is_empty() {
                return Err(Error::Schema(format!("patient {} has no visits", p.id)));
            }
            for (j, v) in p.visits.iter().enumerate() {
                if !v.time.is_finite() {
                    return Err(Error::Schema(format!("patient {} visit {} has a non-finite time", p.id, j)));
                }
                if j > 0 && v.time <= p.visits[j - 1].time {
                    return Err(Error::Schema(format!(
                        "patient {} visit times are not strictly increasing at visit {}",
                        p.id, j
                    )));
                }
                if v.values.len() != d {
                    return Err(Error::Schema(format!(
                        "patient {} visit {} has {} values, expected {}",
                        p.id,
                        j,
                        v.values.len(),
                        d
                    )));
                }
                for (k, y) in v.values.iter().enumerate() {
                    if let Some(y) = *y {
                        if !(y > 0.0 && y < 1.0) {
                            return Err(Error::Schema(format!(
                                "patient {} visit {} feature {} value {} outside (0,1)",
                                p.id, j, features[k], y
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { features, patients })
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn n_observations(&self) -> usize {
        self.patients.iter().map(Patient::n_observed).sum()
    }
}

/// `g̃ = ln((1 − p)/p)` for a position `p ∈ (0, 1)`.
pub fn g_tilde_from_position(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("position {p} outside (0,1)")));
    }
    Ok(ln((1.0 - p) / p))
}

/// Inverse of [`g_tilde_from_position`]: `p = 1 / (1 + e^{g̃})`.
pub fn position_from_g_tilde(g_tilde: f64) -> f64 {
    1.0 / (1.0 + exp(g_tilde))
}

/// `ṽ = ln v` for a velocity `v > 0`.
pub fn v_tilde_from_velocity(v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Domain(format!("velocity {v} must be positive")));
    }
    Ok(ln(v))
}

pub fn velocity_from_v_tilde(v_tilde: f64) -> f64 {
    exp(v_tilde)
}

/// Fixed effects: log-transformed positions and velocities plus the mixing
/// coefficients `β` (a `(d − 1) × N_s` matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub g_tilde: Vec<f64>,
    pub v_tilde: Vec<f64>,
    pub beta: Matrix,
}

impl PopulationParams {
    pub fn new(g_tilde: Vec<f64>, v_tilde: Vec<f64>, beta: Matrix) -> Result<Self> {
        let p = Self { g_tilde, v_tilde, beta };
        p.validate()?;
        Ok(p)
    }

    /// Builds from natural-scale positions and velocities.
    pub fn from_natural(positions: &[f64], velocities: &[f64], beta: Matrix) -> Result<Self> {
        let g = positions.iter().map(|&p| g_tilde_from_position(p)).collect::<Result<Vec<_>>>()?;
        let v = velocities.iter().map(|&v| v_tilde_from_velocity(v)).collect::<Result<Vec<_>>>()?;
        Self::new(g, v, beta)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.g_tilde.len();
        if d == 0 || self.v_tilde.len() != d {
            return Err(Error::Config(format!(
                "g_tilde has {} entries and v_tilde {}; both must equal d ≥ 1",
                d,
                self.v_tilde.len()
            )));
        }
        if self.beta.rows() != d - 1 {
            return Err(Error::Config(format!("beta has {} rows, expected d − 1 = {}", self.beta.rows(), d - 1)));
        }
        if self.g_tilde.iter().chain(&self.v_tilde).chain(self.beta.as_slice()).any(|x| !x.is_finite()) {
            return Err(Error::Domain("population parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.g_tilde.len()
    }

    pub fn n_sources(&self) -> usize {
        self.beta.cols()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.g_tilde.iter().map(|&g| position_from_g_tilde(g)).collect()
    }

    pub fn velocities(&self) -> Vec<f64> {
        self.v_tilde.iter().map(|&v| velocity_from_v_tilde(v)).collect()
    }

    pub fn mixing_matrix(&self) -> Result<Matrix> {
        build_mixing_matrix(&self.v_tilde, &self.beta)
    }

    /// Flat view `(g̃, ṽ, β)` used by the sampler and the sufficient statistics.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.g_tilde.len() + self.beta.as_slice().len());
        out.extend_from_slice(&self.g_tilde);
        out.extend_from_slice(&self.v_tilde);
        out.extend_from_slice(self.beta.as_slice());
        out
    }

    /// Overwrites from a flat `(g̃, ṽ, β)` buffer of matching length.
    pub fn set_flat(&mut self, flat: &[f64]) {
        let d = self.g_tilde.len();
        self.g_tilde.copy_from_slice(&flat[..d]);
        self.v_tilde.copy_from_slice(&flat[d..2 * d]);
        self.beta.as_mut_slice().copy_from_slice(&flat[2 * d..]);
    }
}

/// Per-patient latent parameters: onset `tau` (years), log-rate `xi`, and sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualParams {
    pub tau: f64,
    pub xi: f64,
    pub sources: Vec<f64>,
}

impl IndividualParams {
    pub fn new(tau: f64, xi: f64, sources: Vec<f64>) -> Self {
        Self { tau, xi, sources }
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite() && self.xi.is_finite() && self.sources.iter().all(|s| s.is_finite())
    }
}

/// Mixture of Gaussians on the individual parameters, plus observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub proportions: Vec<f64>,
    pub tau_mean: Vec<f64>,
    pub tau_sd: Vec<f64>,
    pub xi_mean: Vec<f64>,
    pub xi_sd: Vec<f64>,
    /// `n_c × N_s` cluster means of the sources.
    pub source_means: Matrix,
    /// One observation-noise standard deviation per feature.
    pub noise_sd: Vec<f64>,
}

impl MixtureParams {
    pub fn n_clusters(&self) -> usize {
        self.proportions.len()
    }

    pub fn n_sources(&self) -> usize {
        self.source_means.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let nc = self.proportions.len();
        if nc == 0 {
            return Err(Error::Config("mixture needs at least one cluster".into()));
        }
        let lens = [self.tau_mean.len(), self.tau_sd.len(), self.xi_mean.len(), self.xi_sd.len(), self.source_means.rows()];
        if lens.iter().any(|&l| l != nc) {
            return Err(Error::Config("mixture parameter lengths disagree with the cluster count".into()));
        }
        if self.proportions.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Domain("cluster proportions must be finite and nonnegative".into()));
        }
        let total: f64 = self.proportions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("cluster proportions sum to {total}, expected 1")));
        }
        if self.tau_sd.iter().chain(&self.xi_sd).chain(&self.noise_sd).any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Domain("standard deviations must be strictly positive".into()));
        }
        Ok(())
    }

    /// Largest absolute weighted mean `|Σ_c π^c μ^c|` over ξ and each source.
    pub fn centering_residual(&self) -> f64 {
        let mut worst = self.proportions.iter().zip(&self.xi_mean).map(|(p, m)| p * m).sum::<f64>().abs();
        for l in 0..self.n_sources() {
            let m: f64 = (0..self.n_clusters()).map(|c| self.proportions[c] * self.source_means[(c, l)]).sum();
            worst = worst.max(m.abs());
        }
        worst
    }

    pub fn cluster_source_mean(&self, c: usize) -> &[f64] {
        self.source_means.row(c)
    }
}

/// Default weight of the cluster variance prior, in patients.
pub const DEFAULT_CLUSTER_VARIANCE_PRIOR: f64 = 2.0;

/// Prior standard deviations of the population latents, the fixed source SD
/// and the cluster variance regularization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub sigma_g_tilde: f64,
    pub sigma_v_tilde: f64,
    pub sigma_beta: f64,
    pub sigma_source: f64,
    /// Pseudo-patients at the pooled variance regularizing each cluster's
    /// `τ` and `ξ` variances in the M-step; zero gives the plain update.
    pub cluster_variance_prior: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self { sigma_g_tilde: 0.01, sigma_v_tilde: 0.01, sigma_beta: 0.01, sigma_source: 1.0, cluster_variance_prior: DEFAULT_CLUSTER_VARIANCE_PRIOR }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_g_tilde, self.sigma_v_tilde, self.sigma_beta, self.sigma_source];
        if all.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Domain("hyperparameters must be strictly positive".into()));
        }
        if !(self.cluster_variance_prior >= 0.0 && self.cluster_variance_prior.is_finite()) {
            return Err(Error::Domain("cluster variance prior weight must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Mixing matrix `A = B β` where `B` is the Householder basis of `v^⊥`.
pub fn build_mixing_matrix(v_tilde: &[f64], beta: &Matrix) -> Result<Matrix> {
    let d = v_tilde.len();
    if d == 0 {
        return Err(Error::Config("mixing matrix needs at least one feature".into()));
    }
    if beta.cols() > d - 1 {
        return Err(Error::Config(format!("{} sources exceed d − 1 = {}", beta.cols(), d - 1)));
    }
    if beta.rows() != d - 1 {
        return Err(Error::Config(format!("beta has {} rows, expected d − 1 = {}", beta.rows(), d - 1)));
    }
    if d == 1 {
        return Ok(Matrix::zeros(1, beta.cols()));
    }
    let v: Vec<f64> = v_tilde.iter().map(|&x| exp(x)).collect();
    let basis = householder_complement(&v).ok_or_else(|| Error::Domain("velocity vector is degenerate".into()))?;
    Ok(basis.matmul(beta))
}

/// Space shifts `w = A s`.
pub fn space_shifts(mixing: &Matrix, sources: &[f64]) -> Result<Vec<f64>> {
    if mixing.cols() != sources.len() {
        return Err(Error::Schema(format!(
            "mixing matrix has {} columns but {} sources were given",
            mixing.cols(),
            sources.len()
        )));
    }
    Ok(mixing.mul_vec(sources))
}

/// Disease-timeline value `ψ = e^ξ (t − τ)`.
#[inline]
pub fn reparametrize_time(t: f64, xi: f64, tau: f64) -> f64 {
    exp(xi) * (t - tau)
}

/// Precomputed per-feature constants of a [`PopulationParams`], for repeated
/// evaluation of the logistic curves.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    g_tilde: Vec<f64>,
    velocity: Vec<f64>,
    inv_pq: Vec<f64>,
    mixing: Matrix,
}

impl ForwardModel {
    pub fn new(pop: &PopulationParams) -> Result<Self> {
        pop.validate()?;
        let positions = pop.positions();
        Ok(Self {
            g_tilde: pop.g_tilde.clone(),
            velocity: pop.velocities(),
            inv_pq: positions.iter().map(|p| 1.0 / (p * (1.0 - p))).collect(),
            mixing: pop.mixing_matrix()?,
        })
    }

    pub fn n_features(&self) -> usize {
        self.g_tilde.len()
    }

    pub fn mixing(&self) -> &Matrix {
        &self.mixing
    }

    pub fn space_shifts(&self, sources: &[f64]) -> Result<Vec<f64>> {
        space_shifts(&self.mixing, sources)
    }

    /// Noise-free value of feature `k` at disease time `psi` with shift `w_k`.
    #[inline]
    pub fn feature_value(&self, k: usize, psi: f64, w_k: f64) -> f64 {
        let e = (self.g_tilde[k] - (self.velocity[k] * psi + w_k) * self.inv_pq[k]).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
        (1.0 / (1.0 + exp(e))).clamp(OUTPUT_MARGIN, 1.0 - OUTPUT_MARGIN)
    }

    /// Writes all `d` feature values at age `t` into `out`, given precomputed shifts.
    pub fn predict_into(&self, ind: &IndividualParams, shifts: &[f64], t: f64, out: &mut [f64]) {
        let psi = reparametrize_time(t, ind.xi, ind.tau);
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.feature_value(k, psi, shifts[k]);
        }
    }

    pub fn predict(&self, ind: &IndividualParams, t: f64) -> Result<Vec<f64>> {
        let w = self.space_shifts(&ind.sources)?;
        let mut out = vec![0.0; self.n_features()];
        self.predict_into(ind, &w, t, &mut out);
        Ok(out)
    }
}

/// Noise-free feature vector of one patient at age `t`.
pub fn trajectory_value(pop: &PopulationParams, ind: &IndividualParams, t: f64) -> Result<Vec<f64>> {
    ForwardModel::new(pop)?.predict(ind, t)
}

//! Full-covariance Gaussian mixture fitted by EM.
//!
//! Each restart seeds the means with k-means++, refines them with Lloyd
//! iterations, then runs EM; the restart with the highest final
//! log-likelihood wins. Features are used as given, without standardization.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, forward_substitute, Matrix};
use crate::math::{ln, log_sum_exp, LN_SQRT_2PI};
use crate::rng::{domain, stream, StreamRng};

const LLOYD_ITERATIONS: usize = 100;
/// Added to component masses so an emptied component keeps finite moments.
const MASS_EPS: f64 = 10.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub n_init: usize,
    pub max_iter: usize,
    /// Convergence threshold on the change of the mean per-point log-likelihood.
    pub tol: f64,
    /// Added to the covariance diagonals.
    pub reg: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { n_init: 10, max_iter: 300, tol: 1e-4, reg: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `k × q` component means.
    pub means: Matrix,
    /// One `q × q` covariance per component.
    pub covariances: Vec<Matrix>,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Log-responsibilities (unnormalized) and the per-point log-likelihood.
    fn log_joint(&self, points: &Matrix, cholesky_factors: &[Matrix]) -> (Matrix, Vec<f64>) {
        let n = points.rows();
        let k = self.n_components();
        let q = points.cols();
        let mut lj = Matrix::zeros(n, k);
        for c in 0..k {
            let l = &cholesky_factors[c];
            let log_det_half: f64 = (0..q).map(|j| ln(l[(j, j)])).sum();
            let lw = ln(self.weights[c]);
            let mut diff = vec![0.0; q];
            for i in 0..n {
                for (j, d) in diff.iter_mut().enumerate() {
                    *d = points[(i, j)] - self.means[(c, j)];
                }
                let z = forward_substitute(l, &diff);
                let maha: f64 = z.iter().map(|x| x * x).sum();
                lj[(i, c)] = lw - q as f64 * LN_SQRT_2PI - log_det_half - 0.5 * maha;
            }
        }
        let ll = (0..n).map(|i| log_sum_exp(lj.row(i))).collect();
        (lj, ll)
    }

    /// Posterior component probabilities of each point.
    pub fn predict_proba(&self, points: &Matrix) -> Result<Matrix> {
        let factors = self.factors()?;
        let (lj, ll) = self.log_joint(points, &factors);
        Ok(normalize(&lj, &ll))
    }

    fn factors(&self) -> Result<Vec<Matrix>> {
        self.covariances
            .iter()
            .map(|c| cholesky(c).ok_or_else(|| Error::Domain("covariance is not positive definite".into())))
            .collect()
    }
}

fn normalize(lj: &Matrix, ll: &[f64]) -> Matrix {
    let mut r = lj.clone();
    for i in 0..r.rows() {
        for x in r.row_mut(i) {
            *x = crate::math::exp(*x - ll[i]);
        }
    }
    r
}

/// Result of [`gmm_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub model: GmmModel,
    /// `N × k` responsibilities under the final model.
    pub responsibilities: Matrix,
    /// Total log-likelihood after each EM iteration of the winning restart.
    pub loglik_trace: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
}

impl GmmFit {
    pub fn labels(&self) -> Vec<usize> {
        (0..self.responsibilities.rows()).map(|i| crate::likelihood::argmax(self.responsibilities.row(i))).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut StreamRng) -> Matrix {
    let n = points.rows();
    let q = points.cols();
    let mut centres = Matrix::zeros(k, q);
    let first = rng.random_range(0..n);
    centres.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centres.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                cum += d;
                if u < cum {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centres.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centres.row(c)));
        }
    }
    centres
}

fn nearest(points: &Matrix, centres: &Matrix, i: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..centres.rows() {
        let d = sq_dist(points.row(i), centres.row(c));
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn lloyd(points: &Matrix, mut centres: Matrix) -> Vec<usize> {
    let n = points.rows();
    let (k, q) = (centres.rows(), centres.cols());
    let mut labels: Vec<usize> = (0..n).map(|i| nearest(points, &centres, i)).collect();
    for _ in 0..LLOYD_ITERATIONS {
        let mut sums = Matrix::zeros(k, q);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in sums.row_mut(c) {
                    *s /= counts[c] as f64;
                }
                centres.row_mut(c).copy_from_slice(sums.row(c));
            }
        }
        let next: Vec<usize> = (0..n).map(|i| nearest(points, &centres, i)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

fn pooled_covariance(points: &Matrix, reg: f64) -> Matrix {
    let n = points.rows() as f64;
    let q = points.cols();
    let mean: Vec<f64> = (0..q).map(|j| (0..points.rows()).map(|i| points[(i, j)]).sum::<f64>() / n).collect();
    let mut cov = Matrix::zeros(q, q);
    for i in 0..points.rows() {
        for a in 0..q {
            for b in 0..q {
                cov[(a, b)] += (points[(i, a)] - mean[a]) * (points[(i, b)] - mean[b]) / n;
            }
        }
    }
    for a in 0..q {
        cov[(a, a)] += reg;
    }
    cov
}

/// Weighted M-step; returns the model and its Cholesky factors.
fn m_step(points: &Matrix, resp: &Matrix, reg: f64) -> (GmmModel, Vec<Matrix>) {
    let n = points.rows();
    let q = points.cols();
    let k = resp.cols();
    let mass: Vec<f64> = (0..k).map(|c| (0..n).map(|i| resp[(i, c)]).sum::<f64>() + MASS_EPS).collect();
    let total: f64 = mass.iter().sum();
    let mut means = Matrix::zeros(k, q);
    let mut covariances = Vec::with_capacity(k);
    let mut factors = Vec::with_capacity(k);
    for c in 0..k {
        for j in 0..q {
            means[(c, j)] = (0..n).map(|i| resp[(i, c)] * points[(i, j)]).sum::<f64>() / mass[c];
        }
        let mut cov = Matrix::zeros(q, q);
        for i in 0..n {
            let r = resp[(i, c)];
            for a in 0..q {
                let da = points[(i, a)] - means[(c, a)];
                for b in 0..=a {
                    cov[(a, b)] += r * da * (points[(i, b)] - means[(c, b)]);
                }
            }
        }
        for a in 0..q {
            for b in 0..=a {
                cov[(a, b)] /= mass[c];
                cov[(b, a)] = cov[(a, b)];
            }
            cov[(a, a)] += reg;
        }
        let factor = match cholesky(&cov) {
            Some(l) => l,
            None => {
                log::warn!("GMM component {c} has a singular covariance; resetting it to the pooled covariance");
                cov = pooled_covariance(points, reg);
                match cholesky(&cov) {
                    Some(l) => l,
                    None => {
                        cov = Matrix::identity(q);
                        Matrix::identity(q)
                    }
                }
            }
        };
        covariances.push(cov);
        factors.push(factor);
    }
    let weights = mass.iter().map(|m| m / total).collect();
    (GmmModel { weights, means, covariances }, factors)
}

fn run_em(points: &Matrix, k: usize, config: &GmmConfig, rng: &mut StreamRng) -> GmmFit {
    let n = points.rows();
    let labels = lloyd(points, kmeans_plus_plus(points, k, rng));
    let mut resp = Matrix::zeros(n, k);
    for (i, &c) in labels.iter().enumerate() {
        resp[(i, c)] = 1.0;
    }
    let (mut model, mut factors) = m_step(points, &resp, config.reg);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..config.max_iter {
        let (lj, ll) = model.log_joint(points, &factors);
        let total: f64 = ll.iter().sum();
        trace.push(total);
        resp = normalize(&lj, &ll);
        if (total - prev).abs() / (n as f64) < config.tol {
            converged = true;
            break;
        }
        prev = total;
        (model, factors) = m_step(points, &resp, config.reg);
    }
    let log_likelihood = *trace.last().unwrap_or(&f64::NEG_INFINITY);
    GmmFit { model, responsibilities: resp, loglik_trace: trace, log_likelihood, converged }
}

/// Fits a `k`-component full-covariance Gaussian mixture to the rows of `points`.
pub fn gmm_fit(points: &Matrix, k: usize, config: &GmmConfig) -> Result<GmmFit> {
    if k == 0 || points.cols() == 0 {
        return Err(Error::Config("GMM needs k ≥ 1 and at least one column".into()));
    }
    if points.rows() <= k {
        return Err(Error::Config(alloc::format!("GMM with k = {k} needs more than {k} points, got {}", points.rows())));
    }
    if points.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("GMM input contains non-finite values".into()));
    }
    let mut best: Option<GmmFit> = None;
    for r in 0..config.n_init.max(1) {
        let mut rng = stream(config.seed, domain::GMM_RESTART, r as u64);
        let fit = run_em(points, k, config, &mut rng);
        if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, seed: u64) -> Matrix {
        let mut rng = stream(seed, domain::GENERIC, 0);
        let mut m = Matrix::zeros(n, 2);
        for i in 0..n {
            let c = if i < n * 3 / 10 { -10.0 } else { 10.0 };
            m[(i, 0)] = c + rng.sample::<f64, _>(StandardNormal);
            m[(i, 1)] = c + rng.sample::<f64, _>(StandardNormal);
        }
        m
    }

    #[test]
    fn separated_blobs() {
        let pts = blobs(500, 1);
        let fit = gmm_fit(&pts, 2, &GmmConfig::default()).unwrap();
        let lo = if fit.model.means[(0, 0)] < 0.0 { 0 } else { 1 };
        assert!((fit.model.means[(lo, 0)] + 10.0).abs() < 0.3 && (fit.model.means[(1 - lo, 1)] - 10.0).abs() < 0.3);
        assert!((fit.model.weights[lo] - 0.3).abs() < 0.05);
        for i in 0..pts.rows() {
            assert!((fit.responsibilities.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn single_component_is_the_sample_moments() {
        let pts = blobs(200, 2);
        let cfg = GmmConfig { reg: 0.0, ..GmmConfig::default() };
        let fit = gmm_fit(&pts, 1, &cfg).unwrap();
        let cov = pooled_covariance(&pts, 0.0);
        for j in 0..2 {
            let mean = (0..200).map(|i| pts[(i, j)]).sum::<f64>() / 200.0;
            assert!((fit.model.means[(0, j)] - mean).abs() < 1e-8);
        }
        for (a, b) in fit.model.covariances[0].as_slice().iter().zip(cov.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn em_is_monotone() {
        let pts = blobs(300, 3);
        let fit = gmm_fit(&pts, 3, &GmmConfig { n_init: 3, ..GmmConfig::default() }).unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn duplicate_points_fall_back_to_pooled_covariance() {
        let mut pts = Matrix::zeros(10, 2);
        for i in 5..10 {
            pts[(i, 0)] = 1.0 + i as f64;
            pts[(i, 1)] = (i * i) as f64;
        }
        let fit = gmm_fit(&pts, 2, &GmmConfig { reg: 0.0, n_init: 2, ..GmmConfig::default() }).unwrap();
        for c in &fit.model.covariances {
            assert!(cholesky(c).is_some());
        }
    }
}

//! Laplace approximation of the per-patient marginal likelihood
//! `ln ∫ p(y_i | z) p(z | c) dz` under one mixture component.

use alloc::vec;
use alloc::vec::Vec;

use crate::likelihood::{cluster_log_density, patient_data_loglik, NoiseModel, Workspace};
use crate::linalg::{backward_substitute, cholesky, forward_substitute, Matrix};
use crate::math::{ln, LN_SQRT_2PI};
use crate::model::{ForwardModel, HyperParams, IndividualParams, MixtureParams, Patient};

const MAX_NEWTON_STEPS: usize = 50;
const MAX_HALVINGS: usize = 30;
/// Finite-difference step in prior standard deviations.
const FD_STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-9;

/// Evaluates `ln p(y_i | z) + ln p(z | c)` in prior-standardized coordinates
/// `u_j = (z_j − m_j) / sd_j`.
struct Target<'a> {
    fm: &'a ForwardModel,
    noise: &'a NoiseModel,
    patient: &'a Patient,
    mix: &'a MixtureParams,
    sigma_source: f64,
    c: usize,
    centre: Vec<f64>,
    scale: Vec<f64>,
}

impl Target<'_> {
    fn to_params(&self, u: &[f64]) -> IndividualParams {
        let z: Vec<f64> = u.iter().zip(&self.centre).zip(&self.scale).map(|((u, m), s)| m + s * u).collect();
        IndividualParams::new(z[0], z[1], z[2..].to_vec())
    }

    fn eval(&self, u: &[f64], ws: &mut Workspace) -> f64 {
        let ind = self.to_params(u);
        let v = patient_data_loglik(self.fm, self.noise, self.patient, &ind, ws) + cluster_log_density(&ind, self.mix, self.sigma_source, self.c);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Central-difference gradient and Hessian.
    fn derivatives(&self, u: &[f64], f0: f64, ws: &mut Workspace) -> (Vec<f64>, Matrix) {
        let q = u.len();
        let h = FD_STEP;
        let mut x = u.to_vec();
        let mut grad = vec![0.0; q];
        let mut hess = Matrix::zeros(q, q);
        for a in 0..q {
            x[a] = u[a] + h;
            let fp = self.eval(&x, ws);
            x[a] = u[a] - h;
            let fm = self.eval(&x, ws);
            x[a] = u[a];
            grad[a] = (fp - fm) / (2.0 * h);
            hess[(a, a)] = (fp - 2.0 * f0 + fm) / (h * h);
            for b in 0..a {
                let mut corner = |da: f64, db: f64| {
                    x[a] = u[a] + da;
                    x[b] = u[b] + db;
                    let v = self.eval(&x, ws);
                    x[a] = u[a];
                    x[b] = u[b];
                    v
                };
                let v = (corner(h, h) - corner(h, -h) - corner(-h, h) + corner(-h, -h)) / (4.0 * h * h);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        (grad, hess)
    }
}

/// Posterior mode of `z` under component `c` and the Laplace estimate of the
/// log marginal likelihood of the patient's data under that component.
///
/// Returns `None` when the negative Hessian at the mode is not positive definite
/// or the target is not finite at `start`.
pub fn laplace_log_marginal(
    fm: &ForwardModel,
    noise: &NoiseModel,
    patient: &Patient,
    mix: &MixtureParams,
    hyper: &HyperParams,
    c: usize,
    start: &IndividualParams,
) -> Option<(IndividualParams, f64)> {
    let ns = start.sources.len();
    let mut centre = vec![mix.tau_mean[c], mix.xi_mean[c]];
    centre.extend_from_slice(mix.cluster_source_mean(c));
    let mut scale = vec![mix.tau_sd[c], mix.xi_sd[c]];
    scale.extend(core::iter::repeat(hyper.sigma_source).take(ns));
    let target = Target { fm, noise, patient, mix, sigma_source: hyper.sigma_source, c, centre, scale };

    let mut ws = Workspace::new(fm.n_features());
    let mut z = vec![start.tau, start.xi];
    z.extend_from_slice(&start.sources);
    let mut u: Vec<f64> = z.iter().zip(&target.centre).zip(&target.scale).map(|((z, m), s)| (z - m) / s).collect();
    let mut f = target.eval(&u, &mut ws);
    if !f.is_finite() {
        u.iter_mut().for_each(|x| *x = 0.0);
        f = target.eval(&u, &mut ws);
        if !f.is_finite() {
            return None;
        }
    }
    let q = u.len();

    for _ in 0..MAX_NEWTON_STEPS {
        let (grad, hess) = target.derivatives(&u, f, &mut ws);
        let mut neg = hess.clone();
        neg.as_mut_slice().iter_mut().for_each(|x| *x = -*x);
        // Levenberg damping until the negative Hessian factorizes
        let mut damping = 0.0;
        let l = loop {
            let mut m = neg.clone();
            (0..q).for_each(|a| m[(a, a)] += damping);
            if let Some(l) = cholesky(&m) {
                break l;
            }
            damping = if damping == 0.0 { 1e-3 } else { damping * 10.0 };
            if damping > 1e8 {
                return None;
            }
        };
        let step = backward_substitute(&l, &forward_substitute(&l, &grad));
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = u.iter().zip(&step).map(|(x, d)| x + t * d).collect();
            let fc = target.eval(&cand, &mut ws);
            if fc >= f {
                let gain = fc - f;
                u = cand;
                f = fc;
                improved = gain > TOLERANCE;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let (_, hess) = target.derivatives(&u, f, &mut ws);
    let mut neg = hess;
    neg.as_mut_slice().iter_mut().for_each(|x| *x = -*x);
    let l = cholesky(&neg)?;
    let half_log_det: f64 = (0..q).map(|a| ln(l[(a, a)])).sum();
    let log_jacobian: f64 = target.scale.iter().map(|s| ln(*s)).sum();
    let value = f + q as f64 * LN_SQRT_2PI - half_log_det + log_jacobian;
    Some((target.to_params(&u), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{PopulationParams, Visit};
    use alloc::vec;

    #[test]
    fn no_observations_integrates_prior_to_one() {
        let pop = PopulationParams::from_natural(&[0.3, 0.3], &[0.05, 0.05], Matrix::zeros(1, 1)).unwrap();
        let fm = ForwardModel::new(&pop).unwrap();
        let noise = NoiseModel::new(&[0.1, 0.1]).unwrap();
        let patient = Patient { id: "a".into(), visits: vec![Visit { time: 60.0, values: vec![None, None] }] };
        let mix = MixtureParams {
            proportions: vec![1.0],
            tau_mean: vec![60.0],
            tau_sd: vec![5.0],
            xi_mean: vec![0.0],
            xi_sd: vec![0.5],
            source_means: Matrix::zeros(1, 1),
            noise_sd: vec![0.1, 0.1],
        };
        let start = IndividualParams::new(63.0, 0.2, vec![0.5]);
        let (mode, v) = laplace_log_marginal(&fm, &noise, &patient, &mix, &HyperParams::default(), 0, &start).unwrap();
        assert!(v.abs() < 1e-6, "{v}");
        assert!((mode.tau - 60.0).abs() < 1e-4 && mode.xi.abs() < 1e-4 && mode.sources[0].abs() < 1e-4);
    }
}

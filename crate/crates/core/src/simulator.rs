//! Simulation scenarios and the data-generating mechanism.
//!
//! Each patient draws a cluster, latent parameters from that cluster's
//! Gaussians, a visit schedule centred on its onset, and noisy observations of
//! the logistic trajectories.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{householder_complement, least_squares, symmetric_eigen, Matrix};
use crate::model::{Dataset, ForwardModel, IndividualParams, MixtureParams, Patient, PopulationParams, Visit};
use crate::rng::{domain, stream, StreamRng};

/// Names accepted by [`scenario_preset`].
pub const PRESETS: [&str; 3] = ["scenario_2_2", "scenario_3_2", "scenario_multi"];

/// Default position `p_k` of every feature.
pub const DEFAULT_POSITION: f64 = 0.3;
/// Default velocity `v_k` of every feature.
pub const DEFAULT_VELOCITY: f64 = 0.05;
/// Norm of each column of the default mixing matrix.
pub const DEFAULT_MIXING_SCALE: f64 = 0.03;
/// Observations are clamped to `[OBS_MARGIN, 1 − OBS_MARGIN]`.
pub const OBS_MARGIN: f64 = 1e-3;

/// Parameterization of a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub features: Vec<String>,
    pub n_sources: usize,
    pub proportions: Vec<f64>,
    pub tau_mean: Vec<f64>,
    pub xi_mean: Vec<f64>,
    /// `n_c × d` mean space shifts `w̄^c`.
    pub space_shift_means: Matrix,
    pub tau_sd: f64,
    pub xi_sd: f64,
    pub source_sd: f64,
    pub noise_sd: f64,
    pub n_patients: usize,
    pub n_visits: usize,
    /// Half-width of the visit window around the onset, in years.
    pub visit_half_width: f64,
    /// Uniform gap jitter as a fraction of the mean gap.
    pub visit_jitter: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.proportions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nc = self.n_clusters();
        let d = self.n_features();
        if nc == 0 || d == 0 {
            return Err(Error::Config("scenario needs at least one cluster and one feature".into()));
        }
        if self.tau_mean.len() != nc || self.xi_mean.len() != nc || self.space_shift_means.rows() != nc || self.space_shift_means.cols() != d {
            return Err(Error::Config("scenario cluster parameters have inconsistent dimensions".into()));
        }
        if self.proportions.iter().any(|&p| !(p >= 0.0)) || (self.proportions.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("scenario proportions must form a probability vector".into()));
        }
        if self.n_sources > d - 1 {
            return Err(Error::Config(format!("{} sources need more than {d} features", self.n_sources)));
        }
        if self.n_visits == 0 || self.n_patients == 0 {
            return Err(Error::Config("scenario needs at least one patient and one visit".into()));
        }
        let sds = [self.tau_sd, self.xi_sd, self.source_sd, self.noise_sd, self.visit_half_width, self.visit_jitter];
        if sds.iter().any(|&s| !(s >= 0.0 && s.is_finite())) || self.visit_jitter >= 0.5 {
            return Err(Error::Config("scenario spreads must be finite and nonnegative, jitter below 0.5".into()));
        }
        Ok(())
    }
}

fn preset(name: &str, proportions: &[f64], tau: &[f64], xi: &[f64], w_by_score: &[&[f64]], n_sources: usize) -> Scenario {
    let nc = proportions.len();
    let d = w_by_score.len();
    let mut w = Matrix::zeros(nc, d);
    for (k, score) in w_by_score.iter().enumerate() {
        for c in 0..nc {
            w[(c, k)] = score[c];
        }
    }
    Scenario {
        name: name.into(),
        features: (1..=d).map(|k| format!("score_{k}")).collect(),
        n_sources,
        proportions: proportions.to_vec(),
        tau_mean: tau.to_vec(),
        xi_mean: xi.to_vec(),
        space_shift_means: w,
        tau_sd: 5.0,
        xi_sd: 0.5,
        source_sd: 1.0,
        noise_sd: 0.05,
        n_patients: 1000,
        n_visits: 6,
        visit_half_width: 5.0,
        visit_jitter: 0.3,
        seed: 0,
    }
}

/// One of the built-in scenarios.
pub fn scenario_preset(name: &str) -> Result<Scenario> {
    Ok(match name {
        "scenario_2_2" => preset(name, &[0.40, 0.60], &[50.0, 40.0], &[-0.30, 0.20], &[&[-0.02, 0.02], &[0.11, -0.11]], 1),
        "scenario_3_2" => preset(
            name,
            &[0.40, 0.60],
            &[56.0, 53.0],
            &[0.30, -0.20],
            &[&[-0.06, 0.05], &[0.07, -0.06], &[0.01, -0.01]],
            1,
        ),
        "scenario_multi" => preset(
            name,
            &[0.40, 0.35, 0.25],
            &[70.0, 65.0, 65.0],
            &[0.0, -0.40, 0.5],
            &[
                &[0.0, 0.0, -0.01],
                &[-0.01, 0.0, -0.01],
                &[-0.01, -0.01, -0.02],
                &[0.05, 0.0, 0.10],
                &[0.11, -0.03, 0.27],
                &[0.15, 0.03, 0.24],
            ],
            2,
        ),
        _ => return Err(Error::Config(format!("unknown scenario {name:?}; expected one of {}", PRESETS.join(", ")))),
    })
}

/// Default fixed effects for a scenario.
///
/// Positions and velocities are [`DEFAULT_POSITION`] and [`DEFAULT_VELOCITY`].
/// The mixing directions are the leading principal axes of the cluster mean
/// shifts projected orthogonally to the velocity, each with norm
/// [`DEFAULT_MIXING_SCALE`].
pub fn default_fixed_effects(scenario: &Scenario) -> Result<PopulationParams> {
    let d = scenario.n_features();
    let ns = scenario.n_sources;
    let positions = vec![DEFAULT_POSITION; d];
    let velocities = vec![DEFAULT_VELOCITY; d];
    if d < 2 {
        return PopulationParams::from_natural(&positions, &velocities, Matrix::zeros(0, ns));
    }
    let basis = householder_complement(&velocities).ok_or_else(|| Error::Domain("zero velocity vector".into()))?;
    let m = d - 1;
    let mut second = Matrix::zeros(m, m);
    for c in 0..scenario.n_clusters() {
        let u = basis.tr_mul_vec(scenario.space_shift_means.row(c));
        for a in 0..m {
            for b in 0..m {
                second[(a, b)] += scenario.proportions[c] * u[a] * u[b];
            }
        }
    }
    let (_, vectors) = symmetric_eigen(&second);
    let mut beta = Matrix::zeros(m, ns);
    for l in 0..ns {
        // fix the sign so the largest entry is positive
        let col = vectors.column(l);
        let pivot = col.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            beta[(j, l)] = sign * col[j] * DEFAULT_MIXING_SCALE;
        }
    }
    PopulationParams::from_natural(&positions, &velocities, beta)
}

/// Simulated dataset together with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub dataset: Dataset,
    /// 0-based true cluster of each patient.
    pub labels: Vec<usize>,
    pub individuals: Vec<IndividualParams>,
    pub fixed_effects: PopulationParams,
    /// Generating mixture; `source_means` are the least-squares sources of `w̄^c`.
    pub mixture: MixtureParams,
    /// `n_c × d` space shifts actually generated, `A s̄^c`.
    pub space_shift_means: Matrix,
}

/// Strictly increasing visit times centred on `tau`.
///
/// A regular grid over `[tau − half_width, tau + half_width]` has each interior
/// gap perturbed by a uniform factor in `[1 − jitter, 1 + jitter]`; the grid is
/// then re-centred on `tau`. One visit is drawn uniformly in the window.
pub fn generate_visit_times<R: Rng>(tau: f64, n_visits: usize, half_width: f64, jitter: f64, rng: &mut R) -> Vec<f64> {
    if n_visits == 1 {
        return vec![tau + half_width * (2.0 * rng.random::<f64>() - 1.0)];
    }
    let gap = 2.0 * half_width / (n_visits - 1) as f64;
    let mut times = Vec::with_capacity(n_visits);
    let mut t = 0.0;
    times.push(t);
    for _ in 1..n_visits {
        let u: f64 = rng.random();
        t += gap * (1.0 + jitter * (2.0 * u - 1.0));
        times.push(t);
    }
    let centre = times[n_visits - 1] / 2.0;
    for x in &mut times {
        *x += tau - centre;
    }
    times.sort_by(f64::total_cmp);
    times
}

fn gaussian(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_cluster(rng: &mut StreamRng, proportions: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (c, p) in proportions.iter().enumerate() {
        cum += p;
        if u < cum {
            return c;
        }
    }
    proportions.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws a labeled dataset from the scenario.
pub fn simulate(scenario: &Scenario, fixed_effects: &PopulationParams) -> Result<Simulation> {
    scenario.validate()?;
    let d = scenario.n_features();
    let ns = scenario.n_sources;
    let nc = scenario.n_clusters();
    if fixed_effects.n_features() != d || fixed_effects.n_sources() != ns {
        return Err(Error::Config(format!(
            "fixed effects have {} features and {} sources, scenario expects {d} and {ns}",
            fixed_effects.n_features(),
            fixed_effects.n_sources()
        )));
    }
    let fm = ForwardModel::new(fixed_effects)?;
    let a = fm.mixing().clone();
    let mut source_means = Matrix::zeros(nc, ns);
    let mut shifts = Matrix::zeros(nc, d);
    if ns > 0 {
        for c in 0..nc {
            let s = least_squares(&a, scenario.space_shift_means.row(c)).ok_or_else(|| Error::Domain("mixing matrix is rank deficient".into()))?;
            shifts.row_mut(c).copy_from_slice(&a.mul_vec(&s));
            source_means.row_mut(c).copy_from_slice(&s);
        }
    }

    let width = format!("{}", scenario.n_patients).len();
    let mut patients = Vec::with_capacity(scenario.n_patients);
    let mut labels = Vec::with_capacity(scenario.n_patients);
    let mut individuals = Vec::with_capacity(scenario.n_patients);
    let mut pred = vec![0.0; d];
    for i in 0..scenario.n_patients {
        let mut rng = stream(scenario.seed, domain::SIMULATE_PATIENT, i as u64);
        let c = draw_cluster(&mut rng, &scenario.proportions);
        let tau = scenario.tau_mean[c] + scenario.tau_sd * gaussian(&mut rng);
        let xi = scenario.xi_mean[c] + scenario.xi_sd * gaussian(&mut rng);
        let sources: Vec<f64> = (0..ns).map(|l| source_means[(c, l)] + scenario.source_sd * gaussian(&mut rng)).collect();
        let ind = IndividualParams::new(tau, xi, sources);
        let w = fm.space_shifts(&ind.sources)?;
        let times = generate_visit_times(tau, scenario.n_visits, scenario.visit_half_width, scenario.visit_jitter, &mut rng);
        let visits = times
            .into_iter()
            .map(|t| {
                fm.predict_into(&ind, &w, t, &mut pred);
                let values = pred.iter().map(|&y| Some((y + scenario.noise_sd * gaussian(&mut rng)).clamp(OBS_MARGIN, 1.0 - OBS_MARGIN))).collect();
                Visit { time: t, values }
            })
            .collect();
        patients.push(Patient { id: format!("P{:0width$}", i + 1), visits });
        labels.push(c);
        individuals.push(ind);
    }
    let dataset = Dataset::new(scenario.features.clone(), patients)?;
    let mixture = MixtureParams {
        proportions: scenario.proportions.clone(),
        tau_mean: scenario.tau_mean.clone(),
        tau_sd: vec![scenario.tau_sd; nc],
        xi_mean: scenario.xi_mean.clone(),
        xi_sd: vec![scenario.xi_sd; nc],
        source_means,
        noise_sd: vec![scenario.noise_sd; d],
    };
    Ok(Simulation { dataset, labels, individuals, fixed_effects: fixed_effects.clone(), mixture, space_shift_means: shifts })
}

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::likelihood::{patient_residuals, LatentState, Workspace};
use crate::linalg::{householder_complement, symmetric_eigen, Matrix};
use crate::math::{ln, logit, mean, sample_sd, sqrt};
use crate::model::{Dataset, ForwardModel, IndividualParams, MixtureParams, PopulationParams};

use super::config::FitConfig;
use super::mstep::{ModelParams, NOISE_SD_FLOOR};

const FALLBACK_LOGIT_SLOPE: f64 = 1e-2;
const MIN_INIT_TAU_SD: f64 = 1.0;
const INIT_XI_SD: f64 = 0.5;
const MAX_INIT_XI: f64 = 1.5;
const MIN_RATE_RATIO: f64 = 0.1;
const LLOYD_ITERATIONS: usize = 100;

/// Least-squares slope of `(t, z)` pairs, `None` with fewer than two distinct times.
fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let tm = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let zm = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for &(t, z) in points {
        num += (t - tm) * (z - zm);
        den += (t - tm) * (t - tm);
    }
    (den > 0.0).then(|| num / den)
}

fn feature_points(data: &Dataset, i: usize, k: usize, f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    data.patients()[i].visits.iter().filter_map(|v| v.values[k].map(|y| (v.time, f(y)))).collect()
}

/// Pooled within-patient slope of `z` against time across patients.
fn pooled_slope(data: &Dataset, k: usize) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..data.n_patients() {
        let pts = feature_points(data, i, k, logit);
        if pts.len() < 2 {
            continue;
        }
        let tm = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let zm = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        for &(t, z) in &pts {
            num += (t - tm) * (z - zm);
            den += (t - tm) * (t - tm);
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Crude per-patient summaries used to seed the clusters.
struct NaiveSummaries {
    midpoints: Vec<f64>,
    /// Log ratio of the patient's logit slope to the population one.
    log_rates: Vec<f64>,
    /// Coordinates of the naive space shifts along the initial source directions.
    sources: Vec<Vec<f64>>,
}

fn initial_population(data: &Dataset, n_sources: usize) -> Result<(PopulationParams, NaiveSummaries)> {
    let d = data.n_features();
    let mut g_tilde = vec![0.0; d];
    let mut v_tilde = vec![0.0; d];
    let mut logit_slopes = vec![FALLBACK_LOGIT_SLOPE; d];
    for k in 0..d {
        let z: Vec<f64> = data.patients().iter().flat_map(|p| p.visits.iter().filter_map(move |v| v.values[k].map(logit))).collect();
        if z.is_empty() {
            return Err(Error::Domain(alloc::format!("feature {k} has no observations")));
        }
        g_tilde[k] = -mean(&z);
        let p = crate::model::position_from_g_tilde(g_tilde[k]);
        let s = pooled_slope(data, k).filter(|s| *s > 0.0 && s.is_finite()).unwrap_or(FALLBACK_LOGIT_SLOPE);
        logit_slopes[k] = s;
        v_tilde[k] = ln(s * p * (1.0 - p));
    }

    let n = data.n_patients();
    let midpoints: Vec<f64> = data.patients().iter().map(|p| p.visit_midpoint()).collect();
    let log_rates = (0..n)
        .map(|i| {
            // least-squares ratio r in z_k(t) ≈ r s_k t + c_k, pooled over features
            let (mut num, mut den) = (0.0, 0.0);
            for (k, &sk) in logit_slopes.iter().enumerate() {
                let pts = feature_points(data, i, k, logit);
                if pts.len() < 2 {
                    continue;
                }
                let tm = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
                let zm = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
                for &(t, z) in &pts {
                    num += sk * (t - tm) * (z - zm);
                    den += sk * sk * (t - tm) * (t - tm);
                }
            }
            let r = if den > 0.0 { num / den } else { 1.0 };
            ln(r.max(MIN_RATE_RATIO)).clamp(-MAX_INIT_XI, MAX_INIT_XI)
        })
        .collect();

    let (beta, sources) = if n_sources == 0 || d < 2 {
        (Matrix::zeros(d.saturating_sub(1), n_sources), vec![vec![0.0; n_sources]; n])
    } else {
        source_directions(data, &g_tilde, &v_tilde, &logit_slopes, &midpoints, n_sources)?
    };
    Ok((PopulationParams::new(g_tilde, v_tilde, beta)?, NaiveSummaries { midpoints, log_rates, sources }))
}

/// Principal directions of naive per-patient space shifts expressed in the
/// orthogonal complement of the velocity, scaled by their standard deviations,
/// and the standardized coordinates of each patient along them.
fn source_directions(
    data: &Dataset,
    g_tilde: &[f64],
    v_tilde: &[f64],
    logit_slopes: &[f64],
    midpoints: &[f64],
    n_sources: usize,
) -> Result<(Matrix, Vec<Vec<f64>>)> {
    let d = g_tilde.len();
    let velocities: Vec<f64> = v_tilde.iter().map(|&v| crate::math::exp(v)).collect();
    let basis = householder_complement(&velocities).ok_or_else(|| Error::Domain("degenerate initial velocities".into()))?;
    let mut coords: Vec<Vec<f64>> = Vec::with_capacity(data.n_patients());
    for (i, &mid) in midpoints.iter().enumerate() {
        let mut w = vec![0.0; d];
        for k in 0..d {
            let pts = feature_points(data, i, k, logit);
            if pts.is_empty() {
                continue;
            }
            let z = pts.iter().map(|&(t, z)| z - logit_slopes[k] * (t - mid)).sum::<f64>() / pts.len() as f64;
            let p = crate::model::position_from_g_tilde(g_tilde[k]);
            w[k] = (z + g_tilde[k]) * p * (1.0 - p);
        }
        coords.push(basis.tr_mul_vec(&w));
    }
    let m = d - 1;
    let n = coords.len() as f64;
    let centre: Vec<f64> = (0..m).map(|j| coords.iter().map(|c| c[j]).sum::<f64>() / n).collect();
    let mut cov = Matrix::zeros(m, m);
    for c in &coords {
        for a in 0..m {
            for b in 0..m {
                cov[(a, b)] += (c[a] - centre[a]) * (c[b] - centre[b]) / n;
            }
        }
    }
    let (values, vectors) = symmetric_eigen(&cov);
    let mut beta = Matrix::zeros(m, n_sources);
    let mut scales = vec![1.0; n_sources];
    for l in 0..n_sources.min(m) {
        scales[l] = sqrt(values[l].max(0.0)).max(1e-3);
        for j in 0..m {
            beta[(j, l)] = vectors[(j, l)] * scales[l];
        }
    }
    let sources = coords
        .iter()
        .map(|c| (0..n_sources).map(|l| (0..m).map(|j| vectors[(j, l)] * (c[j] - centre[j])).sum::<f64>() / scales[l]).collect())
        .collect();
    Ok((beta, sources))
}

fn standardize(xs: &[f64]) -> Vec<f64> {
    let m = mean(xs);
    let s = if xs.len() > 1 { sample_sd(xs) } else { 0.0 };
    xs.iter().map(|x| if s > 0.0 { (x - m) / s } else { 0.0 }).collect()
}

/// Splits patients into `n_c` equal groups along the first principal component
/// of the standardized (visit midpoint, raw slope of the first feature).
fn quantile_groups(data: &Dataset, midpoints: &[f64], n_clusters: usize) -> Vec<usize> {
    let n = data.n_patients();
    let raw: Vec<Option<f64>> = (0..n).map(|i| slope(&feature_points(data, i, 0, |y| y))).collect();
    let known: Vec<f64> = raw.iter().flatten().copied().collect();
    let fill = if known.is_empty() { 0.0 } else { mean(&known) };
    let slopes: Vec<f64> = raw.iter().map(|s| s.unwrap_or(fill)).collect();
    let (a, b) = (standardize(midpoints), standardize(&slopes));
    let mut cov = Matrix::zeros(2, 2);
    for i in 0..n {
        cov[(0, 0)] += a[i] * a[i];
        cov[(0, 1)] += a[i] * b[i];
        cov[(1, 0)] += a[i] * b[i];
        cov[(1, 1)] += b[i] * b[i];
    }
    let (_, vecs) = symmetric_eigen(&cov);
    let (e0, e1) = (vecs[(0, 0)], vecs[(1, 0)]);
    let score: Vec<f64> = (0..n).map(|i| e0 * a[i] + e1 * b[i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| score[x].total_cmp(&score[y]).then(x.cmp(&y)));
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = (rank * n_clusters / n).min(n_clusters - 1);
    }
    labels
}

/// Lloyd iterations on standardized naive summaries, started from `labels`.
/// Stops early rather than empty a cluster.
fn refine_groups(points: &[Vec<f64>], mut labels: Vec<usize>, n_clusters: usize) -> Vec<usize> {
    let q = points.first().map_or(0, Vec::len);
    for _ in 0..LLOYD_ITERATIONS {
        let mut centres = vec![vec![0.0; q]; n_clusters];
        let mut counts = vec![0usize; n_clusters];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (a, x) in centres[c].iter_mut().zip(p) {
                *a += x;
            }
        }
        for (centre, &n) in centres.iter_mut().zip(&counts) {
            centre.iter_mut().for_each(|a| *a /= n.max(1) as f64);
        }
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let dist = |c: &Vec<f64>| c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                (0..n_clusters).min_by(|&x, &y| dist(&centres[x]).total_cmp(&dist(&centres[y]))).unwrap_or(0)
            })
            .collect();
        let mut filled = vec![false; n_clusters];
        next.iter().for_each(|&c| filled[c] = true);
        if next == labels || filled.contains(&false) {
            break;
        }
        labels = next;
    }
    labels
}

/// Deterministic data-driven starting point of the sampler and the parameters.
///
/// Individuals start at `τ_i` = visit midpoint, `ξ_i = 0`, `s_i = 0`. Patients
/// are split into `n_c` quantile groups, refined by k-means on naive per-patient
/// summaries; group means seed the cluster means. Proportions are uniform.
pub fn initialize(data: &Dataset, config: &FitConfig) -> Result<(LatentState, ModelParams)> {
    config.validate()?;
    let d = data.n_features();
    let nc = config.n_clusters;
    let ns = config.n_sources;
    if d >= 1 && ns > d - 1 {
        return Err(Error::Config(alloc::format!("{ns} sources need at least {} features, got {d}", ns + 1)));
    }
    if data.n_patients() < nc {
        return Err(Error::Config(alloc::format!("{} patients cannot fill {nc} clusters", data.n_patients())));
    }
    let n = data.n_patients();
    let (pop, naive) = initial_population(data, ns)?;
    let seeds = quantile_groups(data, &naive.midpoints, nc);
    let mut columns = vec![standardize(&naive.midpoints), standardize(&naive.log_rates)];
    for l in 0..ns {
        columns.push(standardize(&naive.sources.iter().map(|s| s[l]).collect::<Vec<_>>()));
    }
    let points: Vec<Vec<f64>> = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let labels = refine_groups(&points, seeds, nc);

    let individuals: Vec<IndividualParams> = naive.midpoints.iter().map(|&m| IndividualParams::new(m, 0.0, vec![0.0; ns])).collect();
    let mut tau_mean = vec![0.0; nc];
    let mut tau_sd = vec![MIN_INIT_TAU_SD; nc];
    let mut xi_mean = vec![0.0; nc];
    let mut source_means = Matrix::zeros(nc, ns);
    for c in 0..nc {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let m: Vec<f64> = members.iter().map(|&i| naive.midpoints[i]).collect();
        tau_mean[c] = mean(&m);
        if m.len() > 1 {
            tau_sd[c] = sample_sd(&m).max(MIN_INIT_TAU_SD);
        }
        xi_mean[c] = mean(&members.iter().map(|&i| naive.log_rates[i]).collect::<Vec<_>>());
        for l in 0..ns {
            source_means[(c, l)] = mean(&members.iter().map(|&i| naive.sources[i][l]).collect::<Vec<_>>());
        }
    }
    let centre = mean(&xi_mean);
    xi_mean.iter_mut().for_each(|x| *x -= centre);
    for l in 0..ns {
        let centre = (0..nc).map(|c| source_means[(c, l)]).sum::<f64>() / nc as f64;
        (0..nc).for_each(|c| source_means[(c, l)] -= centre);
    }

    let state = LatentState { pop: pop.clone(), individuals, labels, n_clusters: nc };
    let fm = ForwardModel::new(&pop)?;
    let mut ws = Workspace::new(d);
    let (mut rss, mut count) = (vec![0.0; d], vec![0.0; d]);
    for (patient, ind) in data.patients().iter().zip(&state.individuals) {
        patient_residuals(&fm, patient, ind, &mut ws, &mut rss, &mut count);
    }
    let noise_sd = rss.iter().zip(&count).map(|(r, n)| if *n > 0.0 { sqrt(r / n).max(NOISE_SD_FLOOR) } else { 0.1 }).collect();

    let mixture = MixtureParams {
        proportions: vec![1.0 / nc as f64; nc],
        tau_mean,
        tau_sd,
        xi_mean,
        xi_sd: vec![INIT_XI_SD; nc],
        source_means,
        noise_sd,
    };
    Ok((state, ModelParams { population_means: pop, mixture }))
}

//! Monte-Carlo checks of the Metropolis-Hastings-within-Gibbs kernel against
//! targets with a known law. Patients carry no observations, so the kernel
//! targets the individual prior; many independent chains give independent
//! draws.

use mixcourse_core::linalg::Matrix;
use mixcourse_core::saem::{mh_gibbs_sweep, Chains, IndicatorUpdate, ModelParams, ProposalScales};
use mixcourse_core::{Dataset, HyperParams, IndividualParams, LatentState, MixtureParams, Patient, PopulationParams, Visit};

fn empty_patients(n: usize) -> Dataset {
    let patients = (0..n).map(|i| Patient { id: format!("p{i}"), visits: vec![Visit { time: 0.0, values: vec![None, None] }] }).collect();
    Dataset::new(vec!["a".into(), "b".into()], patients).unwrap()
}

fn population() -> PopulationParams {
    PopulationParams::from_natural(&[0.3, 0.3], &[0.05, 0.05], Matrix::zeros(1, 1)).unwrap()
}

fn mixture(proportions: &[f64], tau: &[(f64, f64)], xi: &[(f64, f64)], sources: &[f64]) -> MixtureParams {
    MixtureParams {
        proportions: proportions.to_vec(),
        tau_mean: tau.iter().map(|t| t.0).collect(),
        tau_sd: tau.iter().map(|t| t.1).collect(),
        xi_mean: xi.iter().map(|x| x.0).collect(),
        xi_sd: xi.iter().map(|x| x.1).collect(),
        source_means: Matrix::from_vec(sources.len(), 1, sources.to_vec()).unwrap(),
        noise_sd: vec![0.1, 0.1],
    }
}

fn individual_scales(tau: f64, xi: f64, sources: f64) -> ProposalScales {
    ProposalScales { tau, xi, sources, g_tilde: 0.0, v_tilde: 0.0, beta: 0.0 }
}

/// Runs `sweeps` sweeps on `n` independent chains started at `start`.
fn run(n: usize, start: IndividualParams, labels: Vec<usize>, mix: MixtureParams, scales: ProposalScales, mode: IndicatorUpdate, sweeps: usize, seed: u64) -> LatentState {
    let data = empty_patients(n);
    let pop = population();
    let params = ModelParams { population_means: pop.clone(), mixture: mix.clone() };
    let mut state = LatentState { pop, individuals: vec![start; n], labels, n_clusters: mix.n_clusters() };
    let mut chains = Chains::new(seed, n);
    let hyper = HyperParams::default();
    for _ in 0..sweeps {
        mh_gibbs_sweep(&mut state, &data, &params, &hyper, &scales, mode, &mut chains).unwrap();
    }
    state
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided one-sample Kolmogorov-Smirnov statistic against `cdf`.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value of the KS statistic at level α = 0.01.
fn ks_critical_001(n: usize) -> f64 {
    (-(0.01f64 / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

#[test]
fn kernel_matches_standard_normal_target() {
    let n = 100_000;
    let mix = mixture(&[1.0], &[(0.0, 1.0)], &[(0.0, 1.0)], &[0.0]);
    let start = IndividualParams::new(4.0, -4.0, vec![4.0]);
    let state = run(n, start, vec![0; n], mix, individual_scales(2.4, 2.4, 2.4), IndicatorUpdate::HardArgmax, 60, 11);
    let crit = ks_critical_001(n);
    for (name, xs) in [
        ("tau", state.individuals.iter().map(|z| z.tau).collect::<Vec<_>>()),
        ("xi", state.individuals.iter().map(|z| z.xi).collect()),
        ("source", state.individuals.iter().map(|z| z.sources[0]).collect()),
    ] {
        let d = ks_statistic(xs, normal_cdf);
        assert!(d < crit, "{name}: KS statistic {d:.5} exceeds {crit:.5}");
    }
}

#[test]
fn ks_statistic_rejects_a_shifted_sample() {
    // the harness itself must be able to fail
    let n = 100_000;
    let mix = mixture(&[1.0], &[(0.3, 1.0)], &[(0.0, 1.0)], &[0.0]);
    let state = run(n, IndividualParams::new(0.3, 0.0, vec![0.0]), vec![0; n], mix, individual_scales(2.4, 2.4, 2.4), IndicatorUpdate::HardArgmax, 30, 12);
    let d = ks_statistic(state.individuals.iter().map(|z| z.tau).collect(), normal_cdf);
    assert!(d > ks_critical_001(n));
}

#[test]
fn marginal_mode_targets_the_mixture_prior() {
    // mean of π₁ N(45, 5²) + π₂ N(55, 4²)
    let n = 50_000;
    let (pi, tau) = ([0.3, 0.7], [(45.0, 5.0), (55.0, 4.0)]);
    let mix = mixture(&pi, &tau, &[(0.0, 0.5), (0.0, 0.5)], &[0.0, 0.0]);
    let state = run(n, IndividualParams::new(50.0, 0.0, vec![0.0]), vec![0; n], mix, individual_scales(2.0, 1.0, 1.0), IndicatorUpdate::Soft, 150, 13);
    let mean_true: f64 = pi.iter().zip(&tau).map(|(p, t)| p * t.0).sum();
    let second: f64 = pi.iter().zip(&tau).map(|(p, t)| p * (t.1 * t.1 + t.0 * t.0)).sum();
    let se = ((second - mean_true * mean_true) / n as f64).sqrt();
    let mean = state.individuals.iter().map(|z| z.tau).sum::<f64>() / n as f64;
    assert!((mean - mean_true).abs() < 3.0 * se, "mean {mean:.4} vs {mean_true} (se {se:.4})");
    let m2 = state.individuals.iter().map(|z| z.tau * z.tau).sum::<f64>() / n as f64;
    assert!((m2 - second).abs() / second < 0.01, "second moment {m2:.3} vs {second:.3}");
}

#[test]
fn symmetric_clusters_are_visited_equally() {
    let n = 40_000;
    let mix = mixture(&[0.5, 0.5], &[(45.0, 5.0), (55.0, 5.0)], &[(0.0, 0.5), (0.0, 0.5)], &[0.0, 0.0]);
    let labels = (0..n).map(|i| i % 2).collect();
    let state = run(n, IndividualParams::new(50.0, 0.0, vec![0.0]), labels, mix, individual_scales(1.0, 1.0, 1.0), IndicatorUpdate::Sample, 50, 14);
    let share = state.labels.iter().filter(|&&c| c == 0).count() as f64 / n as f64;
    let se = (0.25 / n as f64).sqrt();
    assert!((share - 0.5).abs() < 3.0 * se, "share {share:.4}");
}

#[test]
fn flat_data_chain_mean_matches_prior_mean() {
    // one long chain per patient, averaged over sweeps: 50k draws in total
    let (n, sweeps, burn) = (500, 150, 50);
    let data = empty_patients(n);
    let pop = population();
    let mix = mixture(&[1.0], &[(60.0, 5.0)], &[(0.0, 0.5)], &[0.0]);
    let params = ModelParams { population_means: pop.clone(), mixture: mix };
    let mut state = LatentState { pop, individuals: vec![IndividualParams::new(60.0, 0.0, vec![0.0]); n], labels: vec![0; n], n_clusters: 1 };
    let mut chains = Chains::new(15, n);
    let scales = individual_scales(2.4, 2.4, 2.4);
    let mut per_chain = vec![0.0; n];
    for k in 0..sweeps {
        mh_gibbs_sweep(&mut state, &data, &params, &HyperParams::default(), &scales, IndicatorUpdate::HardArgmax, &mut chains).unwrap();
        if k >= burn {
            for (acc, z) in per_chain.iter_mut().zip(&state.individuals) {
                *acc += z.tau / (sweeps - burn) as f64;
            }
        }
    }
    // chains are independent, so the spread of the chain means gives an honest standard error
    let mean = per_chain.iter().sum::<f64>() / n as f64;
    let sd = (per_chain.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let se = sd / (n as f64).sqrt();
    assert!((mean - 60.0).abs() < 3.0 * se, "mean {mean:.4}, se {se:.4}");
}

//! Closed-form M-step against brute-force maximization of the expected
//! complete-data log-likelihood, and the centering constraints along a run.

use mixcourse_core::linalg::Matrix;
use mixcourse_core::rng::{domain, stream};
use mixcourse_core::saem::{apply_xi_shift, initialize, maximize, mh_gibbs_sweep, step_size, Chains, FitConfig, ModelParams, ProposalScales, SufficientStats};
use mixcourse_core::simulator::{default_fixed_effects, scenario_preset, simulate};
use mixcourse_core::{MixtureParams, PopulationParams};
use mixcourse_core::model::ForwardModel;
use rand::Rng;

/// Maximizes `f` over a box by repeated grid refinement around the best node.
fn grid_max(f: impl Fn(&[f64]) -> f64, mut lo: Vec<f64>, mut hi: Vec<f64>) -> Vec<f64> {
    const NODES: usize = 21;
    let q = lo.len();
    let mut best = lo.clone();
    for _ in 0..60 {
        let mut best_val = f64::NEG_INFINITY;
        let total = NODES.pow(q as u32);
        for idx in 0..total {
            let mut x = vec![0.0; q];
            let mut rem = idx;
            for j in 0..q {
                let t = (rem % NODES) as f64 / (NODES - 1) as f64;
                rem /= NODES;
                x[j] = lo[j] + t * (hi[j] - lo[j]);
            }
            let v = f(&x);
            if v > best_val {
                best_val = v;
                best = x;
            }
        }
        for j in 0..q {
            let step = (hi[j] - lo[j]) / (NODES - 1) as f64;
            lo[j] = (best[j] - 2.0 * step).max(lo[j]);
            hi[j] = (best[j] + 2.0 * step).min(hi[j]);
        }
    }
    best
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

/// Gaussian expected log-density given the weighted count, sum and sum of squares.
fn gaussian_q(n: f64, sum: f64, sq: f64, mean: f64, sd: f64) -> f64 {
    -n * sd.ln() - (sq - 2.0 * mean * sum + n * mean * mean) / (2.0 * sd * sd)
}

struct Toy {
    stats: SufficientStats,
    previous: ModelParams,
}

fn random_toy(seed: u64, nc: usize, ns: usize, d: usize) -> Toy {
    let mut rng = stream(seed, domain::GENERIC, 0);
    let mut counts = vec![0.0; nc];
    let (mut tau_sum, mut tau_sq, mut xi_sum, mut xi_sq) = (vec![0.0; nc], vec![0.0; nc], vec![0.0; nc], vec![0.0; nc]);
    let mut source_sum = Matrix::zeros(nc, ns);
    for c in 0..nc {
        // a few weighted points per cluster, as the soft statistics produce
        for _ in 0..rng.random_range(3..8) {
            let w: f64 = rng.random_range(0.1..1.0);
            let tau = rng.random_range(30.0..80.0);
            let xi = rng.random_range(-1.0..1.0);
            counts[c] += w;
            tau_sum[c] += w * tau;
            tau_sq[c] += w * tau * tau;
            xi_sum[c] += w * xi;
            xi_sq[c] += w * xi * xi;
            for l in 0..ns {
                source_sum[(c, l)] += w * rng.random_range(-2.0..2.0);
            }
        }
    }
    let pop = PopulationParams::from_natural(&vec![0.3; d], &vec![0.05; d], Matrix::zeros(d - 1, ns)).unwrap();
    let stats = SufficientStats {
        counts,
        tau_sum,
        tau_sq,
        xi_sum,
        xi_sq,
        source_sum,
        population: pop.to_flat().iter().map(|x| x + rng.random_range(-0.1..0.1)).collect(),
        rss: (0..d).map(|_| rng.random_range(0.5..5.0)).collect(),
        obs_count: (0..d).map(|_| rng.random_range(100.0..500.0_f64).round()).collect(),
    };
    let previous = ModelParams {
        population_means: pop,
        mixture: MixtureParams {
            proportions: vec![1.0 / nc as f64; nc],
            tau_mean: vec![50.0; nc],
            tau_sd: vec![5.0; nc],
            xi_mean: vec![0.0; nc],
            xi_sd: vec![0.5; nc],
            source_means: Matrix::zeros(nc, ns),
            noise_sd: vec![0.1; d],
        },
    };
    Toy { stats, previous }
}

#[test]
fn closed_form_matches_grid_search() {
    for seed in 0..6 {
        let nc = 2 + (seed as usize % 2);
        let toy = random_toy(seed, nc, 2, 3);
        let s = &toy.stats;
        let m = maximize(s, &toy.previous);
        let mix = &m.params.mixture;
        let tol = 1e-6;

        for c in 0..nc {
            let n = s.counts[c];
            let tau = grid_max(|x| gaussian_q(n, s.tau_sum[c], s.tau_sq[c], x[0], x[1]), vec![0.0, 0.01], vec![100.0, 50.0]);
            assert!(rel_close(mix.tau_mean[c], tau[0], tol), "tau mean {} vs {}", mix.tau_mean[c], tau[0]);
            assert!(rel_close(mix.tau_sd[c], tau[1], tol), "tau sd {} vs {}", mix.tau_sd[c], tau[1]);

            let xi = grid_max(|x| gaussian_q(n, s.xi_sum[c], s.xi_sq[c], x[0], x[1]), vec![-2.0, 0.01], vec![2.0, 3.0]);
            // the closed form re-centres ξ̄ afterwards; undo that before comparing
            assert!(rel_close(mix.xi_mean[c] + m.xi_shift, xi[0], tol), "xi mean {} vs {}", mix.xi_mean[c] + m.xi_shift, xi[0]);
            assert!(rel_close(mix.xi_sd[c], xi[1], tol));
        }

        // sources: unit prior variance, so only the means are free
        let pi: Vec<f64> = s.counts.iter().map(|n| n / s.counts.iter().sum::<f64>()).collect();
        for l in 0..2 {
            let raw: Vec<f64> = (0..nc)
                .map(|c| grid_max(|x| -(s.counts[c] * x[0] * x[0] - 2.0 * x[0] * s.source_sum[(c, l)]) / 2.0, vec![-5.0], vec![5.0])[0])
                .collect();
            let offset: f64 = pi.iter().zip(&raw).map(|(p, r)| p * r).sum();
            for c in 0..nc {
                assert!((mix.source_means[(c, l)] - (raw[c] - offset)).abs() < 1e-6);
            }
        }

        // proportions on the simplex, parametrized by the first nc − 1 weights
        let pi_hat = grid_max(
            |x| {
                let last = 1.0 - x.iter().sum::<f64>();
                if last <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                x.iter().zip(&s.counts).map(|(p, n)| n * p.ln()).sum::<f64>() + s.counts[nc - 1] * last.ln()
            },
            vec![1e-6; nc - 1],
            vec![1.0; nc - 1],
        );
        for c in 0..nc - 1 {
            assert!(rel_close(mix.proportions[c], pi_hat[c], tol), "pi {} vs {}", mix.proportions[c], pi_hat[c]);
        }

        for k in 0..3 {
            let sd = grid_max(|x| gaussian_q(s.obs_count[k], 0.0, s.rss[k], 0.0, x[0]), vec![1e-4], vec![1.0]);
            assert!(rel_close(mix.noise_sd[k], sd[0], tol));
        }

        let mut pop = toy.previous.population_means.clone();
        pop.set_flat(&s.population);
        let d = 3;
        for k in 0..d {
            assert!((m.params.population_means.g_tilde[k] - pop.g_tilde[k]).abs() < 1e-12);
            assert!((m.params.population_means.v_tilde[k] - (pop.v_tilde[k] + m.xi_shift)).abs() < 1e-12);
        }
    }
}

#[test]
fn three_point_cluster() {
    let toy = random_toy(0, 1, 1, 2);
    let mut s = toy.stats.clone();
    let taus = [40.0, 50.0, 60.0];
    s.counts = vec![3.0];
    s.tau_sum = vec![taus.iter().sum()];
    s.tau_sq = vec![taus.iter().map(|t| t * t).sum()];
    let m = maximize(&s, &toy.previous);
    assert!((m.params.mixture.tau_mean[0] - 50.0).abs() < 1e-12);
    assert!((m.params.mixture.tau_sd[0] - (200.0f64 / 3.0).sqrt()).abs() < 1e-9);
    let toy_grid = grid_max(|x| gaussian_q(3.0, s.tau_sum[0], s.tau_sq[0], x[0], x[1]), vec![30.0, 1.0], vec![70.0, 20.0]);
    assert!((toy_grid[0] - 50.0).abs() < 1e-6 && (toy_grid[1] - 8.164_965_809).abs() < 1e-6);
}

#[test]
fn centering_holds_after_every_m_step() {
    let mut scenario = scenario_preset("scenario_multi").unwrap();
    scenario.n_patients = 150;
    scenario.seed = 3;
    let sim = simulate(&scenario, &default_fixed_effects(&scenario).unwrap()).unwrap();
    let data = &sim.dataset;
    let config = FitConfig::new(3, scenario.n_sources, 5).with_iterations(300);
    let (mut state, mut params) = initialize(data, &config).unwrap();
    let p = config.proposal;
    let scales = ProposalScales { tau: p.tau, xi: p.xi, sources: p.sources, g_tilde: p.g_tilde, v_tilde: p.v_tilde, beta: p.beta };
    let mut chains = Chains::new(config.seed, data.n_patients());
    let mut smoothed: Option<SufficientStats> = None;
    for k in 1..=config.n_iterations {
        mh_gibbs_sweep(&mut state, data, &params, &config.hyper, &scales, config.indicator_update, &mut chains).unwrap();
        let fm = ForwardModel::new(&state.pop).unwrap();
        let current = SufficientStats::from_state_soft(&state, data, &fm, &params.mixture, &config.hyper);
        let s = match smoothed.as_mut() {
            Some(s) => {
                s.update(&current, step_size(k, &config));
                s
            }
            None => smoothed.insert(current),
        };
        let m = maximize(s, &params);
        apply_xi_shift(&mut state, s, m.xi_shift);
        params = m.params;
        let mix = &params.mixture;
        let xi: f64 = mix.proportions.iter().zip(&mix.xi_mean).map(|(p, x)| p * x).sum();
        assert!(xi.abs() <= 1e-8, "iteration {k}: Σ π ξ̄ = {xi:e}");
        for l in 0..mix.n_sources() {
            let sl: f64 = (0..3).map(|c| mix.proportions[c] * mix.source_means[(c, l)]).sum();
            assert!(sl.abs() <= 1e-8, "iteration {k}: Σ π s̄_{l} = {sl:e}");
        }
        assert!((mix.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(mix.proportions.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(mix.centering_residual() <= 1e-8);
    }
}

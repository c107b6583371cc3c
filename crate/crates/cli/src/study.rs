//! Simulation studies: replicate datasets, fit both methods, align and score.

use mixcourse_core::evaluation::{evaluate_replicate, metric_ci, permute_rows, recovery_metrics, MetricCi, Recovery, ReplicateResult};
use mixcourse_core::likelihood::normalized_entropy;
use mixcourse_core::linalg::Matrix;
use mixcourse_core::posthoc::{posthoc_classify, PosthocConfig};
use mixcourse_core::rng::{derive_seed, domain};
use mixcourse_core::saem::fit;
use mixcourse_core::simulator::{default_fixed_effects, simulate, Simulation};
use mixcourse_core::{FitConfig, FittedModel, MembershipMatrix, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Mixture,
    Posthoc,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Mixture, Method::Posthoc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mixture => "mixture",
            Method::Posthoc => "posthoc",
        }
    }
}

/// One method on one replicate, in true-cluster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub result: ReplicateResult,
    pub proportions: Vec<f64>,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub true_proportions: Vec<f64>,
    pub mixture: MethodOutcome,
    pub posthoc: MethodOutcome,
}

impl ReplicateOutcome {
    pub fn method(&self, m: Method) -> &MethodOutcome {
        match m {
            Method::Mixture => &self.mixture,
            Method::Posthoc => &self.posthoc,
        }
    }
}

/// A replicate together with its data and mixture fit.
pub struct ReplicateRun {
    pub outcome: ReplicateOutcome,
    pub simulation: Simulation,
    pub model: FittedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Scenario with the per-replicate patient count; its seed is the master seed.
    pub scenario: Scenario,
    pub n_replicates: usize,
    /// Settings shared by both methods; cluster count and seed are set per replicate.
    pub fit: FitConfig,
    pub workers: usize,
}

/// `(τ̄, ξ̄, w̄_1…w̄_d)` rows of the generating model.
pub fn true_cluster_table(sim: &Simulation) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..sim.mixture.n_clusters())
        .map(|c| {
            let mut r = vec![sim.mixture.tau_mean[c], sim.mixture.xi_mean[c]];
            r.extend_from_slice(sim.space_shift_means.row(c));
            r
        })
        .collect();
    Matrix::from_rows(&rows).expect("rectangular")
}

fn score(replicate: usize, sim: &Simulation, truth: &Matrix, labels: &[usize], summaries: &[Vec<f64>], proportions: &[f64], membership: &MembershipMatrix) -> CliResult<MethodOutcome> {
    let est = Matrix::from_rows(summaries).ok_or_else(|| CliError::Input("cluster table is ragged".into()))?;
    let result = evaluate_replicate(replicate, &sim.labels, truth, labels, &est)?;
    let perm = mixcourse_core::evaluation::align_labels(truth, &est)?;
    Ok(MethodOutcome { proportions: permute_rows(proportions, &perm), entropy: normalized_entropy(membership)?, result })
}

/// Simulates replicate `r`, fits the mixture model and the post-hoc baseline.
pub fn run_replicate(config: &StudyConfig, r: usize) -> CliResult<ReplicateRun> {
    let seed = derive_seed(config.scenario.seed, domain::REPLICATE, r as u64);
    let scenario = Scenario { seed, ..config.scenario.clone() };
    let sim = simulate(&scenario, &default_fixed_effects(&scenario)?)?;
    let cfg = FitConfig { n_clusters: scenario.n_clusters(), n_sources: scenario.n_sources, seed, ..config.fit.clone() };
    let truth = true_cluster_table(&sim);

    let model = fit(&sim.dataset, &cfg)?;
    let mixture = score(r, &sim, &truth, &model.labels(), &model.cluster_summaries()?, &model.mixture.proportions, &model.membership)?;

    let ph = posthoc_classify(&sim.dataset, &PosthocConfig::from_fit_config(&cfg))?;
    let resp = MembershipMatrix::new(ph.gmm.responsibilities.clone())?;
    let posthoc = score(r, &sim, &truth, &ph.labels, &ph.cluster_summaries, &ph.proportions, &resp)?;

    log::info!("replicate {r}: mixture accuracy {:.3}, post-hoc accuracy {:.3}", mixture.result.metrics.accuracy, posthoc.result.metrics.accuracy);
    let outcome = ReplicateOutcome { replicate: r, seed, true_proportions: scenario.proportions.clone(), mixture, posthoc };
    Ok(ReplicateRun { outcome, simulation: sim, model })
}

/// Runs `f` over `0..n` on a pool of `workers` threads, keeping index order.
pub fn parallel_map<T: Send>(workers: usize, n: usize, f: impl Fn(usize) -> CliResult<T> + Sync + Send) -> CliResult<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| CliError::Input(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

pub fn run_study(config: &StudyConfig) -> CliResult<Vec<ReplicateOutcome>> {
    if config.n_replicates == 0 {
        return Err(CliError::Input("a study needs at least one replicate".into()));
    }
    config.scenario.validate()?;
    parallel_map(config.workers, config.n_replicates, |r| run_replicate(config, r).map(|run| run.outcome))
}

/// One row of the classification table: a metric with its interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub ci: MetricCi,
}

/// One row of the recovery table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub parameter: String,
    pub truth: f64,
    pub recovery: Recovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub metrics: Vec<MetricRow>,
    pub recovery: Vec<RecoveryRow>,
    /// Row-normalized confusion matrix averaged over replicates.
    pub confusion: Matrix,
}

fn ci_row(metric: String, values: &[f64]) -> CliResult<Option<MetricRow>> {
    if values.is_empty() {
        return Ok(None);
    }
    Ok(Some(MetricRow { metric, ci: metric_ci(values)? }))
}

/// Aggregates one method across replicates; `features` names the `w` rows.
pub fn summarize(outcomes: &[ReplicateOutcome], method: Method, features: &[String]) -> CliResult<MethodSummary> {
    let first = outcomes.first().ok_or_else(|| CliError::Input("no replicates to summarize".into()))?;
    let k = first.true_proportions.len();
    let runs: Vec<&MethodOutcome> = outcomes.iter().map(|o| o.method(method)).collect();
    let mut metrics = Vec::new();
    let acc: Vec<f64> = runs.iter().map(|m| m.result.metrics.accuracy).collect();
    metrics.extend(ci_row("accuracy".into(), &acc)?);
    for c in 0..k {
        let recall: Vec<f64> = runs.iter().filter_map(|m| m.result.metrics.recall[c]).collect();
        metrics.extend(ci_row(format!("recall_{}", c + 1), &recall)?);
    }
    for c in 0..k {
        let precision: Vec<f64> = runs.iter().filter_map(|m| m.result.metrics.precision[c]).collect();
        metrics.extend(ci_row(format!("precision_{}", c + 1), &precision)?);
    }
    let entropy: Vec<f64> = runs.iter().map(|m| m.entropy).collect();
    metrics.extend(ci_row("entropy".into(), &entropy)?);

    let mut recovery = Vec::new();
    let mut push = |parameter: String, truth: f64, est: Vec<f64>| -> CliResult<()> {
        recovery.push(RecoveryRow { parameter, truth, recovery: recovery_metrics(&est, truth)? });
        Ok(())
    };
    for c in 0..k {
        push(format!("pi_{}", c + 1), first.true_proportions[c], runs.iter().map(|m| m.proportions[c]).collect())?;
    }
    let truth = &first.mixture.result.true_params;
    for c in 0..k {
        push(format!("tau_{}", c + 1), truth[(c, 0)], runs.iter().map(|m| m.result.estimated_params[(c, 0)]).collect())?;
    }
    for c in 0..k {
        push(format!("xi_{}", c + 1), truth[(c, 1)], runs.iter().map(|m| m.result.estimated_params[(c, 1)]).collect())?;
    }
    for (j, f) in features.iter().enumerate() {
        for c in 0..k {
            push(format!("w_{f}_{}", c + 1), truth[(c, 2 + j)], runs.iter().map(|m| m.result.estimated_params[(c, 2 + j)]).collect())?;
        }
    }

    let mut confusion = Matrix::zeros(k, k);
    for m in &runs {
        for (a, b) in confusion.as_mut_slice().iter_mut().zip(m.result.metrics.confusion.as_slice()) {
            *a += b / runs.len() as f64;
        }
    }
    Ok(MethodSummary { method, metrics, recovery, confusion })
}

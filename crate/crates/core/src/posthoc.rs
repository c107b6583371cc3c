//! Post-hoc baseline: a single-cluster fit followed by a Gaussian mixture on
//! the estimated individual parameters.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{gmm_fit, GmmConfig, GmmFit};
use crate::linalg::Matrix;
use crate::model::Dataset;
use crate::saem::{fit, FitConfig, FittedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocConfig {
    /// Settings of the single-cluster fit; its `n_clusters` is ignored.
    pub fit: FitConfig,
    pub n_clusters: usize,
    pub gmm: GmmConfig,
}

impl PosthocConfig {
    /// Uses the mixture fit's settings for the single-cluster fit.
    pub fn from_fit_config(config: &FitConfig) -> Self {
        Self { fit: FitConfig { n_clusters: 1, ..config.clone() }, n_clusters: config.n_clusters, gmm: GmmConfig { seed: config.seed, ..GmmConfig::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocResult {
    pub single_fit: FittedModel,
    pub gmm: GmmFit,
    /// 0-based cluster of each patient.
    pub labels: Vec<usize>,
    pub proportions: Vec<f64>,
    /// One `(τ̄, ξ̄, w̄_1, …, w̄_d)` row per cluster.
    pub cluster_summaries: Vec<Vec<f64>>,
}

/// Rows `(τ_i, ξ_i, s_i1, …)` of the individual posterior means.
pub fn individual_features(model: &FittedModel) -> Matrix {
    let ns = model.population.n_sources();
    let mut m = Matrix::zeros(model.individuals.len(), 2 + ns);
    for (i, ind) in model.individuals.iter().enumerate() {
        let row = m.row_mut(i);
        row[0] = ind.tau;
        row[1] = ind.xi;
        row[2..].copy_from_slice(&ind.sources);
    }
    m
}

/// Runs the baseline on `data`.
pub fn posthoc_classify(data: &Dataset, config: &PosthocConfig) -> Result<PosthocResult> {
    if config.n_clusters == 0 {
        return Err(Error::Config("post-hoc clustering needs at least one cluster".into()));
    }
    let single = fit(data, &FitConfig { n_clusters: 1, ..config.fit.clone() })?;
    let points = individual_features(&single);
    let gmm = gmm_fit(&points, config.n_clusters, &config.gmm)?;
    let a = single.population.mixing_matrix()?;
    let cluster_summaries = (0..config.n_clusters)
        .map(|c| {
            let mean = gmm.model.means.row(c);
            let mut row = vec![mean[0], mean[1]];
            row.extend(a.mul_vec(&mean[2..]));
            row
        })
        .collect();
    Ok(PosthocResult { labels: gmm.labels(), proportions: gmm.model.weights.clone(), cluster_summaries, gmm, single_fit: single })
}

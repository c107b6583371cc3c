//! Label alignment, classification and recovery metrics, percentile
//! intervals, and ICL-based selection of the number of clusters.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assignment::linear_sum_assignment;
use crate::error::{Error, Result};
use crate::likelihood::{icl, Icl};
use crate::linalg::Matrix;
use crate::math::{floor, sqrt};
use crate::model::Dataset;
use crate::saem::{fit, FitConfig};

/// Matches estimated clusters to true clusters.
///
/// Both `k × m` tables are z-scored per column using the pooled rows; columns
/// with zero pooled variance are dropped. Returns `perm` with `perm[e]` the
/// true cluster matched to estimated cluster `e`.
pub fn align_labels(true_params: &Matrix, est_params: &Matrix) -> Result<Vec<usize>> {
    let (k, m) = (true_params.rows(), true_params.cols());
    if est_params.rows() != k || est_params.cols() != m {
        return Err(Error::Config(format!(
            "parameter tables differ in shape: {k}×{m} vs {}×{}",
            est_params.rows(),
            est_params.cols()
        )));
    }
    let mut scales = Vec::with_capacity(m);
    let mut dropped = Vec::new();
    for j in 0..m {
        let vals: Vec<f64> = (0..k).flat_map(|i| [true_params[(i, j)], est_params[(i, j)]]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / vals.len() as f64;
        if var > 0.0 && var.is_finite() {
            scales.push(Some((mean, sqrt(var))));
        } else {
            scales.push(None);
            dropped.push(j);
        }
    }
    if !dropped.is_empty() {
        log::warn!("alignment: columns {dropped:?} have zero variance and are ignored");
    }
    let mut cost = Matrix::zeros(k, k);
    for e in 0..k {
        for t in 0..k {
            let mut d2 = 0.0;
            for (j, s) in scales.iter().enumerate() {
                if let Some((mean, sd)) = s {
                    let a = (est_params[(e, j)] - mean) / sd;
                    let b = (true_params[(t, j)] - mean) / sd;
                    d2 += (a - b) * (a - b);
                }
            }
            cost[(e, t)] = sqrt(d2);
        }
    }
    Ok(linear_sum_assignment(&cost)?.into_iter().map(|c| c.expect("square problem")).collect())
}

/// Applies `perm` from [`align_labels`] to estimated labels.
pub fn relabel(labels: &[usize], perm: &[usize]) -> Vec<usize> {
    labels.iter().map(|&l| perm[l]).collect()
}

/// Reorders the rows of an estimated table into true-cluster order.
pub fn permute_rows<T: Clone>(rows: &[T], perm: &[usize]) -> Vec<T> {
    let mut out = rows.to_vec();
    for (e, &t) in perm.iter().enumerate() {
        out[t] = rows[e].clone();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// Raw counts, rows are true clusters.
    pub counts: Matrix,
    /// Counts divided by their row totals (rows of empty true clusters stay 0).
    pub confusion: Matrix,
    pub accuracy: f64,
    /// `None` when the true cluster is empty.
    pub recall: Vec<Option<f64>>,
    /// `None` when no patient is predicted in the cluster.
    pub precision: Vec<Option<f64>>,
}

/// Confusion matrix, accuracy, recall and precision of aligned labels.
pub fn classification_metrics(truth: &[usize], pred: &[usize], k: usize) -> Result<ClassificationMetrics> {
    if truth.len() != pred.len() {
        return Err(Error::Config(format!("{} true labels vs {} predictions", truth.len(), pred.len())));
    }
    if truth.is_empty() {
        return Err(Error::Config("no labels to evaluate".into()));
    }
    if let Some(&bad) = truth.iter().chain(pred).find(|&&l| l >= k) {
        return Err(Error::Config(format!("label {bad} outside 0..{k}")));
    }
    let mut counts = Matrix::zeros(k, k);
    for (&t, &p) in truth.iter().zip(pred) {
        counts[(t, p)] += 1.0;
    }
    let row_tot: Vec<f64> = (0..k).map(|t| counts.row(t).iter().sum()).collect();
    let col_tot: Vec<f64> = (0..k).map(|p| (0..k).map(|t| counts[(t, p)]).sum()).collect();
    let mut confusion = counts.clone();
    for t in 0..k {
        if row_tot[t] > 0.0 {
            for x in confusion.row_mut(t) {
                *x /= row_tot[t];
            }
        }
    }
    let correct: f64 = (0..k).map(|c| counts[(c, c)]).sum();
    Ok(ClassificationMetrics {
        accuracy: correct / truth.len() as f64,
        recall: (0..k).map(|c| (row_tot[c] > 0.0).then(|| counts[(c, c)] / row_tot[c])).collect(),
        precision: (0..k).map(|c| (col_tot[c] > 0.0).then(|| counts[(c, c)] / col_tot[c])).collect(),
        counts,
        confusion,
    })
}

/// Mean with an empirical 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCi {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Linearly interpolated sample quantile (`h = (n − 1) q`) of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and 2.5/97.5 percentiles across replicates.
pub fn metric_ci(values: &[f64]) -> Result<MetricCi> {
    if values.is_empty() {
        return Err(Error::Config("no replicate values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("replicate values must be finite".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() == 1 {
        log::warn!("interval from a single replicate is degenerate");
        return Ok(MetricCi { mean, lower: mean, upper: mean });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(MetricCi { mean, lower: quantile(&sorted, 0.025), upper: quantile(&sorted, 0.975) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub estimate: f64,
    pub bias: f64,
    /// Sample standard deviation of the estimates across replicates.
    pub se: f64,
    pub rmse: f64,
}

/// Bias, standard error and RMSE of replicate estimates of one parameter.
pub fn recovery_metrics(estimates: &[f64], truth: f64) -> Result<Recovery> {
    if estimates.is_empty() {
        return Err(Error::Config("no replicate estimates".into()));
    }
    let r = estimates.len() as f64;
    let estimate = estimates.iter().sum::<f64>() / r;
    let se = if estimates.len() > 1 {
        sqrt(estimates.iter().map(|x| (x - estimate) * (x - estimate)).sum::<f64>() / (r - 1.0))
    } else {
        0.0
    };
    let rmse = sqrt(estimates.iter().map(|x| (x - truth) * (x - truth)).sum::<f64>() / r);
    Ok(Recovery { estimate, bias: estimate - truth, se, rmse })
}

/// One candidate of [`select_n_clusters`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclRow {
    pub n_clusters: usize,
    pub icl: Option<Icl>,
    /// Failure message when the fit did not complete.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: usize,
    pub table: Vec<IclRow>,
}

/// Candidate with the smallest ICL; ties go to the fewer clusters.
pub fn argmin_icl(values: &[(usize, f64)]) -> Option<usize> {
    values
        .iter()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(k, _)| *k)
}

/// Fits every candidate cluster count and keeps the ICL minimizer.
pub fn select_n_clusters(data: &Dataset, candidates: &[usize], base: &FitConfig) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidate cluster counts".into()));
    }
    let table: Vec<IclRow> = candidates
        .iter()
        .map(|&k| {
            let cfg = FitConfig { n_clusters: k, ..base.clone() };
            match fit(data, &cfg).and_then(|m| icl(&m, data)) {
                Ok(v) => IclRow { n_clusters: k, icl: Some(v), error: None },
                Err(e) => {
                    log::warn!("selection: fit with {k} clusters failed: {e}");
                    IclRow { n_clusters: k, icl: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    let values: Vec<(usize, f64)> = table.iter().filter_map(|r| r.icl.as_ref().map(|i| (r.n_clusters, i.value))).collect();
    let chosen = argmin_icl(&values).ok_or_else(|| Error::Config("every candidate fit failed".into()))?;
    Ok(Selection { chosen, table })
}

/// Outcome of one simulated replicate, aligned to the true labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub true_labels: Vec<usize>,
    /// Predicted labels after alignment.
    pub predicted_labels: Vec<usize>,
    /// `k × m` true cluster parameters.
    pub true_params: Matrix,
    /// `k × m` estimated cluster parameters in true-cluster order.
    pub estimated_params: Matrix,
    pub metrics: ClassificationMetrics,
}

/// Aligns one replicate and computes its classification metrics.
pub fn evaluate_replicate(replicate: usize, true_labels: &[usize], true_params: &Matrix, pred_labels: &[usize], est_params: &Matrix) -> Result<ReplicateResult> {
    let k = true_params.rows();
    let perm = align_labels(true_params, est_params)?;
    let predicted = relabel(pred_labels, &perm);
    let rows: Vec<Vec<f64>> = (0..k).map(|e| est_params.row(e).to_vec()).collect();
    let ordered = Matrix::from_rows(&permute_rows(&rows, &perm)).expect("rectangular");
    let metrics = classification_metrics(true_labels, &predicted, k)?;
    Ok(ReplicateResult { replicate, true_labels: true_labels.to_vec(), predicted_labels: predicted, true_params: true_params.clone(), estimated_params: ordered, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn hand_counted_confusion() {
        let m = classification_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.recall, vec![Some(0.5), Some(1.0)]);
        assert_eq!(m.precision[0], Some(1.0));
        assert!((m.precision[1].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let perfect = classification_metrics(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        let empty = classification_metrics(&[0, 0], &[0, 0], 2).unwrap();
        assert_eq!(empty.recall[1], None);
        assert_eq!(empty.precision[1], None);
    }

    #[test]
    fn percentile_interval() {
        let c = metric_ci(&[0.7; 10]).unwrap();
        assert_eq!((c.lower, c.upper), (0.7, 0.7));
        let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let c = metric_ci(&grid).unwrap();
        assert!((c.lower - 0.025).abs() < 1e-12 && (c.upper - 0.975).abs() < 1e-12);
        let one = metric_ci(&[0.4]).unwrap();
        assert_eq!((one.mean, one.lower, one.upper), (0.4, 0.4, 0.4));
    }

    #[test]
    fn recovery_examples() {
        let r = recovery_metrics(&[50.0, 50.0, 50.0], 50.0).unwrap();
        assert_eq!((r.bias, r.se, r.rmse), (0.0, 0.0, 0.0));
        let r = recovery_metrics(&[49.0, 51.0], 50.0).unwrap();
        assert_eq!(r.bias, 0.0);
        assert!((r.rmse - 1.0).abs() < 1e-15);
        assert!((r.se - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn alignment_examples() {
        let t = Matrix::from_rows(&[vec![50.0, -0.3, 0.1], vec![40.0, 0.2, -0.1]]).unwrap();
        assert_eq!(align_labels(&t, &t).unwrap(), vec![0, 1]);
        let swapped = Matrix::from_rows(&[t.row(1).to_vec(), t.row(0).to_vec()]).unwrap();
        assert_eq!(align_labels(&t, &swapped).unwrap(), vec![1, 0]);
        // a constant column carries no information and is ignored
        let t2 = Matrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0]]).unwrap();
        let e2 = Matrix::from_rows(&[vec![2.1, 5.0], vec![0.9, 5.0]]).unwrap();
        assert_eq!(align_labels(&t2, &e2).unwrap(), vec![1, 0]);
    }

    #[test]
    fn published_icl_values_select_two_clusters() {
        assert_eq!(argmin_icl(&[(2, -6970.0), (3, -6950.0), (4, -6925.0)]), Some(2));
        assert_eq!(argmin_icl(&[(3, 10.0)]), Some(3));
        assert_eq!(argmin_icl(&[(2, f64::NAN), (3, 10.0)]), Some(3));
    }
}

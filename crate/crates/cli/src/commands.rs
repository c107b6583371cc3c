//! The six commands. Each takes plain settings, writes its files under the
//! output directory and prints a short report on stdout.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use mixcourse_core::evaluation::{align_labels, argmin_icl, evaluate_replicate, permute_rows};
use mixcourse_core::likelihood::{icl, normalized_entropy, Icl};
use mixcourse_core::linalg::Matrix;
use mixcourse_core::model::ForwardModel;
use mixcourse_core::posthoc::{posthoc_classify, PosthocConfig};
use mixcourse_core::saem::{fit, personalize, IndicatorUpdate, PersonalizeConfig};
use mixcourse_core::simulator::{default_fixed_effects, scenario_preset, simulate};
use mixcourse_core::{FitConfig, FittedModel, MembershipMatrix, MixtureParams, PopulationParams, Scenario};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{fmt_num, read_dataset, read_json, read_membership, read_truth, write_json, write_membership, write_trace, write_truth, ClusterTable, Table, Truth};
use crate::study::{run_study, summarize, Method, MethodSummary, StudyConfig};

pub const MODEL_SCHEMA: &str = "mixcourse.model";
pub const TRUTH_SCHEMA: &str = "mixcourse.truth";
pub const FIXED_EFFECTS_SCHEMA: &str = "mixcourse.fixed-effects";
pub const SUMMARY_SCHEMA: &str = "mixcourse.fit-summary";
pub const SELECTION_SCHEMA: &str = "mixcourse.selection";
pub const GMM_SCHEMA: &str = "mixcourse.gmm";

/// Generating parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub scenario: Scenario,
    pub fixed_effects: PopulationParams,
    pub mixture: MixtureParams,
    /// `(τ̄, ξ̄, w̄_1…w̄_d)` per cluster, with the generated space shifts.
    pub cluster_summaries: Vec<Vec<f64>>,
}

/// Settings of the SAEM run shared by `fit`, `classify-posthoc`, `select` and studies.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub sources: usize,
    pub iterations: usize,
    pub burn_in: Option<f64>,
    pub indicator: IndicatorUpdate,
    pub seed: u64,
}

impl FitSettings {
    pub fn config(&self, n_clusters: usize) -> FitConfig {
        let mut cfg = FitConfig::new(n_clusters, self.sources, self.seed).with_iterations(self.iterations);
        if let Some(b) = self.burn_in {
            cfg.burn_in = b;
        }
        cfg.indicator_update = self.indicator;
        cfg
    }
}

pub struct SimulateArgs {
    pub scenario: String,
    pub patients: Option<usize>,
    pub noise: Option<f64>,
    pub fixed_effects: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut scenario = scenario_preset(&args.scenario)?;
    scenario.seed = args.seed;
    if let Some(n) = args.patients {
        scenario.n_patients = n;
    }
    if let Some(s) = args.noise {
        scenario.noise_sd = s;
    }
    let fixed = match &args.fixed_effects {
        Some(p) => read_json(p, FIXED_EFFECTS_SCHEMA)?,
        None => default_fixed_effects(&scenario)?,
    };
    let sim = simulate(&scenario, &fixed)?;
    crate::io::write_dataset(&args.out.join("data.csv"), &sim.dataset)?;
    let ids = sim.dataset.patients().iter().map(|p| p.id.clone()).collect();
    write_truth(&args.out.join("truth.csv"), &Truth { patient_ids: ids, labels: sim.labels.clone(), individuals: sim.individuals.clone() })?;
    let summaries = crate::study::true_cluster_table(&sim);
    let doc = TruthDocument {
        cluster_summaries: (0..summaries.rows()).map(|c| summaries.row(c).to_vec()).collect(),
        scenario,
        fixed_effects: sim.fixed_effects.clone(),
        mixture: sim.mixture.clone(),
    };
    write_json(&args.out.join("truth.json"), TRUTH_SCHEMA, &doc)?;
    println!("simulated {} patients, {} visits, into {}", sim.dataset.n_patients(), sim.dataset.patients().iter().map(|p| p.visits.len()).sum::<usize>(), args.out.display());
    Ok(())
}

/// Reported cluster of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster: usize,
    pub proportion: f64,
    /// `(τ̄, ξ̄, w̄_1…w̄_d)`.
    pub summary: Vec<f64>,
    pub formatted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub features: Vec<String>,
    pub clusters: Vec<ClusterReport>,
    pub normalized_entropy: f64,
    pub icl: Icl,
}

pub struct FitArgs {
    pub data: PathBuf,
    pub clusters: usize,
    pub settings: FitSettings,
    pub out: PathBuf,
    pub trace: Option<PathBuf>,
}

/// Loads a model document.
pub fn read_model(path: &Path) -> CliResult<FittedModel> {
    read_json(path, MODEL_SCHEMA)
}

/// Writes a model document; the trace lives in its own CSV.
pub fn write_model(path: &Path, model: &FittedModel) -> CliResult<()> {
    let stored = FittedModel { trace: Vec::new(), ..model.clone() };
    write_json(path, MODEL_SCHEMA, &stored)
}

fn cluster_table(model: &FittedModel) -> CliResult<ClusterTable> {
    Ok(ClusterTable { features: model.features.clone(), proportions: model.mixture.proportions.clone(), summaries: model.cluster_summaries()? })
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<FitSummary> {
    let data = read_dataset(&args.data)?;
    let cfg = args.settings.config(args.clusters);
    let model = fit(&data, &cfg)?;
    let table = cluster_table(&model)?;
    let summary = FitSummary {
        features: model.features.clone(),
        clusters: table
            .summaries
            .iter()
            .zip(&table.proportions)
            .enumerate()
            .map(|(c, (row, &p))| ClusterReport { cluster: c + 1, proportion: p, summary: row.clone(), formatted: ClusterTable::format_summary(row) })
            .collect(),
        normalized_entropy: normalized_entropy(&model.membership)?,
        icl: icl(&model, &data)?,
    };

    write_model(&args.out.join("model.json"), &model)?;
    write_membership(&args.out.join("membership.csv"), &model.patient_ids, &model.membership)?;
    table.write(&args.out.join("clusters.csv"))?;
    write_trace(&args.trace.clone().unwrap_or_else(|| args.out.join("trace.csv")), &model.trace, &model.features)?;
    write_json(&args.out.join("summary.json"), SUMMARY_SCHEMA, &summary)?;

    println!("clusters (tau, xi, {}):", model.features.iter().map(|f| format!("w_{f}")).collect::<Vec<_>>().join(", "));
    for c in &summary.clusters {
        println!("  {}  pi = {:.2}  {}", c.cluster, c.proportion, c.formatted);
    }
    println!("normalized entropy: {:.2}", summary.normalized_entropy);
    println!("ICL: {:.1}", summary.icl.value);
    Ok(summary)
}

pub struct PersonalizeArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_personalize(args: &PersonalizeArgs) -> CliResult<()> {
    let model = read_model(&args.model)?;
    let data = read_dataset(&args.data)?;
    let out = personalize(&model, &data, &PersonalizeConfig { seed: args.seed, ..Default::default() })?;
    let a = model.population.mixing_matrix()?;
    let ns = model.population.n_sources();
    let mut t = Table::new(
        ["patient_id", "tau", "xi"]
            .into_iter()
            .map(String::from)
            .chain((1..=ns).map(|l| format!("source_{l}")))
            .chain(model.features.iter().map(|f| format!("w_{f}"))),
    );
    for (id, z) in out.patient_ids.iter().zip(&out.individuals) {
        let mut row = vec![id.clone(), fmt_num(z.tau), fmt_num(z.xi)];
        row.extend(z.sources.iter().map(|&s| fmt_num(s)));
        row.extend(a.mul_vec(&z.sources).into_iter().map(fmt_num));
        t.push(row);
    }
    t.write(&args.out.join("individuals.csv"))?;
    write_membership(&args.out.join("membership.csv"), &out.patient_ids, &out.membership)?;
    println!("personalized {} patients into {}", out.patient_ids.len(), args.out.display());
    Ok(())
}

pub struct PosthocArgs {
    pub data: PathBuf,
    pub clusters: usize,
    pub settings: FitSettings,
    pub out: PathBuf,
}

pub fn cmd_classify_posthoc(args: &PosthocArgs) -> CliResult<()> {
    let data = read_dataset(&args.data)?;
    let res = posthoc_classify(&data, &PosthocConfig::from_fit_config(&args.settings.config(args.clusters)))?;
    let membership = MembershipMatrix::new(res.gmm.responsibilities.clone())?;
    let table = ClusterTable { features: data.features().to_vec(), proportions: res.proportions.clone(), summaries: res.cluster_summaries.clone() };
    write_model(&args.out.join("model.json"), &res.single_fit)?;
    write_membership(&args.out.join("membership.csv"), &res.single_fit.patient_ids, &membership)?;
    table.write(&args.out.join("clusters.csv"))?;
    write_json(&args.out.join("gmm.json"), GMM_SCHEMA, &res.gmm.model)?;
    for (c, row) in table.summaries.iter().enumerate() {
        println!("  {}  pi = {:.2}  {}", c + 1, table.proportions[c], ClusterTable::format_summary(row));
    }
    Ok(())
}

pub enum EvaluateArgs {
    /// Scores a fit directory against a simulation directory.
    Files { truth: PathBuf, pred: PathBuf, out: PathBuf },
    /// Runs and scores a replicate study.
    Study { study: StudyConfig, out: PathBuf },
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    match args {
        EvaluateArgs::Files { truth, pred, out } => evaluate_files(truth, pred, out),
        EvaluateArgs::Study { study, out } => evaluate_study(study, out),
    }
}

fn id_mismatch(truth: &[String], pred: &[String]) -> Option<String> {
    if truth == pred {
        return None;
    }
    let (a, b): (HashSet<&String>, HashSet<&String>) = (truth.iter().collect(), pred.iter().collect());
    let list = |v: Vec<&&String>| {
        let mut v: Vec<&str> = v.into_iter().map(|s| s.as_str()).collect();
        v.sort_unstable();
        let more = v.len().saturating_sub(10);
        v.truncate(10);
        if more > 0 { format!("{} (+{more} more)", v.join(", ")) } else { v.join(", ") }
    };
    let missing: Vec<_> = a.difference(&b).collect();
    let extra: Vec<_> = b.difference(&a).collect();
    Some(if missing.is_empty() && extra.is_empty() {
        "patient ids match but are in a different order".into()
    } else {
        format!("patient ids differ; only in truth: [{}]; only in predictions: [{}]", list(missing), list(extra))
    })
}

fn confusion_table(confusion: &Matrix) -> Table {
    let k = confusion.rows();
    let mut t = Table::new(std::iter::once("true_cluster".to_string()).chain((1..=k).map(|c| format!("pred_{c}"))));
    for r in 0..k {
        t.push(std::iter::once((r + 1).to_string()).chain(confusion.row(r).iter().map(|&x| fmt_num(x))).collect());
    }
    t
}

/// Noise-free curves of each cluster mean and of the population average on a
/// grid spanning the cluster onsets.
pub fn trajectory_curves(pop: &PopulationParams, table: &ClusterTable, points: usize) -> CliResult<Table> {
    let fm = ForwardModel::new(pop)?;
    let d = fm.n_features();
    let lo = table.summaries.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min) - 20.0;
    let hi = table.summaries.iter().map(|r| r[0]).fold(f64::NEG_INFINITY, f64::max) + 20.0;
    let tau_pop: f64 = table.proportions.iter().zip(&table.summaries).map(|(p, r)| p * r[0]).sum();
    let mut curves: Vec<(String, f64, f64, Vec<f64>)> = vec![("population".into(), tau_pop, 0.0, vec![0.0; d])];
    for (c, r) in table.summaries.iter().enumerate() {
        curves.push((format!("cluster_{}", c + 1), r[0], r[1], r[2..].to_vec()));
    }
    let mut t = Table::new(["curve".to_string(), "time".to_string()].into_iter().chain(table.features.iter().cloned()));
    for (name, tau, xi, w) in &curves {
        for i in 0..points {
            let time = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            let psi = xi.exp() * (time - tau);
            let mut row = vec![name.clone(), fmt_num(time)];
            row.extend((0..d).map(|k| fmt_num(fm.feature_value(k, psi, w[k]))));
            t.push(row);
        }
    }
    Ok(t)
}

fn evaluate_files(truth_dir: &Path, pred_dir: &Path, out: &Path) -> CliResult<()> {
    let doc: TruthDocument = read_json(&truth_dir.join("truth.json"), TRUTH_SCHEMA)?;
    let k = doc.cluster_summaries.len();
    let truth = read_truth(&truth_dir.join("truth.csv"), k)?;
    let (ids, labels, membership) = read_membership(&pred_dir.join("membership.csv"))?;
    if let Some(diff) = id_mismatch(&truth.patient_ids, &ids) {
        return Err(CliError::Input(diff));
    }
    let est = ClusterTable::read(&pred_dir.join("clusters.csv"))?;
    if est.summaries.len() != k || membership.n_clusters() != k {
        return Err(CliError::Input(format!("truth has {k} clusters, predictions have {}", est.summaries.len())));
    }
    let true_table = Matrix::from_rows(&doc.cluster_summaries).ok_or_else(|| CliError::Input("truth cluster table is ragged".into()))?;
    let est_table = Matrix::from_rows(&est.summaries).ok_or_else(|| CliError::Input("cluster table is ragged".into()))?;
    let res = evaluate_replicate(0, &truth.labels, &true_table, &labels, &est_table)?;
    let perm = align_labels(&true_table, &est_table)?;
    let proportions = permute_rows(&est.proportions, &perm);
    let entropy = normalized_entropy(&membership)?;

    let m = &res.metrics;
    let mut metrics = Table::new(["metric", "value"]);
    metrics.push(vec!["accuracy".into(), fmt_num(m.accuracy)]);
    for (c, r) in m.recall.iter().enumerate() {
        metrics.push(vec![format!("recall_{}", c + 1), r.map(fmt_num).unwrap_or_default()]);
    }
    for (c, p) in m.precision.iter().enumerate() {
        metrics.push(vec![format!("precision_{}", c + 1), p.map(fmt_num).unwrap_or_default()]);
    }
    metrics.push(vec!["entropy".into(), fmt_num(entropy)]);
    metrics.write(&out.join("metrics.csv"))?;

    let mut rec = Table::new(["parameter", "truth", "estimate", "error"]);
    let mut row = |name: String, truth: f64, est: f64| rec.push(vec![name, fmt_num(truth), fmt_num(est), fmt_num(est - truth)]);
    for c in 0..k {
        row(format!("pi_{}", c + 1), doc.scenario.proportions[c], proportions[c]);
    }
    let names: Vec<String> = ["tau".to_string(), "xi".to_string()].into_iter().chain(est.features.iter().map(|f| format!("w_{f}"))).collect();
    for (j, n) in names.iter().enumerate() {
        for c in 0..k {
            row(format!("{n}_{}", c + 1), true_table[(c, j)], res.estimated_params[(c, j)]);
        }
    }
    rec.write(&out.join("recovery.csv"))?;
    confusion_table(&m.confusion).write(&out.join("confusion.csv"))?;

    let model_path = pred_dir.join("model.json");
    if model_path.exists() {
        let model = read_model(&model_path)?;
        trajectory_curves(&model.population, &est, 121)?.write(&out.join("curves.csv"))?;
    }
    println!("accuracy {:.3}, normalized entropy {:.3}", m.accuracy, entropy);
    Ok(())
}

fn write_study(summaries: &[MethodSummary], outcomes: &[crate::study::ReplicateOutcome], out: &Path) -> CliResult<()> {
    let mut t2 = Table::new(["method", "metric", "mean", "lower", "upper"]);
    let mut rec = Table::new(["method", "parameter", "truth", "estimate", "bias", "se", "rmse"]);
    for s in summaries {
        for m in &s.metrics {
            t2.push(vec![s.method.name().into(), m.metric.clone(), fmt_num(m.ci.mean), fmt_num(m.ci.lower), fmt_num(m.ci.upper)]);
        }
        for r in &s.recovery {
            let v = &r.recovery;
            rec.push(vec![s.method.name().into(), r.parameter.clone(), fmt_num(r.truth), fmt_num(v.estimate), fmt_num(v.bias), fmt_num(v.se), fmt_num(v.rmse)]);
        }
        confusion_table(&s.confusion).write(&out.join(format!("confusion_{}.csv", s.method.name())))?;
    }
    t2.write(&out.join("classification.csv"))?;
    rec.write(&out.join("recovery.csv"))?;
    let mut reps = Table::new(["replicate", "seed", "method", "accuracy", "entropy"]);
    for o in outcomes {
        for m in Method::ALL {
            let r = o.method(m);
            reps.push(vec![o.replicate.to_string(), o.seed.to_string(), m.name().into(), fmt_num(r.result.metrics.accuracy), fmt_num(r.entropy)]);
        }
    }
    reps.write(&out.join("replicates.csv"))
}

fn evaluate_study(study: &StudyConfig, out: &Path) -> CliResult<()> {
    let outcomes = run_study(study)?;
    let features = &study.scenario.features;
    let summaries = Method::ALL.iter().map(|&m| summarize(&outcomes, m, features)).collect::<CliResult<Vec<_>>>()?;
    write_study(&summaries, &outcomes, out)?;
    for s in &summaries {
        for m in &s.metrics {
            println!("{:8} {:12} {:.2} ({:.2}-{:.2})", s.method.name(), m.metric, m.ci.mean, m.ci.lower, m.ci.upper);
        }
    }
    Ok(())
}

pub struct SelectArgs {
    pub data: PathBuf,
    pub candidates: Vec<usize>,
    pub settings: FitSettings,
    pub workers: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectRow {
    pub n_clusters: usize,
    pub icl: Option<Icl>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectReport {
    pub chosen: usize,
    pub table: Vec<SelectRow>,
}

pub fn cmd_select(args: &SelectArgs) -> CliResult<SelectReport> {
    if args.candidates.is_empty() {
        return Err(CliError::Input("no candidate cluster counts".into()));
    }
    let data = read_dataset(&args.data)?;
    let table = crate::study::parallel_map(args.workers, args.candidates.len(), |j| {
        let k = args.candidates[j];
        Ok(match fit(&data, &args.settings.config(k)).and_then(|m| icl(&m, &data)) {
            Ok(v) => SelectRow { n_clusters: k, icl: Some(v), error: None },
            Err(e) => {
                log::warn!("fit with {k} clusters failed: {e}");
                SelectRow { n_clusters: k, icl: None, error: Some(e.to_string()) }
            }
        })
    })?;
    let values: Vec<(usize, f64)> = table.iter().filter_map(|r| r.icl.map(|i| (r.n_clusters, i.value))).collect();
    let chosen = argmin_icl(&values).ok_or_else(|| CliError::Numerical("every candidate fit failed".into()))?;
    let report = SelectReport { chosen, table };

    let mut t = Table::new(["n_clusters", "complete_loglik", "n_free_params", "entropy", "icl", "error"]);
    for r in &report.table {
        match &r.icl {
            Some(i) => t.push(vec![r.n_clusters.to_string(), fmt_num(i.complete_loglik), i.n_free_params.to_string(), fmt_num(i.entropy), fmt_num(i.value), String::new()]),
            None => t.push(vec![r.n_clusters.to_string(), String::new(), String::new(), String::new(), String::new(), r.error.clone().unwrap_or_default()]),
        }
    }
    t.write(&args.out.join("icl.csv"))?;
    write_json(&args.out.join("selection.json"), SELECTION_SCHEMA, &report)?;
    for r in &report.table {
        match &r.icl {
            Some(i) => println!("k = {}  ICL = {:.1}", r.n_clusters, i.value),
            None => println!("k = {}  failed", r.n_clusters),
        }
    }
    println!("selected k = {chosen}");
    Ok(report)
}


//! End-to-end benchmark: train detectors, flag anomalies, explain them with
//! every configured method, and score the explanations.

use std::collections::BTreeSet;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{
    error_reduction_curve, first_hit_rank, stability_index, ReplacementPolicy, ReplacementTable,
};
use crate::aenn::{flag_anomalies, train, LayerSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::explainers::{
    default_n_coalitions, explain, ranked_attributes, ExplanationRequest, Method, PayoffTarget,
};
use crate::seeding::derive_seed;
use crate::shap::BackgroundSet;
use crate::tabular::{encode, AnomalyLabel, RecordTable};

/// Attribute set scored via MRR against the anomalies it applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedSet {
    pub name: String,
    pub attributes: Vec<usize>,
    /// Restrict to anomalies whose perturbed attributes include this one;
    /// `None` applies the set to every explained anomaly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applies_to: Option<usize>,
}

/// What counts as a correct attribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelevanceSpec {
    pub sets: Vec<NamedSet>,
    /// Score each anomaly against its own perturbed attributes.
    pub perturbed_as_relevant: bool,
    /// Attributes carrying no signal; ranking one of these early is a
    /// defect, so their MRR is reported as `mrr_u`.
    pub uninformative: Vec<usize>,
}

impl Default for RelevanceSpec {
    fn default() -> Self {
        Self { sets: Vec::new(), perturbed_as_relevant: true, uninformative: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    /// One detector is trained per seed; the seed drives both the weight
    /// initialization and the epoch shuffling.
    pub model_seeds: Vec<u64>,
    /// How many flagged anomalies each detector explains.
    pub anomalies_per_run: usize,
    /// Explanations per anomaly and method, each with its own seed; at
    /// least 2 enables the stability metrics.
    pub explanation_repeats: usize,
    /// Cutoffs for the Hits@n and stability curves.
    pub n_grid: Vec<usize>,
    pub delta_quantile: f64,
    pub methods: Vec<Method>,
    pub master_seed: u64,
    /// Also measure how quickly replacing top-ranked attributes shrinks the
    /// reconstruction error.
    pub error_curves: bool,
    pub replacement_policy: ReplacementPolicy,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            model_seeds: vec![0],
            anomalies_per_run: 10,
            explanation_repeats: 3,
            n_grid: vec![1, 2, 3, 5, 8],
            delta_quantile: 0.99,
            methods: Method::ALL.to_vec(),
            master_seed: 0,
            error_curves: false,
            replacement_policy: ReplacementPolicy::ModeMedian,
        }
    }
}

/// A labelled table ready for benchmarking.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub name: String,
    pub table: RecordTable,
    /// Reserve a trailing indicator dimension per categorical attribute so
    /// perturbed out-of-vocabulary tokens stay encodable.
    pub reserve_unseen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecipe {
    pub layer: LayerSpec,
    pub train: TrainConfig,
}

/// Knobs shared by every explanation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSettings {
    /// Background rows per payoff evaluation.
    pub eta: usize,
    /// Coalition budget per game; `None` picks a default from the player
    /// count.
    pub n_coalitions: Option<usize>,
    pub top_attributes: Option<usize>,
    pub top_encodings: usize,
    /// Override the per-method payoff target; `None` keeps the default.
    pub loss_shap_target: Option<PayoffTarget>,
    pub a_shap_target: Option<PayoffTarget>,
    pub reshape_target: Option<PayoffTarget>,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            eta: 64,
            n_coalitions: None,
            top_attributes: None,
            top_encodings: 10,
            loss_shap_target: None,
            a_shap_target: None,
            reshape_target: None,
        }
    }
}

impl ExplainSettings {
    pub fn target_for(&self, method: Method) -> PayoffTarget {
        let chosen = match method {
            Method::Random => None,
            Method::LossShap => self.loss_shap_target,
            Method::AShap => self.a_shap_target,
            Method::Reshape => self.reshape_target,
        };
        chosen.unwrap_or_else(|| PayoffTarget::default_for(method))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; 0 when fewer than two samples.
    pub std: f64,
    pub n: usize,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
    pub rows: Vec<MetricRow>,
    pub curves: Vec<CurveSeries>,
    pub warnings: Vec<String>,
}

fn lower_is_better(metric: &str) -> bool {
    metric == "mrr_u" || metric.starts_with("stability") || metric.starts_with("error")
}

impl MetricReport {
    pub fn find(&self, method: &str, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric)
    }

    pub fn find_curve(&self, method: &str, metric: &str) -> Option<&CurveSeries> {
        self.curves.iter().find(|c| c.method == method && c.metric == metric)
    }

    pub fn merge(&mut self, other: MetricReport) {
        self.rows.extend(other.rows);
        self.curves.extend(other.curves);
        self.warnings.extend(other.warnings);
    }

    pub fn to_csv(&self, meta: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(m) = meta {
            s.push_str("# ");
            s.push_str(m);
            s.push('\n');
        }
        s.push_str("dataset,method,metric,mean,std,n\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.dataset, r.method, r.metric, r.mean, r.std, r.n
            ));
        }
        s
    }

    pub fn curves_to_csv(&self, meta: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(m) = meta {
            s.push_str("# ");
            s.push_str(m);
            s.push('\n');
        }
        s.push_str("dataset,method,metric,n,mean,std\n");
        for c in &self.curves {
            for p in &c.points {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c.dataset, c.method, c.metric, p.n, p.mean, p.std
                ));
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-metric method ordering, best first.
    pub fn ranking_text(&self) -> String {
        let mut keys: Vec<(&str, &str)> = Vec::new();
        for r in &self.rows {
            let k = (r.dataset.as_str(), r.metric.as_str());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut out = String::new();
        for (dataset, metric) in keys {
            let mut entries: Vec<(&str, f64)> = self
                .rows
                .iter()
                .filter(|r| r.dataset == dataset && r.metric == metric)
                .map(|r| (r.method.as_str(), r.mean))
                .collect();
            let lower = lower_is_better(metric);
            entries.sort_by(|a, b| {
                let ord = if lower { a.1.total_cmp(&b.1) } else { b.1.total_cmp(&a.1) };
                ord.then(a.0.cmp(b.0))
            });
            let sep = if lower { " < " } else { " > " };
            let tag = if lower { " [lower is better]" } else { "" };
            let body = entries
                .iter()
                .map(|(m, v)| format!("{m} ({v:.4})"))
                .collect::<Vec<_>>()
                .join(sep);
            out.push_str(&format!("{dataset} {metric}{tag}: {body}\n"));
        }
        if !self.warnings.is_empty() {
            out.push('\n');
            for w in &self.warnings {
                out.push_str(&format!("warning: {w}\n"));
            }
        }
        out
    }
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = if samples.len() < 2 {
        0.0
    } else {
        (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

fn metric_row(dataset: &str, method: &str, metric: &str, samples: Vec<f64>) -> MetricRow {
    let (mean, std) = mean_std(&samples);
    MetricRow {
        dataset: dataset.into(),
        method: method.into(),
        metric: metric.into(),
        mean,
        std,
        n: samples.len(),
        samples,
    }
}

fn curve_point(n: usize, samples: &[f64]) -> CurvePoint {
    let (mean, std) = mean_std(samples);
    CurvePoint { n, mean, std, n_samples: samples.len() }
}

fn check_label(text: &str, what: &str) -> Result<()> {
    if text.is_empty() {
        return Err(Error::Eval(format!("{what} must not be empty")));
    }
    if text.contains(',') || text.contains('\n') || text.contains('#') {
        return Err(Error::Eval(format!("{what} '{text}' holds a reserved character")));
    }
    Ok(())
}

fn check_attr_list(list: &[usize], t: usize, what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for &a in list {
        if a >= t {
            return Err(Error::Eval(format!("{what}: attribute {a} out of range (T={t})")));
        }
        if !seen.insert(a) {
            return Err(Error::Eval(format!("{what}: attribute {a} repeated")));
        }
    }
    Ok(())
}

fn validate_config(
    bundle: &DatasetBundle,
    cfg: &BenchmarkConfig,
    relevance: &RelevanceSpec,
    t: usize,
) -> Result<()> {
    check_label(&bundle.name, "dataset name")?;
    if cfg.model_seeds.is_empty() {
        return Err(Error::Eval("need at least one model seed".into()));
    }
    if cfg.model_seeds.iter().collect::<BTreeSet<_>>().len() != cfg.model_seeds.len() {
        return Err(Error::Eval("model seeds repeat".into()));
    }
    if cfg.anomalies_per_run == 0 {
        return Err(Error::Eval("anomalies_per_run must be positive".into()));
    }
    if cfg.explanation_repeats == 0 {
        return Err(Error::Eval("explanation_repeats must be positive".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Eval("no methods configured".into()));
    }
    if cfg.methods.iter().collect::<BTreeSet<_>>().len() != cfg.methods.len() {
        return Err(Error::Eval("methods repeat".into()));
    }
    if !(cfg.delta_quantile > 0.0 && cfg.delta_quantile < 1.0) {
        return Err(Error::Eval(format!("delta_quantile {} outside (0, 1)", cfg.delta_quantile)));
    }
    if cfg.n_grid.is_empty() {
        return Err(Error::Eval("n_grid must not be empty".into()));
    }
    for w in cfg.n_grid.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Eval("n_grid must increase strictly".into()));
        }
    }
    if cfg.n_grid[0] == 0 || *cfg.n_grid.last().unwrap() > t {
        return Err(Error::Eval(format!("n_grid entries outside [1, {t}]")));
    }
    for set in &relevance.sets {
        check_label(&set.name, "relevance set name")?;
        if set.attributes.is_empty() {
            return Err(Error::Eval(format!("relevance set '{}' is empty", set.name)));
        }
        check_attr_list(&set.attributes, t, &format!("relevance set '{}'", set.name))?;
        if let Some(a) = set.applies_to {
            if a >= t {
                return Err(Error::Eval(format!(
                    "relevance set '{}': applies_to {a} out of range",
                    set.name
                )));
            }
        }
    }
    check_attr_list(&relevance.uninformative, t, "uninformative attributes")?;
    Ok(())
}

struct RunData {
    /// Table row indices explained by this detector, highest score first.
    evaluated: Vec<usize>,
    /// `[method][anomaly][repeat]` attribute rankings.
    rankings: Vec<Vec<Vec<Vec<usize>>>>,
    /// `[method][anomaly][repeat]` error curves (empty when disabled).
    curves: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Runs the whole pipeline on one dataset and reports every metric the
/// configuration asks for.
pub fn run_benchmark(
    bundle: &DatasetBundle,
    recipe: &ModelRecipe,
    settings: &ExplainSettings,
    relevance: &RelevanceSpec,
    cfg: &BenchmarkConfig,
) -> Result<MetricReport> {
    bundle.table.validate()?;
    let (matrix, map) = encode(&bundle.table, bundle.reserve_unseen)?;
    let t = map.n_attributes();
    validate_config(bundle, cfg, relevance, t)?;
    if settings.eta == 0 {
        return Err(Error::Eval("eta must be positive".into()));
    }

    let table = &bundle.table;
    let none_rows = table.none_indices();
    if none_rows.is_empty() {
        return Err(Error::Eval("no unperturbed rows to train on".into()));
    }
    let injected = table.anomaly_indices();
    if injected.is_empty() {
        return Err(Error::Eval("no labelled anomalies to explain".into()));
    }
    let injected_set: BTreeSet<usize> = injected.iter().copied().collect();

    let mut warnings = Vec::new();
    let replacements = if cfg.error_curves {
        let max_candidates = match &cfg.replacement_policy {
            ReplacementPolicy::ModeMedian => 1,
            ReplacementPolicy::GreedyTopV { v } => *v,
        };
        Some(ReplacementTable::build(table, &map, max_candidates)?)
    } else {
        None
    };

    let train_matrix = matrix.select(Axis(0), &none_rows);
    let n_coalitions = settings.n_coalitions.unwrap_or_else(|| default_n_coalitions(t));

    let mut runs: Vec<RunData> = Vec::with_capacity(cfg.model_seeds.len());
    for (si, &model_seed) in cfg.model_seeds.iter().enumerate() {
        let mut tc = recipe.train.clone();
        tc.seed = model_seed;
        let outcome = train(train_matrix.view(), &recipe.layer, &tc)?;
        let params = outcome.params;

        let flags = flag_anomalies(&params, matrix.view(), cfg.delta_quantile)?;
        let target_count = cfg.anomalies_per_run.min(injected.len());
        let mut evaluated: Vec<usize> = flags
            .flagged
            .iter()
            .map(|&(i, _)| i)
            .filter(|i| injected_set.contains(i))
            .collect();
        if evaluated.len() < target_count {
            warnings.push(format!(
                "model seed {model_seed}: {} of {} labelled anomalies flagged at quantile {}; \
                 falling back to the highest-scoring labelled anomalies",
                evaluated.len(),
                injected.len(),
                cfg.delta_quantile
            ));
            evaluated = injected.clone();
            evaluated.sort_by(|&a, &b| {
                flags.scores[b].total_cmp(&flags.scores[a]).then(a.cmp(&b))
            });
        }
        evaluated.truncate(target_count);

        let background = BackgroundSet::sample(
            matrix.view(),
            &none_rows,
            settings.eta,
            derive_seed(cfg.master_seed, "background", si as u64),
        )?;

        let mut rankings = Vec::with_capacity(cfg.methods.len());
        let mut curves = Vec::with_capacity(cfg.methods.len());
        for &method in &cfg.methods {
            let mut m_rank = Vec::with_capacity(evaluated.len());
            let mut m_curve = Vec::with_capacity(evaluated.len());
            for &row in &evaluated {
                let mut reps_rank = Vec::with_capacity(cfg.explanation_repeats);
                let mut reps_curve = Vec::new();
                for rep in 0..cfg.explanation_repeats {
                    let run_tag = format!("explain/{si}/{}/{row}", method.name());
                    let seed = derive_seed(cfg.master_seed, &run_tag, rep as u64);
                    let mut req = ExplanationRequest::new(
                        method,
                        matrix.row(row),
                        &params,
                        &map,
                        &background,
                        seed,
                    );
                    req.top_attributes = settings.top_attributes;
                    req.top_encodings = settings.top_encodings.min(map.total_dims()).max(1);
                    req.n_coalitions = n_coalitions;
                    req.payoff_target = settings.target_for(method);
                    let explanation = explain(&req)?;
                    let ranking = ranked_attributes(&explanation);
                    if let Some(repl) = &replacements {
                        reps_curve.push(error_reduction_curve(
                            &params,
                            matrix.row(row),
                            &map,
                            &ranking,
                            repl,
                            &cfg.replacement_policy,
                            t,
                        )?);
                    }
                    reps_rank.push(ranking);
                }
                m_rank.push(reps_rank);
                m_curve.push(reps_curve);
            }
            rankings.push(m_rank);
            curves.push(m_curve);
        }
        runs.push(RunData { evaluated, rankings, curves });
    }

    if relevance.perturbed_as_relevant {
        let skipped = runs
            .iter()
            .flat_map(|r| &r.evaluated)
            .filter(|&&row| !matches!(&table.labels[row], AnomalyLabel::TypeA { .. }))
            .count();
        if skipped > 0 {
            warnings.push(format!(
                "{skipped} evaluated anomalies carry no perturbed-attribute ground truth; \
                 excluded from mrr/hits"
            ));
        }
    }

    let dataset = bundle.name.clone();
    let mut rows_out: Vec<MetricRow> = Vec::new();
    let mut curves_out: Vec<CurveSeries> = Vec::new();

    for (mi, &method) in cfg.methods.iter().enumerate() {
        let mname = method.name();

        if relevance.perturbed_as_relevant {
            let mut rr = Vec::new();
            let mut auc = Vec::new();
            let mut hit_ranks = Vec::new();
            for run in &runs {
                for (ai, &row) in run.evaluated.iter().enumerate() {
                    let relevant = match &table.labels[row] {
                        AnomalyLabel::TypeA { perturbed, .. } => perturbed,
                        _ => continue,
                    };
                    for ranking in &run.rankings[mi][ai] {
                        let r = first_hit_rank(ranking, relevant)?;
                        rr.push(1.0 / r as f64);
                        auc.push((t - r + 1) as f64);
                        hit_ranks.push(r);
                    }
                }
            }
            if !rr.is_empty() {
                rows_out.push(metric_row(&dataset, mname, "mrr", rr));
                rows_out.push(metric_row(&dataset, mname, "hits_auc", auc));
                let points = cfg
                    .n_grid
                    .iter()
                    .map(|&n| {
                        let samples: Vec<f64> = hit_ranks
                            .iter()
                            .map(|&r| if r <= n { 1.0 } else { 0.0 })
                            .collect();
                        curve_point(n, &samples)
                    })
                    .collect();
                curves_out.push(CurveSeries {
                    dataset: dataset.clone(),
                    method: mname.into(),
                    metric: "hits".into(),
                    points,
                });
            }
        }

        for set in &relevance.sets {
            let mut rr = Vec::new();
            for run in &runs {
                for (ai, &row) in run.evaluated.iter().enumerate() {
                    if let Some(anchor) = set.applies_to {
                        let applies = matches!(
                            &table.labels[row],
                            AnomalyLabel::TypeA { perturbed, .. } if perturbed.contains(&anchor)
                        );
                        if !applies {
                            continue;
                        }
                    }
                    for ranking in &run.rankings[mi][ai] {
                        rr.push(1.0 / first_hit_rank(ranking, &set.attributes)? as f64);
                    }
                }
            }
            if !rr.is_empty() {
                rows_out.push(metric_row(&dataset, mname, &format!("mrr:{}", set.name), rr));
            }
        }

        if !relevance.uninformative.is_empty() {
            let mut rr = Vec::new();
            for run in &runs {
                for (ai, _) in run.evaluated.iter().enumerate() {
                    for ranking in &run.rankings[mi][ai] {
                        rr.push(1.0 / first_hit_rank(ranking, &relevance.uninformative)? as f64);
                    }
                }
            }
            rows_out.push(metric_row(&dataset, mname, "mrr_u", rr));
        }

        if cfg.explanation_repeats >= 2 {
            let mut s1 = Vec::new();
            let mut per_n: Vec<Vec<f64>> = vec![Vec::new(); cfg.n_grid.len()];
            for run in &runs {
                for reps in &run.rankings[mi] {
                    s1.push(stability_index(reps, 1)?);
                    for (gi, &n) in cfg.n_grid.iter().enumerate() {
                        per_n[gi].push(stability_index(reps, n)?);
                    }
                }
            }
            rows_out.push(metric_row(&dataset, mname, "stability_s1", s1));
            let points = cfg
                .n_grid
                .iter()
                .zip(per_n.iter())
                .map(|(&n, samples)| curve_point(n, samples))
                .collect();
            curves_out.push(CurveSeries {
                dataset: dataset.clone(),
                method: mname.into(),
                metric: "stability".into(),
                points,
            });
        }

        if cfg.error_curves {
            let mut auc = Vec::new();
            let mut per_step: Vec<Vec<f64>> = vec![Vec::new(); t + 1];
            for run in &runs {
                for per_anomaly in &run.curves[mi] {
                    for curve in per_anomaly {
                        auc.push(curve[1..].iter().sum::<f64>() / t as f64);
                        for (n, &v) in curve.iter().enumerate() {
                            per_step[n].push(v);
                        }
                    }
                }
            }
            rows_out.push(metric_row(&dataset, mname, "error_auc", auc));
            let points = per_step
                .iter()
                .enumerate()
                .map(|(n, samples)| curve_point(n, samples))
                .collect();
            curves_out.push(CurveSeries {
                dataset: dataset.clone(),
                method: mname.into(),
                metric: "error_pct".into(),
                points,
            });
        }
    }

    Ok(MetricReport { meta: None, rows: rows_out, curves: curves_out, warnings })
}

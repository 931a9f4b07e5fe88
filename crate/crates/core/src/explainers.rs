//! Attribute-level anomaly explanations.
//!
//! Four methods produce a score per attribute, ranked descending:
//!
//! * `Random`: a seeded permutation, the no-information baseline.
//! * `LossShap`: one Shapley game whose payoff is the total reconstruction
//!   loss; scores are the signed attributions.
//! * `AShap`: one game per highest-loss encoded dimension; scores aggregate
//!   absolute attributions across those per-dimension games.
//! * `Reshape`: one game per highest-loss attribute with an
//!   attribute-slice payoff; scores aggregate absolute attributions.
//!
//! Each loss payoff either follows the masked composite row (the anomaly
//! score of the blended record) or stays pinned to the explained instance
//! (how well the composite reconstructs the original values). The first is
//! the default for `LossShap` and `Reshape`; the second for `AShap`, which
//! mirrors reconstruction-focused usage where dimensions the model never
//! learned barely move and the game goes flat.

use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aenn::{bce_term, reconstruct_report, NetworkParams};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use crate::shap::{sampled_shapley, Attribution, BackgroundSet, PayoffFn, PlayerGrouping};
use crate::tabular::EncodingMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Random,
    LossShap,
    AShap,
    Reshape,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::LossShap, Method::AShap, Method::Reshape];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Random => "Random",
            Method::LossShap => "LossSHAP",
            Method::AShap => "A-SHAP",
            Method::Reshape => "RESHAPE",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let squashed: String =
            text.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        match squashed.as_str() {
            "random" => Ok(Method::Random),
            "lossshap" => Ok(Method::LossShap),
            "ashap" => Ok(Method::AShap),
            "reshape" => Ok(Method::Reshape),
            _ => Err(Error::Explain(format!("unknown method '{text}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What the loss payoff measures on a composite row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffTarget {
    /// Loss of the composite row against its own reconstruction.
    Composite,
    /// Loss of the explained instance against the composite's
    /// reconstruction.
    Instance,
}

impl PayoffTarget {
    /// The documented default per method.
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::AShap => PayoffTarget::Instance,
            _ => PayoffTarget::Composite,
        }
    }
}

/// Everything needed to explain one row.
pub struct ExplanationRequest<'a> {
    pub method: Method,
    pub row: ArrayView1<'a, f64>,
    pub params: &'a NetworkParams,
    pub map: &'a EncodingMap,
    pub background: &'a BackgroundSet,
    pub seed: u64,
    /// How many highest-loss attributes get their own game (`Reshape`);
    /// `None` means all of them.
    pub top_attributes: Option<usize>,
    /// How many highest-loss dimensions get their own game (`AShap`).
    pub top_encodings: usize,
    pub n_coalitions: usize,
    pub payoff_target: PayoffTarget,
}

impl<'a> ExplanationRequest<'a> {
    pub fn new(
        method: Method,
        row: ArrayView1<'a, f64>,
        params: &'a NetworkParams,
        map: &'a EncodingMap,
        background: &'a BackgroundSet,
        seed: u64,
    ) -> Self {
        Self {
            method,
            row,
            params,
            map,
            background,
            seed,
            top_attributes: None,
            top_encodings: 10.min(map.total_dims()),
            n_coalitions: default_n_coalitions(map.n_attributes()),
            payoff_target: PayoffTarget::default_for(method),
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.map.total_dims();
        let t = self.map.n_attributes();
        if self.row.len() != d {
            return Err(Error::Explain(format!(
                "row has {} dims, encoding expects {d}",
                self.row.len()
            )));
        }
        if self.params.input_dims() != d {
            return Err(Error::Explain(format!(
                "network expects {} dims, encoding has {d}",
                self.params.input_dims()
            )));
        }
        if self.background.rows().ncols() != d {
            return Err(Error::Explain("background width does not match the encoding".into()));
        }
        if let Some(l) = self.top_attributes {
            if l == 0 || l > t {
                return Err(Error::Explain(format!("top_attributes {l} outside [1, {t}]")));
            }
        }
        if self.top_encodings == 0 || self.top_encodings > d {
            return Err(Error::Explain(format!(
                "top_encodings {} outside [1, {d}]",
                self.top_encodings
            )));
        }
        Ok(())
    }
}

/// All proper coalitions when they fit, otherwise a flat budget.
pub fn default_n_coalitions(n_players: usize) -> usize {
    const CAP: usize = 2048;
    if n_players >= 12 {
        CAP
    } else {
        ((1usize << n_players) - 2).min(CAP)
    }
}

/// What one attribution run was about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunSubject {
    /// The single total-loss game.
    TotalLoss,
    /// A per-dimension loss game.
    Dim { dim: usize },
    /// A per-attribute loss game.
    Attribute { attribute: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedRun {
    pub subject: RunSubject,
    pub attribution: Attribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttrScore {
    pub attribute: usize,
    pub phi: f64,
}

/// One explained anomaly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub method: Method,
    pub seed: u64,
    /// Ranking score per attribute, higher = more explanatory.
    pub scores: Vec<f64>,
    /// Net signed attribution per attribute; sign splits contributing from
    /// offsetting.
    pub signed_totals: Vec<f64>,
    /// Attributes with positive net attribution, strongest first.
    pub contributing: Vec<AttrScore>,
    /// Attributes with negative net attribution, most negative first.
    pub offsetting: Vec<AttrScore>,
    pub runs: Vec<ExplainedRun>,
}

/// Attribute indices sorted by score descending, ties by index.
pub fn ranked_attributes(explanation: &Explanation) -> Vec<usize> {
    let mut order: Vec<usize> = (0..explanation.scores.len()).collect();
    order.sort_by(|&a, &b| {
        explanation.scores[b].total_cmp(&explanation.scores[a]).then(a.cmp(&b))
    });
    order
}

fn partition_by_sign(signed: &[f64]) -> (Vec<AttrScore>, Vec<AttrScore>) {
    let mut contributing: Vec<AttrScore> = signed
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(attribute, &phi)| AttrScore { attribute, phi })
        .collect();
    contributing.sort_by(|a, b| b.phi.total_cmp(&a.phi).then(a.attribute.cmp(&b.attribute)));
    let mut offsetting: Vec<AttrScore> = signed
        .iter()
        .enumerate()
        .filter(|(_, &p)| p < 0.0)
        .map(|(attribute, &phi)| AttrScore { attribute, phi })
        .collect();
    offsetting.sort_by(|a, b| a.phi.total_cmp(&b.phi).then(a.attribute.cmp(&b.attribute)));
    (contributing, offsetting)
}

/// Reconstruction-loss payoff restricted to a dimension scope.
struct LossPayoff<'a> {
    params: &'a NetworkParams,
    dims: Vec<usize>,
    /// Fixed loss target; `None` measures each composite against itself.
    target: Option<Vec<f64>>,
}

/// Pins the loss target to the explained row, or leaves it tracking the
/// composite.
fn fixed_target(row: ArrayView1<'_, f64>, target: PayoffTarget) -> Option<Vec<f64>> {
    match target {
        PayoffTarget::Composite => None,
        PayoffTarget::Instance => Some(row.to_vec()),
    }
}

impl PayoffFn for LossPayoff<'_> {
    fn evaluate_batch(&self, rows: ArrayView2<'_, f64>) -> Vec<f64> {
        let recon = self.params.reconstruct_batch(rows);
        rows.axis_iter(Axis(0))
            .zip(recon.axis_iter(Axis(0)))
            .map(|(x, c)| {
                self.dims
                    .iter()
                    .map(|&d| {
                        let target = match &self.target {
                            Some(t) => t[d],
                            None => x[d],
                        };
                        bce_term(target, c[d])
                    })
                    .sum()
            })
            .collect()
    }
}

/// Dispatches on the request's method.
pub fn explain(req: &ExplanationRequest<'_>) -> Result<Explanation> {
    req.validate()?;
    match req.method {
        Method::Random => explain_random(req),
        Method::LossShap => explain_loss_shap(req),
        Method::AShap => explain_a_shap(req),
        Method::Reshape => explain_reshape(req),
    }
}

/// Seeded permutation baseline: the first-ranked attribute gets score `T`,
/// the last gets 1. Everything counts as contributing.
pub fn explain_random(req: &ExplanationRequest<'_>) -> Result<Explanation> {
    req.validate()?;
    let t = req.map.n_attributes();
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut perm: Vec<usize> = (0..t).collect();
    perm.shuffle(&mut rng);

    let mut scores = vec![0.0; t];
    for (position, &attribute) in perm.iter().enumerate() {
        scores[attribute] = (t - position) as f64;
    }
    let (contributing, offsetting) = partition_by_sign(&scores);
    Ok(Explanation {
        method: Method::Random,
        seed: req.seed,
        signed_totals: scores.clone(),
        scores,
        contributing,
        offsetting,
        runs: Vec::new(),
    })
}

/// One game over the total loss; scores are the signed attributions.
pub fn explain_loss_shap(req: &ExplanationRequest<'_>) -> Result<Explanation> {
    req.validate()?;
    let grouping = PlayerGrouping::from_attribute_slices(req.map);
    let payoff = LossPayoff {
        params: req.params,
        dims: (0..req.map.total_dims()).collect(),
        target: fixed_target(req.row, req.payoff_target),
    };
    let attribution = sampled_shapley(
        req.row,
        &grouping,
        &payoff,
        req.background,
        req.n_coalitions,
        derive_seed(req.seed, "total-loss-run", 0),
    )?;
    let scores = attribution.phi.clone();
    let (contributing, offsetting) = partition_by_sign(&scores);
    Ok(Explanation {
        method: Method::LossShap,
        seed: req.seed,
        signed_totals: scores.clone(),
        scores,
        contributing,
        offsetting,
        runs: vec![ExplainedRun { subject: RunSubject::TotalLoss, attribution }],
    })
}

/// Ranks encoded dimensions by their loss, runs one game per top dimension,
/// and aggregates |phi| per attribute across those games.
pub fn explain_a_shap(req: &ExplanationRequest<'_>) -> Result<Explanation> {
    req.validate()?;
    let report = reconstruct_report(req.params, req.row, req.map)?;
    let mut dims: Vec<usize> = (0..req.map.total_dims()).collect();
    dims.sort_by(|&a, &b| {
        report.per_dim_loss[b].total_cmp(&report.per_dim_loss[a]).then(a.cmp(&b))
    });
    dims.truncate(req.top_encodings);

    let grouping = PlayerGrouping::from_attribute_slices(req.map);
    let target = fixed_target(req.row, req.payoff_target);
    let t = req.map.n_attributes();
    let mut scores = vec![0.0; t];
    let mut signed_totals = vec![0.0; t];
    let mut runs = Vec::with_capacity(dims.len());
    for &dim in &dims {
        let payoff = LossPayoff { params: req.params, dims: vec![dim], target: target.clone() };
        let attribution = sampled_shapley(
            req.row,
            &grouping,
            &payoff,
            req.background,
            req.n_coalitions,
            derive_seed(req.seed, "dim-run", dim as u64),
        )?;
        for j in 0..t {
            scores[j] += attribution.phi[j].abs();
            signed_totals[j] += attribution.phi[j];
        }
        runs.push(ExplainedRun { subject: RunSubject::Dim { dim }, attribution });
    }
    let (contributing, offsetting) = partition_by_sign(&signed_totals);
    Ok(Explanation {
        method: Method::AShap,
        seed: req.seed,
        scores,
        signed_totals,
        contributing,
        offsetting,
        runs,
    })
}

/// Ranks attributes by their slice loss, runs one game per top attribute
/// with that slice's loss as payoff, and aggregates |phi| across games.
pub fn explain_reshape(req: &ExplanationRequest<'_>) -> Result<Explanation> {
    req.validate()?;
    let report = reconstruct_report(req.params, req.row, req.map)?;
    let t = req.map.n_attributes();
    let mut attrs: Vec<usize> = (0..t).collect();
    attrs.sort_by(|&a, &b| {
        report.per_attribute_loss[b].total_cmp(&report.per_attribute_loss[a]).then(a.cmp(&b))
    });
    attrs.truncate(req.top_attributes.unwrap_or(t));

    let grouping = PlayerGrouping::from_attribute_slices(req.map);
    let target = fixed_target(req.row, req.payoff_target);
    let mut scores = vec![0.0; t];
    let mut signed_totals = vec![0.0; t];
    let mut runs = Vec::with_capacity(attrs.len());
    for &attribute in &attrs {
        let payoff = LossPayoff {
            params: req.params,
            dims: req.map.slice(attribute).range().collect(),
            target: target.clone(),
        };
        let attribution = sampled_shapley(
            req.row,
            &grouping,
            &payoff,
            req.background,
            req.n_coalitions,
            derive_seed(req.seed, "attribute-run", attribute as u64),
        )?;
        for j in 0..t {
            scores[j] += attribution.phi[j].abs();
            signed_totals[j] += attribution.phi[j];
        }
        runs.push(ExplainedRun { subject: RunSubject::Attribute { attribute }, attribution });
    }
    let (contributing, offsetting) = partition_by_sign(&signed_totals);
    Ok(Explanation {
        method: Method::Reshape,
        seed: req.seed,
        scores,
        signed_totals,
        contributing,
        offsetting,
        runs,
    })
}

/// Fixed-format text rendering of one explanation.
pub fn render_text(
    explanation: &Explanation,
    attribute_names: &[String],
    anomaly_row: Option<usize>,
) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "method: {}", explanation.method.name());
    if let Some(row) = anomaly_row {
        let _ = writeln!(out, "anomaly_row: {row}");
    }
    let _ = writeln!(out, "seed: {}", explanation.seed);
    let _ = writeln!(out, "{:>4}  {:<24} {:>14}  {:>14}  direction", "rank", "attribute", "score", "net_phi");
    let name = |a: usize| {
        attribute_names.get(a).cloned().unwrap_or_else(|| format!("attr{a}"))
    };
    for (i, &a) in ranked_attributes(explanation).iter().enumerate() {
        let net = explanation.signed_totals[a];
        let direction = if net > 0.0 {
            "contributing"
        } else if net < 0.0 {
            "offsetting"
        } else {
            "neutral"
        };
        let _ = writeln!(
            out,
            "{:>4}  {:<24} {:>14.6}  {:>14.6}  {direction}",
            i + 1,
            name(a),
            explanation.scores[a],
            net
        );
    }
    out
}

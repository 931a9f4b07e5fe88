//! Synthetic data: a boolean benchmark generator, two anomaly injection
//! schemes, and an uninformative noise attribute.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{AnomalyLabel, AttributeSchema, RecordTable, Value};

/// Boolean combinator for dependent attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoolOp {
    And,
    Or,
    Xor,
    Not,
    Copy,
}

impl BoolOp {
    fn apply(self, inputs: &[bool]) -> bool {
        match self {
            BoolOp::And => inputs.iter().all(|&b| b),
            BoolOp::Or => inputs.iter().any(|&b| b),
            BoolOp::Xor => inputs.iter().fold(false, |acc, &b| acc ^ b),
            BoolOp::Not => !inputs[0],
            BoolOp::Copy => inputs[0],
        }
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            BoolOp::Not | BoolOp::Copy => n == 1,
            BoolOp::And | BoolOp::Or | BoolOp::Xor => n >= 2,
        }
    }
}

/// One dependent attribute: `output = op(inputs...)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependency {
    pub output: usize,
    pub op: BoolOp,
    pub inputs: Vec<usize>,
}

/// Recipe for the boolean benchmark table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BooleanSpec {
    pub n_independent: usize,
    pub dependencies: Vec<Dependency>,
    pub n_rows: usize,
    pub seed: u64,
}

impl BooleanSpec {
    /// Fifteen fair-coin attributes plus five derived ones.
    pub fn standard(n_rows: usize, seed: u64) -> Self {
        Self { n_independent: 15, dependencies: default_dependencies(), n_rows, seed }
    }

    pub fn n_attributes(&self) -> usize {
        self.n_independent + self.dependencies.len()
    }

    fn validate(&self) -> Result<()> {
        if self.n_independent == 0 {
            return Err(Error::Synthesis("need at least one independent attribute".into()));
        }
        if self.n_rows == 0 {
            return Err(Error::Synthesis("n_rows must be positive".into()));
        }
        let lo = self.n_independent;
        let hi = self.n_independent + self.dependencies.len();
        let mut outputs = BTreeSet::new();
        for dep in &self.dependencies {
            if !dep.op.arity_ok(dep.inputs.len()) {
                return Err(Error::Synthesis(format!(
                    "{:?} cannot take {} inputs",
                    dep.op,
                    dep.inputs.len()
                )));
            }
            let mut seen = BTreeSet::new();
            for &i in &dep.inputs {
                if i >= self.n_independent {
                    return Err(Error::Synthesis(format!(
                        "dependency input {i} is not an independent attribute (< {})",
                        self.n_independent
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Synthesis(format!("dependency input {i} repeated")));
                }
            }
            if dep.output < lo || dep.output >= hi {
                return Err(Error::Synthesis(format!(
                    "dependency output {} outside dependent block [{lo}, {hi})",
                    dep.output
                )));
            }
            if !outputs.insert(dep.output) {
                return Err(Error::Synthesis(format!("dependency output {} repeated", dep.output)));
            }
        }
        Ok(())
    }
}

/// The five stock dependencies (0-indexed attributes, names are 1-indexed):
/// a16 = NOT(a8), a17 = AND(a2, a3), a18 = OR(a4, a5), a19 = XOR(a6, a7),
/// a20 = COPY(a9).
pub fn default_dependencies() -> Vec<Dependency> {
    vec![
        Dependency { output: 15, op: BoolOp::Not, inputs: vec![7] },
        Dependency { output: 16, op: BoolOp::And, inputs: vec![1, 2] },
        Dependency { output: 17, op: BoolOp::Or, inputs: vec![3, 4] },
        Dependency { output: 18, op: BoolOp::Xor, inputs: vec![5, 6] },
        Dependency { output: 19, op: BoolOp::Copy, inputs: vec![8] },
    ]
}

/// Generates the boolean table: independents are fair coins, dependents are
/// computed from them. Attributes are named `a1..aT` and modelled as
/// unit-interval numericals so a flip is representable within the domain.
pub fn generate_boolean(spec: &BooleanSpec) -> Result<RecordTable> {
    spec.validate()?;
    let t = spec.n_attributes();
    let mut schema = Vec::with_capacity(t);
    for j in 0..t {
        schema.push(AttributeSchema::numerical(format!("a{}", j + 1), 0.0, 1.0)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.n_rows);
    for _ in 0..spec.n_rows {
        let mut bits = vec![false; t];
        for b in bits.iter_mut().take(spec.n_independent) {
            *b = rng.random::<bool>();
        }
        for dep in &spec.dependencies {
            let inputs: Vec<bool> = dep.inputs.iter().map(|&i| bits[i]).collect();
            bits[dep.output] = dep.op.apply(&inputs);
        }
        rows.push(bits.into_iter().map(|b| Value::Number(if b { 1.0 } else { 0.0 })).collect());
    }

    let labels = vec![AnomalyLabel::None; rows.len()];
    let table = RecordTable { schema, rows, labels };
    table.validate()?;
    Ok(table)
}

/// Which injection scheme a plan drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyClass {
    TypeA,
    TypeB,
}

/// Parameters for one injection pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub class: AnomalyClass,
    /// Attributes perturbed per anomaly (type A) or recorded on the label
    /// (type B, where it mirrors `min_hamming`).
    pub k: usize,
    pub count: usize,
    pub seed: u64,
    /// Type A: draw perturbed attributes from this set instead of all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<usize>>,
    /// Type B: per-attribute pool size of most frequent values.
    #[serde(default = "default_top_n_pool")]
    pub top_n_pool: usize,
    /// Type B: minimum Hamming distance to every unperturbed row.
    #[serde(default = "default_min_hamming")]
    pub min_hamming: usize,
    /// Type B: candidate draws before giving up.
    #[serde(default = "default_retry_budget")]
    pub retry_budget: usize,
}

fn default_top_n_pool() -> usize {
    3
}
fn default_min_hamming() -> usize {
    2
}
fn default_retry_budget() -> usize {
    10_000
}

impl InjectionPlan {
    pub fn type_a(k: usize, count: usize, seed: u64) -> Self {
        Self {
            class: AnomalyClass::TypeA,
            k,
            count,
            seed,
            targets: None,
            top_n_pool: default_top_n_pool(),
            min_hamming: default_min_hamming(),
            retry_budget: default_retry_budget(),
        }
    }

    pub fn type_b(count: usize, min_hamming: usize, seed: u64) -> Self {
        Self {
            class: AnomalyClass::TypeB,
            k: min_hamming,
            count,
            seed,
            targets: None,
            top_n_pool: default_top_n_pool(),
            min_hamming,
            retry_budget: default_retry_budget(),
        }
    }
}

/// Per-attribute view of the values observed on unperturbed rows.
enum ColumnProfile {
    Tokens(BTreeSet<String>),
    /// Observed numeric range plus whether the column only holds 0/1.
    Numbers { min: f64, max: f64, binary: bool },
}

fn profile_columns(table: &RecordTable, none_rows: &[usize]) -> Result<Vec<ColumnProfile>> {
    let mut out = Vec::with_capacity(table.n_attributes());
    for j in 0..table.n_attributes() {
        match table.schema[j].kind() {
            crate::tabular::AttrKind::Categorical => {
                let mut set = BTreeSet::new();
                for &i in none_rows {
                    match &table.rows[i][j] {
                        Value::Token(t) => {
                            set.insert(t.clone());
                        }
                        Value::Number(_) => {
                            return Err(Error::Synthesis(format!(
                                "row {i}, attribute '{}': number in a categorical column",
                                table.schema[j].name
                            )))
                        }
                    }
                }
                out.push(ColumnProfile::Tokens(set));
            }
            crate::tabular::AttrKind::Numerical => {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                let mut binary = true;
                for &i in none_rows {
                    match &table.rows[i][j] {
                        Value::Number(x) => {
                            min = min.min(*x);
                            max = max.max(*x);
                            if *x != 0.0 && *x != 1.0 {
                                binary = false;
                            }
                        }
                        Value::Token(_) => {
                            return Err(Error::Synthesis(format!(
                                "row {i}, attribute '{}': token in a numerical column",
                                table.schema[j].name
                            )))
                        }
                    }
                }
                out.push(ColumnProfile::Numbers { min, max, binary });
            }
        }
    }
    Ok(out)
}

/// Replaces `k` attribute values in `count` unperturbed rows with values that
/// never occur in the original columns: fresh tokens for categoricals,
/// out-of-range numbers for numericals, and a flip for 0/1 columns (where a
/// flip is the only representable "wrong" value and lands as a dependency
/// violation on derived attributes).
///
/// Perturbed rows are relabelled in place; no rows are added or removed.
pub fn inject_type_a(table: &RecordTable, plan: &InjectionPlan) -> Result<RecordTable> {
    if plan.class != AnomalyClass::TypeA {
        return Err(Error::Synthesis("plan class is not type A".into()));
    }
    let t = table.n_attributes();
    if plan.k == 0 || plan.k > t {
        return Err(Error::Synthesis(format!("k={} outside [1, {t}]", plan.k)));
    }
    if plan.count == 0 {
        return Err(Error::Synthesis("count must be positive".into()));
    }
    if let Some(targets) = &plan.targets {
        let mut seen = BTreeSet::new();
        for &a in targets {
            if a >= t {
                return Err(Error::Synthesis(format!("target attribute {a} out of range")));
            }
            if !seen.insert(a) {
                return Err(Error::Synthesis(format!("target attribute {a} repeated")));
            }
        }
        if plan.k > targets.len() {
            return Err(Error::Synthesis(format!(
                "k={} exceeds the {} target attributes",
                plan.k,
                targets.len()
            )));
        }
    }

    let none_rows = table.none_indices();
    if plan.count > none_rows.len() {
        return Err(Error::Synthesis(format!(
            "cannot perturb {} rows, only {} unperturbed rows available",
            plan.count,
            none_rows.len()
        )));
    }

    let profiles = profile_columns(table, &none_rows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);

    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, none_rows.len(), plan.count)
        .iter()
        .map(|p| none_rows[p])
        .collect();
    chosen.sort_unstable();

    let mut out = table.clone();
    let mut fresh_counter = vec![0usize; t];
    for &row in &chosen {
        let mut attrs: Vec<usize> = match &plan.targets {
            Some(targets) if plan.k == targets.len() => targets.clone(),
            Some(targets) => rand::seq::index::sample(&mut rng, targets.len(), plan.k)
                .iter()
                .map(|p| targets[p])
                .collect(),
            None => rand::seq::index::sample(&mut rng, t, plan.k).iter().collect(),
        };
        attrs.sort_unstable();

        for &j in &attrs {
            let new_val = match &profiles[j] {
                ColumnProfile::Tokens(seen) => {
                    let tok = loop {
                        let cand = format!("unseen{}", fresh_counter[j]);
                        fresh_counter[j] += 1;
                        if !seen.contains(&cand) {
                            break cand;
                        }
                    };
                    Value::Token(tok)
                }
                ColumnProfile::Numbers { binary: true, .. } => {
                    let x = out.rows[row][j].as_number().unwrap_or(0.0);
                    Value::Number(1.0 - x)
                }
                ColumnProfile::Numbers { min, max, .. } => {
                    let span = if max > min { max - min } else { 1.0 };
                    Value::Number(max + span)
                }
            };
            out.rows[row][j] = new_val;
        }
        out.labels[row] = AnomalyLabel::TypeA { k: plan.k, perturbed: attrs };
    }
    Ok(out)
}

/// Appends `count` synthesized rows built from each attribute's most frequent
/// values, accepting only candidates at Hamming distance >= `min_hamming`
/// from every unperturbed row. Rejection sampling up to `retry_budget` draws
/// per row.
pub fn inject_type_b(table: &RecordTable, plan: &InjectionPlan) -> Result<RecordTable> {
    if plan.class != AnomalyClass::TypeB {
        return Err(Error::Synthesis("plan class is not type B".into()));
    }
    let t = table.n_attributes();
    if plan.count == 0 {
        return Err(Error::Synthesis("count must be positive".into()));
    }
    if plan.min_hamming == 0 || plan.min_hamming > t {
        return Err(Error::Synthesis(format!(
            "min_hamming={} outside [1, {t}]",
            plan.min_hamming
        )));
    }
    if plan.top_n_pool < 2 {
        return Err(Error::Synthesis("top_n_pool must be at least 2".into()));
    }

    let none_rows = table.none_indices();
    if none_rows.is_empty() {
        return Err(Error::Synthesis("no unperturbed rows to synthesize from".into()));
    }

    // Most frequent values per attribute; ties broken by value so pools do
    // not depend on row order.
    let mut pools: Vec<Vec<Value>> = Vec::with_capacity(t);
    for j in 0..t {
        let mut counts: BTreeMap<String, (usize, Value)> = BTreeMap::new();
        for &i in &none_rows {
            let v = &table.rows[i][j];
            let key = match v {
                Value::Token(tok) => format!("t:{tok}"),
                Value::Number(x) => format!("n:{}", SortableF64(*x)),
            };
            counts.entry(key).or_insert((0, v.clone())).0 += 1;
        }
        let mut entries: Vec<(usize, String, Value)> =
            counts.into_iter().map(|(k, (c, v))| (c, k, v)).collect();
        entries.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        if entries.len() < 2 {
            return Err(Error::Synthesis(format!(
                "attribute '{}' holds a single distinct value; cannot pool alternatives",
                table.schema[j].name
            )));
        }
        pools.push(entries.into_iter().take(plan.top_n_pool).map(|(_, _, v)| v).collect());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out = table.clone();
    for made in 0..plan.count {
        let mut accepted = None;
        for _attempt in 0..plan.retry_budget {
            let candidate: Vec<Value> = pools
                .iter()
                .map(|pool| pool[rng.random_range(0..pool.len())].clone())
                .collect();
            let ok = none_rows.iter().all(|&i| {
                let mut dist = 0;
                for j in 0..t {
                    if table.rows[i][j] != candidate[j] {
                        dist += 1;
                        if dist >= plan.min_hamming {
                            return true;
                        }
                    }
                }
                false
            });
            if ok {
                accepted = Some(candidate);
                break;
            }
        }
        match accepted {
            Some(row) => {
                out.rows.push(row);
                out.labels.push(AnomalyLabel::TypeB { k: plan.k });
            }
            None => {
                return Err(Error::Synthesis(format!(
                    "type-B retry budget ({}) exhausted after {made} of {} rows",
                    plan.retry_budget, plan.count
                )))
            }
        }
    }
    Ok(out)
}

/// Fixed-width key so numeric values can index a BTreeMap deterministically.
struct SortableF64(f64);

impl std::fmt::Display for SortableF64 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bits = self.0.to_bits();
        // flip so the integer order of keys matches numeric order
        let key = if self.0 >= 0.0 { bits ^ (1 << 63) } else { !bits };
        write!(f, "{key:020}")
    }
}

/// Appends a categorical attribute named `noise` whose values are drawn
/// i.i.d. uniformly from `cardinality` tokens, independent of everything
/// else. Token names are zero-padded so the vocabulary sorts numerically.
pub fn add_noise_attribute(table: &RecordTable, cardinality: usize, seed: u64) -> Result<RecordTable> {
    if cardinality < 2 {
        return Err(Error::Synthesis("noise cardinality must be at least 2".into()));
    }
    if table.schema.iter().any(|a| a.name == "noise") {
        return Err(Error::Synthesis("attribute name 'noise' is already taken".into()));
    }
    let width = (cardinality - 1).to_string().len();
    let tokens: Vec<String> = (0..cardinality).map(|i| format!("u{i:0width$}")).collect();

    let mut out = table.clone();
    out.schema.push(AttributeSchema::categorical("noise", tokens.clone())?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in &mut out.rows {
        row.push(Value::Token(tokens[rng.random_range(0..cardinality)].clone()));
    }
    Ok(out)
}

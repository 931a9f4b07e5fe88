//! The JSON run configuration: one document drives every command.
//!
//! Each section that draws randomness carries an optional seed; absent
//! seeds are derived from `master_seed` with a section-specific tag, so a
//! document without any explicit seed is still fully deterministic.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use reshape_core::aenn::{LayerSpec, TrainConfig};
use reshape_core::eval::{BenchmarkConfig, ExplainSettings, RelevanceSpec, ReplacementPolicy};
use reshape_core::explainers::Method;
use reshape_core::seeding::derive_seed;
use reshape_core::synthesis::{
    default_dependencies, AnomalyClass, BooleanSpec, Dependency, InjectionPlan,
};
use reshape_core::tabular::AttrKind;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Fallback seed for every section that does not pin its own.
    #[serde(default)]
    pub master_seed: u64,
    /// Default output directory; the `--out` flag wins over this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub dataset: DatasetSection,
    /// Applied in order; each pass appends its labelled rows.
    #[serde(default)]
    pub injections: Vec<InjectionSection>,
    /// Optional uninformative categorical attribute appended last.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSection>,
    /// Reserve a trailing indicator dimension per categorical attribute so
    /// out-of-vocabulary tokens stay encodable. Required whenever the
    /// injections introduce unseen tokens on categorical attributes.
    #[serde(default)]
    pub reserve_unseen: bool,
    pub model: ModelSection,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
}

/// Where the records come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSection {
    /// Synthetic boolean benchmark table.
    Boolean {
        n_rows: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default = "default_n_independent")]
        n_independent: usize,
        /// Derived attributes; absent means the five stock ones.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dependencies: Option<Vec<Dependency>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    /// Comma-separated file with a header row; one kind hint per column.
    Csv {
        path: PathBuf,
        hints: Vec<AttrKind>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

fn default_n_independent() -> usize {
    15
}

impl DatasetSection {
    /// Label used for report rows and file naming.
    pub fn name(&self) -> String {
        match self {
            DatasetSection::Boolean { name, .. } => {
                name.clone().unwrap_or_else(|| "boolean".into())
            }
            DatasetSection::Csv { path, name, .. } => name.clone().unwrap_or_else(|| {
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into())
            }),
        }
    }

    pub fn boolean_spec(&self, master_seed: u64) -> Option<BooleanSpec> {
        match self {
            DatasetSection::Boolean { n_rows, seed, n_independent, dependencies, .. } => {
                Some(BooleanSpec {
                    n_independent: *n_independent,
                    dependencies: dependencies.clone().unwrap_or_else(default_dependencies),
                    n_rows: *n_rows,
                    seed: seed.unwrap_or_else(|| derive_seed(master_seed, "dataset", 0)),
                })
            }
            DatasetSection::Csv { .. } => None,
        }
    }
}

/// One anomaly injection pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSection {
    #[serde(default = "default_class")]
    pub class: AnomalyClass,
    /// Attributes perturbed per anomaly (type A only).
    #[serde(default = "default_k")]
    pub k: usize,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Type A: restrict perturbed attributes to this set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<usize>>,
    /// Type B: per-attribute pool of most frequent values.
    #[serde(default = "default_top_n_pool")]
    pub top_n_pool: usize,
    /// Type B: minimum Hamming distance to every unperturbed row.
    #[serde(default = "default_min_hamming")]
    pub min_hamming: usize,
    /// Type B: candidate draws before giving up.
    #[serde(default = "default_retry_budget")]
    pub retry_budget: usize,
}

fn default_class() -> AnomalyClass {
    AnomalyClass::TypeA
}
fn default_k() -> usize {
    1
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

impl InjectionSection {
    pub fn to_plan(&self, master_seed: u64, index: u64) -> InjectionPlan {
        let seed = self.seed.unwrap_or_else(|| derive_seed(master_seed, "inject", index));
        let mut plan = match self.class {
            AnomalyClass::TypeA => InjectionPlan::type_a(self.k, self.count, seed),
            AnomalyClass::TypeB => InjectionPlan::type_b(self.count, self.min_hamming, seed),
        };
        plan.targets = self.targets.clone();
        plan.top_n_pool = self.top_n_pool;
        plan.retry_budget = self.retry_budget;
        plan
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Vocabulary size of the appended uniform categorical attribute.
    pub cardinality: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl NoiseSection {
    pub fn seed(&self, master_seed: u64) -> u64 {
        self.seed.unwrap_or_else(|| derive_seed(master_seed, "noise", 0))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Layer widths, input first; must be symmetric with an odd count, and
    /// the first width must equal the encoded dimension count.
    pub widths: Vec<usize>,
    #[serde(default = "default_leaky_alpha")]
    pub leaky_alpha: f64,
    #[serde(default)]
    pub train: TrainSection,
}

fn default_leaky_alpha() -> f64 {
    0.4
}

impl ModelSection {
    pub fn layer_spec(&self) -> Result<LayerSpec> {
        LayerSpec::new(self.widths.clone(), self.leaky_alpha)
            .map_err(|e| CliError::Config(format!("model: {e}")))
    }
}

/// Mirrors the trainer's knobs; the seed may be left to the master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            beta1: base.beta1,
            beta2: base.beta2,
            epsilon: base.epsilon,
            max_epochs: base.max_epochs,
            patience: base.patience,
            min_delta: base.min_delta,
            seed: None,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, master_seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            seed: self.seed.unwrap_or_else(|| derive_seed(master_seed, "train", 0)),
        }
    }
}

/// Explanation knobs shared by `explain` and `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// Background rows per payoff evaluation.
    pub eta: usize,
    /// Coalition budget per game; absent picks a default from the player
    /// count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_coalitions: Option<usize>,
    /// Per-attribute games to run; absent means one per attribute.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_attributes: Option<usize>,
    /// Per-dimension games for the encoding-level method.
    pub top_encodings: usize,
    /// Method names; case and punctuation are ignored when matching.
    pub methods: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ExplainSection {
    fn default() -> Self {
        let base = ExplainSettings::default();
        Self {
            eta: base.eta,
            n_coalitions: base.n_coalitions,
            top_attributes: base.top_attributes,
            top_encodings: base.top_encodings,
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            seed: None,
        }
    }
}

impl ExplainSection {
    pub fn methods(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(CliError::Config("explain.methods: at least one method".into()));
        }
        let mut out = Vec::with_capacity(self.methods.len());
        for name in &self.methods {
            let m = Method::parse(name)
                .map_err(|_| CliError::Config(format!("explain.methods: unknown method '{name}'")))?;
            if out.contains(&m) {
                return Err(CliError::Config(format!("explain.methods: '{name}' listed twice")));
            }
            out.push(m);
        }
        Ok(out)
    }

    pub fn seed(&self, master_seed: u64) -> u64 {
        self.seed.unwrap_or_else(|| derive_seed(master_seed, "explain", 0))
    }

    pub fn to_settings(&self) -> ExplainSettings {
        ExplainSettings {
            eta: self.eta,
            n_coalitions: self.n_coalitions,
            top_attributes: self.top_attributes,
            top_encodings: self.top_encodings,
            ..ExplainSettings::default()
        }
    }
}

/// Benchmark knobs for `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    /// One detector per seed; absent derives a single seed from the master.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_seeds: Option<Vec<u64>>,
    pub anomalies_per_run: usize,
    pub explanation_repeats: usize,
    pub n_grid: Vec<usize>,
    pub delta_quantile: f64,
    pub error_curves: bool,
    pub replacement_policy: ReplacementPolicy,
    pub relevance: RelevanceSpec,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let base = BenchmarkConfig::default();
        Self {
            model_seeds: None,
            anomalies_per_run: base.anomalies_per_run,
            explanation_repeats: base.explanation_repeats,
            n_grid: base.n_grid,
            delta_quantile: base.delta_quantile,
            error_curves: base.error_curves,
            replacement_policy: base.replacement_policy,
            relevance: RelevanceSpec::default(),
        }
    }
}

impl BenchmarkSection {
    pub fn to_benchmark_config(&self, master_seed: u64, methods: Vec<Method>) -> BenchmarkConfig {
        BenchmarkConfig {
            model_seeds: self
                .model_seeds
                .clone()
                .unwrap_or_else(|| vec![derive_seed(master_seed, "model", 0)]),
            anomalies_per_run: self.anomalies_per_run,
            explanation_repeats: self.explanation_repeats,
            n_grid: self.n_grid.clone(),
            delta_quantile: self.delta_quantile,
            methods,
            master_seed,
            error_curves: self.error_curves,
            replacement_policy: self.replacement_policy.clone(),
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSection::Boolean { n_rows, n_independent, .. } => {
                if *n_rows == 0 {
                    return Err(CliError::Config("dataset.n_rows: must be positive".into()));
                }
                if *n_independent == 0 {
                    return Err(CliError::Config(
                        "dataset.n_independent: must be positive".into(),
                    ));
                }
            }
            DatasetSection::Csv { hints, .. } => {
                if hints.is_empty() {
                    return Err(CliError::Config(
                        "dataset.hints: one column kind per CSV column".into(),
                    ));
                }
            }
        }
        for (i, inj) in self.injections.iter().enumerate() {
            if inj.count == 0 {
                return Err(CliError::Config(format!(
                    "injections[{i}].count: must be positive"
                )));
            }
        }
        if let Some(noise) = &self.noise {
            if noise.cardinality < 2 {
                return Err(CliError::Config("noise.cardinality: need at least 2 tokens".into()));
            }
        }
        self.model.layer_spec()?;
        self.explain.methods()?;
        if self.explain.eta == 0 {
            return Err(CliError::Config("explain.eta: must be positive".into()));
        }
        if self.explain.top_encodings == 0 {
            return Err(CliError::Config("explain.top_encodings: must be positive".into()));
        }
        let b = &self.benchmark;
        if !(b.delta_quantile > 0.0 && b.delta_quantile < 1.0) {
            return Err(CliError::Config(
                "benchmark.delta_quantile: must lie strictly between 0 and 1".into(),
            ));
        }
        if b.anomalies_per_run == 0 {
            return Err(CliError::Config("benchmark.anomalies_per_run: must be positive".into()));
        }
        if b.explanation_repeats == 0 {
            return Err(CliError::Config(
                "benchmark.explanation_repeats: must be positive".into(),
            ));
        }
        if b.n_grid.is_empty() {
            return Err(CliError::Config("benchmark.n_grid: need at least one cutoff".into()));
        }
        if let Some(seeds) = &b.model_seeds {
            if seeds.is_empty() {
                return Err(CliError::Config(
                    "benchmark.model_seeds: need at least one seed".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Reads, parses, and validates a config file. The returned string is the
/// fingerprint of the raw bytes, embedded in every output for provenance.
pub fn load(path: &Path) -> Result<(RunConfig, String)> {
    let raw = fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_slice(&raw);
    let cfg: RunConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Config(format!("{}: at {}: {}", path.display(), e.path(), e.inner())))?;
    cfg.validate()?;
    Ok((cfg, fingerprint(&raw)))
}

/// FNV-1a 64-bit hash of the raw document, as 16 hex digits. Collision
/// resistance is irrelevant here; the hash only ties outputs back to the
/// exact config bytes that produced them.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    format!("{h:016x}")
}

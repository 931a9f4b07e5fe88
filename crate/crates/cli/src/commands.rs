//! The five commands. Each one claims the output directory, does its work
//! through the library crate, and writes artifacts that embed the config
//! fingerprint and master seed, so any file can be traced to the exact
//! document that produced it.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use reshape_core::aenn::{load_model, save_model, train as train_network};
use reshape_core::eval::{run_benchmark, DatasetBundle, MetricReport, ModelRecipe};
use reshape_core::explainers::{
    explain as run_explanation, ranked_attributes, Explanation, ExplanationRequest, Method,
};
use reshape_core::seeding::derive_seed;
use reshape_core::shap::BackgroundSet;
use reshape_core::synthesis::{
    add_noise_attribute, generate_boolean, inject_type_a, inject_type_b, AnomalyClass,
};
use reshape_core::tabular::{
    encode, load_csv, AnomalyLabel, AttrKind, AttributeSchema, RecordTable, Value,
};

use crate::config::{DatasetSection, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{self, DirLock};

/// Everything a command needs: the parsed config, the fingerprint of its
/// raw bytes, the resolved output directory, and the effective master seed
/// (the `--seed` flag may have overridden the document's).
pub struct Ctx {
    pub config: RunConfig,
    pub fingerprint: String,
    pub out_dir: PathBuf,
    pub master_seed: u64,
}

impl Ctx {
    fn meta_line(&self) -> String {
        output::meta_line(&self.fingerprint, self.master_seed)
    }

    fn meta_value(&self) -> serde_json::Value {
        output::meta_value(&self.fingerprint, self.master_seed)
    }
}

/// Materializes the configured table: source dataset, then each injection
/// pass in order, then the optional noise attribute.
fn build_table(ctx: &Ctx) -> Result<RecordTable> {
    let cfg = &ctx.config;
    let mut table = match &cfg.dataset {
        DatasetSection::Boolean { .. } => {
            let spec = cfg.dataset.boolean_spec(ctx.master_seed).expect("boolean section");
            generate_boolean(&spec)?
        }
        DatasetSection::Csv { path, hints, .. } => load_csv(path, hints, b',')?,
    };
    for (i, section) in cfg.injections.iter().enumerate() {
        let plan = section.to_plan(ctx.master_seed, i as u64);
        table = match plan.class {
            AnomalyClass::TypeA => inject_type_a(&table, &plan)?,
            AnomalyClass::TypeB => inject_type_b(&table, &plan)?,
        };
    }
    if let Some(noise) = &cfg.noise {
        table = add_noise_attribute(&table, noise.cardinality, noise.seed(ctx.master_seed))?;
    }
    Ok(table)
}

#[derive(Serialize, Deserialize)]
struct LabelsFile {
    meta: serde_json::Value,
    labels: Vec<AnomalyLabel>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    meta: serde_json::Value,
    attributes: Vec<AttributeSchema>,
}

pub fn gen_data(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let table = build_table(ctx)?;
    table.validate()?;

    let mut data = format!("# {}\n", ctx.meta_line()).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut data);
        w.write_record(table.schema.iter().map(|a| a.name.as_str()))?;
        for row in &table.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Data(format!("data.csv: {e}")))?;
    }
    let data = String::from_utf8(data).expect("csv output is utf-8");
    output::write_text(&ctx.out_dir.join("data.csv"), &data)?;

    let meta = ctx.meta_value();
    output::write_json(
        &ctx.out_dir.join("labels.json"),
        &LabelsFile { meta: meta.clone(), labels: table.labels.clone() },
    )?;
    output::write_json(
        &ctx.out_dir.join("schema.json"),
        &SchemaFile { meta, attributes: table.schema.clone() },
    )?;

    println!(
        "wrote {} rows x {} attributes ({} labelled anomalies) to {}",
        table.rows.len(),
        table.n_attributes(),
        table.anomaly_indices().len(),
        ctx.out_dir.display()
    );
    Ok(())
}

/// Rebuilds the table from the three dataset files. The schema comes from
/// schema.json rather than being re-derived from the CSV, so injected
/// out-of-domain values do not widen any attribute's domain.
fn load_table_files(ctx: &Ctx) -> Result<RecordTable> {
    let dir = &ctx.out_dir;
    let schema_path = dir.join("schema.json");
    if !schema_path.exists() {
        return Err(CliError::Data(format!(
            "missing {}: run gen-data first",
            schema_path.display()
        )));
    }
    let schema: SchemaFile = output::read_json(&schema_path)?;
    let labels: LabelsFile = output::read_json(&dir.join("labels.json"))?;
    let rows = read_data_csv(&dir.join("data.csv"), &schema.attributes)?;
    let table = RecordTable { schema: schema.attributes, rows, labels: labels.labels };
    table.validate()?;
    Ok(table)
}

fn read_data_csv(path: &Path, schema: &[AttributeSchema]) -> Result<Vec<Vec<Value>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::Data(e.to_string()))?.clone();
    if headers.len() != schema.len() {
        return Err(CliError::Data(format!(
            "{}: {} columns, schema has {} attributes",
            path.display(),
            headers.len(),
            schema.len()
        )));
    }
    for (name, attr) in headers.iter().zip(schema) {
        if name != attr.name {
            return Err(CliError::Data(format!(
                "{}: column '{name}' does not match schema attribute '{}'",
                path.display(),
                attr.name
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != schema.len() {
            return Err(CliError::Data(format!(
                "{}: row {i} has {} cells, expected {}",
                path.display(),
                record.len(),
                schema.len()
            )));
        }
        let mut row = Vec::with_capacity(schema.len());
        for (cell, attr) in record.iter().zip(schema) {
            row.push(match attr.kind() {
                AttrKind::Categorical => Value::Token(cell.to_string()),
                AttrKind::Numerical => Value::Number(cell.parse::<f64>().map_err(|_| {
                    CliError::Data(format!(
                        "{}: row {i}, attribute '{}': '{cell}' is not a number",
                        path.display(),
                        attr.name
                    ))
                })?),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

fn check_widths(cfg: &RunConfig, encoded_dims: usize) -> Result<()> {
    let first = cfg.model.widths.first().copied().unwrap_or(0);
    if first != encoded_dims {
        return Err(CliError::Config(format!(
            "model.widths[0] is {first}, but the dataset encodes to {encoded_dims} dimensions"
        )));
    }
    Ok(())
}

/// A pinned coalition budget must clear the sampling floor for games with
/// one player per attribute; surfacing that here turns a mid-run failure
/// into an upfront config error naming both numbers.
fn check_budget(cfg: &RunConfig, n_attributes: usize) -> Result<()> {
    let Some(budget) = cfg.explain.n_coalitions else { return Ok(()) };
    let proper = if n_attributes >= usize::BITS as usize - 1 {
        usize::MAX
    } else {
        (1usize << n_attributes) - 2
    };
    let floor = (2 * n_attributes).min(proper);
    if budget < floor {
        return Err(CliError::Config(format!(
            "explain.n_coalitions is {budget}, but {n_attributes} attributes need at least {floor}"
        )));
    }
    Ok(())
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let table = load_table_files(ctx)?;
    let (matrix, map) = encode(&table, ctx.config.reserve_unseen)?;
    check_widths(&ctx.config, map.total_dims())?;
    let spec = ctx.config.model.layer_spec()?;
    let tc = ctx.config.model.train.to_train_config(ctx.master_seed);

    let none_rows = table.none_indices();
    if none_rows.is_empty() {
        return Err(CliError::Data("no unperturbed rows to train on".into()));
    }
    let train_matrix = matrix.select(Axis(0), &none_rows);
    let outcome = train_network(train_matrix.view(), &spec, &tc)?;

    let mut meta = ctx.meta_value();
    meta["dataset"] = serde_json::Value::String(ctx.config.dataset.name());
    save_model(&outcome.params, &ctx.out_dir.join("model.json"), Some(meta))?;

    let mut log = format!("# {}\nepoch,loss\n", ctx.meta_line());
    for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
        writeln!(log, "{epoch},{loss}").expect("string write");
    }
    output::write_text(&ctx.out_dir.join("training_log.csv"), &log)?;

    let best = outcome.params.epoch;
    println!(
        "trained {} epochs on {} rows; kept epoch {} (loss {:.6}); wrote model.json",
        outcome.epoch_losses.len() - 1,
        none_rows.len(),
        best,
        outcome.epoch_losses[best]
    );
    Ok(())
}

#[derive(Serialize)]
struct ExplanationFile<'a> {
    meta: serde_json::Value,
    anomaly: usize,
    explanation: &'a Explanation,
}

/// File-name token for a method: lowercase with punctuation mapped to '_'.
fn file_token(method: Method) -> String {
    method
        .name()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

fn render_text(ctx: &Ctx, table: &RecordTable, id: usize, explanation: &Explanation) -> String {
    let names: Vec<&str> = table.schema.iter().map(|a| a.name.as_str()).collect();
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0);
    let order = ranked_attributes(explanation);
    let mut rank_of = vec![0usize; order.len()];
    for (position, &attribute) in order.iter().enumerate() {
        rank_of[attribute] = position;
    }
    // Both sections follow the ranking order, so the table reads top-down
    // as "most explanatory first" and its head matches the ranking line.
    let mut contributing: Vec<_> = explanation.contributing.iter().collect();
    contributing.sort_by_key(|s| rank_of[s.attribute]);
    let mut offsetting: Vec<_> = explanation.offsetting.iter().collect();
    offsetting.sort_by_key(|s| rank_of[s.attribute]);

    let mut text = format!("# {}\n", ctx.meta_line());
    let _ = writeln!(
        text,
        "anomaly row {id}  method {}  seed {}",
        explanation.method.name(),
        explanation.seed
    );
    let ranking: Vec<&str> = order.iter().map(|&a| names[a]).collect();
    let _ = writeln!(text, "ranking: {}", ranking.join(" > "));
    let _ = writeln!(text, "contributing:");
    for s in contributing {
        let _ = writeln!(text, "  {:<width$}  {:+.6}", names[s.attribute], s.phi);
    }
    let _ = writeln!(text, "offsetting:");
    for s in offsetting {
        let _ = writeln!(text, "  {:<width$}  {:+.6}", names[s.attribute], s.phi);
    }
    text
}

pub fn explain(ctx: &Ctx, ids: &[usize], model_path: Option<&Path>) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let table = load_table_files(ctx)?;
    let (matrix, map) = encode(&table, ctx.config.reserve_unseen)?;

    let model_path =
        model_path.map(Path::to_path_buf).unwrap_or_else(|| ctx.out_dir.join("model.json"));
    if !model_path.exists() {
        return Err(CliError::Data(format!(
            "missing {}: run train first",
            model_path.display()
        )));
    }
    let (params, _) = load_model(&model_path)?;
    check_budget(&ctx.config, map.n_attributes())?;
    if params.input_dims() != map.total_dims() {
        return Err(CliError::Data(format!(
            "model {} expects {} input dimensions, but the dataset encodes to {}",
            model_path.display(),
            params.input_dims(),
            map.total_dims()
        )));
    }

    let anomalies = table.anomaly_indices();
    let targets: Vec<usize> = if ids.is_empty() {
        anomalies.clone()
    } else {
        let known: BTreeSet<usize> = anomalies.iter().copied().collect();
        for &id in ids {
            if !known.contains(&id) {
                return Err(CliError::Data(format!(
                    "row {id} is not a labelled anomaly ({} rows are; see labels.json)",
                    known.len()
                )));
            }
        }
        ids.to_vec()
    };

    let methods = ctx.config.explain.methods()?;
    let section = &ctx.config.explain;
    let explain_seed = section.seed(ctx.master_seed);
    let background = BackgroundSet::sample(
        matrix.view(),
        &table.none_indices(),
        section.eta,
        derive_seed(explain_seed, "background", 0),
    )?;

    let dir = ctx.out_dir.join("explanations");
    let mut written = 0usize;
    for &id in &targets {
        for &method in &methods {
            let mut req =
                ExplanationRequest::new(method, matrix.row(id), &params, &map, &background, 0);
            req.seed = derive_seed(explain_seed, &format!("row{id}/{}", method.name()), 0);
            req.top_attributes = section.top_attributes;
            req.top_encodings = section.top_encodings.min(map.total_dims());
            if let Some(budget) = section.n_coalitions {
                req.n_coalitions = budget;
            }
            let explanation = run_explanation(&req)?;

            let stem = format!("anomaly_{id}_{}", file_token(method));
            output::write_json(
                &dir.join(format!("{stem}.json")),
                &ExplanationFile { meta: ctx.meta_value(), anomaly: id, explanation: &explanation },
            )?;
            output::write_text(
                &dir.join(format!("{stem}.txt")),
                &render_text(ctx, &table, id, &explanation),
            )?;
            written += 2;
        }
    }
    println!(
        "wrote {written} files ({} anomalies x {} methods) to {}",
        targets.len(),
        methods.len(),
        dir.display()
    );
    Ok(())
}

pub fn evaluate(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let table = build_table(ctx)?;
    let (_, map) = encode(&table, ctx.config.reserve_unseen)?;
    check_widths(&ctx.config, map.total_dims())?;
    check_budget(&ctx.config, map.n_attributes())?;

    let bundle = DatasetBundle {
        name: ctx.config.dataset.name(),
        table,
        reserve_unseen: ctx.config.reserve_unseen,
    };
    let recipe = ModelRecipe {
        layer: ctx.config.model.layer_spec()?,
        train: ctx.config.model.train.to_train_config(ctx.master_seed),
    };
    let settings = ctx.config.explain.to_settings();
    let methods = ctx.config.explain.methods()?;
    let bcfg = ctx.config.benchmark.to_benchmark_config(ctx.master_seed, methods);

    let mut report =
        run_benchmark(&bundle, &recipe, &settings, &ctx.config.benchmark.relevance, &bcfg)?;
    report.meta = Some(ctx.meta_value());
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }

    let meta_line = ctx.meta_line();
    output::write_text(&ctx.out_dir.join("metrics.csv"), &report.to_csv(Some(&meta_line)))?;
    output::write_json(&ctx.out_dir.join("metrics.json"), &report)?;

    let curve_metrics: BTreeSet<&str> = report.curves.iter().map(|c| c.metric.as_str()).collect();
    for metric in curve_metrics {
        let slice = MetricReport {
            meta: None,
            rows: Vec::new(),
            curves: report.curves.iter().filter(|c| c.metric == metric).cloned().collect(),
            warnings: Vec::new(),
        };
        output::write_text(
            &ctx.out_dir.join("curves").join(format!("{metric}.csv")),
            &slice.curves_to_csv(Some(&meta_line)),
        )?;
    }

    let ranking = format!("# {meta_line}\n{}", report.ranking_text());
    output::write_text(&ctx.out_dir.join("ranking.txt"), &ranking)?;
    print!("{}", report.ranking_text());
    Ok(())
}

pub fn report(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let path = ctx.out_dir.join("metrics.json");
    if !path.exists() {
        return Err(CliError::Data(format!("missing {}: run evaluate first", path.display())));
    }
    let stored: MetricReport = output::read_json(&path)?;
    // Render from the persisted meta so the summary stays tied to the run
    // that produced the metrics, even if the config changed since.
    let meta_line = stored
        .meta
        .as_ref()
        .and_then(meta_to_line)
        .unwrap_or_else(|| ctx.meta_line());
    let ranking = format!("# {meta_line}\n{}", stored.ranking_text());
    output::write_text(&ctx.out_dir.join("ranking.txt"), &ranking)?;
    print!("{}", stored.ranking_text());
    Ok(())
}

fn meta_to_line(meta: &serde_json::Value) -> Option<String> {
    let fingerprint = meta.get("config")?.as_str()?;
    let master_seed = meta.get("master_seed")?.as_u64()?;
    Some(output::meta_line(fingerprint, master_seed))
}

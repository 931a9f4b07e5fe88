//! CSV and JSON round-tripping for tables, schemas, and label sidecars.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{AnomalyLabel, AttrKind, AttributeSchema, RecordTable};

/// Loads a delimited file with a header row into a [`RecordTable`].
///
/// `hints` supplies the kind of each column in header order. Lines starting
/// with `#` are treated as comments so that generated files may carry
/// provenance headers. Ragged rows and missing cells are errors.
pub fn load_csv(path: &Path, hints: &[AttrKind], delimiter: u8) -> Result<RecordTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;

    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if names.len() != hints.len() {
        return Err(Error::Csv(format!(
            "{}: {} columns but {} kind hints",
            path.display(),
            names.len(),
            hints.len()
        )));
    }

    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(format!("{}: row {i}: {e}", path.display())))?;
        rows.push(rec.iter().map(|s| s.to_string()).collect::<Vec<String>>());
    }
    if rows.is_empty() {
        return Err(Error::Csv(format!("{}: no data rows", path.display())));
    }
    RecordTable::from_raw(&names, &rows, hints)
}

/// Writes the table as CSV with a header row. `meta` becomes a leading
/// `#`-comment line that [`load_csv`] skips on re-read.
pub fn write_csv(table: &RecordTable, path: &Path, delimiter: u8, meta: Option<&str>) -> Result<()> {
    let mut buf = Vec::new();
    if let Some(m) = meta {
        writeln!(&mut buf, "# {m}")?;
    }
    {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(&mut buf);
        w.write_record(table.schema.iter().map(|a| a.name.as_str()))
            .map_err(|e| Error::Csv(e.to_string()))?;
        for row in &table.rows {
            w.write_record(row.iter().map(|v| v.to_string()))
                .map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush()?;
    }
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
    labels: Vec<AnomalyLabel>,
}

/// Writes row labels as a JSON sidecar next to a CSV export.
pub fn write_labels(labels: &[AnomalyLabel], path: &Path, meta: Option<serde_json::Value>) -> Result<()> {
    let file = LabelFile { meta, labels: labels.to_vec() };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Reads a label sidecar; returns the labels and any embedded metadata.
pub fn read_labels(path: &Path) -> Result<(Vec<AnomalyLabel>, Option<serde_json::Value>)> {
    let text = fs::read_to_string(path)?;
    let file: LabelFile = serde_json::from_str(&text)?;
    Ok((file.labels, file.meta))
}

/// Serializes a schema to pretty JSON.
pub fn schema_to_json(schema: &[AttributeSchema]) -> Result<String> {
    Ok(serde_json::to_string_pretty(schema)?)
}

/// Parses a schema from JSON and validates it.
pub fn schema_from_json(text: &str) -> Result<Vec<AttributeSchema>> {
    let schema: Vec<AttributeSchema> = serde_json::from_str(text)?;
    for a in &schema {
        a.validate()?;
    }
    Ok(schema)
}

//! Tabular record model: attribute schemas, anomaly labels, raw tables.

mod encode;
mod io;

pub use encode::{attribute_slices, decode_row, encode, encode_value, DimSlice, EncodedMatrix, EncodingMap};
pub use io::{load_csv, schema_from_json, schema_to_json, write_csv, write_labels, read_labels};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attribute kind tag; used as a parsing hint when building schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Categorical,
    Numerical,
}

/// Value domain of one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttrDomain {
    /// Finite token vocabulary, kept sorted and free of duplicates.
    Categorical { vocabulary: Vec<String> },
    /// Closed interval observed in the fitting data.
    Numerical { min: f64, max: f64 },
}

/// Schema of a single attribute (one column of the table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    #[serde(flatten)]
    pub domain: AttrDomain,
}

impl AttributeSchema {
    pub fn categorical(name: impl Into<String>, vocabulary: Vec<String>) -> Result<Self> {
        let s = Self { name: name.into(), domain: AttrDomain::Categorical { vocabulary } };
        s.validate()?;
        Ok(s)
    }

    pub fn numerical(name: impl Into<String>, min: f64, max: f64) -> Result<Self> {
        let s = Self { name: name.into(), domain: AttrDomain::Numerical { min, max } };
        s.validate()?;
        Ok(s)
    }

    pub fn kind(&self) -> AttrKind {
        match self.domain {
            AttrDomain::Categorical { .. } => AttrKind::Categorical,
            AttrDomain::Numerical { .. } => AttrKind::Numerical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Schema("attribute name is empty".into()));
        }
        match &self.domain {
            AttrDomain::Categorical { vocabulary } => {
                if vocabulary.is_empty() {
                    return Err(Error::Schema(format!("attribute '{}': empty vocabulary", self.name)));
                }
                let mut seen = BTreeSet::new();
                for tok in vocabulary {
                    if tok.is_empty() {
                        return Err(Error::Schema(format!("attribute '{}': empty token in vocabulary", self.name)));
                    }
                    if !seen.insert(tok.as_str()) {
                        return Err(Error::Schema(format!(
                            "attribute '{}': duplicate token '{}' in vocabulary",
                            self.name, tok
                        )));
                    }
                }
            }
            AttrDomain::Numerical { min, max } => {
                if !min.is_finite() || !max.is_finite() {
                    return Err(Error::Schema(format!("attribute '{}': non-finite bounds", self.name)));
                }
                if min >= max {
                    return Err(Error::Schema(format!(
                        "attribute '{}': degenerate range [{min}, {max}]",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Token(String),
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            Value::Token(_) => None,
        }
    }

    pub fn as_token(&self) -> Option<&str> {
        match self {
            Value::Token(t) => Some(t),
            Value::Number(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Token(t) => write!(f, "{t}"),
        }
    }
}

/// Ground-truth label attached to each row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "label", rename_all = "snake_case")]
pub enum AnomalyLabel {
    /// Unperturbed row.
    None,
    /// Row with `k` single-attribute substitutions; `perturbed` lists the
    /// affected attribute indices in ascending order.
    TypeA { k: usize, perturbed: Vec<usize> },
    /// Synthesized row made of frequent values in an infrequent combination.
    TypeB { k: usize },
}

impl AnomalyLabel {
    pub fn is_anomalous(&self) -> bool {
        !matches!(self, AnomalyLabel::None)
    }

    pub fn perturbed_attributes(&self) -> Option<&[usize]> {
        match self {
            AnomalyLabel::TypeA { perturbed, .. } => Some(perturbed),
            _ => None,
        }
    }
}

/// A labelled table of records sharing one schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordTable {
    pub schema: Vec<AttributeSchema>,
    pub rows: Vec<Vec<Value>>,
    pub labels: Vec<AnomalyLabel>,
}

impl RecordTable {
    /// Builds a table from raw string cells, inferring the schema first.
    /// All rows are labelled as unperturbed.
    pub fn from_raw(names: &[String], rows: &[Vec<String>], hints: &[AttrKind]) -> Result<Self> {
        let schema = build_schema(names, rows, hints)?;
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            let mut vals = Vec::with_capacity(schema.len());
            for (j, cell) in row.iter().enumerate() {
                vals.push(match hints[j] {
                    AttrKind::Categorical => Value::Token(cell.clone()),
                    // parse already validated by build_schema
                    AttrKind::Numerical => Value::Number(cell.parse::<f64>().unwrap()),
                });
            }
            out.push(vals);
        }
        let labels = vec![AnomalyLabel::None; out.len()];
        Ok(Self { schema, rows: out, labels })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.schema.len()
    }

    /// Row indices labelled as unperturbed.
    pub fn none_indices(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| !self.labels[i].is_anomalous()).collect()
    }

    /// Row indices carrying an anomaly label.
    pub fn anomaly_indices(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.labels[i].is_anomalous()).collect()
    }

    /// Checks the structural invariants: schema validity, rectangular shape,
    /// one label per row, and every cell inside its attribute's domain.
    /// Type-A cells on their perturbed attributes are exempt from the domain
    /// check since they deliberately hold out-of-domain values.
    pub fn validate(&self) -> Result<()> {
        if self.schema.is_empty() {
            return Err(Error::Schema("table has no attributes".into()));
        }
        for a in &self.schema {
            a.validate()?;
        }
        let mut names = BTreeSet::new();
        for a in &self.schema {
            if !names.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute name '{}'", a.name)));
            }
        }
        if self.labels.len() != self.rows.len() {
            return Err(Error::Schema(format!(
                "{} labels for {} rows",
                self.labels.len(),
                self.rows.len()
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.schema.len() {
                return Err(Error::Schema(format!(
                    "row {i} has {} cells, schema has {} attributes",
                    row.len(),
                    self.schema.len()
                )));
            }
            let exempt = self.labels[i].perturbed_attributes().unwrap_or(&[]);
            for (j, val) in row.iter().enumerate() {
                if exempt.contains(&j) {
                    continue;
                }
                check_in_domain(&self.schema[j], val, i)?;
            }
        }
        Ok(())
    }
}

fn check_in_domain(schema: &AttributeSchema, val: &Value, row: usize) -> Result<()> {
    match (&schema.domain, val) {
        (AttrDomain::Categorical { vocabulary }, Value::Token(t)) => {
            if !vocabulary.iter().any(|v| v == t) {
                return Err(Error::Schema(format!(
                    "row {row}, attribute '{}': token '{t}' not in vocabulary",
                    schema.name
                )));
            }
        }
        (AttrDomain::Numerical { min, max }, Value::Number(x)) => {
            if !x.is_finite() {
                return Err(Error::Schema(format!(
                    "row {row}, attribute '{}': non-finite value",
                    schema.name
                )));
            }
            if x < min || x > max {
                return Err(Error::Schema(format!(
                    "row {row}, attribute '{}': {x} outside [{min}, {max}]",
                    schema.name
                )));
            }
        }
        _ => {
            return Err(Error::Schema(format!(
                "row {row}, attribute '{}': value kind does not match schema",
                schema.name
            )));
        }
    }
    Ok(())
}

/// Infers one [`AttributeSchema`] per column from raw string cells.
///
/// Categorical columns collect their distinct tokens into a sorted
/// vocabulary; numerical columns record the observed `[min, max]`.
/// Missing cells are rejected rather than imputed.
pub fn build_schema(names: &[String], rows: &[Vec<String>], hints: &[AttrKind]) -> Result<Vec<AttributeSchema>> {
    if names.is_empty() {
        return Err(Error::Schema("no columns".into()));
    }
    if names.len() != hints.len() {
        return Err(Error::Schema(format!(
            "{} column names but {} kind hints",
            names.len(),
            hints.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::Schema("no rows to infer a schema from".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != names.len() {
            return Err(Error::Schema(format!(
                "row {i} has {} cells, expected {}",
                row.len(),
                names.len()
            )));
        }
    }

    let mut out = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        match hints[j] {
            AttrKind::Categorical => {
                let mut vocab = BTreeSet::new();
                for (i, row) in rows.iter().enumerate() {
                    let cell = row[j].trim();
                    if cell.is_empty() {
                        return Err(Error::Schema(format!(
                            "row {i}, column '{name}': missing value"
                        )));
                    }
                    vocab.insert(cell.to_string());
                }
                out.push(AttributeSchema::categorical(name.clone(), vocab.into_iter().collect())?);
            }
            AttrKind::Numerical => {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for (i, row) in rows.iter().enumerate() {
                    let cell = row[j].trim();
                    if cell.is_empty() {
                        return Err(Error::Schema(format!(
                            "row {i}, column '{name}': missing value"
                        )));
                    }
                    let x: f64 = cell.parse().map_err(|_| {
                        Error::Schema(format!(
                            "row {i}, column '{name}': cannot parse '{cell}' as a number"
                        ))
                    })?;
                    if !x.is_finite() {
                        return Err(Error::Schema(format!(
                            "row {i}, column '{name}': non-finite value"
                        )));
                    }
                    min = min.min(x);
                    max = max.max(x);
                }
                if min == max {
                    return Err(Error::Schema(format!(
                        "column '{name}' is constant ({min}); a degenerate range cannot be scaled"
                    )));
                }
                out.push(AttributeSchema::numerical(name.clone(), min, max)?);
            }
        }
    }
    Ok(out)
}

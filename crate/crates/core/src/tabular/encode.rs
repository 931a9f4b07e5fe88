//! Dense encoding of record tables: one-hot categoricals, min-max scaled
//! numericals, with an optional reserved dimension per categorical attribute
//! for values outside the fitted vocabulary.

use std::ops::Range;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tabular::{AttrDomain, AttributeSchema, RecordTable, Value};

/// Encoded rows; `rows x total_dims`, every entry in `[0, 1]`.
pub type EncodedMatrix = Array2<f64>;

/// Contiguous dimension block of one attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimSlice {
    pub start: usize,
    pub len: usize,
}

impl DimSlice {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Maps attributes to their dimension blocks in the encoded space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodingMap {
    slices: Vec<DimSlice>,
    /// Absolute index of the reserved out-of-vocabulary dimension, per
    /// attribute; `None` for numericals or when no dimension was reserved.
    unseen: Vec<Option<usize>>,
    total_dims: usize,
}

impl EncodingMap {
    fn build(schema: &[AttributeSchema], reserve_unseen: bool) -> Self {
        let mut slices = Vec::with_capacity(schema.len());
        let mut unseen = Vec::with_capacity(schema.len());
        let mut start = 0;
        for attr in schema {
            let (len, extra) = match &attr.domain {
                AttrDomain::Categorical { vocabulary } => {
                    let reserved = if reserve_unseen { 1 } else { 0 };
                    (vocabulary.len() + reserved, reserved)
                }
                AttrDomain::Numerical { .. } => (1, 0),
            };
            slices.push(DimSlice { start, len });
            unseen.push(if extra == 1 { Some(start + len - 1) } else { None });
            start += len;
        }
        Self { slices, unseen, total_dims: start }
    }

    pub fn n_attributes(&self) -> usize {
        self.slices.len()
    }

    pub fn total_dims(&self) -> usize {
        self.total_dims
    }

    pub fn slices(&self) -> &[DimSlice] {
        &self.slices
    }

    pub fn slice(&self, attribute: usize) -> DimSlice {
        self.slices[attribute]
    }

    /// Absolute index of the reserved unseen-value dimension, if any.
    pub fn unseen_dim(&self, attribute: usize) -> Option<usize> {
        self.unseen[attribute]
    }

    /// Attribute owning the given encoded dimension.
    pub fn attribute_of_dim(&self, dim: usize) -> Option<usize> {
        self.slices.iter().position(|s| s.range().contains(&dim))
    }
}

/// Returns `(attribute index, dimension range)` pairs covering all encoded
/// dimensions in order, without gaps or overlaps.
pub fn attribute_slices(map: &EncodingMap) -> Vec<(usize, Range<usize>)> {
    map.slices.iter().enumerate().map(|(j, s)| (j, s.range())).collect()
}

/// Encodes a whole table.
///
/// With `reserve_unseen`, each categorical attribute gets one extra trailing
/// dimension; out-of-vocabulary tokens light it up instead of failing, but
/// only on cells that a type-A label declares perturbed. Any other
/// out-of-domain cell is an error naming the row and attribute.
pub fn encode(table: &RecordTable, reserve_unseen: bool) -> Result<(EncodedMatrix, EncodingMap)> {
    if table.schema.is_empty() {
        return Err(Error::Encoding("table has no attributes".into()));
    }
    let map = EncodingMap::build(&table.schema, reserve_unseen);
    let mut matrix = Array2::zeros((table.rows.len(), map.total_dims));
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != table.schema.len() {
            return Err(Error::Encoding(format!(
                "row {i} has {} cells, schema has {}",
                row.len(),
                table.schema.len()
            )));
        }
        let perturbed = table.labels[i].perturbed_attributes().unwrap_or(&[]);
        for (j, val) in row.iter().enumerate() {
            let slice = map.slices[j];
            let mut row_view = matrix.row_mut(i);
            let mut dst = row_view.slice_mut(ndarray::s![slice.range()]);
            match (&table.schema[j].domain, val) {
                (AttrDomain::Categorical { vocabulary }, Value::Token(tok)) => {
                    match vocabulary.iter().position(|v| v == tok) {
                        Some(p) => dst[p] = 1.0,
                        None => {
                            let routable = reserve_unseen && perturbed.contains(&j);
                            if !routable {
                                return Err(Error::Encoding(format!(
                                    "row {i}, attribute '{}': token '{tok}' not in vocabulary \
                                     and not routable to a reserved dimension",
                                    table.schema[j].name
                                )));
                            }
                            dst[slice.len - 1] = 1.0;
                        }
                    }
                }
                (AttrDomain::Numerical { min, max }, Value::Number(x)) => {
                    if !x.is_finite() {
                        return Err(Error::Encoding(format!(
                            "row {i}, attribute '{}': non-finite value",
                            table.schema[j].name
                        )));
                    }
                    dst[0] = ((x - min) / (max - min)).clamp(0.0, 1.0);
                }
                _ => {
                    return Err(Error::Encoding(format!(
                        "row {i}, attribute '{}': value kind does not match schema",
                        table.schema[j].name
                    )));
                }
            }
        }
    }
    Ok((matrix, map))
}

/// Encodes one in-domain value into a freshly zeroed slice block.
pub fn encode_value(schema: &AttributeSchema, value: &Value, slice_len: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; slice_len];
    match (&schema.domain, value) {
        (AttrDomain::Categorical { vocabulary }, Value::Token(tok)) => {
            let p = vocabulary.iter().position(|v| v == tok).ok_or_else(|| {
                Error::Encoding(format!("attribute '{}': token '{tok}' not in vocabulary", schema.name))
            })?;
            if vocabulary.len() > slice_len {
                return Err(Error::Encoding(format!(
                    "attribute '{}': slice of {slice_len} dims cannot hold {} tokens",
                    schema.name,
                    vocabulary.len()
                )));
            }
            out[p] = 1.0;
        }
        (AttrDomain::Numerical { min, max }, Value::Number(x)) => {
            if slice_len != 1 {
                return Err(Error::Encoding(format!(
                    "attribute '{}': numerical slice must be one dim, got {slice_len}",
                    schema.name
                )));
            }
            out[0] = ((x - min) / (max - min)).clamp(0.0, 1.0);
        }
        _ => {
            return Err(Error::Encoding(format!(
                "attribute '{}': value kind does not match schema",
                schema.name
            )));
        }
    }
    Ok(out)
}

/// Decodes one encoded row back to values: argmax per categorical slice,
/// inverse scaling per numerical dim. Fails if a categorical argmax lands on
/// the reserved unseen dimension, since that has no token to map back to.
pub fn decode_row(
    row: ndarray::ArrayView1<'_, f64>,
    schema: &[AttributeSchema],
    map: &EncodingMap,
) -> Result<Vec<Value>> {
    if row.len() != map.total_dims {
        return Err(Error::Encoding(format!(
            "row has {} dims, encoding expects {}",
            row.len(),
            map.total_dims
        )));
    }
    let mut out = Vec::with_capacity(schema.len());
    for (j, attr) in schema.iter().enumerate() {
        let slice = map.slices[j];
        match &attr.domain {
            AttrDomain::Categorical { vocabulary } => {
                let mut best = slice.start;
                for d in slice.range() {
                    if row[d] > row[best] {
                        best = d;
                    }
                }
                if map.unseen[j] == Some(best) {
                    return Err(Error::Encoding(format!(
                        "attribute '{}': decodes to the reserved unseen dimension",
                        attr.name
                    )));
                }
                out.push(Value::Token(vocabulary[best - slice.start].clone()));
            }
            AttrDomain::Numerical { min, max } => {
                out.push(Value::Number(min + row[slice.start] * (max - min)));
            }
        }
    }
    Ok(out)
}

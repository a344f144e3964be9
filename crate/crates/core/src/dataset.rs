//! Tabular ingestion and mixed-type encoding.
//!
//! A delimited text file is read into a [`RawTable`] (rows with missing values
//! and single-valued columns removed), an [`EncodingModel`] is fitted on it and
//! the table is then encoded into a [`MixedDataset`]: standardized numeric
//! columns plus one category index per categorical attribute.
//!
//! Categorical attribute `j` contributes `rho_j * (w_a + w_b)` to the squared
//! distance between two points holding different categories `a` and `b`. The
//! category weights `w` come from the chosen [`WeightScheme`], and `rho_j` is
//! picked so that the expected contribution of the attribute equals 2, the
//! expected squared difference of a unit-variance numeric feature.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CpfError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column layout of an input table. Columns not listed are ignored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default, rename = "label", skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
}

impl Schema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CpfError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(CpfError::Schema("schema lists no columns".into()));
        }
        let mut seen = BTreeSet::new();
        for col in &self.columns {
            if !seen.insert(col.name.as_str()) {
                return Err(CpfError::Schema(format!("duplicate column `{}`", col.name)));
            }
            if self.label_column.as_deref() == Some(col.name.as_str()) {
                return Err(CpfError::Schema(format!(
                    "label column `{}` is also listed as a feature",
                    col.name
                )));
            }
        }
        Ok(())
    }
}

/// How a table is read and typed.
#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// Explicit schema. When absent, every header column except the label is a
    /// feature and its kind is inferred.
    pub schema: Option<Schema>,
    /// Columns forced to categorical during inference.
    pub categorical: Vec<String>,
    /// Label column, overriding the schema's.
    pub label_column: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            schema: None,
            categorical: Vec::new(),
            label_column: None,
        }
    }
}

/// A cleaned, typed table. Columns are stored column-major.
#[derive(Clone, Debug, Default)]
pub struct RawTable {
    pub numeric_names: Vec<String>,
    pub numeric: Vec<Vec<f64>>,
    pub categorical_names: Vec<String>,
    pub categorical: Vec<Vec<String>>,
    pub label_name: Option<String>,
    pub labels: Option<Vec<String>>,
    /// Data-row position (0-based, header excluded) of every retained row.
    pub row_ids: Vec<usize>,
    /// Number of data rows in the input.
    pub input_rows: usize,
    pub dropped_rows: usize,
    pub dropped_columns: Vec<String>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    /// Builds a table directly from columns (no cleaning is applied).
    pub fn from_columns(
        numeric: Vec<(String, Vec<f64>)>,
        categorical: Vec<(String, Vec<String>)>,
    ) -> Result<Self> {
        let n = numeric
            .first()
            .map(|c| c.1.len())
            .or_else(|| categorical.first().map(|c| c.1.len()))
            .ok_or(CpfError::NoFeatures)?;
        if numeric.iter().any(|c| c.1.len() != n) || categorical.iter().any(|c| c.1.len() != n) {
            return Err(CpfError::Schema("columns differ in length".into()));
        }
        let (numeric_names, numeric) = numeric.into_iter().unzip();
        let (categorical_names, categorical) = categorical.into_iter().unzip();
        Ok(Self {
            numeric_names,
            numeric,
            categorical_names,
            categorical,
            row_ids: (0..n).collect(),
            input_rows: n,
            ..Self::default()
        })
    }
}

pub fn is_missing(value: &str) -> bool {
    let v = value.trim();
    v.is_empty()
        || v == "?"
        || v.eq_ignore_ascii_case("na")
        || v.eq_ignore_ascii_case("n/a")
        || v.eq_ignore_ascii_case("nan")
        || v.eq_ignore_ascii_case("null")
}

fn parse_numeric(value: &str) -> Option<f64> {
    value.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn load_table(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CpfError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_table(file, opts)
}

/// Reads a delimited table with a header row from any reader.
pub fn read_table<R: Read>(reader: R, opts: &LoadOptions) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let position = |name: &str| header.iter().position(|h| h == name);

    let label_name = opts
        .label_column
        .clone()
        .or_else(|| opts.schema.as_ref().and_then(|s| s.label_column.clone()));
    let label_pos = match &label_name {
        Some(name) => Some(
            position(name).ok_or_else(|| CpfError::Schema(format!("no column named `{name}`")))?,
        ),
        None => None,
    };

    // (header position, declared kind or None for inference)
    let mut features: Vec<(String, usize, Option<ColumnKind>)> = Vec::new();
    match &opts.schema {
        Some(schema) => {
            schema.validate()?;
            for col in &schema.columns {
                if label_name.as_deref() == Some(col.name.as_str()) {
                    continue;
                }
                let pos = position(&col.name).ok_or_else(|| {
                    CpfError::Schema(format!("schema column `{}` missing from header", col.name))
                })?;
                features.push((col.name.clone(), pos, Some(col.kind)));
            }
        }
        None => {
            for (pos, name) in header.iter().enumerate() {
                if Some(pos) == label_pos {
                    continue;
                }
                let forced = opts.categorical.iter().any(|c| c == name);
                features.push((name.clone(), pos, forced.then_some(ColumnKind::Categorical)));
            }
        }
    }
    for name in &opts.categorical {
        if position(name).is_none() {
            return Err(CpfError::Schema(format!("no column named `{name}`")));
        }
    }
    if features.is_empty() {
        return Err(CpfError::NoFeatures);
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut row_ids = Vec::new();
    let mut input_rows = 0usize;
    let mut dropped_rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        let row_id = input_rows;
        input_rows += 1;
        let wanted = features.iter().map(|f| f.1).chain(label_pos);
        let values: Vec<&str> = wanted.map(|p| record.get(p).unwrap_or("")).collect();
        if values.iter().any(|v| is_missing(v)) {
            dropped_rows += 1;
            continue;
        }
        rows.push(values.iter().map(|v| v.trim().to_string()).collect());
        row_ids.push(row_id);
    }
    if rows.is_empty() {
        return Err(CpfError::ZeroRows {
            dropped: dropped_rows,
        });
    }

    let mut table = RawTable {
        label_name: label_name.clone(),
        row_ids,
        input_rows,
        dropped_rows,
        ..RawTable::default()
    };
    for (col, (name, _, declared)) in features.iter().enumerate() {
        let values: Vec<&str> = rows.iter().map(|r| r[col].as_str()).collect();
        let distinct: BTreeSet<&str> = values.iter().copied().collect();
        let kind = match declared {
            Some(kind) => *kind,
            None if values.iter().all(|v| parse_numeric(v).is_some()) => ColumnKind::Numeric,
            None => ColumnKind::Categorical,
        };
        match kind {
            ColumnKind::Numeric => {
                let parsed: Vec<f64> = values
                    .iter()
                    .map(|v| {
                        parse_numeric(v).ok_or_else(|| {
                            CpfError::Schema(format!("column `{name}`: `{v}` is not numeric"))
                        })
                    })
                    .collect::<Result<_>>()?;
                let first = parsed[0];
                if parsed.iter().all(|&v| v == first) {
                    table.dropped_columns.push(name.clone());
                    continue;
                }
                table.numeric_names.push(name.clone());
                table.numeric.push(parsed);
            }
            ColumnKind::Categorical => {
                if distinct.len() < 2 {
                    table.dropped_columns.push(name.clone());
                    continue;
                }
                table.categorical_names.push(name.clone());
                table
                    .categorical
                    .push(values.iter().map(|v| v.to_string()).collect());
            }
        }
    }
    if table.numeric.is_empty() && table.categorical.is_empty() {
        return Err(CpfError::NoFeatures);
    }
    if label_pos.is_some() {
        let last = features.len();
        table.labels = Some(rows.iter().map(|r| r[last].clone()).collect());
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    /// Category weight = relative frequency (frequent categories weigh more).
    #[default]
    W1,
    /// Category weight = normalized `-log(frequency)` (rare categories weigh more).
    W2,
}

impl std::str::FromStr for WeightScheme {
    type Err = CpfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "w1" => Ok(Self::W1),
            "w2" => Ok(Self::W2),
            other => Err(CpfError::InvalidParam(format!("unknown weighting scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalEncoding {
    pub name: String,
    /// Distinct values in ascending lexicographic order.
    pub categories: Vec<String>,
    pub proportions: Vec<f64>,
    pub weights: Vec<f64>,
    /// `rho_j`.
    pub feature_weight: f64,
}

impl CategoricalEncoding {
    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.categories
            .binary_search_by(|c| c.as_str().cmp(value))
            .ok()
    }

    /// Multiplies every category weight by `factor` and recomputes `rho_j`.
    /// Distances are unchanged up to rounding.
    pub fn rescale_weights(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        self.feature_weight = feature_weight(&self.proportions, &self.weights);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericEncoding {
    pub name: String,
    pub trimmed_mean: f64,
    pub trimmed_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingModel {
    pub scheme: WeightScheme,
    pub numeric: Vec<NumericEncoding>,
    pub categorical: Vec<CategoricalEncoding>,
}

impl EncodingModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Identity model for `dims` numeric features that are already on the
    /// target scale.
    pub fn identity(dims: usize) -> Self {
        Self {
            scheme: WeightScheme::W1,
            numeric: (0..dims)
                .map(|d| NumericEncoding {
                    name: format!("x{d}"),
                    trimmed_mean: 0.0,
                    trimmed_std: 1.0,
                })
                .collect(),
            categorical: Vec::new(),
        }
    }
}

/// `rho = 2 / sum_q sum_{q' != q} (w_q + w_q') p_q p_q'`, evaluated through the
/// equivalent `1 / sum_q w_q p_q (1 - p_q)`.
pub fn feature_weight(proportions: &[f64], weights: &[f64]) -> f64 {
    let spread: f64 = proportions
        .iter()
        .zip(weights)
        .map(|(&p, &w)| w * p * (1.0 - p))
        .sum();
    1.0 / spread
}

pub fn category_weights(proportions: &[f64], scheme: WeightScheme) -> Vec<f64> {
    match scheme {
        WeightScheme::W1 => proportions.to_vec(),
        WeightScheme::W2 => {
            let neg_log: Vec<f64> = proportions.iter().map(|p| -p.ln()).collect();
            let total: f64 = neg_log.iter().sum();
            neg_log.iter().map(|v| v / total).collect()
        }
    }
}

/// Mean and population standard deviation over the central 98% of `values`:
/// `floor(n / 100)` values are discarded at each end of the sorted sample.
pub fn trimmed_moments(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted.len() / 100;
    moments(&sorted[cut..sorted.len() - cut])
}

fn moments(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    (mean, var.sqrt())
}

pub fn fit_encoding(table: &RawTable, scheme: WeightScheme) -> Result<EncodingModel> {
    let numeric = table
        .numeric_names
        .iter()
        .zip(&table.numeric)
        .map(|(name, values)| {
            let (mut mean, mut std) = trimmed_moments(values);
            if std <= 0.0 {
                // Nearly constant column: the trimmed window holds one value.
                (mean, std) = moments(values);
            }
            if !(std > 0.0 && std.is_finite()) {
                return Err(CpfError::ZeroVariance(name.clone()));
            }
            Ok(NumericEncoding {
                name: name.clone(),
                trimmed_mean: mean,
                trimmed_std: std,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let categorical = table
        .categorical_names
        .iter()
        .zip(&table.categorical)
        .map(|(name, values)| {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for v in values {
                *counts.entry(v.as_str()).or_insert(0) += 1;
            }
            if counts.len() < 2 {
                return Err(CpfError::SingleCategory(name.clone()));
            }
            let mut categories: Vec<String> = counts.keys().map(|c| c.to_string()).collect();
            categories.sort();
            let n = values.len() as f64;
            let proportions: Vec<f64> = categories
                .iter()
                .map(|c| counts[c.as_str()] as f64 / n)
                .collect();
            let weights = category_weights(&proportions, scheme);
            let feature_weight = feature_weight(&proportions, &weights);
            Ok(CategoricalEncoding {
                name: name.clone(),
                categories,
                proportions,
                weights,
                feature_weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EncodingModel {
        scheme,
        numeric,
        categorical,
    })
}

/// Encoded points: standardized numeric features and category indices, both
/// stored row-major.
#[derive(Clone, Debug)]
pub struct MixedDataset {
    n: usize,
    numeric: Vec<f64>,
    categorical: Vec<u32>,
    model: EncodingModel,
    /// Per attribute and category: `rho_j * w_q`.
    half_terms: Vec<Vec<f64>>,
    truth: Option<Vec<usize>>,
    truth_names: Vec<String>,
}

impl MixedDataset {
    /// Assembles a dataset from already-encoded rows.
    pub fn from_parts(
        model: EncodingModel,
        numeric: Vec<Vec<f64>>,
        categorical: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let n = numeric.len().max(categorical.len());
        let p_num = model.numeric.len();
        let p_cat = model.categorical.len();
        if p_num > 0 && numeric.len() != n || p_cat > 0 && categorical.len() != n {
            return Err(CpfError::Schema("numeric and categorical row counts differ".into()));
        }
        let mut flat_num = Vec::with_capacity(n * p_num);
        for row in &numeric {
            if row.len() != p_num {
                return Err(CpfError::Schema(format!(
                    "expected {p_num} numeric values, got {}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CpfError::Schema("non-finite numeric value".into()));
            }
            flat_num.extend_from_slice(row);
        }
        let mut flat_cat = Vec::with_capacity(n * p_cat);
        for row in &categorical {
            if row.len() != p_cat {
                return Err(CpfError::Schema(format!(
                    "expected {p_cat} categorical values, got {}",
                    row.len()
                )));
            }
            for (attr, &q) in model.categorical.iter().zip(row) {
                if q as usize >= attr.categories.len() {
                    return Err(CpfError::Schema(format!(
                        "category index {q} out of range for `{}`",
                        attr.name
                    )));
                }
            }
            flat_cat.extend_from_slice(row);
        }
        let half_terms = half_terms(&model);
        Ok(Self {
            n,
            numeric: flat_num,
            categorical: flat_cat,
            model,
            half_terms,
            truth: None,
            truth_names: Vec::new(),
        })
    }

    /// Purely numeric dataset taken as-is (no standardization).
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let dims = points.first().map_or(0, Vec::len);
        Self::from_parts(EncodingModel::identity(dims), points, Vec::new())
    }

    pub fn with_truth(mut self, truth: Vec<usize>) -> Result<Self> {
        if truth.len() != self.n {
            return Err(CpfError::LengthMismatch {
                left: truth.len(),
                right: self.n,
            });
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn model(&self) -> &EncodingModel {
        &self.model
    }

    pub fn numeric_dims(&self) -> usize {
        self.model.numeric.len()
    }

    pub fn categorical_dims(&self) -> usize {
        self.model.categorical.len()
    }

    #[inline]
    pub fn numeric_row(&self, i: usize) -> &[f64] {
        let p = self.numeric_dims();
        &self.numeric[i * p..(i + 1) * p]
    }

    #[inline]
    pub fn categorical_row(&self, i: usize) -> &[u32] {
        let p = self.categorical_dims();
        &self.categorical[i * p..(i + 1) * p]
    }

    #[inline]
    pub(crate) fn half_terms(&self) -> &[Vec<f64>] {
        &self.half_terms
    }

    pub fn truth(&self) -> Option<&[usize]> {
        self.truth.as_deref()
    }

    /// Class names behind the truth ids, when the truth came from a table.
    pub fn truth_names(&self) -> &[String] {
        &self.truth_names
    }

    /// Width of the Euclidean embedding in which the mixed distance is the
    /// plain Euclidean distance.
    pub fn embedding_dims(&self) -> usize {
        self.numeric_dims() + self.half_terms.iter().map(Vec::len).sum::<usize>()
    }

    /// Writes the embedding of point `i` into `out`: the numeric part followed by
    /// one slot per category holding `sqrt(rho_j * w_q)` for the point's category.
    pub fn embed_into(&self, i: usize, out: &mut [f64]) {
        let p = self.numeric_dims();
        out[..p].copy_from_slice(self.numeric_row(i));
        let mut offset = p;
        for (terms, &q) in self.half_terms.iter().zip(self.categorical_row(i)) {
            out[offset..offset + terms.len()].fill(0.0);
            out[offset + q as usize] = terms[q as usize].sqrt();
            offset += terms.len();
        }
    }

    /// Replaces the model's category weights for attribute `attr` by `factor`
    /// times their value, recomputing `rho_j`.
    pub fn rescale_category_weights(&mut self, attr: usize, factor: f64) {
        self.model.categorical[attr].rescale_weights(factor);
        self.half_terms = half_terms(&self.model);
    }
}

fn half_terms(model: &EncodingModel) -> Vec<Vec<f64>> {
    model
        .categorical
        .iter()
        .map(|c| c.weights.iter().map(|w| c.feature_weight * w).collect())
        .collect()
}

pub fn encode(table: &RawTable, model: &EncodingModel) -> Result<MixedDataset> {
    let n = table.n_rows();
    let lookup = |names: &[String], name: &str| names.iter().position(|c| c == name);

    let mut numeric = vec![Vec::with_capacity(model.numeric.len()); n];
    for enc in &model.numeric {
        let col = lookup(&table.numeric_names, &enc.name)
            .ok_or_else(|| CpfError::Schema(format!("numeric column `{}` missing", enc.name)))?;
        for (row, &v) in numeric.iter_mut().zip(&table.numeric[col]) {
            row.push((v - enc.trimmed_mean) / enc.trimmed_std);
        }
    }
    let mut categorical = vec![Vec::with_capacity(model.categorical.len()); n];
    for enc in &model.categorical {
        let col = lookup(&table.categorical_names, &enc.name).ok_or_else(|| {
            CpfError::Schema(format!("categorical column `{}` missing", enc.name))
        })?;
        for (row, v) in categorical.iter_mut().zip(&table.categorical[col]) {
            let q = enc.index_of(v).ok_or_else(|| CpfError::UnseenCategory {
                column: enc.name.clone(),
                value: v.clone(),
            })?;
            row.push(q as u32);
        }
    }
    if model.numeric.is_empty() {
        numeric.clear();
    }
    if model.categorical.is_empty() {
        categorical.clear();
    }
    let mut data = MixedDataset::from_parts(model.clone(), numeric, categorical)?;
    data.n = n;
    if let Some(labels) = &table.labels {
        let names: Vec<String> = labels
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let truth = labels
            .iter()
            .map(|l| names.binary_search(l).unwrap_or_default())
            .collect();
        data.truth = Some(truth);
        data.truth_names = names;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> LoadOptions {
        LoadOptions::default()
    }

    /// Literal double sum over ordered category pairs.
    fn rho_by_double_sum(p: &[f64], w: &[f64]) -> f64 {
        let mut denom = 0.0;
        for q in 0..p.len() {
            for r in 0..p.len() {
                if q != r {
                    denom += (w[q] + w[r]) * p[q] * p[r];
                }
            }
        }
        2.0 / denom
    }

    #[test]
    fn drops_rows_with_missing_cells() {
        let csv = "a,b\n1,x\n2,\n3,y\n4,x\n";
        let t = read_table(csv.as_bytes(), &opts()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.dropped_rows, 1);
        assert_eq!(t.row_ids, vec![0, 2, 3]);
        assert_eq!(t.input_rows, 4);
    }

    #[test]
    fn drops_single_valued_columns() {
        let csv = "a,b,c\n1,k,x\n2,k,y\n3,k,x\n";
        let t = read_table(csv.as_bytes(), &opts()).unwrap();
        assert_eq!(t.dropped_columns, vec!["b".to_string()]);
        assert_eq!(t.numeric_names, vec!["a".to_string()]);
        assert_eq!(t.categorical_names, vec!["c".to_string()]);
        let csv = "a,b\n5,1\n5,2\n";
        let t = read_table(csv.as_bytes(), &opts()).unwrap();
        assert_eq!(t.dropped_columns, vec!["a".to_string()]);
        assert_eq!(t.numeric.len(), 1);
    }

    #[test]
    fn header_only_is_an_error() {
        let err = read_table("a,b\n".as_bytes(), &opts()).unwrap_err();
        assert!(matches!(err, CpfError::ZeroRows { .. }));
        assert!(err.to_string().contains("zero rows"));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(read_table("a,b\n1,2\n3\n".as_bytes(), &opts()).is_err());
    }

    #[test]
    fn schema_controls_kinds_and_label() {
        let schema = Schema {
            columns: vec![
                ColumnSpec {
                    name: "a".into(),
                    kind: ColumnKind::Categorical,
                },
                ColumnSpec {
                    name: "b".into(),
                    kind: ColumnKind::Numeric,
                },
            ],
            label_column: Some("cls".into()),
        };
        let o = LoadOptions {
            schema: Some(schema),
            ..opts()
        };
        let t = read_table("a,b,cls,extra\n1,2,p,z\n3,4,q,z\n".as_bytes(), &o).unwrap();
        assert_eq!(t.categorical_names, vec!["a".to_string()]);
        assert_eq!(t.numeric_names, vec!["b".to_string()]);
        assert_eq!(t.labels.unwrap(), vec!["p".to_string(), "q".to_string()]);

        let bad = read_table("a,cls\n1,p\n2,q\n".as_bytes(), &o).unwrap_err();
        assert!(matches!(bad, CpfError::Schema(_)));
    }

    #[test]
    fn schema_rejects_duplicates_and_non_numeric_values() {
        let json = r#"{"columns":[{"name":"a","kind":"numeric"},{"name":"a","kind":"categorical"}]}"#;
        let s: Schema = serde_json::from_str(json).unwrap();
        assert!(s.validate().is_err());

        let json = r#"{"columns":[{"name":"a","kind":"numeric"}],"label":"c"}"#;
        let s: Schema = serde_json::from_str(json).unwrap();
        assert_eq!(s.label_column.as_deref(), Some("c"));
        let o = LoadOptions {
            schema: Some(s),
            ..opts()
        };
        assert!(read_table("a,c\nx,1\ny,2\n".as_bytes(), &o).is_err());
    }

    #[test]
    fn inference_and_forced_categorical() {
        let csv = "a,b\n1,x\n2,y\n3,x\n";
        let t = read_table(csv.as_bytes(), &opts()).unwrap();
        assert_eq!(t.numeric_names, vec!["a".to_string()]);
        let o = LoadOptions {
            categorical: vec!["a".into()],
            ..opts()
        };
        let t = read_table(csv.as_bytes(), &o).unwrap();
        assert_eq!(t.categorical_names.len(), 2);
    }

    #[test]
    fn rho_examples() {
        assert_eq!(feature_weight(&[0.5, 0.5], &[1.0, 1.0]), 2.0);
        assert_eq!(feature_weight(&[0.5, 0.5], &[0.5, 0.5]), 4.0);
        assert_eq!(rho_by_double_sum(&[0.5, 0.5], &[1.0, 1.0]), 2.0);
        assert_eq!(rho_by_double_sum(&[0.5, 0.5], &[0.5, 0.5]), 4.0);
    }

    #[test]
    fn rho_with_unit_weights_is_reciprocal_gini() {
        for p in [vec![0.2, 0.3, 0.5], vec![0.9, 0.1], vec![0.25; 4]] {
            let gini: f64 = p.iter().map(|q| q * (1.0 - q)).sum();
            let ones = vec![1.0; p.len()];
            assert!((feature_weight(&p, &ones) - 1.0 / gini).abs() < 1e-12);
            assert!((rho_by_double_sum(&p, &ones) - 1.0 / gini).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_rho_matches_double_sum() {
        let p = [0.1, 0.2, 0.3, 0.4];
        for scheme in [WeightScheme::W1, WeightScheme::W2] {
            let w = category_weights(&p, scheme);
            let a = feature_weight(&p, &w);
            let b = rho_by_double_sum(&p, &w);
            assert!((a - b).abs() < 1e-12 * b);
        }
    }

    #[test]
    fn weight_schemes() {
        let p = [0.25, 0.75];
        assert_eq!(category_weights(&p, WeightScheme::W1), p.to_vec());
        let w2 = category_weights(&p, WeightScheme::W2);
        assert!((w2.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w2[0] > w2[1]);
    }

    #[test]
    fn standardizes_small_column() {
        let t = RawTable::from_columns(vec![("x".into(), vec![1.0, 2.0, 3.0])], vec![]).unwrap();
        let m = fit_encoding(&t, WeightScheme::W1).unwrap();
        let d = encode(&t, &m).unwrap();
        let mean: f64 = (0..3).map(|i| d.numeric_row(i)[0]).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-15);
        assert_eq!(m.numeric[0].trimmed_mean, 2.0);
    }

    #[test]
    fn trimming_excludes_extremes_from_statistics() {
        let mut values: Vec<f64> = vec![0.0; 98];
        values.push(-1000.0);
        values.push(1000.0);
        values[0] = 1.0;
        values[1] = -1.0;
        // reference: drop the known extremes by hand
        let central: Vec<f64> = values.iter().copied().filter(|v: &f64| v.abs() < 500.0).collect();
        assert_eq!(central.len(), 98);
        let ref_mean = central.iter().sum::<f64>() / 98.0;
        let ref_std =
            (central.iter().map(|v| (v - ref_mean).powi(2)).sum::<f64>() / 98.0).sqrt();
        let (mean, std) = trimmed_moments(&values);
        assert_eq!(mean, ref_mean);
        assert!((std - ref_std).abs() < 1e-15);
        // untrimmed statistics would be dominated by the outliers
        let (_, full_std) = moments(&values);
        assert!(full_std > 100.0 * std);

        let t = RawTable::from_columns(vec![("x".into(), values)], vec![]).unwrap();
        let m = fit_encoding(&t, WeightScheme::W1).unwrap();
        let d = encode(&t, &m).unwrap();
        // outliers are still transformed
        assert!((d.numeric_row(98)[0] - (-1000.0 - ref_mean) / ref_std).abs() < 1e-9);
    }

    #[test]
    fn spike_column_falls_back_to_full_moments() {
        let mut values = vec![0.0; 100];
        values[7] = 4.0;
        let t = RawTable::from_columns(vec![("x".into(), values)], vec![]).unwrap();
        let m = fit_encoding(&t, WeightScheme::W1).unwrap();
        assert!(m.numeric[0].trimmed_std > 0.0);
    }

    #[test]
    fn encodes_categories_by_sorted_position() {
        let t = RawTable::from_columns(
            vec![],
            vec![("c".into(), vec!["red".into(), "blue".into(), "red".into()])],
        )
        .unwrap();
        let m = fit_encoding(&t, WeightScheme::W2).unwrap();
        assert_eq!(m.categorical[0].categories, vec!["blue", "red"]);
        assert_eq!(m.categorical[0].index_of("red"), Some(1));
        let d = encode(&t, &m).unwrap();
        assert_eq!(d.categorical_row(0), &[1]);
        assert_eq!(d.categorical_row(1), &[0]);
    }

    #[test]
    fn unseen_category_is_reported() {
        let train = RawTable::from_columns(
            vec![],
            vec![("c".into(), vec!["a".into(), "b".into()])],
        )
        .unwrap();
        let m = fit_encoding(&train, WeightScheme::W1).unwrap();
        let test = RawTable::from_columns(vec![], vec![("c".into(), vec!["z".into()])]).unwrap();
        let err = encode(&test, &m).unwrap_err();
        assert!(matches!(err, CpfError::UnseenCategory { .. }));
    }

    #[test]
    fn single_category_is_rejected_by_fit() {
        let t = RawTable::from_columns(vec![], vec![("c".into(), vec!["a".into(); 3])]).unwrap();
        assert!(matches!(
            fit_encoding(&t, WeightScheme::W1),
            Err(CpfError::SingleCategory(_))
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let t = RawTable::from_columns(
            vec![("x".into(), vec![0.5, 1.5, 9.0])],
            vec![("c".into(), vec!["a".into(), "b".into(), "b".into()])],
        )
        .unwrap();
        let m = fit_encoding(&t, WeightScheme::W2).unwrap();
        let back = EncodingModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn proportions_sum_to_one_and_truth_is_mapped() {
        let csv = "c,d,y\na,1,p\nb,2,q\nc,3,p\na,4,p\n";
        let o = LoadOptions {
            label_column: Some("y".into()),
            ..opts()
        };
        let t = read_table(csv.as_bytes(), &o).unwrap();
        let m = fit_encoding(&t, WeightScheme::W1).unwrap();
        let p = &m.categorical[0].proportions;
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.categorical[0].weights, *p);
        let d = encode(&t, &m).unwrap();
        assert_eq!(d.truth().unwrap(), &[0, 1, 0, 0]);
        assert_eq!(d.truth_names(), &["p".to_string(), "q".to_string()]);
    }
}

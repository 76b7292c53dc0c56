//! Dataset ingestion and preparation.
//!
//! Raw CSV rows are typed against a column schema, cleaned (mean imputation
//! for numeric columns, mode imputation for categorical ones), one-hot encoded
//! and split 70/30. Numeric features also carry equal-width bin edges so the
//! monitor can discretize them for entropy estimates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Number of equal-width bins used to discretize a numeric feature.
pub const NUMERIC_BINS: usize = 10;

/// Fraction of rows assigned to the training partition.
pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Schema file: `{"columns":[{"name":..,"kind":"numeric"|"categorical"}],"label":..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub label: String,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column '{}'", c.name)));
            }
        }
        if !seen.contains(self.label.as_str()) {
            return Err(Error::Schema(format!(
                "label column '{}' is not among the columns",
                self.label
            )));
        }
        Ok(())
    }

    fn label_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.name == self.label)
            .expect("validated schema contains its label")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Numeric(f64),
    Categorical(String),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }
}

/// Parsed but uncleaned rows, one cell per schema column in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub schema: Schema,
    pub rows: Vec<Vec<Cell>>,
}

impl RawDataset {
    pub fn new(schema: Schema, rows: Vec<Vec<Cell>>) -> Result<Self> {
        schema.validate()?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.columns.len() {
                return Err(Error::Parse {
                    line: i as u64 + 2,
                    message: format!("expected {} cells, found {}", schema.columns.len(), row.len()),
                });
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn missing_count(&self) -> usize {
        self.rows.iter().flatten().filter(|c| c.is_missing()).count()
    }
}

/// Reads a comma-separated file whose header names exactly the schema columns
/// (in any order). Empty cells are kept as [`Cell::Missing`].
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<RawDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<RawDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    let mut positions = Vec::with_capacity(schema.columns.len());
    for name in header.iter() {
        match schema.columns.iter().position(|c| c.name == name) {
            Some(idx) => positions.push(idx),
            None => return Err(Error::Schema(format!("unknown column '{name}' in header"))),
        }
    }
    for (idx, col) in schema.columns.iter().enumerate() {
        if !positions.contains(&idx) {
            return Err(Error::Schema(format!("column '{}' missing from header", col.name)));
        }
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_error(e, line)
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(rows.len() as u64 + 2);
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut row = vec![Cell::Missing; schema.columns.len()];
        for (field, &idx) in record.iter().zip(&positions) {
            row[idx] = parse_cell(field, schema.columns[idx].kind).map_err(|message| Error::Parse {
                line,
                message: format!("column '{}': {message}", schema.columns[idx].name),
            })?;
        }
        rows.push(row);
    }
    Ok(RawDataset { schema: schema.clone(), rows })
}

fn csv_error(e: csv::Error, line: u64) -> Error {
    Error::Parse { line, message: e.to_string() }
}

fn parse_cell(field: &str, kind: ColumnKind) -> std::result::Result<Cell, String> {
    if field.is_empty() {
        return Ok(Cell::Missing);
    }
    match kind {
        ColumnKind::Numeric => field
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Cell::Numeric)
            .ok_or_else(|| format!("'{field}' is not a finite number")),
        ColumnKind::Categorical => Ok(Cell::Categorical(field.to_string())),
    }
}

/// How a cleaned feature column was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    /// One indicator column of a one-hot group.
    OneHot { group: String, category: String },
}

/// Discretization rule for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureBins {
    EqualWidth { min: f64, max: f64, bins: usize },
    Binary,
}

impl FeatureBins {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() {
            min = 0.0;
            max = 0.0;
        }
        FeatureBins::EqualWidth { min, max, bins: NUMERIC_BINS }
    }

    /// Bin index of `value`; out-of-range values clamp to the edge bins.
    pub fn bin(&self, value: f64) -> u32 {
        match *self {
            FeatureBins::Binary => u32::from(value >= 0.5),
            FeatureBins::EqualWidth { min, max, bins } => {
                let width = max - min;
                if width <= 0.0 || !value.is_finite() {
                    return 0;
                }
                let idx = ((value - min) / width * bins as f64).floor();
                idx.clamp(0.0, (bins - 1) as f64) as u32
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
}

/// Ground-truth logistic coefficients of a synthesized dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Clean numeric dataset: no missing values, labels in {0,1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub columns: Vec<FeatureColumn>,
    pub class_probs: [f64; 2],
    pub feature_bins: Vec<FeatureBins>,
    /// Original class names for label 0 and label 1.
    pub class_names: [String; 2],
    pub ground_truth: Option<GroundTruth>,
}

impl Dataset {
    /// Builds a dataset from already-clean numeric features.
    pub fn from_parts(features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: features.len(), got: labels.len() });
        }
        let n = features.first().map_or(0, Vec::len);
        if let Some(row) = features.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: row.len() });
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::UnsupportedTask("labels must be 0 or 1".into()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Preprocess("features must be finite".into()));
        }
        let columns = (0..n)
            .map(|j| FeatureColumn { name: format!("x{j}"), kind: FeatureKind::Numeric })
            .collect();
        let mut ds = Self {
            features,
            labels,
            columns,
            class_probs: [0.0, 0.0],
            feature_bins: Vec::new(),
            class_names: ["0".into(), "1".into()],
            ground_truth: None,
        };
        ds.refit_bins();
        ds.class_probs = class_probs(&ds.labels);
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Feature row concatenated with its label, the layout the monitor
    /// compares query/response pairs against.
    pub fn tuple(&self, i: usize) -> Vec<f64> {
        let mut row = self.features[i].clone();
        row.push(f64::from(self.labels[i]));
        row
    }

    /// Discretized copy of the dataset: one column per feature plus the label.
    pub fn discretize(&self) -> Vec<Vec<u32>> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(row, &y)| {
                let mut out: Vec<u32> =
                    row.iter().zip(&self.feature_bins).map(|(&v, b)| b.bin(v)).collect();
                out.push(u32::from(y));
                out
            })
            .collect()
    }

    fn refit_bins(&mut self) {
        self.feature_bins = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, col)| match col.kind {
                FeatureKind::OneHot { .. } => FeatureBins::Binary,
                FeatureKind::Numeric => FeatureBins::fit(self.features.iter().map(|r| r[j])),
            })
            .collect();
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let labels: Vec<u8> = idx.iter().map(|&i| self.labels[i]).collect();
        Self {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            class_probs: class_probs(&labels),
            labels,
            columns: self.columns.clone(),
            feature_bins: self.feature_bins.clone(),
            class_names: self.class_names.clone(),
            ground_truth: self.ground_truth.clone(),
        }
    }
}

fn class_probs(labels: &[u8]) -> [f64; 2] {
    if labels.is_empty() {
        return [0.5, 0.5];
    }
    let ones = labels.iter().filter(|&&l| l == 1).count() as f64;
    let p1 = ones / labels.len() as f64;
    [1.0 - p1, p1]
}

/// Cleans a raw dataset: imputes, one-hot encodes and maps labels to {0,1}.
///
/// Categorical levels are ordered lexicographically; the smaller label
/// class maps to 0 (numeric labels compare numerically).
pub fn preprocess(raw: &RawDataset) -> Result<Dataset> {
    let schema = &raw.schema;
    let label_idx = schema.label_index();
    let m = raw.rows.len();

    let (labels, class_names) = encode_labels(raw, label_idx)?;

    let mut columns = Vec::new();
    let mut per_col: Vec<Vec<Vec<f64>>> = Vec::new();
    for (j, spec) in schema.columns.iter().enumerate() {
        if j == label_idx {
            continue;
        }
        match spec.kind {
            ColumnKind::Numeric => {
                let observed: Vec<f64> = raw
                    .rows
                    .iter()
                    .filter_map(|r| match r[j] {
                        Cell::Numeric(v) => Some(v),
                        _ => None,
                    })
                    .collect();
                if observed.is_empty() && m > 0 {
                    return Err(Error::Preprocess(format!("column '{}' has no values", spec.name)));
                }
                let mean = observed.iter().sum::<f64>() / observed.len().max(1) as f64;
                let values = raw
                    .rows
                    .iter()
                    .map(|r| match &r[j] {
                        Cell::Numeric(v) => Ok(*v),
                        Cell::Missing => Ok(mean),
                        Cell::Categorical(s) => Err(Error::Preprocess(format!(
                            "numeric column '{}' holds text '{s}'",
                            spec.name
                        ))),
                    })
                    .collect::<Result<Vec<f64>>>()?;
                columns.push(FeatureColumn { name: spec.name.clone(), kind: FeatureKind::Numeric });
                per_col.push(vec![values]);
            }
            ColumnKind::Categorical => {
                let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                for r in &raw.rows {
                    if let Some(s) = cell_text(&r[j]) {
                        *counts.entry(s).or_default() += 1;
                    }
                }
                if counts.is_empty() && m > 0 {
                    return Err(Error::Preprocess(format!("column '{}' has no values", spec.name)));
                }
                // BTreeMap iterates in lexicographic order, so the first maximum
                // is the lexicographically smallest mode.
                let mode = counts
                    .iter()
                    .fold(None::<(&String, usize)>, |best, (k, &c)| match best {
                        Some((_, bc)) if bc >= c => best,
                        _ => Some((k, c)),
                    })
                    .map(|(k, _)| k.clone())
                    .unwrap_or_default();
                let levels: Vec<String> = counts.keys().cloned().collect();
                let mut group = vec![vec![0.0; m]; levels.len()];
                for (i, r) in raw.rows.iter().enumerate() {
                    let value = cell_text(&r[j]).unwrap_or_else(|| mode.clone());
                    let level = levels.binary_search(&value).expect("level was counted");
                    group[level][i] = 1.0;
                }
                for level in &levels {
                    columns.push(FeatureColumn {
                        name: format!("{}={}", spec.name, level),
                        kind: FeatureKind::OneHot { group: spec.name.clone(), category: level.clone() },
                    });
                }
                per_col.push(group);
            }
        }
    }

    let flat: Vec<Vec<f64>> = per_col.into_iter().flatten().collect();
    let features = (0..m).map(|i| flat.iter().map(|col| col[i]).collect()).collect();
    let mut ds = Dataset {
        features,
        class_probs: class_probs(&labels),
        labels,
        columns,
        feature_bins: Vec::new(),
        class_names,
        ground_truth: None,
    };
    ds.refit_bins();
    Ok(ds)
}

fn cell_text(cell: &Cell) -> Option<String> {
    match cell {
        Cell::Missing => None,
        Cell::Categorical(s) => Some(s.clone()),
        Cell::Numeric(v) => Some(v.to_string()),
    }
}

fn encode_labels(raw: &RawDataset, label_idx: usize) -> Result<(Vec<u8>, [String; 2])> {
    let numeric = raw.schema.columns[label_idx].kind == ColumnKind::Numeric;
    let mut values: Vec<&Cell> = Vec::with_capacity(raw.rows.len());
    for (i, r) in raw.rows.iter().enumerate() {
        if r[label_idx].is_missing() {
            return Err(Error::Preprocess(format!("row {} has a missing label", i + 1)));
        }
        values.push(&r[label_idx]);
    }

    let mut distinct: Vec<Cell> = Vec::new();
    for v in &values {
        if !distinct.contains(v) {
            distinct.push((*v).clone());
        }
    }
    if distinct.len() > 2 {
        return Err(Error::UnsupportedTask(format!(
            "label column has {} classes; only binary labels are supported",
            distinct.len()
        )));
    }
    distinct.sort_by(|a, b| match (a, b) {
        (Cell::Numeric(x), Cell::Numeric(y)) if numeric => x.total_cmp(y),
        _ => cell_text(a).cmp(&cell_text(b)),
    });
    let names: Vec<String> = distinct.iter().filter_map(cell_text).collect();
    let class_names = match names.as_slice() {
        [a, b] => [a.clone(), b.clone()],
        [a] => [a.clone(), String::new()],
        _ => [String::new(), String::new()],
    };
    let labels = values
        .iter()
        .map(|v| u8::from(distinct.len() == 2 && **v == distinct[1]))
        .collect();
    Ok((labels, class_names))
}

/// A disjoint 70/30 partition produced by a seeded shuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
    /// Original row indices of the training partition.
    pub train_index: Vec<usize>,
    pub test_index: Vec<usize>,
}

/// Shuffles with `seed` and keeps `floor(0.7 m)` rows for training. Bin
/// edges are refit on the training rows and shared with the test rows.
pub fn split(d: &Dataset, seed: u64) -> Result<SplitDataset> {
    let m = d.len();
    if m < 10 {
        return Err(Error::TooFewRows { needed: 10, got: m });
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut seeded(seed));
    let n_train = (TRAIN_FRACTION * m as f64).floor() as usize;
    let (tr, te) = idx.split_at(n_train);
    let mut train = d.subset(tr);
    train.refit_bins();
    let mut test = d.subset(te);
    test.feature_bins = train.feature_bins.clone();
    Ok(SplitDataset { train, test, seed, train_index: tr.to_vec(), test_index: te.to_vec() })
}

/// Desk-scale dataset: features uniform in `[-1,1]^n`, labels drawn from the
/// logistic model with coefficients `a` and intercept `b`.
pub fn synthesize(n_dims: usize, m: usize, a: &[f64], b: f64, seed: u64) -> Result<Dataset> {
    if n_dims == 0 {
        return Err(Error::InvalidConfig("n_dims must be at least 1".into()));
    }
    if a.len() != n_dims {
        return Err(Error::DimensionMismatch { expected: n_dims, got: a.len() });
    }
    if m < n_dims + 2 {
        return Err(Error::TooFewRows { needed: n_dims + 2, got: m });
    }
    let mut rng = seeded(seed);
    let mut features = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let x: Vec<f64> = (0..n_dims).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let z: f64 = x.iter().zip(a).map(|(xi, ai)| xi * ai).sum::<f64>() + b;
        let p = 1.0 / (1.0 + (-z).exp());
        labels.push(u8::from(rng.random::<f64>() < p));
        features.push(x);
    }
    let mut ds = Dataset::from_parts(features, labels)?;
    ds.ground_truth = Some(GroundTruth { a: a.to_vec(), b });
    Ok(ds)
}

/// Draws `n` coefficients uniformly in `[-scale, scale]`, a convenience for
/// synthetic experiment presets.
pub fn random_coefficients(n: usize, scale: f64, seed: u64) -> (Vec<f64>, f64) {
    let mut rng = seeded(seed);
    let a = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
    let b = rng.random_range(-scale / 4.0..=scale / 4.0);
    (a, b)
}

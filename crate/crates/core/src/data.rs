//! Datasets, CSV ingestion, min-max normalization, three-way splits and
//! synthetic data generation.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Poisoned,
    Mixed,
}

/// A feature matrix (one row per sample) and its response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub responses: DVector<f64>,
    pub feature_names: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: DMatrix<f64>,
        responses: DVector<f64>,
        feature_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.nrows() != responses.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: responses.len(),
            });
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::DimensionMismatch {
                expected: features.ncols(),
                found: feature_names.len(),
            });
        }
        Ok(Dataset {
            features,
            responses,
            feature_names,
            provenance,
        })
    }

    /// Builds a clean dataset from row slices, naming features `x0, x1, ...`.
    pub fn from_rows(rows: &[Vec<f64>], responses: &[f64]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        let features = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Dataset::new(
            features,
            DVector::from_column_slice(responses),
            default_names(d),
            Provenance::Clean,
        )
    }

    pub fn empty(d: usize) -> Self {
        Dataset {
            features: DMatrix::zeros(0, d),
            responses: DVector::zeros(0),
            feature_names: default_names(d),
            provenance: Provenance::Poisoned,
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    /// Rows in the given order (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            responses: self.responses.select_rows(indices),
            feature_names: self.feature_names.clone(),
            provenance: self.provenance,
        }
    }

    /// Keeps only the first `k` feature columns.
    pub fn truncate_features(&self, k: usize) -> Dataset {
        let k = k.min(self.dim());
        Dataset {
            features: self.features.columns(0, k).into_owned(),
            responses: self.responses.clone(),
            feature_names: self.feature_names[..k].to_vec(),
            provenance: self.provenance,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Dataset {
        self.provenance = provenance;
        self
    }

    /// True when every feature and response value lies in `[0, 1]`.
    pub fn in_unit_box(&self) -> bool {
        self.features
            .iter()
            .chain(self.responses.iter())
            .all(|v| (0.0..=1.0).contains(v))
    }

    /// Writes the dataset as CSV with the feature names plus `response_name` as header.
    pub fn write_csv(&self, path: impl AsRef<Path>, response_name: &str) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(response_name.to_string());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.responses[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHot {
    pub source: String,
    pub levels: Vec<String>,
}

/// Everything needed to map raw values to the normalized `[0, 1]` box and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    /// Retained columns, in dataset column order.
    pub columns: Vec<ColumnRange>,
    pub response: ResponseRange,
    /// Zero-variance columns removed during preprocessing.
    pub dropped: Vec<String>,
    pub onehot: Vec<OneHot>,
}

impl NormalizationSpec {
    pub fn normalize_features(&self, raw: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| {
            let c = &self.columns[j];
            (raw[(i, j)] - c.min) / (c.max - c.min)
        })
    }

    pub fn denormalize_features(&self, normalized: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(normalized.nrows(), normalized.ncols(), |i, j| {
            let c = &self.columns[j];
            c.min + normalized[(i, j)] * (c.max - c.min)
        })
    }

    pub fn normalize_response(&self, y: f64) -> f64 {
        (y - self.response.min) / (self.response.max - self.response.min)
    }

    pub fn denormalize_response(&self, y: f64) -> f64 {
        self.response.min + y * (self.response.max - self.response.min)
    }

    /// Converts `(w, b)` learned in normalized units into raw units.
    pub fn denormalize_model(&self, weights: &DVector<f64>, bias: f64) -> (DVector<f64>, f64) {
        let ry = self.response.max - self.response.min;
        let mut raw_bias = bias;
        let raw_w = DVector::from_fn(weights.len(), |j, _| {
            let c = &self.columns[j];
            let span = c.max - c.min;
            raw_bias -= weights[j] * c.min / span;
            weights[j] * ry / span
        });
        (raw_w, self.response.min + ry * raw_bias)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Which column of a CSV file holds the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
}

impl From<&str> for TargetColumn {
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => TargetColumn::Index(i),
            Err(_) => TargetColumn::Name(s.to_string()),
        }
    }
}

/// Loads a comma-separated file with a header row.
///
/// Columns listed in `categorical` (and any column where no cell parses as a
/// number) are one-hot encoded with levels in sorted order. Every retained
/// column and the response are min-max normalized; constant columns are dropped.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &TargetColumn,
    categorical: &[String],
) -> Result<(Dataset, NormalizationSpec)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target, categorical)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    target: &TargetColumn,
    categorical: &[String],
) -> Result<(Dataset, NormalizationSpec)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut cells: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        cells.push(rec?.iter().map(str::to_string).collect());
    }

    let target_idx = match target {
        TargetColumn::Name(n) => headers.iter().position(|h| h == n),
        TargetColumn::Index(i) => (*i < headers.len()).then_some(*i),
    }
    .ok_or_else(|| {
        Error::MissingTarget(match target {
            TargetColumn::Name(n) => n.clone(),
            TargetColumn::Index(i) => i.to_string(),
        })
    })?;

    if cells.len() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            have: cells.len(),
        });
    }
    for (row, rec) in cells.iter().enumerate() {
        for (j, v) in rec.iter().enumerate() {
            if v.is_empty() {
                return Err(Error::MissingValue {
                    column: headers[j].clone(),
                    row,
                });
            }
        }
    }

    let parse_col = |j: usize| -> Result<Vec<f64>> {
        cells
            .iter()
            .enumerate()
            .map(|(row, rec)| {
                rec[j].parse::<f64>().map_err(|_| Error::NonNumeric {
                    column: headers[j].clone(),
                    row,
                    value: rec[j].clone(),
                })
            })
            .collect()
    };

    let raw_y = parse_col(target_idx)?;

    // (name, raw values) for every expanded feature column before dropping
    let mut expanded: Vec<(String, Vec<f64>)> = Vec::new();
    let mut onehot = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if j == target_idx {
            continue;
        }
        let all_text = cells.iter().all(|rec| rec[j].parse::<f64>().is_err());
        if categorical.contains(name) || all_text {
            let levels: BTreeSet<&str> = cells.iter().map(|rec| rec[j].as_str()).collect();
            let levels: Vec<String> = levels.into_iter().map(str::to_string).collect();
            for level in &levels {
                let col = cells
                    .iter()
                    .map(|rec| if rec[j] == *level { 1.0 } else { 0.0 })
                    .collect();
                expanded.push((format!("{name}={level}"), col));
            }
            onehot.push(OneHot {
                source: name.clone(),
                levels,
            });
        } else {
            expanded.push((name.clone(), parse_col(j)?));
        }
    }

    let (ymin, ymax) = min_max(&raw_y);
    if ymin >= ymax {
        return Err(Error::ConstantResponse);
    }

    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for (name, col) in expanded {
        let (min, max) = min_max(&col);
        if min < max {
            kept.push(col);
            columns.push(ColumnRange { name, min, max });
        } else {
            dropped.push(name);
        }
    }

    let spec = NormalizationSpec {
        columns,
        response: ResponseRange {
            min: ymin,
            max: ymax,
        },
        dropped,
        onehot,
    };
    let n = raw_y.len();
    let raw = DMatrix::from_fn(n, kept.len(), |i, j| kept[j][i]);
    let features = spec.normalize_features(&raw);
    let responses = DVector::from_iterator(n, raw_y.iter().map(|&y| spec.normalize_response(y)));
    let names = spec.columns.iter().map(|c| c.name.clone()).collect();
    let ds = Dataset::new(features, responses, names, Provenance::Clean)?;
    Ok((ds, spec))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Parameters of a synthetic linear dataset `y = w·x + b + e`, `e ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub true_weights: Vec<f64>,
    pub true_bias: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Weights drawn uniformly from `[-1, 1]` and zero bias, both derived from `seed`.
    pub fn random(d: usize, n: usize, noise_std: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, "synthetic-weights"));
        let true_weights = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        SyntheticSpec {
            n,
            true_weights,
            true_bias: 0.0,
            noise_std,
            seed,
        }
    }

    pub fn d(&self) -> usize {
        self.true_weights.len()
    }
}

/// Draws features uniformly from `[0, 1]^d`, adds Gaussian noise to the linear
/// response and min-max rescales every column into `[0, 1]`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, NormalizationSpec)> {
    let d = spec.d();
    if d == 0 {
        return Err(Error::InvalidParameter("synthetic data needs d >= 1".into()));
    }
    if spec.n < d + 1 {
        return Err(Error::TooFewRows {
            needed: d + 1,
            have: spec.n,
        });
    }
    if !(spec.noise_std >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise std must be >= 0, got {}",
            spec.noise_std
        )));
    }
    let mut rng = seed::rng(spec.seed);
    let raw_x = DMatrix::from_fn(spec.n, d, |_, _| rng.random::<f64>());
    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let w = DVector::from_column_slice(&spec.true_weights);
    let raw_y: Vec<f64> = (0..spec.n)
        .map(|i| raw_x.row(i).transpose().dot(&w) + spec.true_bias + noise.sample(&mut rng))
        .collect();

    let (ymin, ymax) = min_max(&raw_y);
    if ymin >= ymax {
        return Err(Error::ConstantResponse);
    }
    let names = default_names(d);
    let mut columns = Vec::with_capacity(d);
    let mut dropped = Vec::new();
    let mut keep = Vec::with_capacity(d);
    for (j, name) in names.iter().enumerate() {
        let col: Vec<f64> = raw_x.column(j).iter().copied().collect();
        let (min, max) = min_max(&col);
        if min < max {
            keep.push(j);
            columns.push(ColumnRange {
                name: name.clone(),
                min,
                max,
            });
        } else {
            dropped.push(name.clone());
        }
    }
    let norm = NormalizationSpec {
        columns,
        response: ResponseRange {
            min: ymin,
            max: ymax,
        },
        dropped,
        onehot: Vec::new(),
    };
    let features = norm.normalize_features(&raw_x.select_columns(&keep));
    let responses = DVector::from_iterator(spec.n, raw_y.iter().map(|&y| norm.normalize_response(y)));
    let names = norm.columns.iter().map(|c| c.name.clone()).collect();
    let ds = Dataset::new(features, responses, names, Provenance::Clean)?;
    Ok((ds, norm))
}

/// Train / validation / test partition of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTriple {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    /// Source row indices of each part.
    pub indices: [Vec<usize>; 3],
}

/// Shuffles rows with `seed` and cuts them into three contiguous parts whose
/// sizes differ by at most one; remainder rows go to the earlier parts.
pub fn split_three(ds: &Dataset, seed: u64) -> Result<SplitTriple> {
    let n = ds.len();
    if n < 3 {
        return Err(Error::TooFewRows { needed: 3, have: n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let base = n / 3;
    let extra = n % 3;
    let sizes = [0, 1, 2].map(|k| base + usize::from(k < extra));
    let a = perm[..sizes[0]].to_vec();
    let b = perm[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let c = perm[sizes[0] + sizes[1]..].to_vec();
    Ok(SplitTriple {
        train: ds.select(&a),
        validation: ds.select(&b),
        test: ds.select(&c),
        indices: [a, b, c],
    })
}

/// Appends `poison` to `clean` and reports `α = n_p / (n_o + n_p)`.
pub fn merge(clean: &Dataset, poison: &Dataset) -> Result<(Dataset, f64)> {
    if clean.dim() != poison.dim() {
        return Err(Error::DimensionMismatch {
            expected: clean.dim(),
            found: poison.dim(),
        });
    }
    let (n_o, n_p) = (clean.len(), poison.len());
    if n_p == 0 {
        return Ok((clean.clone(), 0.0));
    }
    let n = n_o + n_p;
    let d = clean.dim();
    let features = DMatrix::from_fn(n, d, |i, j| {
        if i < n_o {
            clean.features[(i, j)]
        } else {
            poison.features[(i - n_o, j)]
        }
    });
    let responses = DVector::from_fn(n, |i, _| {
        if i < n_o {
            clean.responses[i]
        } else {
            poison.responses[i - n_o]
        }
    });
    let merged = Dataset {
        features,
        responses,
        feature_names: clean.feature_names.clone(),
        provenance: Provenance::Mixed,
    };
    Ok((merged, n_p as f64 / n as f64))
}

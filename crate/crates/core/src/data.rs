//! Tabular datasets: CSV ingestion, a seeded synthetic generator, z-score
//! normalization, train/validation splits and mini-batching.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Maximum number of distinct values a categorical column may hold.
pub const MAX_CATEGORIES: usize = 64;

/// An immutable labelled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Matrix,
    labels: Vec<u8>,
    /// `true` for z-scored numeric columns, `false` for one-hot columns.
    numeric: Vec<bool>,
}

/// One mini-batch of `B` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub x: Matrix,
    pub y: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl DataBatch {
    pub fn new(x: Matrix, y: Vec<u8>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", x.rows()),
                got: format!("{} labels", y.len()),
            });
        }
        if y.is_empty() {
            return Err(Error::InvalidParameter("empty batch".into()));
        }
        Ok(Self { x, y })
    }

    /// `b` copies of the all-ones input vector of dimension `d`, labelled 1.
    pub fn all_ones(b: usize, d: usize) -> Self {
        Self {
            x: Matrix::filled(b, d, 1.0),
            y: vec![1; b],
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

impl Dataset {
    /// Builds a dataset from raw parts. Columns flagged numeric are used as
    /// given (no normalization is applied here).
    pub fn from_parts(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<u8>,
        numeric: Vec<bool>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", features.rows()),
                got: format!("{} labels", labels.len()),
            });
        }
        if numeric.len() != features.cols() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} column flags", features.cols()),
                got: format!("{} column flags", numeric.len()),
            });
        }
        if features.cols() == 0 {
            return Err(Error::InvalidParameter("dataset has no feature columns".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidParameter(format!("label {bad} is not binary")));
        }
        check_both_classes(&labels)?;
        Ok(Self {
            name: name.into(),
            features,
            labels,
            numeric,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn numeric_columns(&self) -> &[bool] {
        &self.numeric
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Input dimension.
    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&y| y == 1).count() as f64 / self.len() as f64
    }

    /// Gathers rows into a batch.
    pub fn batch(&self, idx: &[usize]) -> DataBatch {
        DataBatch {
            x: self.features.select_rows(idx),
            y: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// All rows as a single batch.
    pub fn full_batch(&self) -> DataBatch {
        DataBatch {
            x: self.features.clone(),
            y: self.labels.clone(),
        }
    }

    /// `B` rows drawn without replacement with a seeded shuffle.
    pub fn sample_batch(&self, b: usize, seed: u64) -> Result<DataBatch> {
        if b == 0 || b > self.len() {
            return Err(Error::InvalidParameter(format!(
                "batch size {b} not in 1..={}",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::seeded(seed));
        idx.truncate(b);
        Ok(self.batch(&idx))
    }

    fn subset(&self, idx: &[usize], name: String) -> Self {
        Self {
            name,
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            numeric: self.numeric.clone(),
        }
    }

    /// SHA-256 over the dimensions, little-endian feature bits and labels.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.d() as u64).to_le_bytes());
        for v in self.features.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(&self.labels);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Iterates over mini-batches of size `b` (the last one may be short).
    pub fn batches(&self, b: usize, seed: u64, shuffle: bool) -> Result<Batches<'_>> {
        if b == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        if b > self.len() {
            return Err(Error::InvalidParameter(format!(
                "batch size {b} exceeds row count {}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        if shuffle {
            order.shuffle(&mut rng::seeded(seed));
        }
        Ok(Batches {
            ds: self,
            order,
            size: b,
            pos: 0,
        })
    }
}

/// Single-consumer epoch iterator over a dataset.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = DataBatch;

    fn next(&mut self) -> Option<DataBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.size).min(self.order.len());
        let batch = self.ds.batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}

fn check_both_classes(labels: &[u8]) -> Result<()> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClassLabels);
    }
    Ok(())
}

/// Per-column mean and population standard deviation over `rows`.
fn column_stats(m: &Matrix, rows: &[usize], col: usize) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&r| m.get(r, col)).sum::<f64>() / n;
    let var = rows
        .iter()
        .map(|&r| {
            let d = m.get(r, col) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Columns whose spread is below this are treated as constant.
const CONSTANT_STD: f64 = 1e-12;

/// Z-scores every numeric column of `m` using statistics over `fit_rows`.
/// Constant columns become all zeros.
fn normalize_columns(m: &mut Matrix, numeric: &[bool], fit_rows: &[usize]) {
    for (c, &is_num) in numeric.iter().enumerate() {
        if !is_num {
            continue;
        }
        let (mean, std) = column_stats(m, fit_rows, c);
        for r in 0..m.rows() {
            let v = if std <= CONSTANT_STD * mean.abs().max(1.0) {
                0.0
            } else {
                (m.get(r, c) - mean) / std
            };
            m.set(r, c, v);
        }
    }
}

/// Z-scores numeric columns over all rows.
pub fn normalize(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    let all: Vec<usize> = (0..ds.len()).collect();
    normalize_columns(&mut out.features, &ds.numeric, &all);
    out
}

fn parse_label(raw: &str) -> Option<u8> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "0" | "0.0" | "false" => Some(0),
        "1" | "1.0" | "true" => Some(1),
        _ => None,
    }
}

/// Loads a headed CSV file. Categorical columns are one-hot expanded (sorted
/// category order); numeric columns are z-scored over all rows. [`split`]
/// re-fits the normalization on its training part.
pub fn load_csv(
    path: &Path,
    label_column: &str,
    categorical_columns: &BTreeSet<String>,
) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_owned()))?;
    for c in categorical_columns {
        if !headers.contains(c) {
            return Err(Error::InvalidParameter(format!("categorical column {c:?} absent")));
        }
    }

    let mut labels = Vec::new();
    let mut cells: Vec<Vec<String>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        // header is line 1, first record line 2
        let row = i + 2;
        let raw = rec.get(label_idx).unwrap_or("");
        let y = parse_label(raw).ok_or_else(|| Error::UnparseableCell {
            row,
            col: label_idx + 1,
            column: label_column.to_owned(),
            value: raw.to_owned(),
        })?;
        labels.push(y);
        cells.push(rec.iter().map(str::to_owned).collect());
    }
    if labels.is_empty() {
        return Err(Error::InvalidParameter("csv has no data rows".into()));
    }
    check_both_classes(&labels)?;

    // Column plan: numeric -> 1 column, categorical -> one per category.
    let mut plan: Vec<(usize, Option<Vec<String>>)> = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        if c == label_idx {
            continue;
        }
        if categorical_columns.contains(name) {
            let cats: BTreeSet<&str> = cells.iter().map(|r| r[c].as_str()).collect();
            if cats.len() > MAX_CATEGORIES {
                return Err(Error::InvalidParameter(format!(
                    "categorical column {name:?} has {} distinct values (max {MAX_CATEGORIES})",
                    cats.len()
                )));
            }
            plan.push((c, Some(cats.into_iter().map(str::to_owned).collect())));
        } else {
            plan.push((c, None));
        }
    }
    let d: usize = plan
        .iter()
        .map(|(_, cats)| cats.as_ref().map_or(1, Vec::len))
        .sum();
    let mut numeric = Vec::with_capacity(d);
    for (_, cats) in &plan {
        match cats {
            None => numeric.push(true),
            Some(c) => numeric.extend(std::iter::repeat_n(false, c.len())),
        }
    }

    let mut features = Matrix::zeros(cells.len(), d);
    for (r, row) in cells.iter().enumerate() {
        let mut out_c = 0;
        for (c, cats) in &plan {
            let raw = row[*c].as_str();
            match cats {
                None => {
                    let v: f64 = raw.trim().parse().map_err(|_| Error::UnparseableCell {
                        row: r + 2,
                        col: c + 1,
                        column: headers[*c].clone(),
                        value: raw.to_owned(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::UnparseableCell {
                            row: r + 2,
                            col: c + 1,
                            column: headers[*c].clone(),
                            value: raw.to_owned(),
                        });
                    }
                    features.set(r, out_c, v);
                    out_c += 1;
                }
                Some(cats) => {
                    let k = cats.iter().position(|x| x == raw).expect("category indexed");
                    features.set(r, out_c + k, 1.0);
                    out_c += cats.len();
                }
            }
        }
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    let ds = Dataset::from_parts(name, features, labels, numeric)?;
    Ok(normalize(&ds))
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Noise-free decision function of the synthetic task:
/// `w·x / ‖w‖ + x₀·x₁ + sin(2·x₂)` (the last term only when `d ≥ 3`).
pub fn synthetic_margin(w: &[f64], x: &[f64]) -> f64 {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let linear: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / norm;
    let mut nonlinear = x[0] * x[1];
    if x.len() >= 3 {
        nonlinear += (2.0 * x[2]).sin();
    }
    linear + nonlinear
}

/// Generating weights for a synthetic spec (drawn first from the seed stream).
pub fn synthetic_weights(spec: &SyntheticSpec) -> Vec<f64> {
    let mut r = rng::seeded(spec.seed);
    (0..spec.d).map(|_| r.sample(StandardNormal)).collect()
}

/// Seeded synthetic binary task. Features are standard normal; the label is
/// `[synthetic_margin(x) > 0]`, flipped with probability `noise`. The
/// returned features are z-scored.
pub fn make_synthetic(spec: SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec { n, d, noise, seed } = spec;
    if n < 100 {
        return Err(Error::InvalidParameter(format!("n = {n} < 100")));
    }
    if d < 2 {
        return Err(Error::InvalidParameter(format!("d = {d} < 2")));
    }
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::InvalidParameter(format!("noise {noise} not in [0, 1)")));
    }
    let mut r = rng::seeded(seed);
    let w: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
    let mut x = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        for v in x.row_mut(i) {
            *v = r.sample(StandardNormal);
        }
        let mut y = u8::from(synthetic_margin(&w, x.row(i)) > 0.0);
        if r.random::<f64>() < noise {
            y = 1 - y;
        }
        labels.push(y);
    }
    let name = format!("synthetic(n={n},d={d},noise={noise},seed={seed})");
    let ds = Dataset::from_parts(name, x, labels, vec![true; d])?;
    Ok(normalize(&ds))
}

/// Seeded row-disjoint split. Normalization is re-fit on the training rows
/// and applied to both parts.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction {} not in (0, 1)",
            spec.train_fraction
        )));
    }
    let n = ds.len();
    let n_train = (n as f64 * spec.train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidParameter(format!(
            "split of {n} rows at {} leaves an empty part",
            spec.train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(spec.seed));
    let (tr, va) = idx.split_at(n_train);

    let mut features = ds.features.clone();
    normalize_columns(&mut features, &ds.numeric, tr);
    let renormed = Dataset {
        features,
        ..ds.clone()
    };
    let train = renormed.subset(tr, format!("{}/train", ds.name));
    let val = renormed.subset(va, format!("{}/val", ds.name));
    check_both_classes(&train.labels)?;
    check_both_classes(&val.labels)?;
    Ok((train, val))
}

/// Row indices of each part of a split, for tests and diagnostics.
pub fn split_indices(n: usize, spec: SplitSpec) -> (Vec<usize>, Vec<usize>) {
    let n_train = (n as f64 * spec.train_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(spec.seed));
    let va = idx.split_off(n_train);
    (idx, va)
}

/// Parses `n=2000,d=8,noise=0.1,seed=7`.
pub fn parse_synthetic(text: &str) -> Result<SyntheticSpec> {
    let mut kv = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, got {part:?}")))?;
        kv.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    let known: HashSet<&str> = ["n", "d", "noise", "seed"].into_iter().collect();
    if let Some(k) = kv.keys().find(|k| !known.contains(k.as_str())) {
        return Err(Error::InvalidParameter(format!("unknown synthetic key {k:?}")));
    }
    let get = |k: &str| kv.get(k).map(String::as_str);
    let bad = |k: &str| Error::InvalidParameter(format!("bad value for synthetic key {k:?}"));
    Ok(SyntheticSpec {
        n: get("n").map_or(Ok(2000), |v| v.parse().map_err(|_| bad("n")))?,
        d: get("d").map_or(Ok(8), |v| v.parse().map_err(|_| bad("d")))?,
        noise: get("noise").map_or(Ok(0.1), |v| v.parse().map_err(|_| bad("noise")))?,
        seed: get("seed").map_or(Ok(0), |v| v.parse().map_err(|_| bad("seed")))?,
    })
}

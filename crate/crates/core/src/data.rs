//! Datasets, CSV ingestion and index partitions.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Error, Result};

/// A sample of `n` feature rows with labels stored as `+1.0` / `-1.0`.
///
/// Features are kept row-major. The feature bound `c_x = max |X_ij|` is
/// computed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    n: usize,
    d: usize,
    feature_bound: f64,
}

impl LabeledDataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(config("feature dimension must be at least 1"));
        }
        if !features.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: features.len() % d,
            });
        }
        let n = features.len() / d;
        if n != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        if n < 2 {
            return Err(Error::EmptyDataset);
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(config(format!("label {bad} is not +1 or -1")));
        }
        if let Some(pos) = features.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                line: pos / d + 1,
                column: pos % d,
            });
        }
        let feature_bound = features.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        Ok(Self {
            features,
            labels,
            n,
            d,
            feature_bound,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `c_x`, the largest absolute feature value.
    pub fn feature_bound(&self) -> f64 {
        self.feature_bound
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.features
            .chunks_exact(self.d)
            .zip(self.labels.iter().copied())
    }

    /// Number of positive and negative labels.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y > 0.0).count();
        (pos, self.n - pos)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(config(format!("row index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.d)
    }

    /// Appends a constant column of ones.
    pub fn with_intercept(&self) -> Self {
        let d = self.d + 1;
        let mut features = Vec::with_capacity(self.n * d);
        for row in self.features.chunks_exact(self.d) {
            features.extend_from_slice(row);
            features.push(1.0);
        }
        Self::new(features, self.labels.clone(), d).expect("intercept keeps dataset valid")
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: d,
            });
        }
        Ok(())
    }
}

/// Per-column scaling to `[-1, 1]` by the column's largest absolute value.
///
/// Fit on training data and apply the same factors to held-out data.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(ds: &LabeledDataset) -> Self {
        let mut scale = vec![0.0_f64; ds.d()];
        for (row, _) in ds.rows() {
            for (s, x) in scale.iter_mut().zip(row) {
                *s = s.max(x.abs());
            }
        }
        for s in &mut scale {
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Self { scale }
    }

    pub fn apply(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        ds.check_dim(self.scale.len())?;
        let features = ds
            .features()
            .chunks_exact(ds.d())
            .flat_map(|row| row.iter().zip(&self.scale).map(|(x, s)| x / s))
            .collect();
        LabeledDataset::new(features, ds.labels().to_vec(), ds.d())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

impl std::fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelColumn::Index(i) => write!(f, "{i}"),
            LabelColumn::Name(s) => f.write_str(s),
        }
    }
}

fn read_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push(rec);
    }
    Ok(out)
}

/// Loads a labeled dataset from a comma-separated file.
///
/// The first row is treated as a header when the label column is given by
/// name, or when any of its feature cells is not a number. Rows whose label
/// equals `positive_label` become `+1`, the other label becomes `-1`.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &LabelColumn,
    positive_label: &str,
) -> Result<LabeledDataset> {
    let records = read_records(path.as_ref())?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let width = records[0].len();

    let (label_idx, has_header) = match label_column {
        LabelColumn::Name(name) => {
            let idx = records[0]
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::LabelColumnNotFound(name.clone()))?;
            (idx, true)
        }
        LabelColumn::Index(idx) => {
            if *idx >= width {
                return Err(Error::LabelColumnNotFound(idx.to_string()));
            }
            let header = records[0]
                .iter()
                .enumerate()
                .any(|(j, cell)| j != *idx && cell.parse::<f64>().is_err());
            (*idx, header)
        }
    };
    if width < 2 {
        return Err(config("need at least one feature column besides the label"));
    }

    let body = &records[usize::from(has_header)..];
    if body.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = width - 1;
    let mut features = Vec::with_capacity(body.len() * d);
    let mut tokens = Vec::with_capacity(body.len());
    for (k, rec) in body.iter().enumerate() {
        let line = k + 1 + usize::from(has_header);
        if rec.len() != width {
            return Err(Error::RaggedRow {
                line,
                expected: width,
                found: rec.len(),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                tokens.push(cell.to_string());
                continue;
            }
            let x: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                line,
                column: j,
                value: cell.to_string(),
            })?;
            if !x.is_finite() {
                return Err(Error::NonFinite { line, column: j });
            }
            features.push(x);
        }
    }

    let distinct: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
    let distinct: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    match distinct.len() {
        0 => return Err(Error::EmptyDataset),
        1 => return Err(Error::SingleClass(distinct)),
        2 => {}
        _ => return Err(Error::TooManyClasses(distinct)),
    }
    if !distinct.iter().any(|t| t == positive_label) {
        return Err(Error::UnknownPositiveLabel(positive_label.to_string()));
    }
    let labels = tokens
        .iter()
        .map(|t| if t == positive_label { 1.0 } else { -1.0 })
        .collect();
    LabeledDataset::new(features, labels, d)
}

/// Writes features followed by a `label` column holding `1` / `-1`.
pub fn write_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..ds.d()).map(|j| format!("x{j}")).collect();
    let _ = writeln!(out, "{},label", header.join(","));
    for (row, y) in ds.rows() {
        for x in row {
            let _ = write!(out, "{x},");
        }
        let _ = writeln!(out, "{}", y as i64);
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// One train/test partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `0..n` into `k` disjoint test folds whose sizes differ by at most
/// one. Deterministic given `seed`.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > n {
        return Err(Error::FoldCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = (0..k)
        .map(|f| {
            let mut test: Vec<usize> = order.iter().copied().skip(f).step_by(k).collect();
            test.sort_unstable();
            let in_test: HashSet<usize> = test.iter().copied().collect();
            let train = (0..n).filter(|i| !in_test.contains(i)).collect();
            Fold { train, test }
        })
        .collect();
    Ok(folds)
}

/// Random train/test split with `round(test_fraction * n)` test rows.
pub fn holdout_split(n: usize, test_fraction: f64, seed: u64) -> Result<Fold> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(config("holdout fraction must lie in (0, 1)"));
    }
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(config("holdout leaves an empty train or test set"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Fold { train, test })
}

/// Observed entries of an `m1 x m2` matrix, with 0-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix {
    entries: Vec<(usize, usize, f64)>,
    m1: usize,
    m2: usize,
}

impl ObservedMatrix {
    pub fn new(entries: Vec<(usize, usize, f64)>, m1: usize, m2: usize) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(config("matrix dimensions must be positive"));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for &(row, col, value) in &entries {
            if row >= m1 || col >= m2 {
                return Err(Error::IndexOutOfRange {
                    row,
                    col,
                    rows: m1,
                    cols: m2,
                });
            }
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    line: row,
                    column: col,
                });
            }
            if !seen.insert((row, col)) {
                return Err(Error::DuplicateEntry { row, col });
            }
        }
        Ok(Self { entries, m1, m2 })
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn m1(&self) -> usize {
        self.m1
    }

    pub fn m2(&self) -> usize {
        self.m2
    }

    /// Same dimensions, restricted to the given entry positions.
    pub fn select(&self, which: &[usize]) -> Self {
        Self {
            entries: which.iter().map(|&i| self.entries[i]).collect(),
            m1: self.m1,
            m2: self.m2,
        }
    }
}

/// Reads `row,col,value` triples with 1-based indices. Dimensions default to
/// the largest index seen.
pub fn load_entries_csv(
    path: impl AsRef<Path>,
    dims: Option<(usize, usize)>,
) -> Result<ObservedMatrix> {
    let records = read_records(path.as_ref())?;
    let has_header = records
        .first()
        .map(|r| r.iter().any(|c| c.parse::<f64>().is_err()))
        .unwrap_or(false);
    let mut entries = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate().skip(usize::from(has_header)) {
        let line = k + 1;
        if rec.len() != 3 {
            return Err(Error::RaggedRow {
                line,
                expected: 3,
                found: rec.len(),
            });
        }
        let index = |j: usize| -> Result<usize> {
            let v: usize = rec[j].parse().map_err(|_| Error::NonNumeric {
                line,
                column: j,
                value: rec[j].to_string(),
            })?;
            v.checked_sub(1).ok_or(Error::NonNumeric {
                line,
                column: j,
                value: rec[j].to_string(),
            })
        };
        let value: f64 = rec[2].parse().map_err(|_| Error::NonNumeric {
            line,
            column: 2,
            value: rec[2].to_string(),
        })?;
        entries.push((index(0)?, index(1)?, value));
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (m1, m2) = dims.unwrap_or_else(|| {
        entries.iter().fold((0, 0), |(a, b), &(r, c, _)| {
            (a.max(r + 1), b.max(c + 1))
        })
    });
    ObservedMatrix::new(entries, m1, m2)
}

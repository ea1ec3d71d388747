//! Dataset handling: the synthetic benchmark generator, CSV ingestion with
//! label remapping, feature standardization and seeded partitioning.
//!
//! Randomness discipline: every consumer draws from a ChaCha8 generator
//! seeded with the user seed and switched to a dedicated stream, so the
//! synthetic generator, the partitioner, the trainer initialization and the
//! cross-validation folds never share a draw sequence.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IsborError, Result};

/// RNG stream ids (see module docs).
pub(crate) const STREAM_SYNTH: u64 = 0;
pub(crate) const STREAM_PARTITION: u64 = 1;
pub(crate) const STREAM_INIT: u64 = 2;
pub(crate) const STREAM_CV: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Feature matrix plus ordinal labels in `1..=r`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub r: usize,
    pub names: Option<Vec<String>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Check label contiguity (every category `1..=r` present, nothing out
    /// of range) and that no feature is non-finite.
    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.n() {
            return Err(IsborError::input(format!(
                "label count {} does not match row count {}",
                self.y.len(),
                self.n()
            )));
        }
        let mut seen = vec![false; self.r + 1];
        for (i, &y) in self.y.iter().enumerate() {
            if y < 1 || y > self.r {
                return Err(IsborError::input(format!(
                    "label {y} at row {i} outside 1..={}",
                    self.r
                )));
            }
            seen[y] = true;
        }
        let missing: Vec<usize> = (1..=self.r).filter(|&c| !seen[c]).collect();
        if !missing.is_empty() {
            return Err(IsborError::input(format!(
                "categories missing from dataset: {missing:?}"
            )));
        }
        for (i, row) in self.x.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(IsborError::input(format!("non-finite feature in row {i}")));
            }
        }
        Ok(())
    }

    /// Row subset (used by partitioning and cross-validation).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut x = Array2::zeros((indices.len(), self.dim()));
        let mut y = Vec::with_capacity(indices.len());
        for (out, &i) in indices.iter().enumerate() {
            x.row_mut(out).assign(&self.x.row(i));
            y.push(self.y[i]);
        }
        Dataset { x, y, r: self.r, names: self.names.clone() }
    }
}

/// Cut points of the synthetic score function.
const SYNTH_CUTS: [f64; 4] = [-60.0, -9.0, 15.0, 60.0];

/// Two-dimensional five-category benchmark: points uniform on
/// `[0,10]^2`, score `10 (x1 - 5)(x2 - 5) + eps` with
/// `eps ~ N(0, 0.5^2)`, categorized by the cut points
/// `(-inf, -60, -9, 15, 60, +inf)`. The interval masses come out near
/// (0.209, 0.213, 0.192, 0.177, 0.209).
pub fn generate_synthetic(n_total: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, STREAM_SYNTH);
    let mut x = Array2::zeros((n_total, 2));
    let mut y = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let x1: f64 = rng.gen_range(0.0..10.0);
        let x2: f64 = rng.gen_range(0.0..10.0);
        // Box-Muller with sigma = 0.5; u1 shifted into (0, 1].
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let eps = 0.5 * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        let score = 10.0 * (x1 - 5.0) * (x2 - 5.0) + eps;
        let label = 1 + SYNTH_CUTS.iter().filter(|&&c| score > c).count();
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        y.push(label);
    }
    Dataset { x, y, r: 5, names: Some(vec!["x1".into(), "x2".into()]) }
}

/// Outcome of loading a CSV file: the remapped dataset plus the original
/// label values in ascending order (`label_map[k]` is the raw label that
/// became category `k+1`).
#[derive(Debug, Clone)]
pub struct CsvDataset {
    pub dataset: Dataset,
    pub label_map: Vec<i64>,
}

/// Load a comma-separated file: numeric feature columns followed by one
/// integer label column. A header row is detected by its first field not
/// parsing as a number. Labels are remapped to contiguous `1..=r` preserving
/// their ascending order.
pub fn load_csv(path: impl AsRef<Path>) -> Result<CsvDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IsborError::parse(format!("cannot open {}: {e}", path.display())))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut names: Option<Vec<String>> = None;
    let mut width = 0usize;

    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            IsborError::parse(format!("{}: row {}: {e}", path.display(), idx + 1))
        })?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(idx as u64 + 1);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rows.is_empty() && names.is_none() {
            // Header detection on the first non-empty record.
            let is_header = record.iter().any(|f| f.parse::<f64>().is_err());
            if is_header {
                names = Some(record.iter().map(|s| s.to_string()).collect());
                continue;
            }
        }
        if width == 0 {
            width = record.len();
            if width < 2 {
                return Err(IsborError::parse(format!(
                    "{}: row {line}: need at least one feature and a label column",
                    path.display()
                )));
            }
        } else if record.len() != width {
            return Err(IsborError::parse(format!(
                "{}: row {line}: expected {width} fields, found {}",
                path.display(),
                record.len()
            )));
        }
        let mut feats = Vec::with_capacity(width - 1);
        for (col, field) in record.iter().take(width - 1).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                IsborError::parse(format!(
                    "{}: row {line}, column {}: non-numeric value {field:?}",
                    path.display(),
                    col + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(IsborError::parse(format!(
                    "{}: row {line}, column {}: non-finite value",
                    path.display(),
                    col + 1
                )));
            }
            feats.push(v);
        }
        let label_field = record.get(width - 1).unwrap_or("");
        let label_f: f64 = label_field.parse().map_err(|_| {
            IsborError::parse(format!(
                "{}: row {line}: non-numeric label {label_field:?}",
                path.display()
            ))
        })?;
        if label_f.fract() != 0.0 || !label_f.is_finite() {
            return Err(IsborError::parse(format!(
                "{}: row {line}: label {label_field:?} is not an integer",
                path.display()
            )));
        }
        rows.push(feats);
        raw_labels.push(label_f as i64);
    }

    if rows.is_empty() {
        return Err(IsborError::parse(format!(
            "{}: no data rows found",
            path.display()
        )));
    }

    let distinct: BTreeSet<i64> = raw_labels.iter().copied().collect();
    let label_map: Vec<i64> = distinct.into_iter().collect();
    let r = label_map.len();
    if r < 2 {
        return Err(IsborError::parse(format!(
            "{}: need at least two distinct labels, found {r}",
            path.display()
        )));
    }
    let y: Vec<usize> = raw_labels
        .iter()
        .map(|l| label_map.binary_search(l).expect("label present") + 1)
        .collect();

    let n = rows.len();
    let d = width - 1;
    let mut x = Array2::zeros((n, d));
    for (i, feats) in rows.iter().enumerate() {
        for (j, v) in feats.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let names = names.map(|mut h| {
        h.truncate(d);
        h
    });
    let dataset = Dataset { x, y, r, names };
    dataset.validate()?;
    Ok(CsvDataset { dataset, label_map })
}

/// Load a CSV of bare feature rows (no label column): every field must be
/// numeric. Header detection as in [`load_csv`].
pub fn load_features_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IsborError::parse(format!("cannot open {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    let mut saw_header = false;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            IsborError::parse(format!("{}: row {}: {e}", path.display(), idx + 1))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rows.is_empty() && !saw_header && record.iter().any(|f| f.parse::<f64>().is_err()) {
            saw_header = true;
            continue;
        }
        if width == 0 {
            width = record.len();
        } else if record.len() != width {
            return Err(IsborError::parse(format!(
                "{}: row {line}: expected {width} fields, found {}",
                path.display(),
                record.len()
            )));
        }
        let mut feats = Vec::with_capacity(width);
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                IsborError::parse(format!(
                    "{}: row {line}, column {}: non-numeric value {field:?}",
                    path.display(),
                    col + 1
                ))
            })?;
            feats.push(v);
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(IsborError::parse(format!("{}: no data rows found", path.display())));
    }
    let mut x = Array2::zeros((rows.len(), width));
    for (i, feats) in rows.iter().enumerate() {
        for (j, v) in feats.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    Ok(x)
}

/// Per-feature affine transform fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Standard deviation, replaced by 1 for zero-variance features so those
    /// columns are centered but not divided.
    pub scale: Vec<f64>,
}

/// Fit a zero-mean unit-variance scaler on `train` and return the
/// transformed copy together with the scaler.
pub fn standardize(train: &Dataset) -> (Dataset, Scaler) {
    let n = train.n() as f64;
    let d = train.dim();
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let col = train.x.column(j);
        let mu = col.sum() / n;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        mean[j] = mu;
        let sd = var.sqrt();
        scale[j] = if sd > 1e-12 { sd } else { 1.0 };
    }
    let scaler = Scaler { mean, scale };
    let scaled = apply_scaler(&scaler, train).expect("dimensions match by construction");
    (scaled, scaler)
}

/// Apply a fitted scaler verbatim to another dataset.
pub fn apply_scaler(scaler: &Scaler, data: &Dataset) -> Result<Dataset> {
    if scaler.mean.len() != data.dim() {
        return Err(IsborError::input(format!(
            "scaler dimension {} does not match dataset dimension {}",
            scaler.mean.len(),
            data.dim()
        )));
    }
    let mut x = data.x.clone();
    for j in 0..data.dim() {
        let mu = scaler.mean[j];
        let sc = scaler.scale[j];
        x.column_mut(j).mapv_inplace(|v| (v - mu) / sc);
    }
    Ok(Dataset { x, y: data.y.clone(), r: data.r, names: data.names.clone() })
}

/// Seeded disjoint train/test index splits: `n_partitions` independent
/// shuffles, each taking the first `train_size` indices as training rows.
pub fn partition(
    data: &Dataset,
    train_size: usize,
    n_partitions: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let n = data.n();
    if train_size == 0 || train_size >= n {
        return Err(IsborError::input(format!(
            "train_size must be in 1..{n}, got {train_size}"
        )));
    }
    let mut rng = stream_rng(seed, STREAM_PARTITION);
    let mut out = Vec::with_capacity(n_partitions);
    for _ in 0..n_partitions {
        let mut idx: Vec<usize> = (0..n).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let train = idx[..train_size].to_vec();
        let test = idx[train_size..].to_vec();
        out.push((train, test));
    }
    Ok(out)
}

/// Expected shape of one benchmark dataset, as recorded in the repository
/// manifest. Users download the files themselves; the manifest lets the
/// loader confirm the right file landed in the right slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: String,
    pub train_n: usize,
    pub test_n: usize,
    pub d: usize,
    pub r: usize,
    /// Path of the CSV relative to the manifest file, if present.
    #[serde(default)]
    pub file: Option<String>,
}

/// Read a JSON manifest listing benchmark datasets.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<BenchmarkSpec>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    serde_json::from_str(&text)
        .map_err(|e| IsborError::parse(format!("{}: {e}", path.as_ref().display())))
}

/// Validate a loaded dataset against its manifest entry: feature count and
/// category count must match exactly; the row count must equal the training
/// size, the test size, or their sum.
pub fn validate_benchmark(spec: &BenchmarkSpec, data: &Dataset) -> Result<()> {
    if data.dim() != spec.d {
        return Err(IsborError::input(format!(
            "{}: expected {} features, file has {}",
            spec.name,
            spec.d,
            data.dim()
        )));
    }
    if data.r != spec.r {
        return Err(IsborError::input(format!(
            "{}: expected {} categories, file has {}",
            spec.name, spec.r, data.r
        )));
    }
    let n = data.n();
    let allowed = [spec.train_n, spec.test_n, spec.train_n + spec.test_n];
    if !allowed.contains(&n) {
        return Err(IsborError::input(format!(
            "{}: row count {n} matches neither train ({}), test ({}) nor combined ({})",
            spec.name,
            spec.train_n,
            spec.test_n,
            spec.train_n + spec.test_n
        )));
    }
    Ok(())
}

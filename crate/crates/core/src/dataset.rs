//! Labeled feature datasets, model predictions and the `ANNE1` file format.
//!
//! # `ANNE1` layout
//!
//! ```text
//! line 0     UTF-8 JSON header terminated by '\n':
//!            {"magic":"ANNE1","n":N,"d":D,"c":C,"has_true_labels":true|false}
//! section 1  N*D little-endian f32, row-major features
//! section 2  N little-endian u32 noisy labels
//! section 3  N little-endian u32 true labels (only when has_true_labels)
//! section 4  N little-endian u64 sample ids
//! ```
//!
//! Nothing may follow section 4. A true label equal to `C` marks an
//! out-of-distribution sample.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Error;

pub const MAGIC: &str = "ANNE1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    dim: usize,
    noisy_labels: Vec<u32>,
    true_labels: Option<Vec<u32>>,
    class_count: usize,
    sample_ids: Vec<u64>,
}

impl Dataset {
    /// Build a dataset with sample ids `0..N`.
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        noisy_labels: Vec<u32>,
        true_labels: Option<Vec<u32>>,
        class_count: usize,
    ) -> Result<Self, Error> {
        let ids = (0..noisy_labels.len() as u64).collect();
        Self::with_ids(features, dim, noisy_labels, true_labels, class_count, ids)
    }

    pub fn with_ids(
        features: Vec<f32>,
        dim: usize,
        noisy_labels: Vec<u32>,
        true_labels: Option<Vec<u32>>,
        class_count: usize,
        sample_ids: Vec<u64>,
    ) -> Result<Self, Error> {
        if class_count < 2 {
            return Err(Error::InvalidSpec(format!("class_count must be >= 2, got {class_count}")));
        }
        if dim == 0 {
            return Err(Error::InvalidSpec("feature dimension must be positive".into()));
        }
        let n = noisy_labels.len();
        if features.len() != n * dim {
            return Err(Error::LengthMismatch { expected: n * dim, actual: features.len() });
        }
        if sample_ids.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: sample_ids.len() });
        }
        for (row, chunk) in features.chunks_exact(dim).enumerate() {
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature { row });
            }
        }
        for (row, &label) in noisy_labels.iter().enumerate() {
            if label as usize >= class_count {
                return Err(Error::InvalidLabel { row, label, classes: class_count });
            }
        }
        if let Some(truth) = &true_labels {
            if truth.len() != n {
                return Err(Error::LengthMismatch { expected: n, actual: truth.len() });
            }
            for (row, &label) in truth.iter().enumerate() {
                // `class_count` itself is the out-of-distribution sentinel.
                if label as usize > class_count {
                    return Err(Error::InvalidLabel { row, label, classes: class_count });
                }
            }
        }
        Ok(Self { features, dim, noisy_labels, true_labels, class_count, sample_ids })
    }

    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Sentinel true label of out-of-distribution samples.
    pub fn ood_label(&self) -> u32 {
        self.class_count as u32
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major copy of the features in 64-bit precision.
    pub fn features_f64(&self) -> Vec<f64> {
        self.features.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn noisy_labels(&self) -> &[u32] {
        &self.noisy_labels
    }

    pub fn true_labels(&self) -> Option<&[u32]> {
        self.true_labels.as_deref()
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    /// Labels to evaluate against: ground truth when known, otherwise the given labels.
    pub fn reference_labels(&self) -> &[u32] {
        self.true_labels.as_deref().unwrap_or(&self.noisy_labels)
    }

    /// Same samples, new observed labels.
    pub fn with_noisy_labels(&self, labels: Vec<u32>) -> Result<Self, Error> {
        Self::with_ids(
            self.features.clone(),
            self.dim,
            labels,
            self.true_labels.clone(),
            self.class_count,
            self.sample_ids.clone(),
        )
    }

    pub(crate) fn with_parts(&self, features: Vec<f32>, noisy: Vec<u32>, truth: Option<Vec<u32>>) -> Result<Self, Error> {
        Self::with_ids(features, self.dim, noisy, truth, self.class_count, self.sample_ids.clone())
    }

    /// Keep the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, Error> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self::with_ids(
            features,
            self.dim,
            indices.iter().map(|&i| self.noisy_labels[i]).collect(),
            self.true_labels.as_ref().map(|t| indices.iter().map(|&i| t[i]).collect()),
            self.class_count,
            indices.iter().map(|&i| self.sample_ids[i]).collect(),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    n: usize,
    d: usize,
    c: usize,
    has_true_labels: bool,
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), Error> {
    let path = path.as_ref();
    let header = Header {
        magic: MAGIC.to_string(),
        n: dataset.len(),
        d: dataset.dim,
        c: dataset.class_count,
        has_true_labels: dataset.true_labels.is_some(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    let n = dataset.len();
    bytes.reserve(n * dataset.dim * 4 + n * 16);
    for v in &dataset.features {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for l in &dataset.noisy_labels {
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    if let Some(truth) = &dataset.true_labels {
        for l in truth {
            bytes.extend_from_slice(&l.to_le_bytes());
        }
    }
    for id in &dataset.sample_ids {
        bytes.extend_from_slice(&id.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, Error> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn malformed(field: &str) -> Error {
    Error::MalformedHeader { field: field.to_string() }
}

fn decode(bytes: &[u8]) -> Result<Dataset, Error> {
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| malformed("header terminator"))?;
    let header: serde_json::Value =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| malformed(&format!("json: {e}")))?;
    let field = |name: &str| header.get(name).ok_or_else(|| malformed(name));
    if field("magic")?.as_str() != Some(MAGIC) {
        return Err(malformed("magic"));
    }
    let count = |name: &str| field(name)?.as_u64().map(|v| v as usize).ok_or_else(|| malformed(name));
    let (n, d, c) = (count("n")?, count("d")?, count("c")?);
    let has_true = field("has_true_labels")?.as_bool().ok_or_else(|| malformed("has_true_labels"))?;
    if d == 0 {
        return Err(malformed("d"));
    }
    if c < 2 {
        return Err(malformed("c"));
    }

    let payload = &bytes[newline + 1..];
    let sections: [(&'static str, usize); 4] = [
        ("features", n * d * 4),
        ("noisy_labels", n * 4),
        ("true_labels", if has_true { n * 4 } else { 0 }),
        ("sample_ids", n * 8),
    ];
    let expected: usize = sections.iter().map(|s| s.1).sum();
    if payload.len() != expected {
        let section = if payload.len() < sections[0].1 { "features" } else { "payload" };
        return Err(Error::SizeMismatch { section, expected, actual: payload.len() });
    }

    let (feat_bytes, rest) = payload.split_at(sections[0].1);
    let features: Vec<f32> = feat_bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature { row: pos / d });
    }
    let read_u32 = |b: &[u8]| -> Vec<u32> { b.chunks_exact(4).map(|x| u32::from_le_bytes(x.try_into().unwrap())).collect() };
    let (noisy_bytes, rest) = rest.split_at(sections[1].1);
    let (true_bytes, id_bytes) = rest.split_at(sections[2].1);
    let noisy = read_u32(noisy_bytes);
    let truth = has_true.then(|| read_u32(true_bytes));
    let ids = id_bytes.chunks_exact(8).map(|x| u64::from_le_bytes(x.try_into().unwrap())).collect();
    Dataset::with_ids(features, d, noisy, truth, c, ids)
}

/// Scale every feature row to unit L2 norm.
pub fn normalize_features(dataset: &Dataset) -> Result<Dataset, Error> {
    let mut out = Vec::with_capacity(dataset.features.len());
    for i in 0..dataset.len() {
        let row = dataset.row(i);
        let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector { row: i });
        }
        out.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
    }
    dataset.with_parts(out, dataset.noisy_labels.clone(), dataset.true_labels.clone())
}

/// Class-probability rows produced by a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    probs: Vec<f64>,
    classes: usize,
    pub epoch: u32,
}

impl Predictions {
    pub fn new(probs: Vec<f64>, classes: usize, epoch: u32) -> Result<Self, Error> {
        if classes == 0 || probs.len() % classes != 0 {
            return Err(Error::LengthMismatch { expected: classes, actual: probs.len() });
        }
        for (row, chunk) in probs.chunks_exact(classes).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if chunk.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidSpec(format!("prediction row {row} is not on the probability simplex")));
            }
        }
        Ok(Self { probs, classes, epoch })
    }

    pub fn from_rows(rows: &[Vec<f64>], epoch: u32) -> Result<Self, Error> {
        let classes = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != classes) {
            return Err(Error::LengthMismatch { expected: classes, actual: bad.len() });
        }
        Self::new(rows.concat(), classes, epoch)
    }

    pub fn uniform(n: usize, classes: usize, epoch: u32) -> Self {
        Self { probs: vec![1.0 / classes as f64; n * classes], classes, epoch }
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.classes)
    }

    /// Highest probability and its class, ties resolved toward the smaller class id.
    pub fn top(&self, i: usize) -> (usize, f64) {
        argmax(self.row(i))
    }

    pub fn max_probs(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.top(i).1).collect()
    }
}

/// Index and value of the maximum, first index wins ties.
pub(crate) fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

pub fn save_predictions(preds: &Predictions, path: impl AsRef<Path>) -> Result<(), Error> {
    let path = path.as_ref();
    let rows: Vec<&[f64]> = preds.rows().collect();
    let doc = serde_json::json!({ "epoch": preds.epoch, "classes": preds.classes, "probs": rows });
    fs::write(path, serde_json::to_vec(&doc)?).map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Predictions, Error> {
    #[derive(Deserialize)]
    struct Doc {
        epoch: u32,
        probs: Vec<Vec<f64>>,
    }
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let doc: Doc = serde_json::from_slice(&bytes)?;
    Predictions::from_rows(&doc.probs, doc.epoch)
}

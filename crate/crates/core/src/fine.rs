//! Eigenvector filtering of the high-confidence subset.
//!
//! For every class, the dominant eigenvector of the Gram matrix
//! `(1/m) F^T F` of that class's unit-norm features is found by power
//! iteration. A sample is kept as clean when the squared inner product of its
//! feature with its class eigenvector reaches `gamma_e`.

use serde::{Deserialize, Serialize};

use crate::aknn::dot;
use crate::dataset::Dataset;
use crate::Error;

pub const MAX_ITERATIONS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub vector: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Per-class eigenpairs; `None` for classes with fewer than two members.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassEigenbasis {
    pub classes: Vec<Option<Eigenpair>>,
    pub counts: Vec<usize>,
}

/// `(1/m) F^T F` for a row-major `m x d` matrix.
pub fn gram_matrix(rows: &[f64], dim: usize) -> Vec<f64> {
    let m = rows.len() / dim;
    let mut g = vec![0.0; dim * dim];
    for r in rows.chunks_exact(dim) {
        for a in 0..dim {
            let ra = r[a];
            if ra == 0.0 {
                continue;
            }
            let out = &mut g[a * dim..(a + 1) * dim];
            for (o, &rb) in out.iter_mut().zip(r) {
                *o += ra * rb;
            }
        }
    }
    for v in &mut g {
        *v /= m as f64;
    }
    g
}

fn mat_vec(mat: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (a, o) in out.iter_mut().enumerate() {
        *o = dot(&mat[a * d..(a + 1) * d], v);
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Top eigenpair of `(1/m) F^T F` for the `m x dim` row-major `class_features`.
///
/// Starts from the normalised class mean (first basis vector if the mean
/// vanishes) and stops when successive iterates differ by less than `1e-10`.
/// The sign is fixed so the largest-magnitude component is positive.
pub fn class_dominant_eigenvector(class_features: &[f64], dim: usize) -> Result<Eigenpair, Error> {
    let m = if dim == 0 { 0 } else { class_features.len() / dim };
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, available: m });
    }
    let gram = gram_matrix(class_features, dim);
    let mut v = vec![0.0; dim];
    for r in class_features.chunks_exact(dim) {
        v.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    if normalize(&mut v) < 1e-12 * m as f64 {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
    }
    let mut next = vec![0.0; dim];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        mat_vec(&gram, &v, &mut next);
        if normalize(&mut next) == 0.0 {
            // start vector lies in the null space; restart on the basis vector with the largest diagonal
            let best = (0..dim).max_by(|&a, &b| gram[a * dim + a].total_cmp(&gram[b * dim + b])).unwrap();
            next.iter_mut().for_each(|x| *x = 0.0);
            next[best] = 1.0;
        }
        let diff = v.iter().zip(&next).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        std::mem::swap(&mut v, &mut next);
        if diff < TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations });
    }
    let pivot = (0..dim).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    mat_vec(&gram, &v, &mut next);
    let value = dot(&v, &next).max(0.0);
    Ok(Eigenpair { vector: v, value, iterations })
}

/// `<f, u>^2` for unit vectors, clamped to `[0, 1]`.
pub fn alignment_score(f: &[f64], u: &[f64]) -> Result<f64, Error> {
    if f.len() != u.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), actual: f.len() });
    }
    for v in [f, u] {
        let norm = dot(v, v).sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(Error::NotNormalized { norm });
        }
    }
    Ok(dot(f, u).powi(2).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FineOutcome {
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
    /// Sorted subset the selection ran on.
    pub subset: Vec<usize>,
    /// Alignment score per subset member; `None` for pass-through classes.
    pub scores: Vec<Option<f64>>,
    pub basis: ClassEigenbasis,
}

/// Eigenvector filtering of `subset`, grouped by the dataset's current labels.
pub fn fine_select(subset: &[usize], dataset: &Dataset, gamma_e: f64) -> Result<FineOutcome, Error> {
    if !(0.0..=1.0).contains(&gamma_e) {
        return Err(Error::InvalidThreshold { name: "gamma_e", value: gamma_e });
    }
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let mut subset = subset.to_vec();
    subset.sort_unstable();
    subset.dedup();
    let (c, d) = (dataset.class_count(), dataset.dim());
    let labels = dataset.noisy_labels();
    let row = |i: usize| -> Vec<f64> { dataset.row(i).iter().map(|&v| f64::from(v)).collect() };

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for &i in &subset {
        members[labels[i] as usize].push(i);
    }
    let mut basis = ClassEigenbasis { classes: Vec::with_capacity(c), counts: Vec::with_capacity(c) };
    for group in &members {
        basis.counts.push(group.len());
        if group.len() < 2 {
            basis.classes.push(None);
            continue;
        }
        let rows: Vec<f64> = group.iter().flat_map(|&i| row(i)).collect();
        basis.classes.push(Some(class_dominant_eigenvector(&rows, d)?));
    }

    let mut out = FineOutcome { subset: subset.clone(), ..Default::default() };
    for &i in &subset {
        match &basis.classes[labels[i] as usize] {
            None => {
                out.clean.push(i);
                out.scores.push(None);
            }
            Some(pair) => {
                let score = alignment_score(&row(i), &pair.vector)?;
                if score >= gamma_e {
                    out.clean.push(i);
                } else {
                    out.noisy.push(i);
                }
                out.scores.push(Some(score));
            }
        }
    }
    out.basis = basis;
    Ok(out)
}

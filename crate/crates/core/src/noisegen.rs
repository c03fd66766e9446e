//! Synthetic embedding clusters and label-noise injection.
//!
//! Symmetric, asymmetric and open-set corruption select exactly
//! `floor(rate * N)` samples: candidates are ordered by a keyed hash of
//! `(seed, sample_id)` and the first ones are corrupted. Instance-dependent
//! noise draws a per-sample flip rate instead. Every random draw comes from a
//! stream keyed by the sample id, so results never depend on iteration order.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::rng::{self, purpose};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
    InstanceDependent,
    OpensetCombined,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "symmetric" | "sym" => Ok(Self::Symmetric),
            "asymmetric" | "asym" => Ok(Self::Asymmetric),
            "instance_dependent" | "idn" => Ok(Self::InstanceDependent),
            "openset_combined" | "openset" => Ok(Self::OpensetCombined),
            other => Err(Error::Config(format!("noise.kind: unknown noise kind '{other}'"))),
        }
    }
}

/// Class-to-class flip targets. `None` leaves a class untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap(pub Vec<Option<u32>>);

impl ClassMap {
    /// `c -> (c + 1) mod C`.
    pub fn cyclic(classes: usize) -> Self {
        Self((0..classes).map(|c| Some(((c + 1) % classes) as u32)).collect())
    }

    pub fn target(&self, class: u32) -> Option<u32> {
        self.0.get(class as usize).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub mapping: Option<ClassMap>,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "one")]
    pub omega: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn symmetric(eta: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::Symmetric, eta, mapping: None, rho: 0.0, omega: 1.0, seed }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::InvalidSpec(format!("eta must lie in [0, 1), got {}", self.eta)));
        }
        if self.kind == NoiseKind::OpensetCombined {
            let closed = self.rho * self.omega;
            let open = self.rho * (1.0 - self.omega);
            if !(0.0..=1.0).contains(&closed) || !(0.0..=1.0).contains(&open) || !(0.0..=1.0).contains(&self.omega) {
                return Err(Error::InvalidSpec(format!(
                    "rho = {} and omega = {} give closed/open rates outside [0, 1]",
                    self.rho, self.omega
                )));
            }
        }
        Ok(())
    }

    /// Corrupt `dataset` according to this spec. Open-set noise needs `ood_pool`.
    pub fn apply(&self, dataset: &Dataset, ood_pool: Option<&Dataset>) -> Result<Dataset, Error> {
        self.validate()?;
        match self.kind {
            NoiseKind::Symmetric => inject_symmetric(dataset, self.eta, self.seed),
            NoiseKind::Asymmetric => {
                let map = self.mapping.clone().unwrap_or_else(|| ClassMap::cyclic(dataset.class_count()));
                inject_asymmetric(dataset, self.eta, &map, self.seed)
            }
            NoiseKind::InstanceDependent => inject_instance_dependent(dataset, self.eta, self.seed),
            NoiseKind::OpensetCombined => {
                let pool = ood_pool.ok_or_else(|| Error::Config("open-set noise requires an OOD pool".into()))?;
                inject_openset(dataset, pool, self.rho, self.omega, self.seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub class_count: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub centroid_separation: f64,
    pub intra_class_std: f64,
    #[serde(default)]
    pub ood_class_count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ClusterSpec {
    /// 10 classes in 32 dimensions, 1000 samples per class, separation / std = 4,
    /// with two extra clusters reserved as an out-of-distribution source.
    pub fn standard(seed: u64) -> Self {
        Self {
            class_count: 10,
            dim: 32,
            samples_per_class: 1000,
            centroid_separation: 4.0,
            intra_class_std: 1.0,
            ood_class_count: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.class_count < 2 {
            return bad("class_count must be at least 2");
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive");
        }
        if !(self.centroid_separation > 0.0) || !self.centroid_separation.is_finite() {
            return bad("centroid_separation must be positive");
        }
        if !(self.intra_class_std >= 0.0) || !self.intra_class_std.is_finite() {
            return bad("intra_class_std must be non-negative");
        }
        Ok(())
    }

    /// Means of the in-distribution classes followed by the OOD clusters.
    ///
    /// When every cluster fits on its own axis the means are `s / sqrt(2) * e_k`,
    /// pairwise exactly `s` apart. Otherwise random Gaussian points are rescaled
    /// so that their closest pair is `s` apart.
    pub fn centroids(&self) -> Vec<Vec<f64>> {
        let total = self.class_count + self.ood_class_count;
        let sep = self.centroid_separation;
        if total <= self.dim {
            return (0..total)
                .map(|k| {
                    let mut v = vec![0.0; self.dim];
                    v[k] = sep / std::f64::consts::SQRT_2;
                    v
                })
                .collect();
        }
        let mut rng = rng::stream(self.seed, &[purpose::CLUSTER, u64::MAX]);
        loop {
            let pts: Vec<Vec<f64>> =
                (0..total).map(|_| (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
            let mut min_dist = f64::INFINITY;
            for a in 0..total {
                for b in a + 1..total {
                    min_dist = min_dist.min(euclidean(&pts[a], &pts[b]));
                }
            }
            if min_dist > 1e-9 {
                let scale = sep / min_dist;
                // guard against rounding dropping a pair just below `sep`
                let scale = scale * (1.0 + 1e-12);
                return pts.into_iter().map(|p| p.into_iter().map(|v| v * scale).collect()).collect();
            }
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn sample_cluster(
    centroids: &[Vec<f64>],
    spec: &ClusterSpec,
    clusters: std::ops::Range<usize>,
    per_cluster: usize,
    stream_purpose: u64,
    id_offset: u64,
) -> (Vec<f32>, Vec<u32>, Vec<u64>) {
    let mut features = Vec::with_capacity(clusters.len() * per_cluster * spec.dim);
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (local, k) in clusters.enumerate() {
        for s in 0..per_cluster {
            let id = id_offset + (local * per_cluster + s) as u64;
            let mut rng = rng::stream(spec.seed, &[stream_purpose, id]);
            for &m in &centroids[k] {
                let z: f64 = rng.sample(StandardNormal);
                features.push((m + spec.intra_class_std * z) as f32);
            }
            labels.push(local as u32);
            ids.push(id);
        }
    }
    (features, labels, ids)
}

/// Clean Gaussian clusters, one per class, with `true_labels == noisy_labels`.
pub fn generate_clusters(spec: &ClusterSpec) -> Result<Dataset, Error> {
    spec.validate()?;
    let centroids = spec.centroids();
    let (f, y, ids) = sample_cluster(&centroids, spec, 0..spec.class_count, spec.samples_per_class, purpose::CLUSTER, 0);
    Dataset::with_ids(f, spec.dim, y.clone(), Some(y), spec.class_count, ids)
}

/// A held-out clean sample from the same class means as [`generate_clusters`].
pub fn generate_test_split(spec: &ClusterSpec, per_class: usize) -> Result<Dataset, Error> {
    spec.validate()?;
    if per_class == 0 {
        return Err(Error::InvalidSpec("test samples per class must be positive".into()));
    }
    let centroids = spec.centroids();
    let (f, y, ids) = sample_cluster(&centroids, spec, 0..spec.class_count, per_class, purpose::TEST_SPLIT, 0);
    Dataset::with_ids(f, spec.dim, y.clone(), Some(y), spec.class_count, ids)
}

/// Samples from the extra OOD clusters. Labels index the OOD cluster.
pub fn generate_ood_pool(spec: &ClusterSpec, per_cluster: usize) -> Result<Dataset, Error> {
    spec.validate()?;
    if spec.ood_class_count == 0 {
        return Err(Error::InvalidSpec("ood_class_count must be positive to build an OOD pool".into()));
    }
    let centroids = spec.centroids();
    let range = spec.class_count..spec.class_count + spec.ood_class_count;
    let (f, y, ids) = sample_cluster(&centroids, spec, range, per_cluster, purpose::OPENSET_SAMPLE, 1 << 40);
    Dataset::with_ids(f, spec.dim, y, None, spec.ood_class_count.max(2), ids)
}

fn floor_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64) + 1e-9).floor() as usize
}

/// Candidates ordered by a keyed hash of their sample id.
fn keyed_order(dataset: &Dataset, candidates: &[usize], seed: u64, tag: u64) -> Vec<usize> {
    let ids = dataset.sample_ids();
    let mut keyed: Vec<(u64, usize)> =
        candidates.iter().map(|&i| (rng::derive_key(seed, &[tag, ids[i]]), i)).collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

fn require_truth(dataset: &Dataset) -> Result<&[u32], Error> {
    dataset.true_labels().ok_or(Error::MissingTrueLabels)
}

fn check_rate(name: &'static str, v: f64) -> Result<(), Error> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidThreshold { name, value: v })
    }
}

/// A uniformly random class different from `class`.
fn other_class(rng: &mut impl Rng, class: u32, classes: usize) -> u32 {
    let r = rng.gen_range(0..classes as u32 - 1);
    if r >= class {
        r + 1
    } else {
        r
    }
}

/// Flip `floor(eta * N)` labels, each to a uniformly random other class.
pub fn inject_symmetric(dataset: &Dataset, eta: f64, seed: u64) -> Result<Dataset, Error> {
    let truth = require_truth(dataset)?;
    check_rate("eta", eta)?;
    let eligible: Vec<usize> = (0..dataset.len()).filter(|&i| truth[i] < dataset.ood_label()).collect();
    let mut labels = dataset.noisy_labels().to_vec();
    let chosen = floor_count(eta, eligible.len());
    for &i in keyed_order(dataset, &eligible, seed, purpose::SYMMETRIC).iter().take(chosen) {
        let mut rng = rng::stream(seed, &[purpose::SYMMETRIC, dataset.sample_ids()[i], 1]);
        labels[i] = other_class(&mut rng, truth[i], dataset.class_count());
    }
    dataset.with_noisy_labels(labels)
}

/// Flip `floor(eta * N_eligible)` labels of mapped classes to their mapped target.
pub fn inject_asymmetric(dataset: &Dataset, eta: f64, mapping: &ClassMap, seed: u64) -> Result<Dataset, Error> {
    let truth = require_truth(dataset)?;
    check_rate("eta", eta)?;
    if mapping.0.len() != dataset.class_count() {
        return Err(Error::LengthMismatch { expected: dataset.class_count(), actual: mapping.0.len() });
    }
    for (c, t) in mapping.0.iter().enumerate() {
        match t {
            Some(t) if *t as usize == c && eta > 0.0 => return Err(Error::InvalidMapping { class: c }),
            Some(t) if *t as usize >= dataset.class_count() => {
                return Err(Error::InvalidSpec(format!("mapping target {t} of class {c} is out of range")))
            }
            _ => {}
        }
    }
    let eligible: Vec<usize> = (0..dataset.len())
        .filter(|&i| truth[i] < dataset.ood_label() && mapping.target(truth[i]).is_some())
        .collect();
    let mut labels = dataset.noisy_labels().to_vec();
    let chosen = floor_count(eta, eligible.len());
    for &i in keyed_order(dataset, &eligible, seed, purpose::ASYMMETRIC).iter().take(chosen) {
        labels[i] = mapping.target(truth[i]).expect("eligible samples have a target");
    }
    dataset.with_noisy_labels(labels)
}

/// Class means computed from the true labels; empty classes get `None`.
pub fn class_centroids(dataset: &Dataset) -> Result<Vec<Option<Vec<f64>>>, Error> {
    let truth = require_truth(dataset)?;
    let (c, d) = (dataset.class_count(), dataset.dim());
    let mut sums = vec![vec![0.0; d]; c];
    let mut counts = vec![0usize; c];
    for (i, &t) in truth.iter().enumerate() {
        if (t as usize) < c {
            counts[t as usize] += 1;
            for (s, &v) in sums[t as usize].iter_mut().zip(dataset.row(i)) {
                *s += f64::from(v);
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
        .collect())
}

/// Per-sample flip rate `q_i ~ N(eta, (eta/4)^2)` truncated to `[0, 1)`.
/// A flipped sample takes the class whose centroid is nearest to it among
/// the classes other than its true one.
pub fn inject_instance_dependent(dataset: &Dataset, eta: f64, seed: u64) -> Result<Dataset, Error> {
    let truth = require_truth(dataset)?;
    check_rate("eta", eta)?;
    let mut labels = dataset.noisy_labels().to_vec();
    if eta == 0.0 {
        return dataset.with_noisy_labels(labels);
    }
    let centroids = class_centroids(dataset)?;
    let rate = Normal::new(eta, eta / 4.0).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    for i in 0..dataset.len() {
        let t = truth[i];
        if t >= dataset.ood_label() {
            continue;
        }
        let mut rng = rng::stream(seed, &[purpose::INSTANCE, dataset.sample_ids()[i]]);
        let q = loop {
            let q = rate.sample(&mut rng);
            if (0.0..1.0).contains(&q) {
                break q;
            }
        };
        if rng.gen::<f64>() >= q {
            continue;
        }
        let x: Vec<f64> = dataset.row(i).iter().map(|&v| f64::from(v)).collect();
        let target = centroids
            .iter()
            .enumerate()
            .filter(|(c, m)| *c != t as usize && m.is_some())
            .map(|(c, m)| (c, euclidean(&x, m.as_ref().unwrap())))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some((c, _)) = target {
            labels[i] = c as u32;
        }
    }
    dataset.with_noisy_labels(labels)
}

/// Closed-set flips on `floor(rho * omega * N)` samples plus feature
/// replacement from `ood_pool` on a disjoint `floor(rho * (1 - omega) * N)`.
/// Replaced samples carry a random in-distribution label and the OOD
/// sentinel as their true label.
pub fn inject_openset(dataset: &Dataset, ood_pool: &Dataset, rho: f64, omega: f64, seed: u64) -> Result<Dataset, Error> {
    let truth = require_truth(dataset)?.to_vec();
    if ood_pool.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch { expected: dataset.dim(), actual: ood_pool.dim() });
    }
    let spec = NoiseSpec { kind: NoiseKind::OpensetCombined, eta: 0.0, mapping: None, rho, omega, seed };
    spec.validate()?;
    let n = dataset.len();
    let n_closed = floor_count(rho * omega, n);
    let n_open = floor_count(rho * (1.0 - omega), n);
    if n_open > ood_pool.len() {
        return Err(Error::InsufficientOodPool { needed: n_open, available: ood_pool.len() });
    }
    let all: Vec<usize> = (0..n).filter(|&i| truth[i] < dataset.ood_label()).collect();
    if n_closed + n_open > all.len() {
        return Err(Error::InvalidSpec("rho exceeds the number of in-distribution samples".into()));
    }
    let order = keyed_order(dataset, &all, seed, purpose::OPENSET_SELECT);

    let mut labels = dataset.noisy_labels().to_vec();
    let mut new_truth = truth.clone();
    let mut features = dataset.features().to_vec();
    let d = dataset.dim();
    for &i in &order[..n_closed] {
        let mut rng = rng::stream(seed, &[purpose::SYMMETRIC, dataset.sample_ids()[i], 1]);
        labels[i] = other_class(&mut rng, truth[i], dataset.class_count());
    }
    let mut pool_rows: Vec<usize> = (0..ood_pool.len()).collect();
    pool_rows.shuffle(&mut rng::stream(seed, &[purpose::OPENSET_SAMPLE, u64::MAX]));
    for (&i, &src) in order[n_closed..n_closed + n_open].iter().zip(&pool_rows) {
        features[i * d..(i + 1) * d].copy_from_slice(ood_pool.row(src));
        let mut rng = rng::stream(seed, &[purpose::OPENSET_SAMPLE, dataset.sample_ids()[i]]);
        labels[i] = rng.gen_range(0..dataset.class_count() as u32);
        new_truth[i] = dataset.ood_label();
    }
    dataset.with_parts(features, labels, Some(new_truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> Dataset {
        generate_clusters(&ClusterSpec {
            class_count: 4,
            dim: 6,
            samples_per_class: 50,
            centroid_separation: 5.0,
            intra_class_std: 1.0,
            ood_class_count: 1,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn clusters_are_deterministic_and_clean() {
        let a = small(3);
        assert_eq!(a, small(3));
        assert_eq!(a.true_labels().unwrap(), a.noisy_labels());
        assert_ne!(a.features(), small(4).features());
    }

    #[test]
    fn zero_samples_is_invalid() {
        let mut spec = ClusterSpec::standard(0);
        spec.samples_per_class = 0;
        assert!(matches!(generate_clusters(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn random_centroids_respect_separation() {
        let spec = ClusterSpec {
            class_count: 12,
            dim: 3,
            samples_per_class: 1,
            centroid_separation: 2.5,
            intra_class_std: 0.1,
            ood_class_count: 0,
            seed: 9,
        };
        let c = spec.centroids();
        for a in 0..c.len() {
            for b in a + 1..c.len() {
                assert!(euclidean(&c[a], &c[b]) >= 2.5);
            }
        }
    }

    #[test]
    fn zero_rates_are_identity() {
        let ds = small(1);
        assert_eq!(inject_symmetric(&ds, 0.0, 5).unwrap(), ds);
        assert_eq!(inject_asymmetric(&ds, 0.0, &ClassMap::cyclic(4), 5).unwrap(), ds);
        assert_eq!(inject_instance_dependent(&ds, 0.0, 5).unwrap(), ds);
        let pool = generate_ood_pool(&ClusterSpec { seed: 1, ..small_spec() }, 10).unwrap();
        assert_eq!(inject_openset(&ds, &pool, 0.0, 0.5, 5).unwrap(), ds);
    }

    fn small_spec() -> ClusterSpec {
        ClusterSpec {
            class_count: 4,
            dim: 6,
            samples_per_class: 50,
            centroid_separation: 5.0,
            intra_class_std: 1.0,
            ood_class_count: 1,
            seed: 0,
        }
    }

    #[test]
    fn binary_symmetric_flips_to_other_class() {
        let mut spec = small_spec();
        spec.class_count = 2;
        let ds = generate_clusters(&spec).unwrap();
        let noisy = inject_symmetric(&ds, 0.9, 2).unwrap();
        let flipped = noisy.noisy_labels().iter().zip(ds.noisy_labels()).filter(|(a, b)| a != b).count();
        assert_eq!(flipped, 90);
    }

    #[test]
    fn self_loop_mapping_is_rejected() {
        let ds = small(1);
        let mut map = ClassMap::cyclic(4);
        map.0[3] = Some(3);
        assert!(matches!(inject_asymmetric(&ds, 0.3, &map, 1), Err(Error::InvalidMapping { class: 3 })));
        map.0[3] = None;
        let out = inject_asymmetric(&ds, 0.3, &map, 1).unwrap();
        let truth = ds.true_labels().unwrap();
        for (i, &l) in out.noisy_labels().iter().enumerate() {
            if truth[i] == 3 {
                assert_eq!(l, 3);
            }
        }
    }

    #[test]
    fn noise_requires_truth() {
        let ds = Dataset::new(vec![1.0, 0.0, 0.0, 1.0], 2, vec![0, 1], None, 2).unwrap();
        assert!(matches!(inject_symmetric(&ds, 0.2, 0), Err(Error::MissingTrueLabels)));
        assert!(matches!(inject_instance_dependent(&ds, 0.2, 0), Err(Error::MissingTrueLabels)));
    }

    #[test]
    fn features_only_change_in_openset_replacement() {
        let ds = small(2);
        for out in [
            inject_symmetric(&ds, 0.4, 1).unwrap(),
            inject_asymmetric(&ds, 0.4, &ClassMap::cyclic(4), 1).unwrap(),
            inject_instance_dependent(&ds, 0.4, 1).unwrap(),
        ] {
            assert_eq!(out.features(), ds.features());
        }
        let pool = generate_ood_pool(&small_spec(), 100).unwrap();
        let out = inject_openset(&ds, &pool, 0.5, 0.5, 1).unwrap();
        let truth = out.true_labels().unwrap();
        for i in 0..ds.len() {
            if truth[i] != out.ood_label() {
                assert_eq!(out.row(i), ds.row(i));
            } else {
                assert_ne!(out.row(i), ds.row(i));
            }
        }
    }

    #[test]
    fn openset_rejects_bad_inputs() {
        let ds = small(2);
        let mut spec = small_spec();
        spec.dim = 5;
        let wrong_dim = generate_ood_pool(&spec, 10).unwrap();
        assert!(matches!(inject_openset(&ds, &wrong_dim, 0.5, 0.5, 1), Err(Error::DimensionMismatch { .. })));
        let tiny = generate_ood_pool(&small_spec(), 3).unwrap();
        assert!(matches!(inject_openset(&ds, &tiny, 0.5, 0.5, 1), Err(Error::InsufficientOodPool { .. })));
    }

    #[test]
    fn noise_kind_parsing() {
        assert_eq!("sym".parse::<NoiseKind>().unwrap(), NoiseKind::Symmetric);
        assert!(matches!("bogus".parse::<NoiseKind>(), Err(Error::Config(_))));
    }
}

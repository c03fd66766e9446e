//! High/low confidence split of the training set.
//!
//! The threshold maximises the ratio of between-group to within-group spread
//! of the maximum class probability,
//!
//! ```text
//!   n_h (mu_h - mu)^2 + n_l (mu_l - mu)^2
//!   -------------------------------------
//!        n_h sigma_h^2 + n_l sigma_l^2
//! ```
//!
//! evaluated on the grid `{0.000, 0.001, ..., 1.000}`. A sample belongs to the
//! high-confidence side when its score is `>= tau`. Grid points that leave a
//! side empty are skipped. A zero denominator with a positive numerator (two
//! internally constant groups) scores `+inf`; zero over zero is skipped. Ties
//! go to the smaller threshold.

use serde::{Deserialize, Serialize};

use crate::dataset::Predictions;
use crate::Error;

pub const GRID_STEPS: usize = 1000;

/// Grid point `k / 1000`.
pub fn grid_point(k: usize) -> f64 {
    k as f64 / GRID_STEPS as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePartition {
    pub tau: f64,
    pub hcs: Vec<usize>,
    pub lcs1: Vec<usize>,
    pub lcs2: Vec<usize>,
    pub mu_hcs: f64,
    pub sigma_hcs: f64,
    pub mu_lcs: f64,
    pub sigma_lcs: f64,
    pub mu_all: f64,
    pub objective_value: f64,
}

impl ConfidencePartition {
    /// `lcs1 ∪ lcs2`, sorted.
    pub fn lcs(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.lcs1.iter().chain(&self.lcs2).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Mean and population standard deviation of a sorted, nonempty slice.
fn group_stats(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    if sorted[0] == sorted[sorted.len() - 1] {
        return (sorted[0], 0.0);
    }
    let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn objective(low: &[f64], high: &[f64], mu_all: f64) -> Option<f64> {
    let (ml, sl) = group_stats(low);
    let (mh, sh) = group_stats(high);
    let (nl, nh) = (low.len() as f64, high.len() as f64);
    let between = nh * (mh - mu_all).powi(2) + nl * (ml - mu_all).powi(2);
    let within = nh * sh * sh + nl * sl * sl;
    if within > 0.0 {
        Some(between / within)
    } else if between > 0.0 {
        Some(f64::INFINITY)
    } else {
        None
    }
}

struct Scan {
    tau: f64,
    split: usize,
    value: f64,
}

fn scan(scores: &[f64]) -> Result<(Vec<f64>, Scan), Error> {
    if scores.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, available: scores.len() });
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidThreshold { name: "score", value: *bad });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mu_all = sorted.iter().sum::<f64>() / sorted.len() as f64;

    let mut best: Option<Scan> = None;
    let mut last: Option<(usize, Option<f64>)> = None;
    for k in 0..=GRID_STEPS {
        let tau = grid_point(k);
        // sorted[..split] < tau <= sorted[split..]
        let split = sorted.partition_point(|&s| s < tau);
        if split == 0 || split == sorted.len() {
            continue;
        }
        let value = match last {
            Some((s, v)) if s == split => v,
            _ => objective(&sorted[..split], &sorted[split..], mu_all),
        };
        last = Some((split, value));
        if let Some(v) = value {
            if best.as_ref().map_or(true, |b| v > b.value) {
                best = Some(Scan { tau, split, value: v });
            }
        }
    }
    best.map(|b| (sorted, b)).ok_or(Error::DegenerateScores)
}

/// Grid threshold maximising the between/within ratio.
pub fn otsu_threshold(scores: &[f64]) -> Result<f64, Error> {
    scan(scores).map(|(_, s)| s.tau)
}

/// Otsu split on each row's maximum probability, with the low side cut again
/// at its own mean into `lcs1` (at or above the mean) and `lcs2` (below).
pub fn split_confidence(preds: &Predictions) -> Result<ConfidencePartition, Error> {
    let scores = preds.max_probs();
    split_scores(&scores)
}

pub fn split_scores(scores: &[f64]) -> Result<ConfidencePartition, Error> {
    let (sorted, best) = scan(scores)?;
    let (mu_lcs, sigma_lcs) = group_stats(&sorted[..best.split]);
    let (mu_hcs, sigma_hcs) = group_stats(&sorted[best.split..]);
    let mu_all = sorted.iter().sum::<f64>() / sorted.len() as f64;

    let mut hcs = Vec::new();
    let mut lcs1 = Vec::new();
    let mut lcs2 = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        if s >= best.tau {
            hcs.push(i);
        } else if s >= mu_lcs {
            lcs1.push(i);
        } else {
            lcs2.push(i);
        }
    }
    Ok(ConfidencePartition {
        tau: best.tau,
        hcs,
        lcs1,
        lcs2,
        mu_hcs,
        sigma_hcs,
        mu_lcs,
        sigma_lcs,
        mu_all,
        objective_value: best.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfectly_bimodal_scores() {
        let scores = [0.1, 0.1, 0.1, 0.9, 0.9, 0.9];
        let tau = otsu_threshold(&scores).unwrap();
        assert!(tau > 0.1 && tau <= 0.9, "tau = {tau}");
        assert_eq!(tau, 0.101);
        let part = split_scores(&scores).unwrap();
        assert_eq!(part.hcs, vec![3, 4, 5]);
        assert_eq!(part.lcs(), vec![0, 1, 2]);
        assert!(part.objective_value.is_infinite());
    }

    #[test]
    fn constant_scores_are_degenerate() {
        assert!(matches!(otsu_threshold(&[0.5; 10]), Err(Error::DegenerateScores)));
    }

    #[test]
    fn one_hot_predictions_are_degenerate() {
        let preds = Predictions::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]], 0).unwrap();
        assert!(matches!(split_confidence(&preds), Err(Error::DegenerateScores)));
    }

    #[test]
    fn bimodal_predictions_with_two_classes() {
        let rows: Vec<Vec<f64>> = [0.55, 0.6, 0.58, 0.97, 0.99, 0.95].iter().map(|&p| vec![p, 1.0 - p]).collect();
        let preds = Predictions::from_rows(&rows, 0).unwrap();
        let part = split_confidence(&preds).unwrap();
        assert_eq!(part.hcs, vec![3, 4, 5]);
        assert_eq!(part.lcs(), vec![0, 1, 2]);
        // mean of the low group is 0.5766..., 0.58 and 0.6 sit at or above it
        assert_eq!(part.lcs1, vec![1, 2]);
        assert_eq!(part.lcs2, vec![0]);
    }

    #[test]
    fn scores_outside_unit_interval_are_rejected() {
        assert!(otsu_threshold(&[0.2, 1.5]).is_err());
        assert!(otsu_threshold(&[0.2]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut scores in proptest::collection::vec(0.0f64..=1.0, 2..200), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let a = otsu_threshold(&scores);
            scores.shuffle(&mut crate::rng::stream(seed, &[]));
            let b = otsu_threshold(&scores);
            match (a, b) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "{:?}", other),
            }
        }

        #[test]
        fn partition_invariants(scores in proptest::collection::vec(0.0f64..=1.0, 2..300)) {
            if let Ok(p) = split_scores(&scores) {
                let mut all: Vec<usize> = p.hcs.iter().chain(&p.lcs1).chain(&p.lcs2).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..scores.len()).collect::<Vec<_>>());
                prop_assert!(p.hcs.iter().all(|&i| scores[i] >= p.tau));
                prop_assert!(p.lcs1.iter().all(|&i| p.mu_lcs <= scores[i] && scores[i] < p.tau));
                prop_assert!(p.lcs2.iter().all(|&i| scores[i] < p.mu_lcs));
                let lcs = p.lcs();
                let mean = lcs.iter().map(|&i| scores[i]).sum::<f64>() / lcs.len() as f64;
                prop_assert!((mean - p.mu_lcs).abs() < 1e-9);
                let mut rev = scores.clone();
                rev.reverse();
                let q = split_scores(&rev).unwrap();
                prop_assert_eq!(q.tau, p.tau);
                prop_assert_eq!(q.hcs.len(), p.hcs.len());
            }
        }
    }
}

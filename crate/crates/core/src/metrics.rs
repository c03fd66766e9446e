//! Selection quality and test accuracy.
//!
//! A training sample is truly clean when its given label equals its true
//! label. Samples whose true label is the out-of-distribution sentinel are
//! never clean. `clean_rate` instead checks the label the selector trains
//! the sample under, which differs from precision only after relabelling.

use serde::{Deserialize, Serialize};

use crate::confidence::ConfidencePartition;
use crate::dataset::{argmax, Dataset};
use crate::pipeline::SelectionResult;
use crate::trainer::SoftmaxModel;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Precision and recall of the noisy side against truly noisy samples.
    pub noisy_precision: f64,
    pub noisy_recall: f64,
    pub clean_rate: f64,
    pub selection_size: usize,
    pub truly_clean: usize,
    pub true_positives: usize,
}

impl SelectionMetrics {
    /// Precision is 0 for an empty selection; recall is 0 when nothing is truly clean.
    pub fn from_masks(selected: &[bool], truly_clean: &[bool]) -> Result<Self, Error> {
        if selected.len() != truly_clean.len() {
            return Err(Error::LengthMismatch { expected: truly_clean.len(), actual: selected.len() });
        }
        let n = selected.len();
        let tp = selected.iter().zip(truly_clean).filter(|(s, t)| **s && **t).count();
        let sel = selected.iter().filter(|s| **s).count();
        let clean = truly_clean.iter().filter(|t| **t).count();
        // true negatives: rejected and truly noisy
        let tn = n + tp - sel - clean;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, sel);
        let recall = ratio(tp, clean);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Ok(Self {
            precision,
            recall,
            f1,
            noisy_precision: ratio(tn, n - sel),
            noisy_recall: ratio(tn, n - clean),
            clean_rate: precision,
            selection_size: sel,
            truly_clean: clean,
            true_positives: tp,
        })
    }
}

fn truly_clean_mask(labels: &[u32], dataset: &Dataset) -> Result<Vec<bool>, Error> {
    let truth = dataset.true_labels().ok_or(Error::MissingTrueLabels)?;
    if labels.len() != truth.len() {
        return Err(Error::LengthMismatch { expected: truth.len(), actual: labels.len() });
    }
    let ood = dataset.ood_label();
    Ok(labels.iter().zip(truth).map(|(l, t)| *t != ood && l == t).collect())
}

pub fn selection_metrics(result: &SelectionResult, dataset: &Dataset) -> Result<SelectionMetrics, Error> {
    let truth = truly_clean_mask(dataset.noisy_labels(), dataset)?;
    let mut m = SelectionMetrics::from_masks(&result.clean_mask(), &truth)?;
    let trained = truly_clean_mask(&result.labels, dataset)?;
    let hits = result.clean.iter().filter(|&&i| trained[i]).count();
    m.clean_rate = if result.clean.is_empty() { 0.0 } else { hits as f64 / result.clean.len() as f64 };
    Ok(m)
}

/// Metrics of `clean` against the dataset's own noisy labels.
pub fn clean_set_metrics(clean: &[usize], dataset: &Dataset) -> Result<SelectionMetrics, Error> {
    let truth = truly_clean_mask(dataset.noisy_labels(), dataset)?;
    let mut mask = vec![false; dataset.len()];
    for &i in clean {
        *mask.get_mut(i).ok_or(Error::LengthMismatch { expected: dataset.len(), actual: i + 1 })? = true;
    }
    SelectionMetrics::from_masks(&mask, &truth)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub hcs: Option<SelectionMetrics>,
    pub lcs1: Option<SelectionMetrics>,
    pub lcs2: Option<SelectionMetrics>,
}

/// Metrics restricted to each confidence subset; `None` for an empty subset.
pub fn per_subset_metrics(
    result: &SelectionResult,
    partition: &ConfidencePartition,
    dataset: &Dataset,
) -> Result<SubsetMetrics, Error> {
    let truth = truly_clean_mask(dataset.noisy_labels(), dataset)?;
    let selected = result.clean_mask();
    let restrict = |idx: &[usize]| -> Result<Option<SelectionMetrics>, Error> {
        if idx.is_empty() {
            return Ok(None);
        }
        let s: Vec<bool> = idx.iter().map(|&i| selected[i]).collect();
        let t: Vec<bool> = idx.iter().map(|&i| truth[i]).collect();
        SelectionMetrics::from_masks(&s, &t).map(Some)
    };
    Ok(SubsetMetrics { hcs: restrict(&partition.hcs)?, lcs1: restrict(&partition.lcs1)?, lcs2: restrict(&partition.lcs2)? })
}

/// Fraction of rows whose argmax (smallest class on ties) equals the label.
pub fn evaluate_accuracy_raw(model: &SoftmaxModel, features: &[f64], labels: &[u32]) -> Result<f64, Error> {
    if labels.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if features.len() != labels.len() * model.dim {
        return Err(Error::LengthMismatch { expected: labels.len() * model.dim, actual: features.len() });
    }
    let mut p = vec![0.0; model.classes];
    let mut hits = 0usize;
    for (x, &y) in features.chunks_exact(model.dim).zip(labels) {
        model.probs_into(x, &mut p);
        if argmax(&p).0 == y as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Test accuracy against true labels when present, noisy labels otherwise.
pub fn evaluate_accuracy(model: &SoftmaxModel, testset: &Dataset) -> Result<f64, Error> {
    if testset.dim() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, actual: testset.dim() });
    }
    evaluate_accuracy_raw(model, &testset.features_f64(), testset.reference_labels())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_empty_selections() {
        let truth = [true, true, false, false];
        let m = SelectionMetrics::from_masks(&truth, &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        assert_eq!((m.noisy_precision, m.noisy_recall), (1.0, 1.0));
        let none = SelectionMetrics::from_masks(&[false; 4], &truth).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert_eq!(none.noisy_precision, 0.5);
    }

    #[test]
    fn hand_counted_example() {
        // tp = 2, selected = 3, clean = 4
        let sel = [true, true, true, false, false, false];
        let truth = [true, true, false, true, true, false];
        let m = SelectionMetrics::from_masks(&sel, &truth).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 0.5).abs() < 1e-15);
        assert!((m.f1 - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(m.noisy_recall, 0.5);
    }

    #[test]
    fn ood_is_never_clean() {
        let ds = Dataset::new(vec![1.0, 0.0, 0.0, 1.0], 2, vec![0, 1], Some(vec![0, 2]), 2).unwrap();
        let m = clean_set_metrics(&[0, 1], &ds).unwrap();
        assert_eq!(m.truly_clean, 1);
        assert_eq!(m.precision, 0.5);
    }

    #[test]
    fn missing_truth_is_an_error() {
        let ds = Dataset::new(vec![1.0, 0.0], 2, vec![0], None, 2).unwrap();
        assert!(matches!(clean_set_metrics(&[0], &ds), Err(Error::MissingTrueLabels)));
    }

    #[test]
    fn zero_model_accuracy_picks_class_zero() {
        let model = SoftmaxModel::new(2, 1, 1, 0.0, 0);
        let acc = evaluate_accuracy_raw(&model, &[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(acc, 0.5);
        assert!(matches!(evaluate_accuracy_raw(&model, &[], &[]), Err(Error::EmptyTestSet)));
    }
}

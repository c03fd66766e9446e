//! Relabeling, the hybrid selector and the baseline selectors.
//!
//! Every selector except [`Selector::Passthrough`] first replaces labels with
//! confident model predictions, then partitions the whole training set into
//! clean and noisy samples.

pub mod gmm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aknn::{self, aknn_classify, aknn_select, knn_vote, AknnConfig, FeatureSimilarity, NeighborDiagnostics};
use crate::confidence::{split_confidence, ConfidencePartition};
use crate::dataset::{argmax, Dataset, Predictions};
use crate::fine::fine_select;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Selector {
    /// FINE on the high-confidence subset, adaptive KNN on the low-confidence subset.
    Anne,
    FineOnly,
    AknnOnly,
    SmallLossGmm,
    FixedKnn(usize),
    FineHcsFineLcs,
    AknnHcsAknnLcs,
    AknnHcsFineLcs,
    /// No relabeling and no selection.
    Passthrough,
}

impl Selector {
    /// The four placements of the two filters over the two confidence subsets.
    pub const PLACEMENTS: [Selector; 4] =
        [Selector::Anne, Selector::FineHcsFineLcs, Selector::AknnHcsAknnLcs, Selector::AknnHcsFineLcs];

    fn placement(self) -> Option<(Method, Method)> {
        match self {
            Selector::Anne => Some((Method::Fine, Method::Aknn)),
            Selector::FineHcsFineLcs => Some((Method::Fine, Method::Fine)),
            Selector::AknnHcsAknnLcs => Some((Method::Aknn, Method::Aknn)),
            Selector::AknnHcsFineLcs => Some((Method::Aknn, Method::Fine)),
            _ => None,
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Anne => f.write_str("anne"),
            Selector::FineOnly => f.write_str("fine_only"),
            Selector::AknnOnly => f.write_str("aknn_only"),
            Selector::SmallLossGmm => f.write_str("small_loss_gmm"),
            Selector::FixedKnn(k) => write!(f, "fixed_knn:{k}"),
            Selector::FineHcsFineLcs => f.write_str("fine_hcs_fine_lcs"),
            Selector::AknnHcsAknnLcs => f.write_str("aknn_hcs_aknn_lcs"),
            Selector::AknnHcsFineLcs => f.write_str("aknn_hcs_fine_lcs"),
            Selector::Passthrough => f.write_str("passthrough"),
        }
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        if let Some(k) = s.strip_prefix("fixed_knn") {
            let k = k.trim_start_matches([':', '=', '(']).trim_end_matches(')');
            if k.is_empty() {
                return Ok(Selector::FixedKnn(200));
            }
            let k: usize = k.parse().map_err(|_| Error::Config(format!("selector: bad K in '{s}'")))?;
            if k == 0 {
                return Err(Error::Config("selector: fixed_knn needs K >= 1".into()));
            }
            return Ok(Selector::FixedKnn(k));
        }
        match s {
            "anne" | "fine_hcs_aknn_lcs" => Ok(Selector::Anne),
            "fine_only" | "fine" => Ok(Selector::FineOnly),
            "aknn_only" | "aknn" => Ok(Selector::AknnOnly),
            "small_loss_gmm" | "small_loss" => Ok(Selector::SmallLossGmm),
            "fine_hcs_fine_lcs" => Ok(Selector::FineHcsFineLcs),
            "aknn_hcs_aknn_lcs" => Ok(Selector::AknnHcsAknnLcs),
            "aknn_hcs_fine_lcs" => Ok(Selector::AknnHcsFineLcs),
            "passthrough" | "none" | "ce" => Ok(Selector::Passthrough),
            other => Err(Error::Config(format!("selector: unknown selector '{other}'"))),
        }
    }
}

impl Serialize for Selector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Fine,
    Aknn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub gamma_r: f64,
    pub gamma_e: f64,
    pub aknn: AknnConfig,
    /// Minimum neighbourhood when adaptive KNN runs on the high-confidence subset.
    pub hcs_k_min: usize,
    pub selector: Selector,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { gamma_r: 0.9, gamma_e: 0.1, aknn: AknnConfig::default(), hcs_k_min: 5, selector: Selector::Anne }
    }
}

impl PipelineConfig {
    pub fn with_selector(&self, selector: Selector) -> Self {
        Self { selector, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(0.0..=1.0).contains(&self.gamma_r) {
            return Err(Error::InvalidThreshold { name: "gamma_r", value: self.gamma_r });
        }
        if !(0.0..=1.0).contains(&self.gamma_e) {
            return Err(Error::InvalidThreshold { name: "gamma_e", value: self.gamma_e });
        }
        if self.hcs_k_min == 0 {
            return Err(Error::InvalidSpec("hcs_k_min must be at least 1".into()));
        }
        self.aknn.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "FINE")]
    Fine,
    #[serde(rename = "AKNN")]
    Aknn,
    #[serde(rename = "passthrough")]
    Passthrough,
    #[serde(rename = "fixed_knn")]
    FixedKnn,
    #[serde(rename = "small_loss")]
    SmallLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selector: Selector,
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
    /// Labels the selection was made on (after relabeling).
    pub labels: Vec<u32>,
    pub provenance: Vec<Provenance>,
    pub partition: Option<ConfidencePartition>,
    pub neighbors: Vec<Option<NeighborDiagnostics>>,
    pub fine_scores: Vec<Option<f64>>,
    pub relabel_count: usize,
    /// Set when the confidence split was impossible and everything passed as clean.
    pub degenerate_split: bool,
}

impl SelectionResult {
    fn empty(selector: Selector, labels: Vec<u32>, relabel_count: usize) -> Self {
        let n = labels.len();
        Self {
            selector,
            clean: Vec::new(),
            noisy: Vec::new(),
            labels,
            provenance: vec![Provenance::Passthrough; n],
            partition: None,
            neighbors: vec![None; n],
            fine_scores: vec![None; n],
            relabel_count,
            degenerate_split: false,
        }
    }

    fn all_clean(selector: Selector, labels: Vec<u32>, relabel_count: usize) -> Self {
        let mut r = Self::empty(selector, labels, relabel_count);
        r.clean = (0..r.labels.len()).collect();
        r
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Mean adaptive neighbourhood size over samples that went through adaptive KNN.
    pub fn mean_k(&self) -> Option<f64> {
        let ks: Vec<f64> = self.neighbors.iter().flatten().map(|d| d.k as f64).collect();
        (!ks.is_empty()).then(|| ks.iter().sum::<f64>() / ks.len() as f64)
    }

    pub fn clean_mask(&self) -> Vec<bool> {
        aknn::membership(&self.clean, self.len())
    }

    fn finish(mut self) -> Self {
        self.clean.sort_unstable();
        self.noisy.sort_unstable();
        self
    }
}

/// Replace a label with the predicted class when the top probability exceeds `gamma_r`.
pub fn relabel(dataset: &Dataset, preds: &Predictions, gamma_r: f64) -> Result<(Dataset, usize), Error> {
    check_aligned(dataset, preds)?;
    if !(0.0..=1.0).contains(&gamma_r) {
        return Err(Error::InvalidThreshold { name: "gamma_r", value: gamma_r });
    }
    let mut labels = dataset.noisy_labels().to_vec();
    let mut changed = 0;
    for (i, label) in labels.iter_mut().enumerate() {
        let (class, p) = argmax(preds.row(i));
        if p > gamma_r && *label != class as u32 {
            *label = class as u32;
            changed += 1;
        }
    }
    Ok((dataset.with_noisy_labels(labels)?, changed))
}

fn check_aligned(dataset: &Dataset, preds: &Predictions) -> Result<(), Error> {
    if preds.len() != dataset.len() {
        return Err(Error::LengthMismatch { expected: dataset.len(), actual: preds.len() });
    }
    if preds.classes() != dataset.class_count() {
        return Err(Error::LengthMismatch { expected: dataset.class_count(), actual: preds.classes() });
    }
    Ok(())
}

/// Run the selector named in `config`.
pub fn select(dataset: &Dataset, preds: &Predictions, config: &PipelineConfig) -> Result<SelectionResult, Error> {
    config.validate()?;
    check_aligned(dataset, preds)?;
    let selector = config.selector;
    if selector == Selector::Passthrough {
        return Ok(SelectionResult::all_clean(selector, dataset.noisy_labels().to_vec(), 0));
    }
    let (relabeled, relabel_count) = relabel(dataset, preds, config.gamma_r)?;
    if let Some((hcs_method, lcs_method)) = selector.placement() {
        return placed_select(&relabeled, preds, config, relabel_count, hcs_method, lcs_method);
    }
    let labels = relabeled.noisy_labels().to_vec();
    let mut result = SelectionResult::empty(selector, labels, relabel_count);
    match selector {
        Selector::FineOnly => {
            let all: Vec<usize> = (0..relabeled.len()).collect();
            let out = fine_select(&all, &relabeled, config.gamma_e)?;
            for (&i, s) in out.subset.iter().zip(&out.scores) {
                result.fine_scores[i] = *s;
                result.provenance[i] = Provenance::Fine;
            }
            result.clean = out.clean;
            result.noisy = out.noisy;
        }
        Selector::AknnOnly => match split_confidence(preds) {
            Err(Error::DegenerateScores) => return Ok(degenerate(result)),
            Err(e) => return Err(e),
            Ok(partition) => {
                let all: Vec<usize> = (0..relabeled.len()).collect();
                let in_lcs1 = aknn::membership(&partition.lcs1, relabeled.len());
                let in_lcs2 = aknn::membership(&partition.lcs2, relabeled.len());
                let sims = FeatureSimilarity::new(&relabeled);
                let k_of = |i: usize| {
                    if in_lcs1[i] {
                        config.aknn.k_min_lcs1
                    } else if in_lcs2[i] {
                        config.aknn.k_min_lcs2
                    } else {
                        config.hcs_k_min
                    }
                };
                let out = aknn_classify(&all, k_of, relabeled.noisy_labels(), &sims, &config.aknn)?;
                for (&i, d) in out.pool.iter().zip(&out.diagnostics) {
                    result.neighbors[i] = Some(*d);
                    result.provenance[i] = Provenance::Aknn;
                }
                result.clean = out.clean;
                result.noisy = out.noisy;
                result.partition = Some(partition);
            }
        },
        Selector::SmallLossGmm => {
            let losses: Vec<f64> = (0..relabeled.len())
                .map(|i| -preds.row(i)[relabeled.noisy_labels()[i] as usize].max(1e-12).ln())
                .collect();
            match small_loss_gmm_select(&losses) {
                Err(Error::DegenerateLosses) => return Ok(degenerate(result)),
                Err(e) => return Err(e),
                Ok((clean, noisy)) => {
                    result.provenance = vec![Provenance::SmallLoss; relabeled.len()];
                    result.clean = clean;
                    result.noisy = noisy;
                }
            }
        }
        Selector::FixedKnn(k) => {
            let (clean, noisy) = fixed_knn_select(&relabeled, k)?;
            result.provenance = vec![Provenance::FixedKnn; relabeled.len()];
            result.clean = clean;
            result.noisy = noisy;
        }
        _ => unreachable!("placements and passthrough handled above"),
    }
    Ok(result.finish())
}

fn degenerate(mut result: SelectionResult) -> SelectionResult {
    log::warn!("confidence split degenerate; passing every sample as clean");
    result.clean = (0..result.len()).collect();
    result.noisy.clear();
    result.provenance.iter_mut().for_each(|p| *p = Provenance::Passthrough);
    result.degenerate_split = true;
    result
}

fn placed_select(
    relabeled: &Dataset,
    preds: &Predictions,
    config: &PipelineConfig,
    relabel_count: usize,
    hcs_method: Method,
    lcs_method: Method,
) -> Result<SelectionResult, Error> {
    let labels = relabeled.noisy_labels().to_vec();
    let mut result = SelectionResult::empty(config.selector, labels, relabel_count);
    let partition = match split_confidence(preds) {
        Err(Error::DegenerateScores) => return Ok(degenerate(result)),
        other => other?,
    };
    let lcs = partition.lcs();
    let sims = FeatureSimilarity::new(relabeled);
    for (subset, method, is_hcs) in [(&partition.hcs, hcs_method, true), (&lcs, lcs_method, false)] {
        match method {
            Method::Fine => {
                let out = fine_select(subset, relabeled, config.gamma_e)?;
                for (&i, s) in out.subset.iter().zip(&out.scores) {
                    result.fine_scores[i] = *s;
                    result.provenance[i] = Provenance::Fine;
                }
                result.clean.extend(out.clean);
                result.noisy.extend(out.noisy);
            }
            Method::Aknn => {
                let out = if is_hcs {
                    aknn_classify(subset, |_| config.hcs_k_min, relabeled.noisy_labels(), &sims, &config.aknn)?
                } else {
                    aknn_select(&partition, relabeled, &config.aknn)?
                };
                for (&i, d) in out.pool.iter().zip(&out.diagnostics) {
                    result.neighbors[i] = Some(*d);
                    result.provenance[i] = Provenance::Aknn;
                }
                result.clean.extend(out.clean);
                result.noisy.extend(out.noisy);
            }
        }
    }
    result.partition = Some(partition);
    Ok(result.finish())
}

/// FINE on the high-confidence subset and adaptive KNN on the low-confidence subset.
pub fn anne_select(dataset: &Dataset, preds: &Predictions, config: &PipelineConfig) -> Result<SelectionResult, Error> {
    select(dataset, preds, &config.with_selector(Selector::Anne))
}

/// One of the four filter placements named by `config.selector`.
pub fn ablation_select(dataset: &Dataset, preds: &Predictions, config: &PipelineConfig) -> Result<SelectionResult, Error> {
    if config.selector.placement().is_none() {
        return Err(Error::Config(format!("selector: '{}' is not a subset placement variant", config.selector)));
    }
    select(dataset, preds, config)
}

/// Clean when the posterior of the lower-mean mixture component exceeds 0.5.
pub fn small_loss_gmm_select(losses: &[f64]) -> Result<(Vec<usize>, Vec<usize>), Error> {
    let (values, fit) = gmm::fit_losses(losses)?;
    let low = fit.low_component();
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if fit.posterior(v)[low] > 0.5 {
            clean.push(i);
        } else {
            noisy.push(i);
        }
    }
    Ok((clean, noisy))
}

/// Clean when the label matches the vote of the `k` most similar other samples.
/// Similarity ties are resolved toward the smaller index.
pub fn fixed_knn_select(dataset: &Dataset, k: usize) -> Result<(Vec<usize>, Vec<usize>), Error> {
    let n = dataset.len();
    if k == 0 || n <= k {
        return Err(Error::InsufficientSamples { needed: k + 1, available: n });
    }
    let feats = dataset.features_f64();
    let d = dataset.dim();
    let labels = dataset.noisy_labels();
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let xi = &feats[i * d..(i + 1) * d];
        cand.clear();
        cand.extend(
            (0..n).filter(|&j| j != i).map(|j| (aknn::dot(xi, &feats[j * d..(j + 1) * d]).clamp(-1.0, 1.0), j)),
        );
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, order);
            cand.truncate(k);
        }
        cand.sort_unstable_by(|a, b| a.1.cmp(&b.1));
        let neighbors: Vec<usize> = cand.iter().map(|c| c.1).collect();
        let sims: Vec<f64> = cand.iter().map(|c| c.0).collect();
        if knn_vote(&neighbors, labels, &sims)? == labels[i] {
            clean.push(i);
        } else {
            noisy.push(i);
        }
    }
    Ok((clean, noisy))
}

//! Softmax classifier over fixed features, trained with selection in the loop.
//!
//! The objective on each step is the cross-entropy of MixUp-ed clean samples
//! against their mixed targets plus, on noisy samples, the negative cosine
//! between `predictor(projector(a1(x)))` and `projector(a2(x))`, where `a1`
//! and `a2` add isotropic Gaussian noise. The second branch is a constant
//! target: no gradient flows through it.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Predictions};
use crate::metrics::{evaluate_accuracy_raw, selection_metrics, SelectionMetrics};
use crate::pipeline::{select, PipelineConfig, Selector};
use crate::rng::{self, purpose};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub classes: usize,
    pub dim: usize,
    pub proj_dim: usize,
    /// `classes x dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// `proj_dim x dim`.
    pub projector: Vec<f64>,
    /// `proj_dim x proj_dim`.
    pub predictor: Vec<f64>,
    pub aug_sigma: f64,
}

impl SoftmaxModel {
    /// Zero classifier, Gaussian projector with variance `1/dim`, identity predictor.
    pub fn new(classes: usize, dim: usize, proj_dim: usize, aug_sigma: f64, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[purpose::MODEL_INIT]);
        let scale = 1.0 / (dim as f64).sqrt();
        let projector = (0..proj_dim * dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut predictor = vec![0.0; proj_dim * proj_dim];
        for k in 0..proj_dim {
            predictor[k * proj_dim + k] = 1.0;
        }
        Self {
            classes,
            dim,
            proj_dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            projector,
            predictor,
            aug_sigma,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let c = self.classes;
        let (d, p) = (self.dim, self.proj_dim);
        if p == 0 || c < 2 || d == 0 {
            return Err(Error::InvalidSpec("model needs classes >= 2, dim >= 1, proj_dim >= 1".into()));
        }
        let shapes = [(self.weights.len(), c * d), (self.bias.len(), c), (self.projector.len(), p * d), (self.predictor.len(), p * p)];
        for (got, want) in shapes {
            if got != want {
                return Err(Error::LengthMismatch { expected: want, actual: got });
            }
        }
        let all = self.weights.iter().chain(&self.bias).chain(&self.projector).chain(&self.predictor);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        Ok(())
    }

    /// Softmax probabilities of one feature row into `out`.
    pub fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.bias[k] + dot(&self.weights[k * d..(k + 1) * d], x);
        }
        softmax_in_place(out);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_slice(&bytes)?;
        model.validate()?;
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn mat_vec(mat: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&mat[r * cols..(r + 1) * cols], v);
    }
}

/// Softmax predictions for row-major `features`.
pub fn predict_probs(model: &SoftmaxModel, features: &[f64], epoch: u32) -> Result<Predictions, Error> {
    if features.len() % model.dim != 0 {
        return Err(Error::DimensionMismatch { expected: model.dim, actual: features.len() % model.dim });
    }
    let n = features.len() / model.dim;
    let mut probs = vec![0.0; n * model.classes];
    for (x, out) in features.chunks_exact(model.dim).zip(probs.chunks_exact_mut(model.classes)) {
        model.probs_into(x, out);
    }
    Predictions::new(probs, model.classes, epoch)
}

pub fn predict_dataset(model: &SoftmaxModel, dataset: &Dataset, epoch: u32) -> Result<Predictions, Error> {
    if dataset.dim() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, actual: dataset.dim() });
    }
    predict_probs(model, &dataset.features_f64(), epoch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub mixup_alpha: f64,
    pub aug_sigma: f64,
    pub warmup_epochs: usize,
    pub consistency_weight: f64,
    pub proj_dim: usize,
    /// Run selection every this many epochs after warm-up, reusing the last result in between.
    pub select_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            mixup_alpha: 1.0,
            aug_sigma: 0.1,
            warmup_epochs: 10,
            consistency_weight: 1.0,
            proj_dim: 16,
            select_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.mixup_alpha > 0.0) {
            return bad("mixup_alpha must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 || self.proj_dim == 0 || self.select_every == 0 {
            return bad("batch_size, proj_dim and select_every must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.aug_sigma < 0.0 {
            return bad("momentum must lie in [0, 1); weight_decay and aug_sigma must be non-negative");
        }
        Ok(())
    }
}

/// A MixUp-ed batch: `lambda * x_i + (1 - lambda) * x_partner(i)`, targets likewise.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub dim: usize,
    pub classes: usize,
    pub lambda: f64,
    pub partner: Vec<usize>,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// MixUp with a fixed coefficient and partner permutation.
pub fn mixup_with(
    features: &[f64],
    targets: &[f64],
    dim: usize,
    classes: usize,
    lambda: f64,
    partner: &[usize],
) -> Result<MixedBatch, Error> {
    let n = partner.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if features.len() != n * dim {
        return Err(Error::LengthMismatch { expected: n * dim, actual: features.len() });
    }
    if targets.len() != n * classes {
        return Err(Error::LengthMismatch { expected: n * classes, actual: targets.len() });
    }
    let mix = |src: &[f64], width: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(src.len());
        for (i, &j) in partner.iter().enumerate() {
            let (a, b) = (&src[i * width..(i + 1) * width], &src[j * width..(j + 1) * width]);
            out.extend(a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y));
        }
        out
    };
    Ok(MixedBatch {
        features: mix(features, dim),
        targets: mix(targets, classes),
        dim,
        classes,
        lambda,
        partner: partner.to_vec(),
    })
}

/// MixUp with `lambda ~ Beta(alpha, alpha)` and a shuffled partner.
pub fn mixup_batch(
    features: &[f64],
    targets: &[f64],
    dim: usize,
    classes: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<MixedBatch, Error> {
    if dim == 0 || features.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidSpec(format!("mixup_alpha: {e}")))?;
    let n = features.len() / dim;
    let mut partner: Vec<usize> = (0..n).collect();
    partner.shuffle(rng);
    let lambda = beta.sample(rng);
    mixup_with(features, targets, dim, classes, lambda, &partner)
}

/// Two independently noised copies of each row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewBatch {
    pub view1: Vec<f64>,
    pub view2: Vec<f64>,
    pub dim: usize,
}

impl ViewBatch {
    pub fn empty(dim: usize) -> Self {
        Self { view1: Vec::new(), view2: Vec::new(), dim }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.view1.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.view1.is_empty()
    }
}

pub fn augment_views(features: &[f64], dim: usize, sigma: f64, rng: &mut impl Rng) -> ViewBatch {
    let mut noise = |x: &f64| x + sigma * rng.sample::<f64, _>(StandardNormal);
    let view1 = features.iter().map(&mut noise).collect();
    let view2 = features.iter().map(&mut noise).collect();
    ViewBatch { view1, view2, dim }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub consistency: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub projector: Vec<f64>,
    pub predictor: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &SoftmaxModel) -> Self {
        Self {
            weights: vec![0.0; model.weights.len()],
            bias: vec![0.0; model.bias.len()],
            projector: vec![0.0; model.projector.len()],
            predictor: vec![0.0; model.predictor.len()],
        }
    }
}

const NORM_EPS: f64 = 1e-12;

/// Loss value only. `target_projector` stands in for the projector in the
/// constant branch; `None` uses the model's own.
pub fn loss_value(
    model: &SoftmaxModel,
    clean: &MixedBatch,
    noisy: &ViewBatch,
    consistency_weight: f64,
    target_projector: Option<&[f64]>,
) -> LossBreakdown {
    let target = target_projector.unwrap_or(&model.projector);
    let ce = ce_part(model, clean, None);
    let consistency = consistency_part(model, noisy, consistency_weight, target, None);
    LossBreakdown { ce, consistency, total: ce + consistency_weight * consistency }
}

fn ce_part(model: &SoftmaxModel, batch: &MixedBatch, mut grads: Option<&mut Gradients>) -> f64 {
    let n = batch.len();
    if n == 0 {
        return 0.0;
    }
    let (c, d) = (model.classes, model.dim);
    let mut p = vec![0.0; c];
    let mut loss = 0.0;
    for (x, t) in batch.features.chunks_exact(d).zip(batch.targets.chunks_exact(c)) {
        model.probs_into(x, &mut p);
        loss -= t.iter().zip(&p).map(|(t, p)| if *t > 0.0 { t * p.max(1e-300).ln() } else { 0.0 }).sum::<f64>();
        if let Some(g) = grads.as_deref_mut() {
            let tsum: f64 = t.iter().sum();
            for k in 0..c {
                let gz = (p[k] * tsum - t[k]) / n as f64;
                g.bias[k] += gz;
                for (gw, xv) in g.weights[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *gw += gz * xv;
                }
            }
        }
    }
    loss / n as f64
}

fn consistency_part(
    model: &SoftmaxModel,
    views: &ViewBatch,
    weight: f64,
    target_projector: &[f64],
    mut grads: Option<&mut Gradients>,
) -> f64 {
    let n = views.len();
    if n == 0 {
        return 0.0;
    }
    let (d, p) = (model.dim, model.proj_dim);
    let mut z = vec![0.0; p];
    let mut h1 = vec![0.0; p];
    let mut h2 = vec![0.0; p];
    let mut g_h1 = vec![0.0; p];
    let mut total = 0.0;
    for (a1, a2) in views.view1.chunks_exact(d).zip(views.view2.chunks_exact(d)) {
        mat_vec(&model.projector, d, a1, &mut z);
        mat_vec(&model.predictor, p, &z, &mut h1);
        mat_vec(target_projector, d, a2, &mut h2);
        let n1 = dot(&h1, &h1).sqrt().max(NORM_EPS);
        let n2 = dot(&h2, &h2).sqrt().max(NORM_EPS);
        let cos = dot(&h1, &h2) / (n1 * n2);
        total -= cos;
        if let Some(g) = grads.as_deref_mut() {
            let scale = -weight / n as f64;
            for k in 0..p {
                g_h1[k] = scale * (h2[k] / (n1 * n2) - cos * h1[k] / (n1 * n1));
            }
            for r in 0..p {
                for (gq, zc) in g.predictor[r * p..(r + 1) * p].iter_mut().zip(&z) {
                    *gq += g_h1[r] * zc;
                }
            }
            for r in 0..p {
                // (Q^T g_h1)[r]
                let gz: f64 = (0..p).map(|k| model.predictor[k * p + r] * g_h1[k]).sum();
                for (gp, av) in g.projector[r * d..(r + 1) * d].iter_mut().zip(a1) {
                    *gp += gz * av;
                }
            }
        }
    }
    total / n as f64
}

/// Loss and analytic gradients for every parameter tensor.
pub fn loss_and_grad(
    model: &SoftmaxModel,
    clean: &MixedBatch,
    noisy: &ViewBatch,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Gradients), Error> {
    if clean.dim != model.dim || (!noisy.is_empty() && noisy.dim != model.dim) {
        return Err(Error::DimensionMismatch { expected: model.dim, actual: clean.dim });
    }
    let mut g = Gradients::zeros(model);
    let ce = ce_part(model, clean, Some(&mut g));
    let consistency = consistency_part(model, noisy, config.consistency_weight, &model.projector, Some(&mut g));
    let loss = LossBreakdown { ce, consistency, total: ce + config.consistency_weight * consistency };
    if !loss.total.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((loss, g))
}

/// SGD with momentum and L2 weight decay folded into the gradient.
struct Sgd {
    velocity: Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    fn new(model: &SoftmaxModel, cfg: &TrainConfig) -> Self {
        Self { velocity: Gradients::zeros(model), lr: cfg.learning_rate, momentum: cfg.momentum, weight_decay: cfg.weight_decay }
    }

    fn step(&mut self, model: &mut SoftmaxModel, g: &Gradients) {
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        let update = |params: &mut [f64], grad: &[f64], vel: &mut [f64]| {
            for ((p, g), v) in params.iter_mut().zip(grad).zip(vel.iter_mut()) {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            }
        };
        update(&mut model.weights, &g.weights, &mut self.velocity.weights);
        update(&mut model.bias, &g.bias, &mut self.velocity.bias);
        update(&mut model.projector, &g.projector, &mut self.velocity.projector);
        update(&mut model.predictor, &g.predictor, &mut self.velocity.predictor);
    }
}

/// Balance classes inside `clean` by resampling each class with replacement up
/// to the largest class, then stretch the balanced set to `|clean| + |noisy|`:
/// whole copies first, the remainder drawn without replacement.
pub fn oversample(
    clean: &[usize],
    noisy: &[usize],
    labels: &[u32],
    classes: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, Error> {
    if clean.is_empty() {
        return Err(Error::EmptyCleanSet);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in clean {
        by_class[labels[i] as usize].push(i);
    }
    let majority = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut balanced = Vec::with_capacity(majority * classes);
    for members in by_class.iter().filter(|m| !m.is_empty()) {
        balanced.extend_from_slice(members);
        for _ in members.len()..majority {
            balanced.push(members[rng.gen_range(0..members.len())]);
        }
    }
    let target = clean.len() + noisy.len();
    let mut out = Vec::with_capacity(target);
    while out.len() + balanced.len() <= target {
        out.extend_from_slice(&balanced);
    }
    let rest = target - out.len();
    balanced.shuffle(rng);
    out.extend_from_slice(&balanced[..rest]);
    out.shuffle(rng);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub selector: Selector,
    pub clean_size: usize,
    pub noisy_size: usize,
    pub relabel_count: usize,
    pub degenerate_split: bool,
    pub mean_k: Option<f64>,
    pub tau: Option<f64>,
    pub metrics: Option<SelectionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub warmup: bool,
    pub ce_loss: f64,
    pub consistency_loss: f64,
    pub test_accuracy: f64,
    pub selection: Option<SelectionSummary>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.test_accuracy)
    }

    /// Mean adaptive neighbourhood size per selection epoch, in order.
    pub fn mean_k_series(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|r| r.selection.as_ref()?.mean_k).collect()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String, Error> {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn one_hot(labels: impl Iterator<Item = u32>, classes: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for l in labels {
        let start = out.len();
        out.resize(start + classes, 0.0);
        out[start + l as usize] = 1.0;
    }
    out
}

fn gather(features: &[f64], dim: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        out.extend_from_slice(&features[i * dim..(i + 1) * dim]);
    }
    out
}

/// Train on `dataset`, evaluating on `testset` after every epoch.
///
/// Warm-up epochs (and every epoch under [`Selector::Passthrough`]) run plain
/// cross-entropy on all samples. Afterwards each epoch predicts on the
/// training set, runs the configured selector, oversamples the clean part
/// and trains on MixUp batches of clean samples paired with MixUp-ed noisy
/// samples for the consistency term.
pub fn train_loop(
    dataset: &Dataset,
    testset: &Dataset,
    pipeline: &PipelineConfig,
    config: &TrainConfig,
) -> Result<(SoftmaxModel, History), Error> {
    config.validate()?;
    pipeline.validate()?;
    if dataset.dim() != testset.dim() {
        return Err(Error::DimensionMismatch { expected: dataset.dim(), actual: testset.dim() });
    }
    if dataset.class_count() != testset.class_count() {
        return Err(Error::LengthMismatch { expected: dataset.class_count(), actual: testset.class_count() });
    }
    if dataset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let (c, d, n) = (dataset.class_count(), dataset.dim(), dataset.len());
    let feats = dataset.features_f64();
    let test_feats = testset.features_f64();
    let mut model = SoftmaxModel::new(c, d, config.proj_dim, config.aug_sigma, config.seed);
    let mut opt = Sgd::new(&model, config);
    let mut history = History::default();
    let mut last_selection = None;

    for epoch in 0..config.epochs {
        let warmup = epoch < config.warmup_epochs || pipeline.selector == Selector::Passthrough;
        let mut ce_sum = 0.0;
        let mut cons_sum = 0.0;
        let mut batches = 0usize;
        let mut summary = None;

        if warmup {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::stream(config.seed, &[purpose::EPOCH_SHUFFLE, epoch as u64]));
            for chunk in order.chunks(config.batch_size) {
                let x = gather(&feats, d, chunk);
                let t = one_hot(chunk.iter().map(|&i| dataset.noisy_labels()[i]), c);
                let identity: Vec<usize> = (0..chunk.len()).collect();
                let batch = mixup_with(&x, &t, d, c, 1.0, &identity)?;
                let (loss, g) = loss_and_grad(&model, &batch, &ViewBatch::empty(d), config)?;
                opt.step(&mut model, &g);
                ce_sum += loss.ce;
                batches += 1;
            }
        } else {
            let post = epoch - config.warmup_epochs;
            if last_selection.is_none() || post % config.select_every == 0 {
                let preds = predict_probs(&model, &feats, epoch as u32)?;
                last_selection = Some(select(dataset, &preds, pipeline)?);
            }
            let sel = last_selection.as_ref().expect("selection computed above");
            summary = Some(SelectionSummary {
                selector: sel.selector,
                clean_size: sel.clean.len(),
                noisy_size: sel.noisy.len(),
                relabel_count: sel.relabel_count,
                degenerate_split: sel.degenerate_split,
                mean_k: sel.mean_k(),
                tau: sel.partition.as_ref().map(|p| p.tau),
                metrics: dataset.true_labels().map(|_| selection_metrics(sel, dataset)).transpose()?,
            });

            let mut rng_os = rng::stream(config.seed, &[purpose::OVERSAMPLE, epoch as u64]);
            let all: Vec<usize>;
            let (clean, noisy): (&[usize], &[usize]) = if sel.clean.is_empty() {
                all = (0..n).collect();
                (&all, &[])
            } else {
                (&sel.clean, &sel.noisy)
            };
            let clean_order = oversample(clean, noisy, &sel.labels, c, &mut rng_os)?;
            let mut noisy_order = noisy.to_vec();
            noisy_order.shuffle(&mut rng_os);
            let nb = clean_order.len().div_ceil(config.batch_size);
            let noisy_per = noisy_order.len().div_ceil(nb.max(1));

            for b in 0..nb {
                let mut rng_b = rng::stream(config.seed, &[purpose::BATCH, epoch as u64, b as u64]);
                let chunk = &clean_order[b * config.batch_size..((b + 1) * config.batch_size).min(clean_order.len())];
                let x = gather(&feats, d, chunk);
                let t = one_hot(chunk.iter().map(|&i| sel.labels[i]), c);
                let batch = mixup_batch(&x, &t, d, c, config.mixup_alpha, &mut rng_b)?;
                let lo = (b * noisy_per).min(noisy_order.len());
                let hi = ((b + 1) * noisy_per).min(noisy_order.len());
                let views = if hi > lo {
                    let nx = gather(&feats, d, &noisy_order[lo..hi]);
                    let nt = vec![0.0; (hi - lo) * c];
                    let mixed = mixup_batch(&nx, &nt, d, c, config.mixup_alpha, &mut rng_b)?;
                    let mut rng_a = rng::stream(config.seed, &[purpose::AUGMENT, epoch as u64, b as u64]);
                    augment_views(&mixed.features, d, config.aug_sigma, &mut rng_a)
                } else {
                    ViewBatch::empty(d)
                };
                let (loss, g) = loss_and_grad(&model, &batch, &views, config)?;
                opt.step(&mut model, &g);
                ce_sum += loss.ce;
                cons_sum += loss.consistency;
                batches += 1;
            }
        }

        let test_accuracy = evaluate_accuracy_raw(&model, &test_feats, testset.reference_labels())?;
        history.epochs.push(EpochRecord {
            epoch,
            warmup,
            ce_loss: ce_sum / batches.max(1) as f64,
            consistency_loss: cons_sum / batches.max(1) as f64,
            test_accuracy,
            selection: summary,
        });
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_gives_log_c() {
        let model = SoftmaxModel::new(4, 3, 2, 0.0, 0);
        let batch = mixup_with(&[0.3, -0.2, 0.9], &[0.25; 4], 3, 4, 1.0, &[0]).unwrap();
        let loss = loss_value(&model, &batch, &ViewBatch::empty(3), 1.0, None);
        assert!((loss.ce - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_predictor_without_noise_gives_minus_one() {
        let model = SoftmaxModel::new(3, 5, 4, 0.0, 2);
        let x = [0.1, 0.2, -0.3, 0.4, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0];
        let views = augment_views(&x, 5, 0.0, &mut rng::stream(0, &[]));
        let loss = loss_value(&model, &mixup_with(&x[..5], &[1.0, 0.0, 0.0], 5, 3, 1.0, &[0]).unwrap(), &views, 1.0, None);
        assert!((loss.consistency + 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixup_midpoint_and_identity() {
        let x = [0.0, 0.0, 2.0, 2.0];
        let t = [1.0, 0.0, 0.0, 1.0];
        let m = mixup_with(&x, &t, 2, 2, 0.5, &[1, 0]).unwrap();
        assert_eq!(m.features, vec![1.0, 1.0, 1.0, 1.0]);
        let same = mixup_with(&x, &t, 2, 2, 1.0, &[1, 0]).unwrap();
        assert_eq!(same.features, x.to_vec());
        assert_eq!(same.targets, t.to_vec());
        assert!(matches!(mixup_with(&[], &[], 2, 2, 0.5, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn mixed_targets_stay_on_simplex() {
        let mut rng = rng::stream(11, &[]);
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let t = one_hot((0..20).map(|i| (i % 3) as u32), 3);
        for alpha in [0.1, 1.0, 4.0] {
            let m = mixup_batch(&x, &t, 2, 3, alpha, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&m.lambda));
            for row in m.targets.chunks(3) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predictions_of_zero_and_biased_models() {
        let mut model = SoftmaxModel::new(3, 2, 1, 0.0, 0);
        let p = predict_probs(&model, &[1.0, 2.0, -1.0, 0.5], 0).unwrap();
        for row in p.rows() {
            for v in row {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        model.bias[0] = 50.0;
        let p = predict_probs(&model, &[1.0, 2.0], 0).unwrap();
        assert!(p.row(0)[0] > 1.0 - 1e-15);
        assert!(matches!(predict_probs(&model, &[1.0, 2.0, 3.0], 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn oversample_balanced_covers_clean() {
        let labels = [0, 1, 0, 1];
        let out = oversample(&[0, 1, 2, 3], &[], &labels, 2, &mut rng::stream(0, &[])).unwrap();
        let mut sorted = out.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert!(matches!(oversample(&[], &[1], &labels, 2, &mut rng::stream(0, &[])), Err(Error::EmptyCleanSet)));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { mixup_alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
    }
}

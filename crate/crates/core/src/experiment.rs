//! Reproducible experiments: JSON configs with named presets, and the
//! `gen` / `select` / `train` / `eval` / `compare` commands behind the CLI.
//!
//! A config is a JSON object. If it names a `preset`, the preset's fields are
//! filled in first and the remaining keys override them, recursively. Every
//! run seed `s` reseeds the cluster generator, the noise injector and the
//! trainer, so config plus seed determine all outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{load_dataset, load_predictions, normalize_features, save_dataset, save_predictions, Dataset};
use crate::metrics::{evaluate_accuracy, per_subset_metrics, selection_metrics, SelectionMetrics, SubsetMetrics};
use crate::noisegen::{generate_clusters, generate_ood_pool, generate_test_split, ClusterSpec, NoiseKind, NoiseSpec};
use crate::pipeline::{select, PipelineConfig, Provenance, Selector};
use crate::trainer::{predict_dataset, train_loop, History, SoftmaxModel, TrainConfig};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_COMPUTE: i32 = 4;

/// Process exit code for an error: configuration, file access/format, or computation.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidSpec(_) | Error::InvalidThreshold { .. } | Error::InvalidMapping { .. } => {
            EXIT_CONFIG
        }
        Error::IoFailure { .. }
        | Error::MalformedHeader { .. }
        | Error::SizeMismatch { .. }
        | Error::NonFiniteFeature { .. }
        | Error::InvalidLabel { .. }
        | Error::Json(_)
        | Error::Csv(_) => EXIT_IO,
        _ => EXIT_COMPUTE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Synthetic clusters; the run seed replaces `spec.seed`.
    Generate {
        spec: ClusterSpec,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        /// Samples drawn from each reserved cluster for open-set noise.
        #[serde(default = "default_ood_per_cluster")]
        ood_per_cluster: usize,
    },
    /// Pre-built ANNE1 files, used as given: no noise is injected.
    Files { train: PathBuf, test: PathBuf },
}

fn default_test_per_class() -> usize {
    1000
}

fn default_ood_per_cluster() -> usize {
    2000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    /// Full training per selector; accuracy is the final test accuracy.
    #[default]
    Train,
    /// One warm-up model per seed; every selector runs on its predictions.
    Select,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub preset: Option<String>,
    pub data: DataSource,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub selectors: Vec<Selector>,
    #[serde(default)]
    pub compare_mode: CompareMode,
    /// Scale every feature row to unit length before use.
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn default_out() -> PathBuf {
    PathBuf::from("anne-out")
}

fn yes() -> bool {
    true
}

struct Preset {
    name: &'static str,
    gamma_r: f64,
    gamma_e: f64,
    noise: fn() -> NoiseSpec,
    classes: usize,
}

fn sym(eta: f64) -> NoiseSpec {
    NoiseSpec::symmetric(eta, 0)
}

fn kind(kind: NoiseKind, eta: f64) -> NoiseSpec {
    NoiseSpec { kind, ..sym(eta) }
}

// (gamma_r, gamma_e) pairs per benchmark and noise setting.
const PRESETS: &[Preset] = &[
    Preset { name: "bench-sym20", gamma_r: 0.9, gamma_e: 0.1, noise: || sym(0.2), classes: 10 },
    Preset { name: "bench-sym50", gamma_r: 0.9, gamma_e: 0.1, noise: || sym(0.5), classes: 10 },
    Preset { name: "bench-sym80", gamma_r: 0.8, gamma_e: 0.3, noise: || sym(0.8), classes: 10 },
    Preset { name: "bench-sym90", gamma_r: 0.8, gamma_e: 0.7, noise: || sym(0.9), classes: 10 },
    Preset { name: "bench-asym40", gamma_r: 0.8, gamma_e: 0.1, noise: || kind(NoiseKind::Asymmetric, 0.4), classes: 10 },
    Preset { name: "bench-idn40", gamma_r: 0.8, gamma_e: 0.1, noise: || kind(NoiseKind::InstanceDependent, 0.4), classes: 10 },
    Preset {
        name: "bench-combined",
        gamma_r: 0.9,
        gamma_e: 0.1,
        noise: || NoiseSpec { rho: 0.5, omega: 0.6, ..kind(NoiseKind::OpensetCombined, 0.0) },
        classes: 10,
    },
    Preset { name: "bench100-sym20", gamma_r: 0.9, gamma_e: 0.1, noise: || sym(0.2), classes: 100 },
    Preset { name: "bench100-sym50", gamma_r: 0.8, gamma_e: 0.1, noise: || sym(0.5), classes: 100 },
    Preset { name: "bench100-sym80", gamma_r: 0.9, gamma_e: 0.8, noise: || sym(0.8), classes: 100 },
    Preset { name: "bench100-sym90", gamma_r: 0.9, gamma_e: 0.8, noise: || sym(0.9), classes: 100 },
    Preset { name: "realworld", gamma_r: 0.95, gamma_e: 0.3, noise: || sym(0.0), classes: 10 },
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

/// The fully populated config for a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig, Error> {
    let p = PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        Error::Config(format!("preset: unknown preset '{name}' (known: {})", preset_names().join(", ")))
    })?;
    let spec = if p.classes == 100 {
        ClusterSpec { class_count: 100, dim: 128, samples_per_class: 100, ..ClusterSpec::standard(0) }
    } else {
        ClusterSpec::standard(0)
    };
    Ok(ExperimentConfig {
        preset: Some(name.to_string()),
        data: DataSource::Generate { spec, test_per_class: default_test_per_class(), ood_per_cluster: default_ood_per_cluster() },
        noise: (p.noise)(),
        pipeline: PipelineConfig { gamma_r: p.gamma_r, gamma_e: p.gamma_e, ..PipelineConfig::default() },
        train: TrainConfig::default(),
        out_dir: default_out(),
        seeds: vec![1, 2, 3, 4, 5],
        selectors: vec![Selector::Anne, Selector::FineOnly, Selector::AknnOnly],
        compare_mode: CompareMode::Train,
        normalize: true,
    })
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Set `a.b.c = value` inside a JSON object; `value` is parsed as JSON when possible.
pub fn set_path(root: &mut Value, assignment: &str) -> Result<(), Error> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set: expected key=value, got '{assignment}'")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(Error::Config(format!("--set: '{path}' crosses a non-object field")));
        }
        node = node.as_object_mut().expect("checked").entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("--set: '{path}' crosses a non-object field")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Resolve a raw JSON value: expand its preset, then validate.
    pub fn from_value(raw: Value) -> Result<Self, Error> {
        if !raw.is_object() {
            return Err(Error::Config("config: top level must be a JSON object".into()));
        }
        let mut value = match raw.get("preset") {
            Some(Value::String(name)) => serde_json::to_value(preset(name)?)?,
            Some(Value::Null) | None => serde_json::to_value(preset("bench-sym50")?)?,
            Some(_) => return Err(Error::Config("preset: must be a string".into())),
        };
        merge(&mut value, raw);
        if let Some(Value::String(kind)) = value.pointer("/noise/kind") {
            kind.parse::<NoiseKind>()?;
        }
        if let Some(Value::Array(sels)) = value.get("selectors") {
            for s in sels {
                s.as_str().ok_or_else(|| Error::Config("selectors: entries must be strings".into()))?.parse::<Selector>()?;
            }
        }
        if let Some(Value::String(s)) = value.pointer("/pipeline/selector") {
            s.parse::<Selector>()?;
        }
        let config: Self = serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        Self::from_value(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        Self::from_json(&read_text(path.as_ref())?)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: must be nonempty".into()));
        }
        self.noise.validate().map_err(|e| Error::Config(format!("noise: {e}")))?;
        self.pipeline.validate()?;
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        match &self.data {
            DataSource::Generate { spec, test_per_class, .. } => {
                spec.validate().map_err(|e| Error::Config(format!("data.spec: {e}")))?;
                if *test_per_class == 0 {
                    return Err(Error::Config("data.test_per_class: must be positive".into()));
                }
            }
            DataSource::Files { train, test } => {
                for p in [train, test] {
                    if !p.exists() {
                        return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Output directory of one seed's run.
    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("seed-{seed}"))
    }

    fn seeded(&self, seed: u64) -> (NoiseSpec, TrainConfig) {
        (NoiseSpec { seed, ..self.noise.clone() }, TrainConfig { seed, ..self.train.clone() })
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Training and test sets for one seed, normalised if the config asks for it.
pub fn prepare_data(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset), Error> {
    let (train, test) = match &config.data {
        DataSource::Generate { spec, test_per_class, ood_per_cluster } => {
            let spec = ClusterSpec { seed, ..spec.clone() };
            let clean = generate_clusters(&spec)?;
            let pool = if config.noise.kind == NoiseKind::OpensetCombined {
                Some(generate_ood_pool(&spec, *ood_per_cluster)?)
            } else {
                None
            };
            let (noise, _) = config.seeded(seed);
            (noise.apply(&clean, pool.as_ref())?, generate_test_split(&spec, *test_per_class)?)
        }
        DataSource::Files { train, test } => (load_dataset(train)?, load_dataset(test)?),
    };
    if config.normalize {
        Ok((normalize_features(&train)?, normalize_features(&test)?))
    } else {
        Ok((train, test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub train_file: String,
    pub test_file: String,
    pub train_len: usize,
    pub test_len: usize,
    pub noisy_fraction: Option<f64>,
}

/// Write `train.anne`, `test.anne` and `manifest.json` into each seed's run directory.
pub fn cmd_gen(config: &ExperimentConfig) -> Result<Vec<Manifest>, Error> {
    let mut out = Vec::new();
    for &seed in &config.seeds {
        let dir = config.run_dir(seed);
        create_dir(&dir)?;
        let (train, test) = prepare_data(config, seed)?;
        save_dataset(&train, dir.join("train.anne"))?;
        save_dataset(&test, dir.join("test.anne"))?;
        let noisy_fraction = train.true_labels().map(|truth| {
            let wrong = truth.iter().zip(train.noisy_labels()).filter(|(t, y)| t != y).count();
            wrong as f64 / train.len() as f64
        });
        let manifest = Manifest {
            seed,
            config: config.clone(),
            train_file: "train.anne".into(),
            test_file: "test.anne".into(),
            train_len: train.len(),
            test_len: test.len(),
            noisy_fraction,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        log::info!("seed {seed}: wrote {} train / {} test samples to {}", train.len(), test.len(), dir.display());
        out.push(manifest);
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, Error> {
    Ok(serde_json::from_str(&read_text(path.as_ref())?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selector: Selector,
    pub n: usize,
    pub tau: Option<f64>,
    pub hcs: usize,
    pub lcs1: usize,
    pub lcs2: usize,
    pub clean: usize,
    pub noisy: usize,
    pub relabel_count: usize,
    pub degenerate_split: bool,
    pub mean_k: Option<f64>,
    pub provenance: BTreeMap<String, usize>,
    pub metrics: Option<SelectionMetrics>,
    pub subset_metrics: Option<SubsetMetrics>,
    pub clean_indices: Vec<usize>,
}

fn provenance_name(p: Provenance) -> String {
    serde_json::to_value(p).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Selection on a stored dataset and stored predictions.
pub fn cmd_select(
    dataset_path: impl AsRef<Path>,
    preds_path: impl AsRef<Path>,
    pipeline: &PipelineConfig,
) -> Result<SelectionReport, Error> {
    let dataset = load_dataset(dataset_path)?;
    let preds = load_predictions(preds_path)?;
    let result = select(&dataset, &preds, pipeline)?;
    let mut provenance = BTreeMap::new();
    for p in &result.provenance {
        *provenance.entry(provenance_name(*p)).or_insert(0) += 1;
    }
    let metrics = dataset.true_labels().map(|_| selection_metrics(&result, &dataset)).transpose()?;
    let subset_metrics = match (&result.partition, dataset.true_labels()) {
        (Some(part), Some(_)) => Some(per_subset_metrics(&result, part, &dataset)?),
        _ => None,
    };
    let part = result.partition.as_ref();
    Ok(SelectionReport {
        selector: result.selector,
        n: dataset.len(),
        tau: part.map(|p| p.tau),
        hcs: part.map_or(0, |p| p.hcs.len()),
        lcs1: part.map_or(0, |p| p.lcs1.len()),
        lcs2: part.map_or(0, |p| p.lcs2.len()),
        clean: result.clean.len(),
        noisy: result.noisy.len(),
        relabel_count: result.relabel_count,
        degenerate_split: result.degenerate_split,
        mean_k: result.mean_k(),
        provenance,
        metrics,
        subset_metrics,
        clean_indices: result.clean.clone(),
    })
}

pub fn write_report<T: Serialize>(path: impl AsRef<Path>, report: &T) -> Result<(), Error> {
    write_json(path.as_ref(), report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub selector: Selector,
    pub epochs: usize,
    pub final_accuracy: f64,
    pub final_selection: Option<SelectionMetrics>,
    pub final_selection_size: Option<usize>,
    pub mean_k_first: Option<f64>,
    pub mean_k_last: Option<f64>,
}

fn window_mean(series: &[f64], last: bool, width: usize) -> Option<f64> {
    if series.is_empty() {
        return None;
    }
    let w = width.min(series.len());
    let part = if last { &series[series.len() - w..] } else { &series[..w] };
    Some(part.iter().sum::<f64>() / w as f64)
}

fn summarize(seed: u64, selector: Selector, history: &History) -> TrainReport {
    let last_sel = history.epochs.iter().rev().find_map(|r| r.selection.as_ref());
    let ks = history.mean_k_series();
    TrainReport {
        seed,
        selector,
        epochs: history.epochs.len(),
        final_accuracy: history.final_accuracy().unwrap_or(0.0),
        final_selection: last_sel.and_then(|s| s.metrics),
        final_selection_size: last_sel.map(|s| s.clean_size),
        mean_k_first: window_mean(&ks, false, 10),
        mean_k_last: window_mean(&ks, true, 10),
    }
}

/// Train one seed with `pipeline`, without touching the disk.
pub fn run_training(
    config: &ExperimentConfig,
    seed: u64,
    pipeline: &PipelineConfig,
) -> Result<(SoftmaxModel, History, TrainReport), Error> {
    let (train, test) = prepare_data(config, seed)?;
    let (_, train_cfg) = config.seeded(seed);
    let (model, history) = train_loop(&train, &test, pipeline, &train_cfg)?;
    let report = summarize(seed, pipeline.selector, &history);
    Ok((model, history, report))
}

/// Train every seed; write `model.json`, `history.jsonl` and `report.json` per seed.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Vec<TrainReport>, Error> {
    let mut reports = Vec::new();
    for &seed in &config.seeds {
        let dir = config.run_dir(seed);
        create_dir(&dir)?;
        let (model, history, report) = run_training(config, seed, &config.pipeline)?;
        model.save(dir.join("model.json"))?;
        history.write_jsonl(dir.join("history.jsonl"))?;
        write_json(&dir.join("report.json"), &report)?;
        log::info!("seed {seed}: final accuracy {:.4}", report.final_accuracy);
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
}

/// Accuracy of a stored model on a stored dataset; optionally writes its predictions.
pub fn cmd_eval(
    model_path: impl AsRef<Path>,
    dataset_path: impl AsRef<Path>,
    preds_out: Option<&Path>,
) -> Result<EvalReport, Error> {
    let model = SoftmaxModel::load(model_path)?;
    let dataset = load_dataset(dataset_path)?;
    let accuracy = evaluate_accuracy(&model, &dataset)?;
    if let Some(path) = preds_out {
        save_predictions(&predict_dataset(&model, &dataset, 0)?, path)?;
    }
    Ok(EvalReport { samples: dataset.len(), accuracy })
}

/// One selector's outcome on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRun {
    pub selector: Selector,
    pub seed: u64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub selection_size: usize,
    pub accuracy: f64,
}

/// Every selector on the predictions of one warm-up model.
pub fn selection_study(config: &ExperimentConfig, seed: u64, selectors: &[Selector]) -> Result<Vec<CompareRun>, Error> {
    let (train, test) = prepare_data(config, seed)?;
    let (_, mut train_cfg) = config.seeded(seed);
    train_cfg.epochs = train_cfg.warmup_epochs.max(1);
    let warm = config.pipeline.with_selector(Selector::Passthrough);
    let (model, _) = train_loop(&train, &test, &warm, &train_cfg)?;
    let accuracy = evaluate_accuracy(&model, &test)?;
    let preds = predict_dataset(&model, &train, train_cfg.epochs as u32)?;
    selectors
        .iter()
        .map(|&selector| {
            let result = select(&train, &preds, &config.pipeline.with_selector(selector))?;
            let m = selection_metrics(&result, &train)?;
            Ok(CompareRun {
                selector,
                seed,
                f1: m.f1,
                precision: m.precision,
                recall: m.recall,
                selection_size: m.selection_size,
                accuracy,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub selector: Selector,
    pub f1: MeanStd,
    pub selection_size: MeanStd,
    pub accuracy: MeanStd,
    /// Mean over seeds of the rank (1 = best, ties share the average rank): by
    /// final accuracy in train mode, by clean-F1 in select mode, where every
    /// selector shares one model.
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub mode: CompareMode,
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
    pub runs: Vec<CompareRun>,
}

/// Average ranks, highest value first.
pub fn ranks_desc(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn build_table(mode: CompareMode, seeds: &[u64], selectors: &[Selector], runs: Vec<CompareRun>) -> CompareTable {
    let mut rank_sum = vec![0.0; selectors.len()];
    for &seed in seeds {
        let key = |r: &CompareRun| match mode {
            CompareMode::Train => r.accuracy,
            CompareMode::Select => r.f1,
        };
        let score: Vec<f64> = selectors
            .iter()
            .map(|s| runs.iter().find(|r| r.seed == seed && r.selector == *s).map_or(f64::NEG_INFINITY, key))
            .collect();
        for (sum, r) in rank_sum.iter_mut().zip(ranks_desc(&score)) {
            *sum += r;
        }
    }
    let rows = selectors
        .iter()
        .zip(rank_sum)
        .map(|(&selector, rank)| {
            let mine: Vec<&CompareRun> = runs.iter().filter(|r| r.selector == selector).collect();
            let col = |f: fn(&CompareRun) -> f64| MeanStd::of(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            CompareRow {
                selector,
                f1: col(|r| r.f1),
                selection_size: col(|r| r.selection_size as f64),
                accuracy: col(|r| r.accuracy),
                mean_rank: rank / seeds.len().max(1) as f64,
            }
        })
        .collect();
    CompareTable { mode, seeds: seeds.to_vec(), rows, runs }
}

/// Run every configured selector over every seed and write `compare.csv` and `compare.json`.
pub fn cmd_compare(config: &ExperimentConfig) -> Result<CompareTable, Error> {
    if config.selectors.is_empty() {
        return Err(Error::Config("selectors: compare needs at least one selector".into()));
    }
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        match config.compare_mode {
            CompareMode::Select => runs.extend(selection_study(config, seed, &config.selectors)?),
            CompareMode::Train => {
                for &selector in &config.selectors {
                    let (_, _, rep) = run_training(config, seed, &config.pipeline.with_selector(selector))?;
                    let m = rep.final_selection.unwrap_or_default();
                    runs.push(CompareRun {
                        selector,
                        seed,
                        f1: m.f1,
                        precision: m.precision,
                        recall: m.recall,
                        selection_size: rep.final_selection_size.unwrap_or(0),
                        accuracy: rep.final_accuracy,
                    });
                }
            }
        }
        log::info!("seed {seed} done");
    }
    let table = build_table(config.compare_mode, &config.seeds, &config.selectors, runs);
    create_dir(&config.out_dir)?;
    write_json(&config.out_dir.join("compare.json"), &table)?;
    write_compare_csv(&config.out_dir.join("compare.csv"), &table)?;
    Ok(table)
}

fn write_compare_csv(path: &Path, table: &CompareTable) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "selector",
        "f1_mean",
        "f1_std",
        "selection_size_mean",
        "selection_size_std",
        "accuracy_mean",
        "accuracy_std",
        "mean_rank",
    ])?;
    for r in &table.rows {
        w.write_record([
            r.selector.to_string(),
            format!("{:.6}", r.f1.mean),
            format!("{:.6}", r.f1.std),
            format!("{:.2}", r.selection_size.mean),
            format!("{:.2}", r.selection_size.std),
            format!("{:.6}", r.accuracy.mean),
            format!("{:.6}", r.accuracy.std),
            format!("{:.3}", r.mean_rank),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn overrides_merge_into_preset() {
        let cfg = ExperimentConfig::from_json(
            r#"{"preset": "bench-sym80", "pipeline": {"gamma_e": 0.5}, "seeds": [9], "train": {"epochs": 3}}"#,
        )
        .unwrap();
        assert_eq!(cfg.pipeline.gamma_r, 0.8);
        assert_eq!(cfg.pipeline.gamma_e, 0.5);
        assert_eq!(cfg.noise.eta, 0.8);
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn bad_fields_are_named() {
        let err = ExperimentConfig::from_json(r#"{"noise": {"kind": "sideways", "eta": 0.2}}"#).unwrap_err();
        assert!(err.to_string().contains("noise.kind"), "{err}");
        assert_eq!(exit_code(&err), EXIT_CONFIG);
        let err = ExperimentConfig::from_json(r#"{"selectors": ["anne", "magic"]}"#).unwrap_err();
        assert!(err.to_string().contains("selector"), "{err}");
        assert!(ExperimentConfig::from_json(r#"{"seeds": []}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"preset": "nope"}"#).is_err());
    }

    #[test]
    fn set_path_parses_json_values() {
        let mut v = serde_json::json!({"train": {"epochs": 2}});
        set_path(&mut v, "train.epochs=7").unwrap();
        set_path(&mut v, "pipeline.selector=fine_only").unwrap();
        assert_eq!(v["train"]["epochs"], 7);
        assert_eq!(v["pipeline"]["selector"], "fine_only");
        assert!(set_path(&mut v, "novalue").is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks_desc(&[0.5, 0.9, 0.5, 0.1]), vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn rank_key_follows_the_mode() {
        let run = |selector, f1, accuracy| CompareRun { selector, seed: 0, f1, precision: 0.0, recall: 0.0, selection_size: 1, accuracy };
        let runs = vec![run(Selector::Anne, 0.2, 0.9), run(Selector::FineOnly, 0.8, 0.9)];
        let sels = [Selector::Anne, Selector::FineOnly];
        let by_f1 = build_table(CompareMode::Select, &[0], &sels, runs.clone());
        assert_eq!((by_f1.rows[0].mean_rank, by_f1.rows[1].mean_rank), (2.0, 1.0));
        let by_acc = build_table(CompareMode::Train, &[0], &sels, runs);
        assert_eq!((by_acc.rows[0].mean_rank, by_acc.rows[1].mean_rank), (1.5, 1.5));
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }
}

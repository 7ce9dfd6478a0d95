//! Training loops for the classifier and the localizer.

mod augment;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, apply_stats, fit_stats, ChannelStats, FeatureError, FeatureSequence};
use crate::localization::{encode_tags, LocalizationError, DEFAULT_STRIDE, DEFAULT_WINDOW};
use crate::metrics;
use crate::models::{ClassifierConfig, HeadConfig, ModelError, ModelHeader, ModelKind, SavedModel, Tag, TcnModel, DEFAULT_TAG_WEIGHTS};
use crate::nn::{adamw_step, softmax_rows, NnError, OptimizerConfig, SeqTensor, Tape};

pub use augment::{
    augment, channel_dropout, clip_rng, feature_shift, gaussian_noise, index_swap, stable_hash, temporal_dropout,
    zero_channel, AugmentationConfig, Mode,
};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("no usable clips in the corpus")]
    EmptyCorpus,
    #[error("{split} split has a single class ({count} clips)")]
    DegenerateSplit { split: &'static str, count: usize },
    #[error("clip {id}: label {label} disagrees with {segments} fake segments")]
    InconsistentLabel { id: String, label: bool, segments: usize },
    #[error("clip {id}: fps {found} differs from corpus fps {expected}")]
    FpsMismatch { id: String, expected: f64, found: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<NnError> for TrainingError {
    fn from(e: NnError) -> Self {
        TrainingError::Model(ModelError::Nn(e))
    }
}

/// A feature sequence with its video label and fake intervals in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub id: String,
    pub features: FeatureSequence,
    pub label: bool,
    pub segments: Vec<(f64, f64)>,
}

impl LabeledClip {
    pub fn new(id: impl Into<String>, features: FeatureSequence, label: bool, segments: Vec<(f64, f64)>) -> Result<Self, TrainingError> {
        let clip = Self {
            id: id.into(),
            features,
            label,
            segments,
        };
        clip.check()?;
        Ok(clip)
    }

    pub fn check(&self) -> Result<(), TrainingError> {
        if self.label == self.segments.is_empty() {
            return Err(TrainingError::InconsistentLabel {
                id: self.id.clone(),
                label: self.label,
                segments: self.segments.len(),
            });
        }
        Ok(())
    }

    pub fn tags(&self) -> Result<Vec<Tag>, TrainingError> {
        Ok(encode_tags(&self.segments, self.features.len(), self.features.fps, true)?)
    }
}

/// One entry of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub features: PathBuf,
    pub label: u8,
    #[serde(default)]
    pub segments: Vec<[f64; 2]>,
}

impl ManifestEntry {
    /// Explicit id, else the feature file stem.
    pub fn video_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.features
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, TrainingError> {
    let text = std::fs::read_to_string(path)?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| TrainingError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    for e in &entries {
        if e.label > 1 {
            return Err(TrainingError::Manifest {
                path: path.display().to_string(),
                message: format!("label {} of {} is not 0 or 1", e.label, e.video_id()),
            });
        }
    }
    Ok(entries)
}

/// Reads every feature file of a manifest; relative paths resolve against
/// the manifest's directory.
pub fn load_corpus(path: &Path) -> Result<Vec<LabeledClip>, TrainingError> {
    let base = path.parent().unwrap_or(Path::new("."));
    read_manifest(path)?
        .into_iter()
        .map(|e| {
            let feat_path = if e.features.is_absolute() { e.features.clone() } else { base.join(&e.features) };
            let features = features::read_features_file(&feat_path)?;
            let segments = e.segments.iter().map(|s| (s[0], s[1])).collect();
            LabeledClip::new(e.video_id(), features, e.label == 1, segments)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub augmentation: AugmentationConfig,
    pub architecture: ClassifierConfig,
    pub head: HeadConfig,
    pub tag_weights: [f64; 4],
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub max_frames: usize,
    pub val_fraction: f64,
    pub window: usize,
    pub stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            augmentation: AugmentationConfig::default(),
            architecture: ClassifierConfig::default(),
            head: HeadConfig::default(),
            tag_weights: DEFAULT_TAG_WEIGHTS,
            batch_size: 16,
            patience: 10,
            seed: 0,
            max_frames: DEFAULT_WINDOW,
            val_fraction: 0.1,
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        self.optimizer.validate()?;
        self.augmentation.validate().map_err(TrainingError::InvalidConfig)?;
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if self.window == 0 || self.stride == 0 || self.max_frames == 0 {
            return bad("window, stride and max_frames must be positive");
        }
        if self.tag_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("tag weights must be finite and non-negative");
        }
        Ok(())
    }
}

/// Deterministic split on a hash of the clip id.
pub fn is_validation(id: &str, val_fraction: f64) -> bool {
    (stable_hash(id) % 10_000) < (val_fraction * 10_000.0).round() as u64
}

pub fn split_corpus(corpus: &[LabeledClip], val_fraction: f64) -> (Vec<LabeledClip>, Vec<LabeledClip>) {
    corpus.iter().cloned().partition(|c| !is_validation(&c.id, val_fraction))
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_loss,val_metric,val_loss,lr")?;
    for r in history {
        writeln!(w, "{},{},{},{},{}", r.epoch, r.train_loss, r.val_metric, r.val_loss, r.lr)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best checkpoint, already narrowed to the stored precision.
    pub model: SavedModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_clips: usize,
    pub val_clips: usize,
}

/// Validation improves on `(metric, -loss)` in lexicographic order.
#[derive(Debug, Clone, Copy)]
pub struct EarlyStopState {
    pub best_metric: f64,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub patience: usize,
    pub since_improvement: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self {
            best_metric: f64::NEG_INFINITY,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            patience,
            since_improvement: 0,
        }
    }

    /// Records an epoch; returns whether it is the new best.
    pub fn update(&mut self, epoch: usize, metric: f64, loss: f64) -> bool {
        let better = metric > self.best_metric || (metric == self.best_metric && loss < self.best_loss);
        if better {
            self.best_metric = metric;
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        better
    }

    pub fn should_stop(&self) -> bool {
        self.since_improvement > self.patience
    }
}

/// Balanced accuracy over the tags present in `truth`.
pub fn macro_tag_accuracy(pred: &[Tag], truth: &[Tag]) -> f64 {
    let mut hit = [0usize; 4];
    let mut total = [0usize; 4];
    for (p, t) in pred.iter().zip(truth) {
        total[t.index()] += 1;
        if p == t {
            hit[t.index()] += 1;
        }
    }
    let present: Vec<f64> = (0..4).filter(|&k| total[k] > 0).map(|k| hit[k] as f64 / total[k] as f64).collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Task {
    Classify,
    Localize,
}

struct Prepared {
    id: String,
    x: SeqTensor,
    label: bool,
    tags: Vec<usize>,
}

fn prepare(clips: &[LabeledClip], stats: &ChannelStats, task: Task) -> Result<Vec<Prepared>, TrainingError> {
    clips
        .iter()
        .map(|c| {
            let tags = match task {
                Task::Localize => c.tags()?.iter().map(|t| t.index()).collect(),
                Task::Classify => Vec::new(),
            };
            Ok(Prepared {
                id: c.id.clone(),
                x: apply_stats(&c.features, stats).data,
                label: c.label,
                tags,
            })
        })
        .collect()
}

fn clip_loss(model: &TcnModel, tape: &mut Tape, x: &SeqTensor, clip: &Prepared, task: Task, weights: &[f64; 4]) -> Result<crate::nn::NodeId, TrainingError> {
    Ok(match task {
        Task::Classify => {
            let z = model.forward_logit(tape, x, None)?;
            tape.bce_with_logits(z, if clip.label { 1.0 } else { 0.0 })?
        }
        Task::Localize => {
            let z = model.forward_tag_logits(tape, x, None)?;
            tape.weighted_cross_entropy(z, &clip.tags, weights)?
        }
    })
}

/// Mean loss over clips with augmentations off.
fn mean_loss(model: &TcnModel, clips: &[Prepared], task: Task, weights: &[f64; 4]) -> Result<f64, TrainingError> {
    let mut total = 0.0;
    for c in clips {
        let mut tape = Tape::new();
        let loss = clip_loss(model, &mut tape, &c.x, c, task, weights)?;
        total += tape.scalar(loss);
    }
    Ok(total / clips.len().max(1) as f64)
}

/// Validation metric and loss in one pass.
fn validate(model: &TcnModel, clips: &[Prepared], task: Task, weights: &[f64; 4]) -> Result<(f64, f64), TrainingError> {
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(clips.len());
    let mut labels = Vec::with_capacity(clips.len());
    let mut pred_tags = Vec::new();
    let mut true_tags = Vec::new();
    for c in clips {
        let mut tape = Tape::new();
        match task {
            Task::Classify => {
                let z = model.forward_logit(&mut tape, &c.x, None)?;
                let logit = tape.scalar(z);
                let l = tape.bce_with_logits(z, if c.label { 1.0 } else { 0.0 })?;
                loss += tape.scalar(l);
                scores.push(crate::nn::sigmoid(logit));
                labels.push(c.label);
            }
            Task::Localize => {
                let z = model.forward_tag_logits(&mut tape, &c.x, None)?;
                let probs = softmax_rows(tape.value(z));
                let l = tape.weighted_cross_entropy(z, &c.tags, weights)?;
                loss += tape.scalar(l);
                pred_tags.extend(crate::localization::argmax_tags(&probs));
                true_tags.extend(c.tags.iter().map(|&t| Tag::from_index(t)));
            }
        }
    }
    let metric = match task {
        Task::Classify => metrics::auc(&scores, &labels).unwrap_or(0.5),
        Task::Localize => macro_tag_accuracy(&pred_tags, &true_tags),
    };
    Ok((metric, loss / clips.len().max(1) as f64))
}

fn check_split(clips: &[LabeledClip], split: &'static str) -> Result<(), TrainingError> {
    let pos = clips.iter().filter(|c| c.label).count();
    if pos == 0 || pos == clips.len() {
        return Err(TrainingError::DegenerateSplit { split, count: clips.len() });
    }
    Ok(())
}

fn corpus_fps(clips: &[LabeledClip]) -> Result<f64, TrainingError> {
    let fps = clips[0].features.fps;
    for c in clips {
        if c.features.fps != fps {
            return Err(TrainingError::FpsMismatch {
                id: c.id.clone(),
                expected: fps,
                found: c.features.fps,
            });
        }
    }
    Ok(fps)
}

fn run(task: Task, train: &[LabeledClip], val: &[LabeledClip], cfg: &TrainConfig, init: Option<&TcnModel>) -> Result<TrainOutcome, TrainingError> {
    cfg.validate()?;
    let keep = |c: &&LabeledClip| c.features.len() <= cfg.max_frames && !c.features.is_empty();
    let train: Vec<LabeledClip> = train.iter().filter(keep).cloned().collect();
    let val: Vec<LabeledClip> = val.iter().filter(keep).cloned().collect();
    if train.is_empty() || val.is_empty() {
        return Err(TrainingError::EmptyCorpus);
    }
    for c in train.iter().chain(&val) {
        c.check()?;
    }
    check_split(&train, "training")?;
    check_split(&val, "validation")?;
    let fps = corpus_fps(&train)?;
    corpus_fps(&val)?;

    let refs: Vec<&FeatureSequence> = train.iter().map(|c| &c.features).collect();
    let stats = fit_stats(&refs)?;
    let train_set = prepare(&train, &stats, task)?;
    let val_set = prepare(&val, &stats, task)?;

    let mut model = match task {
        Task::Classify => TcnModel::classifier(cfg.architecture.clone(), cfg.seed),
        Task::Localize => TcnModel::localizer(cfg.architecture.clone(), cfg.head.clone(), cfg.seed),
    };
    if let Some(init) = init {
        model.warm_start_from(init)?;
    }

    let opt = &cfg.optimizer;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stop = EarlyStopState::new(cfg.patience);
    let mut best = model.params().values_snapshot();
    let mut history = Vec::new();
    let mut step: u64 = 0;
    for epoch in 0..opt.total_epochs {
        let lr = opt.cosine_lr(epoch);
        order.shuffle(&mut clip_rng(cfg.seed, "shuffle", epoch));
        let mut train_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.params_mut().zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let clip = &train_set[i];
                let mut rng = clip_rng(cfg.augmentation.seed ^ cfg.seed, &clip.id, epoch);
                let x = augment(&clip.x, &cfg.augmentation, Mode::Train, &mut rng);
                let mut tape = Tape::new();
                let loss = clip_loss(&model, &mut tape, &x, clip, task, &cfg.tag_weights)?;
                train_loss += tape.scalar(loss);
                tape.backward_accumulate(loss, model.params_mut(), scale)?;
            }
            step += 1;
            adamw_step(model.params_mut(), opt, lr, step);
        }
        let (val_metric, val_loss) = validate(&model, &val_set, task, &cfg.tag_weights)?;
        history.push(EpochRecord {
            epoch,
            train_loss: train_loss / train_set.len() as f64,
            val_metric,
            val_loss,
            lr,
        });
        if stop.update(epoch, val_metric, val_loss) {
            best = model.params().values_snapshot();
        }
        if stop.should_stop() {
            break;
        }
    }
    model.params_mut().restore_values(&best);
    let kind = model.kind();
    let saved = SavedModel {
        header: ModelHeader {
            kind,
            architecture: model.config().clone(),
            channel_stats: stats,
            fps,
            tag_weights: cfg.tag_weights,
            window: cfg.window,
            stride: cfg.stride,
        },
        model,
    };
    let narrowed = SavedModel::read(saved.to_bytes()?.as_slice())?;
    Ok(TrainOutcome {
        model: narrowed,
        history,
        best_epoch: stop.best_epoch,
        train_clips: train.len(),
        val_clips: val.len(),
    })
}

/// Trains on video labels with the hash-derived split.
pub fn train_classifier(corpus: &[LabeledClip], cfg: &TrainConfig) -> Result<TrainOutcome, TrainingError> {
    if corpus.is_empty() {
        return Err(TrainingError::EmptyCorpus);
    }
    let (train, val) = split_corpus(corpus, cfg.val_fraction);
    run(Task::Classify, &train, &val, cfg, None)
}

pub fn train_classifier_split(train: &[LabeledClip], val: &[LabeledClip], cfg: &TrainConfig) -> Result<TrainOutcome, TrainingError> {
    run(Task::Classify, train, val, cfg, None)
}

/// Trains per-frame tags. `init` warm-starts trunk and classification
/// branch from a classifier.
pub fn train_localizer(corpus: &[LabeledClip], cfg: &TrainConfig, init: Option<&TcnModel>) -> Result<TrainOutcome, TrainingError> {
    if corpus.is_empty() {
        return Err(TrainingError::EmptyCorpus);
    }
    let (train, val) = split_corpus(corpus, cfg.val_fraction);
    run(Task::Localize, &train, &val, cfg, init)
}

pub fn train_localizer_split(train: &[LabeledClip], val: &[LabeledClip], cfg: &TrainConfig, init: Option<&TcnModel>) -> Result<TrainOutcome, TrainingError> {
    run(Task::Localize, train, val, cfg, init)
}

/// Mean training loss with augmentations off, normalizing with `stats`.
pub fn corpus_loss(model: &TcnModel, clips: &[LabeledClip], stats: &ChannelStats, weights: &[f64; 4]) -> Result<f64, TrainingError> {
    let task = match model.kind() {
        ModelKind::Classifier => Task::Classify,
        ModelKind::Localizer => Task::Localize,
    };
    mean_loss(model, &prepare(clips, stats, task)?, task, weights)
}

//! Training loop shared by the selector, the direct removal network and
//! the PIT baseline.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{eval_pit_oracle, eval_removal, eval_selection, RemovalScheme, SelectionMode};
use crate::nn::{
    load_checkpoint, save_checkpoint, AdamConfig, AdamState, Checkpoint, Model, ModelConfig, TrainState,
};
use crate::pit::pit_loss_with_grad;
use crate::rng::derive_rng;
use crate::scene::{SceneItem, SceneSource};
use crate::signal::{log_mse_with_grad, mix_reference, neg_snr_with_grad, ClassVector};

const EPOCH_TAG: u64 = 0xe90c;
const EXAMPLE_TAG: u64 = 0xe8a3;
const CROP_ATTEMPTS: usize = 16;
/// Share of examples that select an absent class when inactive targets
/// are enabled.
const INACTIVE_SHARE: f64 = 0.2;
pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
const METRICS_HEADER: &str = "step,epoch,loss_db,dev_sdri_db,wall_time_s";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Negative SNR of the estimate against the reference, in dB.
    Snr,
    /// `10 log10(MSE + ε)`; PIT always uses its permutation form.
    LogMse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(LossKind::Snr),
            "log-mse" | "log_mse" => Ok(LossKind::LogMse),
            other => Err(Error::Config(format!("unknown loss kind {other:?}, expected snr or log-mse"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Defaults to `ceil(dataset size / batch size)`.
    pub steps_per_epoch: Option<usize>,
    /// Relative weight of drawing I = 1, 2, … selected classes.
    pub target_count_weights: Vec<f64>,
    /// Defaults to SNR for conditioned models; PIT always uses log-MSE.
    pub loss_kind: Option<LossKind>,
    /// Also train on requests for classes absent from the mixture, with a
    /// zero reference and log-MSE loss.
    pub include_inactive: bool,
    /// Random crop length in seconds; whole mixtures when unset.
    pub crop_s: Option<f64>,
    /// Limits the dev items scored after each epoch.
    pub dev_items: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            grad_clip_norm: 5.0,
            batch_size: 8,
            max_epochs: 200,
            steps_per_epoch: None,
            target_count_weights: vec![1.0, 1.0],
            loss_kind: None,
            include_inactive: false,
            crop_s: None,
            dev_items: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("grad_clip_norm must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be at least 1".into()));
        }
        let w = &self.target_count_weights;
        if w.is_empty() || w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(
                "target_count_weights must be non-negative with a positive sum".into(),
            ));
        }
        if let Some(c) = self.crop_s {
            if !(c > 0.0) {
                return Err(Error::Config("crop_s must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    /// Reads JSON, or `key = value` lines (`#` starts a comment).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let cfg: Self = if trimmed.starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?
        } else {
            let mut cfg = Self::default();
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
                cfg.set(k.trim(), v.trim())?;
            }
            cfg
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut obj = serde_json::to_value(&*self)?;
        let parsed = match key {
            "loss_kind" => serde_json::to_value(value.parse::<LossKind>()?)?,
            "target_count_weights" => {
                let w = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("target_count_weights: {e}")))?;
                serde_json::to_value(w)?
            }
            _ => serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string())),
        };
        let map = obj.as_object_mut().expect("struct serialises to an object");
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown train config key {key:?}")));
        }
        map.insert(key.to_string(), parsed);
        *self = serde_json::from_value(obj).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }
}

/// Draws I from `weights` truncated to `|active|`, then a uniform I-subset
/// of `active`.
pub fn sample_target_vector(
    active: &[usize],
    num_classes: usize,
    weights: &[f64],
    rng: &mut impl Rng,
) -> Result<ClassVector> {
    if active.is_empty() {
        return Err(Error::invalid("no active classes to select from"));
    }
    let max_i = weights.len().min(active.len());
    let w = &weights[..max_i];
    let total: f64 = w.iter().sum();
    let count = if total > 0.0 {
        let mut u = rng.random::<f64>() * total;
        let mut pick = max_i;
        for (i, &wi) in w.iter().enumerate() {
            if u < wi {
                pick = i + 1;
                break;
            }
            u -= wi;
        }
        // guard against rounding at the top end
        while pick > 1 && w[pick - 1] == 0.0 {
            pick -= 1;
        }
        pick
    } else {
        1
    };
    let chosen: Vec<usize> = active.choose_multiple(rng, count).copied().collect();
    ClassVector::from_indices(num_classes, &chosen)
}

/// One training input with its reference(s).
#[derive(Clone, Debug)]
pub struct TrainingExample {
    pub id: String,
    pub mixture: Vec<f64>,
    /// One reference per output channel (K for PIT, padded with silence).
    pub references: Vec<Vec<f64>>,
    pub o: Option<ClassVector>,
    pub loss: LossKind,
}

/// Classes whose stem is at least as loud as the background over `range`.
fn active_in(item: &SceneItem, start: usize, len: usize) -> Vec<usize> {
    let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    let bg = rms(&item.background[start..start + len]);
    item.active_classes
        .iter()
        .copied()
        .filter(|&k| {
            let s = rms(&item.stems.stem(k)[start..start + len]);
            s > 0.0 && s >= bg
        })
        .collect()
}

/// Builds an example from a scene: random crop, sampled targets and the
/// reference the model kind trains on.
pub fn make_example(
    item: &SceneItem,
    model: &ModelConfig,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingExample> {
    let total = item.mixture.len();
    let rate = item.mixture.sample_rate() as f64;
    let crop = cfg
        .crop_s
        .map(|c| ((c * rate).round() as usize).clamp(1, total))
        .unwrap_or(total);
    let (start, active) = if crop < total {
        let mut found = None;
        for _ in 0..CROP_ATTEMPTS {
            let s = rng.random_range(0..=total - crop);
            let act = active_in(item, s, crop);
            if !act.is_empty() {
                found = Some((s, act));
                break;
            }
        }
        match found {
            Some(f) => f,
            None => (0, Vec::new()),
        }
    } else {
        (0, item.active_classes.clone())
    };
    let (start, crop, active) = if active.is_empty() {
        (0, total, item.active_classes.clone())
    } else {
        (start, crop, active)
    };
    if active.is_empty() {
        return Err(Error::invalid(format!("scene {} has no active classes", item.id)));
    }
    let mixture = item.mixture[start..start + crop].to_vec();
    let stems = item.stems.slice(start, crop)?;
    let n = stems.num_classes();

    match model {
        ModelConfig::Pit(pc) => {
            if active.len() > pc.output_channels {
                return Err(Error::Config(format!(
                    "scene {} has {} active classes but the PIT model has {} outputs",
                    item.id,
                    active.len(),
                    pc.output_channels
                )));
            }
            let mut references: Vec<Vec<f64>> = active.iter().map(|&k| stems.stem(k).samples().to_vec()).collect();
            references.resize(pc.output_channels, vec![0.0; crop]);
            Ok(TrainingExample {
                id: item.id.clone(),
                mixture,
                references,
                o: None,
                loss: LossKind::LogMse,
            })
        }
        ModelConfig::Selector(_) | ModelConfig::RemovalDirect(_) => {
            let removal = matches!(model, ModelConfig::RemovalDirect(_));
            let default_loss = cfg.loss_kind.unwrap_or(LossKind::Snr);
            let inactive: Vec<usize> = (0..n).filter(|k| !active.contains(k)).collect();
            if cfg.include_inactive && !inactive.is_empty() && rng.random::<f64>() < INACTIVE_SHARE {
                let k = *inactive.choose(rng).expect("non-empty");
                let o = ClassVector::one_hot(n, k)?;
                let reference = if removal { mixture.clone() } else { vec![0.0; crop] };
                return Ok(TrainingExample {
                    id: item.id.clone(),
                    mixture,
                    references: vec![reference],
                    o: Some(o),
                    loss: LossKind::LogMse,
                });
            }
            let o = sample_target_vector(&active, n, &cfg.target_count_weights, rng)?;
            let selected = mix_reference(&stems, &o)?;
            let reference = if removal {
                mixture.iter().zip(selected.samples()).map(|(y, x)| y - x).collect()
            } else {
                selected.into_samples()
            };
            Ok(TrainingExample {
                id: item.id.clone(),
                mixture,
                references: vec![reference],
                o: Some(o),
                loss: default_loss,
            })
        }
    }
}

/// Loss of one example and its gradient with respect to every parameter.
pub fn example_loss_and_grad(model: &Model, ex: &TrainingExample) -> Result<(f64, Vec<f64>)> {
    let (outs, tape) = model.run_recording(&ex.mixture, ex.o.as_ref())?;
    let (loss, d_outs) = output_loss(ex, &outs)?;
    let mut grads = vec![0.0; model.num_params()];
    if loss.is_finite() {
        model.backward(model.params(), &tape, &d_outs, &mut grads);
    }
    Ok((loss, grads))
}

/// Loss of one example without gradients.
pub fn example_loss(model: &Model, ex: &TrainingExample) -> Result<f64> {
    let outs = model.run(model.params(), &ex.mixture, ex.o.as_ref(), None)?;
    Ok(output_loss(ex, &outs)?.0)
}

fn output_loss(ex: &TrainingExample, outs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if outs.len() > 1 {
        let (loss, grads, _) = pit_loss_with_grad(&ex.references, outs)?;
        return Ok((loss, grads));
    }
    let reference = &ex.references[0];
    let (loss, grad) = match ex.loss {
        LossKind::Snr => {
            if reference.iter().all(|&v| v == 0.0) {
                return Ok((f64::NAN, vec![vec![0.0; reference.len()]]));
            }
            neg_snr_with_grad(reference, &outs[0])?
        }
        LossKind::LogMse => log_mse_with_grad(reference, &outs[0])?,
    };
    Ok((loss, vec![grad]))
}

/// Scales `grads` so that its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    /// Mean loss over the batch before the update.
    pub loss: f64,
    pub grad_norm: f64,
}

/// One Adam update on the mean batch loss, after global-norm clipping.
/// Examples are differentiated in parallel and reduced in batch order.
/// A non-finite loss aborts the step without touching the weights.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut AdamState,
    batch: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let results = batch
        .par_iter()
        .map(|ex| example_loss_and_grad(model, ex))
        .collect::<Result<Vec<_>>>()?;
    let bad: Vec<String> = batch
        .iter()
        .zip(&results)
        .filter(|(_, (l, g))| !l.is_finite() || g.iter().any(|v| !v.is_finite()))
        .map(|(ex, _)| ex.id.clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonFiniteLoss { ids: bad });
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for (l, g) in &results {
        loss += l;
        grads.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    grads.iter_mut().for_each(|g| *g *= scale);
    let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip_norm);
    optimizer.update(&cfg.adam(), model.params_mut(), &grads)?;
    Ok(StepOutcome {
        loss: loss * scale,
        grad_norm,
    })
}

/// Training run controls that are not part of the recorded configuration.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Continue from the newest epoch checkpoint in the output directory.
    pub resume: bool,
    /// Start from these weights instead of a fresh initialisation.
    pub init: Option<Model>,
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub steps: u64,
    pub epochs: usize,
    pub last_loss: Option<f64>,
    pub best_dev_sdri_db: Option<f64>,
    pub model: Model,
}

pub fn epoch_checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("epoch-{epoch:04}.ckpt"))
}

/// Highest-numbered `epoch-NNNN.ckpt` in `dir`.
pub fn latest_epoch_checkpoint(dir: &Path) -> Result<Option<(usize, PathBuf)>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(format!("listing {}", dir.display()), e)),
    };
    let mut best = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let epoch = name
            .strip_prefix("epoch-")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<usize>().ok());
        if let Some(e) = epoch {
            if best.as_ref().is_none_or(|(b, _)| e > *b) {
                best = Some((e, entry.path()));
            }
        }
    }
    Ok(best)
}

/// Mean single-class SDRi on the dev set, the selection criterion for
/// `best.ckpt`.
pub fn dev_score(model: &Model, dev: &dyn SceneSource) -> Result<Option<f64>> {
    let report = match model.config() {
        ModelConfig::Selector(_) => eval_selection(dev, model, 1, SelectionMode::Simultaneous)?,
        ModelConfig::RemovalDirect(_) => eval_removal(dev, RemovalScheme::Direct(model), 1)?,
        ModelConfig::Pit(_) => eval_pit_oracle(dev, model)?,
    };
    Ok(report.rows.iter().find(|r| r.classes_in_mixture.is_none()).and_then(|r| r.mean_sdri_db))
}

struct Limited<'a> {
    inner: &'a dyn SceneSource,
    len: usize,
}

impl SceneSource for Limited<'_> {
    fn len(&self) -> usize {
        self.len
    }

    fn item(&self, index: usize) -> Result<SceneItem> {
        self.inner.item(index)
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn source_id(&self) -> String {
        self.inner.source_id()
    }
}

/// Batch of examples for a global step. Item order comes from a per-epoch
/// shuffle and example randomness from `(seed, step, slot)`, so a resumed
/// run draws exactly what an uninterrupted one would.
fn batch_for_step(
    train: &dyn SceneSource,
    model: &ModelConfig,
    cfg: &TrainConfig,
    order: &[usize],
    step_in_epoch: usize,
    global_step: u64,
) -> Result<Vec<TrainingExample>> {
    (0..cfg.batch_size)
        .map(|slot| {
            let idx = order[(step_in_epoch * cfg.batch_size + slot) % order.len()];
            let item = train.item(idx)?;
            let mut rng = derive_rng(cfg.seed, &[EXAMPLE_TAG, global_step, slot as u64]);
            make_example(&item, model, cfg, &mut rng)
        })
        .collect()
}

fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut derive_rng(seed, &[EPOCH_TAG, epoch as u64]));
    order
}

fn io_at(epoch: usize, step: u64, what: String, e: std::io::Error) -> Error {
    Error::io(format!("epoch {epoch}, step {step}: {what}"), e)
}

/// Keeps metrics rows up to `step` so a resumed log has no duplicates.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
    };
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for line in text.lines().skip(1) {
        let row_step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
        if row_step.is_some_and(|s| s <= step) {
            out.push_str(line);
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Runs `max_epochs` epochs, writing `epoch-NNNN.ckpt` after each one,
/// `best.ckpt` whenever the dev score improves, and one metrics row per
/// update step.
pub fn fit(
    train: &dyn SceneSource,
    dev: Option<&dyn SceneSource>,
    model_config: ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
    options: &FitOptions,
) -> Result<FitSummary> {
    cfg.validate()?;
    model_config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(n) = model_config.conditioning().map(|c| c.num_classes) {
        if n != train.num_classes() {
            return Err(Error::Config(format!(
                "model has {n} classes, training data has {}",
                train.num_classes()
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let steps_per_epoch = cfg.steps_per_epoch.unwrap_or(train.len().div_ceil(cfg.batch_size));
    let metrics_path = out_dir.join(METRICS_FILE);

    let mut model;
    let mut optimizer;
    let mut start_epoch = 0;
    let mut global_step = 0u64;
    let mut best = None;
    let mut wall_offset = 0.0;
    let resumed = if options.resume { latest_epoch_checkpoint(out_dir)? } else { None };
    if let Some((_, path)) = resumed {
        let ckpt = load_checkpoint(&path)?;
        let diffs = ckpt.model.config().differences(&model_config);
        if !diffs.is_empty() {
            return Err(Error::Config(format!(
                "cannot resume from {}: model differs ({})",
                path.display(),
                diffs.join(", ")
            )));
        }
        let state = ckpt
            .train_state
            .ok_or_else(|| Error::Config(format!("{} has no training state", path.display())))?;
        optimizer = ckpt
            .optimizer
            .ok_or_else(|| Error::Config(format!("{} has no optimizer state", path.display())))?;
        model = ckpt.model;
        start_epoch = state.epoch;
        global_step = state.global_step;
        best = state.best_dev_sdri_db;
        wall_offset = state.wall_time_s;
        truncate_metrics(&metrics_path, global_step)?;
        tracing::info!(epoch = start_epoch, step = global_step, "resuming");
    } else {
        model = match &options.init {
            Some(m) if m.config() == &model_config => m.clone(),
            Some(m) => {
                return Err(Error::Config(format!(
                    "initial weights differ from the model configuration: {}",
                    m.config().differences(&model_config).join(", ")
                )))
            }
            None => Model::new(model_config.clone(), cfg.seed)?,
        };
        optimizer = AdamState::new(model.num_params());
        fs::write(&metrics_path, format!("{METRICS_HEADER}\n"))
            .map_err(|e| Error::io(format!("writing {}", metrics_path.display()), e))?;
    }

    let dev_limited = dev.map(|d| Limited {
        inner: d,
        len: cfg.dev_items.map_or(d.len(), |n| n.min(d.len())),
    });
    let mut meta = serde_json::json!({ "train_source": train.source_id() });
    if let Some(names) = train.class_names() {
        meta["class_names"] = serde_json::json!(names);
    }
    let started = Instant::now();
    let mut last_loss = None;
    let mut final_checkpoint = latest_epoch_checkpoint(out_dir)?.map(|(_, p)| p);
    let best_path = out_dir.join(BEST_CHECKPOINT);

    for epoch in start_epoch..cfg.max_epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut rows = String::new();
        for s in 0..steps_per_epoch {
            let batch = batch_for_step(train, &model_config, cfg, &order, s, global_step)?;
            let outcome = train_step(&mut model, &mut optimizer, &batch, cfg).map_err(|e| match e {
                Error::NonFiniteLoss { ids } => {
                    tracing::error!(epoch, step = global_step, ?ids, "non-finite loss");
                    Error::NonFiniteLoss { ids }
                }
                other => other,
            })?;
            global_step += 1;
            last_loss = Some(outcome.loss);
            let wall = wall_offset + started.elapsed().as_secs_f64();
            let dev_col = if s + 1 == steps_per_epoch {
                match &dev_limited {
                    Some(d) => {
                        let score = dev_score(&model, d)?;
                        if let Some(v) = score {
                            if best.is_none_or(|b| v > b) {
                                best = Some(v);
                                let mut ck = Checkpoint::new(model.clone());
                                ck.meta = meta.clone();
                                save_checkpoint(&ck, &best_path)?;
                            }
                        }
                        score.map_or(String::new(), |v| format!("{v:.4}"))
                    }
                    None => String::new(),
                }
            } else {
                String::new()
            };
            rows.push_str(&format!(
                "{global_step},{},{:.6},{dev_col},{wall:.3}\n",
                epoch + 1,
                outcome.loss
            ));
            tracing::debug!(epoch = epoch + 1, step = global_step, loss = outcome.loss, "step");
        }
        let wall = wall_offset + started.elapsed().as_secs_f64();
        let ck = Checkpoint {
            model: model.clone(),
            meta: meta.clone(),
            train_state: Some(TrainState {
                epoch: epoch + 1,
                global_step,
                best_dev_sdri_db: best,
                wall_time_s: wall,
                train_config: serde_json::to_value(cfg)?,
            }),
            optimizer: Some(optimizer.clone()),
        };
        let path = epoch_checkpoint_path(out_dir, epoch + 1);
        save_checkpoint(&ck, &path)?;
        let mut f = OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(|e| io_at(epoch + 1, global_step, format!("opening {}", metrics_path.display()), e))?;
        f.write_all(rows.as_bytes())
            .map_err(|e| io_at(epoch + 1, global_step, format!("writing {}", metrics_path.display()), e))?;
        tracing::info!(epoch = epoch + 1, step = global_step, loss = ?last_loss, dev = ?best, "epoch done");
        final_checkpoint = Some(path);
    }

    let final_checkpoint = final_checkpoint.ok_or_else(|| Error::Config("max_epochs is 0, nothing trained".into()))?;
    Ok(FitSummary {
        final_checkpoint,
        best_checkpoint: best_path.exists().then_some(best_path),
        steps: global_step,
        epochs: cfg.max_epochs,
        last_loss,
        best_dev_sdri_db: best,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn key_value_and_json_agree() {
        let kv = TrainConfig::parse("learning_rate = 0.001\nbatch_size=4 # small\nloss_kind = log-mse\ntarget_count_weights = 1,2,1\ncrop_s = 1.0\n").unwrap();
        let js = TrainConfig::parse(
            r#"{"learning_rate":0.001,"batch_size":4,"loss_kind":"log-mse","target_count_weights":[1,2,1],"crop_s":1.0}"#,
        )
        .unwrap();
        assert_eq!(kv, js);
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("batch_size = 0").is_err());
    }

    #[test]
    fn delta_distribution_gives_one_hot_within_active() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let o = sample_target_vector(&[2, 5, 9], 10, &[1.0], &mut rng).unwrap();
            let s = o.support();
            assert_eq!(s.len(), 1);
            assert!([2, 5, 9].contains(&s[0]));
        }
    }

    #[test]
    fn count_is_truncated_to_active_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let o = sample_target_vector(&[4], 6, &[0.0, 0.0, 1.0], &mut rng).unwrap();
            assert_eq!(o.support(), vec![4]);
        }
    }

    #[test]
    fn clipping_hits_threshold() {
        let mut g = vec![3.0, 4.0];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        let after = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((after - 1.0).abs() < 1e-12);
        let mut small = vec![0.1, 0.1];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.1]);
    }
}

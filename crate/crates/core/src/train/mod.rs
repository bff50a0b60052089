//! Joint training with early stopping, learning-rate search, multi-seed
//! evaluation and a finite-difference gradient checker.

mod config;
mod gradcheck;
mod optim;
mod search;

use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EcqgSample;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalSettings, ScoreRow};
use crate::model::{
    encode_samples, with_pretrained, Checkpoint, DecodeOptions, EcqgModel, EncodedSample, LossParts, Objective,
    TokenBatch,
};
use crate::params::ParamStore;
use crate::tokenizer::Vocab;

pub use config::{BaseModelSize, TrainConfig, LR_GRID};
pub use gradcheck::{grad_check, toy_batch, GradCheckConfig, GradCheckReport, ParamCheck, COMPONENTS};
pub use optim::{check_finite, clip_global_norm, warmup_factor, AdamW};
pub use search::{lr_search, multi_seed, predict, select_learning_rate, LrRun, LrSearch, MultiSeedReport, SeedReport};

pub const CACHE_ENV: &str = "ECQG_CACHE_DIR";

/// Tracks the best criterion value; stops after `patience` epochs without a
/// strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, since_best: 0 }
    }

    /// Records epoch `epoch`; returns true when training should stop.
    pub fn update(&mut self, epoch: usize, value: f64) -> bool {
        match self.best {
            _ if value.is_nan() => self.since_best += 1,
            Some((_, b)) if value >= b => self.since_best += 1,
            _ => {
                self.best = Some((epoch, value));
                self.since_best = 0;
            }
        }
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn is_best(&self, epoch: usize) -> bool {
        self.best.is_some_and(|(e, _)| e == epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    EarlyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub parts: LossParts,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub train: LossSummary,
    pub validation: LossSummary,
    pub validation_metrics: Option<ScoreRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stop_reason: StopReason,
    pub total_steps: usize,
    /// Evaluation-mode loss over the training set before the first update.
    pub initial_train_loss: f64,
    /// Same, after the last update.
    pub final_train_loss: f64,
    pub dropped_train: usize,
    pub dropped_validation: usize,
}

impl TrainHistory {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn build_vocab(train: &[EcqgSample], config: &TrainConfig) -> Vocab {
    let texts = train.iter().flat_map(|s| [s.entity.as_str(), s.context.as_str(), s.question.as_str()]);
    Vocab::build(texts, config.vocab_min_freq, config.vocab_max_size)
}

fn pretrained_params(id: &str) -> Result<ParamStore> {
    let root = std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("init_from={id} needs {CACHE_ENV} to be set")))?;
    let path = root.join(id).join("weights.safetensors");
    if !path.exists() {
        return Err(Error::Config(format!("no pretrained weights at {}", path.display())));
    }
    ParamStore::load(&path)
}

/// A fresh model for `config`, seeded, optionally overlaid with cached weights.
pub fn init_model(config: &TrainConfig, vocab_size: usize, seed: u64) -> Result<EcqgModel> {
    let mc = config.model_config(vocab_size)?;
    let mut model = EcqgModel::new(mc, seed)?;
    if let Some(id) = &config.init_from {
        model.params = with_pretrained(&model.config, &pretrained_params(id)?, seed)?;
    }
    model.mode = config.mode;
    Ok(model)
}

fn batches(samples: &[EncodedSample], size: usize, order: &[usize]) -> Vec<TokenBatch> {
    order
        .chunks(size)
        .map(|idx| {
            let rows: Vec<EncodedSample> = idx.iter().map(|&i| samples[i].clone()).collect();
            TokenBatch::collate(&rows)
        })
        .collect()
}

/// Evaluation-mode loss over `batches`, averaged with row weights.
pub fn evaluate_loss(model: &EcqgModel, batches: &[TokenBatch], objective: &Objective) -> Result<LossSummary> {
    let results: Vec<(usize, LossParts, f64)> = batches
        .par_iter()
        .map(|b| model.loss(b, objective).map(|(p, t)| (b.batch_size(), p, t)))
        .collect::<Result<_>>()?;
    Ok(weighted_mean(&results))
}

fn weighted_mean(items: &[(usize, LossParts, f64)]) -> LossSummary {
    let n: usize = items.iter().map(|i| i.0).sum();
    let w = |k: usize| k as f64 / n.max(1) as f64;
    let opt = |get: fn(&LossParts) -> Option<f64>| -> Option<f64> {
        items.iter().map(|(k, p, _)| get(p).map(|v| v * w(*k))).sum()
    };
    LossSummary {
        parts: LossParts { qg: items.iter().map(|(k, p, _)| p.qg * w(*k)).sum(), cf: opt(|p| p.cf), qv: opt(|p| p.qv) },
        total: items.iter().map(|(k, _, t)| t * w(*k)).sum(),
    }
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn snapshot(model: &EcqgModel, vocab: &Vocab, samples: &[EcqgSample], n: usize) -> Result<Option<ScoreRow>> {
    if n == 0 || samples.is_empty() {
        return Ok(None);
    }
    let chosen = &samples[..n.min(samples.len())];
    let opts = DecodeOptions::greedy(model.config.max_target_len);
    let preds =
        chosen.par_iter().map(|s| model.generate(vocab, &s.entity, &s.context, &opts)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = chosen.iter().map(|s| s.id.clone()).collect();
    let refs: Vec<String> = chosen.iter().map(|s| s.question.clone()).collect();
    Ok(Some(evaluate(&ids, &preds, &refs, EvalSettings::default())?.scores()))
}

fn dump_batch(out: Option<&Path>, batch: &TokenBatch) -> Option<PathBuf> {
    let dir = out?;
    std::fs::create_dir_all(dir).ok()?;
    let path = dir.join("diverged_batch.json");
    batch.save(&path).ok()?;
    Some(path)
}

/// Trains with the first seed of `config`. See [`train_with_seed`].
pub fn train(
    train: &[EcqgSample],
    validation: &[EcqgSample],
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<(Checkpoint, TrainHistory)> {
    train_with_seed(train, validation, config, config.seeds[0], out)
}

/// Teacher-forced joint training. The persisted checkpoint holds the
/// parameters of the epoch with the lowest validation `loss_total`.
pub fn train_with_seed(
    train: &[EcqgSample],
    validation: &[EcqgSample],
    config: &TrainConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<(Checkpoint, TrainHistory)> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Precondition("training needs nonempty train and validation splits".into()));
    }
    let objective = config.objective()?;
    let vocab = build_vocab(train, config);
    let (train_enc, dropped_train) = encode_samples(train, &vocab, config.max_source_len, config.max_target_len);
    let (val_enc, dropped_val) = encode_samples(validation, &vocab, config.max_source_len, config.max_target_len);
    for (id, e) in dropped_train.iter().chain(&dropped_val) {
        warn!("skipping sample {id}: {e}");
    }
    if train_enc.is_empty() || val_enc.is_empty() {
        return Err(Error::Precondition("no encodable samples left in train or validation".into()));
    }
    let mut model = init_model(config, vocab.len(), seed)?;
    let batch_size = config.batch_size();
    let identity: Vec<usize> = (0..train_enc.len()).collect();
    let train_eval = batches(&train_enc, batch_size, &identity);
    let val_batches = batches(&val_enc, batch_size, &(0..val_enc.len()).collect::<Vec<_>>());
    let initial_train_loss = evaluate_loss(&model, &train_eval, &objective)?.total;

    let per_epoch = train_enc.len().div_ceil(batch_size);
    let planned = config.max_steps.unwrap_or(usize::MAX).min(per_epoch * config.max_epochs());
    let mut opt = AdamW::new(config.weight_decay);
    let mut stopper = EarlyStopper::new(config.early_stop_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_params = model.params.clone();
    let mut epochs = Vec::new();
    let mut step = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut lr = config.learning_rate;

    'outer: for epoch in 1..=config.max_epochs() {
        let mut order = identity.clone();
        order.shuffle(&mut rng);
        let mut seen = Vec::new();
        for batch in batches(&train_enc, batch_size, &order) {
            if step >= planned {
                break;
            }
            let dropout_seed = Some(step_seed(seed, step));
            let result = model.loss_and_grads(&batch, &objective, dropout_seed)?;
            if !result.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    message: format!("loss_total = {}", result.total),
                    dump: dump_batch(out, &batch),
                });
            }
            let mut grads = result.grads;
            if let Err(e) = check_finite(&grads) {
                dump_batch(out, &batch);
                return Err(e);
            }
            clip_global_norm(&mut grads, config.clip_norm);
            lr = config.learning_rate * warmup_factor(step, planned, config.warmup_fraction);
            opt.step(&mut model.params, &grads, lr)?;
            seen.push((batch.batch_size(), result.parts, result.total));
            step += 1;
        }
        if seen.is_empty() {
            stop_reason = StopReason::MaxSteps;
            break;
        }
        let val = evaluate_loss(&model, &val_batches, &objective)?;
        let record = EpochRecord {
            epoch,
            steps: step,
            learning_rate: lr,
            train: weighted_mean(&seen),
            validation: val,
            validation_metrics: snapshot(&model, &vocab, validation, config.snapshot_samples)?,
        };
        info!("epoch {epoch} step {step}: train {:.5} validation {:.5}", record.train.total, record.validation.total);
        epochs.push(record);
        let stop = stopper.update(epoch, val.total);
        if stopper.is_best(epoch) {
            best_params = model.params.clone();
        }
        if stop {
            stop_reason = StopReason::EarlyStop;
            break 'outer;
        }
        if step >= planned {
            stop_reason =
                if step < per_epoch * config.max_epochs() { StopReason::MaxSteps } else { StopReason::MaxEpochs };
            break;
        }
    }

    let final_train_loss = evaluate_loss(&model, &train_eval, &objective)?.total;
    let (best_epoch, best_validation_loss) = stopper.best().ok_or_else(|| Error::Divergence {
        epoch: epochs.len(),
        step,
        message: "validation loss was never finite".into(),
        dump: None,
    })?;
    model.params = best_params;
    let history = TrainHistory {
        seed,
        learning_rate: config.learning_rate,
        epochs,
        best_epoch,
        best_validation_loss,
        stop_reason,
        total_steps: step,
        initial_train_loss,
        final_train_loss,
        dropped_train: dropped_train.len(),
        dropped_validation: dropped_val.len(),
    };
    let mut ckpt = Checkpoint::new(model, vocab, config.base_model_size.name(), config.lambda1, config.lambda2, seed);
    ckpt.manifest.extra.insert("train_config".into(), serde_json::to_value(config)?);
    ckpt.manifest.extra.insert("best_epoch".into(), best_epoch.into());
    if let Some(dir) = out {
        ckpt.save(dir)?;
        history.save(&dir.join("history.json"))?;
    }
    Ok((ckpt, history))
}

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::ranking_loss;
use super::schedule::{PlateauSchedule, ScheduleEvent};
use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, ModelCheckpoint, OptimizerSnapshot, Pathway};
use crate::rng::{keyed_rng, stream_rng, Stream};
use crate::scalar::Scalar;
use crate::synthdata::{AugmentParams, AugmentToggles, Dataset, Split};
use crate::tensor::{Matrix, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub margin: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: u32,
    pub halvings: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Smallest validation loss decrease that counts as improvement.
    pub min_delta: f64,
    /// Adds audio-anchored hinge terms to the loss.
    pub symmetric: bool,
    /// Channel scale of the convolution blocks.
    pub kappa: f64,
    /// Stop after this many epochs even if the schedule is not exhausted.
    pub max_epochs: Option<u64>,
    pub seed: u64,
    /// Image augmentations applied on the fly; font and tempo toggles are
    /// properties of the dataset and ignored here.
    pub augment: AugmentToggles,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            batch_size: 100,
            lr: 0.002,
            patience: 30,
            halvings: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            min_delta: 1e-5,
            symmetric: false,
            kappa: 0.25,
            max_epochs: None,
            seed: 0,
            augment: AugmentToggles::FULL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.margin >= 0.0) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    fn schedule(&self) -> PlateauSchedule {
        PlateauSchedule::new(self.lr, self.patience, self.halvings, self.min_delta)
    }
}

/// One row of the metric log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Completed epochs, starting at 1.
    pub epoch: u64,
    /// Mean per-anchor loss over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,lr";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.train_loss, self.val_loss, self.lr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    ScheduleExhausted,
    MaxEpochs,
}

/// Consecutive index ranges of at most `size`; a trailing single element is
/// folded into the previous range so every batch has a contrastive sample.
pub fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size.max(1)).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("at least one range").end = last.end;
    }
    out
}

/// A shuffled pass over `split`, dealt round-robin into the [`batch_ranges`]
/// batches so that renders of the same note land in different batches.
pub fn distinct_note_order<R: Rng + ?Sized>(split: &Split, batch_size: usize, rng: &mut R) -> Vec<usize> {
    let mut by_note: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
    for (i, p) in split.pairs.iter().enumerate() {
        by_note.entry((p.piece_id, p.note_index)).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = by_note.into_values().collect();
    groups.shuffle(rng);
    for g in &mut groups {
        g.shuffle(rng);
    }
    let ranges = batch_ranges(split.len(), batch_size);
    let mut batches: Vec<Vec<usize>> = ranges.iter().map(|r| Vec::with_capacity(r.len())).collect();
    let mut b = 0;
    for i in groups.into_iter().flatten() {
        while batches[b].len() == ranges[b].len() {
            b = (b + 1) % batches.len();
        }
        batches[b].push(i);
        b = (b + 1) % batches.len();
    }
    for batch in &mut batches {
        batch.shuffle(rng);
    }
    batches.concat()
}

fn flat<T: Scalar>(p: &Pathway<T>) -> Vec<usize> {
    p.params().iter().map(|a| a.len()).collect()
}

fn to_f32(arrays: &[Vec<impl Scalar>]) -> Vec<Vec<f32>> {
    arrays
        .iter()
        .map(|a| a.iter().map(|v| v.as_f64() as f32).collect())
        .collect()
}

fn from_f32<T: Scalar>(arrays: &[Vec<f32>], shapes: &[usize]) -> Result<Vec<Vec<T>>> {
    if arrays.len() != shapes.len() || arrays.iter().zip(shapes).any(|(a, &n)| a.len() != n) {
        return Err(Error::Dataset("optimizer state does not match the model".into()));
    }
    Ok(arrays.iter().map(|a| a.iter().map(|&v| T::lit(v as f64)).collect()).collect())
}

/// Mean per-anchor ranking loss of a split in eval mode, unaugmented. The
/// batches are dealt like training batches, from a fixed per-seed order.
pub fn validation_loss<T: Scalar>(model: &EmbeddingModel<T>, split: &Split, config: &TrainConfig) -> Result<f64> {
    if split.len() < 2 {
        return Err(Error::Empty("validation pairs"));
    }
    let margin = T::lit(config.margin);
    let order = distinct_note_order(split, config.batch_size, &mut stream_rng(config.seed, Stream::Validation));
    let mut total = 0.0;
    for range in batch_ranges(split.len(), config.batch_size) {
        let idx = &order[range];
        let imgs = split.snippet_batch::<T>(idx, &vec![AugmentParams::IDENTITY; idx.len()])?;
        let x = model.embed_image(&imgs, Mode::Eval)?;
        let y = model.embed_audio(&split.excerpt_batch::<T>(&idx), Mode::Eval)?;
        total += ranking_loss(&x, &y, margin, config.symmetric)?.loss.as_f64();
    }
    Ok(total / split.len() as f64)
}

/// Training state: model, optimizer moments, schedule and history.
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: EmbeddingModel<T>,
    adam_image: Adam<T>,
    adam_audio: Adam<T>,
    pub schedule: PlateauSchedule,
    /// Completed epochs.
    pub epoch: u64,
    pub best: Option<ModelCheckpoint>,
    pub log: Vec<EpochLog>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = EmbeddingModel::new(config.kappa, config.seed)?;
        let adam_image = Adam::new(config.adam(), &flat(&model.image));
        let adam_audio = Adam::new(config.adam(), &flat(&model.audio));
        Ok(Self {
            schedule: config.schedule(),
            config,
            model,
            adam_image,
            adam_audio,
            epoch: 0,
            best: None,
            log: Vec::new(),
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. Without
    /// optimizer state the moments and schedule start fresh.
    pub fn resume(config: TrainConfig, last: &ModelCheckpoint, best: Option<ModelCheckpoint>) -> Result<Self> {
        config.validate()?;
        let model = EmbeddingModel::from_checkpoint(last)?;
        let mut t = Self {
            adam_image: Adam::new(config.adam(), &flat(&model.image)),
            adam_audio: Adam::new(config.adam(), &flat(&model.audio)),
            schedule: config.schedule(),
            config,
            model,
            epoch: last.epoch,
            best,
            log: Vec::new(),
        };
        if let Some(o) = &last.optimizer {
            let (fi, fa) = (flat(&t.model.image), flat(&t.model.audio));
            t.adam_image.first = from_f32(&o.first_moment[0], &fi)?;
            t.adam_image.second = from_f32(&o.second_moment[0], &fi)?;
            t.adam_audio.first = from_f32(&o.first_moment[1], &fa)?;
            t.adam_audio.second = from_f32(&o.second_moment[1], &fa)?;
            t.adam_image.step = o.step;
            t.adam_audio.step = o.step;
            t.schedule.best = o.best_loss;
            t.schedule.stale = o.stale_epochs;
            t.schedule.halvings = o.halvings;
        }
        Ok(t)
    }

    /// Model, epoch counter and full optimizer state.
    pub fn checkpoint(&self) -> ModelCheckpoint {
        let mut c = self.model.to_checkpoint(self.epoch);
        c.optimizer = Some(OptimizerSnapshot {
            step: self.adam_image.step,
            lr: self.schedule.lr(),
            best_loss: self.schedule.best,
            stale_epochs: self.schedule.stale,
            halvings: self.schedule.halvings,
            first_moment: [to_f32(&self.adam_image.first), to_f32(&self.adam_audio.first)],
            second_moment: [to_f32(&self.adam_image.second), to_f32(&self.adam_audio.second)],
        });
        c
    }

    /// Pair order and augmentation for the next epoch; a pure function of
    /// the seed and the epoch number.
    pub fn epoch_plan(&self, split: &Split) -> (Vec<usize>, Vec<AugmentParams>) {
        let order = distinct_note_order(
            split,
            self.config.batch_size,
            &mut keyed_rng(self.config.seed, Stream::Shuffle, self.epoch),
        );
        let mut rng = keyed_rng(self.config.seed, Stream::Augment, self.epoch);
        let params = order
            .iter()
            .map(|_| AugmentParams::sample(&self.config.augment, &mut rng))
            .collect();
        (order, params)
    }

    /// One optimizer step on the given pairs; returns the summed hinge loss.
    pub fn step(&mut self, split: &Split, pairs: &[usize], params: &[AugmentParams]) -> Result<f64> {
        let imgs = split.snippet_batch::<T>(pairs, params)?;
        let auds = split.excerpt_batch::<T>(pairs);
        let (x, trace_f) = self.model.image.forward(&imgs, Mode::Train)?;
        drop(imgs);
        let (y, trace_g) = self.model.audio.forward(&auds, Mode::Train)?;
        let r = ranking_loss(&x, &y, T::lit(self.config.margin), self.config.symmetric)?;
        let scale = T::one() / T::lit(pairs.len() as f64);
        let scaled = |m: &Matrix<T>| Matrix::from_vec(m.rows(), m.cols(), m.data().iter().map(|&v| v * scale).collect());
        let grads_f = self.model.image.backward(&trace_f, &scaled(&r.grad_x)?)?;
        let grads_g = self.model.audio.backward(&trace_g, &scaled(&r.grad_y)?)?;
        self.model.image.commit_batch_stats(&trace_f);
        self.model.audio.commit_batch_stats(&trace_g);
        let lr = self.schedule.lr();
        self.adam_image.update(self.model.image.params_mut(), &grads_f, lr)?;
        self.adam_audio.update(self.model.audio.params_mut(), &grads_g, lr)?;
        Ok(r.loss.as_f64())
    }

    /// Trains one epoch, evaluates on the validation split and advances the
    /// schedule. Returns the log row and the schedule event.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<(EpochLog, ScheduleEvent)> {
        if data.train.len() < 2 {
            return Err(Error::Empty("training pairs"));
        }
        let lr = self.schedule.lr();
        let (order, params) = self.epoch_plan(&data.train);
        let mut total = 0.0;
        for range in batch_ranges(order.len(), self.config.batch_size) {
            total += self.step(&data.train, &order[range.clone()], &params[range])?;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = validation_loss(&self.model, &data.val, &self.config)?;
        self.epoch += 1;
        let event = self.schedule.observe(val_loss);
        if event == ScheduleEvent::Improved {
            self.best = Some(self.model.to_checkpoint(self.epoch));
        }
        let row = EpochLog {
            epoch: self.epoch,
            train_loss,
            val_loss,
            lr,
        };
        self.log.push(row);
        Ok((row, event))
    }

    /// Runs epochs until the schedule is exhausted or `max_epochs` is reached,
    /// calling `on_epoch` after each one.
    pub fn run(&mut self, data: &Dataset, mut on_epoch: impl FnMut(&Self, &EpochLog) -> Result<()>) -> Result<StopReason> {
        if data.val.len() < 2 {
            return Err(Error::Empty("validation pairs"));
        }
        loop {
            if self.schedule.exhausted() {
                return Ok(StopReason::ScheduleExhausted);
            }
            if self.config.max_epochs.is_some_and(|m| self.epoch >= m) {
                return Ok(StopReason::MaxEpochs);
            }
            let (row, _) = self.run_epoch(data)?;
            on_epoch(self, &row)?;
        }
    }

    /// Best-validation checkpoint, or the current model if no epoch ran.
    pub fn best_checkpoint(&self) -> ModelCheckpoint {
        self.best.clone().unwrap_or_else(|| self.model.to_checkpoint(self.epoch))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: ModelCheckpoint,
    pub last: ModelCheckpoint,
    pub log: Vec<EpochLog>,
    pub stop: StopReason,
}

/// Trains from scratch.
pub fn train<T: Scalar>(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::<T>::new(config.clone())?;
    let stop = t.run(data, |_, _| Ok(()))?;
    Ok(TrainOutcome {
        best: t.best_checkpoint(),
        last: t.checkpoint(),
        log: t.log,
        stop,
    })
}

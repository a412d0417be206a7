//! Training and the zoom loop: SGD over CTC loss with an epoch-indexed
//! learning-rate schedule, iterative retraining on attention-guided crops,
//! inference through a stack of zoom models, and beam search over zoom
//! ratio schedules.
//!
//! Everything here is a pure function of (datasets, config): sequence
//! shuffling, dropout masks, and parameter init all derive from
//! `TrainConfig::seed`, and parallel gradient reductions run in a fixed
//! order, so repeated runs produce bytes-equal checkpoints.

mod iterate;
pub(crate) mod zoom;

pub use iterate::{
    load_artifacts, IterationArtifacts, IterationRecord, SearchOutcome,
    iterative_infer, iterative_train, search_zoom_schedule,
};
pub use zoom::{dataset_fingerprint, full_histories, zoom_dataset, ZoomParams, ZoomedSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ctc::{ctc_grad, ctc_loss, greedy_decode, Alphabet};
use crate::error::{Error, Result};
use crate::harness::metrics::corpus_letter_accuracy;
use crate::imaging::{motion_priors, PriorMap};
use crate::model::forward::{forward_sequence, forward_train, DropoutPlan};
use crate::model::{backward_sequence, init_params, sgd_step, ModelConfig, ModelParams, TensorSet};
use crate::synthdata::LabeledSequence;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub alphabet: Alphabet,
    /// (epochs, learning rate) segments, run in order.
    pub lr_schedule: Vec<(usize, f64)>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            alphabet: Alphabet::first_n(8).unwrap(),
            lr_schedule: vec![(20, 0.01), (10, 0.001)],
            batch_size: 8,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.alphabet.len() != self.model.alphabet_len {
            return Err(Error::Config(format!(
                "alphabet has {} letters, model expects {}",
                self.alphabet.len(),
                self.model.alphabet_len
            )));
        }
        if self.lr_schedule.is_empty() || self.lr_schedule.iter().any(|&(e, _)| e == 0) {
            return Err(Error::Config("learning-rate schedule needs nonzero epochs".into()));
        }
        if self.lr_schedule.iter().any(|&(_, lr)| !lr.is_finite() || lr <= 0.0) {
            return Err(Error::Config("learning rates must be finite and positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.lr_schedule.iter().map(|&(e, _)| e).sum()
    }

    fn epoch_lrs(&self) -> Vec<f64> {
        self.lr_schedule.iter().flat_map(|&(e, lr)| std::iter::repeat(lr).take(e)).collect()
    }
}

/// What a training run hands back: the checkpoint with the best dev letter
/// accuracy, plus per-epoch curves for inspection.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub dev_accuracy: f64,
    pub epoch_losses: Vec<f64>,
    pub epoch_dev_accuracies: Vec<f64>,
}

/// FNV-1a over u64 parts; derives every auxiliary seed (shuffles, dropout)
/// from the run seed so streams never collide across uses.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for p in parts {
        for b in p.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    h
}

/// Stream tags for `mix`, so different consumers of the run seed never
/// share a generator.
const SHUFFLE_TAG: u64 = 0x51;
const DROPOUT_TAG: u64 = 0xD0;

/// Motion priors for every sequence, grid-sized for the model.
fn dataset_priors(data: &[LabeledSequence], config: &ModelConfig) -> Result<Vec<Vec<PriorMap>>> {
    let g = config.grid_side();
    data.par_iter().map(|seq| motion_priors(&seq.frames, (g, g))).collect()
}

/// Minimum frame count CTC needs for a target: its length plus one blank
/// between each pair of equal adjacent labels.
fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Greedy-decoded corpus letter accuracy of `params` on `data`.
pub fn greedy_accuracy(params: &ModelParams, data: &[LabeledSequence], alphabet: &Alphabet) -> Result<f64> {
    let priors = dataset_priors(data, &params.config)?;
    greedy_accuracy_with_priors(params, data, &priors, alphabet)
}

fn greedy_accuracy_with_priors(
    params: &ModelParams,
    data: &[LabeledSequence],
    priors: &[Vec<PriorMap>],
    alphabet: &Alphabet,
) -> Result<f64> {
    let pairs: Result<Vec<(String, String)>> = data
        .par_iter()
        .zip(priors)
        .map(|(seq, p)| {
            let out = forward_sequence(params, &seq.frames, p)?;
            Ok((alphabet.decode(&greedy_decode(&out.posteriors)), seq.label.clone()))
        })
        .collect();
    let pairs = pairs?;
    corpus_letter_accuracy(pairs.iter().map(|(h, r)| (h.as_str(), r.as_str())))
}

/// SGD over CTC loss with the configured lr schedule, minibatched, gradient
/// averaged per batch. Keeps (and returns) the checkpoint of the epoch with
/// the highest dev letter accuracy under greedy decoding; later epochs must
/// beat it strictly to replace it.
pub fn train_model(
    train: &[LabeledSequence],
    dev: &[LabeledSequence],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if dev.is_empty() {
        return Err(Error::Config("empty dev set".into()));
    }

    let targets: Result<Vec<Vec<usize>>> =
        train.iter().map(|seq| config.alphabet.encode(&seq.label)).collect();
    let targets = targets?;
    for (seq, target) in train.iter().zip(&targets) {
        if min_frames(target) > seq.frames.len() {
            return Err(Error::UnalignableTarget {
                target: seq.id.clone(),
                frames: seq.frames.len(),
            });
        }
    }

    let train_priors = dataset_priors(train, &config.model)?;
    let dev_priors = dataset_priors(dev, &config.model)?;

    let mut params = init_params(&config.model, config.seed)?;
    let mut best: Option<(f64, ModelParams)> = None;
    let mut epoch_losses = Vec::new();
    let mut epoch_dev = Vec::new();

    for (epoch, lr) in config.epoch_lrs().into_iter().enumerate() {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[config.seed, SHUFFLE_TAG, epoch as u64]));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Result<Vec<(f64, TensorSet)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut drop_rng = ChaCha8Rng::seed_from_u64(mix(&[
                        config.seed,
                        DROPOUT_TAG,
                        epoch as u64,
                        i as u64,
                    ]));
                    let plan = DropoutPlan::sample(&config.model, train[i].frames.len(), &mut drop_rng);
                    let out =
                        forward_train(&params, &train[i].frames, &train_priors[i], plan.as_ref())?;
                    let loss = ctc_loss(&out.posteriors, &targets[i])?;
                    let d_logits = ctc_grad(&out.posteriors, &targets[i])?;
                    let grads = backward_sequence(&params, &out.cache, &d_logits)?;
                    Ok((loss, grads))
                })
                .collect();
            // Reduction stays sequential and index-ordered: float sums must
            // not depend on thread scheduling.
            let mut grads = TensorSet::zeros(&config.model);
            let results = results?;
            let scale = 1.0 / batch.len() as f64;
            for (loss, g) in &results {
                loss_sum += loss;
                grads.add_scaled(scale, g);
            }
            sgd_step(&mut params, &grads, lr);
        }
        epoch_losses.push(loss_sum / train.len() as f64);

        let acc = greedy_accuracy_with_priors(&params, dev, &dev_priors, &config.alphabet)?;
        epoch_dev.push(acc);
        if best.as_ref().map_or(true, |(b, _)| acc > *b) {
            best = Some((acc, params.clone()));
        }
    }

    let (dev_accuracy, params) = best.expect("schedule has at least one epoch");
    Ok(TrainOutcome { params, dev_accuracy, epoch_losses, epoch_dev_accuracies: epoch_dev })
}

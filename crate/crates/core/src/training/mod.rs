//! Mini-batch Adadelta training, sentence-level evaluation and dev-set
//! model selection.

mod adadelta;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adadelta::{AdadeltaConfig, AdadeltaState};

use crate::corpus::{
    encode_batch, CorpusError, EmbeddingTable, TrainingUnit, UnitMode, Vocabulary,
};
use crate::model::{AgtNetwork, ForwardOptions, ModelConfig, ModelError};
use crate::seeds::{self, Stream};

/// Units per forward pass during evaluation. Results do not depend on it.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("gradient shape mismatch for parameter {name}")]
    Shape { name: String },
    #[error("no units to {0}")]
    Empty(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout: f64,
    pub layers: usize,
    pub hidden: usize,
    pub gate_bias_init: f64,
    pub max_selector_layer: Option<usize>,
    pub mode: UnitMode,
    pub optimizer: AdadeltaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            epochs: 25,
            seed: 1,
            dropout: 0.2,
            layers: 15,
            hidden: 200,
            gate_bias_init: 1.0,
            max_selector_layer: None,
            mode: UnitMode::PhrasesAndSentences,
            optimizer: AdadeltaConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Network shape for inputs of width `input_dim`; the head is as wide as
    /// the layers.
    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.hidden,
            layers: self.layers,
            head_hidden: self.hidden,
            dropout: self.dropout,
            gate_bias_init: self.gate_bias_init,
            max_selector_layer: self.max_selector_layer,
            ..ModelConfig::new(input_dim)
        }
    }

    pub fn init_network(&self, input_dim: usize) -> Result<AgtNetwork, ModelError> {
        AgtNetwork::new(
            self.model_config(input_dim),
            seeds::derive(self.seed, Stream::Init, 0),
        )
    }
}

/// Labeled units together with the lookup tables that turn them into inputs.
#[derive(Debug, Clone, Copy)]
pub struct Data<'a> {
    pub units: &'a [TrainingUnit],
    pub vocabulary: &'a Vocabulary,
    pub embeddings: &'a EmbeddingTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub batch_sizes: Vec<usize>,
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Shuffled unit order for `epoch`.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, Stream::Shuffle, epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// One pass over `data.units` in shuffled mini-batches, one Adadelta step
/// per batch. Loss and accuracy are measured on the training-mode forward.
pub fn train_epoch(
    net: &mut AgtNetwork,
    data: Data<'_>,
    config: &TrainConfig,
    state: &mut AdadeltaState,
    epoch: usize,
) -> Result<EpochMetrics, TrainError> {
    if data.units.is_empty() {
        return Err(TrainError::Empty("train on"));
    }
    let order = epoch_order(data.units.len(), config.seed, epoch);
    let names = net.param_names();
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let mut batch_sizes = Vec::new();

    for (b, chunk) in order.chunks(config.batch_size.max(1)).enumerate() {
        let units: Vec<&TrainingUnit> = chunk.iter().map(|&i| &data.units[i]).collect();
        let batch = encode_batch(&units, data.vocabulary, data.embeddings)?;
        let seed = seeds::derive(
            config.seed,
            Stream::Dropout,
            ((epoch as u64) << 32) | b as u64,
        );
        let (loss, grads, probs) = net.loss_and_gradients(&batch, &ForwardOptions::train(seed))?;
        total_loss += loss * units.len() as f64;
        correct += (0..units.len())
            .filter(|&i| argmax(probs.row(i)) == batch.labels[i])
            .count();
        state.step(&mut net.params_mut(), &grads, &names)?;
        batch_sizes.push(units.len());
    }
    let n = data.units.len() as f64;
    Ok(EpochMetrics {
        mean_loss: total_loss / n,
        accuracy: correct as f64 / n,
        batch_sizes,
    })
}

/// Eval-mode predicted class per unit.
pub fn predict(net: &AgtNetwork, data: Data<'_>) -> Result<Vec<usize>, TrainError> {
    let mut out = Vec::with_capacity(data.units.len());
    for chunk in data.units.chunks(EVAL_CHUNK) {
        let units: Vec<&TrainingUnit> = chunk.iter().collect();
        let batch = encode_batch(&units, data.vocabulary, data.embeddings)?;
        let fwd = net.forward(&batch, &ForwardOptions::eval())?;
        out.extend((0..units.len()).map(|i| argmax(fwd.probs.row(i))));
    }
    Ok(out)
}

/// Fraction of units whose eval-mode argmax equals the gold label.
pub fn evaluate(net: &AgtNetwork, data: Data<'_>) -> Result<f64, TrainError> {
    if data.units.is_empty() {
        return Err(TrainError::Empty("evaluate"));
    }
    let predictions = predict(net, data)?;
    let correct = predictions
        .iter()
        .zip(data.units)
        .filter(|(p, u)| **p == u.label as usize)
        .count();
    Ok(correct as f64 / data.units.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub train_acc: f64,
    pub dev_acc: f64,
    pub seconds: f64,
}

impl EpochLog {
    /// `epoch  mean_train_loss  train_acc  dev_acc  seconds`, tab-separated.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            self.epoch, self.mean_train_loss, self.train_acc, self.dev_acc, self.seconds
        )
    }
}

/// Position of the highest score; the earliest wins ties.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    if scores.is_empty() {
        None
    } else {
        Some(argmax(scores))
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best: AgtNetwork,
    /// 1-based epoch of `best`.
    pub best_epoch: usize,
    pub best_dev_acc: f64,
    pub log: Vec<EpochLog>,
}

/// Trains for `config.epochs` epochs, evaluating `dev` after each, and keeps
/// the network with the best dev accuracy.
pub fn fit(
    net: AgtNetwork,
    train: Data<'_>,
    dev: Data<'_>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome, TrainError> {
    if config.epochs == 0 {
        return Err(TrainError::Empty("fit for zero epochs"));
    }
    let mut net = net;
    let mut state = AdadeltaState::new(net.params(), config.optimizer);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(AgtNetwork, usize, f64)> = None;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let metrics = train_epoch(&mut net, train, config, &mut state, epoch)?;
        let dev_acc = evaluate(&net, dev)?;
        let entry = EpochLog {
            epoch: epoch + 1,
            mean_train_loss: metrics.mean_loss,
            train_acc: metrics.accuracy,
            dev_acc,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|(_, _, acc)| dev_acc > *acc) {
            best = Some((net.clone(), epoch + 1, dev_acc));
        }
    }
    let (best, best_epoch, best_dev_acc) = best.expect("at least one epoch");
    Ok(FitOutcome {
        best,
        best_epoch,
        best_dev_acc,
        log,
    })
}

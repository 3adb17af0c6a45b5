//! The epoch loop: shuffled batch-of-one updates with random
//! enrollment-less substitution, eval-mode validation, plateau scheduling,
//! and best-validation checkpoint selection.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use coher_embed::SpeakerEmbedding;
use coher_features::InputFeature;
use coher_net::{bce_loss, Mode, PvadModel, Tensor};

use crate::optim::{clip_grad_norm, lr_schedule_step, AdamState};
use crate::{TrainConfig, TrainError};

/// One labeled utterance: spatial features, the enrolled speaker's
/// embedding, and a 0/1 voice activity label per frame.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub feature: InputFeature,
    pub embedding: SpeakerEmbedding,
    pub labels: Vec<u8>,
}

impl TrainSample {
    fn validate(&self) -> Result<(), TrainError> {
        if self.labels.len() != self.feature.num_frames() {
            return Err(TrainError::LabelMismatch {
                frames: self.feature.num_frames(),
                labels: self.labels.len(),
            });
        }
        Ok(())
    }

    fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|y| f64::from(*y)).collect()
    }
}

/// Per-epoch log record, serialized as one JSON line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub enrollless_count: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub model: PvadModel,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: Vec<EpochRecord>,
}

/// Trains `model` and returns the best-validation weights plus the log.
///
/// Each training sample independently swaps its coherence channels for the
/// all-ones map with probability `p_enrollless`, so the model also learns
/// the single-channel operating point. The validation set gets the same
/// treatment with a mask drawn once up front, keeping validation losses
/// comparable across epochs.
pub fn train(
    mut model: PvadModel,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("training set"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyDataset("validation set"));
    }
    for s in train_set.iter().chain(val_set) {
        s.validate()?;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    // Independent stream for the frozen validation mask so its draws do not
    // shift the training-side sequence.
    let mut val_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x76616c6d61736b);
    let val_masked: Vec<TrainSample> = val_set
        .iter()
        .map(|s| {
            if val_rng.random::<f64>() < cfg.p_enrollless {
                TrainSample { feature: s.feature.enrollless_variant(), ..s.clone() }
            } else {
                s.clone()
            }
        })
        .collect();

    let trainable = model.trainable_indices();
    let shapes: Vec<Vec<usize>> =
        trainable.iter().map(|i| model.tensor_at(*i).dims().to_vec()).collect();
    let mut adam = AdamState::new(&shapes);

    let mut lr = cfg.lr0;
    let mut history: Vec<f64> = Vec::new();
    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_model = model.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_loss_sum = 0.0;
        let mut enrollless_count = 0usize;
        for &si in &order {
            let sample = &train_set[si];
            let enrollless = rng.random::<f64>() < cfg.p_enrollless;
            let feature;
            let feat_ref = if enrollless {
                enrollless_count += 1;
                feature = sample.feature.enrollless_variant();
                &feature
            } else {
                &sample.feature
            };

            let mut graph = model.build_graph(feat_ref, &sample.embedding, Mode::Train)?;
            let loss_node = graph.tape.bce_with_logits(graph.logits, &sample.labels_f64())?;
            train_loss_sum += graph.tape.value(loss_node).data()[0];
            let mut grads_table = graph.tape.backward(loss_node)?;
            let mut grads: Vec<Tensor> = trainable
                .iter()
                .map(|i| {
                    grads_table
                        .take(graph.params[*i])
                        .unwrap_or_else(|| Tensor::zeros(model.tensor_at(*i).dims()))
                })
                .collect();

            clip_grad_norm(&mut grads, cfg.clip_norm)?;
            adam.begin_step();
            for (k, i) in trainable.iter().enumerate() {
                adam.update_tensor(k, lr, model.tensor_at_mut(*i), &grads[k])?;
            }
            model.apply_bn_updates(&graph.bn_updates);
        }

        let mut val_loss_sum = 0.0;
        for sample in &val_masked {
            let probs = model.predict(&sample.feature, &sample.embedding)?;
            val_loss_sum += bce_loss(&probs, &sample.labels)?;
        }
        let val_loss = val_loss_sum / val_masked.len() as f64;
        let train_loss = train_loss_sum / train_set.len() as f64;
        log.push(EpochRecord { epoch, lr, train_loss, val_loss, enrollless_count });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_model = model.clone();
        }
        history.push(val_loss);
        lr = lr_schedule_step(&history, lr, cfg.plateau_epochs, cfg.lr_factor);
    }

    Ok(TrainOutcome { model: best_model, best_epoch, best_val_loss: best_val, log })
}

/// Writes the per-epoch log as JSON lines.
pub fn write_log_jsonl<W: Write>(w: &mut W, log: &[EpochRecord]) -> Result<(), TrainError> {
    for rec in log {
        let line = serde_json::to_string(rec)
            .map_err(|e| TrainError::BadConfig(format!("log serialization failed: {e}")))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

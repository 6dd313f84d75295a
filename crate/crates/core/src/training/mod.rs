//! Minibatch training with adadelta and joint gradient clipping.

mod checkpoint;
mod optim;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::model::HssasModel;
use crate::numerics::{Gradients, ParamStore, Tape};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adadelta_step, clip_gradients, nll_loss, Adadelta};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Feed gold labels instead of predicted probabilities into the summary
    /// representation during training.
    pub teacher_forcing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho: 0.95,
            epsilon: 1e-6,
            clip_norm: 5.0,
            batch_size: 64,
            max_epochs: 20,
            seed: 1,
            teacher_forcing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("train.rho must be in (0, 1), got {}", self.rho)));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config(format!("train.epsilon must be positive, got {}", self.epsilon)));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config(format!("train.clip_norm must be positive, got {}", self.clip_norm)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per sentence over the epoch's batches.
    pub train_loss: f64,
    /// Mean loss per sentence on the validation split after the epoch.
    pub val_loss: Option<f64>,
    /// Batches whose gradient norm was clipped.
    pub clip_events: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (lowest validation loss, or the
    /// last epoch without a validation split). 0 means no epoch ran.
    pub best_epoch: usize,
    pub optimizer: Adadelta,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,clip_events\n");
        for r in &self.log {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, val, r.clip_events);
        }
        out
    }
}

fn require_labels(docs: &[Document]) -> Result<()> {
    for d in docs {
        match &d.labels {
            Some(l) if l.len() == d.len() => {}
            Some(_) => {
                return Err(Error::Document {
                    id: d.id.clone(),
                    message: "label count differs from sentence count".into(),
                })
            }
            None => {
                return Err(Error::Document {
                    id: d.id.clone(),
                    message: "training document has no labels".into(),
                })
            }
        }
        if d.is_empty() {
            return Err(Error::Document {
                id: d.id.clone(),
                message: "document has no sentences".into(),
            });
        }
    }
    Ok(())
}

/// Loss and gradients for each document, computed in parallel and returned
/// in input order.
fn document_gradients(model: &HssasModel, docs: &[&Document], teacher_forcing: bool) -> Result<Vec<(f64, Gradients)>> {
    docs.par_iter()
        .map(|doc| {
            let mut tape = Tape::new(&model.store);
            let loss = model.loss(&mut tape, doc, teacher_forcing)?;
            Ok((tape.scalar(loss)?, tape.backward(loss)?))
        })
        .collect()
}

/// Mean per-sentence loss of `docs` under the current parameters.
pub fn evaluate_loss(model: &HssasModel, docs: &[Document]) -> Result<f64> {
    require_labels(docs)?;
    let losses: Vec<f64> = docs
        .par_iter()
        .map(|doc| {
            let mut tape = Tape::new(&model.store);
            let loss = model.loss(&mut tape, doc, false)?;
            tape.scalar(loss)
        })
        .collect::<Result<_>>()?;
    let sentences: usize = docs.iter().map(Document::len).sum();
    Ok(losses.iter().sum::<f64>() / sentences.max(1) as f64)
}

/// One optimizer step on a batch. Returns `(summed loss, clipped?)`.
pub fn train_batch(
    model: &mut HssasModel,
    optimizer: &mut Adadelta,
    batch: &[&Document],
    config: &TrainConfig,
) -> Result<(f64, bool)> {
    let results = document_gradients(model, batch, config.teacher_forcing)?;
    model.store.zero_grads();
    let mut loss = 0.0;
    for (l, g) in &results {
        loss += l;
        model.store.accumulate(g)?;
    }
    let factor = clip_gradients(&mut model.store, config.clip_norm)?;
    optimizer.step(&mut model.store)?;
    Ok((loss, factor < 1.0))
}

/// Trains `model` in place and leaves it holding the best parameters.
pub fn train(
    model: &mut HssasModel,
    train_docs: &[Document],
    validation: &[Document],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_callback(model, train_docs, validation, config, |_| {})
}

/// [`train`] with a hook called after every epoch.
pub fn train_with_callback(
    model: &mut HssasModel,
    train_docs: &[Document],
    validation: &[Document],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    require_labels(train_docs)?;
    require_labels(validation)?;
    if train_docs.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let mut optimizer = Adadelta::new(&model.store, config.rho, config.epsilon)?;
    if !model.embedding.trainable {
        optimizer.freeze(model.embedding.table);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let sentences: usize = train_docs.iter().map(Document::len).sum();

    let mut log = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, usize, ParamStore, Adadelta)> = None;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut clip_events = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Document> = chunk.iter().map(|&i| &train_docs[i]).collect();
            let (loss, clipped) = train_batch(model, &mut optimizer, &batch, config)?;
            total += loss;
            clip_events += usize::from(clipped);
        }
        let val_loss = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, validation)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / sentences as f64,
            val_loss,
            clip_events,
        };
        on_epoch(&record);
        let score = val_loss.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, ..)| score < *b || val_loss.is_none()) {
            best = Some((score, epoch, model.store.clone(), optimizer.clone()));
        }
        log.push(record);
    }

    let (best_epoch, optimizer) = match best {
        Some((_, epoch, store, opt)) => {
            model.store = store;
            (epoch, opt)
        }
        None => (0, optimizer),
    };
    Ok(TrainOutcome {
        log,
        best_epoch,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn doc(id: &str, sentences: Vec<Vec<usize>>, labels: Option<Vec<u8>>) -> Document {
        Document {
            id: id.into(),
            text: sentences.iter().map(|_| String::new()).collect(),
            sentences,
            labels,
            references: None,
        }
    }

    fn small_model() -> HssasModel {
        let cfg = ModelConfig {
            word_dim: 4,
            hidden: 3,
            attention_dim: 4,
            position_dim: 2,
            max_position: 10,
            fine_tune_embeddings: true,
        };
        HssasModel::new(cfg, 10, None, 3).unwrap()
    }

    fn corpus() -> Vec<Document> {
        (0..4)
            .map(|i| {
                doc(
                    &format!("d{i}"),
                    vec![vec![2 + i, 3], vec![4, 5, 6], vec![7, 8 - i]],
                    Some(vec![1, 0, (i % 2) as u8]),
                )
            })
            .collect()
    }

    #[test]
    fn unlabeled_training_document_is_rejected() {
        let mut m = small_model();
        let mut docs = corpus();
        docs[2].labels = None;
        match train(&mut m, &docs, &[], &TrainConfig::default()) {
            Err(Error::Document { id, .. }) => assert_eq!(id, "d2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oversized_batch_is_one_step_per_epoch() {
        let mut m = small_model();
        let cfg = TrainConfig {
            batch_size: 1000,
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let out = train(&mut m, &corpus(), &corpus()[..1], &cfg).unwrap();
        assert_eq!(out.log.len(), 2);
        assert!(out.log.iter().all(|r| r.val_loss.is_some()));
    }

    #[test]
    fn same_seed_same_losses() {
        let cfg = TrainConfig {
            batch_size: 2,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = small_model();
            let out = train(&mut m, &corpus(), &[], &cfg).unwrap();
            (out.log_csv(), m.store)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(a.starts_with("epoch,train_loss,val_loss,clip_events\n1,"));
    }

    #[test]
    fn pad_row_stays_zero_and_frozen_embeddings_stay_put() {
        let mut m = small_model();
        let mut docs = corpus();
        docs[0].sentences[0].push(crate::corpus::PAD);
        let cfg = TrainConfig {
            batch_size: 2,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        train(&mut m, &docs, &[], &cfg).unwrap();
        assert!(m.store.value(m.embedding.table).row(0).iter().all(|&x| x == 0.0));

        let mut frozen = small_model();
        frozen.embedding.trainable = false;
        let before = frozen.store.value(frozen.embedding.table).clone();
        train(&mut frozen, &docs, &[], &cfg).unwrap();
        assert_eq!(frozen.store.value(frozen.embedding.table), &before);
    }

    #[test]
    fn best_validation_epoch_is_kept() {
        let mut m = small_model();
        let cfg = TrainConfig {
            batch_size: 1,
            max_epochs: 4,
            ..TrainConfig::default()
        };
        let val = corpus();
        let out = train(&mut m, &corpus()[..2], &val[2..], &cfg).unwrap();
        let best = out
            .log
            .iter()
            .min_by(|a, b| a.val_loss.partial_cmp(&b.val_loss).unwrap())
            .unwrap();
        assert_eq!(out.best_epoch, best.epoch);
        let now = evaluate_loss(&m, &val[2..]).unwrap();
        assert_eq!(now, best.val_loss.unwrap());
    }
}

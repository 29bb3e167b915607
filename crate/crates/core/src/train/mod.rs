//! Teacher-forced training of one model on one client's shard.

mod optim;

pub use optim::{apply_update, clip_global_norm, global_norm, AdamHyper, OptimizerKind, OptimizerState};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ClientShard, TokenizedPair};
use crate::error::{Error, Result};
use crate::model::graph::{sequence_loss_batch, ParamVars};
use crate::model::ModelParams;
use crate::rng;
use crate::tensor::Tape;

/// Batch size used for forward-only evaluation. Purely a throughput knob.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            local_epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks the numeric fields. A learning rate of exactly zero is accepted
    /// so that null steps can be exercised.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("adam hyper-parameters out of range".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    pub sample_count: usize,
    pub mean_train_loss: f64,
    pub mean_test_loss: f64,
}

fn batch_refs<'a>(batch: &[&'a TokenizedPair]) -> (Vec<&'a [usize]>, Vec<&'a [usize]>) {
    batch
        .iter()
        .map(|p| (p.input_ids.as_slice(), p.target_ids.as_slice()))
        .unzip()
}

/// Mean per-token cross-entropy of one pair under teacher forcing.
pub fn sequence_loss(params: &ModelParams, pair: &TokenizedPair) -> Result<f64> {
    Ok(per_pair_losses(params, std::slice::from_ref(pair))?[0])
}

fn per_pair_losses(params: &ModelParams, pairs: &[TokenizedPair]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_BATCH) {
        let refs: Vec<&TokenizedPair> = chunk.iter().collect();
        let (inputs, targets) = batch_refs(&refs);
        let mut tape = Tape::new();
        let pv = ParamVars::register(&mut tape, params);
        let bl = sequence_loss_batch(&mut tape, &pv, params.dims.hidden_dim, &inputs, &targets)?;
        out.extend(bl.per_pair);
    }
    Ok(out)
}

/// Mean [`sequence_loss`] over `pairs`.
pub fn evaluate(params: &ModelParams, pairs: &[TokenizedPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty set".into()));
    }
    let losses = per_pair_losses(params, pairs)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Loss and gradients of one minibatch, in parameter registration order.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[&TokenizedPair],
) -> Result<(f64, Vec<crate::tensor::Tensor>)> {
    let (inputs, targets) = batch_refs(batch);
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);
    let bl = sequence_loss_batch(&mut tape, &pv, params.dims.hidden_dim, &inputs, &targets)?;
    let loss = tape.value(bl.loss).item()?;
    let grads = tape.backward(bl.loss)?;
    Ok((loss, grads.into_tensors()))
}

/// One shuffled pass over `train`. `epoch` selects the shuffle so that
/// successive epochs see different orders under the same seed.
pub fn train_epoch(
    params: &ModelParams,
    train: &[TokenizedPair],
    config: &TrainConfig,
    state: &mut OptimizerState,
    epoch: usize,
) -> Result<(ModelParams, f64)> {
    if train.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    config.validate()?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng::indexed_stream(config.seed, rng::SHUFFLE, epoch as u64));

    let mut params = params.clone();
    let mut weighted_loss = 0.0;
    for (b, idx) in order.chunks(config.batch_size).enumerate() {
        let diverged = || Error::Divergence {
            client: None,
            epoch,
            batch: b,
        };
        let batch: Vec<&TokenizedPair> = idx.iter().map(|&i| &train[i]).collect();
        let (loss, mut grads) = match batch_gradients(&params, &batch) {
            Err(Error::NonFinite { .. }) => return Err(diverged()),
            r => r?,
        };
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(diverged());
        }
        weighted_loss += loss * batch.len() as f64;
        if let Some(c) = config.grad_clip_norm {
            clip_global_norm(&mut grads, c);
        }
        apply_update(&mut params, &grads, state, config.learning_rate, config.adam());
        if !params.is_finite() {
            return Err(diverged());
        }
    }
    Ok((params, weighted_loss / train.len() as f64))
}

/// Starts from a copy of `global`, trains `config.local_epochs` epochs with a
/// fresh optimizer, then scores the result on both halves of the shard.
pub fn local_train(global: &ModelParams, shard: &ClientShard, config: &TrainConfig) -> Result<ClientUpdate> {
    let client = shard.client_id;
    let run = || -> Result<ClientUpdate> {
        if shard.train.is_empty() {
            return Err(Error::Contract("client has no training pairs".into()));
        }
        let client_config = TrainConfig {
            seed: rng::derive_seed(config.seed, client as u64),
            ..config.clone()
        };
        let mut state = OptimizerState::new(config.optimizer, global);
        let mut params = global.clone();
        for epoch in 0..config.local_epochs {
            params = train_epoch(&params, &shard.train, &client_config, &mut state, epoch)?.0;
        }
        let mean_train_loss = evaluate(&params, &shard.train)?;
        let mean_test_loss = if shard.test.is_empty() {
            mean_train_loss
        } else {
            evaluate(&params, &shard.test)?
        };
        Ok(ClientUpdate {
            client_id: client,
            params,
            sample_count: shard.train.len(),
            mean_train_loss,
            mean_test_loss,
        })
    };
    run().map_err(|e| e.for_client(client))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

/// Continuous training on one shard with a single optimizer, as used for the
/// non-federated baseline. `test_every` controls how often `test` is scored
/// (0 disables; the last epoch is always scored when a test set is given).
pub fn train_centralized(
    init: &ModelParams,
    train: &[TokenizedPair],
    test: &[TokenizedPair],
    epochs: usize,
    config: &TrainConfig,
    test_every: usize,
) -> Result<(ModelParams, Vec<EpochMetrics>)> {
    let mut state = OptimizerState::new(config.optimizer, init);
    let mut params = init.clone();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (next, train_loss) = train_epoch(&params, train, config, &mut state, epoch)?;
        params = next;
        let scored = !test.is_empty() && ((test_every > 0 && (epoch + 1) % test_every == 0) || epoch + 1 == epochs);
        let test_loss = if scored { Some(evaluate(&params, test)?) } else { None };
        log::debug!("epoch {epoch}: train {train_loss:.5} test {test_loss:?}");
        history.push(EpochMetrics {
            epoch,
            train_loss,
            test_loss,
        });
    }
    Ok((params, history))
}

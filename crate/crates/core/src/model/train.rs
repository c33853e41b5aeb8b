use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{LossConfig, ModelConfig, Variant};
use super::data::Dataset;
use super::net::GateSid;
use crate::diffkernel::{AdamW, AdamWConfig, Tape};
use crate::error::{Error, Result};
use crate::rng;
use crate::rqvae::SidTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 256,
            optimizer: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub epoch_total: Vec<f64>,
    pub epoch_rank: Vec<f64>,
    pub epoch_contrastive: Vec<f64>,
}

/// Trains one variant on the training days of `data`.
pub fn train_model(
    data: &Dataset,
    sids: &SidTable,
    model_config: &ModelConfig,
    loss: LossConfig,
    variant: Variant,
    train: &TrainConfig,
    seed: u64,
) -> Result<(GateSid, TrainReport)> {
    train_model_with(data, sids, model_config, loss, variant, train, seed, |_, _| Ok(()))
}

/// As [`train_model`], calling `on_epoch(epoch, &model)` after each epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_model_with(
    data: &Dataset,
    sids: &SidTable,
    model_config: &ModelConfig,
    loss: LossConfig,
    variant: Variant,
    train: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &GateSid) -> Result<()>,
) -> Result<(GateSid, TrainReport)> {
    if train.batch_size == 0 || train.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let mut config = model_config.clone();
    config.n_items = data.n_items;
    config.n_users = config.n_users.max(data.n_users);
    let mut model = GateSid::new(variant, &config, loss, sids, seed)?;
    let mut opt = AdamW::new(train.optimizer.clone(), &model.store);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle = rng::stream(seed, "train/shuffle");
    let mut report = TrainReport::default();

    for epoch in 0..train.epochs {
        order.shuffle(&mut shuffle);
        let (mut tot, mut rank, mut cl, mut n) = (0.0, 0.0, 0.0, 0.0);
        for idx in order.chunks(train.batch_size) {
            let batch: Vec<_> = idx.iter().map(|&i| data.train[i].clone()).collect();
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &batch)?;
            let l = model.loss(&mut tape, &batch, &out)?;
            let total = tape.value(l.total).item();
            if !total.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}")));
            }
            tot += total;
            rank += tape.value(l.rank).item();
            cl += l.contrastive.map_or(0.0, |v| tape.value(v).item());
            n += 1.0;
            model.store.zero_grad();
            tape.backward(l.total, &mut model.store)?;
            opt.step(&mut model.store)?;
        }
        log::info!(
            "{} epoch {epoch}: loss {:.4} rank {:.4} cl {:.4}",
            variant,
            tot / n,
            rank / n,
            cl / n
        );
        report.epoch_total.push(tot / n);
        report.epoch_rank.push(rank / n);
        report.epoch_contrastive.push(cl / n);
        on_epoch(epoch, &model)?;
    }
    report.steps = opt.step_count();
    Ok((model, report))
}

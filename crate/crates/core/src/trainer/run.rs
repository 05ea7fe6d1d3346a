use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step, OptimizerState};
use super::{EpochLog, TrainConfig};
use crate::data::Sample;
use crate::losses::{sample_loss, LossParts};
use crate::model::{DropoutCtx, Model, ModelParams};
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_SALT: u64 = 0x5DEE_CE66_D1CE_4E5B;

pub struct TrainOutcome {
    pub model: Model,
    pub params: ModelParams,
    /// Parameters at the end of the epoch with the lowest logged loss.
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// Wall-clock seconds per epoch, kept apart from the deterministic log.
    pub epoch_seconds: Vec<f64>,
}

fn dropout_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DROPOUT_SALT);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Loss parts and parameter gradients for one sample.
fn sample_step(
    model: &Model,
    params: &ModelParams,
    sample: &Sample,
    config: &TrainConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(LossParts, ModelParams)> {
    let dropout = rng.map(|rng| DropoutCtx {
        rate: config.dropout,
        rng,
    });
    let (pred, cache) = model.forward(params, &sample.input, &sample.saliency, dropout)?;
    let attrs = pred
        .attributes
        .as_ref()
        .map(|p| (p, &sample.annotation.attributes));
    let loss = sample_loss(&sample.distribution, &pred.distribution, sample.beta, attrs, &config.loss)?;
    let mut grads = params.zeros_like();
    model.backward(params, &cache, &loss.grad_dist, loss.grad_attrs.as_ref(), &mut grads)?;
    Ok((loss.parts, grads))
}

fn add_into(acc: &mut ModelParams, g: &ModelParams) {
    let src = g.tensors();
    for ((_, dst), (_, _, s)) in acc.tensors_mut().into_iter().zip(src) {
        for (d, v) in dst.iter_mut().zip(s) {
            *d += v;
        }
    }
}

fn scale(acc: &mut ModelParams, factor: f64) {
    for (_, t) in acc.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Trains from a seeded initialisation. Every logged number depends only on
/// `(samples, config)`; per-sample work runs on the current rayon pool and is
/// reduced in index order, so results do not depend on the thread count.
pub fn train(samples: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(s) = samples.iter().find(|s| !(s.beta.is_finite() && s.beta > 0.0)) {
        return Err(Error::invalid(format!("sample `{}` has weight {}", s.id(), s.beta)));
    }
    let model = Model::new(config.model.clone())?;
    let mut params = ModelParams::init(&config.model, config.seed)?;
    let mut state = OptimizerState::new(&params, config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);

    let chunk = rayon::current_num_threads().max(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(config.max_epochs);
    let mut epoch_seconds = Vec::with_capacity(config.max_epochs);
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut best_logged = f64::INFINITY;
    let mut plateau_best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_parts = Vec::with_capacity(samples.len());
        for batch in order.chunks(config.batch_size) {
            let mut acc = params.zeros_like();
            for group in batch.chunks(chunk) {
                let results: Vec<Result<(LossParts, ModelParams)>> = group
                    .par_iter()
                    .map(|&i| {
                        let mut rng = dropout_rng(config.seed, epoch, i);
                        let rng = (config.dropout > 0.0).then_some(&mut rng);
                        sample_step(&model, &params, &samples[i], config, rng)
                    })
                    .collect();
                for r in results {
                    let (parts, g) = r?;
                    epoch_parts.push(parts);
                    add_into(&mut acc, &g);
                }
            }
            scale(&mut acc, 1.0 / batch.len() as f64);
            if let Some(name) = acc.first_non_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in tensor `{name}` at epoch {epoch}"
                )));
            }
            adam_step(&mut params, &acc, &mut state, config)?;
            if let Some(name) = params.first_non_finite() {
                return Err(Error::Numeric(format!(
                    "parameter tensor `{name}` diverged at epoch {epoch}"
                )));
            }
        }

        let mean = crate::losses::total_loss(&epoch_parts);
        if !mean.total.is_finite() {
            return Err(Error::Numeric(format!("training loss is {} at epoch {epoch}", mean.total)));
        }
        log.push(EpochLog {
            epoch,
            wemd: mean.wemd,
            atts: mean.atts,
            total: mean.total,
            lr_head: state.lr_head,
            lr_backbone: state.lr_backbone,
        });
        if mean.total < best_logged {
            best_logged = mean.total;
            best_params = params.clone();
            best_epoch = epoch;
        }
        if mean.total < plateau_best - config.plateau_tolerance {
            plateau_best = mean.total;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                state.decay(config.lr_decay);
                stale = 0;
            }
        }
        epoch_seconds.push(started.elapsed().as_secs_f64());
    }

    Ok(TrainOutcome {
        model,
        params,
        best_params,
        best_epoch,
        log,
        epoch_seconds,
    })
}

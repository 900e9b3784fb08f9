//! Optimization of the combined objective, configuration and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod optimizer;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use optimizer::{clip_global_norm, Adam};

use crate::data::{assemble_epoch, Batch, Dataset};
use crate::encoders::{NegativeSampler, PartOfSpeech};
use crate::error::{Error, Result};
use crate::model::{Model, ModelDims};
use crate::objectives::{total_loss, LossBreakdown, LossConfig, LossItem};
use crate::tensor::{ParamId, Tape, Tensor};

/// Per-epoch means of each objective term over the epoch's batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_joint: f64,
    pub l_mot: f64,
    pub l_vis: f64,
    pub l_total: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} l_joint={:.6} l_mot={:.6} l_vis={:.6} l_total={:.6}",
            self.epoch, self.l_joint, self.l_mot, self.l_vis, self.l_total
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint<f64>,
    pub log: Vec<EpochLog>,
}

/// Model dimensions implied by a config and a dataset.
pub fn dims_for(config: &TrainConfig, data: &Dataset<f64>) -> Result<ModelDims> {
    let vocab = data.vocab.len();
    if config.vocab != 0 && config.vocab != vocab {
        return Err(Error::InvalidConfig(format!(
            "V={} but the dataset vocabulary has {vocab} entries",
            config.vocab
        )));
    }
    let dims = ModelDims {
        vocab,
        word_dim: config.word_dim,
        embed_dim: config.embed_dim,
        slow_channels: data.slow_channels(),
        fast_channels: data.fast_channels(),
    };
    dims.validate()?;
    Ok(dims)
}

/// Random streams derived from the config seed: parameter init uses the seed
/// directly, batches and negative draws get their own ChaCha streams.
fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut batches = ChaCha8Rng::seed_from_u64(seed);
    batches.set_stream(1);
    let mut negatives = ChaCha8Rng::seed_from_u64(seed);
    negatives.set_stream(2);
    (batches, negatives)
}

/// Loss items for a batch, drawing one negative per verb and noun.
pub fn batch_items<'a>(
    data: &'a Dataset<f64>,
    batch: &Batch,
    sampler: &NegativeSampler,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LossItem<'a, f64>>> {
    let mut items = Vec::with_capacity(batch.len());
    for bi in &batch.items {
        let video = &data.videos[bi.video];
        let caption = &data.captions[bi.caption];
        let mut draw = |ids: &[usize], pos| -> Result<Vec<(usize, usize)>> {
            ids.iter()
                .map(|&p| Ok((p, sampler.sample(pos, &video.id, rng)?)))
                .collect()
        };
        let verbs = draw(&caption.verbs, PartOfSpeech::Verb)?;
        let nouns = draw(&caption.nouns, PartOfSpeech::Noun)?;
        items.push(LossItem {
            video_id: &video.id,
            slow: &video.slow,
            fast: &video.fast,
            caption: &caption.tokens,
            verbs,
            nouns,
        });
    }
    Ok(items)
}

/// Forward and backward pass over one batch.
pub fn batch_gradients(
    model: &Model<f64>,
    items: &[LossItem<'_, f64>],
    cfg: &LossConfig<f64>,
) -> Result<(LossBreakdown<f64>, Vec<Tensor<f64>>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let loss = total_loss(&mut tape, &vars, items, cfg)?;
    let grads = tape.backward(loss.total)?;
    let per_param = model
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| grads.param(ParamId(i)).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((loss.breakdown(&tape, cfg), per_param))
}

/// Trains from the config's seed, calling `on_epoch` after every epoch.
pub fn train_with(
    data: &Dataset<f64>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = dims_for(config, data)?;
    let mut model = Model::<f64>::init(dims, config.seed);
    let names: Vec<&str> = model.names().to_vec();
    let sampler = data.negative_sampler();
    let per_video: Vec<Vec<usize>> = data.videos.iter().map(|v| v.captions.clone()).collect();
    let (mut batch_rng, mut neg_rng) = streams(config.seed);
    let mut opt = Adam::new(config.lr, config.beta1, config.beta2, config.eps);
    let cfg = config.loss_config::<f64>();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let batches = assemble_epoch(&per_video, config.batch_size, &mut batch_rng)?;
        if batches.is_empty() {
            return Err(Error::InvalidDataset(
                "fewer than two videos; cannot form a batch".into(),
            ));
        }
        let mut sums = [0.0f64; 4];
        for batch in &batches {
            let items = batch_items(data, batch, &sampler, &mut neg_rng)?;
            let (b, mut grads) = batch_gradients(&model, &items, &cfg)?;
            if config.clip_norm > 0.0 {
                clip_global_norm(&mut grads, config.clip_norm);
            }
            opt.step(model.params_mut(), &grads, &names)?;
            for (s, v) in sums.iter_mut().zip([b.l_joint, b.l_mot, b.l_vis, b.l_total]) {
                *s += v;
            }
        }
        let n = batches.len() as f64;
        let entry = EpochLog {
            epoch,
            l_joint: sums[0] / n,
            l_mot: sums[1] / n,
            l_vis: sums[2] / n,
            l_total: sums[3] / n,
        };
        log::info!("{entry}");
        on_epoch(&entry);
        log.push(entry);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            epoch: config.epochs as u64,
            vocab: data.vocab.clone(),
            model,
        },
        log,
    })
}

pub fn train(data: &Dataset<f64>, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(data, config, |_| {})
}

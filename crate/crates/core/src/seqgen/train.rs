use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{backward, item_loss, TrainItem};
use super::sample::SamplingMode;
use super::token::Stats;
use super::weights::{BankEntry, ModelConfig, ModelWeights};
use crate::encoder::encode_depth;
use crate::error::{Error, Result};
use crate::synth::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Share of shapes held out to choose the epoch count; 0 disables the
    /// held-out pass and trains for `max_epochs` directly.
    pub validation_fraction: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub seed: u64,
    /// Default decoding mode for models trained with this config.
    pub sampling: SamplingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.95,
            beta2: 0.999,
            epsilon: 1e-6,
            batch_size: 50,
            max_epochs: 100,
            validation_fraction: 0.15,
            clip_norm: 5.0,
            seed: 0,
            sampling: SamplingMode::Test,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation fraction must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("bad Adam constants"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch size and epoch count must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip norm must be positive"));
        }
        Ok(())
    }
}

/// Training sequences with the statistics they were normalized by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub stats: Stats,
    pub items: Vec<TrainItem>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    /// Epoch count used for the final run.
    pub epochs: usize,
    /// Mean per-sequence loss of each epoch of the final run.
    pub train_loss: Vec<f64>,
    /// Held-out loss per epoch of the selection run (empty when disabled).
    pub val_loss: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            params[i] -= cfg.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.epsilon);
        }
    }
}

// Items per parallel task; partial sums are added in chunk order so the
// result does not depend on scheduling.
const CHUNK: usize = 8;

fn batch_gradient(w: &ModelWeights, batch: &[&TrainItem]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; w.len()];
            let mut l = 0.0;
            for item in chunk {
                let (li, gi) = backward(item, w)?;
                l += li.total();
                g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
            }
            Ok((l, g))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; w.len()];
    for p in parts {
        let (l, g) = p?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss, grad))
}

fn clip(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= k);
    }
}

fn mean_loss(w: &ModelWeights, items: &[&TrainItem]) -> Result<f64> {
    let losses: Vec<Result<f64>> = items.par_iter().map(|it| Ok(item_loss(it, w)?.total())).collect();
    let mut s = 0.0;
    for l in losses {
        s += l?;
    }
    Ok(s / items.len() as f64)
}

fn diverged(epoch: usize, last_good: &ModelWeights) -> Error {
    Error::Diverged {
        epoch,
        last_good: Box::new(last_good.clone()),
    }
}

/// Runs `epochs` epochs of minibatch Adam; returns per-epoch training and
/// (when `val` is given) held-out losses.
fn run(
    w: &mut ModelWeights,
    items: &[&TrainItem],
    val: Option<&[&TrainItem]>,
    epochs: usize,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut adam = Adam::new(w.len());
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut train_loss = Vec::with_capacity(epochs);
    let mut val_loss = Vec::new();
    for epoch in 0..epochs {
        let good = w.clone();
        order.sort_unstable();
        order.shuffle(&mut rng(derive_seed(cfg.seed, &[stream, epoch as u64])));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainItem> = batch.iter().map(|&i| items[i]).collect();
            let (loss, mut grad) = match batch_gradient(w, &batch) {
                Ok(v) => v,
                Err(Error::NonFiniteObjective | Error::NumericalBlowup(_)) => return Err(diverged(epoch, &good)),
                Err(e) => return Err(e),
            };
            total += loss;
            clip(&mut grad, cfg.clip_norm);
            adam.step(&mut w.params, &grad, cfg);
            if w.params.iter().any(|p| !p.is_finite()) {
                return Err(diverged(epoch, &good));
            }
        }
        let mean = total / items.len() as f64;
        if !mean.is_finite() {
            return Err(diverged(epoch, &good));
        }
        log::debug!("epoch {epoch}: loss {mean:.5}");
        train_loss.push(mean);
        if let Some(v) = val {
            match mean_loss(w, v) {
                Ok(l) if l.is_finite() => val_loss.push(l),
                Ok(_) | Err(Error::NonFiniteObjective | Error::NumericalBlowup(_)) => {
                    return Err(diverged(epoch, &good))
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((train_loss, val_loss))
}

/// Splits item indices by shape name into (train, held-out).
fn split(items: &[TrainItem], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut names: Vec<&str> = items
        .iter()
        .map(|i| i.name.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if names.len() < 2 {
        return Err(Error::invalid("validation needs at least two distinct shapes"));
    }
    names.shuffle(&mut rng(derive_seed(seed, &[0x5e1])));
    let n_val = ((names.len() as f64 * fraction).round() as usize).clamp(1, names.len() - 1);
    let held: BTreeSet<&str> = names[..n_val].iter().copied().collect();
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (i, it) in items.iter().enumerate() {
        if held.contains(it.name.as_str()) {
            va.push(i);
        } else {
            tr.push(i);
        }
    }
    Ok((tr, va))
}

/// Teacher-forced Adam training. With a held-out fraction, a first run on
/// the remaining shapes picks the epoch with the lowest held-out loss and a
/// second run from the same initialization trains on everything for that
/// many epochs. Items carrying depth views populate the retrieval bank.
pub fn train(data: &Dataset, model: ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.stats.validate()?;
    if data.items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.items.iter().any(|i| i.tokens.is_empty()) {
        return Err(Error::invalid("dataset contains an empty sequence"));
    }
    let mut init = ModelWeights::init(model, derive_seed(cfg.seed, &[0x1417]))?;
    init.stats = Some(data.stats);

    let all: Vec<&TrainItem> = data.items.iter().collect();
    let (epochs, val_loss) = if cfg.validation_fraction > 0.0 {
        let (tr, va) = split(&data.items, cfg.validation_fraction, cfg.seed)?;
        let tr: Vec<&TrainItem> = tr.into_iter().map(|i| &data.items[i]).collect();
        let va: Vec<&TrainItem> = va.into_iter().map(|i| &data.items[i]).collect();
        let mut w = init.clone();
        let (_, val) = run(&mut w, &tr, Some(&va), cfg.max_epochs, cfg, 1)?;
        let best = val
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map_or(cfg.max_epochs, |(i, _)| i + 1);
        log::info!("held-out loss is lowest after {best} epochs");
        (best, val)
    } else {
        (cfg.max_epochs, Vec::new())
    };

    let mut w = init;
    let (train_loss, _) = run(&mut w, &all, None, epochs, cfg, 2)?;
    w.bank = build_bank(&w, &data.items)?;
    Ok(TrainOutcome {
        weights: w,
        epochs,
        train_loss,
        val_loss,
    })
}

/// One entry per item of at least one primitive, with its depth view
/// encoded by the given weights.
pub fn build_bank(w: &ModelWeights, items: &[TrainItem]) -> Result<Vec<BankEntry>> {
    let mut bank = Vec::new();
    for it in items {
        let Some(first) = it.tokens.get(..3) else {
            continue;
        };
        let feature = match &it.depth {
            Some(img) => encode_depth(img, w)?,
            None => Vec::new(),
        };
        bank.push(BankEntry {
            name: it.name.clone(),
            feature,
            first: [first[0], first[1], first[2]],
            symmetry_plane: it.symmetry_plane,
        });
    }
    Ok(bank)
}

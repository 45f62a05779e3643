use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{ExpertModel, HeadKind, LabelSource, Mode};
use crate::diff::{AdamW, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::evidential::{edl_loss_on_tape, evidential_on_tape, one_hot, EdlLossConfig, NUM_CLASSES};
use crate::simdata::FeatureBag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Draw each epoch's samples with probability inversely proportional
    /// to the frequency of their class.
    pub weighted_sampling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 8,
            weighted_sampling: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and ≥ 0".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and ≥ 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpertLoss {
    /// Digamma loss with annealed KL; evidential heads only.
    Evidential(EdlLossConfig),
    /// Negative log-likelihood of the softmax; softmax heads only.
    CrossEntropy,
}

impl ExpertLoss {
    pub fn for_head(head: HeadKind, edl: EdlLossConfig) -> Self {
        match head {
            HeadKind::Evidential => ExpertLoss::Evidential(edl),
            HeadKind::Softmax => ExpertLoss::CrossEntropy,
        }
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Per-sample weights `1 / count(label)` so every class carries equal mass.
pub fn inverse_frequency_weights(labels: &[usize]) -> Vec<f64> {
    let mut counts = [0usize; NUM_CLASSES];
    for &y in labels {
        counts[y] += 1;
    }
    labels.iter().map(|&y| 1.0 / counts[y] as f64).collect()
}

/// Sample order for one epoch: a weighted draw with replacement or a
/// shuffled permutation.
pub fn epoch_order(labels: &[usize], weighted: bool, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = labels.len();
    if weighted {
        let dist = WeightedIndex::new(inverse_frequency_weights(labels))
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok((0..n).map(|_| dist.sample(rng)).collect())
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Ok(order)
    }
}

fn sample_rng(seed: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD50F_0D2A_55E1_0B3C);
    rng.set_stream(counter);
    rng
}

/// Loss and parameter gradients for one bag, scaled by `1 / batch`.
fn bag_gradient(
    model: &ExpertModel,
    bag: &FeatureBag,
    label: usize,
    epoch: u32,
    loss: &ExpertLoss,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = model.params.record(&mut tape);
    let fwd = model.forward_on_tape(&mut tape, &vars, &bag.frames, Mode::Train, rng)?;
    let y = one_hot(label, NUM_CLASSES)?;
    let l = match loss {
        ExpertLoss::Evidential(cfg) => {
            let ev = evidential_on_tape(&mut tape, fwd.logits)?;
            edl_loss_on_tape(&mut tape, ev.alpha, &y, epoch, cfg)?
        }
        ExpertLoss::CrossEntropy => cross_entropy_on_tape(&mut tape, fwd.logits, &y)?,
    };
    let value = tape.scalar_value(l);
    let scaled = tape.scale(l, scale)?;
    let mut grads = tape.backward(scaled)?;
    let g = vars
        .iter()
        .map(|&v| grads.take(v).expect("parameter gradient"))
        .collect();
    Ok((value, g))
}

/// `−Σ_c y_c log softmax(z)_c` for a `1×C` logit row.
pub fn cross_entropy_on_tape(tape: &mut Tape, logits: Var, y: &[f64]) -> Result<Var> {
    let p = tape.softmax(logits)?;
    let p = tape.clamp_min(p, 1e-300)?;
    let logp = tape.ln(p)?;
    let yv = tape.constant(Tensor::row(y.to_vec())?);
    let picked = tape.mul(yv, logp)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0)
}

/// Minibatch AdamW training on the expert's own label source.
///
/// Deterministic for a given `(model.spec.seed, data, cfg)`: per-bag
/// gradients may be computed in parallel but are reduced in batch order,
/// and each bag's dropout masks come from its own counter-indexed stream.
pub fn train_expert(
    model: &mut ExpertModel,
    data: &[FeatureBag],
    cfg: &TrainConfig,
    loss: &ExpertLoss,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("no training bags".into()));
    }
    match (model.spec.head, loss) {
        (HeadKind::Evidential, ExpertLoss::Evidential(c)) => c.validate()?,
        (HeadKind::Softmax, ExpertLoss::CrossEntropy) => {}
        (head, loss) => {
            return Err(Error::Config(format!(
                "loss {loss:?} does not match head {head:?}"
            )))
        }
    }
    let source: LabelSource = model.spec.label_source;
    let labels = data
        .iter()
        .map(|b| source.label(b))
        .collect::<Result<Vec<_>>>()?;

    let mut order_rng = ChaCha8Rng::seed_from_u64(model.spec.seed.wrapping_add(0x5EED));
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut report = TrainReport::default();
    let mut counter = 0u64;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(&labels, cfg.weighted_sampling, &mut order_rng)?;
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let base = counter;
            counter += batch.len() as u64;
            let frozen = &*model;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut rng = sample_rng(frozen.spec.seed, base + k as u64);
                    bag_gradient(frozen, &data[i], labels[i], epoch, loss, scale, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;

            let mut total: Vec<Tensor> = model
                .params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for (value, grads) in results {
                epoch_loss += value;
                for (acc, g) in total.iter_mut().zip(&grads) {
                    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
            }
            opt.step(model.params.tensors_mut(), &total)?;
        }
        report.epoch_losses.push(epoch_loss / order.len() as f64);
    }
    Ok(report)
}

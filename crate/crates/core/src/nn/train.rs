//! Mini-batch SGD over labelled images.
//!
//! Per-sample gradients may be computed concurrently, but they are always
//! summed in batch order, and every sample draws its dropout masks from its
//! own RNG stream keyed on `(seed, epoch, sample index)`. Training is
//! therefore bit-reproducible for a given seed regardless of thread count.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::softmax_cross_entropy;
use super::model::{Params, SpnetModel};
use super::tensor::{Scalar, Tensor};
use super::NnError;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.01, batch_size: 8, epochs: 30, dropout_rate: 0.2, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::InvalidConfig("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage<T> {
    pub image: Tensor<T>,
    pub label: usize,
}

/// Mean loss and accuracy over one pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// `w ← w − lr·g` for every parameter.
pub fn sgd_step<T: Scalar>(params: &mut Params<T>, grads: &Params<T>, lr: T) {
    for (w, g) in params.tensors.iter_mut().zip(&grads.tensors) {
        for (wv, &gv) in w.data_mut().iter_mut().zip(g.data()) {
            *wv -= lr * gv;
        }
    }
}

/// Gradient containers that can be summed.
pub trait Accumulate {
    fn accumulate(&mut self, other: &Self);
}

impl<T: Scalar> Accumulate for Params<T> {
    fn accumulate(&mut self, other: &Self) {
        self.add_assign(other);
    }
}

/// Result of one sample's forward/backward pass.
pub struct SampleGrad<G> {
    pub loss: f64,
    pub correct: bool,
    pub grads: G,
}

/// Runs `per_sample` for each batch entry and sums the results in batch order.
pub fn reduce_batch<G, F>(batch: &[usize], per_sample: F) -> Result<(f64, usize, G), NnError>
where
    G: Accumulate + Send,
    F: Fn(usize, usize) -> Result<SampleGrad<G>, NnError> + Sync + Send,
{
    let results = par::map_range(batch.len(), |pos| per_sample(pos, batch[pos]));
    let mut iter = results.into_iter();
    let first = iter.next().ok_or(NnError::EmptyBatch)??;
    let (mut loss, mut correct, mut total) = (first.loss, first.correct as usize, first.grads);
    for r in iter {
        let r = r?;
        loss += r.loss;
        correct += r.correct as usize;
        total.accumulate(&r.grads);
    }
    if !loss.is_finite() {
        return Err(NnError::NonFinite);
    }
    Ok((loss, correct, total))
}

/// Dropout RNG for one sample of one epoch.
pub fn sample_rng(seed: u64, epoch: usize, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | item as u64);
    rng
}

/// Visiting order of the training set for `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order
}

pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One shuffled pass of mini-batch SGD. Reported loss and accuracy are those
/// of the training-mode forward passes.
pub fn train_epoch<T: Scalar>(
    model: &mut SpnetModel<T>,
    data: &[LabeledImage<T>],
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats, NnError> {
    config.validate()?;
    if data.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    model.config.dropout_rate = config.dropout_rate;
    let order = epoch_order(data.len(), config.seed, epoch);
    let (mut loss_sum, mut correct) = (0.0, 0);
    for batch in order.chunks(config.batch_size) {
        let m = &*model;
        let (loss, ok, mut grads) = reduce_batch(batch, |_, item| {
            let sample = &data[item];
            let mut rng = sample_rng(config.seed, epoch, item);
            let out = m.forward(&sample.image, Some(&mut rng))?;
            let (loss, d) = softmax_cross_entropy(&out.scores, sample.label)?;
            let mut grads = Params::zeros_like(&m.params);
            m.backward(&out.cache, &d, &mut grads);
            Ok(SampleGrad { loss: loss.to_f64(), correct: argmax(&out.scores) == sample.label, grads })
        })?;
        grads.scale(T::one() / T::from_f64(batch.len() as f64));
        sgd_step(&mut model.params, &grads, T::from_f64(config.learning_rate));
        if !model.params.all_finite() {
            return Err(NnError::NonFinite);
        }
        loss_sum += loss;
        correct += ok;
    }
    Ok(EpochStats { epoch, loss: loss_sum / data.len() as f64, accuracy: correct as f64 / data.len() as f64 })
}

/// Inference-mode loss and accuracy.
pub fn evaluate<T: Scalar>(model: &SpnetModel<T>, data: &[LabeledImage<T>]) -> Result<EpochStats, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let results = par::map_range(data.len(), |i| -> Result<(f64, bool), NnError> {
        let scores = model.predict(&data[i].image)?;
        let (loss, _) = softmax_cross_entropy(&scores, data[i].label)?;
        Ok((loss.to_f64(), argmax(&scores) == data[i].label))
    });
    let (mut loss, mut correct) = (0.0, 0usize);
    for r in results {
        let (l, ok) = r?;
        loss += l;
        correct += ok as usize;
    }
    Ok(EpochStats { epoch: 0, loss: loss / data.len() as f64, accuracy: correct as f64 / data.len() as f64 })
}

/// Trains for `config.epochs` epochs. `on_epoch` sees each epoch's stats and
/// may stop training early by returning `false`.
pub fn fit<T: Scalar>(
    model: &mut SpnetModel<T>,
    data: &[LabeledImage<T>],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&SpnetModel<T>, &EpochStats) -> bool,
) -> Result<Vec<EpochStats>, NnError> {
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let stats = train_epoch(model, data, config, epoch)?;
        history.push(stats);
        if !on_epoch(model, &stats) {
            break;
        }
    }
    Ok(history)
}

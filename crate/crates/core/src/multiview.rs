//! Rotated views of one object, per-view importance weights, and the
//! ensemble that combines the scores of the kept views.
//!
//! A score matrix is stored as one row (length C) per view.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Rotation, TriangleMesh};
use crate::nn::layers::softmax_cross_entropy;
use crate::nn::{
    argmax, epoch_order, reduce_batch, sample_rng, Accumulate, EpochStats, NnError, Params, SampleGrad, Scalar,
    SpnetModel, Tensor, TrainConfig,
};
use crate::par;
use crate::render::{render, DepthImage, ImageKind, RenderError, RenderOptions};

/// Views in the full bank: 8 elevations x 8 azimuths.
pub const FULL_VIEW_COUNT: usize = 64;
pub const DEFAULT_TOP_M: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub enum MultiviewError {
    EmptyViews,
    /// Score rows, weights or images disagree in count or width.
    CountMismatch { expected: usize, got: usize },
    InvalidTopM { m: usize, n: usize },
    Render(RenderError),
    Nn(NnError),
}

impl From<RenderError> for MultiviewError {
    fn from(e: RenderError) -> Self {
        MultiviewError::Render(e)
    }
}

impl From<NnError> for MultiviewError {
    fn from(e: NnError) -> Self {
        MultiviewError::Nn(e)
    }
}

impl fmt::Display for MultiviewError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MultiviewError::EmptyViews => f.write_str("no views to aggregate"),
            MultiviewError::CountMismatch { expected, got } => write!(f, "expected {expected} entries, got {got}"),
            MultiviewError::InvalidTopM { m, n } => write!(f, "cannot keep {m} of {n} views"),
            MultiviewError::Render(e) => write!(f, "render: {e}"),
            MultiviewError::Nn(e) => write!(f, "network: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MultiviewError {}

/// Named rotation sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewPreset {
    /// The identity rotation only.
    Plain,
    /// Looking along x, y and z.
    MajorAxes,
    /// 12 azimuths at 30° steps, 30° elevation.
    Mvcnn12,
    /// All 64 rotations of the bank.
    Full,
}

impl ViewPreset {
    pub const ALL: [ViewPreset; 4] = [ViewPreset::Plain, ViewPreset::MajorAxes, ViewPreset::Mvcnn12, ViewPreset::Full];

    pub fn name(self) -> &'static str {
        match self {
            ViewPreset::Plain => "plain",
            ViewPreset::MajorAxes => "major_axes",
            ViewPreset::Mvcnn12 => "mvcnn12",
            ViewPreset::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Option<ViewPreset> {
        ViewPreset::ALL.iter().copied().find(|p| p.name() == name)
    }

    pub fn rotations(self) -> Vec<Rotation> {
        match self {
            ViewPreset::Plain => vec![Rotation::IDENTITY],
            ViewPreset::MajorAxes => {
                vec![Rotation::IDENTITY, Rotation::new(PI / 2.0, 0.0), Rotation::new(0.0, PI / 2.0)]
            }
            ViewPreset::Mvcnn12 => (0..12).map(|k| Rotation::from_degrees(30.0 * k as f64, 30.0)).collect(),
            ViewPreset::Full => full_rotations(),
        }
    }
}

/// The 64 bank rotations, row-major by (elevation, azimuth) in 45° steps.
pub fn full_rotations() -> Vec<Rotation> {
    let mut out = Vec::with_capacity(FULL_VIEW_COUNT);
    for e in 0..8 {
        for a in 0..8 {
            out.push(Rotation::from_degrees(45.0 * a as f64, 45.0 * e as f64));
        }
    }
    out
}

/// One image per rotation, in the given order.
pub fn generate_views(
    mesh: &TriangleMesh,
    kind: ImageKind,
    rotations: &[Rotation],
    options: &RenderOptions,
) -> Result<Vec<DepthImage>, RenderError> {
    rotations.iter().map(|&r| render(mesh, kind, r, options)).collect()
}

/// Inference scores of every view: row `j` is the backbone's output on view `j`.
pub fn view_scores<T: Scalar>(backbone: &SpnetModel<T>, views: &[Tensor<T>]) -> Result<Vec<Vec<T>>, NnError> {
    par::map_range(views.len(), |j| backbone.predict(&views[j])).into_iter().collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    Max,
    Avg,
    #[default]
    Weighted,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Max, Aggregation::Avg, Aggregation::Weighted];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Max => "max",
            Aggregation::Avg => "avg",
            Aggregation::Weighted => "weighted",
        }
    }

    pub fn from_name(name: &str) -> Option<Aggregation> {
        Aggregation::ALL.iter().copied().find(|a| a.name() == name)
    }

    pub fn code(self) -> u8 {
        match self {
            Aggregation::Max => 0,
            Aggregation::Avg => 1,
            Aggregation::Weighted => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Aggregation> {
        Aggregation::ALL.iter().copied().find(|a| a.code() == code)
    }
}

fn check_scores<T>(scores: &[Vec<T>]) -> Result<usize, MultiviewError> {
    let classes = scores.first().ok_or(MultiviewError::EmptyViews)?.len();
    for row in scores {
        if row.len() != classes {
            return Err(MultiviewError::CountMismatch { expected: classes, got: row.len() });
        }
    }
    Ok(classes)
}

fn uniform<T: Scalar>(m: usize) -> Vec<T> {
    vec![T::one() / T::from_f64(m as f64); m]
}

fn weighted_sum<T: Scalar>(scores: &[Vec<T>], weights: &[T], classes: usize) -> Vec<T> {
    let mut out = vec![T::zero(); classes];
    for (row, &w) in scores.iter().zip(weights) {
        for (o, &a) in out.iter_mut().zip(row) {
            *o += w * a;
        }
    }
    out
}

/// Combines per-view scores into one score vector.
///
/// `Avg` is evaluated as the weighted sum with every weight equal to `1/M`,
/// so `Weighted` with those weights reproduces it exactly. `weights` is only
/// read (and its length only checked) for `Weighted`.
pub fn aggregate<T: Scalar>(scores: &[Vec<T>], aggregation: Aggregation, weights: &[T]) -> Result<Vec<T>, MultiviewError> {
    let classes = check_scores(scores)?;
    Ok(match aggregation {
        Aggregation::Max => (0..classes)
            .map(|c| scores.iter().map(|r| r[c]).fold(T::neg_infinity(), T::max))
            .collect(),
        Aggregation::Avg => weighted_sum(scores, &uniform(scores.len()), classes),
        Aggregation::Weighted => {
            if weights.len() != scores.len() {
                return Err(MultiviewError::CountMismatch { expected: scores.len(), got: weights.len() });
            }
            weighted_sum(scores, weights, classes)
        }
    })
}

/// Gradients of [`aggregate`] given `d_out = dL/dŷ`: per-view score
/// gradients, and weight gradients (all zero unless `Weighted`).
///
/// Max sends each class's gradient to the first view attaining the maximum.
pub fn aggregate_backward<T: Scalar>(
    scores: &[Vec<T>],
    aggregation: Aggregation,
    weights: &[T],
    d_out: &[T],
) -> Result<(Vec<Vec<T>>, Vec<T>), MultiviewError> {
    let classes = check_scores(scores)?;
    if d_out.len() != classes {
        return Err(MultiviewError::CountMismatch { expected: classes, got: d_out.len() });
    }
    let m = scores.len();
    let mut d_scores = vec![vec![T::zero(); classes]; m];
    let mut d_weights = vec![T::zero(); m];
    match aggregation {
        Aggregation::Max => {
            for c in 0..classes {
                let best = (0..m).fold(0, |b, j| if scores[j][c] > scores[b][c] { j } else { b });
                d_scores[best][c] = d_out[c];
            }
        }
        Aggregation::Avg | Aggregation::Weighted => {
            let w = if aggregation == Aggregation::Avg {
                uniform(m)
            } else if weights.len() == m {
                weights.to_vec()
            } else {
                return Err(MultiviewError::CountMismatch { expected: m, got: weights.len() });
            };
            for j in 0..m {
                for c in 0..classes {
                    d_scores[j][c] = w[j] * d_out[c];
                }
                if aggregation == Aggregation::Weighted {
                    d_weights[j] = scores[j].iter().zip(d_out).map(|(&a, &d)| a * d).sum();
                }
            }
        }
    }
    Ok((d_scores, d_weights))
}

/// Indices of the `m` largest `|w|`, largest first; ties go to the lower index.
pub fn select_top(weights: &[f64], m: usize) -> Result<Vec<usize>, MultiviewError> {
    if m == 0 || m > weights.len() {
        return Err(MultiviewError::InvalidTopM { m, n: weights.len() });
    }
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    idx.truncate(m);
    Ok(idx)
}

/// Candidate rotations, their learned weights, and the kept subset.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBank {
    pub rotations: Vec<Rotation>,
    pub weights: Vec<f64>,
    pub selected: Vec<usize>,
}

impl ViewBank {
    /// Uniform weights `1/N`, nothing selected yet.
    pub fn new(rotations: Vec<Rotation>) -> Self {
        let n = rotations.len();
        ViewBank { rotations, weights: vec![1.0 / n as f64; n], selected: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn select(&mut self, m: usize) -> Result<&[usize], MultiviewError> {
        self.selected = select_top(&self.weights, m)?;
        Ok(&self.selected)
    }

    pub fn selected_rotations(&self) -> Vec<Rotation> {
        self.selected.iter().map(|&i| self.rotations[i]).collect()
    }
}

/// Learns one weight per view on fixed score matrices (one `N x C` matrix
/// per training object) by SGD on the cross-entropy of the weighted sum.
/// The backbone that produced the scores is not involved, so it stays frozen.
pub fn train_view_selection(
    scores: &[Vec<Vec<f64>>],
    labels: &[usize],
    initial: &[f64],
    config: &TrainConfig,
) -> Result<(Vec<f64>, Vec<EpochStats>), MultiviewError> {
    config.validate()?;
    if scores.is_empty() {
        return Err(NnError::EmptyBatch.into());
    }
    if labels.len() != scores.len() {
        return Err(MultiviewError::CountMismatch { expected: scores.len(), got: labels.len() });
    }
    for s in scores {
        if s.len() != initial.len() {
            return Err(MultiviewError::CountMismatch { expected: initial.len(), got: s.len() });
        }
        check_scores(s)?;
    }
    let mut w = initial.to_vec();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = epoch_order(scores.len(), config.seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in order.chunks(config.batch_size) {
            let (loss, ok, g) = reduce_batch(batch, |_, item| {
                let s = &scores[item];
                let y = aggregate(s, Aggregation::Weighted, &w).map_err(nn_only)?;
                let (loss, d) = softmax_cross_entropy(&y, labels[item])?;
                let (_, dw) = aggregate_backward(s, Aggregation::Weighted, &w, &d).map_err(nn_only)?;
                Ok(SampleGrad { loss, correct: argmax(&y) == labels[item], grads: WeightGrad(dw) })
            })?;
            let step = config.learning_rate / batch.len() as f64;
            for (wj, gj) in w.iter_mut().zip(&g.0) {
                *wj -= step * gj;
            }
            loss_sum += loss;
            correct += ok;
        }
        let n = scores.len() as f64;
        history.push(EpochStats { epoch, loss: loss_sum / n, accuracy: correct as f64 / n });
    }
    Ok((w, history))
}

// Shapes were validated up front, so aggregation cannot fail inside a batch.
fn nn_only(e: MultiviewError) -> NnError {
    match e {
        MultiviewError::Nn(e) => e,
        _ => NnError::ShapeMismatch { expected: Vec::new(), got: Vec::new() },
    }
}

struct WeightGrad<T>(Vec<T>);

impl<T: Scalar> Accumulate for WeightGrad<T> {
    fn accumulate(&mut self, other: &Self) {
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// A shared backbone applied to `M` views whose scores are aggregated.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel<T> {
    pub backbone: SpnetModel<T>,
    pub view_weights: Vec<T>,
    pub aggregation: Aggregation,
}

/// `M` images of one object (in selected-view order) and its label.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewSample<T> {
    pub views: Vec<Tensor<T>>,
    pub label: usize,
}

struct EnsembleGrad<T> {
    params: Params<T>,
    weights: Vec<T>,
}

impl<T: Scalar> Accumulate for EnsembleGrad<T> {
    fn accumulate(&mut self, other: &Self) {
        self.params.add_assign(&other.params);
        for (a, &b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
    }
}

impl<T: Scalar> EnsembleModel<T> {
    /// View weights start at `1/M`.
    pub fn new(backbone: SpnetModel<T>, views: usize, aggregation: Aggregation) -> Result<Self, MultiviewError> {
        if views == 0 {
            return Err(MultiviewError::EmptyViews);
        }
        Ok(EnsembleModel { backbone, view_weights: uniform(views), aggregation })
    }

    pub fn views(&self) -> usize {
        self.view_weights.len()
    }

    fn check_views(&self, views: &[Tensor<T>]) -> Result<(), MultiviewError> {
        if views.len() != self.views() {
            return Err(MultiviewError::CountMismatch { expected: self.views(), got: views.len() });
        }
        Ok(())
    }

    /// Aggregated pre-tanh scores, no dropout.
    pub fn predict(&self, views: &[Tensor<T>]) -> Result<Vec<T>, MultiviewError> {
        self.check_views(views)?;
        let scores = view_scores(&self.backbone, views)?;
        aggregate(&scores, self.aggregation, &self.view_weights)
    }

    fn sample_grad(
        &self,
        sample: &MultiViewSample<T>,
        seed: u64,
        epoch: usize,
        item: usize,
    ) -> Result<SampleGrad<EnsembleGrad<T>>, NnError> {
        let m = self.views();
        let mut outs = Vec::with_capacity(m);
        for (j, view) in sample.views.iter().enumerate() {
            let mut rng = sample_rng(seed, epoch, item * m + j);
            outs.push(self.backbone.forward(view, Some(&mut rng))?);
        }
        let scores: Vec<Vec<T>> = outs.iter().map(|o| o.scores.clone()).collect();
        let y = aggregate(&scores, self.aggregation, &self.view_weights).map_err(nn_only)?;
        let (loss, d) = softmax_cross_entropy(&y, sample.label)?;
        let (d_scores, d_weights) =
            aggregate_backward(&scores, self.aggregation, &self.view_weights, &d).map_err(nn_only)?;
        let mut params = Params::zeros_like(&self.backbone.params);
        for (out, ds) in outs.iter().zip(&d_scores) {
            self.backbone.backward(&out.cache, ds, &mut params);
        }
        Ok(SampleGrad {
            loss: loss.to_f64(),
            correct: argmax(&y) == sample.label,
            grads: EnsembleGrad { params, weights: d_weights },
        })
    }

    /// One shuffled SGD pass updating the backbone and, for `Weighted`, the
    /// view weights.
    pub fn train_epoch(
        &mut self,
        data: &[MultiViewSample<T>],
        config: &TrainConfig,
        epoch: usize,
    ) -> Result<EpochStats, MultiviewError> {
        config.validate()?;
        if data.is_empty() {
            return Err(NnError::EmptyBatch.into());
        }
        for s in data {
            self.check_views(&s.views)?;
        }
        self.backbone.config.dropout_rate = config.dropout_rate;
        let order = epoch_order(data.len(), config.seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in order.chunks(config.batch_size) {
            let this = &*self;
            let (loss, ok, mut g) =
                reduce_batch(batch, |_, item| this.sample_grad(&data[item], config.seed, epoch, item))?;
            let step = T::from_f64(config.learning_rate / batch.len() as f64);
            g.params.scale(step);
            for (w, d) in self.backbone.params.tensors.iter_mut().zip(&g.params.tensors) {
                for (wv, &dv) in w.data_mut().iter_mut().zip(d.data()) {
                    *wv -= dv;
                }
            }
            if self.aggregation == Aggregation::Weighted {
                for (w, &d) in self.view_weights.iter_mut().zip(&g.weights) {
                    *w -= step * d;
                }
            }
            if !self.backbone.params.all_finite() || self.view_weights.iter().any(|w| !w.is_finite()) {
                return Err(NnError::NonFinite.into());
            }
            loss_sum += loss;
            correct += ok;
        }
        let n = data.len() as f64;
        Ok(EpochStats { epoch, loss: loss_sum / n, accuracy: correct as f64 / n })
    }

    /// Inference-mode loss and accuracy.
    pub fn evaluate(&self, data: &[MultiViewSample<T>]) -> Result<EpochStats, MultiviewError> {
        if data.is_empty() {
            return Err(NnError::EmptyBatch.into());
        }
        let (mut loss, mut correct) = (0.0, 0usize);
        for s in data {
            let y = self.predict(&s.views)?;
            loss += softmax_cross_entropy(&y, s.label)?.0.to_f64();
            correct += (argmax(&y) == s.label) as usize;
        }
        let n = data.len() as f64;
        Ok(EpochStats { epoch: 0, loss: loss / n, accuracy: correct as f64 / n })
    }
}

/// Trains an ensemble for `config.epochs` epochs; `on_epoch` may stop early
/// by returning `false`.
pub fn train_ensemble<T: Scalar>(
    model: &mut EnsembleModel<T>,
    data: &[MultiViewSample<T>],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EnsembleModel<T>, &EpochStats) -> bool,
) -> Result<Vec<EpochStats>, MultiviewError> {
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let stats = model.train_epoch(data, config, epoch)?;
        history.push(stats);
        if !on_epoch(model, &stats) {
            break;
        }
    }
    Ok(history)
}

/// Fresh backbone for from-scratch ensemble training.
pub fn fresh_backbone<T: Scalar>(like: &SpnetModel<T>, seed: u64) -> SpnetModel<T> {
    SpnetModel::new(like.config, &mut ChaCha8Rng::seed_from_u64(seed))
}

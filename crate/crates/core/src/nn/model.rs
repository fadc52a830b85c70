//! The shallow scoring network: four 3x3 conv blocks and two dense layers.
//!
//! ```text
//! 1xHxW ─ conv(24) tanh pool drop ─ conv(32) tanh pool drop ─ conv(48) tanh pool drop
//!       ─ conv(64) tanh GAP drop ─ fc(512) tanh drop ─ fc(C) ─▶ scores (─ tanh)
//! ```
//!
//! The scores before the final tanh are what classification, view
//! aggregation and retrieval consume.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{self, ConvOutput};
use super::tensor::{Scalar, Tensor};
use super::NnError;

pub const CONV_CHANNELS: [usize; 4] = [24, 32, 48, 64];
pub const DEFAULT_HIDDEN: usize = 512;
pub const DEFAULT_DROPOUT: f64 = 0.2;

/// Parameter tensor names, in storage order.
pub const PARAM_NAMES: [&str; 12] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "conv4.weight",
    "conv4.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

const FC1: usize = 8;
const FC2: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpnetConfig {
    pub classes: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
}

impl SpnetConfig {
    pub fn new(classes: usize) -> Self {
        SpnetConfig { classes, hidden: DEFAULT_HIDDEN, dropout_rate: DEFAULT_DROPOUT }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::with_capacity(PARAM_NAMES.len());
        let mut cin = 1;
        for &cout in &CONV_CHANNELS {
            shapes.push(vec![cout, cin, 3, 3]);
            shapes.push(vec![cout]);
            cin = cout;
        }
        shapes.push(vec![self.hidden, cin]);
        shapes.push(vec![self.hidden]);
        shapes.push(vec![self.classes, self.hidden]);
        shapes.push(vec![self.classes]);
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Ordered parameter (or gradient) tensors; see [`PARAM_NAMES`].
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(config: &SpnetConfig) -> Self {
        Params { tensors: config.param_shapes().iter().map(|s| Tensor::zeros(s)).collect() }
    }

    pub fn zeros_like(other: &Params<T>) -> Self {
        Params { tensors: other.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect() }
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor<T>)> {
        PARAM_NAMES.iter().copied().zip(&self.tensors)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn add_assign(&mut self, other: &Params<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.scale(s);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params { tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpnetModel<T> {
    pub config: SpnetConfig,
    pub params: Params<T>,
}

/// Activations kept from a forward pass for [`SpnetModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    conv_inputs: Vec<Vec<usize>>,
    convs: Vec<ConvOutput<T>>,
    /// tanh outputs of each conv layer.
    activations: Vec<Tensor<T>>,
    pool_argmax: Vec<Vec<u32>>,
    /// Dropout masks after each conv block, after fc1; empty when disabled.
    masks: Vec<Vec<T>>,
    /// Input to fc1 (GAP output after dropout).
    fc1_input: Tensor<T>,
    /// tanh(fc1) before dropout.
    hidden: Tensor<T>,
    /// Input to fc2 (hidden after dropout).
    fc2_input: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    /// Pre-tanh class scores.
    pub scores: Vec<T>,
    pub cache: ForwardCache<T>,
}

impl<T: Scalar> ForwardOutput<T> {
    /// Scores after the final tanh.
    pub fn activated(&self) -> Vec<T> {
        self.scores.iter().map(|s| s.tanh_libm()).collect()
    }
}

fn glorot<T: Scalar, R: Rng>(t: &mut Tensor<T>, fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    for v in t.data_mut() {
        *v = T::from_f64(rng.gen_range(-limit..limit));
    }
}

impl<T: Scalar> SpnetModel<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new(config: SpnetConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut params = Params::zeros(&config);
        for i in (0..PARAM_NAMES.len()).step_by(2) {
            let shape = params.tensors[i].shape().to_vec();
            let (fan_in, fan_out) = match shape.as_slice() {
                [o, c, kh, kw] => (c * kh * kw, o * kh * kw),
                [o, c] => (*c, *o),
                _ => unreachable!(),
            };
            glorot(&mut params.tensors[i], fan_in, fan_out, rng);
        }
        SpnetModel { config, params }
    }

    pub fn zeroed(config: SpnetConfig) -> Self {
        SpnetModel { config, params: Params::zeros(&config) }
    }

    pub fn from_params(config: SpnetConfig, params: Params<T>) -> Result<Self, NnError> {
        let shapes = config.param_shapes();
        if params.tensors.len() != shapes.len() {
            return Err(NnError::ShapeMismatch { expected: vec![shapes.len()], got: vec![params.tensors.len()] });
        }
        for (t, s) in params.tensors.iter().zip(&shapes) {
            t.expect_shape(s)?;
        }
        Ok(SpnetModel { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Scalar>(&self) -> SpnetModel<U> {
        SpnetModel { config: self.config, params: self.params.cast() }
    }

    /// Forward pass over a `1 x H x W` image with `H`, `W` divisible by 8.
    ///
    /// Dropout is applied only when `dropout_rng` is given and the rate is
    /// positive; inference passes `None` and is deterministic.
    pub fn forward(
        &self,
        image: &Tensor<T>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput<T>, NnError> {
        match *image.shape() {
            [1, _, _] => {}
            _ => return Err(NnError::ShapeMismatch { expected: vec![1, 0, 0], got: image.shape().to_vec() }),
        }
        let rate = self.config.dropout_rate;
        let mut mask = |len: usize| -> Option<Vec<T>> {
            match dropout_rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => Some(layers::dropout_mask(len, rate, rng)),
                _ => None,
            }
        };

        let p = &self.params.tensors;
        let mut conv_inputs = Vec::with_capacity(4);
        let mut convs = Vec::with_capacity(4);
        let mut activations = Vec::with_capacity(4);
        let mut pool_argmax = Vec::with_capacity(3);
        let mut masks = Vec::new();

        let mut x = image.clone();
        for layer in 0..4 {
            conv_inputs.push(x.shape().to_vec());
            let conv = layers::conv3x3_forward(&x, &p[2 * layer], &p[2 * layer + 1])?;
            let mut a = conv.output.clone();
            layers::tanh_inplace(&mut a);
            x = if layer < 3 {
                let (pooled, arg) = layers::maxpool2x2_forward(&a)?;
                pool_argmax.push(arg);
                pooled
            } else {
                layers::global_avg_pool(&a)?
            };
            if let Some(m) = mask(x.len()) {
                layers::apply_mask(&mut x, &m);
                masks.push(m);
            }
            convs.push(conv);
            activations.push(a);
        }

        let fc1_input = x;
        let mut hidden = layers::linear_forward(&fc1_input, &p[FC1], &p[FC1 + 1])?;
        layers::tanh_inplace(&mut hidden);
        let mut fc2_input = hidden.clone();
        if let Some(m) = mask(fc2_input.len()) {
            layers::apply_mask(&mut fc2_input, &m);
            masks.push(m);
        }
        let scores = layers::linear_forward(&fc2_input, &p[FC2], &p[FC2 + 1])?.into_data();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(NnError::NonFinite);
        }

        Ok(ForwardOutput {
            scores,
            cache: ForwardCache { conv_inputs, convs, activations, pool_argmax, masks, fc1_input, hidden, fc2_input },
        })
    }

    /// Scores only, no dropout.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Vec<T>, NnError> {
        Ok(self.forward(image, None)?.scores)
    }

    /// Accumulates parameter gradients of a loss whose gradient with respect
    /// to the scores is `d_scores`.
    pub fn backward(&self, cache: &ForwardCache<T>, d_scores: &[T], grads: &mut Params<T>) {
        let p = &self.params.tensors;
        let g = &mut grads.tensors;
        let dropout = !cache.masks.is_empty();

        let d = Tensor::from_vec(&[d_scores.len()], d_scores.to_vec()).expect("1-d");
        let (gw, rest) = g[FC2..].split_at_mut(1);
        let mut d_hidden = layers::linear_backward(&cache.fc2_input, &p[FC2], &d, &mut gw[0], &mut rest[0]);
        if dropout {
            layers::apply_mask(&mut d_hidden, &cache.masks[4]);
        }
        layers::tanh_backward(&cache.hidden, &mut d_hidden);
        let (gw, rest) = g[FC1..].split_at_mut(1);
        let mut dx = layers::linear_backward(&cache.fc1_input, &p[FC1], &d_hidden, &mut gw[0], &mut rest[0]);

        for layer in (0..4).rev() {
            if dropout {
                layers::apply_mask(&mut dx, &cache.masks[layer]);
            }
            let act = &cache.activations[layer];
            let mut d_act = if layer == 3 {
                layers::global_avg_pool_backward(&dx, act.shape())
            } else {
                layers::maxpool2x2_backward(&dx, &cache.pool_argmax[layer], act.shape())
            };
            layers::tanh_backward(act, &mut d_act);
            let (gw, rest) = g[2 * layer..].split_at_mut(1);
            let d_in = layers::conv3x3_backward(
                &cache.convs[layer],
                &cache.conv_inputs[layer],
                &p[2 * layer],
                &d_act,
                &mut gw[0],
                &mut rest[0],
                layer > 0,
            );
            if let Some(d_in) = d_in {
                dx = d_in;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parameter_budget_for_ten_classes() {
        let cfg = SpnetConfig::new(10);
        let per_layer: Vec<usize> = cfg.param_shapes().iter().map(|s| s.iter().product()).collect();
        assert_eq!(per_layer[0] + per_layer[1], 240);
        assert_eq!(per_layer[2] + per_layer[3], 6_944);
        assert_eq!(per_layer[4] + per_layer[5], 13_872);
        assert_eq!(per_layer[6] + per_layer[7], 27_712);
        assert_eq!(per_layer[8] + per_layer[9], 33_280);
        assert_eq!(per_layer[10] + per_layer[11], 5_130);
        assert_eq!(cfg.param_count(), 87_178);
        let m = SpnetModel::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(m.param_count(), 87_178);
    }

    #[test]
    fn zero_model_scores_zero() {
        let m = SpnetModel::<f32>::zeroed(SpnetConfig::new(4));
        let img = Tensor::filled(&[1, 32, 32], 0.5f32);
        assert_eq!(m.predict(&img).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn inference_is_deterministic_and_dropout_is_not() {
        let m = SpnetModel::<f32>::new(SpnetConfig::new(5), &mut ChaCha8Rng::seed_from_u64(1));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::from_vec(&[1, 16, 16], (0..256).map(|_| rng.gen::<f32>()).collect()).unwrap();
        let a = m.predict(&img).unwrap();
        assert_eq!(a, m.predict(&img).unwrap());
        assert_eq!(a.len(), 5);
        let train = m.forward(&img, Some(&mut ChaCha8Rng::seed_from_u64(3))).unwrap();
        assert_ne!(train.scores, a);
        assert!(train.activated().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn rejects_bad_input_shapes() {
        let m = SpnetModel::<f32>::zeroed(SpnetConfig::new(2));
        assert!(m.predict(&Tensor::zeros(&[2, 16, 16])).is_err());
        assert!(matches!(m.predict(&Tensor::zeros(&[1, 12, 12])), Err(NnError::OddSpatialDim { .. })));
    }

    #[test]
    fn zero_image_gives_zero_conv1_weight_gradient() {
        let m = SpnetModel::<f64>::new(SpnetConfig::new(3), &mut ChaCha8Rng::seed_from_u64(4));
        let img = Tensor::zeros(&[1, 16, 16]);
        let out = m.forward(&img, None).unwrap();
        let (_, d) = layers::softmax_cross_entropy(&out.scores, 1).unwrap();
        let mut g = Params::zeros(&m.config);
        m.backward(&out.cache, &d, &mut g);
        assert!(g.tensors[0].data().iter().all(|&v| v == 0.0));
        assert!(g.tensors[1].data().iter().any(|&v| v != 0.0));
        assert!(g.tensors[FC2 + 1].data().iter().all(|&v| v != 0.0));
    }
}

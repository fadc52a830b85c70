//! Central-difference check of [`SpnetModel::backward`].

use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::softmax_cross_entropy;
use super::model::{Params, SpnetModel, PARAM_NAMES};
use super::tensor::Tensor;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Entries sampled from each parameter tensor (all of them if fewer).
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-5, tolerance: 1e-4, samples_per_tensor: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// `|a - n| / max(|a| + |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compares backprop gradients of the cross-entropy loss against central
/// differences, with dropout disabled.
pub fn grad_check(
    model: &SpnetModel<f64>,
    image: &Tensor<f64>,
    label: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    let out = model.forward(image, None)?;
    let (_, d) = softmax_cross_entropy(&out.scores, label)?;
    let mut analytic = Params::zeros_like(&model.params);
    model.backward(&out.cache, &d, &mut analytic);

    let mut probe = model.clone();
    let loss = |m: &SpnetModel<f64>| -> Result<f64, NnError> {
        Ok(softmax_cross_entropy(&m.predict(image)?, label)?.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
    let mut worst = 0.0f64;
    for (t, name) in PARAM_NAMES.iter().enumerate() {
        let len = model.params.tensors[t].len();
        let picks: Vec<usize> = if len <= opts.samples_per_tensor {
            (0..len).collect()
        } else {
            index::sample(&mut rng, len, opts.samples_per_tensor).into_vec()
        };
        let mut max_rel = 0.0f64;
        for &i in &picks {
            let orig = probe.params.tensors[t].data()[i];
            probe.params.tensors[t].data_mut()[i] = orig + opts.h;
            let plus = loss(&probe)?;
            probe.params.tensors[t].data_mut()[i] = orig - opts.h;
            let minus = loss(&probe)?;
            probe.params.tensors[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            max_rel = max_rel.max(relative_error(analytic.tensors[t].data()[i], numeric));
        }
        worst = worst.max(max_rel);
        tensors.push(TensorCheck { name, checked: picks.len(), max_rel_error: max_rel });
    }
    Ok(GradCheckReport { tensors, max_rel_error: worst, tolerance: opts.tolerance })
}

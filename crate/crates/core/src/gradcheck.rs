//! Central finite-difference check of the end-to-end model gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{ConfigError, ModelConfig, ModelParams};
use crate::tensor::{Tensor, TensorCollection, TensorError};
use crate::training::logcosh_loss;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// Denominator floor of the relative error, so entries whose true gradient is
/// numerically zero are judged on absolute error instead.
pub const DEFAULT_FLOOR: f64 = 1e-6;
const KINK_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    pub floor: f64,
    /// Perturbs one analytic gradient entry. Used to confirm the check can fail.
    pub corrupt_gradient: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: DEFAULT_STEP,
            floor: DEFAULT_FLOOR,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerError {
    /// Layer label: `l1`..`l7`, `alpha5`, `alpha6`.
    pub layer: String,
    pub max_rel_error: f64,
    /// Parameter tensor and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
    /// Entries whose difference stencil crossed a PReLU kink even at the
    /// smallest retried step; excluded from `max_rel_error` because the
    /// central difference is not a derivative there.
    pub kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub layers: Vec<LayerError>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.layers.iter().map(|l| l.checked).sum()
    }

    pub fn kinks(&self) -> usize {
        self.layers.iter().map(|l| l.kinks).sum()
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

fn layer_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Random input/target pair for a gradient check, uniform in `[-0.5, 0.5)`.
pub fn probe_pair(config: &ModelConfig, rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>) {
    let l = config.segment_len;
    let mut draw = || Tensor::column(&(0..l).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
    (draw(), draw())
}

/// Compares the backpropagated gradient of `logcosh_loss(forward(x), y)`
/// against central differences for every parameter, in 64-bit arithmetic.
/// Parameters, input and target are all drawn from `seed`.
pub fn gradcheck(
    config: &ModelConfig,
    seed: u64,
    options: &GradcheckOptions,
) -> Result<GradcheckReport, GradcheckError> {
    let params = ModelParams::<f64>::build(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (x, y) = probe_pair(config, &mut rng);
    check_params(&params, &x, &y, seed, options)
}

pub fn check_params(
    params: &ModelParams<f64>,
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    seed: u64,
    options: &GradcheckOptions,
) -> Result<GradcheckReport, GradcheckError> {
    let (_, mut grads) = params.loss_and_grad(x, y)?;
    if options.corrupt_gradient {
        let (_, t) = grads.tensors_mut().into_iter().nth(4).expect("model has parameters");
        t.data_mut()[0] = t.data()[0] * 1.01 + 1e-3;
    }
    // Loss plus the sign pattern of both PReLU inputs.
    let probe = |p: &ModelParams<f64>| -> Result<(f64, Vec<bool>), TensorError> {
        let (out, trace) = p.forward_trace(x)?;
        let signs = trace
            .prelu_inputs()
            .iter()
            .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
            .collect();
        Ok((logcosh_loss(&out, y)?, signs))
    };

    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut jobs = Vec::new();
    for (k, (_, t)) in params.tensors().into_iter().enumerate() {
        jobs.extend((0..t.numel()).map(|i| (k, i)));
    }
    let numeric: Vec<(f64, bool)> = jobs
        .par_iter()
        .map(|&(k, i)| {
            let mut p = params.clone();
            let orig = p.tensors()[k].1.data()[i];
            let shift = |p: &mut ModelParams<f64>, v: f64| {
                p.tensors_mut().into_iter().nth(k).unwrap().1.data_mut()[i] = v;
            };
            // A stencil that straddles a PReLU kink is retried with smaller
            // steps before the entry is given up on.
            let mut step = options.step;
            for _ in 0..=KINK_RETRIES {
                shift(&mut p, orig + step);
                let (plus, s_plus) = probe(&p)?;
                shift(&mut p, orig - step);
                let (minus, s_minus) = probe(&p)?;
                if s_plus == s_minus {
                    return Ok(((plus - minus) / (2.0 * step), false));
                }
                step /= 10.0;
            }
            Ok((f64::NAN, true))
        })
        .collect::<Result<_, TensorError>>()?;

    let analytic = grads.tensors();
    let mut layers: Vec<LayerError> = Vec::new();
    for (&(k, i), &(n, kink)) in jobs.iter().zip(&numeric) {
        let a = analytic[k].1.data()[i];
        let err = relative_error(a, n, options.floor);
        let label = layer_of(&names[k]);
        if layers.last().is_none_or(|l| l.layer != label) {
            layers.push(LayerError {
                layer: label.to_string(),
                max_rel_error: 0.0,
                worst: (names[k].clone(), i),
                checked: 0,
                kinks: 0,
            });
        }
        let entry = layers.last_mut().unwrap();
        entry.checked += 1;
        if kink {
            entry.kinks += 1;
            continue;
        }
        if err > entry.max_rel_error || err.is_nan() {
            entry.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            entry.worst = (names[k].clone(), i);
        }
    }
    Ok(GradcheckReport { seed, layers })
}

#[derive(Debug, thiserror::Error)]
pub enum GradcheckError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

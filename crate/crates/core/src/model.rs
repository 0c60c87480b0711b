//! The seven-layer residual hourglass network.
//!
//! Layers 1–6 are bidirectional GRUs whose per-direction hidden size is half
//! the configured width; layer 7 is a single forward GRU with one unit whose
//! hidden state is the enhanced sample. Between levels the sequence is folded
//! (half the steps, twice the features) on the way down and unfolded on the
//! way up. For the default configuration:
//!
//! | layer | input     | n/dir | output    | then                       |
//! |-------|-----------|-------|-----------|----------------------------|
//! | 1     | 1024×1    | 1     | 1024×2    | fold → 512×4               |
//! | 2     | 512×4     | 64    | 512×128   | tap R2, fold → 256×256     |
//! | 3     | 256×256   | 128   | 256×256   | tap R3, fold → 128×512     |
//! | 4     | 128×512   | 256   | 128×512   | unfold → 256×256           |
//! | 5     | 256×256   | 128   | 256×256   | prelu(R3 + ·), unfold      |
//! | 6     | 512×128   | 64    | 512×128   | prelu(R2 + ·), unfold      |
//! | 7     | 1024×64   | 1     | 1024×1    | output                     |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{
    accumulate_bigru, accumulate_gru, bigru_backward, bigru_forward, bigru_forward_trace, downsample_fold,
    gru_backward, gru_forward, gru_forward_trace, prelu_backward, residual_merge, upsample_unfold, BiGruParams,
    BiGruTrace, Direction, GruParams, GruTrace, PreluSlope,
};
use crate::tensor::{ParameterSet, Scalar, Tensor, TensorCollection, TensorError};
use crate::training::init::{orthogonal_init, xavier_normal};
use crate::training::loss::logcosh_loss_grad;

pub const DEFAULT_SEGMENT_LEN: usize = 1024;
pub const DEFAULT_WIDTHS: [usize; 7] = [2, 128, 256, 512, 256, 128, 1];
/// Sample rate the network operates at.
pub const SAMPLE_RATE: u32 = 16_000;
/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid model configuration: {0}")]
    Invalid(String),
}

/// Hourglass shape: segment length and the total output width of each layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub segment_len: usize,
    pub widths: [usize; 7],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            segment_len: DEFAULT_SEGMENT_LEN,
            widths: DEFAULT_WIDTHS,
        }
    }
}

/// Shapes seen by one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub layer: usize,
    pub bidirectional: bool,
    pub input: (usize, usize),
    pub hidden: usize,
    pub output: (usize, usize),
}

impl ModelConfig {
    pub fn new(segment_len: usize, widths: [usize; 7]) -> Result<Self, ConfigError> {
        let c = ModelConfig { segment_len, widths };
        c.validate()?;
        Ok(c)
    }

    /// Desk-scale configuration: `L = 64`, widths `[2, 8, 16, 32, 16, 8, 1]`.
    pub fn tiny() -> Self {
        Self::scaled(16.0).expect("tiny configuration is valid")
    }

    /// Default configuration with the segment length and the inner widths
    /// divided by `factor`. The first (2) and last (1) widths are fixed.
    pub fn scaled(factor: f64) -> Result<Self, ConfigError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        let shrink = |v: usize| (v as f64 / factor).round() as usize;
        let mut widths = DEFAULT_WIDTHS;
        for w in widths.iter_mut().take(6).skip(1) {
            *w = shrink(*w);
        }
        Self::new(shrink(DEFAULT_SEGMENT_LEN), widths)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (l, w) = (self.segment_len, &self.widths);
        let mut problems = Vec::new();
        if l == 0 || l % 8 != 0 {
            problems.push(format!("segment_len {l} must be a positive multiple of 8"));
        }
        for (k, &wk) in w.iter().enumerate().take(6) {
            if wk == 0 || wk % 2 != 0 {
                problems.push(format!("width of layer {} ({wk}) must be positive and even", k + 1));
            }
        }
        if w[6] != 1 {
            problems.push(format!("output width must be 1, got {}", w[6]));
        }
        if w[4] != w[2] {
            problems.push(format!(
                "layer 5 width {} must equal layer 3 width {} for the inner residual",
                w[4], w[2]
            ));
        }
        if w[5] != w[1] {
            problems.push(format!(
                "layer 6 width {} must equal layer 2 width {} for the outer residual",
                w[5], w[1]
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems.join("; ")))
        }
    }

    /// `[L, L/2, L/4, L/8, L/4, L/2, L]`
    pub fn time_steps(&self) -> [usize; 7] {
        let l = self.segment_len;
        [l, l / 2, l / 4, l / 8, l / 4, l / 2, l]
    }

    pub fn layer_shapes(&self) -> [LayerShape; 7] {
        let w = self.widths;
        let t = self.time_steps();
        let inputs = [1, 2 * w[0], 2 * w[1], 2 * w[2], w[3] / 2, w[4] / 2, w[5] / 2];
        std::array::from_fn(|k| LayerShape {
            layer: k + 1,
            bidirectional: k < 6,
            input: (t[k], inputs[k]),
            hidden: if k < 6 { w[k] / 2 } else { 1 },
            output: (t[k], w[k]),
        })
    }

    /// Trainable parameter count implied by the shape table.
    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|s| {
                let (n, i) = (s.hidden, s.input.1);
                let per_dir = 3 * (n * i + n * n + n);
                if s.bidirectional {
                    2 * per_dir
                } else {
                    per_dir
                }
            })
            .sum::<usize>()
            + self.widths[4]
            + self.widths[5]
    }
}

pub fn param_count(config: &ModelConfig) -> usize {
    config.param_count()
}

/// All trainable tensors of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    config: ModelConfig,
    pub layers: Vec<BiGruParams<T>>,
    pub output: GruParams<T>,
    pub alpha5: PreluSlope<T>,
    pub alpha6: PreluSlope<T>,
}

const GRU_PARTS: [&str; 3] = ["wx", "wh", "b"];

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let shapes = config.layer_shapes();
        Ok(ModelParams {
            config: config.clone(),
            layers: shapes[..6]
                .iter()
                .map(|s| BiGruParams::zeros(s.hidden, s.input.1))
                .collect(),
            output: GruParams::zeros(1, shapes[6].input.1),
            alpha5: PreluSlope::constant(config.widths[4], T::zero()),
            alpha6: PreluSlope::constant(config.widths[5], T::zero()),
        })
    }

    /// Seeded initialization: Xavier-normal input kernels and orthogonal
    /// recurrent kernels per gate block, zero biases, PReLU slopes 0.25.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init_gru = |g: &mut GruParams<T>| {
            let (n, i) = (g.hidden(), g.input());
            for block in 0..3 {
                let wx = xavier_normal(i, n, &mut rng);
                for r in 0..n {
                    for (dst, &v) in g.wx.row_mut(block * n + r).iter_mut().zip(wx.row(r)) {
                        *dst = T::from_f64(v);
                    }
                }
                let wh = orthogonal_init(n, &mut rng);
                for r in 0..n {
                    for (dst, &v) in g.wh.row_mut(block * n + r).iter_mut().zip(wh.row(r)) {
                        *dst = T::from_f64(v);
                    }
                }
            }
        };
        for layer in params.layers.iter_mut() {
            init_gru(&mut layer.forward);
            init_gru(&mut layer.backward);
        }
        init_gru(&mut params.output);
        let slope = T::from_f64(PRELU_INIT);
        params.alpha5 = PreluSlope::constant(config.widths[4], slope);
        params.alpha6 = PreluSlope::constant(config.widths[5], slope);
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn numel(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layers: self.layers.iter().map(BiGruParams::cast).collect(),
            output: self.output.cast(),
            alpha5: PreluSlope::new(self.alpha5.alpha.cast()),
            alpha6: PreluSlope::new(self.alpha6.alpha.cast()),
        }
    }

    pub fn to_parameter_set(&self) -> ParameterSet<T> {
        let mut set = ParameterSet::new();
        for (name, t) in self.tensors() {
            set.insert(name, t.clone()).expect("parameter names are unique");
        }
        set
    }

    /// Rebuilds parameters from named tensors, checking every name and shape
    /// against the layout implied by `config`.
    pub fn from_parameter_set(config: &ModelConfig, set: &ParameterSet<T>) -> Result<Self, ParamLayoutError> {
        let mut params = Self::zeros(config).map_err(ParamLayoutError::Config)?;
        if set.len() != params.tensors().len() {
            return Err(ParamLayoutError::Count {
                expected: params.tensors().len(),
                found: set.len(),
            });
        }
        for (name, slot) in params.tensors_mut() {
            let src = set.get(&name).ok_or_else(|| ParamLayoutError::Missing(name.clone()))?;
            if src.shape() != slot.shape() {
                return Err(ParamLayoutError::Shape {
                    name,
                    expected: slot.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            *slot = src.clone();
        }
        Ok(params)
    }

    /// `self += other`, for summing gradients.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            accumulate_bigru(a, b);
        }
        accumulate_gru(&mut self.output, &other.output);
        self.alpha5.alpha.add_assign(&other.alpha5.alpha).expect("same layout");
        self.alpha6.alpha.add_assign(&other.alpha6.alpha).expect("same layout");
    }

    pub fn scale_in_place(&mut self, c: T) {
        for (_, t) in self.tensors_mut() {
            for v in t.data_mut() {
                *v = *v * c;
            }
        }
    }

    fn check_segment(&self, segment: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let l = self.config.segment_len;
        let ok = matches!(segment.shape(), [n] if *n == l) || matches!(segment.shape(), [n, 1] if *n == l);
        if !ok {
            return Err(TensorError::dim("forward", segment.shape(), &[l, 1]));
        }
        Ok(Tensor::column(segment.data()))
    }

    /// Enhanced segment (`L×1`) for a noisy segment of `L` samples.
    pub fn forward(&self, segment: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let x = self.check_segment(segment)?;
        let h1 = bigru_forward(&x, &self.layers[0])?;
        let r2 = bigru_forward(&downsample_fold(h1)?, &self.layers[1])?;
        let r3 = bigru_forward(&downsample_fold(r2.clone())?, &self.layers[2])?;
        let h4 = bigru_forward(&downsample_fold(r3.clone())?, &self.layers[3])?;
        let h5 = bigru_forward(&upsample_unfold(h4)?, &self.layers[4])?;
        let m5 = residual_merge(&r3, &h5, &self.alpha5)?;
        let h6 = bigru_forward(&upsample_unfold(m5)?, &self.layers[5])?;
        let m6 = residual_merge(&r2, &h6, &self.alpha6)?;
        gru_forward(&upsample_unfold(m6)?, &self.output, Direction::Forward)
    }

    /// Forward pass that keeps every activation needed by [`backward`](Self::backward).
    pub fn forward_trace(&self, segment: &Tensor<T>) -> Result<(Tensor<T>, ModelTrace<T>), TensorError> {
        let x = self.check_segment(segment)?;
        let mut shapes = Vec::with_capacity(7);
        let mut record = |layer: usize, input: &Tensor<T>, output: &Tensor<T>| {
            shapes.push(((layer), (input.rows(), input.cols()), (output.rows(), output.cols())));
        };
        let (h1, t1) = bigru_forward_trace(&x, &self.layers[0])?;
        record(1, &x, &h1);
        let in2 = downsample_fold(h1)?;
        let (r2, t2) = bigru_forward_trace(&in2, &self.layers[1])?;
        record(2, &in2, &r2);
        let in3 = downsample_fold(r2.clone())?;
        let (r3, t3) = bigru_forward_trace(&in3, &self.layers[2])?;
        record(3, &in3, &r3);
        let in4 = downsample_fold(r3.clone())?;
        let (h4, t4) = bigru_forward_trace(&in4, &self.layers[3])?;
        record(4, &in4, &h4);
        let in5 = upsample_unfold(h4)?;
        let (h5, t5) = bigru_forward_trace(&in5, &self.layers[4])?;
        record(5, &in5, &h5);
        let s5 = r3.add(&h5)?;
        let m5 = residual_merge(&r3, &h5, &self.alpha5)?;
        let in6 = upsample_unfold(m5)?;
        let (h6, t6) = bigru_forward_trace(&in6, &self.layers[5])?;
        record(6, &in6, &h6);
        let s6 = r2.add(&h6)?;
        let m6 = residual_merge(&r2, &h6, &self.alpha6)?;
        let in7 = upsample_unfold(m6)?;
        let (out, t7) = gru_forward_trace(&in7, &self.output, Direction::Forward)?;
        record(7, &in7, &out);
        Ok((
            out,
            ModelTrace {
                bi: vec![t1, t2, t3, t4, t5, t6],
                out: t7,
                s5,
                s6,
                shapes,
            },
        ))
    }

    /// Parameter gradients given the loss gradient with respect to the output.
    pub fn backward(&self, trace: &ModelTrace<T>, d_out: &Tensor<T>) -> Result<ModelParams<T>, TensorError> {
        let mut g = Self::zeros(&self.config).expect("config validated at construction");
        let (g7, d_in7) = gru_backward(&trace.out, &self.output, Direction::Forward, d_out)?;
        g.output = g7;

        let d_m6 = downsample_fold(d_in7)?;
        let (d_s6, g_a6) = prelu_backward(&trace.s6, &self.alpha6, &d_m6)?;
        g.alpha6 = g_a6;
        let (g6, d_in6) = bigru_backward(&trace.bi[5], &self.layers[5], &d_s6)?;
        g.layers[5] = g6;
        let d_r2_skip = d_s6;

        let d_m5 = downsample_fold(d_in6)?;
        let (d_s5, g_a5) = prelu_backward(&trace.s5, &self.alpha5, &d_m5)?;
        g.alpha5 = g_a5;
        let (g5, d_in5) = bigru_backward(&trace.bi[4], &self.layers[4], &d_s5)?;
        g.layers[4] = g5;
        let d_r3_skip = d_s5;

        let d_h4 = downsample_fold(d_in5)?;
        let (g4, d_in4) = bigru_backward(&trace.bi[3], &self.layers[3], &d_h4)?;
        g.layers[3] = g4;

        let mut d_r3 = upsample_unfold(d_in4)?;
        d_r3.add_assign(&d_r3_skip)?;
        let (g3, d_in3) = bigru_backward(&trace.bi[2], &self.layers[2], &d_r3)?;
        g.layers[2] = g3;

        let mut d_r2 = upsample_unfold(d_in3)?;
        d_r2.add_assign(&d_r2_skip)?;
        let (g2, d_in2) = bigru_backward(&trace.bi[1], &self.layers[1], &d_r2)?;
        g.layers[1] = g2;

        let d_h1 = upsample_unfold(d_in2)?;
        let (g1, _) = bigru_backward(&trace.bi[0], &self.layers[0], &d_h1)?;
        g.layers[0] = g1;
        Ok(g)
    }

    /// Mean log-cosh loss of `forward(input)` against `target` and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(&self, input: &Tensor<T>, target: &Tensor<T>) -> Result<(T, ModelParams<T>), TensorError> {
        let (out, trace) = self.forward_trace(input)?;
        let target = self.check_segment(target)?;
        let (loss, d_out) = logcosh_loss_grad(&out, &target)?;
        Ok((loss, self.backward(&trace, &d_out)?))
    }
}

impl<T: Scalar> TensorCollection<T> for ModelParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            for (dir, g) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                for (part, t) in GRU_PARTS.iter().zip([&g.wx, &g.wh, &g.b]) {
                    out.push((format!("l{}.{dir}.{part}", k + 1), t));
                }
            }
        }
        for (part, t) in GRU_PARTS.iter().zip([&self.output.wx, &self.output.wh, &self.output.b]) {
            out.push((format!("l7.{part}"), t));
        }
        out.push(("alpha5".into(), &self.alpha5.alpha));
        out.push(("alpha6".into(), &self.alpha6.alpha));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (k, layer) in self.layers.iter_mut().enumerate() {
            for (dir, g) in [("fwd", &mut layer.forward), ("bwd", &mut layer.backward)] {
                for (part, t) in GRU_PARTS.iter().zip([&mut g.wx, &mut g.wh, &mut g.b]) {
                    out.push((format!("l{}.{dir}.{part}", k + 1), t));
                }
            }
        }
        let o = &mut self.output;
        for (part, t) in GRU_PARTS.iter().zip([&mut o.wx, &mut o.wh, &mut o.b]) {
            out.push((format!("l7.{part}"), t));
        }
        out.push(("alpha5".into(), &mut self.alpha5.alpha));
        out.push(("alpha6".into(), &mut self.alpha6.alpha));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamLayoutError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("expected {expected} parameter tensors, found {found}")]
    Count { expected: usize, found: usize },
    #[error("missing parameter tensor {0}")]
    Missing(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// `(layer, input T×F, output T×F)`.
pub type LayerIo = (usize, (usize, usize), (usize, usize));

/// Activations recorded by [`ModelParams::forward_trace`].
#[derive(Debug, Clone)]
pub struct ModelTrace<T> {
    bi: Vec<BiGruTrace<T>>,
    out: GruTrace<T>,
    s5: Tensor<T>,
    s6: Tensor<T>,
    shapes: Vec<LayerIo>,
}

impl<T> ModelTrace<T> {
    /// Layer input and output shapes as observed during the pass.
    pub fn observed_shapes(&self) -> &[LayerIo] {
        &self.shapes
    }

    /// Inputs of the two PReLU activations (residual sums at layers 5 and 6).
    pub fn prelu_inputs(&self) -> [&Tensor<T>; 2] {
        [&self.s5, &self.s6]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_table() {
        let shapes = ModelConfig::default().layer_shapes();
        let expected = [
            ((1024, 1), 1, (1024, 2)),
            ((512, 4), 64, (512, 128)),
            ((256, 256), 128, (256, 256)),
            ((128, 512), 256, (128, 512)),
            ((256, 256), 128, (256, 256)),
            ((512, 128), 64, (512, 128)),
            ((1024, 64), 1, (1024, 1)),
        ];
        for (s, (input, n, output)) in shapes.iter().zip(expected) {
            assert_eq!((s.input, s.hidden, s.output), (input, n, output), "layer {}", s.layer);
        }
    }

    #[test]
    fn tiny_config_values() {
        let c = ModelConfig::tiny();
        assert_eq!(c.segment_len, 64);
        assert_eq!(c.widths, [2, 8, 16, 32, 16, 8, 1]);
    }

    #[test]
    fn invalid_configs_name_the_violation() {
        let err = ModelConfig::new(100, DEFAULT_WIDTHS).unwrap_err();
        assert!(err.to_string().contains("multiple of 8"));
        let err = ModelConfig::new(64, [2, 8, 16, 32, 16, 8, 2]).unwrap_err();
        assert!(err.to_string().contains("output width"));
        let err = ModelConfig::new(64, [2, 8, 16, 32, 18, 8, 1]).unwrap_err();
        assert!(err.to_string().contains("inner residual"));
        let err = ModelConfig::new(64, [3, 8, 16, 32, 16, 8, 1]).unwrap_err();
        assert!(err.to_string().contains("even"));
        assert!(ModelConfig::scaled(0.0).is_err());
    }

    #[test]
    fn output_layer_count() {
        // 3·(64 + 1 + 1)
        let shapes = ModelConfig::default().layer_shapes();
        let s = shapes[6];
        assert_eq!(3 * (s.hidden * s.input.1 + s.hidden * s.hidden + s.hidden), 198);
    }

    #[test]
    fn halving_reduces_count() {
        let half = ModelConfig::scaled(2.0).unwrap();
        assert_eq!(half.segment_len, 512);
        assert!(half.param_count() < ModelConfig::default().param_count());
    }

    #[test]
    fn built_tensor_count_matches_formula() {
        for c in [ModelConfig::tiny(), ModelConfig::scaled(4.0).unwrap()] {
            let p = ModelParams::<f32>::build(&c, 3).unwrap();
            assert_eq!(p.numel(), c.param_count());
        }
    }

    #[test]
    fn wrong_segment_length_is_rejected() {
        let p = ModelParams::<f32>::zeros(&ModelConfig::tiny()).unwrap();
        assert!(matches!(
            p.forward(&Tensor::zeros(&[63, 1])),
            Err(TensorError::Dimension { .. })
        ));
        assert!(p.forward(&Tensor::zeros(&[64])).is_ok());
    }

    #[test]
    fn parameter_set_round_trip() {
        let c = ModelConfig::tiny();
        let p = ModelParams::<f32>::build(&c, 9).unwrap();
        let set = p.to_parameter_set();
        assert_eq!(ModelParams::from_parameter_set(&c, &set).unwrap(), p);
        let other = ModelConfig::scaled(8.0).unwrap();
        assert!(matches!(
            ModelParams::<f32>::from_parameter_set(&other, &set),
            Err(ParamLayoutError::Shape { .. })
        ));
    }
}

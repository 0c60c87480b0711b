use thiserror::Error;

use crate::tensor::{ParameterSet, Scalar, Tensor, TensorCollection};

pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("gradient layout does not match parameters: {0}")]
    Layout(String),
}

/// Running mean of squared gradients, one accumulator per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState<T = f32> {
    pub rho: f64,
    pub epsilon: f64,
    accumulators: ParameterSet<T>,
}

impl<T: Scalar> RmspropState<T> {
    pub fn new<P: TensorCollection<T>>(params: &P, rho: f64, epsilon: f64) -> Self {
        let mut accumulators = ParameterSet::new();
        for (name, t) in params.tensors() {
            accumulators
                .insert(name, Tensor::zeros(t.shape()))
                .expect("parameter names are unique");
        }
        RmspropState {
            rho,
            epsilon,
            accumulators,
        }
    }

    /// Restores saved accumulators. They must be non-negative.
    pub fn with_accumulators(rho: f64, epsilon: f64, accumulators: ParameterSet<T>) -> Result<Self, OptimizerError> {
        for (name, t) in accumulators.iter() {
            if t.data().iter().any(|&v| v.is_nan() || v < T::zero()) {
                return Err(OptimizerError::Layout(format!(
                    "accumulator {name} has negative or non-finite entries"
                )));
            }
        }
        Ok(RmspropState {
            rho,
            epsilon,
            accumulators,
        })
    }

    pub fn accumulators(&self) -> &ParameterSet<T> {
        &self.accumulators
    }

    /// `s ← ρs + (1−ρ)g²; θ ← θ − lr·g/(√s + ε)`, elementwise. Nothing is
    /// modified if any gradient element is non-finite.
    pub fn step<P: TensorCollection<T>>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<(), OptimizerError> {
        let grads = grads.tensors();
        for (name, g) in &grads {
            if !g.all_finite() {
                return Err(OptimizerError::NonFiniteGradient { name: name.clone() });
            }
        }
        let mut params = params.tensors_mut();
        if params.len() != grads.len() || params.len() != self.accumulators.len() {
            return Err(OptimizerError::Layout(format!(
                "{} parameters, {} gradients, {} accumulators",
                params.len(),
                grads.len(),
                self.accumulators.len()
            )));
        }
        for (((pn, p), (gn, g)), (sn, s)) in params.iter_mut().zip(&grads).zip(self.accumulators.iter_mut()) {
            if pn != gn || pn != sn || p.shape() != g.shape() || p.shape() != s.shape() {
                return Err(OptimizerError::Layout(format!("{pn} / {gn} / {sn}")));
            }
        }
        let rho = T::from_f64(self.rho);
        let one_minus_rho = T::from_f64(1.0 - self.rho);
        let eps = T::from_f64(self.epsilon);
        let lr = T::from_f64(lr);
        for (((_, p), (_, g)), (_, s)) in params.iter_mut().zip(&grads).zip(self.accumulators.iter_mut()) {
            for ((theta, &gi), si) in p.data_mut().iter_mut().zip(g.data()).zip(s.data_mut()) {
                *si = rho * *si + one_minus_rho * gi * gi;
                *theta = *theta - lr * gi / (si.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form of [`RmspropState::step`]: returns updated copies.
pub fn rmsprop_step<T: Scalar>(
    params: &ParameterSet<T>,
    grads: &ParameterSet<T>,
    state: &RmspropState<T>,
    lr: f64,
) -> Result<(ParameterSet<T>, RmspropState<T>), OptimizerError> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads, lr)?;
    Ok((p, s))
}

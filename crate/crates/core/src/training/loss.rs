use crate::tensor::{Scalar, Tensor, TensorError};

/// `log(cosh(e))` via `|e| + log1p(exp(-2|e|)) - ln 2`, which never overflows.
#[inline]
pub fn logcosh<T: Scalar>(e: T) -> T {
    let a = e.abs();
    a + (T::from_f64(-2.0) * a).exp().ln_1p() - T::from_f64(std::f64::consts::LN_2)
}

/// Mean log-cosh error over all elements.
pub fn logcosh_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T, TensorError> {
    if pred.shape() != target.shape() {
        return Err(TensorError::dim("logcosh_loss", pred.shape(), target.shape()));
    }
    let total: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| logcosh(p - t))
        .sum();
    Ok(total / T::from_f64(pred.numel() as f64))
}

/// Loss value and its gradient with respect to `pred`.
pub fn logcosh_loss_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>), TensorError> {
    let loss = logcosh_loss(pred, target)?;
    let inv_n = T::one() / T::from_f64(pred.numel() as f64);
    let grad = pred.zip_map(target, "logcosh_loss", |p, t| (p - t).tanh() * inv_n)?;
    Ok((loss, grad))
}

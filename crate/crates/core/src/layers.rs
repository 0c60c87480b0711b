//! GRU cells and sequence layers, bidirectional composition, PReLU, residual
//! merge, and the fold/unfold reshaping between hourglass levels.
//!
//! Sequences are `T×F` tensors (time-major rows). Gate blocks inside every
//! kernel are stacked in the order update `z`, reset `r`, candidate `h̃`:
//!
//! ```text
//! z  = σ(Wx_z x + Wh_z h + b_z)
//! r  = σ(Wx_r x + Wh_r h + b_r)
//! h̃  = tanh(Wx_h x + Wh_h (r ⊙ h) + b_h)
//! h' = z ⊙ h + (1 − z) ⊙ h̃
//! ```
//!
//! Every forward function that feeds training has a `*_trace` variant that
//! keeps the activations needed by the matching `*_backward`.

use crate::tensor::{axpy, dot, sigmoid, Scalar, Tensor, TensorError};

/// Weights of one GRU direction: `wx` is `3n×i`, `wh` is `3n×n`, `b` is `3n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T = f32> {
    pub wx: Tensor<T>,
    pub wh: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> GruParams<T> {
    pub fn new(wx: Tensor<T>, wh: Tensor<T>, b: Tensor<T>) -> Result<Self, TensorError> {
        let p = GruParams { wx, wh, b };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(hidden: usize, input: usize) -> Self {
        GruParams {
            wx: Tensor::zeros(&[3 * hidden, input]),
            wh: Tensor::zeros(&[3 * hidden, hidden]),
            b: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.shape()[1]
    }

    pub fn input(&self) -> usize {
        self.wx.shape()[1]
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let n = self.wh.shape().get(1).copied().unwrap_or(0);
        let ok = self.wh.shape() == [3 * n, n]
            && self.wx.shape().len() == 2
            && self.wx.shape()[0] == 3 * n
            && self.b.shape() == [3 * n];
        if !ok {
            return Err(TensorError::contract(
                "gru_params",
                format!(
                    "inconsistent shapes wx {:?}, wh {:?}, b {:?}",
                    self.wx.shape(),
                    self.wh.shape(),
                    self.b.shape()
                ),
            ));
        }
        if !(self.wx.all_finite() && self.wh.all_finite() && self.b.all_finite()) {
            return Err(TensorError::contract("gru_params", "non-finite weight"));
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.wx.numel() + self.wh.numel() + self.b.numel()
    }

    pub fn cast<U: Scalar>(&self) -> GruParams<U> {
        GruParams {
            wx: self.wx.cast(),
            wh: self.wh.cast(),
            b: self.b.cast(),
        }
    }

    fn add_assign(&mut self, o: &Self) {
        for (a, b) in [(&mut self.wx, &o.wx), (&mut self.wh, &o.wh), (&mut self.b, &o.b)] {
            a.add_assign(b).expect("gradient shapes follow parameter shapes");
        }
    }
}

/// Forward and backward directions of a bidirectional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGruParams<T = f32> {
    pub forward: GruParams<T>,
    pub backward: GruParams<T>,
}

impl<T: Scalar> BiGruParams<T> {
    pub fn new(forward: GruParams<T>, backward: GruParams<T>) -> Result<Self, TensorError> {
        if forward.hidden() != backward.hidden() || forward.input() != backward.input() {
            return Err(TensorError::dim(
                "bigru_params",
                forward.wx.shape(),
                backward.wx.shape(),
            ));
        }
        Ok(BiGruParams { forward, backward })
    }

    pub fn zeros(hidden: usize, input: usize) -> Self {
        BiGruParams {
            forward: GruParams::zeros(hidden, input),
            backward: GruParams::zeros(hidden, input),
        }
    }

    pub fn cast<U: Scalar>(&self) -> BiGruParams<U> {
        BiGruParams {
            forward: self.forward.cast(),
            backward: self.backward.cast(),
        }
    }
}

/// Per-feature negative-region slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct PreluSlope<T = f32> {
    pub alpha: Tensor<T>,
}

impl<T: Scalar> PreluSlope<T> {
    pub fn new(alpha: Tensor<T>) -> Self {
        PreluSlope { alpha }
    }

    pub fn constant(features: usize, value: T) -> Self {
        PreluSlope {
            alpha: Tensor::full(&[features], value),
        }
    }

    pub fn features(&self) -> usize {
        self.alpha.numel()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

fn check_seq<T: Scalar>(op: &'static str, seq: &Tensor<T>, features: usize) -> Result<(), TensorError> {
    if seq.shape().len() != 2 {
        return Err(TensorError::contract(
            op,
            format!("expected a T×F sequence, got {:?}", seq.shape()),
        ));
    }
    if seq.rows() == 0 {
        return Err(TensorError::contract(op, "empty sequence"));
    }
    if seq.cols() != features {
        return Err(TensorError::dim(op, seq.shape(), &[seq.rows(), features]));
    }
    Ok(())
}

/// One recurrence step from `h_prev` given input `x_t`.
pub fn gru_cell_step<T: Scalar>(
    x_t: &Tensor<T>,
    h_prev: &Tensor<T>,
    p: &GruParams<T>,
) -> Result<Tensor<T>, TensorError> {
    let (n, i) = (p.hidden(), p.input());
    if x_t.numel() != i {
        return Err(TensorError::dim("gru_cell_step", x_t.shape(), &[i]));
    }
    if h_prev.numel() != n {
        return Err(TensorError::dim("gru_cell_step", h_prev.shape(), &[n]));
    }
    let seq = Tensor::new(&[1, i], x_t.data().to_vec())?;
    let mut state = GruState::new(n);
    state.h.copy_from_slice(h_prev.data());
    let xp = input_projection(&seq, p);
    let h = state.step(xp.row(0), p);
    Tensor::new(&[n], h.h_new)
}

/// `X · Wxᵀ + b`, shape `T×3n`.
fn input_projection<T: Scalar>(seq: &Tensor<T>, p: &GruParams<T>) -> Tensor<T> {
    let g3 = p.wx.rows();
    let mut out = Tensor::zeros(&[seq.rows(), g3]);
    let b = p.b.data();
    for t in 0..seq.rows() {
        let x = seq.row(t);
        let row = out.row_mut(t);
        for (g, o) in row.iter_mut().enumerate() {
            *o = dot(p.wx.row(g), x) + b[g];
        }
    }
    out
}

struct GruState<T> {
    h: Vec<T>,
}

struct StepRecord<T> {
    z: Vec<T>,
    r: Vec<T>,
    hc: Vec<T>,
    h_new: Vec<T>,
}

impl<T: Scalar> GruState<T> {
    fn new(n: usize) -> Self {
        GruState { h: vec![T::zero(); n] }
    }

    fn step(&mut self, xp: &[T], p: &GruParams<T>) -> StepRecord<T> {
        let n = self.h.len();
        let hp = &self.h;
        let mut z = vec![T::zero(); n];
        let mut r = vec![T::zero(); n];
        for j in 0..n {
            z[j] = sigmoid(xp[j] + dot(p.wh.row(j), hp));
            r[j] = sigmoid(xp[n + j] + dot(p.wh.row(n + j), hp));
        }
        let rh: Vec<T> = r.iter().zip(hp).map(|(&a, &b)| a * b).collect();
        let mut hc = vec![T::zero(); n];
        let mut h_new = vec![T::zero(); n];
        for j in 0..n {
            hc[j] = (xp[2 * n + j] + dot(p.wh.row(2 * n + j), &rh)).tanh();
            h_new[j] = z[j] * hp[j] + (T::one() - z[j]) * hc[j];
        }
        self.h.copy_from_slice(&h_new);
        StepRecord { z, r, hc, h_new }
    }
}

/// Activations of a forward-time GRU pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct GruTrace<T> {
    input: Tensor<T>,
    h_prev: Tensor<T>,
    z: Tensor<T>,
    r: Tensor<T>,
    hc: Tensor<T>,
}

fn run_forward<T: Scalar>(seq: &Tensor<T>, p: &GruParams<T>, keep: bool) -> (Tensor<T>, Option<GruTrace<T>>) {
    let (steps, n) = (seq.rows(), p.hidden());
    let xp = input_projection(seq, p);
    let mut out = Tensor::zeros(&[steps, n]);
    let mut trace = keep.then(|| GruTrace {
        input: seq.clone(),
        h_prev: Tensor::zeros(&[steps, n]),
        z: Tensor::zeros(&[steps, n]),
        r: Tensor::zeros(&[steps, n]),
        hc: Tensor::zeros(&[steps, n]),
    });
    let mut state = GruState::new(n);
    for t in 0..steps {
        if let Some(tr) = trace.as_mut() {
            tr.h_prev.row_mut(t).copy_from_slice(&state.h);
        }
        let rec = state.step(xp.row(t), p);
        if let Some(tr) = trace.as_mut() {
            tr.z.row_mut(t).copy_from_slice(&rec.z);
            tr.r.row_mut(t).copy_from_slice(&rec.r);
            tr.hc.row_mut(t).copy_from_slice(&rec.hc);
        }
        out.row_mut(t).copy_from_slice(&rec.h_new);
    }
    (out, trace)
}

/// Hidden state at every time step, starting from a zero state. The
/// backward direction runs over reversed time and returns its states in
/// original time order.
pub fn gru_forward<T: Scalar>(
    seq: &Tensor<T>,
    p: &GruParams<T>,
    direction: Direction,
) -> Result<Tensor<T>, TensorError> {
    check_seq("gru_forward", seq, p.input())?;
    Ok(match direction {
        Direction::Forward => run_forward(seq, p, false).0,
        Direction::Backward => run_forward(&seq.reverse_rows(), p, false).0.reverse_rows(),
    })
}

pub fn gru_forward_trace<T: Scalar>(
    seq: &Tensor<T>,
    p: &GruParams<T>,
    direction: Direction,
) -> Result<(Tensor<T>, GruTrace<T>), TensorError> {
    check_seq("gru_forward", seq, p.input())?;
    Ok(match direction {
        Direction::Forward => {
            let (out, tr) = run_forward(seq, p, true);
            (out, tr.expect("trace requested"))
        }
        Direction::Backward => {
            let (out, tr) = run_forward(&seq.reverse_rows(), p, true);
            (out.reverse_rows(), tr.expect("trace requested"))
        }
    })
}

/// Backpropagation through time. `d_out` is the loss gradient with respect to
/// the layer output (original time order); returns parameter gradients and
/// the gradient with respect to the input sequence.
pub fn gru_backward<T: Scalar>(
    trace: &GruTrace<T>,
    p: &GruParams<T>,
    direction: Direction,
    d_out: &Tensor<T>,
) -> Result<(GruParams<T>, Tensor<T>), TensorError> {
    let n = p.hidden();
    let steps = trace.input.rows();
    if d_out.shape() != [steps, n] {
        return Err(TensorError::dim("gru_backward", d_out.shape(), &[steps, n]));
    }
    let d_out = match direction {
        Direction::Forward => d_out.clone(),
        Direction::Backward => d_out.reverse_rows(),
    };
    let mut grads = GruParams::zeros(n, p.input());
    let mut dxp = Tensor::zeros(&[steps, 3 * n]);
    let mut dh_next = vec![T::zero(); n];
    let mut dhp = vec![T::zero(); n];
    let mut drh = vec![T::zero(); n];
    let mut rh = vec![T::zero(); n];
    let one = T::one();

    for t in (0..steps).rev() {
        let hp = trace.h_prev.row(t);
        let z = trace.z.row(t);
        let r = trace.r.row(t);
        let hc = trace.hc.row(t);
        let dxp_row = dxp.row_mut(t);
        let (daz, rest) = dxp_row.split_at_mut(n);
        let (dar, dah) = rest.split_at_mut(n);

        for j in 0..n {
            let dh = d_out.row(t)[j] + dh_next[j];
            let dz = dh * (hp[j] - hc[j]);
            dhp[j] = dh * z[j];
            dah[j] = dh * (one - z[j]) * (one - hc[j] * hc[j]);
            daz[j] = dz * z[j] * (one - z[j]);
            rh[j] = r[j] * hp[j];
            drh[j] = T::zero();
        }
        for (j, &d) in dah.iter().enumerate() {
            axpy(d, &rh, grads.wh.row_mut(2 * n + j));
            axpy(d, p.wh.row(2 * n + j), &mut drh);
        }
        for j in 0..n {
            let dr = drh[j] * hp[j];
            dhp[j] = dhp[j] + drh[j] * r[j];
            dar[j] = dr * r[j] * (one - r[j]);
        }
        for j in 0..n {
            axpy(daz[j], hp, grads.wh.row_mut(j));
            axpy(dar[j], hp, grads.wh.row_mut(n + j));
            axpy(daz[j], p.wh.row(j), &mut dhp);
            axpy(dar[j], p.wh.row(n + j), &mut dhp);
        }
        dh_next.copy_from_slice(&dhp);
    }

    let mut d_in = Tensor::zeros(&[steps, p.input()]);
    for t in 0..steps {
        let x = trace.input.row(t);
        let dx = d_in.row_mut(t);
        for (g, &d) in dxp.row(t).iter().enumerate() {
            if d == T::zero() {
                continue;
            }
            axpy(d, x, grads.wx.row_mut(g));
            axpy(d, p.wx.row(g), dx);
            grads.b.data_mut()[g] = grads.b.data()[g] + d;
        }
    }
    let d_in = match direction {
        Direction::Forward => d_in,
        Direction::Backward => d_in.reverse_rows(),
    };
    Ok((grads, d_in))
}

/// Concatenation of forward and backward hidden states, width `2n`.
pub fn bigru_forward<T: Scalar>(seq: &Tensor<T>, p: &BiGruParams<T>) -> Result<Tensor<T>, TensorError> {
    let f = gru_forward(seq, &p.forward, Direction::Forward)?;
    let b = gru_forward(seq, &p.backward, Direction::Backward)?;
    f.concat_features(&b)
}

#[derive(Debug, Clone)]
pub struct BiGruTrace<T> {
    forward: GruTrace<T>,
    backward: GruTrace<T>,
}

pub fn bigru_forward_trace<T: Scalar>(
    seq: &Tensor<T>,
    p: &BiGruParams<T>,
) -> Result<(Tensor<T>, BiGruTrace<T>), TensorError> {
    let (f, ft) = gru_forward_trace(seq, &p.forward, Direction::Forward)?;
    let (b, bt) = gru_forward_trace(seq, &p.backward, Direction::Backward)?;
    Ok((
        f.concat_features(&b)?,
        BiGruTrace {
            forward: ft,
            backward: bt,
        },
    ))
}

pub fn bigru_backward<T: Scalar>(
    trace: &BiGruTrace<T>,
    p: &BiGruParams<T>,
    d_out: &Tensor<T>,
) -> Result<(BiGruParams<T>, Tensor<T>), TensorError> {
    let (df, db) = d_out.split_features(p.forward.hidden())?;
    let (gf, mut dx) = gru_backward(&trace.forward, &p.forward, Direction::Forward, &df)?;
    let (gb, dxb) = gru_backward(&trace.backward, &p.backward, Direction::Backward, &db)?;
    dx.add_assign(&dxb)?;
    Ok((
        BiGruParams {
            forward: gf,
            backward: gb,
        },
        dx,
    ))
}

/// `T×F → (T/2)×2F`: row `t` is rows `2t` and `2t+1` side by side. In
/// row-major storage this is a pure relabelling of the buffer.
pub fn downsample_fold<T: Scalar>(seq: Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (t, f) = (seq.rows(), seq.cols());
    if seq.shape().len() != 2 || t % 2 != 0 {
        return Err(TensorError::contract(
            "downsample_fold",
            format!("needs an even number of time steps, got {:?}", seq.shape()),
        ));
    }
    seq.reshape(&[t / 2, 2 * f])
}

/// `T×F → 2T×(F/2)`, the exact inverse of [`downsample_fold`].
pub fn upsample_unfold<T: Scalar>(seq: Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (t, f) = (seq.rows(), seq.cols());
    if seq.shape().len() != 2 || f % 2 != 0 {
        return Err(TensorError::contract(
            "upsample_unfold",
            format!("needs an even feature width, got {:?}", seq.shape()),
        ));
    }
    seq.reshape(&[2 * t, f / 2])
}

fn check_prelu<T: Scalar>(x: &Tensor<T>, alpha: &PreluSlope<T>) -> Result<(), TensorError> {
    if x.shape().len() != 2 || alpha.features() != x.cols() {
        return Err(TensorError::dim("prelu", x.shape(), alpha.alpha.shape()));
    }
    Ok(())
}

/// `x` where `x ≥ 0`, `alpha_f · x` otherwise.
pub fn prelu<T: Scalar>(x: &Tensor<T>, alpha: &PreluSlope<T>) -> Result<Tensor<T>, TensorError> {
    check_prelu(x, alpha)?;
    let f = x.cols();
    let a = alpha.alpha.data();
    let mut out = x.clone();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        if *v < T::zero() {
            *v = *v * a[k % f];
        }
    }
    Ok(out)
}

/// Gradients of [`prelu`] with respect to its input and its slopes.
pub fn prelu_backward<T: Scalar>(
    x: &Tensor<T>,
    alpha: &PreluSlope<T>,
    d_out: &Tensor<T>,
) -> Result<(Tensor<T>, PreluSlope<T>), TensorError> {
    check_prelu(x, alpha)?;
    if d_out.shape() != x.shape() {
        return Err(TensorError::dim("prelu_backward", d_out.shape(), x.shape()));
    }
    let f = x.cols();
    let a = alpha.alpha.data();
    let mut dx = d_out.clone();
    let mut da = vec![T::zero(); f];
    for (k, (d, &xi)) in dx.data_mut().iter_mut().zip(x.data()).enumerate() {
        if xi < T::zero() {
            da[k % f] = da[k % f] + *d * xi;
            *d = *d * a[k % f];
        }
    }
    Ok((dx, PreluSlope::new(Tensor::new(&[f], da)?)))
}

/// `prelu(lower + upper)`. A shape mismatch here means the hourglass was
/// built with incompatible widths.
pub fn residual_merge<T: Scalar>(
    lower: &Tensor<T>,
    upper: &Tensor<T>,
    alpha: &PreluSlope<T>,
) -> Result<Tensor<T>, TensorError> {
    if lower.shape() != upper.shape() {
        return Err(TensorError::dim("residual_merge", lower.shape(), upper.shape()));
    }
    prelu(&lower.add(upper)?, alpha)
}

/// Accumulates `o` into `acc`, used when summing per-example gradients.
pub(crate) fn accumulate_bigru<T: Scalar>(acc: &mut BiGruParams<T>, o: &BiGruParams<T>) {
    acc.forward.add_assign(&o.forward);
    acc.backward.add_assign(&o.backward);
}

pub(crate) fn accumulate_gru<T: Scalar>(acc: &mut GruParams<T>, o: &GruParams<T>) {
    acc.add_assign(o);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn rand_gru(n: usize, i: usize, rng: &mut ChaCha8Rng) -> GruParams<f64> {
        GruParams::new(
            rand_tensor(&[3 * n, i], rng),
            rand_tensor(&[3 * n, n], rng),
            rand_tensor(&[3 * n], rng),
        )
        .unwrap()
    }

    #[test]
    fn cell_with_zero_params_decays_half() {
        let p = GruParams::<f64>::zeros(3, 2);
        let x = Tensor::new(&[2], vec![0.4, -0.9]).unwrap();
        let h0 = Tensor::zeros(&[3]);
        assert_eq!(gru_cell_step(&x, &h0, &p).unwrap().data(), &[0.0; 3]);
        let v = Tensor::new(&[3], vec![0.8, -0.2, 1.0]).unwrap();
        assert_eq!(gru_cell_step(&x, &v, &p).unwrap().data(), &[0.4, -0.1, 0.5]);
    }

    #[test]
    fn cell_closed_form_candidate() {
        let p = GruParams::new(
            Tensor::new(&[3, 1], vec![0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[3, 1]),
            Tensor::zeros(&[3]),
        )
        .unwrap();
        let h = gru_cell_step(&Tensor::scalar(1.0f64), &Tensor::scalar(0.0), &p).unwrap();
        let expected = 0.5 * 1f64.tanh();
        assert!((h.data()[0] - expected).abs() < 1e-15);
        assert!((h.data()[0] - 0.380797).abs() < 1e-6);
    }

    #[test]
    fn cell_rejects_wrong_shapes() {
        let p = GruParams::<f32>::zeros(2, 3);
        assert!(gru_cell_step(&Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &p).is_err());
        assert!(gru_cell_step(&Tensor::zeros(&[3]), &Tensor::zeros(&[3]), &p).is_err());
    }

    #[test]
    fn backward_direction_is_reversed_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = rand_gru(3, 2, &mut rng);
        let seq = rand_tensor(&[7, 2], &mut rng);
        let b = gru_forward(&seq, &p, Direction::Backward).unwrap();
        let f = gru_forward(&seq.reverse_rows(), &p, Direction::Forward)
            .unwrap()
            .reverse_rows();
        assert_eq!(b, f);
    }

    #[test]
    fn single_step_has_no_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = rand_gru(2, 3, &mut rng);
        let seq = rand_tensor(&[1, 3], &mut rng);
        assert_eq!(
            gru_forward(&seq, &p, Direction::Forward).unwrap(),
            gru_forward(&seq, &p, Direction::Backward).unwrap()
        );
    }

    #[test]
    fn zero_params_give_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = rand_tensor(&[9, 4], &mut rng);
        let out = bigru_forward(&seq, &BiGruParams::zeros(3, 4)).unwrap();
        assert_eq!(out.shape(), &[9, 6]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_rejects_wrong_input_width() {
        let p = GruParams::<f32>::zeros(2, 3);
        assert!(matches!(
            gru_forward(&Tensor::zeros(&[4, 2]), &p, Direction::Forward),
            Err(TensorError::Dimension { .. })
        ));
    }

    #[test]
    fn palindrome_with_shared_weights_mirrors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = rand_gru(2, 1, &mut rng);
        let p = BiGruParams::new(g.clone(), g).unwrap();
        let half = [0.3, -0.8, 0.5, 0.1];
        let vals: Vec<f64> = half.iter().chain(half.iter().rev()).copied().collect();
        let seq = Tensor::column(&vals);
        let out = bigru_forward(&seq, &p).unwrap();
        let (fwd, bwd) = out.split_features(2).unwrap();
        assert_eq!(fwd, bwd.reverse_rows());
        let swapped = bwd.concat_features(&fwd).unwrap();
        assert_eq!(out.reverse_rows(), swapped);
    }

    #[test]
    fn fold_examples() {
        let x = Tensor::<f64>::column(&[1.0, 2.0, 3.0, 4.0]);
        let folded = downsample_fold(x.clone()).unwrap();
        assert_eq!(folded.shape(), &[2, 2]);
        assert_eq!(folded.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(upsample_unfold(folded).unwrap(), x);
        assert_eq!(
            downsample_fold(Tensor::<f32>::zeros(&[1024, 2])).unwrap().shape(),
            &[512, 4]
        );
        assert_eq!(
            upsample_unfold(Tensor::<f32>::zeros(&[128, 512])).unwrap().shape(),
            &[256, 256]
        );
        assert!(downsample_fold(Tensor::<f32>::zeros(&[3, 2])).is_err());
        assert!(upsample_unfold(Tensor::<f32>::zeros(&[4, 3])).is_err());
    }

    #[test]
    fn prelu_examples() {
        let a = PreluSlope::constant(1, 0.25f64);
        let x = Tensor::new(&[3, 1], vec![-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(prelu(&x, &a).unwrap().data(), &[-0.5, 0.0, 3.0]);
        let (_, da) = prelu_backward(&x, &a, &Tensor::full(&[3, 1], 1.0)).unwrap();
        assert_eq!(da.alpha.data(), &[-2.0]);
        let single = Tensor::new(&[1, 1], vec![3.0]).unwrap();
        let (_, da) = prelu_backward(&single, &a, &Tensor::full(&[1, 1], 1.0)).unwrap();
        assert_eq!(da.alpha.data(), &[0.0]);
        assert!(prelu(&x, &PreluSlope::constant(2, 0.25)).is_err());
    }

    #[test]
    fn residual_merge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = PreluSlope::new(rand_tensor(&[3], &mut rng));
        let upper = rand_tensor(&[4, 3], &mut rng);
        let zero = Tensor::zeros(&[4, 3]);
        assert_eq!(residual_merge(&zero, &upper, &a).unwrap(), prelu(&upper, &a).unwrap());
        let neg = upper.scale(-1.0);
        assert!(residual_merge(&neg, &upper, &a)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let lower = Tensor::<f32>::zeros(&[256, 256]);
        let up = Tensor::<f32>::zeros(&[256, 256]);
        let al = PreluSlope::constant(256, 0.25f32);
        assert_eq!(residual_merge(&lower, &up, &al).unwrap().shape(), &[256, 256]);
        assert!(residual_merge(&Tensor::zeros(&[4, 2]), &upper, &a).is_err());
    }

    /// Scalar loss `Σ w ⊙ out` used to probe layer gradients.
    fn weighted(out: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
        out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    fn slot(p: &mut BiGruParams<f64>, dir: usize, which: usize) -> &mut Tensor<f64> {
        let gp = if dir == 0 { &mut p.forward } else { &mut p.backward };
        match which {
            0 => &mut gp.wx,
            1 => &mut gp.wh,
            _ => &mut gp.b,
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
    }

    #[test]
    fn bigru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(steps, n, i) in &[(1, 1, 1), (5, 3, 2), (8, 4, 3)] {
            let p = BiGruParams::new(rand_gru(n, i, &mut rng), rand_gru(n, i, &mut rng)).unwrap();
            let seq = rand_tensor(&[steps, i], &mut rng);
            let w = rand_tensor(&[steps, 2 * n], &mut rng);
            let (_, tr) = bigru_forward_trace(&seq, &p).unwrap();
            let (g, dx) = bigru_backward(&tr, &p, &w).unwrap();
            let h = 1e-5;
            let f = |p: &BiGruParams<f64>, s: &Tensor<f64>| weighted(&bigru_forward(s, p).unwrap(), &w);
            // parameter gradients
            for dir in 0..2 {
                for which in 0..3 {
                    let numel = slot(&mut p.clone(), dir, which).numel();
                    for k in 0..numel {
                        let mut plus = p.clone();
                        slot(&mut plus, dir, which).data_mut()[k] += h;
                        let mut minus = p.clone();
                        slot(&mut minus, dir, which).data_mut()[k] -= h;
                        let num = (f(&plus, &seq) - f(&minus, &seq)) / (2.0 * h);
                        let ana = slot(&mut g.clone(), dir, which).data()[k];
                        assert!(rel_err(ana, num) < 1e-5, "param grad {ana} vs {num}");
                    }
                }
            }
            // input gradient
            for k in 0..seq.numel() {
                let mut plus = seq.clone();
                plus.data_mut()[k] += h;
                let mut minus = seq.clone();
                minus.data_mut()[k] -= h;
                let num = (f(&p, &plus) - f(&p, &minus)) / (2.0 * h);
                assert!(rel_err(dx.data()[k], num) < 1e-5);
            }
        }
    }

    #[test]
    fn prelu_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_tensor(&[6, 3], &mut rng);
        let a = PreluSlope::new(rand_tensor(&[3], &mut rng));
        let w = rand_tensor(&[6, 3], &mut rng);
        let (dx, da) = prelu_backward(&x, &a, &w).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut ap = a.clone();
            ap.alpha.data_mut()[k] += h;
            let mut am = a.clone();
            am.alpha.data_mut()[k] -= h;
            let num = (weighted(&prelu(&x, &ap).unwrap(), &w) - weighted(&prelu(&x, &am).unwrap(), &w)) / (2.0 * h);
            assert!(rel_err(da.alpha.data()[k], num) < 1e-5);
        }
        for k in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[k] += h;
            let mut xm = x.clone();
            xm.data_mut()[k] -= h;
            let num = (weighted(&prelu(&xp, &a).unwrap(), &w) - weighted(&prelu(&xm, &a).unwrap(), &w)) / (2.0 * h);
            assert!(rel_err(dx.data()[k], num) < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn fold_unfold_are_inverse(half_t in 1usize..16, f in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&[2 * half_t, f], &mut rng);
            prop_assert_eq!(upsample_unfold(downsample_fold(x.clone()).unwrap()).unwrap(), x.clone());
            let y = rand_tensor(&[half_t, 2 * f], &mut rng);
            prop_assert_eq!(downsample_fold(upsample_unfold(y.clone()).unwrap()).unwrap(), y);
        }

        #[test]
        fn forward_is_causal(steps in 2usize..9, n in 1usize..5, cut in 0usize..8, seed in any::<u64>()) {
            let cut = cut % (steps - 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rand_gru(n, 2, &mut rng);
            let seq = rand_tensor(&[steps, 2], &mut rng);
            let mut later = seq.clone();
            later.row_mut(cut + 1)[0] += 0.5;
            let a = gru_forward(&seq, &p, Direction::Forward).unwrap();
            let b = gru_forward(&later, &p, Direction::Forward).unwrap();
            for t in 0..=cut {
                prop_assert_eq!(a.row(t), b.row(t));
            }
            let mut earlier = seq.clone();
            earlier.row_mut(cut)[1] -= 0.5;
            let a = gru_forward(&seq, &p, Direction::Backward).unwrap();
            let b = gru_forward(&earlier, &p, Direction::Backward).unwrap();
            for t in cut + 1..steps {
                prop_assert_eq!(a.row(t), b.row(t));
            }
        }

        #[test]
        fn prelu_unit_slope_is_identity(v in proptest::collection::vec(-3.0f64..3.0, 1..20)) {
            let x = Tensor::new(&[v.len(), 1], v).unwrap();
            prop_assert_eq!(prelu(&x, &PreluSlope::constant(1, 1.0)).unwrap(), x);
        }
    }
}

//! Tape-based reverse-mode differentiation over [`Tensor`] operations.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of that scalar with respect to every recorded node. The model's
//! training path uses hand-derived BPTT instead; this tape is the general
//! facility and serves as a second, independent route in tests.

use std::cell::RefCell;

use crate::tensor::{sigmoid, ParameterSet, Scalar, Tensor, TensorError};
use crate::training::loss::logcosh;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Scale(usize, T),
    AddScalar(usize),
    Concat(usize, usize),
    Cols(usize, usize),
    Row(usize, usize),
    StackRows(Vec<usize>),
    Reshape(usize),
    Transpose(usize),
    AddRow(usize, usize),
    Prelu(usize, usize),
    LogCosh(usize),
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Operation tape.
#[derive(Debug, Default)]
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacks `1×F` (or `F`) rows into a `rows.len()×F` tensor.
    pub fn stack_rows<'g>(&'g self, rows: &[Var<'g, T>]) -> Result<Var<'g, T>, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::contract("stack_rows", "no rows given"));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let width = nodes[rows[0].id].value.numel();
            let mut data = Vec::with_capacity(width * rows.len());
            for r in rows {
                let v = &nodes[r.id].value;
                if v.numel() != width {
                    return Err(TensorError::dim(
                        "stack_rows",
                        nodes[rows[0].id].value.shape(),
                        v.shape(),
                    ));
                }
                data.extend_from_slice(v.data());
            }
            Tensor::new(&[rows.len(), width], data)?
        };
        Ok(self.push(value, Op::StackRows(rows.iter().map(|r| r.id).collect())))
    }

    /// Gradient of the scalar `loss` with respect to every node, indexed by
    /// node id. Nodes that do not influence `loss` get zeros.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Vec<Tensor<T>>, TensorError> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", nodes[loss.id].value.shape()),
            ));
        }
        let mut grads: Vec<Tensor<T>> = nodes.iter().map(|n| Tensor::zeros(n.value.shape())).collect();
        grads[loss.id].data_mut()[0] = T::one();

        for id in (0..=loss.id).rev() {
            let g = grads[id].clone();
            if g.data().iter().all(|&x| x == T::zero()) {
                continue;
            }
            let node = &nodes[id];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads[*a], g.data());
                    acc(&mut grads[*b], g.data());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[*a], g.data());
                    let neg: Vec<T> = g.data().iter().map(|&x| -x).collect();
                    acc(&mut grads[*b], &neg);
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let ga: Vec<T> = g.data().iter().zip(bv).map(|(&g, &b)| g * b).collect();
                    let gb: Vec<T> = g.data().iter().zip(av).map(|(&g, &a)| g * a).collect();
                    acc(&mut grads[*a], &ga);
                    acc(&mut grads[*b], &gb);
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let ga = g.matmul(&bv.transpose()?)?;
                    let gb = av.transpose()?.matmul(&g)?;
                    acc(&mut grads[*a], ga.data());
                    acc(&mut grads[*b], gb.data());
                }
                Op::Sigmoid(a) => {
                    let d: Vec<T> = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &s)| g * s * (T::one() - s))
                        .collect();
                    acc(&mut grads[*a], &d);
                }
                Op::Tanh(a) => {
                    let d: Vec<T> = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &t)| g * (T::one() - t * t))
                        .collect();
                    acc(&mut grads[*a], &d);
                }
                Op::Scale(a, c) => {
                    let d: Vec<T> = g.data().iter().map(|&g| g * *c).collect();
                    acc(&mut grads[*a], &d);
                }
                Op::AddScalar(a) => acc(&mut grads[*a], g.data()),
                Op::Concat(a, b) => {
                    let fa = nodes[*a].value.cols();
                    let (ga, gb) = g.split_features(fa)?;
                    acc(&mut grads[*a], ga.data());
                    acc(&mut grads[*b], gb.data());
                }
                Op::Cols(src, start) => {
                    let w = y.cols();
                    let src_cols = nodes[*src].value.cols();
                    let dst = grads[*src].data_mut();
                    for t in 0..y.rows() {
                        for j in 0..w {
                            let k = t * src_cols + start + j;
                            dst[k] = dst[k] + g.data()[t * w + j];
                        }
                    }
                }
                Op::Row(src, t) => {
                    let row = grads[*src].row_mut(*t);
                    for (r, &x) in row.iter_mut().zip(g.data()) {
                        *r = *r + x;
                    }
                }
                Op::StackRows(ids) => {
                    for (i, src) in ids.iter().enumerate() {
                        acc(&mut grads[*src], g.row(i));
                    }
                }
                Op::Reshape(a) => acc(&mut grads[*a], g.data()),
                Op::Transpose(a) => {
                    let gt = g.transpose()?;
                    acc(&mut grads[*a], gt.data());
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads[*a], g.data());
                    let f = g.cols();
                    let mut gb = vec![T::zero(); f];
                    for t in 0..g.rows() {
                        for (s, &x) in gb.iter_mut().zip(g.row(t)) {
                            *s = *s + x;
                        }
                    }
                    acc(&mut grads[*b], &gb);
                }
                Op::Prelu(x, alpha) => {
                    let xv = &nodes[*x].value;
                    let av = nodes[*alpha].value.data();
                    let f = xv.cols();
                    let mut gx = vec![T::zero(); xv.numel()];
                    let mut ga = vec![T::zero(); f];
                    for (k, (&xi, &gi)) in xv.data().iter().zip(g.data()).enumerate() {
                        let j = k % f;
                        if xi >= T::zero() {
                            gx[k] = gi;
                        } else {
                            gx[k] = gi * av[j];
                            ga[j] = ga[j] + gi * xi;
                        }
                    }
                    acc(&mut grads[*x], &gx);
                    acc(&mut grads[*alpha], &ga);
                }
                Op::LogCosh(a) => {
                    let d: Vec<T> = g
                        .data()
                        .iter()
                        .zip(nodes[*a].value.data())
                        .map(|(&g, &e)| g * e.tanh())
                        .collect();
                    acc(&mut grads[*a], &d);
                }
                Op::Sum(a) => {
                    let n = nodes[*a].value.numel();
                    acc(&mut grads[*a], &vec![g.data()[0]; n]);
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.numel();
                    let v = g.data()[0] / T::from_f64(n as f64);
                    acc(&mut grads[*a], &vec![v; n]);
                }
            }
        }
        Ok(grads)
    }
}

fn acc<T: Scalar>(dst: &mut Tensor<T>, src: &[T]) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src) {
        *d = *d + s;
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<T> {
        self.graph.with_value(self.id, Tensor::clone)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.with_value(self.id, |v| v.shape().to_vec())
    }

    fn unary(
        &self,
        op: Op<T>,
        f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>, TensorError>,
    ) -> Result<Var<'g, T>, TensorError> {
        let v = self.graph.with_value(self.id, f)?;
        Ok(self.graph.push(v, op))
    }

    fn binary(
        &self,
        other: &Var<'g, T>,
        op: Op<T>,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>, TensorError>,
    ) -> Result<Var<'g, T>, TensorError> {
        let v = {
            let nodes = self.graph.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.graph.push(v, op))
    }

    pub fn add(&self, o: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.binary(o, Op::Add(self.id, o.id), |a, b| a.add(b))
    }

    pub fn sub(&self, o: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.binary(o, Op::Sub(self.id, o.id), |a, b| a.sub(b))
    }

    pub fn mul(&self, o: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.binary(o, Op::Mul(self.id, o.id), |a, b| a.mul(b))
    }

    pub fn matmul(&self, o: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.binary(o, Op::MatMul(self.id, o.id), |a, b| a.matmul(b))
    }

    pub fn sigmoid(&self) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::Sigmoid(self.id), |a| Ok(a.map(sigmoid)))
    }

    pub fn tanh(&self) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::Tanh(self.id), |a| Ok(a.tanh()))
    }

    pub fn scale(&self, c: T) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::Scale(self.id, c), |a| Ok(a.scale(c)))
    }

    pub fn add_scalar(&self, c: T) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::AddScalar(self.id), |a| Ok(a.map(|x| x + c)))
    }

    /// `1 - x`
    pub fn one_minus(&self) -> Result<Var<'g, T>, TensorError> {
        self.scale(-T::one())?.add_scalar(T::one())
    }

    pub fn concat_features(&self, o: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.binary(o, Op::Concat(self.id, o.id), |a, b| a.concat_features(b))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn cols(&self, start: usize, end: usize) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::Cols(self.id, start), |a| {
            if a.shape().len() != 2 || start >= end || end > a.cols() {
                return Err(TensorError::contract(
                    "cols",
                    format!("range {start}..{end} invalid for {:?}", a.shape()),
                ));
            }
            let w = end - start;
            let mut data = Vec::with_capacity(a.rows() * w);
            for t in 0..a.rows() {
                data.extend_from_slice(&a.row(t)[start..end]);
            }
            Tensor::new(&[a.rows(), w], data)
        })
    }

    /// Row `t` as a `1×F` tensor.
    pub fn row(&self, t: usize) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::Row(self.id, t), |a| {
            if t >= a.rows() {
                return Err(TensorError::contract(
                    "row",
                    format!("row {t} out of range for {:?}", a.shape()),
                ));
            }
            Tensor::new(&[1, a.cols()], a.row(t).to_vec())
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::Reshape(self.id), |a| a.clone().reshape(shape))
    }

    pub fn transpose(&self) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::Transpose(self.id), |a| a.transpose())
    }

    /// Adds a length-`F` vector to every row of a `T×F` tensor.
    pub fn add_row(&self, bias: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.binary(bias, Op::AddRow(self.id, bias.id), |a, b| {
            if a.shape().len() != 2 || b.numel() != a.cols() {
                return Err(TensorError::dim("add_row", a.shape(), b.shape()));
            }
            let f = a.cols();
            let mut out = a.clone();
            for (k, v) in out.data_mut().iter_mut().enumerate() {
                *v = *v + b.data()[k % f];
            }
            Ok(out)
        })
    }

    /// Per-feature parametric rectifier.
    pub fn prelu(&self, alpha: &Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.binary(alpha, Op::Prelu(self.id, alpha.id), |x, a| {
            if x.shape().len() != 2 || a.numel() != x.cols() {
                return Err(TensorError::dim("prelu", x.shape(), a.shape()));
            }
            let f = x.cols();
            let mut out = x.clone();
            for (k, v) in out.data_mut().iter_mut().enumerate() {
                if *v < T::zero() {
                    *v = *v * a.data()[k % f];
                }
            }
            Ok(out)
        })
    }

    pub fn logcosh(&self) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::LogCosh(self.id), |a| Ok(a.map(logcosh)))
    }

    pub fn sum(&self) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::Sum(self.id), |a| Ok(Tensor::scalar(a.sum())))
    }

    pub fn mean(&self) -> Result<Var<'g, T>, TensorError> {
        self.unary(Op::Mean(self.id), |a| {
            Ok(Tensor::scalar(a.sum() / T::from_f64(a.numel() as f64)))
        })
    }
}

/// Gradient of a scalar-valued function of `params` with respect to every
/// parameter element. `loss` receives the graph and one leaf per parameter,
/// in the set's iteration order.
pub fn gradients<T, F>(params: &ParameterSet<T>, loss: F) -> Result<ParameterSet<T>, TensorError>
where
    T: Scalar,
    F: for<'g> FnOnce(&'g Graph<T>, &[Var<'g, T>]) -> Result<Var<'g, T>, TensorError>,
{
    let graph = Graph::new();
    let leaves: Vec<Var<'_, T>> = params.iter().map(|(_, t)| graph.leaf(t.clone())).collect();
    let out = loss(&graph, &leaves)?;
    let grads = graph.backward(out)?;
    let mut set = ParameterSet::new();
    for ((name, _), leaf) in params.iter().zip(&leaves) {
        set.insert(name, grads[leaf.id].clone())?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_param(name: &str, v: Vec<f64>) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        let n = v.len();
        p.insert(name, Tensor::new(&[n], v).unwrap()).unwrap();
        p
    }

    #[test]
    fn sum_of_squares() {
        let p = one_param("p", vec![1.0, 2.0]);
        let g = gradients(&p, |_, v| v[0].mul(&v[0])?.sum()).unwrap();
        assert_eq!(g.get("p").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = one_param("p", vec![0.3, -0.7, 1.1]);
        let g = gradients(&p, |graph, _| graph.leaf(Tensor::scalar(4.2)).sum()).unwrap();
        assert_eq!(g.get("p").unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let p = one_param("p", vec![1.0, 2.0]);
        let err = gradients(&p, |_, v| v[0].tanh()).unwrap_err();
        assert!(matches!(err, TensorError::Contract { .. }));
    }

    /// Central differences over every element of every parameter.
    fn finite_difference(
        params: &ParameterSet<f64>,
        f: &dyn Fn(&ParameterSet<f64>) -> f64,
        step: f64,
    ) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for (pi, (_, t)) in params.iter().enumerate() {
            let mut g = vec![0.0; t.numel()];
            for (k, gk) in g.iter_mut().enumerate() {
                let mut plus = params.clone();
                plus.iter_mut().nth(pi).unwrap().1.data_mut()[k] += step;
                let mut minus = params.clone();
                minus.iter_mut().nth(pi).unwrap().1.data_mut()[k] -= step;
                *gk = (f(&plus) - f(&minus)) / (2.0 * step);
            }
            out.push(g);
        }
        out
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let mut p = ParameterSet::new();
            p.insert("a", random(&[3, 4], &mut rng)).unwrap();
            p.insert("b", random(&[4, 2], &mut rng)).unwrap();
            p.insert("c", random(&[3, 2], &mut rng)).unwrap();
            p.insert("bias", random(&[6], &mut rng)).unwrap();
            p.insert("alpha", random(&[6], &mut rng)).unwrap();
            let build = |g: &Graph<f64>, v: &[Var<'_, f64>]| -> Result<Tensor<f64>, TensorError> {
                let ab = v[0].matmul(&v[1])?;
                let s = ab.sigmoid()?.mul(&v[2])?;
                let t = ab.tanh()?.sub(&s)?.one_minus()?;
                let cat = t.concat_features(&s)?.concat_features(&v[2].scale(0.5)?)?;
                let biased = cat.add_row(&v[3])?;
                let act = biased.prelu(&v[4])?;
                let rows: Vec<_> = (0..3).rev().map(|r| act.row(r).unwrap()).collect();
                let stacked = g.stack_rows(&rows)?;
                let folded = stacked.reshape(&[6, 3])?.transpose()?;
                let picked = folded.cols(1, 5)?.add(&folded.cols(2, 6)?)?;
                Ok(picked.logcosh()?.mean()?.add(&picked.sum()?.scale(0.01)?)?.value())
            };
            let analytic = gradients(&p, |g, v| {
                let ab = v[0].matmul(&v[1])?;
                let s = ab.sigmoid()?.mul(&v[2])?;
                let t = ab.tanh()?.sub(&s)?.one_minus()?;
                let cat = t.concat_features(&s)?.concat_features(&v[2].scale(0.5)?)?;
                let biased = cat.add_row(&v[3])?;
                let act = biased.prelu(&v[4])?;
                let rows: Vec<_> = (0..3).rev().map(|r| act.row(r).unwrap()).collect();
                let stacked = g.stack_rows(&rows)?;
                let folded = stacked.reshape(&[6, 3])?.transpose()?;
                let picked = folded.cols(1, 5)?.add(&folded.cols(2, 6)?)?;
                picked.logcosh()?.mean()?.add(&picked.sum()?.scale(0.01)?)
            })
            .unwrap();
            let eval = |ps: &ParameterSet<f64>| {
                let g = Graph::new();
                let leaves: Vec<_> = ps.iter().map(|(_, t)| g.leaf(t.clone())).collect();
                build(&g, &leaves).unwrap().data()[0]
            };
            let numeric = finite_difference(&p, &eval, 1e-5);
            for ((_, a), n) in analytic.iter().zip(&numeric) {
                for (&x, &y) in a.data().iter().zip(n) {
                    let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-6);
                    assert!(rel < 1e-5, "analytic {x} vs numeric {y}");
                }
            }
        }
    }
}

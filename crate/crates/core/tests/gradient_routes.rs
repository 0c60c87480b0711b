//! The hand-written backward pass against a tape-recorded graph of the same
//! network, and both against the forward pass itself.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhrnet_core::autodiff::{gradients, Graph, Var};
use rhrnet_core::training::logcosh_loss;
use rhrnet_core::{ModelConfig, ModelParams, ParameterSet, Tensor, TensorCollection, TensorError};

type R<'g> = Result<Var<'g, f64>, TensorError>;

/// GRU over `seq` (`T×i`) built from primitive tape ops.
fn tape_gru<'g>(
    g: &'g Graph<f64>,
    seq: &Var<'g, f64>,
    wx: &Var<'g, f64>,
    wh: &Var<'g, f64>,
    b: &Var<'g, f64>,
    reverse: bool,
) -> R<'g> {
    let n = wh.shape()[1];
    let steps = seq.shape()[0];
    let xp = seq.matmul(&wx.transpose()?)?.add_row(b)?;
    let wht = wh.transpose()?;
    let (whz, whr, whh) = (wht.cols(0, n)?, wht.cols(n, 2 * n)?, wht.cols(2 * n, 3 * n)?);
    let mut h = g.leaf(Tensor::zeros(&[1, n]));
    let mut outs: Vec<Option<Var<'g, f64>>> = vec![None; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let x = xp.row(t)?;
        let z = x.cols(0, n)?.add(&h.matmul(&whz)?)?.sigmoid()?;
        let r = x.cols(n, 2 * n)?.add(&h.matmul(&whr)?)?.sigmoid()?;
        let hc = x.cols(2 * n, 3 * n)?.add(&r.mul(&h)?.matmul(&whh)?)?.tanh()?;
        h = z.mul(&h)?.add(&z.one_minus()?.mul(&hc)?)?;
        outs[t] = Some(h);
    }
    let rows: Vec<Var<'g, f64>> = outs.into_iter().map(|v| v.expect("every step visited")).collect();
    g.stack_rows(&rows)
}

fn fold<'g>(v: &Var<'g, f64>) -> R<'g> {
    let s = v.shape();
    v.reshape(&[s[0] / 2, s[1] * 2])
}

fn unfold<'g>(v: &Var<'g, f64>) -> R<'g> {
    let s = v.shape();
    v.reshape(&[s[0] * 2, s[1] / 2])
}

fn tape_loss<'g>(g: &'g Graph<f64>, p: &HashMap<String, Var<'g, f64>>, x: &Tensor<f64>, y: &Tensor<f64>) -> R<'g> {
    let bi = |k: usize, input: &Var<'g, f64>| -> R<'g> {
        let get = |d: &str, part: &str| p[&format!("l{k}.{d}.{part}")];
        let f = tape_gru(g, input, &get("fwd", "wx"), &get("fwd", "wh"), &get("fwd", "b"), false)?;
        let b = tape_gru(g, input, &get("bwd", "wx"), &get("bwd", "wh"), &get("bwd", "b"), true)?;
        f.concat_features(&b)
    };
    let input = g.leaf(x.clone());
    let h1 = bi(1, &input)?;
    let r2 = bi(2, &fold(&h1)?)?;
    let r3 = bi(3, &fold(&r2)?)?;
    let h4 = bi(4, &fold(&r3)?)?;
    let h5 = bi(5, &unfold(&h4)?)?;
    let m5 = r3.add(&h5)?.prelu(&p["alpha5"])?;
    let h6 = bi(6, &unfold(&m5)?)?;
    let m6 = r2.add(&h6)?.prelu(&p["alpha6"])?;
    let out = tape_gru(g, &unfold(&m6)?, &p["l7.wx"], &p["l7.wh"], &p["l7.b"], false)?;
    out.sub(&g.leaf(y.clone()))?.logcosh()?.mean()
}

fn random_pair(len: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || Tensor::column(&(0..len).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
    (draw(), draw())
}

fn perturbed_alphas(p: &mut ModelParams<f64>, seed: u64) {
    // Slopes away from their shared initial value exercise the slope gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in p.tensors_mut() {
        if name.starts_with("alpha") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.05..0.6));
        }
    }
}

#[test]
fn backprop_matches_tape_gradients() {
    for (config, seed) in [
        (ModelConfig::tiny(), 0u64),
        (ModelConfig::tiny(), 1),
        (ModelConfig::new(16, [2, 4, 6, 10, 6, 4, 1]).unwrap(), 2),
    ] {
        let mut params = ModelParams::<f64>::build(&config, seed).unwrap();
        perturbed_alphas(&mut params, seed);
        let (x, y) = random_pair(config.segment_len, seed + 10);
        let (loss, bptt) = params.loss_and_grad(&x, &y).unwrap();

        let set = params.to_parameter_set();
        let names: Vec<String> = set.names().map(|s| s.to_string()).collect();
        let mut tape_value = 0.0;
        let tape: ParameterSet<f64> = gradients(&set, |g, leaves| {
            let map: HashMap<String, Var<'_, f64>> = names.iter().cloned().zip(leaves.iter().cloned()).collect();
            let l = tape_loss(g, &map, &x, &y)?;
            tape_value = l.value().data()[0];
            Ok(l)
        })
        .unwrap();

        assert!((tape_value - loss).abs() <= 1e-14 * loss.abs().max(1.0));
        let mut worst = 0.0f64;
        for (name, g) in bptt.tensors() {
            let t = tape.get(&name).unwrap();
            assert_eq!(t.shape(), g.shape(), "{name}");
            for (a, b) in g.data().iter().zip(t.data()) {
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-12));
            }
        }
        assert!(worst < 1e-9, "seed {seed}: worst relative disagreement {worst:e}");
    }
}

#[test]
fn tape_forward_matches_model_forward() {
    let config = ModelConfig::tiny();
    let params = ModelParams::<f64>::build(&config, 3).unwrap();
    let (x, y) = random_pair(config.segment_len, 4);
    let direct = logcosh_loss(&params.forward(&x).unwrap(), &y).unwrap();
    let set = params.to_parameter_set();
    let names: Vec<String> = set.names().map(|s| s.to_string()).collect();
    let g = Graph::new();
    let leaves: HashMap<String, Var<'_, f64>> = names
        .iter()
        .map(|n| (n.clone(), g.leaf(set.get(n).unwrap().clone())))
        .collect();
    let via_tape = tape_loss(&g, &leaves, &x, &y).unwrap().value().data()[0];
    assert!((direct - via_tape).abs() < 1e-14);
}

#[test]
fn zero_model_output_is_zero() {
    let config = ModelConfig::tiny();
    let params = ModelParams::<f32>::zeros(&config).unwrap();
    let (x, _) = random_pair(64, 9);
    let out = params.forward(&x.cast::<f32>()).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_is_deterministic_and_shaped() {
    let params = ModelParams::<f32>::build(&ModelConfig::tiny(), 5).unwrap();
    let (x, _) = random_pair(64, 6);
    let x = x.cast::<f32>();
    let a = params.forward(&x).unwrap();
    let b = params.forward(&x).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[64, 1]);
    assert!(params.forward(&Tensor::column(&[0.0f32; 63])).is_err());
}

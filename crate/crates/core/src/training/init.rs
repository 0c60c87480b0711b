use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::tensor::Tensor;

/// `fan_out × fan_in` matrix of i.i.d. `N(0, 2 / (fan_in + fan_out))` draws.
pub fn xavier_normal<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<f64> {
    assert!(fan_in > 0 && fan_out > 0, "fans must be positive");
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite positive std");
    Tensor::from_fn(&[fan_out, fan_in], |_| normal.sample(rng))
}

/// Random `n × n` orthogonal matrix: QR of a standard normal matrix with the
/// columns of `Q` sign-corrected by `sign(diag(R))`, which makes the draw
/// uniform over the orthogonal group.
pub fn orthogonal_init<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor<f64> {
    assert!(n > 0, "size must be positive");
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Tensor::from_fn(&[n, n], |k| q[(k / n, k % n)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_gram_error(q: &Tensor<f64>) -> f64 {
        let g = q.transpose().unwrap().matmul(q).unwrap();
        let n = q.rows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.data()[i * n + j] - target).abs());
            }
        }
        worst
    }

    #[test]
    fn unit_fans_give_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = xavier_normal(1, 1, &mut rng);
        assert_eq!(w.shape(), &[1, 1]);
        let samples: Vec<f64> = (0..20_000).map(|_| xavier_normal(1, 1, &mut rng).data()[0]).collect();
        let var = samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64;
        assert!((var.sqrt() - 1.0).abs() < 0.03);
    }

    #[test]
    fn xavier_is_seeded() {
        let a = xavier_normal(5, 3, &mut ChaCha8Rng::seed_from_u64(4));
        let b = xavier_normal(5, 3, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[3, 5]);
    }

    #[test]
    fn orthogonal_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 7, 64] {
            let q = orthogonal_init(n, &mut rng);
            assert!(max_gram_error(&q) < 1e-12);
            let m = DMatrix::from_row_slice(n, n, q.data());
            assert!((m.determinant().abs() - 1.0).abs() < 1e-9);
        }
        let q = orthogonal_init(1, &mut rng);
        assert_eq!(q.data()[0].abs(), 1.0);
    }
}

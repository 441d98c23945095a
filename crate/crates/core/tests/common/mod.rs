//! Shared helpers for the gradient and acceptance suites: finite-difference
//! gradients, a brute-force DTW oracle, and tiny model fixtures.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cobra_core::geometry::Polyline;
use cobra_core::losses::LossConfig;
use cobra_core::model::{init_params, ModelParams, SnakeConfig};
use cobra_core::tensor::NdArray;

/// Central-difference gradient of a scalar-valued function of one array.
pub fn fd_grad(f: &mut impl FnMut(&NdArray) -> f64, x: &NdArray, eps: f64) -> NdArray {
    let mut grad = NdArray::zeros(x.shape());
    for i in 0..x.len() {
        let mut hi = x.clone();
        hi.data_mut()[i] += eps;
        let mut lo = x.clone();
        lo.data_mut()[i] -= eps;
        grad.data_mut()[i] = (f(&hi) - f(&lo)) / (2.0 * eps);
    }
    grad
}

/// Largest elementwise relative error, with an absolute floor of 1 in the
/// denominator so near-zero entries compare absolutely.
pub fn max_rel_err(a: &NdArray, b: &NdArray) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Minimum total squared-distance cost over every monotone alignment from
/// (0,0) to (I-1,J-1), by exhaustive enumeration.
pub fn brute_force_dtw(p: &Polyline, t: &Polyline) -> f64 {
    fn cost(p: &Polyline, t: &Polyline, i: usize, j: usize) -> f64 {
        let a = p.vertices()[i];
        let b = t.vertices()[j];
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
    }
    fn walk(p: &Polyline, t: &Polyline, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + cost(p, t, i, j);
        let (last_i, last_j) = (p.len() - 1, t.len() - 1);
        if i == last_i && j == last_j {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i < last_i && j < last_j {
            walk(p, t, i + 1, j + 1, acc, best);
        }
        if i < last_i {
            walk(p, t, i + 1, j, acc, best);
        }
        if j < last_j {
            walk(p, t, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(p, t, 0, 0, 0.0, &mut best);
    best
}

/// Uniformly random polyline with `n` vertices in the unit square.
pub fn random_polyline(rng: &mut impl Rng, n: usize) -> Polyline {
    Polyline::new((0..n).map(|_| [rng.random(), rng.random()]).collect()).unwrap()
}

/// The tiny end-to-end configuration used by the gradient checks.
pub fn tiny_config() -> SnakeConfig {
    SnakeConfig {
        vertices: 8,
        iterations: 2,
        dilations: vec![1, 2],
        head_width: 6,
        backbone_channels: vec![4, 8],
        feature_stride: 4,
        dropout_rate: 0.0,
        loss: LossConfig::default(),
        ..SnakeConfig::default()
    }
}

/// Initialized tiny-model parameters with a non-zero projection so offsets
/// (and the kinks they would otherwise sit on) move away from zero.
pub fn tiny_params(seed: u64) -> ModelParams {
    let cfg = tiny_config();
    let mut params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for path in ["head.proj.weight", "head.proj.bias"] {
        for v in params.get_mut(path).unwrap().data_mut() {
            *v = rng.random::<f64>() * 0.1 - 0.05;
        }
    }
    params
}

/// Random [1,H,W] image in [0,1].
pub fn random_image(h: usize, w: usize, seed: u64) -> NdArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NdArray::from_fn(&[1, h, w], |_| rng.random())
}

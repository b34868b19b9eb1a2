//! Oracles shared by the integration tests.
#![allow(dead_code)]

use driftlab::nn::{ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Rows drawn uniformly on the unit sphere.
pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(v.into_iter().map(|x| x / norm));
    }
    Tensor::new(vec![n, d], data).unwrap()
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn fd_gradient(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central differences of `f` with respect to every scalar in `params`.
pub fn fd_param_gradient(params: &ParamSet, f: impl Fn(&ParamSet) -> f64) -> Vec<Vec<f64>> {
    let mut probe = params.clone();
    (0..params.len())
        .map(|t| {
            (0..params.get(t).numel())
                .map(|i| {
                    let orig = probe.get(t).data()[i];
                    probe.get_mut(t).data_mut()[i] = orig + FD_STEP;
                    let up = f(&probe);
                    probe.get_mut(t).data_mut()[i] = orig - FD_STEP;
                    let down = f(&probe);
                    probe.get_mut(t).data_mut()[i] = orig;
                    (up - down) / (2.0 * FD_STEP)
                })
                .collect()
        })
        .collect()
}

/// Largest relative error between analytic and numeric gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

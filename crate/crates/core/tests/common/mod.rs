#![allow(dead_code)]

use bnn_hmc::bnn::{preactivations, Activation, MlpArchitecture, PosteriorSpec, RegressionDataset};
use bnn_hmc::symplectic::PhasePoint;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn random_data(rng: &mut ChaCha8Rng, n: usize, din: usize, dout: usize) -> RegressionDataset {
    let x = (0..n * din).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = normal_vec(rng, n * dout);
    RegressionDataset::new(din, dout, x, y).unwrap()
}

pub fn random_spec(rng: &mut ChaCha8Rng, activation: Activation, hidden: &[usize], n: usize) -> PosteriorSpec {
    let din = rng.random_range(1..=2);
    let dout = rng.random_range(1..=2);
    let arch = MlpArchitecture::with_hidden(din, hidden, dout, activation).unwrap();
    PosteriorSpec::new(arch, random_data(rng, n, din, dout), 1.0, 0.5).unwrap()
}

/// Smallest |pre-activation| over all data points and hidden units.
pub fn margin(spec: &PosteriorSpec, q: &[f64]) -> f64 {
    (0..spec.data().len())
        .flat_map(|i| preactivations(spec.arch(), q, spec.data().input(i)).unwrap())
        .fold(f64::INFINITY, |m, z| m.min(z.abs()))
}

/// A parameter draw at least `min_margin` away from every surface.
pub fn point_with_margin(rng: &mut ChaCha8Rng, spec: &PosteriorSpec, min_margin: f64) -> Vec<f64> {
    loop {
        let q = normal_vec(rng, spec.dim());
        if margin(spec, &q) > min_margin {
            return q;
        }
    }
}

pub fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> PhasePoint {
    PhasePoint::new(normal_vec(rng, dim), normal_vec(rng, dim))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Lagrange interpolation through `(xs, ys)` evaluated at `x`.
pub fn lagrange(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let mut total = 0.0;
    for (i, (&xi, &yi)) in xs.iter().zip(ys).enumerate() {
        let mut w = 1.0;
        for (j, &xj) in xs.iter().enumerate() {
            if i != j {
                w *= (x - xj) / (xi - xj);
            }
        }
        total += w * yi;
    }
    total
}

mod common;

use bnn_hmc::bnn::{
    activation_pattern, forward, grad_potential, grad_potential_forced, potential, preactivations, Activation,
    ActivationPattern, FlatParams, LayerParams, MlpArchitecture, PosteriorSpec, RegressionDataset,
};
use bnn_hmc::stats::rng_from_seed;
use bnn_hmc::Sign;
use common::*;
use proptest::prelude::*;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn forward_matches_a_hand_written_sigmoid_net() {
    let arch = MlpArchitecture::new(vec![1, 2, 1], Activation::Sigmoid).unwrap();
    // A1 = [0.7, -1.3], b1 = [0.2, 0.5], A2 = [1.1, -0.4], b2 = 0.3
    let q = [0.7, -1.3, 0.2, 0.5, 1.1, -0.4, 0.3];
    for x in [-1.5, 0.0, 0.25, 2.0] {
        let h1 = sigmoid(0.7 * x + 0.2);
        let h2 = sigmoid(-1.3 * x + 0.5);
        let expected = 1.1 * h1 - 0.4 * h2 + 0.3;
        let got = forward(&arch, &q, &[x]).unwrap()[0];
        assert!((got - expected).abs() < 1e-12, "x={x}: {got} vs {expected}");
    }
}

#[test]
fn forward_matches_naive_loops_on_deep_nets() {
    let mut rng = rng_from_seed(11);
    for activation in [Activation::Sigmoid, Activation::Tanh, Activation::Relu, Activation::LeakyRelu] {
        let arch = MlpArchitecture::new(vec![2, 3, 4, 2], activation).unwrap();
        let q = normal_vec(&mut rng, arch.param_dim());
        let layers = FlatParams::new(&arch, q.clone()).unwrap().unflatten(&arch).unwrap();
        let x = [0.3, -0.8];
        let mut h = x.to_vec();
        for (j, l) in layers.iter().enumerate() {
            let mut next = vec![0.0; l.rows];
            for r in 0..l.rows {
                let mut z = l.bias[r];
                for c in 0..l.cols {
                    z += l.weights[r * l.cols + c] * h[c];
                }
                next[r] = if j + 1 == layers.len() {
                    z
                } else {
                    match activation {
                        Activation::Sigmoid => sigmoid(z),
                        Activation::Tanh => z.tanh(),
                        Activation::Relu => z.max(0.0),
                        Activation::LeakyRelu => if z > 0.0 { z } else { 0.01 * z },
                    }
                };
            }
            h = next;
        }
        let got = forward(&arch, &q, &x).unwrap();
        for (a, b) in got.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = rng_from_seed(3);
    let families = [Activation::Sigmoid, Activation::Tanh, Activation::Relu, Activation::LeakyRelu];
    for trial in 0..100 {
        let activation = families[trial % 4];
        let hidden: Vec<usize> = if trial % 3 == 0 { vec![3, 2] } else { vec![4] };
        let spec = random_spec(&mut rng, activation, &hidden, 4);
        let q = point_with_margin(&mut rng, &spec, 1e-2);
        let g = grad_potential(&spec, &q).unwrap();
        for k in 0..q.len() {
            let h = 1e-6 * (1.0 + q[k].abs());
            let mut up = q.clone();
            let mut down = q.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (potential(&spec, &up).unwrap() - potential(&spec, &down).unwrap()) / (2.0 * h);
            let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1.0);
            assert!(rel < 1e-5, "trial {trial} ({activation:?}) component {k}: {} vs {fd}", g[k]);
        }
    }
}

#[test]
fn one_hidden_relu_segments_are_low_degree_polynomials() {
    let mut rng = rng_from_seed(17);
    let mut checked = 0;
    while checked < 10 {
        let spec = random_spec(&mut rng, Activation::Relu, &[5], 3);
        let q = point_with_margin(&mut rng, &spec, 0.3);
        let u: Vec<f64> = normal_vec(&mut rng, spec.dim()).iter().map(|v| 0.02 * v).collect();
        let at = |t: f64| -> Vec<f64> { q.iter().zip(&u).map(|(a, b)| a + t * b).collect() };
        let base = activation_pattern(&spec, &q).unwrap();
        if (0..=200).any(|k| activation_pattern(&spec, &at(k as f64 / 200.0)).unwrap() != base) {
            continue;
        }
        let nodes: Vec<f64> = (0..5).map(|k| k as f64 / 4.0).collect();
        let held_out: Vec<f64> = (0..20).map(|k| (k as f64 + 0.37) / 20.0).collect();
        let x = spec.data().input(0).to_vec();
        let f = |t: f64| forward(spec.arch(), &at(t), &x).unwrap()[0];
        let uu = |t: f64| potential(&spec, &at(t)).unwrap();
        // Degree-2 output: three nodes already suffice.
        let f_nodes: Vec<f64> = nodes.iter().map(|&t| f(t)).collect();
        let u_nodes: Vec<f64> = nodes.iter().map(|&t| uu(t)).collect();
        let three = [0.0, 0.5, 1.0];
        let f_three: Vec<f64> = three.iter().map(|&t| f(t)).collect();
        for &t in &held_out {
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            assert!(rel(lagrange(&nodes, &f_nodes, t), f(t)) < 1e-9);
            assert!(rel(lagrange(&three, &f_three, t), f(t)) < 1e-9);
            assert!(rel(lagrange(&nodes, &u_nodes, t), uu(t)) < 1e-9);
        }
        checked += 1;
    }
}

#[test]
fn preactivation_signs_match_the_pattern() {
    let mut rng = rng_from_seed(5);
    let spec = random_spec(&mut rng, Activation::Relu, &[3, 4], 5);
    let q = normal_vec(&mut rng, spec.dim());
    let pattern = activation_pattern(&spec, &q).unwrap();
    for i in 0..spec.data().len() {
        let pre = preactivations(spec.arch(), &q, spec.data().input(i)).unwrap();
        let signs: Vec<Sign> = pre.iter().map(|&z| Sign::of(z)).collect();
        assert_eq!(pattern.row(i), &signs[..]);
    }
    let zeros = vec![0.0; spec.dim()];
    let pre = preactivations(spec.arch(), &zeros, spec.data().input(0)).unwrap();
    assert!(pre.iter().all(|&z| z == 0.0));
}

#[test]
fn actual_pattern_reproduces_the_gradient() {
    let mut rng = rng_from_seed(8);
    for activation in [Activation::Relu, Activation::LeakyRelu] {
        let spec = random_spec(&mut rng, activation, &[4, 3], 6);
        let q = normal_vec(&mut rng, spec.dim());
        let pattern = activation_pattern(&spec, &q).unwrap();
        assert_eq!(
            grad_potential_forced(&spec, &q, &pattern).unwrap(),
            grad_potential(&spec, &q).unwrap()
        );
    }
}

/// One data point at x, [1,3,1] ReLU, with neuron `j` placed on its kink.
fn kink_setup(zero_subderivative: f64) -> (PosteriorSpec, Vec<f64>, usize) {
    let arch = MlpArchitecture::new(vec![1, 3, 1], Activation::Relu)
        .unwrap()
        .with_zero_subderivative(zero_subderivative)
        .unwrap();
    let x = 0.8;
    let data = RegressionDataset::new(1, 1, vec![x], vec![0.4]).unwrap();
    let spec = PosteriorSpec::new(arch, data, 1.0, 0.1).unwrap();
    // b1[1] = -A1[1]·x puts neuron 1 exactly on its kink.
    let mut q = vec![1.2, 2.0, 0.9, 0.3, 0.0, -0.1, 0.7, -1.1, 0.6, 0.05];
    q[4] = -q[1] * x;
    (spec, q, 1)
}

#[test]
fn jump_is_parallel_to_the_preactivation_gradient() {
    let (spec, q, j) = kink_setup(0.0);
    let pre = preactivations(spec.arch(), &q, &[0.8]).unwrap();
    assert_eq!(pre[j], 0.0);
    let mut below = activation_pattern(&spec, &q).unwrap();
    below.set(0, j, Sign::Neg);
    let mut above = below.clone();
    above.set(0, j, Sign::Pos);
    let g_minus = grad_potential_forced(&spec, &q, &below).unwrap();
    let g_plus = grad_potential_forced(&spec, &q, &above).unwrap();
    let jump: Vec<f64> = g_plus.iter().zip(&g_minus).map(|(a, b)| a - b).collect();
    // d(pre_j)/dq: x on A1[j], 1 on b1[j], 0 elsewhere.
    let mut dpre = vec![0.0; spec.dim()];
    dpre[j] = 0.8;
    dpre[3 + j] = 1.0;
    let cos = jump.iter().zip(&dpre).map(|(a, b)| a * b).sum::<f64>() / (norm(&jump) * norm(&dpre));
    assert!(norm(&jump) > 0.0);
    assert!(cos.abs() > 1.0 - 1e-8, "cos = {cos}");
}

#[test]
fn zero_subderivative_choices_differ_by_the_jump() {
    let (spec0, q, j) = kink_setup(0.0);
    let (spec1, _, _) = kink_setup(1.0);
    let g0 = grad_potential(&spec0, &q).unwrap();
    let g1 = grad_potential(&spec1, &q).unwrap();
    let mut minus = activation_pattern(&spec0, &q).unwrap();
    minus.set(0, j, Sign::Neg);
    let mut plus = minus.clone();
    plus.set(0, j, Sign::Pos);
    let jump: Vec<f64> = grad_potential_forced(&spec0, &q, &plus)
        .unwrap()
        .iter()
        .zip(&grad_potential_forced(&spec0, &q, &minus).unwrap())
        .map(|(a, b)| a - b)
        .collect();
    for k in 0..q.len() {
        assert!((g1[k] - g0[k] - jump[k]).abs() < 1e-12);
    }
}

#[test]
fn all_off_pattern_leaves_only_the_output_bias_path() {
    // [1,1,1] ReLU: q = (A1, b1, A2, b2). The forward pass still sees
    // h = relu(0.6·0.5 + 0.4) = 0.7, but no gradient flows into layer 1.
    let arch = MlpArchitecture::new(vec![1, 1, 1], Activation::Relu).unwrap();
    let data = RegressionDataset::new(1, 1, vec![0.5], vec![0.2]).unwrap();
    let spec = PosteriorSpec::new(arch, data, 1.0, 0.1).unwrap();
    let q = [0.6, 0.4, -0.7, 0.9];
    let off = ActivationPattern::filled(1, 1, Sign::Neg);
    let g = grad_potential_forced(&spec, &q, &off).unwrap();
    let f = -0.7 * 0.7 + 0.9;
    let r = (f - 0.2) / 0.01;
    assert!((g[0] - 0.6).abs() < 1e-12);
    assert!((g[1] - 0.4).abs() < 1e-12);
    assert!((g[2] - (-0.7 + r * 0.7)).abs() < 1e-10);
    assert!((g[3] - (0.9 + r)).abs() < 1e-10);
}

#[test]
fn repeated_calls_are_bit_identical() {
    let mut rng = rng_from_seed(21);
    let spec = random_spec(&mut rng, Activation::Sigmoid, &[6], 10);
    let q = normal_vec(&mut rng, spec.dim());
    let a = (potential(&spec, &q).unwrap(), grad_potential(&spec, &q).unwrap());
    let b = (potential(&spec, &q).unwrap(), grad_potential(&spec, &q).unwrap());
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

proptest! {
    #[test]
    fn flatten_round_trips(dims in prop::collection::vec(1usize..5, 2..5), seed in any::<u64>()) {
        let arch = MlpArchitecture::new(dims, Activation::Tanh).unwrap();
        let mut rng = rng_from_seed(seed);
        let values = normal_vec(&mut rng, arch.param_dim());
        let flat = FlatParams::new(&arch, values.clone()).unwrap();
        let layers: Vec<LayerParams> = flat.unflatten(&arch).unwrap();
        let back = FlatParams::flatten(&arch, &layers).unwrap();
        prop_assert_eq!(back.as_slice(), &values[..]);
        let json = serde_json::to_string(&flat).unwrap();
        let parsed: FlatParams = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(parsed, flat);
    }

    #[test]
    fn spec_json_round_trips(width in 1usize..6, n in 1usize..5, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let spec = random_spec(&mut rng, Activation::LeakyRelu, &[width], n);
        let back = PosteriorSpec::from_json(&spec.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, spec);
    }
}

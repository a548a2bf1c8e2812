//! Property tests for the tensor core: output-length law, adjointness of
//! the transposed convolution, and adaptive instance normalization moments.

use proptest::prelude::*;
use semivae_core::tensor::{Graph, Tensor};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_output_length_law(l in 1usize..64, k in 1usize..8, s in 1usize..4, pad in 0usize..3) {
        prop_assume!(l + 2 * pad >= k);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, l]));
        let w = g.constant(Tensor::zeros(vec![1, 1, k]));
        let b = g.constant(Tensor::zeros(vec![1]));
        let y = g.conv(x, w, b, s, pad).unwrap();
        prop_assert_eq!(g.value(y).shape()[1], (l + 2 * pad - k) / s + 1);
    }

    #[test]
    fn conv_transpose_is_adjoint_1d(
        seed in 0u64..1000,
        c_in in 1usize..3,
        c_out in 1usize..3,
        t_out in 1usize..12,
        k in 1usize..5,
        s in 1usize..3,
        pad in 0usize..2,
    ) {
        // Choose the conv output extent first so the transposed map lands
        // exactly back on the input space.
        let full = (t_out - 1) * s + k;
        prop_assume!(full > 2 * pad);
        let l = full - 2 * pad;
        use rand::Rng;
        let mut rng = semivae_core::rng::stream_rng(seed, semivae_core::rng::StreamLabel::Init, 0);
        let mut rand_t = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let xt = rand_t(vec![c_in, l]);
        let wt = rand_t(vec![c_out, c_in, k]);
        let zero_b_out = Tensor::zeros(vec![c_out]);
        let zero_b_in = Tensor::zeros(vec![c_in]);

        let mut g = Graph::new();
        let x = g.constant(xt.clone());
        let w = g.constant(wt.clone());
        let b = g.constant(zero_b_out.clone());
        let y = g.conv(x, w, b, s, pad).unwrap();
        let yt = rand_t(g.value(y).shape().to_vec());

        let lhs = dot(g.value(y).data(), yt.data());

        let yv = g.constant(yt);
        let bt = g.constant(zero_b_in);
        let xback = g.conv_transpose(yv, w, bt, s, pad).unwrap();
        prop_assert_eq!(g.value(xback).shape(), xt.shape());
        let rhs = dot(xt.data(), g.value(xback).data());

        prop_assert!((lhs - rhs).abs() < 1e-10, "lhs {} rhs {}", lhs, rhs);
    }

    #[test]
    fn conv_transpose_is_adjoint_2d(
        seed in 0u64..1000,
        th in 1usize..6,
        tw in 1usize..6,
        k in 1usize..4,
        s in 1usize..3,
    ) {
        let h = (th - 1) * s + k;
        let w_ext = (tw - 1) * s + k;
        use rand::Rng;
        let mut rng = semivae_core::rng::stream_rng(seed, semivae_core::rng::StreamLabel::Init, 1);
        let mut rand_t = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let xt = rand_t(vec![2, h, w_ext]);
        let wt = rand_t(vec![1, 2, k, k]);

        let mut g = Graph::new();
        let x = g.constant(xt.clone());
        let w = g.constant(wt);
        let b = g.constant(Tensor::zeros(vec![1]));
        let y = g.conv(x, w, b, s, 0).unwrap();
        let yt = rand_t(g.value(y).shape().to_vec());

        let lhs = dot(g.value(y).data(), yt.data());
        let yv = g.constant(yt);
        let bt = g.constant(Tensor::zeros(vec![2]));
        let xback = g.conv_transpose(yv, w, bt, s, 0).unwrap();
        let rhs = dot(xt.data(), g.value(xback).data());

        prop_assert!((lhs - rhs).abs() < 1e-10, "lhs {} rhs {}", lhs, rhs);
    }

    #[test]
    fn adain_moments_match_targets(
        seed in 0u64..1000,
        c in 1usize..4,
        n in 3usize..32,
    ) {
        use rand::Rng;
        let mut rng = semivae_core::rng::stream_rng(seed, semivae_core::rng::StreamLabel::Init, 2);
        // Spread-out channels: adding i as an offset per element keeps the
        // population std comfortably above the degeneracy epsilon.
        let data: Vec<f64> = (0..c * n).map(|i| rng.gen_range(-2.0..2.0) + (i % n) as f64 * 0.5).collect();
        let gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..3.0)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![c, n], data).unwrap());
        let gv = g.constant(Tensor::from_vec(gamma.clone()));
        let bv = g.constant(Tensor::from_vec(beta.clone()));
        let y = g.adain(x, gv, bv).unwrap();
        let out = g.value(y).data();
        for ci in 0..c {
            let ch = &out[ci * n..(ci + 1) * n];
            let mean = ch.iter().sum::<f64>() / n as f64;
            let std = (ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
            prop_assert!((mean - beta[ci]).abs() < 1e-9, "mean {} beta {}", mean, beta[ci]);
            prop_assert!((std - gamma[ci]).abs() < 1e-9, "std {} gamma {}", std, gamma[ci]);
        }
    }
}

#[test]
fn forward_ops_are_deterministic() {
    use rand::Rng;
    let run = || {
        let mut rng = semivae_core::rng::stream_rng(99, semivae_core::rng::StreamLabel::Init, 3);
        let x = Tensor::new(vec![2, 16], (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let w = Tensor::new(vec![3, 2, 4], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let wv = g.constant(w);
        let bv = g.constant(Tensor::zeros(vec![3]));
        let y = g.conv(xv, wv, bv, 2, 1).unwrap();
        let y = g.leaky_relu(y, 0.2);
        let p = g.global_avg_pool(y).unwrap();
        g.value(p).data().to_vec()
    };
    let a = run();
    let b = run();
    let bits_a: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
    let bits_b: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits_a, bits_b);
}

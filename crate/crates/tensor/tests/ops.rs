mod common;

use common::{max_rel, naive_conv, naive_dft, random, rng};
use pat_tensor::{conv2d_forward, Graph, Tensor, TensorError};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn conv_delta_kernel_is_identity() {
    let mut r = rng(1);
    let x = random(&mut r, &[2, 1, 6, 5]);
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let w = t(&[1, 1, 3, 3], &k);
    let y = conv2d_forward(&x, &w, Some(&Tensor::zeros(&[1])), 1, 1).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv_ones_kernel_on_constant_input() {
    let x = Tensor::<f64>::full(&[1, 1, 5, 5], 0.7);
    let w = Tensor::full(&[1, 1, 3, 3], 1.0);
    let y = conv2d_forward(&x, &w, None, 1, 1).unwrap();
    for i in 1..4 {
        for j in 1..4 {
            assert!((y.data()[i * 5 + j] - 6.3).abs() < 1e-12);
        }
    }
    // corners only see four taps
    assert!((y.data()[0] - 2.8).abs() < 1e-12);
}

#[test]
fn conv_matches_loop_oracle_on_spec_case() {
    let mut r = rng(2);
    let x = random(&mut r, &[1, 2, 5, 5]);
    let w = random(&mut r, &[3, 2, 3, 3]);
    let b = random(&mut r, &[3]);
    let y = conv2d_forward(&x, &w, Some(&b), 1, 1).unwrap();
    let o = naive_conv(&x, &w, b.data(), 1, 1);
    assert!(max_rel(y.data(), o.data()) <= 1e-6);
}

#[test]
fn conv_rejects_bad_shapes() {
    let x = Tensor::<f64>::zeros(&[1, 2, 5, 5]);
    let w = Tensor::zeros(&[3, 3, 3, 3]);
    assert!(matches!(conv2d_forward(&x, &w, None, 1, 1), Err(TensorError::Shape { .. })));
    let w = Tensor::zeros(&[3, 2, 3, 3]);
    let x6 = Tensor::<f64>::zeros(&[1, 2, 6, 6]);
    assert!(matches!(
        conv2d_forward(&x6, &w, None, 2, 0),
        Err(TensorError::NonIntegralExtent { .. })
    ));
    assert!(conv2d_forward(&x, &w, Some(&Tensor::zeros(&[2])), 1, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn conv_equals_oracle_on_small_shapes(
        b in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 3usize..=8, w in 3usize..=8, k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3, seed in any::<u64>(),
    ) {
        let pad = k / 2;
        prop_assume!((h + 2 * pad - k) % stride == 0 && (w + 2 * pad - k) % stride == 0);
        let mut r = rng(seed);
        let x = random(&mut r, &[b, cin, h, w]);
        let wt = random(&mut r, &[cout, cin, k, k]);
        let bias = random(&mut r, &[cout]);
        let y = conv2d_forward(&x, &wt, Some(&bias), stride, pad).unwrap();
        let o = naive_conv(&x, &wt, bias.data(), stride, pad);
        prop_assert_eq!(y.shape(), o.shape());
        prop_assert!(max_rel(y.data(), o.data()) <= 1e-6);
    }
}

#[test]
fn maxpool_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::full(&[1, 2, 4, 4], 3.5));
    let y = g.maxpool2x2(x).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 3.5));

    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.maxpool2x2(x).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn maxpool_ties_route_to_first_index() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[1, 1, 2, 2], &[2.0, 2.0, 2.0, 2.0]));
    let y = g.maxpool2x2(x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn maxpool_matches_window_oracle_and_rejects_odd() {
    let mut r = rng(3);
    let x = random(&mut r, &[1, 1, 8, 8]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = g.maxpool2x2(xv).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let d = x.data();
            let m = d[2 * i * 8 + 2 * j]
                .max(d[2 * i * 8 + 2 * j + 1])
                .max(d[(2 * i + 1) * 8 + 2 * j])
                .max(d[(2 * i + 1) * 8 + 2 * j + 1]);
            assert_eq!(g.value(y).data()[i * 4 + j], m);
        }
    }
    let odd = g.constant(Tensor::zeros(&[1, 1, 5, 4]));
    assert!(g.maxpool2x2(odd).is_err());
}

#[test]
fn upconv_single_pixel_reproduces_kernel() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 1, 1, 1], &[2.5]));
    let k = g.constant(t(&[1, 1, 2, 2], &[1.0, -2.0, 3.0, 0.5]));
    let y = g.upconv2x2(x, k, None).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &[2.5, -5.0, 7.5, 1.25]);
}

#[test]
fn upconv_zero_input_gives_bias() {
    let mut r = rng(4);
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[2, 3, 4, 4]));
    let k = g.constant(random(&mut r, &[3, 2, 2, 2]));
    let b = g.constant(t(&[2], &[0.25, -1.0]));
    let y = g.upconv2x2(x, k, Some(b)).unwrap();
    assert_eq!(g.shape(y), &[2, 2, 8, 8]);
    for (i, v) in g.value(y).data().iter().enumerate() {
        let c = (i / 64) % 2;
        assert_eq!(*v, [0.25, -1.0][c]);
    }
}

#[test]
fn upconv_is_adjoint_of_stride_two_conv() {
    let mut r = rng(5);
    for (cin, cout, h, w) in [(1, 1, 1, 1), (2, 3, 4, 4), (3, 2, 3, 5), (4, 4, 8, 2)] {
        let x = random(&mut r, &[2, cin, h, w]);
        let k = random(&mut r, &[cin, cout, 2, 2]);
        let y = random(&mut r, &[2, cout, 2 * h, 2 * w]);
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let up = g.upconv2x2(xv, kv, None).unwrap();
        let lhs: f64 = g.value(up).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        // The same buffer read as a [Cin, Cout, 2, 2] conv weight maps Cout → Cin.
        let kc = k.clone().reshape(&[cin, cout, 2, 2]).unwrap();
        let down = conv2d_forward(&y, &kc, None, 2, 0).unwrap();
        let rhs: f64 = x.data().iter().zip(down.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-6 * rhs.abs().max(1e-12), "{lhs} vs {rhs}");
    }
}

#[test]
fn upconv_rejects_bad_kernel() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
    let k = g.constant(Tensor::zeros(&[2, 1, 3, 3]));
    assert!(g.upconv2x2(x, k, None).is_err());
    let k = g.constant(Tensor::zeros(&[3, 1, 2, 2]));
    assert!(g.upconv2x2(x, k, None).is_err());
}

#[test]
fn fft_of_delta_is_flat() {
    let mut d = vec![0.0; 64];
    d[0] = 1.0;
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 8, 8], &d));
    let z = g.fft2(x).unwrap();
    assert!(g.value(z.re).data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    assert!(g.value(z.im).data().iter().all(|&v| v.abs() < 1e-15));
}

#[test]
fn fft_roundtrip_and_parseval() {
    let mut r = rng(6);
    for shape in [[1, 1, 16, 16], [2, 3, 8, 4], [1, 2, 32, 1]] {
        let x = random(&mut r, &shape);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let z = g.fft2(xv).unwrap();
        let back = g.ifft2(z).unwrap();
        assert!(max_rel(g.value(back.re).data(), x.data()) <= 1e-10);
        assert!(g.value(back.im).data().iter().all(|v| v.abs() <= 1e-12));
        let hw = (shape[2] * shape[3]) as f64;
        let ex: f64 = x.data().iter().map(|v| v * v).sum();
        let ez: f64 = g.value(z.re).data().iter().chain(g.value(z.im).data()).map(|v| v * v).sum();
        assert!(((ez / hw) - ex).abs() <= 1e-9 * ex);
    }
}

#[test]
fn fft_matches_naive_dft() {
    let mut r = rng(7);
    let re = random(&mut r, &[1, 1, 8, 8]);
    let im = random(&mut r, &[1, 1, 8, 8]);
    for inverse in [false, true] {
        let mut g = Graph::new();
        let z = pat_tensor::ComplexPair {
            re: g.constant(re.clone()),
            im: g.constant(im.clone()),
        };
        let out = if inverse { g.ifft2(z).unwrap() } else { g.fft2_complex(z).unwrap() };
        let (or, oi) = naive_dft(re.data(), im.data(), 8, 8, inverse);
        let got: Vec<f64> = g.value(out.re).data().iter().chain(g.value(out.im).data()).copied().collect();
        let want: Vec<f64> = or.into_iter().chain(oi).collect();
        assert!(max_rel(&got, &want) <= 1e-9);
    }
}

#[test]
fn fft_is_linear() {
    let mut r = rng(8);
    let x = random(&mut r, &[1, 2, 8, 16]);
    let y = random(&mut r, &[1, 2, 8, 16]);
    let (a, b) = (1.7, -0.3);
    let combo = Tensor::new(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
    let mut g = Graph::new();
    let (xv, yv, cv) = (g.constant(x), g.constant(y), g.constant(combo));
    let (fx, fy, fc) = (g.fft2(xv).unwrap(), g.fft2(yv).unwrap(), g.fft2(cv).unwrap());
    for (p, q, c) in [(fx.re, fy.re, fc.re), (fx.im, fy.im, fc.im)] {
        let want: Vec<f64> = g.value(p).data().iter().zip(g.value(q).data()).map(|(u, v)| a * u + b * v).collect();
        assert!(max_rel(g.value(c).data(), &want) <= 1e-12);
    }
}

#[test]
fn fft_rejects_non_power_of_two() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 6, 8]));
    assert!(matches!(g.fft2(x), Err(TensorError::NotPowerOfTwo { extent: 6, .. })));
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).item(), 0.5);

    let mut r = rng(9);
    let a = random(&mut r, &[1, 2, 3, 3]);
    let b = random(&mut r, &[1, 3, 3, 3]);
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.concat(&[av, bv]).unwrap();
    assert_eq!(g.shape(c), &[1, 5, 3, 3]);
    let a2 = g.slice_channels(c, 0, 2).unwrap();
    let b2 = g.slice_channels(c, 2, 3).unwrap();
    assert_eq!(g.value(a2), &a);
    assert_eq!(g.value(b2), &b);

    let p = g.constant(Tensor::zeros(&[2]));
    let q = g.constant(Tensor::zeros(&[3]));
    assert!(g.add(p, q).is_err());
    let k = g.constant(Tensor::scalar(2.0));
    let m = g.mul(q, k).unwrap();
    assert_eq!(g.shape(m), &[3]);
}

#[test]
fn backward_of_sum_of_squares() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[4], &[1.0, -2.0, 0.5, 3.0]));
    let sq = g.square(x);
    let l = g.sum(sq);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0, 6.0]);
}

#[test]
fn backward_rejects_non_scalar_and_zeroes_unused() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let unused = g.param(t(&[3], &[1.0, 2.0, 3.0]));
    let c = g.constant(t(&[2], &[5.0, 5.0]));
    let y = g.mul(x, x).unwrap();
    assert!(matches!(g.backward(y), Err(TensorError::NonScalarLoss(_))));
    let l = g.sum(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    assert!(g.grad(c).is_none());
}

use mfdp::autodiff::{gelu_scalar, ConvSpec, Graph};
use mfdp::{Precision, Tensor};
use proptest::prelude::*;

fn tensor(shape: &'static [usize]) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(shape, d).unwrap())
}

fn run<F: FnOnce(&mut Graph) -> mfdp::autodiff::Var>(f: F) -> Tensor {
    let mut g = Graph::inference(Precision::High);
    let v = f(&mut g);
    g.value(v).clone()
}

/// Maclaurin series of erf, independent of the engine's libm path.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

#[test]
fn gelu_matches_erf_series_and_limits() {
    for x in [-2.5, -1.0, -0.3, 0.0, 0.7, 1.0, 2.2] {
        let oracle = x * 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
        assert!((gelu_scalar(x) - oracle).abs() < 1e-14, "gelu({x})");
    }
    assert_eq!(gelu_scalar(0.0), 0.0);
    assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
}

#[test]
fn softmax_examples() {
    let y = run(|g| {
        let x = g.constant(Tensor::new(&[1, 2], vec![1000.0, 1000.5]).unwrap());
        g.softmax_last(x).unwrap()
    });
    let r = run(|g| {
        let x = g.constant(Tensor::new(&[1, 2], vec![0.0, 0.5]).unwrap());
        g.softmax_last(x).unwrap()
    });
    assert!(y.max_abs_diff(&r) < 1e-12);
    let u = run(|g| {
        let x = g.constant(Tensor::full(&[1, 4], -7.25));
        g.softmax_last(x).unwrap()
    });
    assert_eq!(u.data(), &[0.25; 4]);
}

#[test]
fn bmm_examples() {
    let y = run(|g| {
        let a = g.constant(Tensor::new(&[1, 1, 1], vec![2.0]).unwrap());
        let b = g.constant(Tensor::new(&[1, 1, 1], vec![3.0]).unwrap());
        g.bmm(a, b).unwrap()
    });
    assert_eq!(y.data(), &[6.0]);
}

#[test]
fn layer_norm_examples() {
    let y = run(|g| {
        let x = g.constant(Tensor::new(&[1, 2, 1, 1], vec![1.0, 3.0]).unwrap());
        let ga = g.constant(Tensor::full(&[2], 1.0));
        let be = g.constant(Tensor::zeros(&[2]));
        g.layer_norm(x, 1, ga, be, 0.0).unwrap()
    });
    assert_eq!(y.data(), &[-1.0, 1.0]);
    let z = run(|g| {
        let x = g.constant(Tensor::full(&[1, 5, 1, 1], 0.3));
        let ga = g.constant(Tensor::full(&[5], 1.0));
        let be = g.constant(Tensor::zeros(&[5]));
        g.layer_norm(x, 1, ga, be, 1e-5).unwrap()
    });
    assert!(z.data().iter().all(|&v| v.abs() < 1e-9));
}

#[test]
fn pixel_shuffle_examples() {
    let y = run(|g| {
        let x = g.constant(Tensor::new(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        g.pixel_shuffle(x, 2).unwrap()
    });
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    let s = run(|g| {
        let x = g.constant(Tensor::zeros(&[1, 12, 4, 4]));
        g.pixel_shuffle(x, 2).unwrap()
    });
    assert_eq!(s.shape(), &[1, 3, 8, 8]);
    let mut g = Graph::inference(Precision::High);
    let bad = g.constant(Tensor::zeros(&[1, 6, 2, 2]));
    assert!(g.pixel_shuffle(bad, 2).is_err());
}

#[test]
fn bilinear_midpoint_average() {
    let y = run(|g| {
        let x = g.constant(Tensor::new(&[1, 1, 2, 1], vec![2.0, 4.0]).unwrap());
        let c = g.constant(Tensor::new(&[1, 1, 1, 2], vec![0.5, 0.0]).unwrap());
        g.bilinear_sample(x, c).unwrap()
    });
    assert_eq!(y.data(), &[3.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear_in_input(
        x in tensor(&[1, 3, 6, 5]),
        y in tensor(&[1, 3, 6, 5]),
        w in tensor(&[4, 3, 3, 3]),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let spec = ConvSpec::same(3, 1);
        let conv = |t: &Tensor| run(|g| {
            let (tv, wv) = (g.constant(t.clone()), g.constant(w.clone()));
            g.conv2d(tv, wv, None, spec).unwrap()
        });
        let combo = Tensor::new(
            x.shape(),
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        let lhs = conv(&combo);
        let (cx, cy) = (conv(&x), conv(&y));
        let rhs = Tensor::new(
            lhs.shape(),
            cx.data().iter().zip(cy.data()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn depthwise_conv_equals_per_channel_loops(x in tensor(&[2, 3, 5, 6]), w in tensor(&[3, 1, 3, 3])) {
        let y = run(|g| {
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            g.conv2d(xv, wv, None, ConvSpec::same(3, 3)).unwrap()
        });
        for n in 0..2 {
            for c in 0..3 {
                for i in 0..5isize {
                    for j in 0..6isize {
                        // Same summation order as the engine: kernel row-major.
                        let mut acc = 0.0;
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (yy, xx) = (i + ky - 1, j + kx - 1);
                                if (0..5).contains(&yy) && (0..6).contains(&xx) {
                                    acc += w.at(&[c, 0, ky as usize, kx as usize])
                                        * x.at(&[n, c, yy as usize, xx as usize]);
                                }
                            }
                        }
                        prop_assert_eq!(y.at(&[n, c, i as usize, j as usize]), acc);
                    }
                }
            }
        }
    }

    #[test]
    fn transpose_conv_adjoint(x in tensor(&[1, 3, 4, 4]), u in tensor(&[1, 3, 2, 2]), w in tensor(&[3, 3, 2, 2])) {
        let spec = ConvSpec::new(2, 0, 1);
        let cx = run(|g| {
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            g.conv2d(xv, wv, None, spec).unwrap()
        });
        let tu = run(|g| {
            let (uv, wv) = (g.constant(u.clone()), g.constant(w.clone()));
            g.conv_transpose2d(uv, wv, None, spec).unwrap()
        });
        prop_assert!((cx.dot(&u) - x.dot(&tu)).abs() < 1e-10);
    }

    #[test]
    fn pixel_shuffle_round_trips(x in tensor(&[2, 8, 3, 2])) {
        let y = run(|g| {
            let v = g.constant(x.clone());
            let s = g.pixel_shuffle(v, 2).unwrap();
            g.pixel_unshuffle(s, 2).unwrap()
        });
        prop_assert_eq!(&y, &x);
        let z = run(|g| {
            let v = g.constant(x.clone());
            let s = g.pixel_unshuffle(v, 1).unwrap();
            g.pixel_shuffle(s, 1).unwrap()
        });
        prop_assert_eq!(&z, &x);
        let s = run(|g| {
            let v = g.constant(x.clone());
            g.pixel_shuffle(v, 2).unwrap()
        });
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            prop_assert_eq!(
                                s.at(&[1, c, 2 * i + dy, 2 * j + dx]),
                                x.at(&[1, c * 4 + dy * 2 + dx, i, j])
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(x in tensor(&[3, 7]), c in -50.0f64..50.0) {
        let y = run(|g| { let v = g.constant(x.clone()); g.softmax_last(v).unwrap() });
        let shifted = x.map(|v| v + c);
        let z = run(|g| { let v = g.constant(shifted); g.softmax_last(v).unwrap() });
        for row in y.data().chunks(7) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(y.max_abs_diff(&z) < 1e-12);
    }

    #[test]
    fn gelu_odd_identity(x in -8.0f64..8.0) {
        prop_assert!((gelu_scalar(x) - gelu_scalar(-x) - x).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_in_open_unit_interval(x in tensor(&[4, 4])) {
        let y = run(|g| { let v = g.constant(x.clone()); g.sigmoid(v).unwrap() });
        prop_assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn concat_split_identity(x in tensor(&[2, 5, 3])) {
        let y = run(|g| {
            let v = g.constant(x.clone());
            let parts = g.split(v, 1, &[2, 1, 2]).unwrap();
            g.concat(&parts, 1).unwrap()
        });
        prop_assert_eq!(&y, &x);
    }

    #[test]
    fn pooled_constant_is_constant(c in -3.0f64..3.0) {
        let y = run(|g| { let v = g.constant(Tensor::full(&[1, 2, 3, 5], c)); g.global_avg_pool(v).unwrap() });
        prop_assert!(y.data().iter().all(|&v| (v - c).abs() < 1e-14));
    }

    #[test]
    fn conv_is_deterministic(x in tensor(&[1, 4, 6, 6]), w in tensor(&[4, 2, 3, 3])) {
        let f = || run(|g| {
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            g.conv2d(xv, wv, None, ConvSpec::same(3, 2)).unwrap()
        });
        let (a, b) = (f(), f());
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

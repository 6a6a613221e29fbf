use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redsr::tensor::{adam_step, grad_check, AdamState, ParamSet};
use redsr::{Error, Graph, Tensor};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Direct quadruple loop, the reference for the GEMM-backed conv.
fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, kh, kw) = w.dims4().unwrap();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for o in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let y = (i * stride + u) as isize - pad as isize;
                                let z = (j * stride + v) as isize - pad as isize;
                                if y < 0 || z < 0 || y >= h as isize || z >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((b * cin + c) * h + y as usize) * wd + z as usize];
                                acc += xv * w.data()[((o * cin + c) * kh + u) * kw + v];
                            }
                        }
                    }
                    out[((b * cout + o) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    t(&[n, cout, ho, wo], &out)
}

fn conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let mut g = Graph::new();
    let xv = g.constant(x.clone()).unwrap();
    let wv = g.constant(w.clone()).unwrap();
    let y = g.conv2d(xv, wv, stride, pad).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_examples() {
    let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
    assert_eq!(conv(&x, &t(&[1, 1, 1, 1], &[1.0]), 1, 0), x);
    assert_eq!(conv(&x, &Tensor::full(&[1, 1, 3, 3], 1.0), 1, 0).data(), &[45.0]);
    let zero = Tensor::zeros(&[2, 3, 5, 5]);
    let w = Tensor::from_fn(&[4, 3, 3, 3], |i| i as f64 - 50.0);
    assert!(conv(&zero, &w, 2, 1).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4])).unwrap();
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3])).unwrap();
    assert!(matches!(g.conv2d(x, w, 1, 1), Err(Error::Dimension(_))));
    let w = g.constant(Tensor::zeros(&[1, 2, 3, 3])).unwrap();
    assert!(matches!(g.conv2d(x, w, 0, 1), Err(Error::Parameter(_))));
    let big = g.constant(Tensor::zeros(&[1, 2, 7, 7])).unwrap();
    assert!(g.conv2d(x, big, 1, 1).is_err());
}

#[test]
fn elementwise_and_linear_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[-1.0, 2.0])).unwrap();
    let r = g.leaky_relu(x, 0.1).unwrap();
    assert_eq!(g.value(r).data(), &[-0.1, 2.0]);
    let zero = g.constant(Tensor::zeros(&[2])).unwrap();
    let one = g.constant(Tensor::scalar(1.0)).unwrap();
    let a = g.add(x, zero).unwrap();
    let m = g.mul(x, one).unwrap();
    assert_eq!(g.value(a), g.value(x));
    assert_eq!(g.value(m), g.value(x));
    let bad = g.constant(Tensor::zeros(&[3])).unwrap();
    assert!(matches!(g.add(x, bad), Err(Error::Dimension(_))));

    let inp = g.constant(t(&[1, 2], &[1.0, 2.0])).unwrap();
    let w = g.constant(t(&[1, 2], &[1.0, 1.0])).unwrap();
    let b = g.constant(t(&[1], &[0.0])).unwrap();
    let y = g.linear(inp, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[3.0]);

    let inp = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
    let zb = g.constant(Tensor::zeros(&[2])).unwrap();
    let y = g.linear(inp, eye, zb).unwrap();
    assert_eq!(g.value(y), g.value(inp));
    let zw = g.constant(Tensor::zeros(&[2, 2])).unwrap();
    let bias = g.constant(t(&[2], &[5.0, -7.0])).unwrap();
    let y = g.linear(inp, zw, bias).unwrap();
    assert_eq!(g.value(y).data(), &[5.0, -7.0, 5.0, -7.0]);
    assert!(matches!(g.linear(inp, w, zb), Err(Error::Dimension(_))));
}

#[test]
fn reduction_and_resample_examples() {
    let mut g = Graph::new();
    let a = g.constant(t(&[1, 2], &[0.0, 0.0])).unwrap();
    let b = g.constant(t(&[1, 2], &[3.0, 4.0])).unwrap();
    let d = g.pairwise_l2(a, b).unwrap();
    assert_eq!(g.value(d).data(), &[5.0]);
    let l = g.l1_mean(b, b).unwrap();
    assert_eq!(g.value(l).item().unwrap(), 0.0);
    let c = g.constant(Tensor::full(&[2, 3, 4, 5], 1.75)).unwrap();
    let p = g.global_avg_pool(c).unwrap();
    assert_eq!(g.value(p).shape(), &[2, 3]);
    assert!(g.value(p).data().iter().all(|&v| v == 1.75));
    let three = g.constant(Tensor::zeros(&[1, 3])).unwrap();
    assert!(matches!(g.pairwise_l2(a, three), Err(Error::Dimension(_))));

    let ramp = g.constant(Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64)).unwrap();
    let dec = g.decimate(ramp, 2).unwrap();
    assert_eq!(g.value(dec).data(), &[0.0, 2.0, 8.0, 10.0]);
    let same = g.decimate(ramp, 1).unwrap();
    assert_eq!(g.value(same), g.value(ramp));
    assert!(matches!(g.decimate(ramp, 3), Err(Error::Dimension(_))));
    assert!(Tensor::new(vec![0], vec![]).is_err());
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[0.5, -1.0, 2.0]), true).unwrap();
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]), true).unwrap();
    let sq = g.mul(x, x).unwrap();
    let m = g.mean(sq).unwrap();
    g.backward(m).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
    assert!(matches!(g.backward(sq), Err(Error::Parameter(_))));
}

#[test]
fn graph_used_twice_doubles_gradient() {
    let x0 = Tensor::from_fn(&[1, 2, 5, 5], |i| ((i * 7) % 11) as f64 / 10.0 - 0.4);
    let w0 = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 5) % 13) as f64 / 13.0 - 0.5);
    let grad = |uses: usize| {
        let mut g = Graph::new();
        let x = g.leaf(x0.clone(), true).unwrap();
        let w = g.constant(w0.clone()).unwrap();
        let mut total = None;
        for _ in 0..uses {
            let y = g.conv2d(x, w, 1, 1).unwrap();
            let y = g.leaky_relu(y, 0.1).unwrap();
            let s = g.sum(y).unwrap();
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s).unwrap(),
            });
        }
        g.backward(total.unwrap()).unwrap();
        g.grad(x).unwrap()
    };
    let once = grad(1);
    let twice = grad(2);
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn grad_check_examples() {
    let x = Tensor::from_fn(&[6], |i| i as f64 * 0.3 - 1.0);
    assert!(grad_check(|g, v| g.sum(v), &x, 1e-4).unwrap() < 1e-8);
    assert!(matches!(grad_check(|g, v| g.scale(v, 2.0), &x, 1e-4), Err(Error::Parameter(_))));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let targets = Tensor::from_fn(&[8, 4], |_| rng.random_range(-1.0..1.0));
    let f0 = Tensor::from_fn(&[8, 4], |_| rng.random_range(-1.0..1.0));
    let err = grad_check(
        |g, f| {
            let t = g.constant(targets.clone())?;
            redsr::losses::loss_ed(g, f, t)
        },
        &f0,
        1e-3,
    )
    .unwrap();
    assert!(err < 1e-4, "energy distance grad error {err}");

    let w1 = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 5) % 13) as f64 / 13.0 - 0.45);
    let w2 = Tensor::from_fn(&[2, 3, 3, 3], |i| ((i * 11) % 7) as f64 / 7.0 - 0.4);
    let x0 = Tensor::from_fn(&[1, 2, 6, 6], |i| ((i * 7) % 11) as f64 / 10.0 - 0.4);
    let err = grad_check(
        |g, x| {
            let a = g.constant(w1.clone())?;
            let b = g.constant(w2.clone())?;
            let h = g.conv2d(x, a, 1, 1)?;
            let h = g.leaky_relu(h, 0.1)?;
            let h = g.conv2d(h, b, 2, 1)?;
            let h = g.mul(h, h)?;
            g.mean(h)
        },
        &x0,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-3, "conv net grad error {err}");
}

fn one_param(values: Vec<f64>, grad: Vec<f64>) -> ParamSet {
    let n = values.len();
    let mut p = ParamSet::new();
    p.insert("w", Tensor::new(vec![n], values).unwrap()).unwrap();
    p.get_mut("w").unwrap().grad = Some(Tensor::new(vec![n], grad).unwrap());
    p
}

#[test]
fn adam_first_step_is_signed_learning_rate() {
    let mut p = one_param(vec![1.0, -2.0, 0.5], vec![3.0, -0.2, 40.0]);
    let mut s = AdamState::new(&p, 1e-3).unwrap();
    adam_step(&mut p, &mut s).unwrap();
    let got = p.get("w").unwrap().value.data().to_vec();
    let want = [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3];
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    assert_eq!(s.step_count, 1);
    assert!(p.get("w").unwrap().grad.is_none());
    assert!(matches!(adam_step(&mut p, &mut s), Err(Error::State(_))));
}

#[test]
fn adam_is_reproducible() {
    let run = || {
        let mut p = one_param(vec![0.1, 0.2], vec![0.3, -0.4]);
        let mut s = AdamState::new(&p, 0.01).unwrap();
        adam_step(&mut p, &mut s).unwrap();
        p.get_mut("w").unwrap().grad = Some(t(&[2], &[0.3, -0.4]));
        adam_step(&mut p, &mut s).unwrap();
        (p, s)
    };
    assert_eq!(run(), run());
}

fn small_ints(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-4i32..=4).prop_map(f64::from), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_reference_on_integers(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 3usize..9, w in 3usize..9, k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3, pad in 0usize..3, seed in any::<u64>(),
    ) {
        prop_assume!(k <= h + 2 * pad && k <= w + 2 * pad);
        let mut rng = seed;
        let mut next = move || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) % 9) as f64 - 4.0
        };
        let x = Tensor::from_fn(&[n, cin, h, w], |_| next());
        let wt = Tensor::from_fn(&[cout, cin, k, k], |_| next());
        prop_assert_eq!(conv(&x, &wt, stride, pad), naive_conv(&x, &wt, stride, pad));
    }

    #[test]
    fn adam_zero_gradient_is_noop(
        values in small_ints(5), warm in small_ints(5), lr in 1e-5f64..1.0, steps in 0usize..4,
    ) {
        let mut p = one_param(values.clone(), warm.clone());
        let mut s = AdamState::new(&p, lr).unwrap();
        for _ in 0..steps {
            p.get_mut("w").unwrap().grad = Some(Tensor::new(vec![5], warm.clone()).unwrap());
            adam_step(&mut p, &mut s).unwrap();
        }
        let before = p.get("w").unwrap().value.clone();
        let moments = (s.first_moment.clone(), s.second_moment.clone());
        p.get_mut("w").unwrap().grad = Some(Tensor::zeros(&[5]));
        adam_step(&mut p, &mut s).unwrap();
        prop_assert_eq!(&p.get("w").unwrap().value, &before);
        prop_assert_eq!((s.first_moment.clone(), s.second_moment.clone()), moments);
    }

    #[test]
    fn upsample_then_decimate_is_identity(
        n in 1usize..3, c in 1usize..3, h in 1usize..6, w in 1usize..6, s in 1usize..4,
        data in prop::collection::vec(-10.0f64..10.0, 180),
    ) {
        let x = Tensor::new(vec![n, c, h, w], data[..n * c * h * w].to_vec()).unwrap();
        let mut g = Graph::new();
        let v = g.constant(x.clone()).unwrap();
        let up = g.nn_upsample(v, s).unwrap();
        let back = g.decimate(up, s).unwrap();
        prop_assert_eq!(g.value(back), &x);
    }

    #[test]
    fn rdt_round_trip(
        shape in prop::collection::vec(1usize..5, 1..5),
        data in prop::collection::vec(any::<f64>(), 256),
    ) {
        let n: usize = shape.iter().product();
        let x = Tensor::new(shape, data[..n].to_vec()).unwrap();
        let mut buf = Vec::new();
        redsr::tensor::write_rdt(&mut buf, &x).unwrap();
        let back = redsr::tensor::read_rdt(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn elementwise_ops_pass_grad_check(data in prop::collection::vec(0.2f64..1.5, 8), sign in prop::collection::vec(any::<bool>(), 8)) {
        let x = Tensor::new(vec![8], data.iter().zip(&sign).map(|(v, s)| if *s { *v } else { -*v }).collect()).unwrap();
        let other = Tensor::from_fn(&[8], |i| 1.5 + i as f64 * 0.1);
        let err = grad_check(|g, v| {
            let o = g.constant(other.clone())?;
            let a = g.mul(v, o)?;
            let b = g.sub(a, v)?;
            let c = g.leaky_relu(b, 0.2)?;
            let d = g.exp(c)?;
            let e = g.scale(d, 0.7)?;
            g.sum(e)
        }, &x, 1e-5).unwrap();
        prop_assert!(err < 1e-4, "error {}", err);
    }
}

use proptest::prelude::*;
use redsr::losses::{loss_ed, loss_kl, modulation_coefficient, TargetDistribution, TargetKind};
use redsr::tensor::grad_check;
use redsr::{Graph, Tensor};

fn ed(f: &Tensor, t: &Tensor) -> f64 {
    let mut g = Graph::new();
    let a = g.constant(f.clone()).unwrap();
    let b = g.constant(t.clone()).unwrap();
    let l = loss_ed(&mut g, a, b).unwrap();
    g.value(l).item().unwrap()
}

fn set(rows: usize, dim: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * dim).prop_map(move |v| Tensor::new(vec![rows, dim], v).unwrap())
}

fn sized_pair() -> impl Strategy<Value = (Tensor, Tensor)> {
    (1usize..9, 1usize..6).prop_flat_map(|(b, d)| (set(b, d), set(b, d)))
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let (_, d) = t.dims2().unwrap();
    let data = perm.iter().flat_map(|&i| t.data()[i * d..(i + 1) * d].to_vec()).collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn energy_distance_of_a_set_with_itself_is_zero(x in (1usize..10, 1usize..6).prop_flat_map(|(b, d)| set(b, d))) {
        prop_assert!(ed(&x, &x).abs() < 1e-9);
    }

    #[test]
    fn energy_distance_is_nonnegative_for_equal_sizes((f, t) in sized_pair()) {
        prop_assert!(ed(&f, &t) >= -1e-9);
    }

    #[test]
    fn energy_distance_ignores_row_order((f, t) in sized_pair(), seed in any::<u64>()) {
        let b = f.shape()[0];
        let mut perm: Vec<usize> = (0..b).collect();
        perm.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let base = ed(&f, &t);
        let moved = ed(&permute_rows(&f, &perm), &permute_rows(&t, &perm));
        prop_assert!((base - moved).abs() <= 1e-12 * (1.0 + base.abs()));
    }

    #[test]
    fn interpolating_toward_target_decreases_energy(
        mut xs in prop::collection::vec(-3.0f64..3.0, 2..9),
        mut ys in prop::collection::vec(-3.0f64..3.0, 9),
    ) {
        let n = xs.len();
        ys.truncate(n);
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let y = Tensor::new(vec![n, 1], ys.clone()).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=200 {
            let a = k as f64 / 200.0;
            let f: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (1.0 - a) * x + a * y).collect();
            let e = ed(&Tensor::new(vec![n, 1], f).unwrap(), &y);
            prop_assert!(e <= prev + 1e-12, "rose at alpha {}: {} > {}", a, e, prev);
            prev = e;
        }
        prop_assert!(prev.abs() < 1e-12);
    }

    #[test]
    fn energy_distance_gradient_matches_differences(f in set(6, 3), t in set(5, 3)) {
        let err = grad_check(|g, v| {
            let tv = g.constant(t.clone())?;
            loss_ed(g, v, tv)
        }, &f, 1e-5).unwrap();
        // Coincident rows sit on the norm's kink; the draw makes them vanishingly rare.
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn kl_gradient_matches_differences(mu in set(3, 4), lv in set(3, 4)) {
        let err = grad_check(|g, v| {
            let l = g.constant(lv.clone())?;
            loss_kl(g, v, l)
        }, &mu, 1e-5).unwrap();
        prop_assert!(err < 1e-4);
        let err = grad_check(|g, v| {
            let m = g.constant(mu.clone())?;
            loss_kl(g, m, v)
        }, &lv, 1e-5).unwrap();
        prop_assert!(err < 1e-4);
    }

    #[test]
    fn modulation_strictly_decreases(a in 0.0f64..50.0, b in 0.0f64..50.0) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(modulation_coefficient(lo) > modulation_coefficient(hi));
    }
}

#[test]
fn modulation_endpoints() {
    assert_eq!(modulation_coefficient(0.0), 2.0);
    assert_eq!(modulation_coefficient(1.0), 1.0);
    assert!(modulation_coefficient(1e12) < 1e-11);
}

#[test]
fn targets_are_standardized() {
    for kind in [TargetKind::Gaussian, TargetKind::Uniform, TargetKind::Exponential] {
        let t = TargetDistribution { kind, dim: 4, seed: 3 }.sample(20_000).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.03, "{kind} mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "{kind} variance {var}");
    }
}

use proptest::prelude::*;
use redsr::degradation::add_noise;
use redsr::image::Image;
use redsr::metrics::{cluster_report, psnr, ssim, PSNR_CAP};
use redsr::synthetic;

fn image(side: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f64..1.0, 3 * side * side).prop_map(move |v| Image::new(side, side, 3, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_is_symmetric(a in image(12), b in image(12)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    }

    #[test]
    fn ssim_of_an_image_with_itself_is_one(a in image(16)) {
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_falls_as_noise_rises(seed in any::<u64>(), lo in 1.0f64..10.0, extra in 5.0f64..20.0) {
        let clean = synthetic::texture(seed, 0, 32, 32);
        let mut a = clean.clone();
        let mut b = clean.clone();
        add_noise(&mut a, lo, 7).unwrap();
        add_noise(&mut b, lo + extra, 7).unwrap();
        prop_assert!(psnr(&clean, &a).unwrap() > psnr(&clean, &b).unwrap());
    }

    #[test]
    fn cluster_accuracy_survives_rigid_motion(
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 12),
        angle in 0.0f64..6.28, shift in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let labels: Vec<String> = (0..12).map(|i| format!("c{}", i % 3)).collect();
        let reps: Vec<Vec<f64>> = pts.iter().enumerate()
            .map(|(i, p)| p.iter().enumerate().map(|(k, v)| v + if k == i % 3 { 2.0 } else { 0.0 }).collect())
            .collect();
        let (s, c) = angle.sin_cos();
        let moved: Vec<Vec<f64>> = reps.iter()
            .map(|p| vec![c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1], p[2] + shift[2]])
            .collect();
        let a = cluster_report(&reps, &labels).unwrap();
        let b = cluster_report(&moved, &labels).unwrap();
        prop_assert_eq!(a.accuracy, b.accuracy);
        prop_assert!((a.silhouette - b.silhouette).abs() < 1e-9);
    }
}

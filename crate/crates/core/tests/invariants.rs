use proptest::prelude::*;
use sldm::io::png::{read_gray, write_gray16};
use sldm::metrics::{psnr, ssim, SsimConfig};
use sldm::phantom::{generate_phantom_pair, hu_window, PhantomSpec};
use sldm::saem::{bilateral_filter, run_saem, BilateralConfig};
use sldm::sde::{build_schedule, optimal_reverse_step, ThetaProfile};
use sldm::structure::structural_fixed_point_check;
use sldm::ImageGrid;

fn profile() -> impl Strategy<Value = ThetaProfile> {
    prop_oneof![Just(ThetaProfile::Linear), Just(ThetaProfile::CosineFlipped)]
}

fn grid(n: usize) -> impl Strategy<Value = ImageGrid> {
    prop::collection::vec(0.0..1.0f64, n * n).prop_map(move |v| ImageGrid::new(n, n, 1, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedules_are_monotone_and_bounded(
        steps in 1usize..200,
        kappa2 in 0.1..20.0f64,
        lo in 1e-4..0.1f64,
        span in 0.0..0.5f64,
        p in profile(),
    ) {
        let s = build_schedule(steps, kappa2, p, lo, lo + span).unwrap();
        prop_assert_eq!(s.theta_bar(0), 0.0);
        for t in 1..=steps {
            prop_assert!(s.theta_bar(t) > s.theta_bar(t - 1));
            prop_assert!(s.variance(t) >= s.variance(t - 1));
            prop_assert!(s.variance(t) <= kappa2);
            let c = s.reverse_coefficients(t).unwrap();
            prop_assert!((0.0..1.0).contains(&c.state));
            prop_assert!(c.initial >= 0.0);
        }
    }

    #[test]
    fn reverse_step_zeroes_the_posterior_gradient(
        t in 2usize..=100,
        xt in -3.0..3.0f64,
        x0 in -1.0..2.0f64,
        mu in -1.0..2.0f64,
    ) {
        let s = build_schedule(100, 10.0, ThetaProfile::CosineFlipped, 0.005, 0.2).unwrap();
        let one = |v: f64| ImageGrid::filled(1, 1, 1, v);
        let x = optimal_reverse_step(&one(xt), &one(x0), &one(mu), &s, t).unwrap().data()[0];
        let m_prev = mu + (x0 - mu) * (-s.theta_bar(t - 1)).exp();
        let v_prev = s.variance(t - 1);
        let a = (-s.theta_prime(t)).exp();
        let v_step = s.kappa2() * (1.0 - a * a);
        let grad = (x - m_prev) / v_prev - a * (xt - mu - (x - mu) * a) / v_step;
        let scale = (x - m_prev).abs() / v_prev + (a * (xt - mu - (x - mu) * a) / v_step).abs();
        prop_assert!(grad.abs() <= 1e-9 * scale.max(1.0), "gradient {grad}");
    }

    #[test]
    fn structure_channels_are_a_fixed_point(bits in prop::collection::vec(any::<bool>(), 64), t in 1usize..=100) {
        let s = build_schedule(100, 10.0, ThetaProfile::CosineFlipped, 0.005, 0.2).unwrap();
        let g = ImageGrid::new(8, 8, 1, bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        prop_assert_eq!(structural_fixed_point_check(&g, &g, &s, t).unwrap(), 0.0);
    }

    #[test]
    fn bilateral_output_stays_in_the_input_range(img in grid(12)) {
        let out = bilateral_filter(&img, &BilateralConfig { sigma_space: 1.5, sigma_range: 0.2, radius: 3 }).unwrap();
        let (lo, hi) = img.min_max();
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn saem_grows_with_lambda_when_fill_dominates(mask in grid(10), gain in grid(10), l1 in 0.0..2.0f64, dl in 0.0..2.0f64) {
        let fill = mask.zip_map(&gain, |m, g| m + g).unwrap();
        let cfg = BilateralConfig { sigma_space: 1.0, sigma_range: 0.1, radius: 2 };
        let a = run_saem(&mask, &fill, l1, &cfg).unwrap().x_out;
        let b = run_saem(&mask, &fill, l1 + dl, &cfg).unwrap().x_out;
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| y >= &(x - 1e-12)));
        prop_assert_eq!(run_saem(&mask, &fill, 0.0, &cfg).unwrap().x_out, mask);
    }

    #[test]
    fn hu_window_is_monotone_into_the_unit_interval(
        mut raw in prop::collection::vec(-2000.0..4000.0f64, 16),
        level in -200.0..400.0f64,
        width in 10.0..2000.0f64,
    ) {
        raw.sort_by(f64::total_cmp);
        let w = hu_window(&ImageGrid::new(1, 16, 1, raw).unwrap(), level, width, -1024.0, 3071.0).unwrap();
        prop_assert!(w.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(w.data().windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(a in grid(16), b in grid(16)) {
        let cfg = SsimConfig::default();
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        let s = ssim(&a, &b, &cfg).unwrap();
        prop_assert!((s - ssim(&b, &a, &cfg).unwrap()).abs() < 1e-12);
        prop_assert!(s <= 1.0 + 1e-12);
    }
}

#[test]
fn phantoms_are_reproducible_with_binary_masks() {
    let spec = PhantomSpec { size: 32, ..PhantomSpec::default() };
    for seed in 0..8 {
        let p = generate_phantom_pair(&spec, seed).unwrap();
        assert_eq!(p, generate_phantom_pair(&spec, seed).unwrap());
        for m in [&p.vessel_mask, &p.bone_mask, &p.background_mask] {
            assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
        assert!(p.vessel_mask.data().iter().zip(p.background_mask.data()).all(|(a, b)| a * b == 0.0));
    }
}

#[test]
fn png_roundtrip_keeps_sixteen_bits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ramp.png");
    let img = ImageGrid::from_fn(9, 13, |r, c| (r * 13 + c) as f64 / 116.0);
    write_gray16(&path, &img).unwrap();
    let back = read_gray(&path).unwrap();
    let err = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 0.5 / 65535.0 + 1e-12, "{err}");
}

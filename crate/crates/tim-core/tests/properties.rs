//! Property tests over the calculus invariants.

use proptest::prelude::*;
use tim_core::oracle::DeltaDataOracle;
use tim_core::transition::{
    apply_transition, interval_weight, transition_coeffs, x_eps_prediction, TimeWarp,
    WeightKernel, WeightScheme,
};
use tim_core::transport::{coeffs, shift_timestep, TransportKind, TransportSpec};

fn transports() -> impl Strategy<Value = TransportKind> {
    prop_oneof![
        Just(TransportKind::OtFlowMatching),
        Just(TransportKind::TrigFlow),
        Just(TransportKind::Edm),
        Just(TransportKind::VpSde),
        Just(TransportKind::VeSde),
    ]
}

proptest! {
    #[test]
    fn shift_round_trips(t in 0.0f64..1.0, n in 0.1f64..100.0, m in 0.1f64..100.0) {
        let back = shift_timestep(shift_timestep(t, n, m), m, n);
        prop_assert!((back - t).abs() < 1e-12);
    }

    #[test]
    fn shift_monotone_and_bounded(a in 0.0f64..1.0, b in 0.0f64..1.0, ratio in 0.05f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let f_lo = shift_timestep(lo, 1.0, ratio);
        let f_hi = shift_timestep(hi, 1.0, ratio);
        prop_assert!(f_lo <= f_hi + 1e-15);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&f_lo));
    }

    #[test]
    fn coefficient_derivatives_match_fd(kind in transports(), u in 0.05f64..0.95) {
        let spec = TransportSpec::new(kind);
        let t = spec.t_min + u * (spec.t_max - spec.t_min);
        let h = 1e-5;
        let c = coeffs(&spec, t).unwrap();
        let p = coeffs(&spec, t + h).unwrap();
        let m = coeffs(&spec, t - h).unwrap();
        for (analytic, fp, fm) in [
            (c.d_alpha, p.alpha, m.alpha),
            (c.d_sigma, p.sigma, m.sigma),
            (c.d_alpha_hat, p.alpha_hat, m.alpha_hat),
            (c.d_sigma_hat, p.sigma_hat, m.sigma_hat),
        ] {
            let fd = (fp - fm) / (2.0 * h);
            prop_assert!((analytic - fd).abs() / analytic.abs().max(1e-8) < 1e-5);
        }
    }

    #[test]
    fn reconstruction_identity(
        kind in transports(),
        u in 0.01f64..0.99,
        x0 in -3.0f64..3.0,
        x1 in -3.0f64..3.0,
        f0 in -3.0f64..3.0,
        f1 in -3.0f64..3.0,
    ) {
        let spec = TransportSpec::new(kind);
        let t = spec.t_min + u * (spec.t_max - spec.t_min);
        let c = coeffs(&spec, t).unwrap();
        let x_t = [x0, x1];
        let f = [f0, f1];
        let (xh, eh) = x_eps_prediction(&x_t, &f, &spec, t).unwrap();
        for j in 0..2 {
            let back = c.alpha * xh[j] + c.sigma * eh[j];
            prop_assert!((back - x_t[j]).abs() < 1e-9, "{} vs {}", back, x_t[j]);
        }
    }

    #[test]
    fn transition_at_equal_times_is_identity(kind in transports(), u in 0.01f64..0.99) {
        let spec = TransportSpec::new(kind);
        let t = spec.t_min + u * (spec.t_max - spec.t_min);
        let tc = transition_coeffs(&spec, t, t).unwrap();
        prop_assert_eq!(tc.a, 1.0);
        prop_assert_eq!(tc.b, 0.0);
    }

    #[test]
    fn weight_positive_and_decreasing(
        u1 in 0.0f64..0.9,
        u2 in 0.0f64..0.9,
        sigma_data in 0.1f64..4.0,
        kernel_idx in 0usize..4,
        warp_idx in 0usize..3,
    ) {
        let kernel = [
            WeightKernel::Reciprocal,
            WeightKernel::SoftMinSnr,
            WeightKernel::Sqrt,
            WeightKernel::Square,
        ][kernel_idx];
        let warp = [TimeWarp::Identity, TimeWarp::Rational, TimeWarp::Tangent][warp_idx];
        let scheme = WeightScheme { kernel, warp, sigma_data };
        let r = 0.02;
        let (t_lo, t_hi) = if u1 <= u2 { (r + u1, r + u2) } else { (r + u2, r + u1) };
        let w_lo = interval_weight(t_lo, r, &scheme).unwrap();
        let w_hi = interval_weight(t_hi, r, &scheme).unwrap();
        prop_assert!(w_lo > 0.0 && w_hi > 0.0);
        prop_assert!(w_hi <= w_lo + 1e-12);
    }

    #[test]
    fn delta_oracle_transition_is_exact(
        u_t in 0.1f64..0.95,
        frac_r in 0.01f64..0.95,
        e0 in -2.0f64..2.0,
        e1 in -2.0f64..2.0,
    ) {
        // The exact transition function moves the state to the closed-form
        // trajectory point for every (t, r) pair and noise draw.
        for kind in [TransportKind::OtFlowMatching, TransportKind::TrigFlow] {
            let spec = TransportSpec::new(kind);
            let t = spec.t_min + u_t * (spec.t_max - spec.t_min);
            let r = spec.t_min + frac_r * (t - spec.t_min);
            let oracle = DeltaDataOracle::new(vec![0.4, -0.8], spec.clone());
            let eps = [e0, e1];
            let ct = coeffs(&spec, t).unwrap();
            let cr = coeffs(&spec, r).unwrap();
            let x_t: Vec<f64> = oracle
                .x0
                .iter()
                .zip(&eps)
                .map(|(&x, &e)| ct.alpha * x + ct.sigma * e)
                .collect();
            let f = oracle.exact_f(&eps, t, r).unwrap();
            let tc = transition_coeffs(&spec, t, r).unwrap();
            let got = apply_transition(&x_t, &f, &tc);
            for j in 0..2 {
                let want = cr.alpha * oracle.x0[j] + cr.sigma * eps[j];
                prop_assert!((got[j] - want).abs() < 1e-9);
            }
        }
    }
}

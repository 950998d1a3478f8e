//! Property tests over randomized inputs.

use proptest::prelude::*;
use ssd::linalg::project_simplex;
use ssd::problems::risk::{h_gamma, h_gamma_dual_prox};
use ssd::trace::{RunTrace, TimingMode, TraceRow};

proptest! {
    #[test]
    fn csv_round_trip_is_lossless(
        rows in prop::collection::vec(
            (0usize..1_000_000, -1e12f64..1e12, 0f64..1e12,
             prop::option::of(-1e12f64..1e12), 0f64..1e9),
            0..40,
        )
    ) {
        let trace = RunTrace::<f64> {
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, &(t, f_gap, dist_sq, q_gap, wall_ms))| TraceRow {
                    t: t + i, // keep t unique-ish; strictness is not required for parsing
                    f_gap,
                    dist_sq,
                    q_gap,
                    wall_ms,
                })
                .collect(),
            xbar: ndarray::arr1(&[0.0]),
            x_last: ndarray::arr1(&[0.0]),
        };
        let parsed = RunTrace::<f64>::parse_csv(&trace.to_csv(TimingMode::Real)).unwrap();
        prop_assert_eq!(parsed, trace.rows);
    }

    #[test]
    fn simplex_projection_is_feasible_and_idempotent(
        v in prop::collection::vec(-10f64..10.0, 1..12)
    ) {
        let p = project_simplex(&v);
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&x| x >= -1e-12));
        let pp = project_simplex(&p);
        for (a, b) in p.iter().zip(pp.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn huber_approximation_is_uniform(z in -50f64..50.0, gamma in 1e-6f64..10.0) {
        let h = h_gamma(z, gamma);
        let plus = z.max(0.0);
        prop_assert!(h <= plus + 1e-12);
        prop_assert!(plus <= h + gamma / 2.0 + 1e-12);
    }

    #[test]
    fn huber_dual_prox_minimizes_its_objective(
        y in -20f64..20.0,
        prev in 0f64..1.0,
        tau in 0f64..10.0,
        gamma in 1e-3f64..5.0,
        probe in 0f64..1.0,
    ) {
        let pi = h_gamma_dual_prox(y, prev, tau, gamma);
        prop_assert!((0.0..=1.0).contains(&pi));
        let obj = |p: f64| -p * y + gamma / 2.0 * p * p + tau / 2.0 * (p - prev) * (p - prev);
        prop_assert!(obj(pi) <= obj(probe) + 1e-9);
        prop_assert!(obj(pi) <= obj(0.0) + 1e-9);
        prop_assert!(obj(pi) <= obj(1.0) + 1e-9);
    }
}

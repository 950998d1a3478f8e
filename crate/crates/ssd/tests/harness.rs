//! Harness-level checks: experiment sweep shapes, summary invariances,
//! vanilla benchmark behaviour and restart horizon growth.

use ssd::engine::{run_restarted, run_ssd, RestartConfig, RestartMode};
use ssd::experiment::{cell_path, run_experiment, slope_estimate, ExperimentConfig, Summary};
use ssd::layer::*;
use ssd::linalg::dist_sq;
use ssd::policies::Regime;
use ssd::problem::{CompositionProblem, FeasibleSet, Regularizer};
use ssd::problems::*;
use ssd::rng::derive_seed;
use ssd::trace::{RunTrace, TimingMode};
use ssd::vanilla::{run_vanilla, VanillaForm, VanillaRegime};
use ssd::Vector;
use std::path::PathBuf;

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ssd-harness-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn single_cell_experiment_writes_one_csv_with_n_rows() {
    let dir = temp_dir("single");
    let cfg = ExperimentConfig {
        problem: "det3_smooth".into(),
        regime: None,
        horizons: vec![40],
        seeds: vec![0],
        master_seed: 5,
        out_dir: dir.clone(),
        timing: TimingMode::Zeroed,
        c_override: None,
        d0: None,
    };
    let summary = run_experiment(&cfg).unwrap();
    assert_eq!(summary.rows.len(), 1);
    assert_eq!(summary.rows[0].2, 1);
    let text = std::fs::read_to_string(cell_path(&dir, "det3_smooth", 40, 0)).unwrap();
    assert!(text.starts_with("t,f_gap,dist_sq,q_gap,wall_ms\n"));
    let rows = RunTrace::<f64>::parse_csv(&text).unwrap();
    assert_eq!(rows.len(), 40);
    // t strictly increasing
    assert!(rows.windows(2).all(|w| w[0].t < w[1].t));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn summary_has_one_median_row_per_horizon() {
    let dir = temp_dir("shape");
    let cfg = ExperimentConfig {
        problem: "two_layer_sto".into(),
        regime: None,
        horizons: vec![30, 60, 120],
        seeds: (0..5).collect(),
        master_seed: 6,
        out_dir: dir.clone(),
        timing: TimingMode::Zeroed,
        c_override: None,
        d0: None,
    };
    let summary = run_experiment(&cfg).unwrap();
    assert_eq!(summary.rows.len(), 3);
    assert!(summary.rows.iter().all(|&(_, _, cells)| cells == 5));
    let text = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    let parsed = Summary::parse_csv(&text).unwrap();
    assert_eq!(parsed, summary);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn summary_medians_are_invariant_to_seed_order() {
    let dir_a = temp_dir("perm-a");
    let dir_b = temp_dir("perm-b");
    let mk = |dir: &PathBuf, seeds: Vec<u64>| ExperimentConfig {
        problem: "two_layer_sto".into(),
        regime: None,
        horizons: vec![50],
        seeds,
        master_seed: 7,
        out_dir: dir.clone(),
        timing: TimingMode::Zeroed,
        c_override: None,
        d0: None,
    };
    let a = run_experiment(&mk(&dir_a, vec![0, 1, 2, 3])).unwrap();
    let b = run_experiment(&mk(&dir_b, vec![3, 1, 0, 2])).unwrap();
    assert_eq!(a, b);
    let _ = std::fs::remove_dir_all(&dir_a);
    let _ = std::fs::remove_dir_all(&dir_b);
}

#[test]
fn vanilla_det_benchmark_decreases_and_stays_weakly_dual() {
    let (p, r) = two_layer_sto_bench::<f64>(0.0).unwrap();
    let t = run_vanilla(
        &p,
        500,
        VanillaRegime::Convex,
        4,
        VanillaForm::Dual,
        Some(&r),
    )
    .unwrap();
    assert!(t.final_f_gap().unwrap() < t.rows[20].f_gap);
    for row in &t.rows {
        if let Some(q) = row.q_gap {
            assert!(q >= -1e-9, "weak duality violated: {q}");
        }
    }
}

#[test]
fn vanilla_sto_benchmark_halves_gap_per_quadrupled_horizon() {
    // O(1/sqrt(N)): the median gap at N=6400 is at most half the one at
    // N=1600 (same seeds as the acceptance criterion)
    let (p, r) = two_layer_sto_bench::<f64>(0.4).unwrap();
    let median_at = |n: usize| -> f64 {
        let mut gaps: Vec<f64> = (0..20u64)
            .map(|seed| {
                run_vanilla(
                    &p,
                    n,
                    VanillaRegime::Convex,
                    derive_seed(505, &[n as u64, seed]),
                    VanillaForm::Primal,
                    Some(&r),
                )
                .unwrap()
                .final_f_gap()
                .unwrap()
            })
            .collect();
        ssd::experiment::median(&mut gaps)
    };
    let g1600 = median_at(1600);
    let g6400 = median_at(6400);
    assert!(g6400 <= 0.5 * g1600, "median gaps {g1600} -> {g6400}");
}

#[test]
fn vanilla_strongly_convex_distance_envelope_is_non_increasing() {
    let (p, r) = two_layer_sto_strong_bench::<f64>(0.4, 1.0).unwrap();
    let horizons = [100usize, 400, 1600];
    let mut medians = Vec::new();
    for &n in &horizons {
        let mut dists: Vec<f64> = (0..10u64)
            .map(|seed| {
                let t = run_vanilla(
                    &p,
                    n,
                    VanillaRegime::StronglyConvex,
                    derive_seed(606, &[n as u64, seed]),
                    VanillaForm::Primal,
                    Some(&r),
                )
                .unwrap();
                dist_sq(&t.x_last, &r.x_star)
            })
            .collect();
        medians.push(ssd::experiment::median(&mut dists));
    }
    assert!(
        medians[1] <= medians[0] && medians[2] <= medians[1],
        "median distances must not increase: {medians:?}"
    );
    // and they follow the O(1/N) envelope: quadrupling N cuts the distance
    // by at least half
    assert!(medians[2] <= 0.5 * medians[1], "{medians:?}");
}

#[test]
fn composite_without_l1_matches_closed_form() {
    // A = 0 reduces to ridge regression; the solver hits the closed-form
    // minimizer to 1e-6 in deterministic mode
    let b_mat = ssd::Matrix::from_shape_vec((2, 2), vec![1.0, 0.2, 0.0, 1.5]).unwrap();
    let b_vec = ndarray::arr1(&[0.5, -0.3]);
    let p = make_composite_problem(
        ssd::Matrix::zeros((1, 2)),
        b_mat.clone(),
        b_vec.clone(),
        5.0,
        CompositeNoise::default(),
    )
    .unwrap();
    let x_star = ssd::problems::composite::solve_linear(&b_mat, &b_vec).unwrap();
    let r = ReferenceSolution::analytic(&p, x_star.clone());
    let t = run_ssd(&p, 4000, Regime::DetConvex, 2, Some(&r)).unwrap();
    assert!(
        t.final_f_gap().unwrap() <= 1e-6,
        "gap {}",
        t.final_f_gap().unwrap()
    );
    assert!(dist_sq(&t.xbar, &x_star) <= 1e-6);
}

#[test]
fn restart_horizons_grow_geometrically_with_nonsmooth_layers() {
    // with k_n > 0 the per-epoch horizon follows the 1/(alpha eps) terms
    let n = 3;
    let x_hat = ndarray::arr1(&[0.4, -0.2, 0.3]);
    let mut comps = Vec::new();
    let mut rows = Vec::new();
    let slopes = [
        ndarray::arr1(&[1.0, 0.5, -0.3]),
        ndarray::arr1(&[-0.4, 1.0, 0.6]),
    ];
    for a in slopes {
        let b: f64 = a.dot(&x_hat);
        let na = ssd::linalg::norm2(&a);
        rows.push(ssd::problems::synthetic::RowBound {
            m_pi: na,
            m_f: na * 3.0 + b.abs(),
            l: 0.0,
            sigma_f: 0.0,
            sigma_pi: 0.0,
        });
        comps.push(LayerComponent::Nonsmooth(abs_residual_nonsmooth(a, b)));
    }
    let inner = LayerSpec::new(
        comps,
        n,
        Oracle::exact(2),
        ssd::problems::synthetic::aggregate_bounds(&rows, 0.0),
    )
    .unwrap();
    let ones = Vector::from_elem(2, 1.0);
    let outer = LayerSpec::new(
        vec![LayerComponent::Affine(AffineComponent { a: ones, b: 0.0 })],
        2,
        Oracle::exact(1),
        ssd::problems::synthetic::aggregate_bounds(
            &[ssd::problems::synthetic::RowBound {
                m_pi: 2.0f64.sqrt(),
                m_f: 10.0,
                l: 0.0,
                sigma_f: 0.0,
                sigma_pi: 0.0,
            }],
            0.0,
        ),
    )
    .unwrap();
    let p = CompositionProblem::new(
        vec![outer, inner],
        FeasibleSet::Ball {
            center: Vector::zeros(n),
            radius: 3.0,
        },
        Regularizer::quadratic(1.0, x_hat.clone()),
    )
    .unwrap();
    let r = ReferenceSolution::analytic(&p, x_hat);
    let x0 = p.feasible.center();
    let d0 = 0.5 * dist_sq(&x0, &r.x_star) * 1.1;
    let run = run_restarted(
        &p,
        &RestartConfig {
            mode: RestartMode::DistanceHalving,
            epochs: 6,
            horizons: vec![],
            d0,
        },
        Regime::DetStronglyConvex,
        1,
        Some(&r),
    )
    .unwrap();
    let h = &run.epoch_horizons;
    // terminal epochs are dominated by the 2N M~^2/c term: halving the
    // distance target doubles the horizon
    assert!(
        h[5] >= 2 * h[3] && h[4] >= 2 * h[2],
        "horizons failed to grow geometrically: {h:?}"
    );
    // and the restarts do contract the distance
    let d_first = run.epoch_traces[0].rows.last().unwrap().dist_sq;
    let d_last = run.epoch_traces[5].rows.last().unwrap().dist_sq;
    assert!(d_last < 0.2 * d_first);
}

#[test]
fn slope_command_path_round_trips() {
    let summary = Summary {
        rows: vec![(100, 1.0e-2, 4), (200, 5.0e-3, 4), (400, 2.5e-3, 4)],
    };
    let text = summary.to_csv();
    let parsed = Summary::parse_csv(&text).unwrap();
    let pts: Vec<(usize, f64)> = parsed.rows.iter().map(|&(n, g, _)| (n, g)).collect();
    let slope = slope_estimate(&pts).unwrap();
    assert!((slope + 1.0).abs() < 1e-12);
}

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

use shape_newton::experiments::{
    discharge_check, far_field_deviation, run_manufactured_dirichlet, run_submerged_triangle,
    solitary_bound_check, sweep_y0, symmetry_defect, TriangleCase,
};
use shape_newton::newton::{NewtonConfig, Status};

fn converged(case: &TriangleCase) -> shape_newton::experiments::TriangleRun {
    let run = run_submerged_triangle(case, &NewtonConfig::default()).unwrap();
    assert_eq!(run.status, Status::Converged, "{case:?}");
    run
}

#[test]
fn manufactured_case_recovers_exact_surface() {
    let (state, status) = run_manufactured_dirichlet(40, &NewtonConfig::default()).unwrap();
    assert_eq!(status, Status::Converged);
    let worst = state
        .fs
        .stations
        .iter()
        .zip(&state.fs.eta)
        .map(|(x, e)| (e - (x + 1.0)).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst:e}");
}

#[test]
fn steep_triangle_gives_single_hump() {
    let run = converged(&TriangleCase::new(2.0, FRAC_PI_4, 0.5, 80));
    let fs = &run.state.fs;
    // A steep apex excites a small two-station oscillation near the crest;
    // the (1, 2, 1) average removes it and leaves the hump itself.
    let n = fs.len();
    let smooth: Vec<f64> = (1..n - 1)
        .map(|j| 0.25 * (fs.eta[j - 1] + 2.0 * fs.eta[j] + fs.eta[j + 1]))
        .collect();
    let height = run.y0 - 1.0;
    let wiggle = (1..n - 1)
        .map(|j| (fs.eta[j] - smooth[j - 1]).abs())
        .fold(0.0, f64::max);
    assert!(
        wiggle < 0.02 * height,
        "grid oscillation {wiggle} against hump {height}"
    );
    let crest = (0..smooth.len())
        .max_by(|&a, &b| smooth[a].total_cmp(&smooth[b]))
        .unwrap();
    assert!(fs.stations[crest + 1].abs() < 1e-12);
    for (j, pair) in smooth.windows(2).enumerate() {
        let (xa, xb) = (fs.stations[j + 1], fs.stations[j + 2]);
        if xb <= 0.0 && xa >= -2.0 {
            assert!(pair[1] >= pair[0], "rising side at x = {xa}");
        }
        if xa >= 0.0 && xb <= 2.0 {
            assert!(pair[1] <= pair[0], "falling side at x = {xa}");
        }
    }
    assert!(solitary_bound_check(&run.state, 2.0));
}

#[test]
fn crest_drops_with_froude_number() {
    let slow = converged(&TriangleCase::new(1.4, FRAC_PI_8, 0.5, 80));
    let fast = converged(&TriangleCase::new(2.0, FRAC_PI_8, 0.5, 80));
    assert!(fast.y0 < slow.y0, "{} vs {}", fast.y0, slow.y0);
}

#[test]
fn vanishing_obstacle_leaves_uniform_stream() {
    let run = converged(&TriangleCase::new(2.0, FRAC_PI_8, 0.01, 80));
    assert!(run.y0 - 1.0 <= 1e-3 && run.y0 >= 1.0);
}

#[test]
fn single_row_sweep_matches_direct_run() {
    let cfg = NewtonConfig::default();
    let sweep = sweep_y0(&[2.5], &[FRAC_PI_8], &[0.3], 40, &cfg).unwrap();
    let run = run_submerged_triangle(&TriangleCase::new(2.5, FRAC_PI_8, 0.3, 40), &cfg).unwrap();
    let row = &sweep.rows[0];
    assert_eq!(sweep.rows.len(), 1);
    assert_eq!(row.y0.to_bits(), run.y0.to_bits());
    assert_eq!(row.iterations, run.state.k);
    assert_eq!(row.status, run.status.name());
}

#[test]
fn sweep_rows_follow_list_order_and_flag_bad_cases() {
    let cfg = NewtonConfig::default();
    let sweep = sweep_y0(&[3.0, 2.0], &[FRAC_PI_8], &[0.3, 5.0], 40, &cfg).unwrap();
    let keys: Vec<(f64, f64)> = sweep.rows.iter().map(|r| (r.froude, r.w0)).collect();
    assert_eq!(keys, vec![(3.0, 0.3), (3.0, 5.0), (2.0, 0.3), (2.0, 5.0)]);
    assert!(sweep.rows[0].converged() && sweep.rows[2].converged());
    assert_eq!(sweep.rows[1].status, "invalid");
    assert!(sweep.rows[3].y0.is_nan());
    assert_eq!(sweep.slice_in_froude(FRAC_PI_8, 0.3).len(), 2);
}

#[test]
fn discharge_error_shrinks_under_refinement() {
    let mut errs = Vec::new();
    for n in [40, 80, 160] {
        let case = TriangleCase::new(3.0, FRAC_PI_8, 0.3, n);
        let run = converged(&case);
        errs.push(discharge_check(&run.state, &case.problem().unwrap()).rel_err);
    }
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    assert!(errs[2] <= 1e-3);
}

#[test]
fn far_field_returns_to_unit_depth() {
    let cfg = NewtonConfig::default();
    for f in [2.0, 2.5, 3.0] {
        for w0 in [0.1, 0.3] {
            let run =
                run_submerged_triangle(&TriangleCase::new(f, FRAC_PI_8, w0, 40), &cfg).unwrap();
            assert_eq!(run.status, Status::Converged);
            assert!(far_field_deviation(&run.state) <= 1e-2);
        }
    }
}

// The inflow and outflow conditions differ, so symmetry is only reported.
#[test]
fn symmetry_defect_is_reported() {
    for n in [40, 80] {
        let run = converged(&TriangleCase::new(3.0, FRAC_PI_8, 0.3, n));
        let d = symmetry_defect(&run.state, 2.0);
        assert!(d.is_finite());
        println!("N={n} symmetry defect on |x| <= 2: {d:.3e}");
    }
}

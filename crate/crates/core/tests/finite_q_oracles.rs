use std::sync::{Arc, OnceLock};

use lambda_omega::finite_q::{
    continuation_sweep, r_min, solve_bvp, solve_with_policy, FiniteQOptions, FiniteQSolution, Init, InnerBc, RPolicy,
    SweepEntry,
};
use lambda_omega::fit::{fit_exponential, leave_one_out};
use lambda_omega::grid::{build_grid, line_fit, Stretch};
use lambda_omega::model::ModelFunctions;
use lambda_omega::series_engine::{run_series, SeriesOptions, SeriesSolution};

fn gl() -> ModelFunctions {
    ModelFunctions::ginzburg_landau(1)
}

fn series() -> &'static SeriesSolution {
    static CELL: OnceLock<SeriesSolution> = OnceLock::new();
    CELL.get_or_init(|| {
        let grid = Arc::new(build_grid(1e-3, 100.0, 4000, Stretch::default()).unwrap());
        run_series(&gl(), &grid, &SeriesOptions { k_max: 1, ..Default::default() }).unwrap()
    })
}

fn sweep() -> &'static Vec<SweepEntry> {
    static CELL: OnceLock<Vec<SweepEntry>> = OnceLock::new();
    CELL.get_or_init(|| {
        let qs: Vec<f64> = (0..7).map(|i| 0.5 - 0.05 * i as f64).collect();
        continuation_sweep(&gl(), &qs, RPolicy::default(), series(), &FiniteQOptions::default()).unwrap()
    })
}

fn solved() -> Vec<&'static FiniteQSolution> {
    sweep().iter().map(|e| e.result.as_ref().unwrap()).collect()
}

fn at(q: f64, r: f64, opts: &FiniteQOptions) -> FiniteQSolution {
    solve_bvp(&gl(), q, r, Init::Series(series()), opts).unwrap()
}

#[test]
fn sweep_converges_everywhere() {
    for e in sweep() {
        let s = e.result.as_ref().unwrap();
        assert!(s.collocation_residual < 1e-9, "q={}: {}", e.q, s.collocation_residual);
        assert!(s.bc_res_max() <= 1e-8, "q={}: {:?}", e.q, s.bc_residuals);
        assert!(s.warnings.iter().all(|w| !w.starts_with("tail-sensitive")), "q={}: {:?}", e.q, s.warnings);
    }
}

#[test]
fn flux_identity_holds() {
    for s in solved() {
        let d = s.propv_defect(&gl());
        assert!(d <= 1e-6, "q={}: {d:e}", s.q);
    }
}

#[test]
fn outer_conditions_hold() {
    let m = gl();
    for s in solved() {
        let (f, v) = (s.f.last(), s.v.last());
        assert!((m.lambda(f) - v * v).abs() <= 1e-8, "q={}", s.q);
        assert!((s.omega - m.omega(f)).abs() <= 1e-8, "q={}", s.q);
        // for this model Ω + 1 = 1 − f∞² = v∞²
        assert!((s.omega + 1.0 - s.v_inf.value.powi(2)).abs() <= 1e-8, "q={}", s.q);
    }
}

#[test]
fn phase_keeps_its_sign() {
    for s in solved() {
        assert!(s.v.values().iter().skip(1).all(|&v| v > 0.0), "q={}", s.q);
        assert!(s.f.values().iter().all(|&f| f > 0.0 && f < 1.0), "q={}", s.q);
    }
}

#[test]
fn far_field_speed_is_insensitive_to_radius() {
    let opts = FiniteQOptions::default();
    let (a, b) = (at(0.4, 100.0, &opts), at(0.4, 200.0, &opts));
    let rel = (a.v_inf.value / b.v_inf.value - 1.0).abs();
    assert!(rel <= 0.01, "{} vs {}", a.v_inf.value, b.v_inf.value);
}

#[test]
fn collocation_converges_at_fourth_order() {
    let solve = |n: usize| {
        let mut opts = FiniteQOptions {
            nodes: Some(n),
            ..FiniteQOptions::default()
        };
        opts.newton.tol = 1e-14;
        let s = at(0.4, 100.0, &opts);
        (s.omega, s.v_inf.value)
    };
    let (a, b, c) = (solve(400), solve(800), solve(1600));
    for (coarse, fine) in [((a.0 - c.0).abs(), (b.0 - c.0).abs()), ((a.1 - c.1).abs(), (b.1 - c.1).abs())] {
        // against the 4N reference, order 4 gives a ratio of 17
        let order = (coarse / fine).log2();
        assert!((3.5..=4.6).contains(&order), "order {order} ({coarse:e}, {fine:e})");
    }
}

#[test]
fn short_domain_at_small_q_warns() {
    let s = at(0.15, 100.0, &FiniteQOptions::default());
    assert!(s.warnings.iter().any(|w| w.starts_with("tail-sensitive")), "{:?}", s.warnings);
}

#[test]
fn frequency_shift_is_flat_in_q() {
    let pts: Vec<(f64, f64)> = solved().iter().map(|s| (s.q.ln(), (s.omega + 1.0).abs().ln())).collect();
    let slopes: Vec<f64> = pts
        .windows(4)
        .map(|w| {
            let (x, y): (Vec<f64>, Vec<f64>) = w.iter().copied().unzip();
            line_fit(&x, &y).1
        })
        .collect();
    // windows move toward smaller q, where the local power must keep growing
    assert!(slopes.windows(2).all(|w| w[1] > w[0]), "{slopes:?}");
}

#[test]
fn fit_is_stable_against_leaving_points_out() {
    let pts: Vec<(f64, f64)> = solved().iter().map(|s| (s.q, s.v_inf.value)).collect();
    let fit = fit_exponential(&pts).unwrap();
    for (q, b) in leave_one_out(&pts).unwrap() {
        assert!((b - fit.b).abs() < fit.ci95_half_width(), "q={q}: {b} vs {}", fit.b);
    }
}

#[test]
fn extrapolated_tail_agrees_with_boundary_value() {
    for s in solved() {
        assert!(!s.v_inf.low_confidence, "q={}", s.q);
        assert!(s.v_inf.uncertainty <= 0.05 * s.v_inf.value, "q={}: {:?}", s.q, s.v_inf);
    }
}

#[test]
fn zero_inner_condition_gives_same_far_field() {
    let stub = at(0.4, 100.0, &FiniteQOptions::default());
    let zero = at(
        0.4,
        100.0,
        &FiniteQOptions {
            inner_bc: InnerBc::Zero,
            ..FiniteQOptions::default()
        },
    );
    assert!((stub.v_inf.value / zero.v_inf.value - 1.0).abs() < 1e-3);
}

#[test]
fn warm_start_from_neighbour_matches_cold_start() {
    let model = gl();
    let cold = solve_with_policy(&model, 0.35, RPolicy::Fixed { r: 200.0 }, series(), &FiniteQOptions::default()).unwrap();
    let prev = at(0.4, 200.0, &FiniteQOptions::default());
    let warm = solve_bvp(&model, 0.35, 200.0, Init::Previous(&prev), &FiniteQOptions::default()).unwrap();
    assert!((cold.omega - warm.omega).abs() < 1e-10);
    assert!((cold.v_inf.value - warm.v_inf.value).abs() < 1e-10);
}

#[test]
fn invalid_requests_are_rejected() {
    let opts = FiniteQOptions::default();
    let s = series();
    assert!(solve_bvp(&gl(), 0.0, 100.0, Init::Series(s), &opts).is_err());
    assert!(solve_bvp(&gl(), 0.7, 100.0, Init::Series(s), &opts).is_err());
    assert!(solve_bvp(&gl(), 0.05, r_min(0.05) - 1.0, Init::Series(s), &opts).is_err());
    assert!(solve_bvp(&ModelFunctions::ginzburg_landau(0), 0.3, 100.0, Init::Series(s), &opts).is_err());
    assert!(continuation_sweep(&gl(), &[0.2, 0.3], RPolicy::default(), s, &opts).is_err());
}

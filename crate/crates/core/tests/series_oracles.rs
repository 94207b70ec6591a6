use std::sync::{Arc, OnceLock};

use lambda_omega::grid::{build_grid, estimate_order, RadialGrid, Stretch};
use lambda_omega::model::ModelFunctions;
use lambda_omega::series_engine::{run_series, SeriesOptions, SeriesSolution};

fn grid(r_max: f64, n: usize) -> Arc<RadialGrid> {
    Arc::new(build_grid(1e-3, r_max, n, Stretch::default()).unwrap())
}

fn opts(k_max: usize) -> SeriesOptions {
    SeriesOptions {
        k_max,
        ..SeriesOptions::default()
    }
}

/// GL, n = 1, K = 3 on the production grid.
fn production() -> &'static SeriesSolution {
    static CELL: OnceLock<SeriesSolution> = OnceLock::new();
    CELL.get_or_init(|| run_series(&ModelFunctions::ginzburg_landau(1), &grid(4000.0, 22000), &opts(3)).unwrap())
}

/// `b₂ = f₁v₀² + 2f₀v₀v₁ − [q⁴]F(f₀ + q²f₁)` written out for `F = f − a f² − b f³`.
fn check_b2(model: ModelFunctions, a: f64, b: f64) {
    let sol = run_series(&model, &grid(100.0, 2000), &opts(2)).unwrap();
    let [b2, b2p, _] = sol.build_bk(2).unwrap();
    let (o0, o1) = (&sol.orders[0], &sol.orders[1]);
    let mut worst: f64 = 0.0;
    for i in 0..b2.len() {
        let (f0, f0p, f1, f1p) = (o0.f.at(i), o0.fp.at(i), o1.f.at(i), o1.fp.at(i));
        let (v0, v0p, v1, v1p) = (o0.v.at(i), o0.vp.at(i), o1.v.at(i), o1.vp.at(i));
        let want = f1 * v0 * v0 + 2.0 * f0 * v0 * v1 + a * f1 * f1 + 3.0 * b * f0 * f1 * f1;
        let want_p = f1p * v0 * v0 + 2.0 * f1 * v0 * v0p + 2.0 * (f0p * v0 * v1 + f0 * v0p * v1 + f0 * v0 * v1p)
            + 2.0 * a * f1 * f1p
            + 3.0 * b * (f0p * f1 * f1 + 2.0 * f0 * f1 * f1p);
        worst = worst.max((b2.at(i) - want).abs()).max((b2p.at(i) - want_p).abs());
    }
    assert!(worst <= 1e-9, "{}: {worst:e}", model.name());
}

#[test]
fn second_order_source_matches_expansion() {
    check_b2(ModelFunctions::ginzburg_landau(1), 0.0, 1.0);
    check_b2(ModelFunctions::greenberg(1), 1.0, 0.0);
}

#[test]
fn e_of_b1_decays_like_r_to_minus_three() {
    let sol = production();
    let [b, bp, bpp] = sol.orders[1].b.clone().unwrap();
    let e = sol.kernel.as_ref().unwrap().apply_e(&b, &bp, &bpp);
    let est = estimate_order(&e);
    assert!(est.l_hat.unwrap() >= 3.0 - 0.3, "{est:?}");
}

#[test]
fn order_table_holds() {
    let sol = production();
    let n = f64::from(sol.model.n());
    for k in 1..=3 {
        let (fe, ve) = sol.order_estimates(k);
        assert!((fe.l_hat.unwrap() - 2.0).abs() <= 0.3, "f{k}: {fe:?}");
        assert!((fe.m_hat.unwrap() - n).abs() <= 0.3, "f{k}: {fe:?}");
        assert!((ve.l_hat.unwrap() - 1.0).abs() <= 0.3, "v{k}: {ve:?}");
        if fe.tail_residual < 0.1 {
            assert_eq!(fe.j_hat, Some(2 * k as u32), "f{k}");
        }
        if ve.tail_residual < 0.1 {
            assert_eq!(ve.j_hat, Some(2 * k as u32 + 1), "v{k}");
        }
    }
}

#[test]
fn source_origin_orders() {
    let sol = production();
    let n = f64::from(sol.model.n());
    for k in 1..=3 {
        let o = &sol.orders[k];
        let b = estimate_order(&o.b.as_ref().unwrap()[0]);
        assert!(b.m_hat.unwrap() >= n + 1.0 - 0.3, "b{k}: {b:?}");
        let c = estimate_order(&o.c.as_ref().unwrap()[0]);
        assert!(c.m_hat.unwrap() >= n - 0.3, "c{k}: {c:?}");
    }
}

#[test]
fn phase_source_vanishes_faster_than_r_to_the_n() {
    // the rⁿ terms of −f₁(Ω₀ − ω + v₀′ + v₀/r) and −2f₁′v₀ cancel, leaving f₀f₁ω′(f₀)
    let sol = production();
    let c = estimate_order(&sol.orders[1].c.as_ref().unwrap()[0]);
    assert!((c.m_hat.unwrap() - 3.0).abs() <= 0.3, "{c:?}");
    let gb = run_series(&ModelFunctions::greenberg(1), &grid(400.0, 6000), &opts(1)).unwrap();
    let c = estimate_order(&gb.orders[1].c.as_ref().unwrap()[0]);
    assert!((c.m_hat.unwrap() - 2.0).abs() <= 0.3, "{c:?}");
}

#[test]
fn frequency_corrections_vanish_and_are_grid_converged() {
    let sol = production();
    assert!(sol.theorem_violations().is_empty(), "{:?}", sol.theorem_violations());
    let doubled = run_series(&sol.model, &grid(8000.0, 24000), &opts(3)).unwrap();
    for k in 1..=3 {
        let (a, b) = (sol.orders[k].omega, doubled.orders[k].omega);
        assert!((b - a).abs() <= a.abs() + sol.omega_tol, "k={k}: {a:e} -> {b:e}");
    }
}

#[test]
fn small_domain_is_reported_as_violation() {
    let sol = run_series(&ModelFunctions::ginzburg_landau(1), &grid(10.0, 400), &opts(3)).unwrap();
    assert!(!sol.theorem_violations().is_empty());
}

#[test]
fn truncation_residuals_scale_with_q() {
    let sol = production();
    let r0 = sol.residual_order_check(0.1, 0).unwrap();
    assert!((r0.amplitude_ratio / 4.0 - 1.0).abs() <= 0.3, "{r0:?}");
    // the leading phase equation is solved exactly by v₀
    assert!(r0.phase.0 <= 1e-12 && r0.phase.1 <= 1e-12, "{r0:?}");
    for (k, band) in [(1, 0.3), (2, 0.4)] {
        let r = sol.residual_order_check(0.1, k).unwrap();
        assert!((r.amplitude_ratio / r.expected_amplitude - 1.0).abs() <= band, "{r:?}");
        assert!((r.phase_ratio / r.expected_phase - 1.0).abs() <= band, "{r:?}");
    }
}

#[test]
fn residuals_are_even_in_q() {
    let sol = production();
    for k in 0..=3 {
        let (a, p) = sol.residuals_at(0.1, k).unwrap();
        let (am, pm) = sol.residuals_at(-0.1, k).unwrap();
        assert_eq!(a, am);
        assert_eq!(p, pm);
    }
}

#[test]
fn leading_phase_decays_like_log_over_r() {
    let est = estimate_order(&production().orders[0].v);
    assert!((est.l_hat.unwrap() - 1.0).abs() <= 0.3, "{est:?}");
    assert_eq!(est.j_hat, Some(1));
}

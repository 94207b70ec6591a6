//! Randomized invariants of the building blocks.

use std::sync::Arc;

use proptest::prelude::*;

use lambda_omega::finite_q::extrapolate_tail;
use lambda_omega::fit::fit_exponential;
use lambda_omega::grid::{build_grid, GridFunction, RadialGrid, Stretch};
use lambda_omega::jet::{Jet, Series};
use lambda_omega::model::{validate_hypotheses, ModelSpec};
use lambda_omega::series_engine::tail_constant;
use lambda_omega::specfun::bessel_quad;

fn mesh(r_max: f64, n: usize) -> Arc<RadialGrid> {
    Arc::new(build_grid(1e-3, r_max, n, Stretch::default()).unwrap())
}

/// λ = 1 − a x − (1 − a) x², ω = −x²
fn quadratic_model(a: f64) -> lambda_omega::model::ModelFunctions {
    ModelSpec {
        name: "quadratic".into(),
        lambda_poly: vec![1.0, -a, a - 1.0],
        omega_poly: vec![0.0, 0.0, -1.0],
        n: 1,
    }
    .build()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn df_is_decreasing_and_bounded(a in 0.0f64..1.0) {
        let m = quadratic_model(a);
        prop_assert!(validate_hypotheses(&m, 150).all_pass());
        let d = m.d();
        prop_assert!((m.df(1.0) + d).abs() < 1e-12);
        prop_assert!((m.df(0.0) - 1.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 0..=500 {
            let x = i as f64 / 500.0;
            let df = m.df(x);
            prop_assert!(df < prev);
            prev = df;
            let p = df / d + 1.0;
            prop_assert!(p >= 0.0 && p < 1.0 / d + 1.0 + 1e-12);
            if i < 500 {
                prop_assert!(p > 0.0);
            }
        }
    }

    #[test]
    fn wronskian_at_random_points(n in 0u32..6, e in -3.0f64..2.845) {
        let s = 10f64.powf(e);
        let q = bessel_quad(n, s, false).unwrap();
        prop_assert!((q.wronskian() - 1.0).abs() <= 1e-12);
        let qs = bessel_quad(n, s, true).unwrap();
        prop_assert!((qs.wronskian() - 1.0).abs() <= 1e-12);
        prop_assert!(((qs.i * s.exp() - q.i) / q.i).abs() < 1e-13);
        prop_assert!(((qs.k * (-s).exp() - q.k) / q.k).abs() < 1e-13);
    }

    #[test]
    fn bessel_monotone(n in 0u32..6, e in -3.0f64..2.5, step in 1e-3f64..0.2) {
        let s = 10f64.powf(e);
        let (a, b) = (bessel_quad(n, s, true).unwrap(), bessel_quad(n, s * (1.0 + step), true).unwrap());
        let growth = (s * step).exp();
        prop_assert!(b.i * growth > a.i || n > 0 && s < 1e-2);
        prop_assert!(b.k < a.k * growth);
    }

    #[test]
    fn derivative_of_cumulative_integral(p in 0i32..3, a in 0.1f64..1.0, b in 0.01f64..0.2, c in -1.0f64..1.0) {
        let f = |r: f64| (a * r).cos() * (-b * r).exp() + c;
        let err = |n: usize| {
            let g = mesh(100.0, n);
            let psi = GridFunction::from_fn(g.clone(), f).with_origin_coeff(0, 1.0 + c);
            let back = psi.cumulative_integral_from_zero(p).unwrap().differentiate(1);
            g.nodes()
                .iter()
                .enumerate()
                .filter(|(_, &r)| (2e-3..=50.0).contains(&r))
                .map(|(i, &r)| (back.at(i) - r.powi(p) * f(r)).abs() / r.powi(p).max(1.0))
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(2000), err(4000));
        prop_assert!(fine <= 1e-4, "error {}", fine);
        prop_assert!(fine <= coarse / 5.6 || fine < 1e-11, "ratio {} ({} -> {})", coarse / fine, coarse, fine);
    }

    #[test]
    fn interpolation_reproduces_cubics(c in prop::array::uniform4(-2.0f64..2.0), x in 1e-3f64..100.0) {
        let g = mesh(100.0, 600);
        let poly = |r: f64| c[0] + r * (c[1] + r * (c[2] + r * c[3] * 1e-2));
        let psi = GridFunction::from_fn(g, poly);
        let want = poly(x);
        prop_assert!((psi.interpolate(x) - want).abs() <= 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn propv_identity_holds_discretely(a in 0.2f64..2.0, b in 0.5f64..3.0) {
        let g = mesh(100.0, 4000);
        let nodes = g.nodes();
        let f = |r: f64| (a * r).tanh();
        let fp = |r: f64| a / (a * r).cosh().powi(2);
        let v = |r: f64| b * r / (1.0 + r * r);
        let vp = |r: f64| b * (1.0 - r * r) / (1.0 + r * r).powi(2);
        let flux = GridFunction::from_fn(g.clone(), |r| f(r).powi(2) * v(r) * r).differentiate(1);
        for (i, &r) in nodes.iter().enumerate().skip(2).take(nodes.len() - 4) {
            let lhs = f(r) * vp(r) + f(r) * v(r) / r + 2.0 * fp(r) * v(r);
            let rhs = flux.at(i) / (r * f(r));
            prop_assert!((lhs - rhs).abs() <= 1e-6 * (1.0 + lhs.abs()), "r={}: {} vs {}", r, lhs, rhs);
        }
    }

    #[test]
    fn jet_product_and_chain_rules(u in prop::array::uniform3(-2.0f64..2.0), w in prop::array::uniform3(-2.0f64..2.0)) {
        let (p, q) = (Jet::new(u[0], u[1], u[2]), Jet::new(w[0], w[1], w[2]));
        let pq = p * q;
        prop_assert!((pq.d - (p.d * q.v + p.v * q.d)).abs() < 1e-12);
        prop_assert!((pq.dd - (p.dd * q.v + 2.0 * p.d * q.d + p.v * q.dd)).abs() < 1e-12);
        let qp = q * p;
        prop_assert!((pq.v - qp.v).abs() < 1e-14 && (pq.d - qp.d).abs() < 1e-14 && (pq.dd - qp.dd).abs() < 1e-14);
        let sq = p.compose([p.v * p.v, 2.0 * p.v, 2.0]);
        prop_assert!((sq.v - (p * p).v).abs() < 1e-12 && (sq.d - (p * p).d).abs() < 1e-12 && (sq.dd - (p * p).dd).abs() < 1e-12);
    }

    #[test]
    fn series_composition_of_polynomial(c in prop::collection::vec(-1.0f64..1.0, 4)) {
        // G(x) = x³ on a₀ + a₁ε + a₂ε² + a₃ε³ expanded by hand
        let a: Vec<Jet> = c.iter().map(|&x| Jet::constant(x)).collect();
        let s = Series(a.clone());
        let x = c[0];
        let out = s.compose(&[x.powi(3), 3.0 * x * x, 6.0 * x, 6.0, 0.0, 0.0]);
        let cube = s.mul(&s).mul(&s);
        for k in 0..4 {
            prop_assert!((out.coeff(k).v - cube.coeff(k).v).abs() < 1e-12);
        }
    }

    #[test]
    fn tail_constant_recovers_limit(om in -1e-3f64..1e-3, a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
        let r: Vec<f64> = (0..1500).map(|i| 250.0 + 750.0 * i as f64 / 1499.0).collect();
        let y: Vec<f64> = r.iter().map(|&x| om + (a + b * x.ln() + c * x.ln().powi(2)) / (x * x)).collect();
        let fit = tail_constant(&r, &y, 2, (250.0, 1000.0)).unwrap();
        prop_assert!((fit.value - om).abs() < 1e-12, "{} vs {}", fit.value, om);
    }

    #[test]
    fn extrapolate_tail_recovers_limit(vinf in 1e-3f64..0.1, a in 0.0f64..0.5, b in 0.0f64..0.2) {
        let r: Vec<f64> = (0..2000).map(|i| 50.0 + 950.0 * i as f64 / 1999.0).collect();
        let y: Vec<f64> = r.iter().map(|&x| vinf + (a + b * x.ln()) / x).collect();
        let est = extrapolate_tail(&r, &y, (100.0, 900.0));
        prop_assert!(!est.low_confidence);
        prop_assert!((est.value - vinf).abs() < 1e-9);
    }

    #[test]
    fn fit_ignores_input_order(
        b in 1.0f64..2.0,
        noise in prop::collection::vec(-0.02f64..0.02, 7),
        perm in Just((0..7).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let pts: Vec<(f64, f64)> = (0..7)
            .map(|i| {
                let q = 0.2 + 0.05 * i as f64;
                (q, (-b / q).exp() / q * (1.0 + noise[i]))
            })
            .collect();
        let shuffled: Vec<(f64, f64)> = perm.iter().map(|&i| pts[i]).collect();
        let (x, y) = (fit_exponential(&pts).unwrap(), fit_exponential(&shuffled).unwrap());
        prop_assert_eq!(x.b.to_bits(), y.b.to_bits());
        prop_assert_eq!(x.a.to_bits(), y.a.to_bits());
        prop_assert_eq!(x.ci95_b, y.ci95_b);
    }
}

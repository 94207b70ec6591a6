//! Fit of `v∞(q) ≈ A e^{−B/q}/q` as the line `log(q v∞) = log A − B/q`.

use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub se_b: f64,
    pub ci95_b: (f64, f64),
    pub r_squared: f64,
    /// `(q, residual in log(q v∞))`, sorted by increasing `q`.
    pub residuals: Vec<(f64, f64)>,
    pub q_window: (f64, f64),
    pub points: usize,
    pub weighted: bool,
}

impl FitResult {
    pub fn ci95_half_width(&self) -> f64 {
        0.5 * (self.ci95_b.1 - self.ci95_b.0)
    }
}

/// Unweighted least squares in `(1/q, log(q v∞))`.
pub fn fit_exponential(points: &[(f64, f64)]) -> Result<FitResult> {
    fit_impl(points, None)
}

/// Weighted variant; `weights[i]` multiplies the squared residual of `points[i]`.
pub fn fit_exponential_weighted(points: &[(f64, f64)], weights: &[f64]) -> Result<FitResult> {
    if weights.len() != points.len() || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("one positive finite weight per point".into()));
    }
    fit_impl(points, Some(weights))
}

fn fit_impl(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 points, got {}", points.len())));
    }
    let mut rows: Vec<(f64, f64, f64)> = Vec::with_capacity(points.len());
    for (i, &(q, v)) in points.iter().enumerate() {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::Domain(format!("q must be positive, got {q}")));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("v_inf must be positive, got {v} at q = {q}")));
        }
        rows.push((q, v, weights.map_or(1.0, |w| w[i])));
    }
    // sorting makes the result independent of input order, bit for bit
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument("q values must be distinct".into()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| 1.0 / r.0).collect();
    let ys: Vec<f64> = rows.iter().map(|r| (r.0 * r.1).ln()).collect();
    let ws: Vec<f64> = rows.iter().map(|r| r.2).collect();

    let sw: f64 = ws.iter().sum();
    let xm = xs.iter().zip(&ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let ym = ys.iter().zip(&ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).zip(&ws).map(|((x, y), w)| w * (x - xm) * (y - ym)).sum();
    let syy: f64 = ys.iter().zip(&ws).map(|(y, w)| w * (y - ym).powi(2)).sum();
    if !(sxx > 1e-14 * xs.iter().map(|x| x * x).sum::<f64>()) {
        return Err(Error::Singular(0));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let residuals: Vec<(f64, f64)> = rows
        .iter()
        .zip(xs.iter().zip(&ys))
        .map(|(r, (x, y))| (r.0, y - (intercept + slope * x)))
        .collect();
    let rss: f64 = residuals.iter().zip(&ws).map(|((_, e), w)| w * e * e).sum();
    let dof = (rows.len() - 2) as f64;
    let sigma2 = rss / dof;
    let se_b = (sigma2 / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(0.975);
    let b = -slope;
    Ok(FitResult {
        a: intercept.exp(),
        b,
        se_b,
        ci95_b: (b - t * se_b, b + t * se_b),
        r_squared: if syy > 0.0 { 1.0 - rss / syy } else { 1.0 },
        residuals,
        q_window: (rows[0].0, rows[rows.len() - 1].0),
        points: rows.len(),
        weighted: weights.is_some(),
    })
}

/// `B` refitted with each interior point (in `q` order) left out.
pub fn leave_one_out(points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    for skip in 1..sorted.len().saturating_sub(1) {
        let rest: Vec<(f64, f64)> = sorted
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, p)| *p)
            .collect();
        out.push((sorted[skip].0, fit_exponential(&rest)?.b));
    }
    Ok(out)
}

/// `parameter,value` report including the gap to `π/2`.
pub fn write_report<W: Write>(fit: &FitResult, mut out: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "parameter,value")?;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let rows: [(&str, f64); 10] = [
        ("A", fit.a),
        ("B", fit.b),
        ("se_B", fit.se_b),
        ("ci95_B_lo", fit.ci95_b.0),
        ("ci95_B_hi", fit.ci95_b.1),
        ("r_squared", fit.r_squared),
        ("q_min", fit.q_window.0),
        ("q_max", fit.q_window.1),
        ("pi_over_2", half_pi),
        ("B_minus_pi_over_2", fit.b - half_pi),
    ];
    for (k, v) in rows {
        writeln!(out, "{k},{v:.16e}")?;
    }
    writeln!(out, "points,{}", fit.points)?;
    writeln!(out, "weighted,{}", fit.weighted)?;
    Ok(())
}

/// Two whitespace-separated columns `1/q  log(q v∞)` for gnuplot.
pub fn write_figure_data<W: Write>(points: &[(f64, f64)], mut out: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "# inv_q log_q_vinf")?;
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (q, v) in sorted {
        writeln!(out, "{:.16e} {:.16e}", 1.0 / q, (q * v).ln())?;
    }
    Ok(())
}

/// Data points as circles and the fitted line as a polyline.
pub fn write_svg<W: Write>(points: &[(f64, f64)], fit: &FitResult, mut out: W) -> Result<()> {
    let (w, h, pad) = (480.0, 360.0, 40.0);
    let xy: Vec<(f64, f64)> = points.iter().map(|&(q, v)| (1.0 / q, (q * v).ln())).collect();
    let line = |x: f64| fit.a.ln() - fit.b * x;
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &xy {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y).min(line(x));
        y1 = y1.max(y).max(line(x));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )?;
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#)?;
    writeln!(
        out,
        r#"<polyline fill="none" stroke="black" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}"/>"#,
        pad,
        pad,
        pad,
        h - pad,
        w - pad,
        h - pad
    )?;
    let fitted: Vec<String> = [x0, x1]
        .iter()
        .map(|&x| format!("{:.2},{:.2}", px(x), py(line(x))))
        .collect();
    writeln!(
        out,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        fitted.join(" ")
    )?;
    for &(x, y) in &xy {
        writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="crimson"/>"#, px(x), py(y))?;
    }
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">1/q</text>"#,
        w / 2.0,
        h - 8.0
    )?;
    writeln!(
        out,
        r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">log(q v_inf)</text>"#,
        h / 2.0,
        h / 2.0
    )?;
    writeln!(out, "</svg>")?;
    Ok(())
}

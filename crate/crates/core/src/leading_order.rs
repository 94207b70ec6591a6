//! Leading-order profile `f₀`, phase gradient `v₀` and frequency `Ω₀`.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::bvp::{self, BvpSystem, NewtonOptions};
use crate::error::{Error, Result};
use crate::grid::{estimate_order, GridFunction, RadialGrid};
use crate::model::ModelFunctions;

#[derive(Debug, Clone)]
pub struct LeadingOrder {
    pub f0: GridFunction,
    pub f0p: GridFunction,
    pub f0pp: GridFunction,
    /// `f₀ ~ α rⁿ` at the origin.
    pub alpha: f64,
    pub v0: GridFunction,
    pub v0p: GridFunction,
    pub v0pp: GridFunction,
    pub omega0: f64,
    pub residual_norm: f64,
    pub newton_iterations: usize,
}

/// The amplitude equation `f″ + f′/r − n²f/r² + fλ(f) = 0` as a first-order system.
struct AmplitudeSystem<'a> {
    model: &'a ModelFunctions,
    n2: f64,
    far_value: f64,
}

impl BvpSystem for AmplitudeSystem<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn left_count(&self) -> usize {
        1
    }

    fn rhs(&self, r: f64, y: &[f64], f: &mut [f64]) {
        let fx = y[0] * self.model.lambda(y[0]);
        f[0] = y[1];
        f[1] = -y[1] / r + self.n2 * y[0] / (r * r) - fx;
    }

    fn jacobian(&self, r: f64, y: &[f64], j: &mut [f64]) {
        j[0] = 0.0;
        j[1] = 1.0;
        j[2] = self.n2 / (r * r) - self.model.df(y[0]);
        j[3] = -1.0 / r;
    }

    fn left_bc(&self, r: f64, y: &[f64], res: &mut [f64], jac: &mut [f64]) {
        let n = self.n2.sqrt();
        res[0] = n * y[0] - r * y[1];
        jac[0] = n;
        jac[1] = -r;
    }

    fn right_bc(&self, _r: f64, y: &[f64], res: &mut [f64], jac: &mut [f64]) {
        res[0] = y[0] - self.far_value;
        jac[0] = 1.0;
        jac[1] = 0.0;
    }
}

/// `f₀″` from the amplitude equation.
pub fn f0_second_derivative(model: &ModelFunctions, r: f64, f: f64, fp: f64) -> f64 {
    let n2 = f64::from(model.n() * model.n());
    -fp / r + n2 * f / (r * r) - f * model.lambda(f)
}

/// Initial profile `tanh(√d r/2)ⁿ` and its derivative, scaled by `scale`.
fn initial_guess(model: &ModelFunctions, nodes: &[f64], scale: f64) -> Vec<f64> {
    let n = model.n() as i32;
    let k = 0.5 * model.d().sqrt();
    let mut y = Vec::with_capacity(2 * nodes.len());
    for &r in nodes {
        let t = (k * r).tanh();
        let sech2 = 1.0 - t * t;
        let (f, fp) = if n == 0 {
            (1.0, 0.0)
        } else {
            (t.powi(n), f64::from(n) * t.powi(n - 1) * sech2 * k)
        };
        y.push(scale * f);
        y.push(scale * fp);
    }
    y
}

/// Returns `(f₀, f₀′, f₀″, α, Newton iterations)`.
pub fn solve_f0(
    model: &ModelFunctions,
    grid: &Arc<RadialGrid>,
    tol: f64,
) -> Result<(GridFunction, GridFunction, GridFunction, f64, usize)> {
    solve_f0_from(model, grid, tol, 1.0)
}

/// As [`solve_f0`], with the initial guess multiplied by `guess_scale`.
pub fn solve_f0_from(
    model: &ModelFunctions,
    grid: &Arc<RadialGrid>,
    tol: f64,
    guess_scale: f64,
) -> Result<(GridFunction, GridFunction, GridFunction, f64, usize)> {
    model.ensure_valid()?;
    let n = model.n();
    if n == 0 {
        return Err(Error::InvalidArgument("leading order needs n ≥ 1".into()));
    }
    let n2 = f64::from(n * n);
    let r_max = grid.r_max();
    let sys = AmplitudeSystem {
        model,
        n2,
        far_value: 1.0 - n2 / (model.d() * r_max * r_max),
    };
    let opts = NewtonOptions {
        tol,
        ..NewtonOptions::default()
    };
    let sol = bvp::solve(&sys, grid.nodes(), initial_guess(model, grid.nodes(), guess_scale), opts)?;
    let f = sol.component(0);
    let fp = sol.component(1);
    let fpp: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(f.iter().zip(&fp))
        .map(|(&r, (&f, &fp))| f0_second_derivative(model, r, f, fp))
        .collect();
    let eps = grid.eps();
    let alpha = f[0] / eps.powi(n as i32);

    if f.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Invariant("f₀ leaves (0, 1)".into()));
    }
    if f.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invariant("f₀ is not strictly increasing".into()));
    }
    let f0 = GridFunction::new(grid.clone(), f).with_origin_coeff(n as i32, alpha);
    let f0p = GridFunction::new(grid.clone(), fp).with_origin_coeff(n as i32 - 1, f64::from(n) * alpha);
    let f0pp = GridFunction::new(grid.clone(), fpp);
    Ok((f0, f0p, f0pp, alpha, sol.iterations))
}

/// Returns `(v₀, v₀′, v₀″, Ω₀)`.
pub fn compute_v0(
    model: &ModelFunctions,
    f0: &GridFunction,
    f0p: &GridFunction,
    f0pp: &GridFunction,
) -> Result<(GridFunction, GridFunction, GridFunction, f64)> {
    if f0.values().iter().any(|&v| v <= 0.0) {
        return Err(Error::Invariant("f₀ must be positive to define v₀".into()));
    }
    let grid = f0.grid().clone();
    let n = model.n() as i32;
    let omega0 = model.omega(1.0);
    let alpha = f0
        .origin()
        .ok_or(Error::MissingMetadata("f₀ origin behavior"))?
        .coeff;
    let integrand = f0
        .map(|_, f| f * f * (model.omega(f) - omega0))
        .with_origin_coeff(2 * n, alpha * alpha * (model.omega(0.0) - omega0));
    let cumulative = integrand.cumulative_integral_from_zero(1)?;
    let v0 = cumulative.zip_map(f0, |r, c, f| c / (r * f * f));
    let nodes = grid.nodes();
    let (mut vp, mut vpp) = (Vec::with_capacity(nodes.len()), Vec::with_capacity(nodes.len()));
    for i in 0..nodes.len() {
        let (r, f, fp, fpp, v) = (nodes[i], f0.at(i), f0p.at(i), f0pp.at(i), v0.at(i));
        let dw = model.omega(f) - omega0;
        let v1 = -v / r - 2.0 * fp * v / f + dw;
        let v2 = v / (r * r) - v1 / r - 2.0 * (fpp * v + fp * v1) / f
            + 2.0 * fp * fp * v / (f * f)
            + model.omega_deriv(f, 1) * fp;
        vp.push(v1);
        vpp.push(v2);
    }
    let small_r = (model.omega(0.0) - omega0) / f64::from(2 * n + 2);
    let v0 = v0.with_origin_coeff(1, small_r);
    Ok((
        v0,
        GridFunction::new(grid.clone(), vp).with_origin_coeff(0, small_r),
        GridFunction::new(grid, vpp),
        omega0,
    ))
}

/// Max-norm residual of the amplitude equation with `f₀″` taken by
/// differentiating the computed `f₀′` on the mesh.
pub fn amplitude_residual(model: &ModelFunctions, f0: &GridFunction, f0p: &GridFunction) -> f64 {
    let fpp = f0p.differentiate(1);
    let n2 = f64::from(model.n() * model.n());
    f0.grid()
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let (f, fp) = (f0.at(i), f0p.at(i));
            (fpp.at(i) + fp / r - n2 * f / (r * r) + f * model.lambda(f)).abs()
        })
        .fold(0.0, f64::max)
}

pub fn solve_leading_order(model: &ModelFunctions, grid: &Arc<RadialGrid>, tol: f64) -> Result<LeadingOrder> {
    let (f0, f0p, f0pp, alpha, iterations) = solve_f0(model, grid, tol)?;
    let residual_norm = amplitude_residual(model, &f0, &f0p);
    let (v0, v0p, v0pp, omega0) = compute_v0(model, &f0, &f0p, &f0pp)?;
    Ok(LeadingOrder {
        f0,
        f0p,
        f0pp,
        alpha,
        v0,
        v0p,
        v0pp,
        omega0,
        residual_norm,
        newton_iterations: iterations,
    })
}

/// Outcome of re-solving from perturbed initial guesses.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessProbe {
    pub scales: Vec<f64>,
    pub max_deviation: f64,
}

pub fn uniqueness_probe(model: &ModelFunctions, grid: &Arc<RadialGrid>, tol: f64) -> Result<UniquenessProbe> {
    let (base, ..) = solve_f0(model, grid, tol)?;
    let scales = vec![0.8, 1.2];
    let mut max_deviation: f64 = 0.0;
    for &s in &scales {
        let (f, ..) = solve_f0_from(model, grid, tol, s)?;
        max_deviation = max_deviation.max(f.sub(&base).max_abs());
    }
    Ok(UniquenessProbe { scales, max_deviation })
}

/// Diagnostics used by the acceptance checks and the CLI summary.
#[derive(Debug, Clone, Serialize)]
pub struct LeadingOrderReport {
    pub alpha: f64,
    pub omega0: f64,
    pub residual_norm: f64,
    pub monotone_bound_holds: bool,
    pub far_amplitude: f64,
    pub far_slope: f64,
    pub v0_nonnegative: bool,
    pub v0_small_r: f64,
    pub v0_tail_coefficient: f64,
    pub origin_order: Option<f64>,
}

impl LeadingOrder {
    /// `0 < r f₀′ ≤ n² f₀` at every node, up to rounding.
    pub fn monotone_bound_holds(&self, n: u32) -> bool {
        let n2 = f64::from(n * n);
        let nodes = self.f0.grid().nodes();
        (0..nodes.len()).all(|i| {
            let rfp = nodes[i] * self.f0p.at(i);
            rfp > 0.0 && rfp <= n2 * self.f0.at(i) * (1.0 + 1e-10)
        })
    }

    /// Slope `a` of the least-squares fit `r v₀ = a log r + b` on `[R/10, R]`.
    pub fn v0_tail_coefficient(&self) -> f64 {
        let grid = self.v0.grid();
        let lo = grid.r_max() / 10.0;
        let (xs, ys): (Vec<f64>, Vec<f64>) = grid
            .nodes()
            .iter()
            .zip(self.v0.values())
            .filter(|(&r, _)| r >= lo)
            .map(|(&r, &v)| (r.ln(), r * v))
            .unzip();
        crate::grid::line_fit(&xs, &ys).1
    }

    pub fn report(&self, model: &ModelFunctions, probe_r: f64) -> LeadingOrderReport {
        let n = model.n();
        let f_far = self.f0.interpolate(probe_r);
        let fp_far = self.f0p.interpolate(probe_r);
        let eps = self.f0.grid().eps();
        LeadingOrderReport {
            alpha: self.alpha,
            omega0: self.omega0,
            residual_norm: self.residual_norm,
            monotone_bound_holds: self.monotone_bound_holds(n),
            far_amplitude: probe_r * probe_r * (1.0 - f_far),
            far_slope: probe_r.powi(3) * fp_far,
            v0_nonnegative: self.v0.values().iter().all(|&v| v >= 0.0),
            v0_small_r: self.v0.first() / eps,
            v0_tail_coefficient: self.v0_tail_coefficient(),
            origin_order: estimate_order(&self.f0).m_hat,
        }
    }

    /// Columns `r,f0,f0p,v0,v0p`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "r,f0,f0p,v0,v0p")?;
        for (i, r) in self.f0.grid().nodes().iter().enumerate() {
            writeln!(
                out,
                "{r:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.f0.at(i),
                self.f0p.at(i),
                self.v0.at(i),
                self.v0p.at(i)
            )?;
        }
        Ok(())
    }
}

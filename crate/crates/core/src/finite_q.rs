//! Full nonlinear problem at finite `q`:
//! `f″ + f′/r − n²f/r² + F(f) − f v² = 0`,
//! `f v′ + f v/r + 2f′v + q f(Ω − ω(f)) = 0`,
//! solved by Lobatto IIIa collocation with `Ω` as an extra unknown.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::bvp::{self, BvpSystem, NewtonOptions};
use crate::error::{Error, Result};
use crate::grid::{least_squares, GridFunction, RadialGrid};
use crate::model::ModelFunctions;
use crate::series_engine::SeriesSolution;

/// Inner condition on `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerBc {
    /// `v(ε) = qε(ω(0) − Ω)/(2n + 2)`.
    #[default]
    Stub,
    /// `v(ε) = 0`.
    Zero,
}

/// How the outer radius is chosen for each `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RPolicy {
    Fixed { r: f64 },
    /// `R = max(R_min(q), κ/(q·v∞))`, capped at `r_cap`, where `v∞` is the
    /// current estimate.
    Adaptive { kappa: f64, r_cap: f64 },
}

impl Default for RPolicy {
    fn default() -> Self {
        RPolicy::Adaptive {
            kappa: 20.0,
            r_cap: 60_000.0,
        }
    }
}

/// `max(100, 12/q)`.
pub fn r_min(q: f64) -> f64 {
    (12.0 / q).max(100.0)
}

impl RPolicy {
    pub fn radius(&self, q: f64, v_inf_estimate: Option<f64>) -> f64 {
        match *self {
            RPolicy::Fixed { r } => r,
            RPolicy::Adaptive { kappa, r_cap } => {
                let base = r_min(q);
                match v_inf_estimate {
                    Some(v) if v > 0.0 => (kappa / (q * v)).clamp(base, r_cap.max(base)),
                    _ => base,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FiniteQOptions {
    pub eps: f64,
    /// Mesh nodes; `None` picks them from `core` and `h_max`.
    pub nodes: Option<usize>,
    /// Radius where the mesh switches from geometric to uniform.
    pub core: f64,
    pub h_max: f64,
    pub bc_tol: f64,
    pub inner_bc: InnerBc,
    pub newton: NewtonOptions,
    /// Relative size of `v(R) − v(0.9R)` that triggers the tail warning.
    pub tail_band: f64,
}

impl Default for FiniteQOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            nodes: None,
            core: 50.0,
            h_max: 0.5,
            bc_tol: 1e-8,
            inner_bc: InnerBc::Stub,
            newton: NewtonOptions {
                tol: 1e-10,
                max_iter: 80,
                min_damping: 1.0 / 4096.0,
            },
            tail_band: 0.05,
        }
    }
}

/// Mesh with relative spacing `β` below `core` and uniform spacing `β·core`
/// beyond it, `β` chosen so that there are `n` nodes.
pub fn finite_q_mesh(eps: f64, r_max: f64, n: usize, core: f64) -> Result<RadialGrid> {
    if !(eps > 0.0 && core > eps && r_max > eps) || n < 50 {
        return Err(Error::InvalidArgument(format!(
            "mesh needs 0 < eps < core and R > eps with n >= 50 (eps = {eps}, core = {core}, R = {r_max}, n = {n})"
        )));
    }
    let core = core.min(r_max);
    let log_part = (core / eps).ln();
    let lin_part = (r_max - core) / core;
    let total = log_part + lin_part;
    let last = (n - 1) as f64;
    let mut nodes: Vec<f64> = (0..n)
        .map(|i| {
            let t = total * i as f64 / last;
            if t <= log_part {
                eps * t.exp()
            } else {
                core * (1.0 + t - log_part)
            }
        })
        .collect();
    nodes[0] = eps;
    nodes[n - 1] = r_max;
    RadialGrid::from_nodes(nodes)
}

/// Node count giving spacing at most `h_max` beyond `core` and relative
/// spacing at most 1% inside it.
pub fn auto_node_count(eps: f64, r_max: f64, core: f64, h_max: f64) -> usize {
    let core = core.min(r_max);
    let beta = (h_max / core).min(0.01);
    let total = (core / eps).ln() + (r_max - core) / core;
    (total / beta).ceil() as usize + 1
}

struct FullSystem<'a> {
    model: &'a ModelFunctions,
    q: f64,
    n: f64,
    inner_bc: InnerBc,
}

impl BvpSystem for FullSystem<'_> {
    fn dim(&self) -> usize {
        4
    }

    fn left_count(&self) -> usize {
        2
    }

    fn rhs(&self, r: f64, y: &[f64], out: &mut [f64]) {
        let (f, p, v, om) = (y[0], y[1], y[2], y[3]);
        out[0] = p;
        out[1] = -p / r + self.n * self.n * f / (r * r) - f * self.model.lambda(f) + f * v * v;
        out[2] = -v / r - 2.0 * p * v / f - self.q * (om - self.model.omega(f));
        out[3] = 0.0;
    }

    fn jacobian(&self, r: f64, y: &[f64], j: &mut [f64]) {
        let (f, p, v) = (y[0], y[1], y[2]);
        j.fill(0.0);
        j[1] = 1.0;
        j[4] = self.n * self.n / (r * r) - self.model.df(f) + v * v;
        j[5] = -1.0 / r;
        j[6] = 2.0 * f * v;
        j[8] = 2.0 * p * v / (f * f) + self.q * self.model.omega_deriv(f, 1);
        j[9] = -2.0 * v / f;
        j[10] = -1.0 / r - 2.0 * p / f;
        j[11] = -self.q;
    }

    fn left_bc(&self, r: f64, y: &[f64], res: &mut [f64], jac: &mut [f64]) {
        jac.fill(0.0);
        res[0] = self.n * y[0] - r * y[1];
        jac[0] = self.n;
        jac[1] = -r;
        match self.inner_bc {
            InnerBc::Stub => {
                let c = self.q * r / (2.0 * self.n + 2.0);
                res[1] = y[2] - c * (self.model.omega(0.0) - y[3]);
                jac[6] = 1.0;
                jac[7] = c;
            }
            InnerBc::Zero => {
                res[1] = y[2];
                jac[6] = 1.0;
            }
        }
    }

    fn right_bc(&self, _r: f64, y: &[f64], res: &mut [f64], jac: &mut [f64]) {
        jac.fill(0.0);
        let (f, v, om) = (y[0], y[2], y[3]);
        res[0] = self.model.lambda(f) - v * v;
        jac[0] = self.model.lambda_deriv(f, 1);
        jac[2] = -2.0 * v;
        res[1] = om - self.model.omega(f);
        jac[4] = -self.model.omega_deriv(f, 1);
        jac[7] = 1.0;
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VInf {
    pub value: f64,
    /// Richardson estimate from the interior tail.
    pub extrapolated: f64,
    /// `|v(R) − extrapolated|`.
    pub uncertainty: f64,
    pub window: (f64, f64),
    /// Set when the tail is not monotone and no extrapolation was made.
    pub low_confidence: bool,
}

#[derive(Debug, Clone)]
pub struct FiniteQSolution {
    pub q: f64,
    pub f: GridFunction,
    pub fp: GridFunction,
    pub v: GridFunction,
    pub omega: f64,
    pub v_inf: VInf,
    pub f_inf: f64,
    pub newton_iters: usize,
    pub collocation_residual: f64,
    pub bc_residuals: [f64; 4],
    pub mesh: Arc<RadialGrid>,
    pub warnings: Vec<String>,
}

/// Starting profiles for [`solve_bvp`].
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    Series(&'a SeriesSolution),
    Previous(&'a FiniteQSolution),
}

fn guess_from_series(series: &SeriesSolution, q: f64, nodes: &[f64]) -> Vec<f64> {
    let eps2 = q * q;
    let mut omega = 0.0;
    let mut p = 1.0;
    for o in &series.orders {
        omega += o.omega * p;
        p *= eps2;
    }
    // the amplitude series is only summed to first order; higher orders grow
    // like powers of log r and spoil the guess at moderate q
    let orders = &series.orders[..series.orders.len().min(2)];
    let mut y = Vec::with_capacity(4 * nodes.len());
    for &r in nodes {
        let (mut f, mut fp, mut v) = (0.0, 0.0, 0.0);
        let mut p = 1.0;
        for o in orders {
            f += p * o.f.interpolate(r);
            fp += p * o.fp.interpolate(r);
            v += q * p * o.v.interpolate(r);
            p *= eps2;
        }
        y.extend_from_slice(&[f.clamp(1e-300, 1.0), fp, v, omega]);
    }
    y
}

fn guess_from_previous(prev: &FiniteQSolution, q: f64, nodes: &[f64]) -> Vec<f64> {
    let scale = q / prev.q;
    let r_prev = prev.mesh.r_max();
    let mut y = Vec::with_capacity(4 * nodes.len());
    for &r in nodes {
        let fp = if r > r_prev { 0.0 } else { prev.fp.interpolate(r) };
        y.extend_from_slice(&[prev.f.interpolate(r), fp, scale * prev.v.interpolate(r), prev.omega]);
    }
    y
}

/// Solves at one `q` on `[ε, R]`.
pub fn solve_bvp(
    model: &ModelFunctions,
    q: f64,
    r_max: f64,
    init: Init<'_>,
    opts: &FiniteQOptions,
) -> Result<FiniteQSolution> {
    if !(q > 0.0 && q <= 0.6) {
        return Err(Error::Domain(format!("q must lie in (0, 0.6], got {q}")));
    }
    if model.n() == 0 {
        return Err(Error::Domain("finite-q solves need n >= 1".into()));
    }
    if r_max < r_min(q) {
        return Err(Error::InvalidArgument(format!(
            "R = {r_max} is below R_min(q) = {}",
            r_min(q)
        )));
    }
    let n_nodes = opts
        .nodes
        .unwrap_or_else(|| auto_node_count(opts.eps, r_max, opts.core, opts.h_max));
    let mesh = Arc::new(finite_q_mesh(opts.eps, r_max, n_nodes, opts.core)?);
    let nodes = mesh.nodes();
    let y0 = match init {
        Init::Series(s) => guess_from_series(s, q, nodes),
        Init::Previous(p) => guess_from_previous(p, q, nodes),
    };
    let sys = FullSystem {
        model,
        q,
        n: f64::from(model.n()),
        inner_bc: opts.inner_bc,
    };
    let sol = bvp::solve(&sys, nodes, y0, opts.newton)?;

    let f = GridFunction::new(mesh.clone(), sol.component(0)).with_origin(model.n() as i32);
    let fp = GridFunction::new(mesh.clone(), sol.component(1));
    let v = GridFunction::new(mesh.clone(), sol.component(2)).with_origin(1);
    let omega = sol.y[3];

    if f.values().iter().skip(1).any(|&x| !(x > 0.0)) {
        return Err(Error::Invariant("f must stay positive on (ε, R]".into()));
    }
    let sign = v.last().signum();
    if v.values().iter().skip(1).any(|&x| x.signum() != sign && x != 0.0) {
        return Err(Error::Invariant("v changes sign".into()));
    }

    let last = sol.state(nodes.len() - 1);
    let first = sol.state(0);
    let mut left = [0.0; 2];
    let mut right = [0.0; 2];
    let mut jac = [0.0; 8];
    sys.left_bc(nodes[0], first, &mut left, &mut jac);
    sys.right_bc(r_max, last, &mut right, &mut jac);
    let bc_residuals = [left[0], left[1], right[0], right[1]];
    if right.iter().any(|x| x.abs() > opts.bc_tol) {
        return Err(Error::Invariant(format!("outer conditions violated: {right:?}")));
    }

    let mut warnings = Vec::new();
    let j09 = mesh.nearest(0.9 * r_max);
    let drift = (v.last() - v.at(j09)).abs();
    if drift > opts.tail_band * v.last().abs() {
        warnings.push(format!(
            "tail-sensitive: |v(R) - v(0.9R)| = {drift:.3e} exceeds {:.0}% of v(R); increase R",
            100.0 * opts.tail_band
        ));
    }
    let mut out = FiniteQSolution {
        q,
        f_inf: f.last(),
        f,
        fp,
        v,
        omega,
        v_inf: VInf {
            value: f64::NAN,
            extrapolated: f64::NAN,
            uncertainty: f64::NAN,
            window: (0.0, 0.0),
            low_confidence: true,
        },
        newton_iters: sol.iterations,
        collocation_residual: sol.residual,
        bc_residuals,
        mesh,
        warnings,
    };
    out.v_inf = extract_v_inf(&out);
    if out.v_inf.low_confidence {
        out.warnings.push("v tail is not monotone; no extrapolation cross-check".into());
    }
    Ok(out)
}

/// `v∞` as `v(R)`, where the outer conditions impose `λ(f∞) = v∞²` and
/// `Ω = ω(f∞)`, cross-checked against the interior tail extrapolated over
/// `[R/4, 0.9R]`.
pub fn extract_v_inf(sol: &FiniteQSolution) -> VInf {
    let r_max = sol.mesh.r_max();
    let tail = extrapolate_tail(sol.mesh.nodes(), sol.v.values(), (0.25 * r_max, 0.9 * r_max));
    let value = sol.v.last();
    VInf {
        value,
        extrapolated: tail.value,
        uncertainty: if tail.low_confidence { f64::NAN } else { (value - tail.value).abs() },
        window: tail.window,
        low_confidence: tail.low_confidence,
    }
}

/// Tail limit of samples `y(r)` on `window` under `y ≈ y∞ + (a + b log r)/r + c/r²`.
pub fn extrapolate_tail(r: &[f64], y: &[f64], window: (f64, f64)) -> VInf {
    let (rs, ys): (Vec<f64>, Vec<f64>) = r
        .iter()
        .zip(y)
        .filter(|(&x, _)| x >= window.0 && x <= window.1)
        .map(|(&x, &v)| (x, v))
        .unzip();
    let raw = *ys.last().unwrap_or(&f64::NAN);
    let diffs: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
    let monotone = diffs.iter().all(|&d| d >= 0.0) || diffs.iter().all(|&d| d <= 0.0);
    let fallback = VInf {
        value: raw,
        extrapolated: f64::NAN,
        uncertainty: f64::NAN,
        window,
        low_confidence: true,
    };
    if !monotone || rs.len() < 8 {
        return fallback;
    }
    let columns = vec![
        vec![1.0; rs.len()],
        rs.iter().map(|x| 1.0 / x).collect(),
        rs.iter().map(|x| x.ln() / x).collect(),
        rs.iter().map(|x| 1.0 / (x * x)).collect(),
    ];
    match least_squares(&columns, &ys) {
        Ok(c) => VInf {
            value: c[0],
            extrapolated: c[0],
            uncertainty: (raw - c[0]).abs(),
            window,
            low_confidence: false,
        },
        Err(_) => fallback,
    }
}

impl FiniteQSolution {
    /// Max-norm of `fv′ + fv/r + 2f′v − (f²vr)′/(rf)` on `(ε, R)`, with `v′`
    /// from the phase equation and `(f²vr)′` by finite differences.
    pub fn propv_defect(&self, model: &ModelFunctions) -> f64 {
        let nodes = self.mesh.nodes();
        let flux = GridFunction::new(
            self.mesh.clone(),
            (0..nodes.len())
                .map(|i| self.f.at(i).powi(2) * self.v.at(i) * nodes[i])
                .collect(),
        );
        let dflux = flux.differentiate(1);
        (0..nodes.len())
            .map(|i| {
                let (r, f, fp, v) = (nodes[i], self.f.at(i), self.fp.at(i), self.v.at(i));
                let vp = -v / r - 2.0 * fp * v / f - self.q * (self.omega - model.omega(f));
                let lhs = f * vp + f * v / r + 2.0 * fp * v;
                (lhs - dflux.at(i) / (r * f)).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn bc_res_max(&self) -> f64 {
        self.bc_residuals.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Profile CSV `r,f,fp,v`.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "r,f,fp,v")?;
        for (i, r) in self.mesh.nodes().iter().enumerate() {
            writeln!(
                out,
                "{r:.16e},{:.16e},{:.16e},{:.16e}",
                self.f.at(i),
                self.fp.at(i),
                self.v.at(i)
            )?;
        }
        Ok(())
    }
}

/// Outcome of one `q` in a sweep.
#[derive(Debug)]
pub struct SweepEntry {
    pub q: f64,
    pub r_max: f64,
    pub result: Result<FiniteQSolution>,
}

/// Solves for each `q` in descending order, warm-starting each solve from
/// the previous converged one (the first from `series`). Failures are
/// recorded and the sweep continues.
pub fn continuation_sweep(
    model: &ModelFunctions,
    q_list: &[f64],
    policy: RPolicy,
    series: &SeriesSolution,
    opts: &FiniteQOptions,
) -> Result<Vec<SweepEntry>> {
    if q_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("q_list must be strictly descending".into()));
    }
    let mut out: Vec<SweepEntry> = Vec::with_capacity(q_list.len());
    let mut prev: Option<FiniteQSolution> = None;
    for &q in q_list {
        let estimate = prev.as_ref().map(|p| {
            // v∞ scales roughly like e^{−B/q}/q between neighbours
            let (q0, v0) = (p.q, p.v_inf.value);
            let b = std::f64::consts::FRAC_PI_2;
            v0 * (q0 / q) * (-b * (1.0 / q - 1.0 / q0)).exp()
        });
        let r_start = policy.radius(q, estimate);
        let result = match &prev {
            Some(p) => solve_bvp(model, q, r_start, Init::Previous(p), opts)
                .and_then(|sol| enlarge_until_resolved(model, sol, policy, opts))
                .or_else(|_| solve_with_policy(model, q, policy, series, opts)),
            None => solve_with_policy(model, q, policy, series, opts),
        };
        let r_max = result.as_ref().map_or(r_start, |s| s.mesh.r_max());
        if let Ok(sol) = &result {
            prev = Some(sol.clone());
        }
        out.push(SweepEntry { q, r_max, result });
    }
    Ok(out)
}

/// Re-solves on larger domains until `R` meets the policy for the `v∞`
/// just found.
fn enlarge_until_resolved(
    model: &ModelFunctions,
    mut sol: FiniteQSolution,
    policy: RPolicy,
    opts: &FiniteQOptions,
) -> Result<FiniteQSolution> {
    for _ in 0..8 {
        let wanted = policy.radius(sol.q, Some(sol.v_inf.value));
        let r = sol.mesh.r_max();
        if wanted <= 1.25 * r {
            break;
        }
        let next = wanted.min(4.0 * r);
        sol = solve_bvp(model, sol.q, next, Init::Previous(&sol), opts)?;
    }
    Ok(sol)
}

/// Cold solve at one `q`: series warm start at `R_min(q)`, then larger
/// domains until `R` satisfies `policy`.
pub fn solve_with_policy(
    model: &ModelFunctions,
    q: f64,
    policy: RPolicy,
    series: &SeriesSolution,
    opts: &FiniteQOptions,
) -> Result<FiniteQSolution> {
    let r_max = policy.radius(q, None);
    let sol = solve_with_radius_continuation(model, q, r_max, series, opts)?;
    match policy {
        RPolicy::Fixed { .. } => Ok(sol),
        RPolicy::Adaptive { .. } => enlarge_until_resolved(model, sol, policy, opts),
    }
}

/// Series warm start at `R_min(q)`, then doubling `R` up to `r_max`.
fn solve_with_radius_continuation(
    model: &ModelFunctions,
    q: f64,
    r_max: f64,
    series: &SeriesSolution,
    opts: &FiniteQOptions,
) -> Result<FiniteQSolution> {
    let mut r = r_min(q).min(r_max);
    let mut sol = solve_bvp(model, q, r, Init::Series(series), opts)?;
    while r < r_max {
        r = (2.0 * r).min(r_max);
        sol = solve_bvp(model, q, r, Init::Previous(&sol), opts)?;
    }
    Ok(sol)
}

/// Sweep CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub q: f64,
    pub v_inf: f64,
    pub omega: f64,
    pub f_inf: f64,
    pub newton_iters: usize,
    pub bc_res_max: f64,
}

impl From<&FiniteQSolution> for SweepRow {
    fn from(s: &FiniteQSolution) -> Self {
        Self {
            q: s.q,
            v_inf: s.v_inf.value,
            omega: s.omega,
            f_inf: s.f_inf,
            newton_iters: s.newton_iters,
            bc_res_max: s.bc_res_max(),
        }
    }
}

/// Columns `q,v_inf,Omega,f_inf,newton_iters,bc_res_max`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "q,v_inf,Omega,f_inf,newton_iters,bc_res_max")?;
    for r in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{},{:.6e}",
            r.q, r.v_inf, r.omega, r.f_inf, r.newton_iters, r.bc_res_max
        )?;
    }
    Ok(())
}

/// `sup |f_q − (f₀ + q²f₁)|` over mesh nodes in `[ε, r_hi]`.
pub fn series_deviation(sol: &FiniteQSolution, series: &SeriesSolution, r_hi: f64) -> f64 {
    let q2 = sol.q * sol.q;
    let (f0, f1) = (&series.orders[0].f, &series.orders[1].f);
    sol.mesh
        .nodes()
        .iter()
        .enumerate()
        .take_while(|(_, &r)| r <= r_hi)
        .map(|(i, &r)| (sol.f.at(i) - (f0.interpolate(r) + q2 * f1.interpolate(r))).abs())
        .fold(0.0, f64::max)
}

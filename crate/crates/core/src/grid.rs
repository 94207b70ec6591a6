//! Stretched radial meshes on `[ε, R]` and the sampled functions that live
//! on them: cumulative quadrature from the origin, finite-difference
//! derivatives, interpolation and empirical asymptotic-order estimates.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest ratio allowed between adjacent spacings.
pub const MAX_SPACING_RATIO: f64 = 1.1;
/// Default inner truncation radius.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Node distribution along `[ε, R]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Stretch {
    /// Pure geometric progression `r(ξ) = ε (R/ε)^ξ`.
    Log,
    /// `r(ξ) = ε + core·(e^{κξ} − 1)`, `ξ ∈ [0, 1]`: spacing grows like
    /// `core + r`, so the mesh is geometric once `r ≫ core`.
    Geometric { core: f64 },
    Uniform,
}

impl Default for Stretch {
    fn default() -> Self {
        Stretch::Log
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialGrid {
    eps: f64,
    r_max: f64,
    nodes: Vec<f64>,
}

pub fn build_grid(eps: f64, r_max: f64, n: usize, stretch: Stretch) -> Result<RadialGrid> {
    if !(eps > 0.0 && eps < 1.0 && r_max >= 1.0 && eps < r_max) {
        return Err(Error::InvalidArgument(format!(
            "grid needs 0 < eps < 1 <= R, got eps = {eps}, R = {r_max}"
        )));
    }
    if n < 200 {
        return Err(Error::InvalidArgument(format!("grid needs at least 200 nodes, got {n}")));
    }
    let last = (n - 1) as f64;
    let mut nodes: Vec<f64> = match stretch {
        Stretch::Uniform => (0..n)
            .map(|i| eps + (r_max - eps) * i as f64 / last)
            .collect(),
        Stretch::Log => (0..n)
            .map(|i| eps * ((r_max / eps).ln() * i as f64 / last).exp())
            .collect(),
        Stretch::Geometric { core } => {
            if !(core > 0.0) {
                return Err(Error::InvalidArgument("geometric core must be positive".into()));
            }
            let kappa = (1.0 + (r_max - eps) / core).ln();
            (0..n)
                .map(|i| eps + core * (kappa * i as f64 / last).exp_m1())
                .collect()
        }
    };
    nodes[0] = eps;
    nodes[n - 1] = r_max;
    let grid = RadialGrid { eps, r_max, nodes };
    let ratio = grid.max_spacing_ratio();
    if ratio > MAX_SPACING_RATIO {
        return Err(Error::InvalidArgument(format!(
            "spacing ratio {ratio:.4} exceeds {MAX_SPACING_RATIO}; use more nodes"
        )));
    }
    Ok(grid)
}

impl RadialGrid {
    /// Mesh from explicit nodes; they must be strictly increasing.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 5 || nodes.windows(2).any(|w| !(w[1] > w[0])) || !(nodes[0] > 0.0) {
            return Err(Error::InvalidArgument("nodes must be positive and strictly increasing".into()));
        }
        Ok(Self {
            eps: nodes[0],
            r_max: *nodes.last().unwrap(),
            nodes,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_spacing_ratio(&self) -> f64 {
        self.nodes
            .windows(3)
            .map(|w| {
                let (a, b) = (w[1] - w[0], w[2] - w[1]);
                (b / a).max(a / b)
            })
            .fold(1.0, f64::max)
    }

    /// Index `i` of the interval `[x_i, x_{i+1}]` containing `r` (clamped).
    pub fn interval_of(&self, r: f64) -> usize {
        let idx = self.nodes.partition_point(|&x| x <= r);
        idx.saturating_sub(1).min(self.nodes.len() - 2)
    }

    /// Node index closest to `r`.
    pub fn nearest(&self, r: f64) -> usize {
        let i = self.interval_of(r);
        if (r - self.nodes[i]).abs() <= (self.nodes[i + 1] - r).abs() {
            i
        } else {
            i + 1
        }
    }

    /// A copy with every node multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> RadialGrid {
        RadialGrid {
            eps: self.eps * factor,
            r_max: self.r_max * factor,
            nodes: self.nodes.iter().map(|x| x * factor).collect(),
        }
    }

    /// Start index and Lagrange weights of the cubic through the four nodes
    /// around interval `interval`, evaluated at `x`.
    pub fn cubic_weights(&self, interval: usize, x: f64) -> (usize, [f64; 4]) {
        let n = self.nodes.len();
        let start = interval.saturating_sub(1).min(n - 4);
        let xs = &self.nodes[start..start + 4];
        let mut w = [0.0; 4];
        for j in 0..4 {
            let mut l = 1.0;
            for m in 0..4 {
                if m != j {
                    l *= (x - xs[m]) / (xs[j] - xs[m]);
                }
            }
            w[j] = l;
        }
        (start, w)
    }
}

/// Behavior `ψ(r) ≈ c·r^m` as `r → 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OriginBehavior {
    pub order: i32,
    pub coeff: f64,
}

/// Behavior `ψ(r) ≈ c·log(r)^j·r^{−l}` as `r → ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBehavior {
    pub decay: f64,
    pub log_power: u32,
    pub coeff: f64,
}

/// A real function sampled on a [`RadialGrid`], with optional endpoint metadata.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
    origin: Option<OriginBehavior>,
    tail: Option<TailBehavior>,
}

impl GridFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "one value per node");
        Self {
            grid,
            values,
            origin: None,
            tail: None,
        }
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&r| f(r)).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        Self::new(grid, vec![0.0; n])
    }

    /// Declares `ψ ≈ c r^m` near the origin, taking `c` from the first node.
    pub fn with_origin(mut self, order: i32) -> Self {
        let eps = self.grid.eps();
        let coeff = self.values[0] / eps.powi(order);
        self.origin = Some(OriginBehavior { order, coeff });
        self
    }

    pub fn with_origin_coeff(mut self, order: i32, coeff: f64) -> Self {
        self.origin = Some(OriginBehavior { order, coeff });
        self
    }

    /// Declares `ψ ≈ c log(r)^j r^{−l}` at infinity, taking `c` from the last node.
    pub fn with_tail(mut self, decay: f64, log_power: u32) -> Self {
        let r = self.grid.r_max();
        let shape = r.ln().powi(log_power as i32) * r.powf(-decay);
        let coeff = self.values[self.values.len() - 1] / shape;
        self.tail = Some(TailBehavior {
            decay,
            log_power,
            coeff,
        });
        self
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn origin(&self) -> Option<OriginBehavior> {
        self.origin
    }

    pub fn tail(&self) -> Option<TailBehavior> {
        self.tail
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn at(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Pointwise map; metadata is dropped.
    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        let values = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(&r, &v)| f(r, v))
            .collect();
        GridFunction::new(self.grid.clone(), values)
    }

    /// Pointwise combination with another function on the same grid.
    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64, f64) -> f64) -> GridFunction {
        debug_assert!(Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid);
        let values = self
            .grid
            .nodes()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(&r, (&a, &b))| f(r, a, b))
            .collect();
        GridFunction::new(self.grid.clone(), values)
    }

    pub fn scale(&self, a: f64) -> GridFunction {
        self.map(|_, v| a * v)
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        self.zip_map(other, |_, a, b| a + b)
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        self.zip_map(other, |_, a, b| a - b)
    }

    pub fn mul(&self, other: &GridFunction) -> GridFunction {
        self.zip_map(other, |_, a, b| a * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Cubic interpolation at `r`, clamped to the mesh.
    pub fn interpolate(&self, r: f64) -> f64 {
        let r = r.clamp(self.grid.eps(), self.grid.r_max());
        let i = self.grid.interval_of(r);
        let (start, w) = self.grid.cubic_weights(i, r);
        (0..4).map(|j| w[j] * self.values[start + j]).sum()
    }

    /// `r ↦ ∫₀^r t^p ψ(t) dt`. The `[0, ε]` stub is integrated from the
    /// origin metadata; the rest uses piecewise cubics, `O(h⁴)`.
    pub fn cumulative_integral_from_zero(&self, weight_exponent: i32) -> Result<GridFunction> {
        let origin = self.origin.ok_or(Error::MissingMetadata(
            "cumulative integral from zero needs origin behavior",
        ))?;
        let total = weight_exponent + origin.order;
        if total <= -1 {
            return Err(Error::DivergentStub {
                p: weight_exponent,
                m: origin.order,
            });
        }
        let eps = self.grid.eps();
        let stub = origin.coeff * eps.powi(total + 1) / (total + 1) as f64;
        let integrand: Vec<f64> = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(&r, &v)| r.powi(weight_exponent) * v)
            .collect();
        let mut out = Vec::with_capacity(self.len());
        out.push(stub);
        let mut acc = stub;
        for i in 0..self.len() - 1 {
            acc += interval_integral(&self.grid, &integrand, i);
            out.push(acc);
        }
        Ok(GridFunction::new(self.grid.clone(), out).with_origin_coeff(
            total + 1,
            origin.coeff / (total + 1) as f64,
        ))
    }

    /// First or second derivative from five-point stencils (one-sided at the ends).
    pub fn differentiate(&self, order: usize) -> GridFunction {
        assert!(order == 1 || order == 2, "only first and second derivatives");
        let nodes = self.grid.nodes();
        let n = nodes.len();
        assert!(n >= 5);
        let values = (0..n)
            .map(|i| {
                let start = i.saturating_sub(2).min(n - 5);
                let w = fornberg_weights(nodes[i], &nodes[start..start + 5], order);
                (0..5).map(|j| w[order][j] * self.values[start + j]).sum()
            })
            .collect();
        GridFunction::new(self.grid.clone(), values)
    }

    /// Writes `r,value` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "r,value")?;
        for (r, v) in self.grid.nodes().iter().zip(&self.values) {
            writeln!(out, "{r:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

/// Two-point Gauss-Legendre abscissae on `[0, 1]`; exact for cubics.
const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

fn interval_integral(grid: &RadialGrid, integrand: &[f64], i: usize) -> f64 {
    let nodes = grid.nodes();
    let (a, b) = (nodes[i], nodes[i + 1]);
    let h = b - a;
    GAUSS2
        .iter()
        .map(|&t| {
            let x = a + t * h;
            let (start, w) = grid.cubic_weights(i, x);
            (0..4).map(|j| w[j] * integrand[start + j]).sum::<f64>()
        })
        .sum::<f64>()
        * 0.5
        * h
}

/// Fornberg's finite-difference weights: `w[k][j]` approximates the
/// `k`-th derivative at `x0` from samples at `xs[j]`, for `k ≤ max_order`.
pub fn fornberg_weights(x0: f64, xs: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Fitted endpoint exponents of a grid function.
#[derive(Debug, Clone, Serialize)]
pub struct OrderEstimate {
    /// Exponent `m` of `ψ ~ r^m` at the origin.
    pub m_hat: Option<f64>,
    pub origin_residual: f64,
    pub origin_window: (f64, f64),
    /// Decay `l` and log power `j` of `ψ ~ log(r)^j r^{−l}` at infinity.
    pub l_hat: Option<f64>,
    pub j_hat: Option<u32>,
    pub tail_residual: f64,
    pub tail_window: (f64, f64),
    /// Set when `ψ` vanishes or changes sign inside a fit window.
    pub indeterminate: bool,
}

/// Windows and search range for [`estimate_order`].
#[derive(Debug, Clone, Copy)]
pub struct OrderFitOptions {
    /// Origin window `[ε, origin_factor·ε]`.
    pub origin_factor: f64,
    /// Tail window `[R/tail_factor, R]`.
    pub tail_factor: f64,
    pub j_max: u32,
}

impl Default for OrderFitOptions {
    fn default() -> Self {
        Self {
            origin_factor: 10.0,
            tail_factor: 10.0,
            j_max: 8,
        }
    }
}

pub fn estimate_order(psi: &GridFunction) -> OrderEstimate {
    estimate_order_with(psi, OrderFitOptions::default())
}

pub fn estimate_order_with(psi: &GridFunction, opts: OrderFitOptions) -> OrderEstimate {
    let grid = psi.grid();
    let nodes = grid.nodes();
    let origin_window = (grid.eps(), grid.eps() * opts.origin_factor);
    let tail_window = (grid.r_max() / opts.tail_factor, grid.r_max());
    let pick = |(lo, hi): (f64, f64)| -> Vec<(f64, f64)> {
        nodes
            .iter()
            .zip(psi.values())
            .filter(|(&r, _)| r >= lo && r <= hi)
            .map(|(&r, &v)| (r, v))
            .collect()
    };
    let usable = |pts: &[(f64, f64)]| {
        pts.len() >= 3
            && pts.iter().all(|&(_, v)| v != 0.0 && v.is_finite())
            && (pts.iter().all(|&(_, v)| v > 0.0) || pts.iter().all(|&(_, v)| v < 0.0))
    };
    let mut indeterminate = false;

    let origin_pts = pick(origin_window);
    let (m_hat, origin_residual) = if usable(&origin_pts) {
        let xs: Vec<f64> = origin_pts.iter().map(|p| p.0.ln()).collect();
        let ys: Vec<f64> = origin_pts.iter().map(|p| p.1.abs().ln()).collect();
        let (_, slope, res) = line_fit(&xs, &ys);
        (Some(slope), res)
    } else {
        indeterminate = true;
        (None, f64::NAN)
    };

    let tail_pts = pick(tail_window);
    let (l_hat, j_hat, tail_residual) = if usable(&tail_pts) && tail_window.0 > std::f64::consts::E {
        let xs: Vec<f64> = tail_pts.iter().map(|p| p.0.ln()).collect();
        let loglog: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let mut best = (f64::NAN, 0u32, f64::INFINITY);
        for j in 0..=opts.j_max {
            let ys: Vec<f64> = tail_pts
                .iter()
                .zip(&loglog)
                .map(|(p, ll)| p.1.abs().ln() - j as f64 * ll)
                .collect();
            let (_, slope, res) = line_fit(&xs, &ys);
            if res < best.2 - 1e-12 {
                best = (-slope, j, res);
            }
        }
        (Some(best.0), Some(best.1), best.2)
    } else {
        indeterminate = true;
        (None, None, f64::NAN)
    };

    OrderEstimate {
        m_hat,
        origin_residual,
        origin_window,
        l_hat,
        j_hat,
        tail_residual,
        tail_window,
        indeterminate,
    }
}

/// Least-squares line `y = a + b x`; returns `(a, b, rms residual)`.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    (a, b, (rss / n).sqrt())
}

/// Linear least squares `min ‖A c − y‖` by SVD; columns are basis samples.
pub fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let rows = y.len();
    let cols = columns.len();
    // column equilibration keeps the SVD tolerance meaningful
    let norms: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE))
        .collect();
    let a = DMatrix::from_fn(rows, cols, |i, j| columns[j][i] / norms[j]);
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let sol = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::Domain(format!("least squares failed: {e}")))?;
    Ok(sol.iter().zip(&norms).map(|(c, n)| c / n).collect())
}

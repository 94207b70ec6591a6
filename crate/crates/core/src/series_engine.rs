//! Small-`q` hierarchy: `f = Σ fₖ q²ᵏ`, `v = q Σ vₖ q²ᵏ`, `Ω = Σ Ωₖ q²ᵏ`.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{estimate_order_with, least_squares, GridFunction, OrderEstimate, OrderFitOptions, RadialGrid};
use crate::jet::{Jet, Series};
use crate::kernel::{with_fitted_origin, KernelWorkspace};
use crate::leading_order::{solve_leading_order, LeadingOrder};
use crate::model::ModelFunctions;

/// Fields of one order of the hierarchy.
#[derive(Debug, Clone)]
pub struct OrderFields {
    pub k: usize,
    pub f: GridFunction,
    pub fp: GridFunction,
    pub fpp: GridFunction,
    pub v: GridFunction,
    pub vp: GridFunction,
    pub vpp: GridFunction,
    pub omega: f64,
    pub omega_fit: Option<TailConstant>,
    /// Right-hand side of the amplitude problem and its derivatives.
    pub b: Option<[GridFunction; 3]>,
    /// Source of the phase problem and its derivative.
    pub c: Option<[GridFunction; 2]>,
    pub linear_iterations: usize,
    pub hypothesis_ok: bool,
}

impl OrderFields {
    fn f_jet(&self, i: usize) -> Jet {
        Jet::new(self.f.at(i), self.fp.at(i), self.fpp.at(i))
    }

    fn v_jet(&self, i: usize) -> Jet {
        Jet::new(self.v.at(i), self.vp.at(i), self.vpp.at(i))
    }

    /// Per-order CSV `r,fk,fkp,vk,vkp`.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "r,f{k},f{k}p,v{k},v{k}p", k = self.k)?;
        for (i, r) in self.f.grid().nodes().iter().enumerate() {
            writeln!(
                out,
                "{r:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.f.at(i),
                self.fp.at(i),
                self.v.at(i),
                self.vp.at(i)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SeriesOptions {
    pub k_max: usize,
    pub linear_tol: f64,
    /// `|Ωₖ|` is compared with `omega_tol·max(1, ‖cₖ‖∞)`.
    pub omega_tol: f64,
    pub newton_tol: f64,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self {
            k_max: 3,
            linear_tol: 1e-13,
            omega_tol: 1e-6,
            newton_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeriesSolution {
    pub k_max: usize,
    pub model: ModelFunctions,
    pub leading: LeadingOrder,
    pub orders: Vec<OrderFields>,
    pub omega: Vec<f64>,
    pub omega_tol: f64,
    pub kernel: Option<Arc<KernelWorkspace>>,
}

/// Constant term of a tail fit `y ≈ Ω + r⁻² P(log r) + r⁻⁴ P(log r)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailConstant {
    pub value: f64,
    pub rms_residual: f64,
    pub window: (f64, f64),
    pub log_degree: usize,
    pub points: usize,
}

/// Extrapolates `y(r) → Ω` as `r → ∞` from the nodes in `window`.
pub fn tail_constant(r: &[f64], y: &[f64], log_degree: usize, window: (f64, f64)) -> Result<TailConstant> {
    let (rs, ys): (Vec<f64>, Vec<f64>) = r
        .iter()
        .zip(y)
        .filter(|(&x, _)| x >= window.0 && x <= window.1)
        .map(|(&x, &v)| (x, v))
        .unzip();
    let mut columns = vec![vec![1.0; rs.len()]];
    for power in [2, 4] {
        for j in 0..=log_degree {
            columns.push(rs.iter().map(|x| x.ln().powi(j as i32) * x.powi(-power)).collect());
        }
    }
    if rs.len() < 2 * columns.len() {
        return Err(Error::InvalidArgument("too few nodes in the tail window".into()));
    }
    let coeffs = least_squares(&columns, &ys)?;
    let rss: f64 = (0..rs.len())
        .map(|i| {
            let fit: f64 = columns.iter().zip(&coeffs).map(|(c, a)| c[i] * a).sum();
            (ys[i] - fit).powi(2)
        })
        .sum();
    Ok(TailConstant {
        value: coeffs[0],
        rms_residual: (rss / rs.len() as f64).sqrt(),
        window,
        log_degree,
        points: rs.len(),
    })
}

/// Coefficients of `G(f₀ + Σ fₖ εᵏ)` in powers of `ε`; `derivs[i][m] = G⁽ᵐ⁾(f₀(rᵢ))`.
pub fn compose_series(derivs: &[Vec<f64>], coeffs: &[GridFunction], k_max: usize) -> Result<Vec<GridFunction>> {
    let grid = coeffs[0].grid().clone();
    let len = grid.len();
    let mut out = vec![vec![0.0; len]; k_max + 1];
    for i in 0..len {
        if derivs[i].len() < k_max + 1 {
            return Err(Error::Capability {
                name: "composition".into(),
                requested: k_max,
                available: derivs[i].len().saturating_sub(1),
            });
        }
        let mut g = derivs[i].clone();
        g.resize(k_max + 3, 0.0);
        let s = Series((0..=k_max).map(|k| Jet::constant(coeffs.get(k).map_or(0.0, |c| c.at(i)))).collect());
        let comp = s.compose(&g);
        for k in 0..=k_max {
            out[k][i] = comp.0[k].v;
        }
    }
    Ok(out.into_iter().map(|v| GridFunction::new(grid.clone(), v)).collect())
}

impl SeriesSolution {
    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.leading.f0.grid()
    }

    /// Amplitude source of order `k ≥ 1` with two derivatives, from orders `< k`.
    pub fn build_bk(&self, k: usize) -> Result<[GridFunction; 3]> {
        assert!(k >= 1 && k <= self.orders.len());
        let grid = self.grid().clone();
        let len = grid.len();
        let mut out = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        for i in 0..len {
            let mut f = Series::zeros(k);
            for j in 0..k {
                f.0[j] = self.orders[j].f_jet(i);
            }
            let g = self.model.eval_f_derivs(f.0[0].v, k + 2)?;
            let f_comp = f.compose(&g).coeff(k);
            let f_low = Series(f.0[..k].to_vec());
            let w = Series((0..k).map(|j| self.orders[j].v_jet(i)).collect());
            let drag = f_low.mul(&w).mul(&w).coeff(k - 1);
            let b = drag - f_comp;
            out[0][i] = b.v;
            out[1][i] = b.d;
            out[2][i] = b.dd;
        }
        let [b, bp, bpp] = out;
        Ok([
            GridFunction::new(grid.clone(), b),
            GridFunction::new(grid.clone(), bp),
            GridFunction::new(grid, bpp),
        ])
    }

    /// Phase source of order `k ≥ 1` and its derivative; needs `fₖ` in `orders[k]`.
    pub fn build_ck(&self, k: usize) -> Result<[GridFunction; 2]> {
        assert!(k >= 1 && k < self.orders.len());
        let grid = self.grid().clone();
        let nodes = grid.nodes();
        let len = grid.len();
        let (mut c, mut cp) = (vec![0.0; len], vec![0.0; len]);
        for i in 0..len {
            let inv_r = Jet::variable(nodes[i]).recip();
            let mut acc = Jet::ZERO;
            for j in 0..k {
                let fo = &self.orders[k - j];
                let vo = &self.orders[j];
                let f = Jet::new(fo.f.at(i), fo.fp.at(i), 0.0);
                let fp = Jet::new(fo.fp.at(i), fo.fpp.at(i), 0.0);
                let v = Jet::new(vo.v.at(i), vo.vp.at(i), 0.0);
                let vp = Jet::new(vo.vp.at(i), vo.vpp.at(i), 0.0);
                acc += f * (vp + v * inv_r) + (fp * v).scale(2.0) + f.scale(vo.omega);
            }
            let mut f = Series::zeros(k);
            for j in 0..=k {
                f.0[j] = self.orders[j].f_jet(i);
            }
            let g = self.model.eval_omega_tilde_derivs(f.0[0].v, k + 2)?;
            let total = f.compose(&g).coeff(k) - acc;
            c[i] = total.v;
            cp[i] = total.d;
        }
        Ok([GridFunction::new(grid.clone(), c), GridFunction::new(grid, cp)])
    }

    /// Solves order `k` given orders `< k`, pushing it onto `orders`.
    pub fn solve_order_k(&mut self, k: usize, opts: &SeriesOptions) -> Result<()> {
        assert_eq!(self.orders.len(), k, "orders are solved in sequence");
        let kernel = match &self.kernel {
            Some(ws) => ws.clone(),
            None => {
                let ws = Arc::new(KernelWorkspace::new(&self.model, &self.leading)?);
                self.kernel = Some(ws.clone());
                ws
            }
        };
        let [b, bp, bpp] = self.build_bk(k)?;
        let b = with_fitted_origin(b, self.grid().eps());
        let lin = kernel.solve_linear_bvp(&b, &bp, &bpp, opts.linear_tol)?;

        let grid = self.grid().clone();
        let lo = &self.leading;
        // provisional entry so build_ck can see fₖ
        self.orders.push(OrderFields {
            k,
            f: lin.g.clone(),
            fp: lin.gp.clone(),
            fpp: lin.gpp.clone(),
            v: GridFunction::zeros(grid.clone()),
            vp: GridFunction::zeros(grid.clone()),
            vpp: GridFunction::zeros(grid.clone()),
            omega: 0.0,
            omega_fit: None,
            b: Some([b, bp, bpp]),
            c: None,
            linear_iterations: lin.iterations,
            hypothesis_ok: lin.hypothesis_ok,
        });
        let [c, cp] = self.build_ck(k)?;

        let ratio: Vec<f64> = c.values().iter().zip(lo.f0.values()).map(|(c, f)| c / f).collect();
        let r_max = grid.r_max();
        let fit = tail_constant(grid.nodes(), &ratio, 2 * k, (r_max / 4.0, r_max))?;
        let omega = fit.value;

        let integrand = c.zip_map(&lo.f0, |_, c, f| f * (c - f * omega));
        let integrand = with_fitted_origin(integrand, grid.eps());
        let cumulative = integrand.cumulative_integral_from_zero(1)?;
        let nodes = grid.nodes();
        let len = nodes.len();
        let (mut v, mut vp, mut vpp) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        for i in 0..len {
            let (r, f, fp, fpp) = (nodes[i], lo.f0.at(i), lo.f0p.at(i), lo.f0pp.at(i));
            let s = c.at(i) - f * omega;
            let sp = cp.at(i) - fp * omega;
            let vi = cumulative.at(i) / (r * f * f);
            let vpi = s / f - vi / r - 2.0 * fp * vi / f;
            let vppi = sp / f - s * fp / (f * f) - vpi / r + vi / (r * r) - 2.0 * (fpp * vi + fp * vpi) / f
                + 2.0 * fp * fp * vi / (f * f);
            v[i] = vi;
            vp[i] = vpi;
            vpp[i] = vppi;
        }
        let entry = self.orders.last_mut().expect("pushed above");
        entry.v = GridFunction::new(grid.clone(), v).with_origin(1);
        entry.vp = GridFunction::new(grid.clone(), vp);
        entry.vpp = GridFunction::new(grid, vpp);
        entry.omega = omega;
        entry.omega_fit = Some(fit);
        entry.c = Some([c, cp]);
        self.omega.push(omega);
        Ok(())
    }

    pub fn c_norm(&self, k: usize) -> f64 {
        self.orders[k].c.as_ref().map_or(0.0, |c| c[0].max_abs())
    }

    /// Orders whose `|Ωₖ|` exceeds `omega_tol·max(1, ‖cₖ‖∞)`.
    pub fn theorem_violations(&self) -> Vec<(usize, f64, f64)> {
        (1..self.orders.len())
            .filter_map(|k| {
                let tol = self.omega_tol * self.c_norm(k).max(1.0);
                let om = self.orders[k].omega;
                (om.abs() > tol).then_some((k, om, tol))
            })
            .collect()
    }

    /// Tail/origin exponents of `fₖ` and `vₖ`.
    pub fn order_estimates(&self, k: usize) -> (OrderEstimate, OrderEstimate) {
        let opts = OrderFitOptions {
            j_max: 12,
            ..OrderFitOptions::default()
        };
        let o = &self.orders[k];
        (estimate_order_with(&o.f, opts), estimate_order_with(&o.v, opts))
    }

    /// Residuals of the full equations for the truncated sums at one `q`.
    pub fn residuals_at(&self, q: f64, k_trunc: usize) -> Result<(f64, f64)> {
        let grid = self.grid();
        let nodes = grid.nodes();
        let n2 = f64::from(self.model.n() * self.model.n());
        let eps2 = q * q;
        let (mut amp, mut phase) = (0.0f64, 0.0f64);
        for i in 0..nodes.len() {
            let r = nodes[i];
            let (mut f, mut w, mut om) = (Jet::ZERO, Jet::ZERO, 0.0);
            let mut p = 1.0;
            for o in self.orders.iter().take(k_trunc + 1) {
                f += o.f_jet(i).scale(p);
                w += o.v_jet(i).scale(p);
                om += o.omega * p;
                p *= eps2;
            }
            let fx = self.model.eval_f_derivs(f.v, 0)?[0];
            let ox = self.model.eval_omega_tilde_derivs(f.v, 0)?[0];
            let r1 = f.dd + f.d / r - n2 * f.v / (r * r) + fx - eps2 * f.v * w.v * w.v;
            let r2 = q * (f.v * w.d + f.v * w.v / r + 2.0 * f.d * w.v + f.v * om - ox);
            amp = amp.max(r1.abs());
            phase = phase.max(r2.abs());
        }
        Ok((amp, phase))
    }

    /// Residual ratios at `(q, q/2)` for the sums truncated at `k_trunc`.
    pub fn residual_order_check(&self, q: f64, k_trunc: usize) -> Result<ResidualRatios> {
        let (a1, p1) = self.residuals_at(q, k_trunc)?;
        let (a2, p2) = self.residuals_at(0.5 * q, k_trunc)?;
        Ok(ResidualRatios {
            k: k_trunc,
            q,
            amplitude: (a1, a2),
            phase: (p1, p2),
            amplitude_ratio: a1 / a2,
            phase_ratio: p1 / p2,
            expected_amplitude: 2f64.powi(2 * k_trunc as i32 + 2),
            expected_phase: 2f64.powi(2 * k_trunc as i32 + 3),
        })
    }

    pub fn summary(&self) -> SeriesSummary {
        let orders = (0..self.orders.len())
            .map(|k| {
                let (fe, ve) = self.order_estimates(k);
                OrderSummary {
                    k,
                    omega: self.orders[k].omega,
                    c_norm: self.c_norm(k),
                    omega_fit_residual: self.orders[k].omega_fit.map(|f| f.rms_residual),
                    f_tail: (fe.l_hat, fe.j_hat, fe.tail_residual),
                    f_origin: fe.m_hat,
                    v_tail: (ve.l_hat, ve.j_hat, ve.tail_residual),
                    linear_iterations: self.orders[k].linear_iterations,
                }
            })
            .collect();
        SeriesSummary {
            model: self.model.name().to_string(),
            n: self.model.n(),
            k_max: self.k_max,
            omega_tol: self.omega_tol,
            orders,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualRatios {
    pub k: usize,
    pub q: f64,
    pub amplitude: (f64, f64),
    pub phase: (f64, f64),
    pub amplitude_ratio: f64,
    pub phase_ratio: f64,
    pub expected_amplitude: f64,
    pub expected_phase: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderSummary {
    pub k: usize,
    pub omega: f64,
    pub c_norm: f64,
    pub omega_fit_residual: Option<f64>,
    pub f_tail: (Option<f64>, Option<u32>, f64),
    pub f_origin: Option<f64>,
    pub v_tail: (Option<f64>, Option<u32>, f64),
    pub linear_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesSummary {
    pub model: String,
    pub n: u32,
    pub k_max: usize,
    pub omega_tol: f64,
    pub orders: Vec<OrderSummary>,
}

fn leading_fields(lo: &LeadingOrder) -> OrderFields {
    OrderFields {
        k: 0,
        f: lo.f0.clone(),
        fp: lo.f0p.clone(),
        fpp: lo.f0pp.clone(),
        v: lo.v0.clone(),
        vp: lo.v0p.clone(),
        vpp: lo.v0pp.clone(),
        omega: lo.omega0,
        omega_fit: None,
        b: None,
        c: None,
        linear_iterations: 0,
        hypothesis_ok: true,
    }
}

/// Leading order plus orders `1..=K`. Violations of `Ωₖ = 0` are reported,
/// not raised; see [`SeriesSolution::theorem_violations`].
pub fn run_series(model: &ModelFunctions, grid: &Arc<RadialGrid>, opts: &SeriesOptions) -> Result<SeriesSolution> {
    let leading = solve_leading_order(model, grid, opts.newton_tol)?;
    let mut sol = SeriesSolution {
        k_max: opts.k_max,
        model: model.clone(),
        orders: vec![leading_fields(&leading)],
        omega: vec![leading.omega0],
        leading,
        omega_tol: opts.omega_tol,
        kernel: None,
    };
    for k in 1..=opts.k_max {
        sol.solve_order_k(k, opts)?;
    }
    Ok(sol)
}

//! Two-point boundary-value problems `y' = f(x, y)` solved by three-stage
//! Lobatto IIIa collocation (Simpson's rule with a cubic midpoint) and a
//! damped Newton iteration on a banded Jacobian.

use serde::Serialize;

use crate::error::{Error, Result};

/// First-order system with separated boundary conditions.
pub trait BvpSystem {
    fn dim(&self) -> usize;
    /// Number of conditions imposed at the left end; the rest go right.
    fn left_count(&self) -> usize;
    fn rhs(&self, x: f64, y: &[f64], f: &mut [f64]);
    /// Row-major `∂f/∂y`.
    fn jacobian(&self, x: f64, y: &[f64], j: &mut [f64]);
    /// Residuals and row-major Jacobian of the left conditions.
    fn left_bc(&self, x: f64, y: &[f64], res: &mut [f64], jac: &mut [f64]);
    fn right_bc(&self, x: f64, y: &[f64], res: &mut [f64], jac: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub min_damping: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 60,
            min_damping: 1.0 / 1024.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BvpSolution {
    pub nodes: Vec<f64>,
    pub dim: usize,
    /// Node-major states: `y[i*dim + c]`.
    pub y: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub damping: Vec<f64>,
}

impl BvpSolution {
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.y.iter().skip(c).step_by(self.dim).copied().collect()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.y[i * self.dim..(i + 1) * self.dim]
    }
}

/// Solves the collocation equations starting from the node-major guess `y0`.
pub fn solve<S: BvpSystem>(
    sys: &S,
    nodes: &[f64],
    y0: Vec<f64>,
    opts: NewtonOptions,
) -> Result<BvpSolution> {
    let d = sys.dim();
    let n = nodes.len();
    assert!(n >= 2 && y0.len() == n * d, "guess must hold one state per node");
    let mut y = y0;
    let mut res = vec![0.0; n * d];
    let mut work = Workspace::new(d);
    let mut damping = Vec::new();
    let mut norm = residual(sys, nodes, &y, &mut res, &mut work);
    for iter in 0..opts.max_iter {
        let mut band = assemble(sys, nodes, &y, &mut work);
        band.factor()?;
        let mut delta: Vec<f64> = res.iter().map(|r| -r).collect();
        band.solve_in_place(&mut delta);
        let step = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = 1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let mut lambda = 1.0;
        let mut trial = vec![0.0; n * d];
        let mut trial_res = vec![0.0; n * d];
        loop {
            for k in 0..y.len() {
                trial[k] = y[k] + lambda * delta[k];
            }
            let tnorm = residual(sys, nodes, &trial, &mut trial_res, &mut work);
            if tnorm.is_finite() && (tnorm <= (1.0 - 0.25 * lambda) * norm || tnorm < opts.tol) {
                norm = tnorm;
                break;
            }
            lambda *= 0.5;
            if lambda < opts.min_damping {
                damping.push(lambda);
                return Err(Error::NewtonDivergence {
                    iterations: iter + 1,
                    residual: norm,
                    damping,
                });
            }
        }
        damping.push(lambda);
        std::mem::swap(&mut y, &mut trial);
        std::mem::swap(&mut res, &mut trial_res);
        if lambda == 1.0 && step <= opts.tol * scale {
            return Ok(BvpSolution {
                nodes: nodes.to_vec(),
                dim: d,
                y,
                iterations: iter + 1,
                residual: norm,
                damping,
            });
        }
    }
    Err(Error::NewtonDivergence {
        iterations: opts.max_iter,
        residual: norm,
        damping,
    })
}

struct Workspace {
    fa: Vec<f64>,
    fb: Vec<f64>,
    fm: Vec<f64>,
    ym: Vec<f64>,
    ja: Vec<f64>,
    jb: Vec<f64>,
    jm: Vec<f64>,
    bc_res: Vec<f64>,
    bc_jac: Vec<f64>,
}

impl Workspace {
    fn new(d: usize) -> Self {
        Self {
            fa: vec![0.0; d],
            fb: vec![0.0; d],
            fm: vec![0.0; d],
            ym: vec![0.0; d],
            ja: vec![0.0; d * d],
            jb: vec![0.0; d * d],
            jm: vec![0.0; d * d],
            bc_res: vec![0.0; d],
            bc_jac: vec![0.0; d * d],
        }
    }
}

fn midpoint<S: BvpSystem>(sys: &S, xa: f64, xb: f64, ya: &[f64], yb: &[f64], w: &mut Workspace) {
    let d = ya.len();
    let h = xb - xa;
    sys.rhs(xa, ya, &mut w.fa);
    sys.rhs(xb, yb, &mut w.fb);
    for c in 0..d {
        w.ym[c] = 0.5 * (ya[c] + yb[c]) - h / 8.0 * (w.fb[c] - w.fa[c]);
    }
    sys.rhs(0.5 * (xa + xb), &w.ym, &mut w.fm);
}

fn residual<S: BvpSystem>(sys: &S, x: &[f64], y: &[f64], res: &mut [f64], w: &mut Workspace) -> f64 {
    let d = sys.dim();
    let nl = sys.left_count();
    let n = x.len();
    sys.left_bc(x[0], &y[..d], &mut w.bc_res, &mut w.bc_jac);
    res[..nl].copy_from_slice(&w.bc_res[..nl]);
    for i in 0..n - 1 {
        let (ya, yb) = (&y[i * d..(i + 1) * d], &y[(i + 1) * d..(i + 2) * d]);
        midpoint(sys, x[i], x[i + 1], ya, yb, w);
        let h = x[i + 1] - x[i];
        for c in 0..d {
            res[nl + i * d + c] = yb[c] - ya[c] - h / 6.0 * (w.fa[c] + 4.0 * w.fm[c] + w.fb[c]);
        }
    }
    sys.right_bc(x[n - 1], &y[(n - 1) * d..], &mut w.bc_res, &mut w.bc_jac);
    let nr = d - nl;
    res[n * d - nr..].copy_from_slice(&w.bc_res[..nr]);
    res.iter().fold(0.0, |m: f64, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

fn assemble<S: BvpSystem>(sys: &S, x: &[f64], y: &[f64], w: &mut Workspace) -> BandMatrix {
    let d = sys.dim();
    let nl = sys.left_count();
    let n = x.len();
    let kl = nl + d - 1;
    let ku = 2 * d - 1 - nl;
    let mut band = BandMatrix::new(n * d, kl, ku);

    sys.left_bc(x[0], &y[..d], &mut w.bc_res, &mut w.bc_jac);
    for r in 0..nl {
        for c in 0..d {
            band.set(r, c, w.bc_jac[r * d + c]);
        }
    }
    let mut a_blk = vec![0.0; d * d];
    let mut b_blk = vec![0.0; d * d];
    for i in 0..n - 1 {
        let (ya, yb) = (&y[i * d..(i + 1) * d], &y[(i + 1) * d..(i + 2) * d]);
        let h = x[i + 1] - x[i];
        midpoint(sys, x[i], x[i + 1], ya, yb, w);
        sys.jacobian(x[i], ya, &mut w.ja);
        sys.jacobian(x[i + 1], yb, &mut w.jb);
        sys.jacobian(0.5 * (x[i] + x[i + 1]), &w.ym, &mut w.jm);
        // ∂y_m/∂y_a = I/2 + h/8 J_a, ∂y_m/∂y_b = I/2 − h/8 J_b
        for r in 0..d {
            for c in 0..d {
                let mut ma = 0.0;
                let mut mb = 0.0;
                for k in 0..d {
                    let da = if k == c { 0.5 } else { 0.0 } + h / 8.0 * w.ja[k * d + c];
                    let db = if k == c { 0.5 } else { 0.0 } - h / 8.0 * w.jb[k * d + c];
                    ma += w.jm[r * d + k] * da;
                    mb += w.jm[r * d + k] * db;
                }
                let id = if r == c { 1.0 } else { 0.0 };
                a_blk[r * d + c] = -id - h / 6.0 * (w.ja[r * d + c] + 4.0 * ma);
                b_blk[r * d + c] = id - h / 6.0 * (w.jb[r * d + c] + 4.0 * mb);
            }
        }
        for r in 0..d {
            let row = nl + i * d + r;
            for c in 0..d {
                band.set(row, i * d + c, a_blk[r * d + c]);
                band.set(row, (i + 1) * d + c, b_blk[r * d + c]);
            }
        }
    }
    sys.right_bc(x[n - 1], &y[(n - 1) * d..], &mut w.bc_res, &mut w.bc_jac);
    let nr = d - nl;
    for r in 0..nr {
        for c in 0..d {
            band.set(n * d - nr + r, (n - 1) * d + c, w.bc_jac[r * d + c]);
        }
    }
    band
}

/// Square band matrix with room for partial-pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: Vec::new(),
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.ku + self.kl);
        r * self.width + c + self.kl - r
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(c + self.kl >= r && c <= r + self.ku, "({r}, {c}) outside band");
        let i = self.idx(r, c);
        self.data[i] = v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if c + self.kl < r || c > r + self.ku + self.kl {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    pub fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let reach = self.kl + self.ku;
        self.pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            self.pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let (a, b) = (self.idx(k, c), self.idx(p, c));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l != 0.0 {
                    for c in k + 1..=last_col {
                        let kc = self.idx(k, c);
                        let ic = self.idx(i, c);
                        self.data[ic] -= l * self.data[kc];
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "factor before solving");
        let n = self.n;
        let reach = self.kl + self.ku;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                b[i] -= self.data[self.idx(i, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for c in k + 1..=(k + reach).min(n - 1) {
                s -= self.data[self.idx(k, c)] * b[c];
            }
            b[k] = s / self.data[self.idx(k, k)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn band_lu_matches_dense() {
        let n = 40;
        let (kl, ku) = (3, 2);
        let mut band = BandMatrix::new(n, kl, ku);
        let mut dense = DMatrix::zeros(n, n);
        let mut seed = 7u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for r in 0..n {
            for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                // small diagonal forces pivoting
                let v = if r == c { 1e-3 * rnd() } else { rnd() };
                band.set(r, c, v);
                dense[(r, c)] = v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = rhs.clone();
        band.factor().unwrap();
        band.solve_in_place(&mut x);
        let exact = dense.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - exact[i]).abs() < 1e-9 * (1.0 + exact[i].abs()), "{i}");
        }
    }

    #[test]
    fn singular_band_reported() {
        let mut band = BandMatrix::new(3, 1, 1);
        band.set(0, 0, 1.0);
        band.set(1, 0, 1.0);
        assert!(matches!(band.factor(), Err(Error::Singular(_))));
    }

    /// y'' = −y on [0, π/2], y(0) = 0, y(π/2) = 1.
    struct Sine;

    impl BvpSystem for Sine {
        fn dim(&self) -> usize {
            2
        }
        fn left_count(&self) -> usize {
            1
        }
        fn rhs(&self, _x: f64, y: &[f64], f: &mut [f64]) {
            f[0] = y[1];
            f[1] = -y[0];
        }
        fn jacobian(&self, _x: f64, _y: &[f64], j: &mut [f64]) {
            j.copy_from_slice(&[0.0, 1.0, -1.0, 0.0]);
        }
        fn left_bc(&self, _x: f64, y: &[f64], res: &mut [f64], jac: &mut [f64]) {
            res[0] = y[0];
            jac[..2].copy_from_slice(&[1.0, 0.0]);
        }
        fn right_bc(&self, _x: f64, y: &[f64], res: &mut [f64], jac: &mut [f64]) {
            res[0] = y[0] - 1.0;
            jac[..2].copy_from_slice(&[1.0, 0.0]);
        }
    }

    #[test]
    fn linear_bvp_fourth_order() {
        let err = |n: usize| {
            let x: Vec<f64> = (0..n)
                .map(|i| std::f64::consts::FRAC_PI_2 * i as f64 / (n - 1) as f64)
                .collect();
            let sol = solve(&Sine, &x, vec![0.0; 2 * n], NewtonOptions::default()).unwrap();
            x.iter()
                .zip(sol.component(0))
                .map(|(x, y)| (y - x.sin()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(21), err(41));
        let order = (e1 / e2).log2();
        assert!(order > 3.7, "order {order}");
    }

    /// Bratu: y'' + e^y = 0, y(0) = y(1) = 0, lower branch.
    struct Bratu;

    impl BvpSystem for Bratu {
        fn dim(&self) -> usize {
            2
        }
        fn left_count(&self) -> usize {
            1
        }
        fn rhs(&self, _x: f64, y: &[f64], f: &mut [f64]) {
            f[0] = y[1];
            f[1] = -y[0].exp();
        }
        fn jacobian(&self, _x: f64, y: &[f64], j: &mut [f64]) {
            j.copy_from_slice(&[0.0, 1.0, -y[0].exp(), 0.0]);
        }
        fn left_bc(&self, _x: f64, y: &[f64], res: &mut [f64], jac: &mut [f64]) {
            res[0] = y[0];
            jac[..2].copy_from_slice(&[1.0, 0.0]);
        }
        fn right_bc(&self, _x: f64, y: &[f64], res: &mut [f64], jac: &mut [f64]) {
            res[0] = y[0];
            jac[..2].copy_from_slice(&[1.0, 0.0]);
        }
    }

    #[test]
    fn nonlinear_bratu() {
        let n = 201;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let sol = solve(&Bratu, &x, vec![0.0; 2 * n], NewtonOptions::default()).unwrap();
        // θ = √2 cosh(θ/4), smaller root
        let theta: f64 = 1.517_164_599_050_754_3;
        let exact = |x: f64| -2.0 * ((0.5 * (x - 0.5) * theta).cosh() / (0.25 * theta).cosh()).ln();
        for (xi, yi) in x.iter().zip(sol.component(0)) {
            assert!((yi - exact(*xi)).abs() < 1e-9, "{xi}");
        }
    }
}

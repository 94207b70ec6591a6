//! Second-order jets `(u, u′, u″)` and truncated power series whose
//! coefficients are jets. Together they carry radial derivatives exactly
//! through products and compositions.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d: f64,
    pub dd: f64,
}

impl Jet {
    pub const ZERO: Jet = Jet { v: 0.0, d: 0.0, dd: 0.0 };

    pub fn new(v: f64, d: f64, dd: f64) -> Self {
        Self { v, d, dd }
    }

    pub fn constant(v: f64) -> Self {
        Self { v, d: 0.0, dd: 0.0 }
    }

    /// The independent variable `r`.
    pub fn variable(r: f64) -> Self {
        Self { v: r, d: 1.0, dd: 0.0 }
    }

    pub fn scale(self, a: f64) -> Self {
        Self {
            v: a * self.v,
            d: a * self.d,
            dd: a * self.dd,
        }
    }

    pub fn recip(self) -> Self {
        let inv = 1.0 / self.v;
        let inv2 = inv * inv;
        Self {
            v: inv,
            d: -self.d * inv2,
            dd: 2.0 * self.d * self.d * inv2 * inv - self.dd * inv2,
        }
    }

    /// `g(u)` given `[g(u), g′(u), g″(u)]` at `u = self.v`.
    pub fn compose(self, g: [f64; 3]) -> Self {
        Self {
            v: g[0],
            d: g[1] * self.d,
            dd: g[2] * self.d * self.d + g[1] * self.dd,
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet::new(self.v + o.v, self.d + o.d, self.dd + o.dd)
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, o: Jet) {
        *self = *self + o;
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet::new(self.v - o.v, self.d - o.d, self.dd - o.dd)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet::new(
            self.v * o.v,
            self.d * o.v + self.v * o.d,
            self.dd * o.v + 2.0 * self.d * o.d + self.v * o.dd,
        )
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, a: f64) -> Jet {
        self.scale(a)
    }
}

/// Truncated series `Σ_{k≤K} a_k εᵏ` with jet coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Series(pub Vec<Jet>);

impl Series {
    pub fn zeros(order: usize) -> Self {
        Series(vec![Jet::ZERO; order + 1])
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn coeff(&self, k: usize) -> Jet {
        self.0.get(k).copied().unwrap_or(Jet::ZERO)
    }

    pub fn add(&self, o: &Series) -> Series {
        Series(self.0.iter().zip(&o.0).map(|(a, b)| *a + *b).collect())
    }

    pub fn scale(&self, a: f64) -> Series {
        Series(self.0.iter().map(|j| j.scale(a)).collect())
    }

    /// Cauchy product truncated at the common order.
    pub fn mul(&self, o: &Series) -> Series {
        let k_max = self.order().min(o.order());
        Series(
            (0..=k_max)
                .map(|k| {
                    let mut acc = Jet::ZERO;
                    for i in 0..=k {
                        acc += self.0[i] * o.0[k - i];
                    }
                    acc
                })
                .collect(),
        )
    }

    /// Series of `G(a₀ + δ)` where `δ = self − a₀` and `g_derivs[m] = G⁽ᵐ⁾(a₀.v)`
    /// for `m ≤ order + 2`.
    pub fn compose(&self, g_derivs: &[f64]) -> Series {
        let k_max = self.order();
        assert!(g_derivs.len() >= k_max + 3, "need derivatives through order K+2");
        let a0 = self.0[0];
        let mut delta = self.clone();
        delta.0[0] = Jet::ZERO;
        let mut out = Series::zeros(k_max);
        let mut power = Series::zeros(k_max);
        power.0[0] = Jet::constant(1.0);
        let mut factorial = 1.0;
        for j in 0..=k_max {
            if j > 0 {
                power = power.mul(&delta);
                factorial *= j as f64;
            }
            let gj = a0.compose([g_derivs[j], g_derivs[j + 1], g_derivs[j + 2]]).scale(1.0 / factorial);
            for k in j..=k_max {
                out.0[k] += gj * power.0[k];
            }
        }
        out
    }
}

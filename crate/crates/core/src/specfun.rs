//! Modified Bessel functions `Iₙ`, `Kₙ` of integer order and their first
//! derivatives, in plain or exponentially scaled form.
//!
//! `K₀, K₁` come from the Temme series for `s ≤ 2` and Steed's continued
//! fraction above; higher orders by upward recurrence. `Iₙ` is summed
//! directly for `s ≤ 2`; above that the ratio `Iₙ′/Iₙ` is obtained from
//! its continued fraction and `Iₙ` itself from the Wronskian with `Kₙ`.
//! Past [`HANKEL_THRESHOLD`] both kinds use the Hankel expansion.

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EPS: f64 = 1e-17;
const MAX_ITER: usize = 100_000;

/// Largest argument accepted by the unscaled form.
pub const UNSCALED_LIMIT: f64 = 700.0;
/// Arguments beyond this use the large-`s` Hankel expansion.
pub const HANKEL_THRESHOLD: f64 = 1000.0;
/// Orders above this are rejected.
pub const MAX_ORDER: u32 = 20;

/// `Iₙ, Iₙ′, Kₙ, Kₙ′` at one argument.
///
/// With `scaled` set, the `I` entries carry a factor `e^{−s}` and the `K`
/// entries a factor `e^{s}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselQuad {
    pub s: f64,
    pub i: f64,
    pub ip: f64,
    pub k: f64,
    pub kp: f64,
    pub scaled: bool,
}

impl BesselQuad {
    /// `s (I′K − K′I)`, which equals 1 for exact values (scaling cancels).
    pub fn wronskian(&self) -> f64 {
        self.s * (self.ip * self.k - self.kp * self.i)
    }

    pub fn k_is_infinite(&self) -> bool {
        self.k.is_infinite()
    }
}

pub fn bessel_quad(n: u32, s: f64, scaled: bool) -> Result<BesselQuad> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("Bessel argument {s} must be finite and >= 0")));
    }
    if n > MAX_ORDER {
        return Err(Error::InvalidArgument(format!("Bessel order {n} exceeds {MAX_ORDER}")));
    }
    if !scaled && s > UNSCALED_LIMIT {
        return Err(Error::BesselOverflow { s });
    }
    if s == 0.0 {
        return Ok(BesselQuad {
            s,
            i: if n == 0 { 1.0 } else { 0.0 },
            ip: if n == 1 { 0.5 } else { 0.0 },
            k: f64::INFINITY,
            kp: f64::NEG_INFINITY,
            scaled,
        });
    }
    if s > HANKEL_THRESHOLD {
        // only reachable with `scaled` set, unscaled stops at UNSCALED_LIMIT
        let (i, ip, k, kp) = hankel_scaled(n, s);
        return Ok(BesselQuad { s, i, ip, k, kp, scaled: true });
    }

    // K_n and K_{n+1}; the continued-fraction branch yields e^s-scaled values.
    let (k0, k1, k_scaled) = if s <= 2.0 {
        let (k0, k1) = k01_temme(s);
        (k0, k1, false)
    } else {
        let (k0, k1) = k01_steed_scaled(s);
        (k0, k1, true)
    };
    let (kn, kn1) = k_upward(n, s, k0, k1);
    let kpn = -kn1 + n as f64 / s * kn;
    let to_scaled_k = if k_scaled { 1.0 } else { s.exp() };
    let (kn_s, kpn_s) = (kn * to_scaled_k, kpn * to_scaled_k);

    let (i_s, ip_s) = if s <= 2.0 {
        let (i_n, i_n1) = i_series(n, s);
        let ip = i_n1 + n as f64 / s * i_n;
        let scale = (-s).exp();
        (i_n * scale, ip * scale)
    } else {
        let ratio = i_ratio_cf1(n, s);
        let i = 1.0 / (s * (ratio * kn_s - kpn_s));
        (i, ratio * i)
    };

    if scaled {
        Ok(BesselQuad { s, i: i_s, ip: ip_s, k: kn_s, kp: kpn_s, scaled })
    } else {
        let (up, down) = (s.exp(), (-s).exp());
        Ok(BesselQuad {
            s,
            i: i_s * up,
            ip: ip_s * up,
            k: kn_s * down,
            kp: kpn_s * down,
            scaled,
        })
    }
}

/// Temme series for integer order: `(K₀(x), K₁(x))`, `0 < x ≤ 2`.
fn k01_temme(x: f64) -> (f64, f64) {
    let x2 = 0.5 * x;
    let d = x2 * x2;
    let mut ff = -x2.ln() - EULER_GAMMA;
    let mut sum = ff;
    let mut p = 0.5;
    let mut q = 0.5;
    let mut c = 1.0;
    let mut sum1 = p;
    for i in 1..MAX_ITER {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi);
        c *= d / fi;
        p /= fi;
        q /= fi;
        let del = c * ff;
        sum += del;
        let del1 = c * (p - fi * ff);
        sum1 += del1;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum, sum1 * 2.0 / x)
}

/// Steed's continued fraction: `(e^x K₀(x), e^x K₁(x))`, `x > 2`.
fn k01_steed_scaled(x: f64) -> (f64, f64) {
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    h *= a1;
    let k0 = (std::f64::consts::PI / (2.0 * x)).sqrt() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}

/// Upward recurrence `K_{m+1} = K_{m−1} + (2m/x) K_m`; returns `(Kₙ, K_{n+1})`.
fn k_upward(n: u32, x: f64, k0: f64, k1: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (k0, k1);
    for m in 1..=n {
        let next = prev + 2.0 * m as f64 / x * cur;
        prev = cur;
        cur = next;
    }
    (prev, cur)
}

/// Ascending series for `(Iₙ(x), I_{n+1}(x))`.
fn i_series(n: u32, x: f64) -> (f64, f64) {
    let series = |order: u32| {
        let half = 0.5 * x;
        let mut term = (1..=order).fold(1.0, |acc, j| acc * half / j as f64);
        let mut sum = term;
        let q = half * half;
        for k in 1..MAX_ITER {
            term *= q / (k as f64 * (k as f64 + order as f64));
            sum += term;
            if term < sum * EPS {
                break;
            }
        }
        sum
    };
    (series(n), series(n + 1))
}

/// Continued fraction for `Iₙ′(x)/Iₙ(x)`.
fn i_ratio_cf1(n: u32, x: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    let xi2 = 2.0 / x;
    let mut h = (n as f64 / x).max(FPMIN);
    let mut b = xi2 * n as f64;
    let mut d = 0.0;
    let mut c = h;
    for _ in 0..MAX_ITER {
        b += xi2;
        d = 1.0 / (b + d);
        c = b + 1.0 / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Hankel expansion, scaled: `(e^{−x}Iₙ, e^{−x}Iₙ′, e^{x}Kₙ, e^{x}Kₙ′)`.
fn hankel_scaled(n: u32, x: f64) -> (f64, f64, f64, f64) {
    let sums = |order: u32| {
        let mu = 4.0 * (order as f64).powi(2);
        let (mut term, mut sum_k, mut sum_i) = (1.0_f64, 1.0_f64, 1.0_f64);
        for k in 1..200 {
            let odd = (2 * k - 1) as f64;
            term *= (mu - odd * odd) / (k as f64 * 8.0 * x);
            sum_k += term;
            sum_i += if k % 2 == 1 { -term } else { term };
            if term.abs() < EPS * sum_k.abs() {
                break;
            }
        }
        (sum_i, sum_k)
    };
    let pref_i = 1.0 / (2.0 * std::f64::consts::PI * x).sqrt();
    let pref_k = (std::f64::consts::PI / (2.0 * x)).sqrt();
    let (si0, sk0) = sums(n);
    let (si1, sk1) = sums(n + 1);
    let (i_n, i_n1) = (pref_i * si0, pref_i * si1);
    let (k_n, k_n1) = (pref_k * sk0, pref_k * sk1);
    let nf = n as f64;
    (i_n, i_n1 + nf / x * i_n, k_n, -k_n1 + nf / x * k_n)
}

/// Which end of the half-line an expansion describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Zero,
    Infinity,
}

/// Leading-order predictions for `Iₙ, Iₙ′, Kₙ, Kₙ′` (unscaled).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadingTerms {
    pub i: f64,
    pub ip: f64,
    pub k: f64,
    pub kp: f64,
}

/// Small- or large-argument leading behavior, for cross-checking [`bessel_quad`].
pub fn leading_asymptotics(n: u32, s: f64, direction: Direction) -> LeadingTerms {
    let nf = n as f64;
    match direction {
        Direction::Zero => {
            let half = 0.5 * s;
            let gamma_n1 = factorial(n);
            let i = half.powi(n as i32) / gamma_n1;
            let ip = if n == 0 {
                0.5 * half
            } else {
                nf / (2.0 * gamma_n1) * half.powi(n as i32 - 1)
            };
            let (k, kp) = if n == 0 {
                (-half.ln() - EULER_GAMMA, -1.0 / s)
            } else {
                let gamma_n = factorial(n - 1);
                (
                    0.5 * gamma_n * half.powi(-(n as i32)),
                    -nf * gamma_n / 4.0 * half.powi(-(n as i32) - 1),
                )
            };
            LeadingTerms { i, ip, k, kp }
        }
        Direction::Infinity => {
            let k = (-s).exp() * (std::f64::consts::PI / (2.0 * s)).sqrt();
            let i = s.exp() / (2.0 * std::f64::consts::PI * s).sqrt();
            LeadingTerms { i, ip: i, k, kp: -k }
        }
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, j| acc * j as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn origin_values() {
        let q = bessel_quad(0, 0.0, false).unwrap();
        assert_eq!(q.i, 1.0);
        assert!(q.k_is_infinite());
        let q1 = bessel_quad(1, 0.0, false).unwrap();
        assert_eq!(q1.i, 0.0);
        assert_eq!(q1.ip, 0.5);
    }

    #[test]
    fn unscaled_overflow_is_reported() {
        assert!(matches!(
            bessel_quad(1, 800.0, false),
            Err(Error::BesselOverflow { .. })
        ));
        assert!(bessel_quad(1, 800.0, true).is_ok());
        assert!(bessel_quad(21, 1.0, false).is_err());
        assert!(bessel_quad(1, -1.0, false).is_err());
    }

    #[test]
    fn wronskian_at_ten() {
        let q = bessel_quad(1, 10.0, false).unwrap();
        assert!((q.wronskian() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn branches_agree_across_two() {
        for n in [0, 1, 2, 5] {
            let below = bessel_quad(n, 2.0 - 1e-9, true).unwrap();
            let above = bessel_quad(n, 2.0 + 1e-9, true).unwrap();
            assert!(rel(below.i, above.i) < 1e-8);
            assert!(rel(below.k, above.k) < 1e-8);
        }
    }

    #[test]
    fn hankel_matches_continued_fraction_at_threshold() {
        for n in [0, 1, 3, 20] {
            let lo = bessel_quad(n, HANKEL_THRESHOLD, true).unwrap();
            let hi = bessel_quad(n, HANKEL_THRESHOLD + 1e-9, true).unwrap();
            assert!(rel(lo.i, hi.i) < 1e-12, "n={n}");
            assert!(rel(lo.k, hi.k) < 1e-12);
            assert!(rel(lo.ip, hi.ip) < 1e-12);
            assert!(rel(lo.kp, hi.kp) < 1e-12);
        }
    }

    #[test]
    fn small_argument_leading_terms() {
        let s = 1e-6;
        let q = bessel_quad(1, s, false).unwrap();
        let lead = leading_asymptotics(1, s, Direction::Zero);
        assert!(rel(q.i, lead.i) < 1e-9);
        assert!(rel(q.i / (s / 2.0), 1.0) < 1e-9);
        let q2 = bessel_quad(2, s, false).unwrap();
        let lead2 = leading_asymptotics(2, s, Direction::Zero);
        assert!(rel(q2.k, lead2.k) < 1e-9);
        assert!(rel(q2.kp, lead2.kp) < 1e-9);
    }

    #[test]
    fn large_argument_leading_terms() {
        let q = bessel_quad(1, 50.0, false).unwrap();
        let lead = leading_asymptotics(1, 50.0, Direction::Infinity);
        assert!(rel(q.k, lead.k) < 0.02);
        assert!(rel(q.i, lead.i) < 0.02);
    }
}

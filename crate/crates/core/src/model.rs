//! λ-ω model functions, the derived profiles `F(x) = x λ(x)` and
//! `ω̃(x) = x ω(x)`, and the hypothesis gate every solver runs behind.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A smooth real function that can report its derivatives analytically.
pub trait Derivatives: Send + Sync + fmt::Debug {
    /// `D^order f(x)`.
    fn derivative(&self, x: f64, order: usize) -> Result<f64>;

    /// Highest derivative order available, `None` if unbounded.
    fn max_order(&self) -> Option<usize> {
        None
    }
}

/// Polynomial `c₀ + c₁x + c₂x² + …`, differentiable to any order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut coeffs = coeffs;
        while coeffs.len() > 1 && coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

impl Derivatives for Polynomial {
    fn derivative(&self, x: f64, order: usize) -> Result<f64> {
        if order > self.degree() {
            return Ok(0.0);
        }
        // Horner on the differentiated coefficients k!/(k-m)! c_k.
        let mut acc = 0.0;
        for k in (order..self.coeffs.len()).rev() {
            let falling: f64 = ((k - order + 1)..=k).map(|j| j as f64).product();
            acc = acc * x + falling * self.coeffs[k];
        }
        Ok(acc)
    }
}

/// Closure-backed evaluator with a finite derivative capability; lets
/// non-polynomial profiles plug into the solvers.
pub struct Analytic {
    name: String,
    max_order: usize,
    eval: Box<dyn Fn(f64, usize) -> f64 + Send + Sync>,
}

impl Analytic {
    pub fn new(
        name: impl Into<String>,
        max_order: usize,
        eval: impl Fn(f64, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            max_order,
            eval: Box::new(eval),
        }
    }
}

impl fmt::Debug for Analytic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Analytic")
            .field("name", &self.name)
            .field("max_order", &self.max_order)
            .finish()
    }
}

impl Derivatives for Analytic {
    fn derivative(&self, x: f64, order: usize) -> Result<f64> {
        if order > self.max_order {
            return Err(Error::Capability {
                name: self.name.clone(),
                requested: order,
                available: self.max_order,
            });
        }
        Ok((self.eval)(x, order))
    }

    fn max_order(&self) -> Option<usize> {
        Some(self.max_order)
    }
}

/// Serializable model description as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub lambda_poly: Vec<f64>,
    pub omega_poly: Vec<f64>,
    pub n: u32,
}

impl ModelSpec {
    pub fn build(&self) -> ModelFunctions {
        ModelFunctions::new(
            self.name.clone(),
            self.n,
            Arc::new(Polynomial::new(self.lambda_poly.clone())),
            Arc::new(Polynomial::new(self.omega_poly.clone())),
        )
    }
}

/// A λ-ω model: amplitude law λ, frequency law ω and arm count `n`.
#[derive(Debug, Clone)]
pub struct ModelFunctions {
    name: String,
    n: u32,
    lambda: Arc<dyn Derivatives>,
    omega: Arc<dyn Derivatives>,
    d: f64,
}

impl ModelFunctions {
    pub fn new(
        name: impl Into<String>,
        n: u32,
        lambda: Arc<dyn Derivatives>,
        omega: Arc<dyn Derivatives>,
    ) -> Self {
        let d = lambda.derivative(1.0, 1).map(|v| -v).unwrap_or(f64::NAN);
        Self {
            name: name.into(),
            n,
            lambda,
            omega,
            d,
        }
    }

    /// Complex Ginzburg-Landau: λ = 1 − x², ω = −x².
    pub fn ginzburg_landau(n: u32) -> Self {
        ModelSpec {
            name: "ginzburg-landau".into(),
            lambda_poly: vec![1.0, 0.0, -1.0],
            omega_poly: vec![0.0, 0.0, -1.0],
            n,
        }
        .build()
    }

    /// Greenberg: λ = 1 − x, ω = x − 1.
    pub fn greenberg(n: u32) -> Self {
        ModelSpec {
            name: "greenberg".into(),
            lambda_poly: vec![1.0, -1.0],
            omega_poly: vec![-1.0, 1.0],
            n,
        }
        .build()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// `d = −λ′(1)`.
    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn lambda(&self, x: f64) -> f64 {
        self.lambda_deriv(x, 0)
    }

    pub fn omega(&self, x: f64) -> f64 {
        self.omega_deriv(x, 0)
    }

    pub fn lambda_deriv(&self, x: f64, order: usize) -> f64 {
        self.lambda.derivative(x, order).unwrap_or(f64::NAN)
    }

    pub fn omega_deriv(&self, x: f64, order: usize) -> f64 {
        self.omega.derivative(x, order).unwrap_or(f64::NAN)
    }

    /// `[F(x), DF(x), …, D^m F(x)]` for `F(x) = x λ(x)`.
    pub fn eval_f_derivs(&self, x: f64, max_order: usize) -> Result<Vec<f64>> {
        leibniz_x_times(&*self.lambda, x, max_order)
    }

    /// `[ω̃(x), Dω̃(x), …, D^m ω̃(x)]` for `ω̃(x) = x ω(x)`.
    pub fn eval_omega_tilde_derivs(&self, x: f64, max_order: usize) -> Result<Vec<f64>> {
        leibniz_x_times(&*self.omega, x, max_order)
    }

    /// `DF(x) = λ(x) + x λ′(x)`.
    pub fn df(&self, x: f64) -> f64 {
        self.lambda_deriv(x, 0) + x * self.lambda_deriv(x, 1)
    }

    /// Largest usable derivative order of `F` and `ω̃`.
    pub fn derivative_capability(&self) -> Option<usize> {
        match (self.lambda.max_order(), self.omega.max_order()) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(usize::MAX).min(b.unwrap_or(usize::MAX))),
        }
    }

    /// Runs the hypothesis gate and errors out if any check fails.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_hypotheses(self, 200);
        if report.all_pass() {
            Ok(())
        } else {
            Err(Error::Hypothesis {
                name: self.name.clone(),
                failed: report.failures().join(", "),
            })
        }
    }
}

/// `D^m (x g(x)) = x D^m g + m D^{m-1} g`.
fn leibniz_x_times(g: &dyn Derivatives, x: f64, max_order: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(max_order + 1);
    let mut prev = 0.0;
    for m in 0..=max_order {
        let cur = g.derivative(x, m)?;
        out.push(x * cur + m as f64 * prev);
        prev = cur;
    }
    Ok(out)
}

/// One named hypothesis check.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub pass: bool,
    /// Signed margin: positive means the check holds with that much room.
    pub margin: f64,
}

/// Outcome of [`validate_hypotheses`].
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub model: String,
    pub d: f64,
    pub checks: Vec<HypothesisCheck>,
    /// Sample abscissae used for the concavity check.
    pub samples: Vec<f64>,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{} (margin {:.3e})", c.name, c.margin))
            .collect()
    }
}

/// Upper end of the concavity sample, `1 + margin`.
pub const CONCAVITY_SAMPLE_END: f64 = 1.2;
const VALUE_TOL: f64 = 1e-12;

/// Checks λ(0) = 1, λ(1) = 0, λ′(1) < 0 and strict concavity of `x λ(x)`
/// on a geometric sample of `(0, 1.2]`.
pub fn validate_hypotheses(model: &ModelFunctions, sample_count: usize) -> HypothesisReport {
    let sample_count = sample_count.max(100);
    let x_min: f64 = 1e-4;
    let ratio = (CONCAVITY_SAMPLE_END / x_min).powf(1.0 / (sample_count - 1) as f64);
    let samples: Vec<f64> = (0..sample_count)
        .map(|i| {
            if i + 1 == sample_count {
                CONCAVITY_SAMPLE_END
            } else {
                x_min * ratio.powi(i as i32)
            }
        })
        .collect();

    let lambda0 = model.lambda(0.0);
    let lambda1 = model.lambda(1.0);
    let dlambda1 = model.lambda_deriv(1.0, 1);
    let mut checks = vec![
        HypothesisCheck {
            name: "lambda(0) = 1",
            pass: (lambda0 - 1.0).abs() <= VALUE_TOL,
            margin: VALUE_TOL - (lambda0 - 1.0).abs(),
        },
        HypothesisCheck {
            name: "lambda(1) = 0",
            pass: lambda1.abs() <= VALUE_TOL,
            margin: VALUE_TOL - lambda1.abs(),
        },
        HypothesisCheck {
            name: "lambda'(1) < 0",
            pass: dlambda1 < 0.0,
            margin: -dlambda1,
        },
    ];

    let worst = samples
        .iter()
        .map(|&x| {
            model
                .eval_f_derivs(x, 2)
                .map(|v| -v[2])
                .unwrap_or(f64::NEG_INFINITY)
        })
        .fold(f64::INFINITY, f64::min);
    checks.push(HypothesisCheck {
        name: "x*lambda(x) concave on (0, 1.2]",
        pass: worst > 0.0,
        margin: worst,
    });

    HypothesisReport {
        model: model.name().to_string(),
        d: model.d(),
        checks,
        samples,
    }
}

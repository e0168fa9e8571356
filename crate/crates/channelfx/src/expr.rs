//! Scalar functions of the channel parameter `u`.
//!
//! Channel definitions carry their centerline, width or radius as a
//! [`FunctionExpr`]: a polynomial, a single sinusoid, or a table of samples
//! interpolated by a natural cubic spline. All three variants are evaluable
//! and twice differentiable everywhere in their declared range, which the
//! metric computations rely on.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar function u ↦ f(u).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionExpr {
    /// `coeffs[0] + coeffs[1] u + coeffs[2] u² + ...`
    Polynomial { coeffs: Vec<f64> },
    /// `a0 + amp · sin(k u + phase)`
    Sinusoid { a0: f64, amp: f64, k: f64, phase: f64 },
    /// Samples at strictly increasing `u`, natural-cubic-spline interpolated.
    Tabulated {
        u: Vec<f64>,
        values: Vec<f64>,
        /// Spline second derivatives at the knots, built on first use.
        #[serde(skip)]
        moments: OnceLock<Vec<f64>>,
    },
}

impl FunctionExpr {
    pub fn constant(value: f64) -> Self {
        FunctionExpr::Polynomial { coeffs: vec![value] }
    }

    pub fn polynomial(coeffs: impl Into<Vec<f64>>) -> Self {
        FunctionExpr::Polynomial { coeffs: coeffs.into() }
    }

    pub fn sinusoid(a0: f64, amp: f64, k: f64, phase: f64) -> Self {
        FunctionExpr::Sinusoid { a0, amp, k, phase }
    }

    pub fn tabulated(u: Vec<f64>, values: Vec<f64>) -> Self {
        FunctionExpr::Tabulated {
            u,
            values,
            moments: OnceLock::new(),
        }
    }

    /// Checks the variant invariants. `pointer` locates the expression in
    /// whatever document it came from.
    pub fn validate(&self, pointer: &str) -> Result<()> {
        match self {
            FunctionExpr::Polynomial { coeffs } => {
                if coeffs.is_empty() {
                    return Err(Error::validation(pointer, "polynomial needs coefficients"));
                }
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::validation(pointer, "non-finite coefficient"));
                }
            }
            FunctionExpr::Sinusoid { a0, amp, k, phase } => {
                if ![*a0, *amp, *k, *phase].iter().all(|x| x.is_finite()) {
                    return Err(Error::validation(pointer, "non-finite sinusoid parameter"));
                }
            }
            FunctionExpr::Tabulated { u, values, .. } => {
                if u.len() < 4 {
                    return Err(Error::validation(pointer, "tabulated needs >= 4 samples"));
                }
                if u.len() != values.len() {
                    return Err(Error::validation(pointer, "u/values length mismatch"));
                }
                if u.windows(2).any(|p| p[1] <= p[0]) {
                    return Err(Error::validation(pointer, "u samples must strictly increase"));
                }
                if u.iter().chain(values.iter()).any(|x| !x.is_finite()) {
                    return Err(Error::validation(pointer, "non-finite sample"));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            FunctionExpr::Polynomial { coeffs } => horner(coeffs, x),
            FunctionExpr::Sinusoid { a0, amp, k, phase } => a0 + amp * (k * x + phase).sin(),
            FunctionExpr::Tabulated { u, values, moments } => {
                spline_eval(u, values, self.spline_moments(u, values, moments), x).0
            }
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            FunctionExpr::Polynomial { coeffs } => horner_deriv(coeffs, x),
            FunctionExpr::Sinusoid { amp, k, phase, .. } => amp * k * (k * x + phase).cos(),
            FunctionExpr::Tabulated { u, values, moments } => {
                spline_eval(u, values, self.spline_moments(u, values, moments), x).1
            }
        }
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        match self {
            FunctionExpr::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (n, c) in coeffs.iter().enumerate().skip(2).rev() {
                    acc = acc * x + c * (n * (n - 1)) as f64;
                }
                acc
            }
            FunctionExpr::Sinusoid { amp, k, phase, .. } => -amp * k * k * (k * x + phase).sin(),
            FunctionExpr::Tabulated { u, values, moments } => {
                spline_eval(u, values, self.spline_moments(u, values, moments), x).2
            }
        }
    }

    /// True when f' > 0 on a dense sample of `[a, b]`.
    pub fn is_increasing_on(&self, a: f64, b: f64) -> bool {
        let n = 513;
        (0..n).all(|i| {
            let x = a + (b - a) * i as f64 / (n - 1) as f64;
            self.deriv(x) > 0.0
        })
    }

    fn spline_moments<'a>(
        &self,
        u: &[f64],
        values: &[f64],
        cell: &'a OnceLock<Vec<f64>>,
    ) -> &'a [f64] {
        cell.get_or_init(|| natural_spline_moments(u, values))
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn horner_deriv(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (n, c) in coeffs.iter().enumerate().skip(1).rev() {
        acc = acc * x + c * n as f64;
    }
    acc
}

/// Second derivatives M_i of the natural cubic spline through (u_i, y_i).
/// Tridiagonal system, M_0 = M_{n-1} = 0.
fn natural_spline_moments(u: &[f64], y: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Forward elimination on the interior rows.
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = u[i] - u[i - 1];
        let h1 = u[i + 1] - u[i];
        diag[i] = (h0 + h1) / 3.0;
        rhs[i] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
    }
    for i in 2..n - 1 {
        let h0 = u[i] - u[i - 1];
        let factor = (h0 / 6.0) / diag[i - 1];
        diag[i] -= factor * h0 / 6.0;
        rhs[i] -= factor * rhs[i - 1];
    }
    for i in (1..n - 1).rev() {
        let h1 = u[i + 1] - u[i];
        let upper = if i + 1 < n - 1 { (h1 / 6.0) * m[i + 1] } else { 0.0 };
        m[i] = (rhs[i] - upper) / diag[i];
    }
    m
}

/// Value, first and second derivative of the spline at `x`. Outside the knot
/// range the boundary cubic is extended.
fn spline_eval(u: &[f64], y: &[f64], m: &[f64], x: f64) -> (f64, f64, f64) {
    let n = u.len();
    let i = match u.binary_search_by(|probe| probe.partial_cmp(&x).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(i) => i.saturating_sub(1).min(n - 2),
    };
    let h = u[i + 1] - u[i];
    let a = u[i + 1] - x;
    let b = x - u[i];
    let value = m[i] * a * a * a / (6.0 * h)
        + m[i + 1] * b * b * b / (6.0 * h)
        + (y[i] / h - m[i] * h / 6.0) * a
        + (y[i + 1] / h - m[i + 1] * h / 6.0) * b;
    let deriv = -m[i] * a * a / (2.0 * h) + m[i + 1] * b * b / (2.0 * h)
        - (y[i] / h - m[i] * h / 6.0)
        + (y[i + 1] / h - m[i + 1] * h / 6.0);
    let second = (m[i] * a + m[i + 1] * b) / h;
    (value, deriv, second)
}

//! Sampled functions of the channel parameter.
//!
//! A [`ScalarProfile`] is a function of `u` on a 1-D grid: the volume density
//! σ(u), the section area A(u), the flux profiles and the assembled diffusion
//! coefficients all live here. Interpolation is linear (it reproduces nodal
//! values exactly and matches the finite-volume order used elsewhere),
//! differentiation is second-order centered.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarProfile {
    u: Vec<f64>,
    values: Vec<f64>,
    unit: String,
}

impl ScalarProfile {
    pub fn new(u: Vec<f64>, values: Vec<f64>, unit: impl Into<String>) -> Result<Self> {
        if u.len() != values.len() {
            return Err(Error::GridMismatch {
                context: "ScalarProfile::new",
                expected: format!("{} values", u.len()),
                got: format!("{}", values.len()),
            });
        }
        if u.len() < 2 {
            return Err(Error::Precondition("profile needs at least 2 nodes".into()));
        }
        if u.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Precondition("profile grid must strictly increase".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { location: "ScalarProfile::new".into() });
        }
        Ok(ScalarProfile { u, values, unit: unit.into() })
    }

    pub fn from_fn(u: &[f64], unit: &str, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = u.iter().map(|&x| f(x)).collect();
        ScalarProfile::new(u.to_vec(), values, unit)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn value_at(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Linear interpolation; clamps to the end values outside the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.u.len();
        if x <= self.u[0] {
            return self.values[0];
        }
        if x >= self.u[n - 1] {
            return self.values[n - 1];
        }
        let i = match self.u.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.values[i],
            Err(i) => i - 1,
        };
        let t = (x - self.u[i]) / (self.u[i + 1] - self.u[i]);
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// Centered-difference derivative, second-order one-sided at the ends.
    pub fn derivative(&self) -> ScalarProfile {
        let n = self.u.len();
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            d[i] = (self.values[i + 1] - self.values[i - 1]) / (self.u[i + 1] - self.u[i - 1]);
        }
        // Uniform-grid one-sided stencils at the ends.
        let h0 = self.u[1] - self.u[0];
        d[0] = (-3.0 * self.values[0] + 4.0 * self.values[1] - self.values[2]) / (2.0 * h0);
        let h1 = self.u[n - 1] - self.u[n - 2];
        d[n - 1] =
            (3.0 * self.values[n - 1] - 4.0 * self.values[n - 2] + self.values[n - 3]) / (2.0 * h1);
        ScalarProfile {
            u: self.u.clone(),
            values: d,
            unit: format!("{}/u", self.unit),
        }
    }

    /// Cumulative trapezoid integral from the first node; starts at zero.
    pub fn cumulative(&self, unit: &str) -> ScalarProfile {
        let mut acc = vec![0.0; self.u.len()];
        for i in 1..self.u.len() {
            acc[i] = acc[i - 1]
                + 0.5 * (self.values[i] + self.values[i - 1]) * (self.u[i] - self.u[i - 1]);
        }
        ScalarProfile {
            u: self.u.clone(),
            values: acc,
            unit: unit.into(),
        }
    }

    /// Trapezoid integral over the whole grid.
    pub fn integral(&self) -> f64 {
        self.u
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(uu, vv)| 0.5 * (vv[0] + vv[1]) * (uu[1] - uu[0]))
            .sum()
    }

    pub fn map(&self, unit: &str, f: impl Fn(f64) -> f64) -> ScalarProfile {
        ScalarProfile {
            u: self.u.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            unit: unit.into(),
        }
    }

    /// Pointwise combination of two profiles on identical grids.
    pub fn zip_with(
        &self,
        other: &ScalarProfile,
        unit: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ScalarProfile> {
        self.check_same_grid(other, "ScalarProfile::zip_with")?;
        Ok(ScalarProfile {
            u: self.u.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            unit: unit.into(),
        })
    }

    pub fn check_same_grid(&self, other: &ScalarProfile, context: &'static str) -> Result<()> {
        if self.u.len() != other.u.len()
            || self
                .u
                .iter()
                .zip(&other.u)
                .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
        {
            return Err(Error::GridMismatch {
                context,
                expected: format!("{} nodes from {:.6} to {:.6}", self.u.len(), self.u[0], self.u[self.u.len() - 1]),
                got: format!("{} nodes", other.u.len()),
            });
        }
        Ok(())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with header `u,value` and 17 significant digits.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "u,value")?;
        for (u, v) in self.u.iter().zip(&self.values) {
            writeln!(out, "{:.16e},{:.16e}", u, v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn interpolation_reproduces_nodes() {
        let p = ScalarProfile::from_fn(&grid(17), "1", |u| u * u).unwrap();
        for (i, &u) in p.u().iter().enumerate() {
            assert_eq!(p.eval(u), p.values()[i]);
        }
        assert_relative_eq!(p.eval(0.5 + 1.0 / 64.0), p.eval(0.5) / 2.0 + p.eval(0.5 + 1.0 / 32.0) / 2.0);
    }

    #[test]
    fn derivative_is_second_order() {
        let mut errs = Vec::new();
        for n in [33, 65] {
            let p = ScalarProfile::from_fn(&grid(n), "1", |u| (2.0 * u).sin()).unwrap();
            let d = p.derivative();
            let err: f64 = p
                .u()
                .iter()
                .zip(d.values())
                .map(|(&u, &v)| (v - 2.0 * (2.0 * u).cos()).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.9, "observed order {order}");
    }

    #[test]
    fn cumulative_matches_antiderivative() {
        let p = ScalarProfile::from_fn(&grid(513), "1", |u| u).unwrap();
        let nu = p.cumulative("volume");
        assert_relative_eq!(nu.values()[512], 0.5, epsilon = 1e-12);
        assert_eq!(nu.values()[0], 0.0);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = ScalarProfile::from_fn(&grid(8), "1", |_| 1.0).unwrap();
        let b = ScalarProfile::from_fn(&grid(9), "1", |_| 1.0).unwrap();
        assert!(a.zip_with(&b, "1", |x, y| x + y).is_err());
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let p = ScalarProfile::new(vec![0.0, 1.0], vec![1.0 / 3.0, 2.0 / 3.0], "1").unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("u,value\n"));
        assert!(text.contains("3.3333333333333331e-1"));
    }
}

//! Dense scalar fields on a 2-D parameter grid.

use std::io::Write;

use crate::error::{Error, Result};

/// Row-major `n_u × n_v` field of finite values; row index follows `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    n_u: usize,
    n_v: usize,
    data: Vec<f64>,
}

impl Field2D {
    pub fn new(n_u: usize, n_v: usize, fill: f64) -> Self {
        Field2D { n_u, n_v, data: vec![fill; n_u * n_v] }
    }

    pub fn from_data(n_u: usize, n_v: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_u * n_v {
            return Err(Error::GridMismatch {
                context: "Field2D::from_data",
                expected: format!("{} values", n_u * n_v),
                got: format!("{}", data.len()),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { location: "Field2D::from_data".into() });
        }
        Ok(Field2D { n_u, n_v, data })
    }

    pub fn rows(&self) -> usize {
        self.n_u
    }

    pub fn cols(&self) -> usize {
        self.n_v
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_v + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n_v + j] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn check_dims(&self, n_u: usize, n_v: usize, context: &'static str) -> Result<()> {
        if self.n_u != n_u || self.n_v != n_v {
            return Err(Error::GridMismatch {
                context,
                expected: format!("{n_u}x{n_v}"),
                got: format!("{}x{}", self.n_u, self.n_v),
            });
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Field2D) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV matrix, one row per u-node, 17 significant digits.
    pub fn write_csv_matrix(&self, mut out: impl Write) -> Result<()> {
        for i in 0..self.n_u {
            let row: Vec<String> = (0..self.n_v)
                .map(|j| format!("{:.16e}", self.get(i, j)))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

//! Compressed sparse rows and a Jacobi-preconditioned conjugate gradient.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_counts = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if prev == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_counts[r + 1] += 1;
                prev = Some((r, c));
            }
        }
        // Prefix sum turns per-row counts into offsets.
        for r in 0..n {
            row_counts[r + 1] += row_counts[r];
        }
        CsrMatrix { n, row_ptr: row_counts, col_idx, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] = self.values[k];
                }
            }
        }
        d
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        (self.row_ptr[r]..self.row_ptr[r + 1])
            .map(|k| self.values[k])
            .sum()
    }

    /// max |a_ij - a_ji| / max |a_ij|, for the symmetry invariant.
    pub fn relative_asymmetry(&self) -> f64 {
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                scale = scale.max(self.values[k].abs());
                let transposed = self.get(c, r);
                worst = worst.max((self.values[k] - transposed).abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.col_idx[k] == c {
                return self.values[k];
            }
        }
        0.0
    }

    /// B = A + diag(d), reusing the sparsity pattern plus the diagonal.
    pub fn add_diagonal(&self, d: &[f64]) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.values.len() + self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                triplets.push((r, self.col_idx[k], self.values[k]));
            }
            triplets.push((r, r, d[r]));
        }
        CsrMatrix::from_triplets(self.n, triplets)
    }

    /// B = scale * A.
    pub fn scaled(&self, scale: f64) -> CsrMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= scale;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PcgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final residual relative to ‖b‖.
    pub residual: f64,
}

/// Solve A x = b for symmetric positive-definite A with Jacobi-preconditioned
/// conjugate gradients. Deterministic; converged when ‖r‖₂ ≤ tol ‖b‖₂.
pub fn jacobi_pcg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<PcgSolution> {
    let n = a.n();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(PcgSolution { x: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    a.mul_vec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut res = norm(&r) / b_norm;
    let mut best = x.clone();
    let mut best_res = res;
    let mut iterations = 0;

    while res > tol && iterations < max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            // Lost positive definiteness (or stagnated); report the best seen.
            return Err(Error::NonConvergence {
                iterations,
                residual: best_res,
                best,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
        res = norm(&r) / b_norm;
        if res < best_res {
            best_res = res;
            best.copy_from_slice(&x);
        }
    }

    if res > tol {
        return Err(Error::NonConvergence { iterations, residual: best_res, best });
    }
    Ok(PcgSolution { x, iterations, residual: res })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

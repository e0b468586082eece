//! Flat per-path/per-step storage shared by the simulator, solvers and the
//! verification layer.

use crate::{Error, Result};

/// Scalar quantity sampled on every path at every grid column (wealth, Y, R).
///
/// Columns may number `N` (one per step) or `N + 1` (one per grid time)
/// depending on the quantity stored.
#[derive(Debug, Clone)]
pub struct ScalarPaths {
    n_paths: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl ScalarPaths {
    pub fn zeros(n_paths: usize, n_cols: usize) -> Self {
        Self {
            n_paths,
            n_cols,
            data: vec![0.0; n_paths * n_cols],
        }
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, path: usize, col: usize) -> f64 {
        self.data[path * self.n_cols + col]
    }

    #[inline]
    pub fn set(&mut self, path: usize, col: usize, value: f64) {
        self.data[path * self.n_cols + col] = value;
    }

    /// Cross-path mean of one column, summed in path order.
    pub fn column_mean(&self, col: usize) -> f64 {
        let mut acc = 0.0;
        for p in 0..self.n_paths {
            acc += self.get(p, col);
        }
        acc / self.n_paths as f64
    }

    /// Cross-path (mean, standard error) of one column.
    pub fn column_mean_se(&self, col: usize) -> (f64, f64) {
        let mean = self.column_mean(col);
        let mut ss = 0.0;
        for p in 0..self.n_paths {
            let d = self.get(p, col) - mean;
            ss += d * d;
        }
        let n = self.n_paths as f64;
        let var = if self.n_paths > 1 { ss / (n - 1.0) } else { 0.0 };
        (mean, (var / n).sqrt())
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.get(p, col)).collect()
    }
}

/// Vector quantity in `R^dim` sampled per path and per step (Brownian
/// increments, Z, theta, strategies).
#[derive(Debug, Clone)]
pub struct VectorPaths {
    n_paths: usize,
    n_cols: usize,
    dim: usize,
    data: Vec<f64>,
}

impl VectorPaths {
    pub fn zeros(n_paths: usize, n_cols: usize, dim: usize) -> Self {
        Self {
            n_paths,
            n_cols,
            dim,
            data: vec![0.0; n_paths * n_cols * dim],
        }
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, path: usize, col: usize) -> &[f64] {
        let base = (path * self.n_cols + col) * self.dim;
        &self.data[base..base + self.dim]
    }

    #[inline]
    pub fn get_mut(&mut self, path: usize, col: usize) -> &mut [f64] {
        let base = (path * self.n_cols + col) * self.dim;
        &mut self.data[base..base + self.dim]
    }

    pub fn set(&mut self, path: usize, col: usize, value: &[f64]) {
        self.get_mut(path, col).copy_from_slice(value);
    }

    /// Componentwise cross-path mean of one column.
    pub fn column_mean(&self, col: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for p in 0..self.n_paths {
            for (a, v) in acc.iter_mut().zip(self.get(p, col)) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= self.n_paths as f64;
        }
        acc
    }

    pub fn same_shape(&self, other: &VectorPaths) -> bool {
        self.n_paths == other.n_paths && self.n_cols == other.n_cols && self.dim == other.dim
    }
}

pub(crate) fn check_shape(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::invalid(format!("shape mismatch: {what}")))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_column_stats() {
        let mut s = ScalarPaths::zeros(4, 2);
        for p in 0..4 {
            s.set(p, 1, p as f64);
        }
        let (mean, se) = s.column_mean_se(1);
        assert!((mean - 1.5).abs() < 1e-15);
        // sample var of {0,1,2,3} is 5/3
        assert!((se - (5.0 / 3.0_f64 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn vector_get_set_roundtrip() {
        let mut v = VectorPaths::zeros(2, 3, 2);
        v.set(1, 2, &[3.0, -4.0]);
        assert_eq!(v.get(1, 2), &[3.0, -4.0]);
        assert_eq!(v.get(0, 0), &[0.0, 0.0]);
    }
}

//! Minimal dense matrix support for the chain solver. Chains here have at
//! most a handful of transient states, so a plain row-major buffer with an
//! LU solve is all that is needed.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols));
        Self {
            rows: n_rows,
            cols: n_cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows);
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, rhs: &Matrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += *b;
        }
    }

    pub fn max_abs_diff(&self, rhs: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting. Pivots below `tol` are treated
/// as singular.
pub struct Lu {
    n: usize,
    lu: Matrix,
    perm: Vec<usize>,
}

pub fn lu_factor(a: &Matrix, tol: f64) -> Option<Lu> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, lu[(r, col)].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if !pivot_abs.is_finite() || pivot_abs <= tol {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = lu[(col, j)];
                lu[(col, j)] = lu[(pivot_row, j)];
                lu[(pivot_row, j)] = tmp;
            }
            perm.swap(col, pivot_row);
        }
        let pivot = lu[(col, col)];
        for r in col + 1..n {
            let factor = lu[(r, col)] / pivot;
            lu[(r, col)] = factor;
            for j in col + 1..n {
                lu[(r, j)] -= factor * lu[(col, j)];
            }
        }
    }
    Some(Lu { n, lu, perm })
}

impl Lu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..self.n {
            for j in 0..i {
                x[i] -= self.lu[(i, j)] * x[j];
            }
        }
        for i in (0..self.n).rev() {
            for j in i + 1..self.n {
                x[i] -= self.lu[(i, j)] * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> Matrix {
        let mut inv = Matrix::zeros(self.n, self.n);
        let mut unit = vec![0.0; self.n];
        for col in 0..self.n {
            unit[col] = 1.0;
            let x = self.solve(&unit);
            unit[col] = 0.0;
            for (row, v) in x.into_iter().enumerate() {
                inv[(row, col)] = v;
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_pivoting_system() {
        // First pivot is zero; partial pivoting must reorder.
        let a = Matrix::from_rows(&[vec![0.0, 2.0], vec![3.0, 1.0]]);
        let lu = lu_factor(&a, 1e-12).unwrap();
        let x = lu.solve(&[4.0, 5.0]);
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(lu_factor(&a, 1e-12).is_none());
    }

    #[test]
    fn inverse_roundtrips() {
        let a = Matrix::from_rows(&[vec![1.0, -0.5], vec![-0.25, 0.75]]);
        let inv = lu_factor(&a, 1e-12).unwrap().inverse();
        let prod = a.mul(&inv);
        assert!(prod.max_abs_diff(&Matrix::identity(2)) < 1e-12);
    }
}

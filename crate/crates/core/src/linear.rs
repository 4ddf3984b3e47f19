//! Symmetric block-tridiagonal systems.

use nalgebra::{DMatrix, DVector};

/// Normal equations `H·δ = rhs` with `H` block-tridiagonal.
///
/// `diag[i]` is `H[i][i]`; `upper[i]` is `H[i][i+1]` (the lower blocks are
/// its transpose).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    pub upper: Vec<DMatrix<f64>>,
    pub rhs: Vec<DVector<f64>>,
}

impl BlockTridiagonal {
    pub fn zeros(blocks: usize, size: usize) -> Self {
        Self {
            diag: vec![DMatrix::zeros(size, size); blocks],
            upper: vec![DMatrix::zeros(size, size); blocks.saturating_sub(1)],
            rhs: vec![DVector::zeros(size); blocks],
        }
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.diag.first().map_or(0, |d| d.nrows())
    }

    /// Expands to a dense matrix and stacked right-hand side.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let s = self.block_size();
        let total = s * self.blocks();
        let mut h = DMatrix::zeros(total, total);
        let mut b = DVector::zeros(total);
        for (i, d) in self.diag.iter().enumerate() {
            h.view_mut((i * s, i * s), (s, s)).copy_from(d);
            b.rows_mut(i * s, s).copy_from(&self.rhs[i]);
        }
        for (i, u) in self.upper.iter().enumerate() {
            h.view_mut((i * s, (i + 1) * s), (s, s)).copy_from(u);
            h.view_mut(((i + 1) * s, i * s), (s, s)).copy_from(&u.transpose());
        }
        (h, b)
    }

    /// Block Cholesky factorization and substitution. Returns `None` when a
    /// pivot block is not positive definite.
    pub fn solve(&self) -> Option<Vec<DVector<f64>>> {
        let count = self.blocks();
        let mut factors: Vec<DMatrix<f64>> = Vec::with_capacity(count);
        // coupling[i] = H[i][i-1]·L[i-1]⁻ᵀ
        let mut coupling: Vec<DMatrix<f64>> = Vec::with_capacity(count);
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(count);
        for i in 0..count {
            let mut pivot = self.diag[i].clone();
            let mut rhs = self.rhs[i].clone();
            if i > 0 {
                let lower = self.upper[i - 1].transpose();
                let c = factors[i - 1]
                    .solve_lower_triangular(&lower.transpose())?
                    .transpose();
                pivot -= &c * c.transpose();
                rhs -= &c * &y[i - 1];
                coupling.push(c);
            } else {
                coupling.push(DMatrix::zeros(0, 0));
            }
            let l = pivot.cholesky()?.l();
            y.push(l.solve_lower_triangular(&rhs)?);
            factors.push(l);
        }
        let mut x = vec![DVector::zeros(0); count];
        for i in (0..count).rev() {
            let mut v = y[i].clone();
            if i + 1 < count {
                v -= coupling[i + 1].transpose() * &x[i + 1];
            }
            x[i] = factors[i].transpose().solve_upper_triangular(&v)?;
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense_solve() {
        let s = 3;
        let mut sys = BlockTridiagonal::zeros(4, s);
        for i in 0..4 {
            sys.diag[i] = DMatrix::from_fn(s, s, |r, c| if r == c { 6.0 + i as f64 } else { 0.5 });
            sys.rhs[i] = DVector::from_fn(s, |r, _| (r + i) as f64 - 1.0);
        }
        for i in 0..3 {
            sys.upper[i] = DMatrix::from_fn(s, s, |r, c| 0.3 * (r as f64 - c as f64) + 0.2);
        }
        let x = sys.solve().unwrap();
        let (h, b) = sys.to_dense();
        let dense = h.lu().solve(&b).unwrap();
        for i in 0..4 {
            assert!((&x[i] - dense.rows(i * s, s)).amax() < 1e-12);
        }
    }

    #[test]
    fn indefinite_pivot_fails() {
        let mut sys = BlockTridiagonal::zeros(2, 1);
        sys.diag[0][(0, 0)] = 1.0;
        sys.diag[1][(0, 0)] = 1.0;
        sys.upper[0][(0, 0)] = 2.0;
        assert!(sys.solve().is_none());
    }
}

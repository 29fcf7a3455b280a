//! Singular value decomposition used for spans, null spaces and least
//! squares. Backed by faer, which stays accurate on rank-deficient input.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

/// Full SVD m = u · diag(s) · vᵀ with u, v square and s nonincreasing.
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn svd(m: &DMatrix<f64>) -> Svd {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Svd {
            u: DMatrix::identity(rows, rows),
            s: Vec::new(),
            v: DMatrix::identity(cols, cols),
        };
    }
    let a = Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let d = a.svd().expect("svd of a finite matrix");
    let (u, v, s) = (d.U(), d.V(), d.S().column_vector());
    Svd {
        u: DMatrix::from_fn(rows, rows, |i, j| u[(i, j)]),
        s: (0..rows.min(cols)).map(|i| s[i]).collect(),
        v: DMatrix::from_fn(cols, cols, |i, j| v[(i, j)]),
    }
}

impl Svd {
    pub fn max(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }

    /// Number of singular values above `cutoff`.
    pub fn rank(&self, cutoff: f64) -> usize {
        self.s.iter().take_while(|&&s| s > cutoff).count()
    }

    /// Minimum-norm least-squares solution, dropping singular values at or
    /// below `cutoff`.
    pub fn solve(&self, rhs: &DVector<f64>, cutoff: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.v.nrows());
        for k in 0..self.rank(cutoff) {
            let coef = self.u.column(k).dot(rhs) / self.s[k];
            x.axpy(coef, &self.v.column(k), 1.0);
        }
        x
    }
}

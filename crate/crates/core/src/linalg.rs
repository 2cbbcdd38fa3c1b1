//! Dense least squares with column pivoting.

use nalgebra::{DMatrix, DVector};

/// Solution of `min ‖Ax − b‖₂` restricted to a numerically independent column subset.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// Full-length solution; dropped columns are zero.
    pub x: Vec<f64>,
    pub rank: usize,
    /// Columns excluded as numerically dependent.
    pub dropped: Vec<usize>,
}

/// Householder QR with column pivoting; a column is kept while its residual norm
/// exceeds `rcond` times the largest initial column norm.
pub fn lstsq(a: &DMatrix<f64>, b: &[f64], rcond: f64) -> LeastSquares {
    let (m, n) = (a.nrows(), a.ncols());
    assert_eq!(b.len(), m);
    let mut r = a.clone();
    let mut rhs = DVector::from_column_slice(b);
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = m.min(n);
    let first = (0..n).map(|j| r.column(j).norm()).fold(0.0, f64::max);
    let mut rank = 0;
    if first > 0.0 {
        for k in 0..steps {
            let (mut best, mut best_norm) = (k, -1.0);
            for j in k..n {
                let nrm = r.view((k, j), (m - k, 1)).norm();
                if nrm > best_norm {
                    best = j;
                    best_norm = nrm;
                }
            }
            if best_norm <= rcond * first {
                break;
            }
            r.swap_columns(k, best);
            perm.swap(k, best);
            // reflector v with v[0] = 1 mapping r[k.., k] onto ±‖·‖ e_1
            let alpha = if r[(k, k)] >= 0.0 {
                -best_norm
            } else {
                best_norm
            };
            let mut v: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                for j in k..n {
                    let dot: f64 = (k..m).map(|i| v[i - k] * r[(i, j)]).sum();
                    let f = 2.0 * dot / vnorm2;
                    for i in k..m {
                        r[(i, j)] -= f * v[i - k];
                    }
                }
                let dot: f64 = (k..m).map(|i| v[i - k] * rhs[i]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..m {
                    rhs[i] -= f * v[i - k];
                }
            }
            rank = k + 1;
        }
    }
    let mut z = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut acc = rhs[i];
        for j in i + 1..rank {
            acc -= r[(i, j)] * z[j];
        }
        z[i] = acc / r[(i, i)];
    }
    let mut x = vec![0.0; n];
    for (k, &col) in perm.iter().enumerate().take(rank) {
        x[col] = z[k];
    }
    let mut dropped: Vec<usize> = perm[rank..].to_vec();
    dropped.sort_unstable();
    LeastSquares { x, rank, dropped }
}

/// Columns `cols` of `a`.
pub fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

/// Rows `rows` of `a`.
pub fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

/// Smallest singular value.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    a.clone().singular_values().min()
}

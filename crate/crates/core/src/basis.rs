//! Orthonormal basis `Ψ(ξ) = L⁻¹ b(ξ)` from the Cholesky factor of the moment matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ftt::MomentTable;
use crate::gmm::{AffineMap, GaussianMixture};
use crate::indexing::GradedLexOrder;

/// Highest basis order accepted by [`BasisSet::build`].
pub const MAX_ORDER: usize = 4;

const JITTER_STEPS: i32 = 4;

/// `M_{ij} = E[b_i(ξ) b_j(ξ)] = m_{α_i + α_j}`.
#[derive(Debug, Clone)]
pub struct MomentMatrix {
    order: GradedLexOrder,
    matrix: DMatrix<f64>,
}

impl MomentMatrix {
    /// Assembles `M` for a (standardized) mixture from all moments of degree `≤ 2p`.
    pub fn build(gmm: &GaussianMixture, p: usize) -> Self {
        let table = MomentTable::compute(gmm, p);
        Self::from_table(&table, p)
    }

    pub fn from_table(table: &MomentTable, p: usize) -> Self {
        let order = GradedLexOrder::enumerate(table.order().dim(), p);
        let n = order.len();
        let mut matrix = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let gamma = order.get(i).add(order.get(j));
                let v = table.get(&gamma).expect("moment table covers degree 2p");
                matrix[(i, j)] = v;
                matrix[(j, i)] = v;
            }
        }
        Self { order, matrix }
    }

    /// Wraps an explicit matrix (used for diagnostics and error-path checks).
    pub fn from_matrix(order: GradedLexOrder, matrix: DMatrix<f64>) -> Self {
        assert_eq!(matrix.nrows(), order.len());
        assert_eq!(matrix.ncols(), order.len());
        Self { order, matrix }
    }

    pub fn order(&self) -> &GradedLexOrder {
        &self.order
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Conditioning report of the Cholesky factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDiagnostics {
    /// Diagonal shift added to `M` (zero when the plain factorization succeeded).
    pub jitter: f64,
    pub min_diag: f64,
    pub max_diag: f64,
    pub warning: Option<String>,
}

/// Orthonormal polynomial basis for one mixture.
#[derive(Debug, Clone)]
pub struct BasisSet {
    order: GradedLexOrder,
    moments: DMatrix<f64>,
    chol: DMatrix<f64>,
    map: AffineMap,
    diagnostics: BasisDiagnostics,
}

impl BasisSet {
    /// Standardizes `gmm`, assembles the moment matrix of order `p` and factors it.
    pub fn build(gmm: &GaussianMixture, p: usize) -> Result<Self> {
        if p > MAX_ORDER {
            return Err(Error::InvalidArgument(format!(
                "basis order {p} exceeds the supported maximum {MAX_ORDER}"
            )));
        }
        let (map, standardized) = gmm.standardize()?;
        let mm = MomentMatrix::build(&standardized, p);
        Self::factor(mm, map)
    }

    /// Cholesky `M = LLᵀ`, retrying with diagonal jitter `1e-12·tr(M)/N·10^k`, `k = 0..4`.
    ///
    /// The jitter is never added to `M_00`, so `Ψ_0 ≡ 1` survives regularization.
    pub fn factor(mm: MomentMatrix, map: AffineMap) -> Result<Self> {
        let MomentMatrix { order, matrix } = mm;
        let n = matrix.nrows();
        let base = 1e-12 * matrix.trace() / n as f64;
        let mut jitter = 0.0;
        let mut k = -1;
        let chol = loop {
            let mut shifted = matrix.clone();
            for i in 1..n {
                shifted[(i, i)] += jitter;
            }
            if let Some(c) = shifted.cholesky() {
                let l = c.unpack();
                if l.diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
                    break l;
                }
            }
            k += 1;
            if k > JITTER_STEPS {
                return Err(Error::IllConditionedMoments { jitter });
            }
            jitter = base * 10f64.powi(k);
        };
        let diag = chol.diagonal();
        let diagnostics = BasisDiagnostics {
            jitter,
            min_diag: diag.min(),
            max_diag: diag.max(),
            warning: (jitter > 0.0)
                .then(|| format!("moment matrix needed diagonal jitter {jitter:e} to factor")),
        };
        Ok(Self {
            order,
            moments: matrix,
            chol,
            map,
            diagnostics,
        })
    }

    pub fn order(&self) -> &GradedLexOrder {
        &self.order
    }

    /// Number of basis functions `N`.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.order.dim()
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn moments(&self) -> &DMatrix<f64> {
        &self.moments
    }

    pub fn map(&self) -> &AffineMap {
        &self.map
    }

    pub fn diagnostics(&self) -> &BasisDiagnostics {
        &self.diagnostics
    }

    /// `Ψ(ξ)` for `ξ` in original coordinates.
    pub fn evaluate(&self, xi: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        self.map.apply_into(xi, &mut z);
        let mut v = self.order.monomial_vector(&z);
        forward_substitute(&self.chol, &mut v);
        v
    }

    /// Basis values at each row of `points`, one row per point.
    pub fn evaluate_many(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let (m, n) = (points.nrows(), self.len());
        let mut b = DMatrix::zeros(n, m);
        let mut z = vec![0.0; self.dim()];
        let mut row = vec![0.0; self.dim()];
        let mut col = vec![0.0; n];
        for i in 0..m {
            for k in 0..self.dim() {
                row[k] = points[(i, k)];
            }
            self.map.apply_into(&row, &mut z);
            self.order.monomial_vector_into(&z, &mut col);
            b.column_mut(i).copy_from_slice(&col);
        }
        self.chol.solve_lower_triangular_mut(&mut b);
        b.transpose()
    }

    /// Monomial-basis coefficients `g = L⁻ᵀ c`, so that `c·Ψ(ξ) = g·b(z)` with `z` standardized.
    pub fn monomial_coefficients(&self, coeffs: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(coeffs);
        self.chol
            .tr_solve_lower_triangular(&c)
            .expect("positive diagonal")
            .iter()
            .cloned()
            .collect()
    }

    /// `‖L⁻¹ M L⁻ᵀ − I‖_F`.
    pub fn gram_residual(&self) -> f64 {
        let mut x = self.moments.clone();
        self.chol.solve_lower_triangular_mut(&mut x);
        let mut y = x.transpose();
        self.chol.solve_lower_triangular_mut(&mut y);
        let n = y.nrows();
        (y - DMatrix::<f64>::identity(n, n)).norm()
    }

    /// `‖LLᵀ − M‖_F / ‖M‖_F`.
    pub fn factor_residual(&self) -> f64 {
        (&self.chol * self.chol.transpose() - &self.moments).norm() / self.moments.norm()
    }
}

fn forward_substitute(l: &DMatrix<f64>, v: &mut [f64]) {
    let n = v.len();
    for j in 0..n {
        let x = v[j] / l[(j, j)];
        v[j] = x;
        if x != 0.0 {
            let col = l.column(j);
            for i in j + 1..n {
                v[i] -= col[i] * x;
            }
        }
    }
}

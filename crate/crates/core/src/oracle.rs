//! Independent moment oracles: tensorized Gauss–Hermite quadrature and Monte Carlo.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gmm::{GaussianComponent, GaussianMixture};
use crate::indexing::MultiIndex;

/// Largest dimension accepted by the tensor-grid quadrature.
pub const MAX_QUAD_DIM: usize = 4;

/// Gauss–Hermite rule for the standard normal weight (probabilists' Hermite).
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix with zero
    /// diagonal and off-diagonal `√k`; weights are the squared first components
    /// of the normalized eigenvectors.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut jacobi = DMatrix::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // the rule is symmetric about zero; enforce it exactly
        let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        for i in 0..n / 2 {
            let j = n - 1 - i;
            debug_assert!((nodes[i] + nodes[j]).abs() < 1e-13 * nodes[j].abs().max(1.0));
            let x = 0.5 * (nodes[j] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[j]);
            nodes[i] = -x;
            nodes[j] = x;
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self { nodes, weights }
    }
}

/// `E[f(Aη+μ)]` by a tensor grid of `nodes` points per dimension.
pub fn quad_expectation(
    comp: &GaussianComponent,
    nodes: usize,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    let d = comp.dim();
    if d > MAX_QUAD_DIM {
        return Err(Error::InvalidArgument(format!(
            "tensor quadrature refuses dimension {d} > {MAX_QUAD_DIM}"
        )));
    }
    let rule = GaussHermite::new(nodes);
    let a = comp.chol();
    let mu = comp.mean();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for k in 0..d {
            w *= rule.weights[idx[k]];
        }
        for i in 0..d {
            let mut acc = mu[i];
            for k in 0..=i {
                acc += a[(i, k)] * rule.nodes[idx[k]];
            }
            x[i] = acc;
        }
        total += w * f(&x);
        let mut k = 0;
        loop {
            if k == d {
                return Ok(total);
            }
            idx[k] += 1;
            if idx[k] < nodes {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `E[(Aη+μ)^α]` by tensorized Gauss–Hermite quadrature.
///
/// The rule is raised to at least `|α|/2 + 1` nodes per dimension, which makes it
/// exact for the polynomial integrand.
pub fn quad_moment(alpha: &MultiIndex, comp: &GaussianComponent, nodes: usize) -> Result<f64> {
    if alpha.dim() != comp.dim() {
        return Err(Error::DimensionMismatch {
            expected: comp.dim(),
            got: alpha.dim(),
        });
    }
    let n = nodes.max(alpha.degree() / 2 + 1);
    quad_expectation(comp, n, |x| alpha.monomial(x))
}

/// Mixture moment by quadrature on each component.
pub fn quad_mixture_moment(alpha: &MultiIndex, gmm: &GaussianMixture, nodes: usize) -> Result<f64> {
    let mut total = 0.0;
    for (w, c) in gmm.weights().iter().zip(gmm.components()) {
        total += w * quad_moment(alpha, c, nodes)?;
    }
    Ok(total)
}

/// Mixture expectation of `|ξ^α|`, a magnitude scale for relative comparisons.
pub fn quad_abs_scale(alpha: &MultiIndex, gmm: &GaussianMixture, nodes: usize) -> Result<f64> {
    let mut total = 0.0;
    for (w, c) in gmm.weights().iter().zip(gmm.components()) {
        total += w * quad_expectation(c, nodes, |x| alpha.monomial(x).abs())?;
    }
    Ok(total)
}

/// Monte Carlo estimate of `E[ξ^α]` and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Sample mean of `ξ^α` over `n` mixture draws.
pub fn mc_moment<R: Rng + ?Sized>(
    alpha: &MultiIndex,
    gmm: &GaussianMixture,
    n: usize,
    rng: &mut R,
) -> McEstimate {
    mc_moments(std::slice::from_ref(alpha), gmm, n, rng)[0]
}

/// Several moments from one shared sample stream.
pub fn mc_moments<R: Rng + ?Sized>(
    alphas: &[MultiIndex],
    gmm: &GaussianMixture,
    n: usize,
    rng: &mut R,
) -> Vec<McEstimate> {
    assert!(n >= 2);
    let mut stats = vec![crate::stats::RunningStats::default(); alphas.len()];
    gmm.for_each_sample(rng, n, |x| {
        for (s, a) in stats.iter_mut().zip(alphas) {
            s.push(if a.is_zero() { 1.0 } else { a.monomial(x) });
        }
    });
    stats
        .iter()
        .map(|s| McEstimate {
            estimate: s.mean(),
            std_error: s.std_error(),
        })
        .collect()
}

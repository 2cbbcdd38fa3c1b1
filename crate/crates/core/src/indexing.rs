//! Multi-indices and the graded lexicographic monomial order.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

/// Exponent vector of a monomial `ξ^α`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exponents: Box<[u16]>,
    degree: u32,
}

impl MultiIndex {
    pub fn new(exponents: impl Into<Vec<u16>>) -> Self {
        let exponents = exponents.into().into_boxed_slice();
        let degree = exponents.iter().map(|&e| e as u32).sum();
        Self { exponents, degree }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(vec![0; dim])
    }

    /// Unit index `e_j`.
    pub fn unit(dim: usize, j: usize) -> Self {
        let mut e = vec![0; dim];
        e[j] = 1;
        Self::new(e)
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// Total degree `|α|`.
    pub fn degree(&self) -> usize {
        self.degree as usize
    }

    pub fn exponents(&self) -> &[u16] {
        &self.exponents
    }

    pub fn get(&self, k: usize) -> usize {
        self.exponents[k] as usize
    }

    pub fn is_zero(&self) -> bool {
        self.degree == 0
    }

    /// Componentwise sum.
    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim(), other.dim());
        MultiIndex::new(
            self.exponents
                .iter()
                .zip(other.exponents.iter())
                .map(|(a, b)| a + b)
                .collect::<Vec<_>>(),
        )
    }

    /// Componentwise difference, `None` if any exponent would go negative.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        let mut out = Vec::with_capacity(self.dim());
        for (a, b) in self.exponents.iter().zip(other.exponents.iter()) {
            out.push(a.checked_sub(*b)?);
        }
        Some(MultiIndex::new(out))
    }

    /// Index of the last coordinate with a nonzero exponent.
    pub fn last_nonzero(&self) -> Option<usize> {
        self.exponents.iter().rposition(|&e| e > 0)
    }

    /// `ξ^α` evaluated directly.
    pub fn monomial(&self, xi: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(xi)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, e) in self.exponents.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl Ord for MultiIndex {
    /// Graded lexicographic: total degree first, then larger leading exponents first,
    /// so that `(2,0) < (1,1) < (0,2)`.
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree
            .cmp(&other.degree)
            .then_with(|| other.exponents.cmp(&self.exponents))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All multi-indices with `|α| ≤ p` in graded lexicographic order.
#[derive(Debug, Clone)]
pub struct GradedLexOrder {
    dim: usize,
    max_degree: usize,
    indices: Vec<MultiIndex>,
    positions: HashMap<MultiIndex, usize>,
    // For position j > 0: (position of α_j − e_k, k), used to build monomials by one multiply.
    parents: Vec<(usize, usize)>,
}

impl GradedLexOrder {
    /// Enumerate every index of total degree at most `max_degree` in dimension `dim`.
    pub fn enumerate(dim: usize, max_degree: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        let mut indices = Vec::with_capacity(binomial(max_degree + dim, dim));
        let mut scratch = vec![0u16; dim];
        for degree in 0..=max_degree {
            push_compositions(&mut scratch, 0, degree, &mut indices);
        }
        let positions: HashMap<MultiIndex, usize> = indices
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        let mut parents = vec![(0, 0); indices.len()];
        for (j, alpha) in indices.iter().enumerate().skip(1) {
            let k = alpha.last_nonzero().expect("nonzero index");
            let mut e = alpha.exponents().to_vec();
            e[k] -= 1;
            parents[j] = (positions[&MultiIndex::new(e)], k);
        }
        Self {
            dim,
            max_degree,
            indices,
            positions,
            parents,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Number of indices `N = (p+d)!/(p! d!)`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn get(&self, j: usize) -> &MultiIndex {
        &self.indices[j]
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.positions.get(alpha).copied()
    }

    /// Monomial vector `b(ξ)`, entry `j` equal to `ξ^{α_j}`.
    pub fn monomial_vector(&self, xi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.monomial_vector_into(xi, &mut out);
        out
    }

    /// As [`monomial_vector`](Self::monomial_vector), writing into `out`.
    pub fn monomial_vector_into(&self, xi: &[f64], out: &mut [f64]) {
        assert_eq!(xi.len(), self.dim);
        assert_eq!(out.len(), self.len());
        out[0] = 1.0;
        for j in 1..out.len() {
            let (parent, k) = self.parents[j];
            out[j] = out[parent] * xi[k];
        }
    }
}

fn push_compositions(scratch: &mut [u16], k: usize, remaining: usize, out: &mut Vec<MultiIndex>) {
    if k + 1 == scratch.len() {
        scratch[k] = remaining as u16;
        out.push(MultiIndex::new(scratch.to_vec()));
        return;
    }
    for e in (0..=remaining).rev() {
        scratch[k] = e as u16;
        push_compositions(scratch, k + 1, remaining - e, out);
    }
    scratch[k] = 0;
}

/// Binomial coefficient `n choose k`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Split `α` into `α1 + α2` with both degrees at most `p`.
///
/// `α1` is filled greedily over ascending coordinates, taking `min(α_k, budget)`
/// until the budget `p` is spent; `α2` receives the rest.
pub fn split(alpha: &MultiIndex, p: usize) -> (MultiIndex, MultiIndex) {
    assert!(
        alpha.degree() <= 2 * p,
        "cannot split {alpha} with degree cap {p}"
    );
    let mut budget = p;
    let mut first = Vec::with_capacity(alpha.dim());
    let mut second = Vec::with_capacity(alpha.dim());
    for &e in alpha.exponents() {
        let take = (e as usize).min(budget);
        budget -= take;
        first.push(take as u16);
        second.push(e - take as u16);
    }
    let (a1, a2) = (MultiIndex::new(first), MultiIndex::new(second));
    debug_assert!(a1.degree() <= p && a2.degree() <= p);
    (a1, a2)
}

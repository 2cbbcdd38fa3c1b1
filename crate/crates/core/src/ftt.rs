//! Functional tensor trains for Gaussian moments.
//!
//! A Gaussian component is written `ξ = Aη + μ` with `A` its Cholesky factor and
//! `η` standard normal with independent coordinates. Each coordinate `ξ_j` is a
//! rank-2 train whose `i`-th core depends on `η_i` alone; products of coordinates
//! are Kronecker products of the corresponding cores. Because the cores of a
//! train depend on distinct independent variables, the expectation of a train is
//! the product of the entrywise expectations of its cores.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::{GaussianComponent, GaussianMixture};
use crate::indexing::{split, GradedLexOrder, MultiIndex};

/// `E[η^k]` for `η ~ N(0,1)`: zero for odd `k`, `(k−1)!!` for even `k`.
pub fn normal_raw_moment(k: usize) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let mut acc = 1.0;
    let mut j = k as i64 - 1;
    while j > 1 {
        acc *= j as f64;
        j -= 2;
    }
    acc
}

const MOMENT_TABLE_LEN: usize = 33;

fn moment_table() -> [f64; MOMENT_TABLE_LEN] {
    let mut t = [0.0; MOMENT_TABLE_LEN];
    for (k, v) in t.iter_mut().enumerate() {
        *v = normal_raw_moment(k);
    }
    t
}

/// Polynomial in one standard-normal variable, coefficients in ascending degree.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnivariatePoly {
    coeffs: Vec<f64>,
}

impl UnivariatePoly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// `c·η`.
    pub fn linear(c: f64) -> Self {
        Self::new(vec![0.0, c])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, or `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn mul(&self, other: &UnivariatePoly) -> UnivariatePoly {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    pub fn eval(&self, eta: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * eta + c)
    }

    /// `E[p(η)]` under the standard normal.
    pub fn expectation(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * normal_raw_moment(k))
            .sum()
    }
}

/// Matrix with univariate polynomial entries, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<UnivariatePoly>,
}

impl PolyMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<UnivariatePoly>) -> Self {
        assert_eq!(entries.len(), rows * cols);
        Self {
            rows,
            cols,
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, r: usize, c: usize) -> &UnivariatePoly {
        &self.entries[r * self.cols + c]
    }

    /// Kronecker product with entries multiplied as polynomials.
    pub fn kron(&self, other: &PolyMatrix) -> PolyMatrix {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut entries = vec![UnivariatePoly::zero(); rows * cols];
        for a in 0..self.rows {
            for b in 0..self.cols {
                let e = self.entry(a, b);
                if e.is_zero() {
                    continue;
                }
                for c in 0..other.rows {
                    for d in 0..other.cols {
                        let f = other.entry(c, d);
                        entries[(a * other.rows + c) * cols + b * other.cols + d] = e.mul(f);
                    }
                }
            }
        }
        PolyMatrix::new(rows, cols, entries)
    }

    fn eval(&self, eta: f64) -> Vec<f64> {
        self.entries.iter().map(|p| p.eval(eta)).collect()
    }

    fn expectation(&self) -> Vec<f64> {
        self.entries.iter().map(|p| p.expectation()).collect()
    }
}

/// Functional tensor train of `(Aη + μ)^α`: a constant leading row vector followed
/// by one core per coordinate of `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct FttMonomial {
    lead: Vec<f64>,
    cores: Vec<PolyMatrix>,
    target: MultiIndex,
}

impl FttMonomial {
    /// Train of the constant 1 (`α = 0`), all ranks one.
    pub fn constant(dim: usize) -> Self {
        Self {
            lead: vec![1.0],
            cores: (0..dim)
                .map(|_| PolyMatrix::new(1, 1, vec![UnivariatePoly::constant(1.0)]))
                .collect(),
            target: MultiIndex::zero(dim),
        }
    }

    /// Rank-2 train of `ξ_j = Σ_i a_{ji} η_i + μ_j`.
    pub fn first_order(j: usize, comp: &GaussianComponent) -> Self {
        let d = comp.dim();
        assert!(j < d, "coordinate {j} out of range for dimension {d}");
        let a = comp.chol();
        let mut cores = Vec::with_capacity(d);
        for i in 0..d - 1 {
            cores.push(PolyMatrix::new(
                2,
                2,
                vec![
                    UnivariatePoly::constant(1.0),
                    UnivariatePoly::zero(),
                    UnivariatePoly::linear(a[(j, i)]),
                    UnivariatePoly::constant(1.0),
                ],
            ));
        }
        cores.push(PolyMatrix::new(
            2,
            1,
            vec![
                UnivariatePoly::constant(1.0),
                UnivariatePoly::linear(a[(j, d - 1)]),
            ],
        ));
        Self {
            lead: vec![comp.mean()[j], 1.0],
            cores,
            target: MultiIndex::unit(d, j),
        }
    }

    pub fn dim(&self) -> usize {
        self.cores.len()
    }

    pub fn target(&self) -> &MultiIndex {
        &self.target
    }

    pub fn lead(&self) -> &[f64] {
        &self.lead
    }

    pub fn cores(&self) -> &[PolyMatrix] {
        &self.cores
    }

    /// Bond ranks `r_0, …, r_d` with `r_d = 1`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![self.lead.len()];
        r.extend(self.cores.iter().map(|c| c.cols()));
        r
    }

    /// Hadamard product of two trains: Kronecker products of leads and of cores.
    pub fn kron_combine(&self, other: &FttMonomial) -> Result<FttMonomial> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let lead = self
            .lead
            .iter()
            .flat_map(|a| other.lead.iter().map(move |b| a * b))
            .collect();
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .map(|(a, b)| a.kron(b))
            .collect();
        Ok(FttMonomial {
            lead,
            cores,
            target: self.target.add(&other.target),
        })
    }

    /// Contracts the train with `η` substituted into every core.
    pub fn evaluate(&self, eta: &[f64]) -> f64 {
        assert_eq!(eta.len(), self.dim());
        let mut v = self.lead.clone();
        for (core, &e) in self.cores.iter().zip(eta) {
            v = vec_mat(&v, &core.eval(e), core.rows, core.cols);
        }
        v[0]
    }

    /// `G_0 · E[G_1(η_1)] ⋯ E[G_d(η_d)]`.
    pub fn expectation(&self) -> f64 {
        let mut v = self.lead.clone();
        for core in &self.cores {
            v = vec_mat(&v, &core.expectation(), core.rows, core.cols);
        }
        v[0]
    }

    /// Dense per-degree form used by the moment engine.
    pub fn to_sliced(&self) -> SlicedTrain {
        SlicedTrain {
            lead: self.lead.clone(),
            cores: self.cores.iter().map(SlicedCore::from_poly).collect(),
        }
    }
}

fn vec_mat(v: &[f64], m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &vr) in v.iter().enumerate().take(rows) {
        if vr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for (o, &x) in out.iter_mut().zip(row) {
            *o += vr * x;
        }
    }
    out
}

/// Core stored as one dense coefficient matrix per power of `η`.
#[derive(Debug, Clone)]
pub struct SlicedCore {
    rows: usize,
    cols: usize,
    slices: Vec<Vec<f64>>,
}

impl SlicedCore {
    fn from_poly(m: &PolyMatrix) -> Self {
        let deg = m
            .entries
            .iter()
            .filter_map(|p| p.degree())
            .max()
            .map_or(0, |d| d + 1);
        let mut slices = vec![vec![0.0; m.rows * m.cols]; deg];
        for (idx, p) in m.entries.iter().enumerate() {
            for (k, &c) in p.coeffs().iter().enumerate() {
                slices[k][idx] = c;
            }
        }
        Self {
            rows: m.rows,
            cols: m.cols,
            slices,
        }
    }

    /// Kronecker product with a first-order core (rank-2 or the final 2×1).
    fn kron(&self, other: &SlicedCore) -> SlicedCore {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let deg = if self.slices.is_empty() || other.slices.is_empty() {
            0
        } else {
            self.slices.len() + other.slices.len() - 1
        };
        let mut slices = vec![vec![0.0; rows * cols]; deg];
        for (k, e) in self.slices.iter().enumerate() {
            for (l, f) in other.slices.iter().enumerate() {
                let out = &mut slices[k + l];
                for a in 0..self.rows {
                    for b in 0..self.cols {
                        let ev = e[a * self.cols + b];
                        if ev == 0.0 {
                            continue;
                        }
                        for c in 0..other.rows {
                            for d in 0..other.cols {
                                out[(a * other.rows + c) * cols + b * other.cols + d] +=
                                    ev * f[c * other.cols + d];
                            }
                        }
                    }
                }
            }
        }
        while slices.last().is_some_and(|s| s.iter().all(|&v| v == 0.0)) {
            slices.pop();
        }
        SlicedCore { rows, cols, slices }
    }
}

/// Train in per-degree dense form.
#[derive(Debug, Clone)]
pub struct SlicedTrain {
    lead: Vec<f64>,
    cores: Vec<SlicedCore>,
}

impl SlicedTrain {
    fn kron(&self, other: &SlicedTrain) -> SlicedTrain {
        SlicedTrain {
            lead: self
                .lead
                .iter()
                .flat_map(|a| other.lead.iter().map(move |b| a * b))
                .collect(),
            cores: self
                .cores
                .iter()
                .zip(&other.cores)
                .map(|(a, b)| a.kron(b))
                .collect(),
        }
    }

    fn expectation(&self, table: &[f64; MOMENT_TABLE_LEN]) -> f64 {
        let mut v = self.lead.clone();
        for core in &self.cores {
            let mut out = vec![0.0; core.cols];
            for (k, s) in core.slices.iter().enumerate() {
                let m = table[k];
                if m == 0.0 {
                    continue;
                }
                for (r, &vr) in v.iter().enumerate() {
                    if vr == 0.0 {
                        continue;
                    }
                    let row = &s[r * core.cols..(r + 1) * core.cols];
                    for (o, &x) in out.iter_mut().zip(row) {
                        *o += m * vr * x;
                    }
                }
            }
            v = out;
        }
        v[0]
    }

    /// `E[t1 · t2]` without materializing the Kronecker product.
    ///
    /// The running row vector of the combined train is kept as an `r1 × r2`
    /// matrix `V`; one combined core maps it to `Σ_{k,l} m_{k+l} E_kᵀ V F_l`
    /// where `E_k`, `F_l` are the degree slices of the two operand cores and
    /// `m_j = E[η^j]`.
    fn hadamard_expectation(&self, other: &SlicedTrain, table: &[f64; MOMENT_TABLE_LEN]) -> f64 {
        let (r1, r2) = (self.lead.len(), other.lead.len());
        let mut v = vec![0.0; r1 * r2];
        for a in 0..r1 {
            for c in 0..r2 {
                v[a * r2 + c] = self.lead[a] * other.lead[c];
            }
        }
        let (mut rows1, mut rows2) = (r1, r2);
        let mut h = Vec::new();
        let mut t = Vec::new();
        for (e, f) in self.cores.iter().zip(&other.cores) {
            debug_assert_eq!(e.rows, rows1);
            debug_assert_eq!(f.rows, rows2);
            let (c1, c2) = (e.cols, f.cols);
            let mut w = vec![0.0; c1 * c2];
            for (k, ek) in e.slices.iter().enumerate() {
                // H_k = Σ_l m_{k+l} F_l  (rows2 × c2)
                h.clear();
                h.resize(rows2 * c2, 0.0);
                let mut any = false;
                for (l, fl) in f.slices.iter().enumerate() {
                    let m = table[k + l];
                    if m == 0.0 {
                        continue;
                    }
                    any = true;
                    for (hv, &fv) in h.iter_mut().zip(fl) {
                        *hv += m * fv;
                    }
                }
                if !any {
                    continue;
                }
                // T = V H_k  (rows1 × c2)
                t.clear();
                t.resize(rows1 * c2, 0.0);
                for a in 0..rows1 {
                    let trow = &mut t[a * c2..(a + 1) * c2];
                    for c in 0..rows2 {
                        let vac = v[a * rows2 + c];
                        if vac == 0.0 {
                            continue;
                        }
                        let hrow = &h[c * c2..(c + 1) * c2];
                        for (tv, &hv) in trow.iter_mut().zip(hrow) {
                            *tv += vac * hv;
                        }
                    }
                }
                // W += E_kᵀ T  (c1 × c2)
                for a in 0..rows1 {
                    let trow = &t[a * c2..(a + 1) * c2];
                    for b in 0..c1 {
                        let eab = ek[a * c1 + b];
                        if eab == 0.0 {
                            continue;
                        }
                        let wrow = &mut w[b * c2..(b + 1) * c2];
                        for (wv, &tv) in wrow.iter_mut().zip(trow) {
                            *wv += eab * tv;
                        }
                    }
                }
            }
            v = w;
            rows1 = c1;
            rows2 = c2;
        }
        v[0]
    }
}

/// Moment engine for one Gaussian component.
///
/// Trains of every `ξ^α` with `|α| ≤ p` are built once and cached; a moment of
/// order up to `2p` is the expectation of the Hadamard product of two cached trains.
#[derive(Debug)]
pub struct ComponentMoments {
    max_train_degree: usize,
    trains: HashMap<MultiIndex, SlicedTrain>,
    table: [f64; MOMENT_TABLE_LEN],
}

impl ComponentMoments {
    pub fn new(comp: &GaussianComponent, p: usize) -> Self {
        let d = comp.dim();
        let order = GradedLexOrder::enumerate(d, p);
        let firsts: Vec<SlicedTrain> = (0..d)
            .map(|j| FttMonomial::first_order(j, comp).to_sliced())
            .collect();
        let mut trains: HashMap<MultiIndex, SlicedTrain> = HashMap::with_capacity(order.len());
        trains.insert(MultiIndex::zero(d), FttMonomial::constant(d).to_sliced());
        for (j, t) in firsts.iter().enumerate() {
            trains.insert(MultiIndex::unit(d, j), t.clone());
        }
        // ξ^α = ξ^{α − e_k} · ξ_k with k the last nonzero coordinate
        for degree in 2..=p {
            let level: Vec<&MultiIndex> = order
                .indices()
                .iter()
                .filter(|a| a.degree() == degree)
                .collect();
            let built: Vec<(MultiIndex, SlicedTrain)> = level
                .par_iter()
                .map(|alpha| {
                    let k = alpha.last_nonzero().expect("nonzero");
                    let parent = alpha
                        .checked_sub(&MultiIndex::unit(d, k))
                        .expect("parent index");
                    ((*alpha).clone(), trains[&parent].kron(&firsts[k]))
                })
                .collect();
            trains.extend(built);
        }
        Self {
            max_train_degree: p,
            trains,
            table: moment_table(),
        }
    }

    /// Highest total degree of the cached trains.
    pub fn train_degree(&self) -> usize {
        self.max_train_degree
    }

    /// `E[ξ^α]` for `|α| ≤ 2p`.
    pub fn moment(&self, alpha: &MultiIndex) -> f64 {
        let p = self.max_train_degree;
        assert!(
            alpha.degree() <= 2 * p,
            "moment order {} exceeds 2p = {}",
            alpha.degree(),
            2 * p
        );
        if alpha.degree() <= p {
            return self.trains[alpha].expectation(&self.table);
        }
        let (a1, a2) = split(alpha, p);
        self.trains[&a1].hadamard_expectation(&self.trains[&a2], &self.table)
    }

    /// Moment through an explicit factorization `α = α1 + α2`.
    pub fn moment_via(&self, a1: &MultiIndex, a2: &MultiIndex) -> f64 {
        self.trains[a1].hadamard_expectation(&self.trains[a2], &self.table)
    }
}

/// `q_α = E[ξ^α]` for one Gaussian component, built from scratch.
pub fn gaussian_moment(alpha: &MultiIndex, comp: &GaussianComponent) -> f64 {
    let p = alpha.degree().div_ceil(2).max(1);
    ComponentMoments::new(comp, p).moment(alpha)
}

/// Moment engines for every component of a mixture.
#[derive(Debug)]
pub struct MixtureMoments {
    weights: Vec<f64>,
    engines: Vec<ComponentMoments>,
}

impl MixtureMoments {
    pub fn new(gmm: &GaussianMixture, p: usize) -> Self {
        Self {
            weights: gmm.weights().to_vec(),
            engines: gmm
                .components()
                .iter()
                .map(|c| ComponentMoments::new(c, p))
                .collect(),
        }
    }

    /// `m_α = Σ w_i q_{α,i}`.
    pub fn moment(&self, alpha: &MultiIndex) -> f64 {
        self.weights
            .iter()
            .zip(&self.engines)
            .map(|(w, e)| w * e.moment(alpha))
            .sum()
    }
}

/// `m_α = Σ w_i q_{α,i}` for a single index.
pub fn mixture_moment(alpha: &MultiIndex, gmm: &GaussianMixture) -> f64 {
    let p = alpha.degree().div_ceil(2).max(1);
    MixtureMoments::new(gmm, p).moment(alpha)
}

/// All mixture moments of total degree at most `2p`, aligned with graded-lex order.
#[derive(Debug, Clone)]
pub struct MomentTable {
    order: GradedLexOrder,
    values: Vec<f64>,
}

impl MomentTable {
    /// Computes every `m_γ`, `|γ| ≤ 2p`.
    ///
    /// Components are processed one at a time so only one train cache is alive.
    pub fn compute(gmm: &GaussianMixture, p: usize) -> Self {
        let order = GradedLexOrder::enumerate(gmm.dim(), 2 * p);
        let mut values = vec![0.0; order.len()];
        for (w, comp) in gmm.weights().iter().zip(gmm.components()) {
            let engine = ComponentMoments::new(comp, p);
            let q: Vec<f64> = order
                .indices()
                .par_iter()
                .map(|alpha| engine.moment(alpha))
                .collect();
            for (v, qv) in values.iter_mut().zip(q) {
                *v += w * qv;
            }
        }
        Self { order, values }
    }

    pub fn order(&self) -> &GradedLexOrder {
        &self.order
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, alpha: &MultiIndex) -> Option<f64> {
        self.order.position(alpha).map(|i| self.values[i])
    }
}

//! Adaptive sparse solver: pivoted-QR seeding, CoSaMP support recovery, and
//! D-optimal sequential sampling with Sherman–Morrison updates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::linalg::{lstsq, select_rows};

const RANK_TOL: f64 = 1e-10;
const DRIFT_TOL: f64 = 1e-6;
const DENOM_TOL: f64 = 1e-12;
/// CoSaMP iterations without a new lowest residual before giving up.
const PATIENCE: usize = 10;

/// Candidate samples `Ξ_0` and their basis values.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    points: DMatrix<f64>,
    phi: DMatrix<f64>,
}

impl CandidatePool {
    pub fn new(basis: &BasisSet, points: DMatrix<f64>) -> Result<Self> {
        if points.ncols() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: points.ncols(),
            });
        }
        let phi = basis.evaluate_many(&points);
        Ok(Self { points, phi })
    }

    /// `size` i.i.d. mixture draws.
    pub fn sample<R: Rng + ?Sized>(
        basis: &BasisSet,
        gmm: &GaussianMixture,
        size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(basis, gmm.sample(rng, size))
    }

    /// Pool with an explicit design matrix, for callers that already hold `Φ`.
    pub fn from_parts(points: DMatrix<f64>, phi: DMatrix<f64>) -> Self {
        assert_eq!(points.nrows(), phi.nrows());
        Self { points, phi }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().cloned().collect()
    }

    /// Row `i` is `Ψ(ξ_i)`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }
}

/// Where output values come from.
pub trait ResponseSource {
    fn response(&mut self, candidate: usize, point: &[f64]) -> Result<f64>;
}

/// Calls a model function and counts the calls.
pub struct ModelSource<F> {
    model: F,
    calls: usize,
}

impl<F: FnMut(&[f64]) -> f64> ModelSource<F> {
    pub fn new(model: F) -> Self {
        Self { model, calls: 0 }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl<F: FnMut(&[f64]) -> f64> ResponseSource for ModelSource<F> {
    fn response(&mut self, _candidate: usize, point: &[f64]) -> Result<f64> {
        self.calls += 1;
        let y = (self.model)(point);
        if !y.is_finite() {
            return Err(Error::Numerical(format!("model returned {y} at {point:?}")));
        }
        Ok(y)
    }
}

/// Looks outputs up in a precomputed table aligned with the pool.
pub struct TableSource<'a> {
    outputs: &'a [f64],
}

impl<'a> TableSource<'a> {
    pub fn new(outputs: &'a [f64]) -> Self {
        Self { outputs }
    }
}

impl ResponseSource for TableSource<'_> {
    fn response(&mut self, candidate: usize, _point: &[f64]) -> Result<f64> {
        self.outputs.get(candidate).copied().ok_or_else(|| {
            Error::InvalidArgument(format!("no tabulated output for row {candidate}"))
        })
    }
}

/// Result of pivoted-QR row selection.
#[derive(Debug, Clone, PartialEq)]
pub struct RrqrSelection {
    /// Selected candidate rows, in pivot order.
    pub indices: Vec<usize>,
    pub requested: usize,
    /// Set when the numerical rank ran out before `requested` rows.
    pub rank_limited: bool,
}

/// Greedy column-pivoted QR (Businger–Golub) of `Φᵀ`; returns the first `r` pivots.
///
/// Each step takes the candidate whose basis row has the largest norm after
/// projecting out the rows already chosen (ties go to the lowest index).
pub fn rrqr_select(phi: &DMatrix<f64>, r: usize) -> RrqrSelection {
    let (m0, n) = (phi.nrows(), phi.ncols());
    let requested = r.min(m0).min(n);
    // column j of `w` is candidate j's basis row
    let mut w = phi.transpose();
    let mut norms: Vec<f64> = (0..m0).map(|j| w.column(j).norm_squared()).collect();
    let first = norms.iter().cloned().fold(0.0, f64::max);
    let mut chosen = vec![false; m0];
    let mut indices = Vec::with_capacity(requested);
    let mut q = vec![0.0; n];
    while indices.len() < requested {
        let mut best = None;
        let mut best_norm = RANK_TOL * RANK_TOL * first;
        for j in 0..m0 {
            if !chosen[j] && norms[j] > best_norm {
                best = Some(j);
                best_norm = norms[j];
            }
        }
        let Some(p) = best else { break };
        chosen[p] = true;
        indices.push(p);
        let nrm = w.column(p).norm();
        for (qi, wi) in q.iter_mut().zip(w.column(p).iter()) {
            *qi = wi / nrm;
        }
        let qv = DVector::from_column_slice(&q);
        for j in 0..m0 {
            if chosen[j] {
                continue;
            }
            let mut col = w.column_mut(j);
            // two passes of Gram–Schmidt keep the residuals orthogonal
            for _ in 0..2 {
                let dot = qv.dot(&col);
                col.axpy(-dot, &qv, 1.0);
            }
            norms[j] = col.norm_squared();
        }
    }
    RrqrSelection {
        rank_limited: indices.len() < requested,
        indices,
        requested,
    }
}

/// CoSaMP output.
#[derive(Debug, Clone)]
pub struct CosampResult {
    /// Full-length coefficients, zero off the support.
    pub coeffs: Vec<f64>,
    /// Sorted support, at most `s` entries.
    pub support: Vec<usize>,
    pub iterations: usize,
    /// Columns dropped from least-squares solves as numerically dependent.
    pub dependent_columns: Vec<usize>,
}

/// CoSaMP for `min ‖c‖₀ s.t. Φc ≈ y` with sparsity `s`.
///
/// Columns are scaled to unit norm for the proxy and the least-squares steps. The
/// iterate with the lowest residual is kept, and the returned coefficients solve
/// the least-squares problem on its support, in the unscaled basis.
pub fn cosamp(phi: &DMatrix<f64>, y: &[f64], s: usize, tol: f64, maxit: usize) -> CosampResult {
    let (m, n) = (phi.nrows(), phi.ncols());
    assert_eq!(y.len(), m);
    let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let empty = CosampResult {
        coeffs: vec![0.0; n],
        support: Vec::new(),
        iterations: 0,
        dependent_columns: Vec::new(),
    };
    if ynorm == 0.0 || s == 0 {
        return empty;
    }
    let scale: Vec<f64> = (0..n).map(|j| phi.column(j).norm()).collect();
    let mut a = phi.clone();
    for j in 0..n {
        if scale[j] > 0.0 {
            a.column_mut(j).scale_mut(1.0 / scale[j]);
        }
    }
    let yv = DVector::from_column_slice(y);
    let mut support: Vec<usize> = Vec::new();
    let mut residual = yv.clone();
    let mut res_norm = ynorm;
    let mut best = (Vec::new(), ynorm);
    let mut since_best = 0;
    let mut dependent = Vec::new();
    let mut iterations = 0;
    while iterations < maxit {
        iterations += 1;
        let proxy = a.tr_mul(&residual);
        let mut merged = top_k(proxy.as_slice(), 2 * s, |j| scale[j] > 0.0);
        merged.extend(support.iter().copied());
        merged.sort_unstable();
        merged.dedup();
        let sub = DMatrix::from_fn(m, merged.len(), |i, j| a[(i, merged[j])]);
        let ls = lstsq(&sub, y, RANK_TOL);
        for &d in &ls.dropped {
            dependent.push(merged[d]);
        }
        let mut b = vec![0.0; n];
        for (k, &j) in merged.iter().enumerate() {
            b[j] = ls.x[k];
        }
        support = top_k(&b, s, |j| b[j] != 0.0);
        support.sort_unstable();
        residual = &yv - a_times_sparse(&a, &b, &support);
        let new_norm = residual.norm();
        let stalled = (res_norm - new_norm).abs() < tol * ynorm;
        res_norm = new_norm;
        if new_norm < best.1 {
            best = (support.clone(), new_norm);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if new_norm <= tol * ynorm || stalled || since_best >= PATIENCE {
            break;
        }
    }
    // least-squares refit on the best support seen
    let support = best.0;
    let sub = DMatrix::from_fn(m, support.len(), |i, j| a[(i, support[j])]);
    let ls = lstsq(&sub, y, RANK_TOL);
    let mut coeffs = vec![0.0; n];
    let mut kept = Vec::with_capacity(support.len());
    for (k, &j) in support.iter().enumerate() {
        if ls.dropped.contains(&k) {
            dependent.push(j);
            continue;
        }
        coeffs[j] = ls.x[k] / scale[j];
        kept.push(j);
    }
    dependent.sort_unstable();
    dependent.dedup();
    CosampResult {
        coeffs,
        support: kept,
        iterations,
        dependent_columns: dependent,
    }
}

fn a_times_sparse(a: &DMatrix<f64>, x: &[f64], support: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(a.nrows());
    for &j in support {
        out.axpy(x[j], &a.column(j), 1.0);
    }
    out
}

/// Indices of the `k` largest `|v_j|` among eligible `j`, ties to the lower index.
fn top_k(v: &[f64], k: usize, eligible: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).filter(|&j| eligible(j)).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Least-squares state on a fixed support: `Φ₁`, `(Φ₁ᵀΦ₁)⁻¹`, `Φ₁ᵀy` and `c₁`.
#[derive(Debug, Clone)]
pub struct SupportSystem {
    support: Vec<usize>,
    rows: Vec<Vec<f64>>,
    y: Vec<f64>,
    gram: DMatrix<f64>,
    graminv: DMatrix<f64>,
    rhs: DVector<f64>,
    coeffs: DVector<f64>,
    refactorizations: usize,
}

/// What happened in one rank-one update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    ShermanMorrison,
    /// Denominator too small or drift above tolerance; inverse rebuilt from scratch.
    Refactored,
}

impl SupportSystem {
    /// `rows[i]` is the restriction of sample `i`'s basis row to `support`.
    pub fn new(support: Vec<usize>, rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let s = support.len();
        let mut gram = DMatrix::zeros(s, s);
        let mut rhs = DVector::zeros(s);
        for (x, &yi) in rows.iter().zip(&y) {
            assert_eq!(x.len(), s);
            for a in 0..s {
                rhs[a] += x[a] * yi;
                for b in 0..s {
                    gram[(a, b)] += x[a] * x[b];
                }
            }
        }
        let graminv = invert_spd(&gram)?;
        let coeffs = &graminv * &rhs;
        Ok(Self {
            support,
            rows,
            y,
            gram,
            graminv,
            rhs,
            coeffs,
            refactorizations: 0,
        })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn graminv(&self) -> &DMatrix<f64> {
        &self.graminv
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `c₁ = (Φ₁ᵀΦ₁)⁻¹ Φ₁ᵀ y`.
    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn samples(&self) -> usize {
        self.rows.len()
    }

    pub fn refactorizations(&self) -> usize {
        self.refactorizations
    }

    /// D-optimal score `x (Φ₁ᵀΦ₁)⁻¹ xᵀ`.
    pub fn score(&self, x: &[f64]) -> f64 {
        let s = x.len();
        let mut total = 0.0;
        for a in 0..s {
            if x[a] == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for b in 0..s {
                acc += self.graminv[(a, b)] * x[b];
            }
            total += x[a] * acc;
        }
        total
    }

    /// `‖G·(Φ₁ᵀΦ₁) − I‖_max`.
    pub fn drift(&self) -> f64 {
        let s = self.gram.nrows();
        (&self.graminv * &self.gram - DMatrix::<f64>::identity(s, s)).amax()
    }

    /// Appends row `x` with output `y` and updates the inverse by Sherman–Morrison.
    pub fn rank_one_update(&mut self, x: Vec<f64>, y: f64) -> Result<UpdateKind> {
        let s = self.support.len();
        assert_eq!(x.len(), s);
        let xv = DVector::from_column_slice(&x);
        let gx = &self.graminv * &xv;
        let denom = 1.0 + xv.dot(&gx);
        for a in 0..s {
            self.rhs[a] += x[a] * y;
            for b in 0..s {
                self.gram[(a, b)] += x[a] * x[b];
            }
        }
        self.rows.push(x);
        self.y.push(y);
        let mut kind = UpdateKind::ShermanMorrison;
        if denom <= DENOM_TOL {
            self.refactor()?;
            kind = UpdateKind::Refactored;
        } else {
            self.graminv.ger(-1.0 / denom, &gx, &gx, 1.0);
            if self.drift() > DRIFT_TOL {
                self.refactor()?;
                kind = UpdateKind::Refactored;
            }
        }
        self.coeffs = &self.graminv * &self.rhs;
        Ok(kind)
    }

    /// Rebuilds the inverse from the accumulated Gram matrix.
    pub fn refactor(&mut self) -> Result<()> {
        self.graminv = invert_spd(&self.gram)?;
        self.refactorizations += 1;
        Ok(())
    }

    /// Overwrites the cached inverse (for fault-injection tests).
    #[doc(hidden)]
    pub fn corrupt_graminv(&mut self, delta: f64) {
        self.graminv[(0, 0)] += delta;
    }

    /// `‖Φ₁c₁ − y‖ / ‖y‖` over the samples in the system.
    pub fn training_error(&self) -> f64 {
        let ny = self.y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ny == 0.0 {
            return 0.0;
        }
        let res: f64 = self
            .rows
            .iter()
            .zip(&self.y)
            .map(|(x, yi)| {
                let pred: f64 = x.iter().zip(self.coeffs.iter()).map(|(a, b)| a * b).sum();
                (pred - yi) * (pred - yi)
            })
            .sum();
        res.sqrt() / ny
    }
}

fn invert_spd(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    gram.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical("support Gram matrix is singular".into()))
}

/// Unused candidate maximizing `x (Φ₁ᵀΦ₁)⁻¹ xᵀ`, lowest index on ties.
pub fn d_optimal_next(
    system: &SupportSystem,
    phi: &DMatrix<f64>,
    used: &[bool],
) -> Option<(usize, f64)> {
    let support = system.support();
    let scores: Vec<Option<f64>> = (0..phi.nrows())
        .into_par_iter()
        .map(|i| {
            if used[i] {
                return None;
            }
            let x: Vec<f64> = support.iter().map(|&j| phi[(i, j)]).collect();
            Some(system.score(&x))
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if let Some(v) = s {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best
}

/// Solver knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Initial pivoted-QR samples; `None` means `2·s_max`.
    pub initial_samples: Option<usize>,
    pub s_max: usize,
    /// Inner iterations (new samples) per outer round.
    pub t_max: usize,
    /// Relative coefficient change below which the solver stops.
    pub tol_stop: f64,
    pub outer_max: usize,
    /// Hard cap on model evaluations.
    pub max_samples: Option<usize>,
    pub cosamp_tol: f64,
    pub cosamp_maxit: usize,
    /// Re-solve the sparse problem on every selected sample once the loop ends.
    pub final_solve: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            initial_samples: None,
            s_max: 50,
            t_max: 30,
            tol_stop: 1e-3,
            outer_max: 3,
            max_samples: None,
            cosamp_tol: 1e-10,
            cosamp_maxit: 100,
            final_solve: true,
        }
    }
}

impl SolverConfig {
    pub fn initial(&self) -> usize {
        self.initial_samples.unwrap_or(2 * self.s_max)
    }

    /// Sparsity for `samples` available samples: `max(5, ⌊samples/4⌋)` capped at `s_max`
    /// and kept below `samples`.
    pub fn sparsity(&self, samples: usize) -> usize {
        (samples / 4)
            .max(5)
            .min(self.s_max)
            .min(samples.saturating_sub(1))
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    IterationLimit,
    BudgetExhausted,
    PoolExhausted,
    ZeroOutput,
}

/// One row of the solver log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub outer: usize,
    /// Zero for the CoSaMP solve opening an outer round.
    pub inner: usize,
    pub candidate: Option<usize>,
    pub score: Option<f64>,
    pub samples: usize,
    pub training_error: f64,
    pub change: Option<f64>,
    pub support: Vec<usize>,
    pub values: Vec<f64>,
}

impl IterationRecord {
    /// Full-length coefficient vector of this snapshot.
    pub fn coeffs(&self, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n];
        for (&j, &v) in self.support.iter().zip(&self.values) {
            c[j] = v;
        }
        c
    }
}

/// Output of [`adaptive_fit`] and [`random_fit`].
#[derive(Debug, Clone)]
pub struct SparseFit {
    /// Pool indices in the order they were evaluated.
    pub selected: Vec<usize>,
    pub outputs: Vec<f64>,
    pub support: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub graminv: Option<DMatrix<f64>>,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    pub rank_limited: bool,
    pub dependent_columns: Vec<usize>,
    pub refactorizations: usize,
}

impl SparseFit {
    pub fn samples(&self) -> usize {
        self.selected.len()
    }

    pub fn training_error(&self, pool: &CandidatePool) -> f64 {
        let phi = select_rows(pool.phi(), &self.selected);
        crate::stats::relative_error(&phi, &self.coeffs, &self.outputs).unwrap_or(0.0)
    }
}

fn relative_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    let denom = old.norm();
    let num = (new - old).norm();
    if denom == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / denom
    }
}

fn restrict(phi: &DMatrix<f64>, row: usize, support: &[usize]) -> Vec<f64> {
    support.iter().map(|&j| phi[(row, j)]).collect()
}

/// Adaptive sparse fit over a candidate pool.
///
/// Seeds the sample set by pivoted QR, then alternates a CoSaMP solve that fixes
/// the support with rounds of D-optimal sample additions, each followed by a
/// Sherman–Morrison update of the support least-squares solution. Stops when the
/// support coefficients change by less than `tol_stop` (relative), or when the
/// iteration, budget or pool limits are hit.
pub fn adaptive_fit(
    pool: &CandidatePool,
    source: &mut dyn ResponseSource,
    config: &SolverConfig,
) -> Result<SparseFit> {
    let phi = pool.phi();
    let n = phi.ncols();
    let budget = config.max_samples.unwrap_or(usize::MAX).min(pool.len());
    let seed = rrqr_select(phi, config.initial().min(budget));
    if seed.indices.is_empty() {
        return Err(Error::Numerical(
            "candidate pool has no informative rows".into(),
        ));
    }
    let mut used = vec![false; pool.len()];
    let mut selected = Vec::new();
    let mut outputs = Vec::new();
    for &i in &seed.indices {
        used[i] = true;
        selected.push(i);
        outputs.push(source.response(i, &pool.point(i))?);
    }

    let mut history = Vec::new();
    let mut dependent = Vec::new();
    let mut refactorizations = 0;
    let mut coeffs = vec![0.0; n];
    let mut support = Vec::new();
    let mut graminv = None;
    let mut termination = Termination::IterationLimit;

    'outer: for outer in 1..=config.outer_max {
        let s = config.sparsity(selected.len());
        let rows = select_rows(phi, &selected);
        let cs = cosamp(&rows, &outputs, s, config.cosamp_tol, config.cosamp_maxit);
        dependent.extend(cs.dependent_columns.iter().copied());
        if cs.support.is_empty() {
            coeffs = cs.coeffs;
            support.clear();
            termination = Termination::ZeroOutput;
            history.push(IterationRecord {
                outer,
                inner: 0,
                candidate: None,
                score: None,
                samples: selected.len(),
                training_error: 0.0,
                change: None,
                support: Vec::new(),
                values: Vec::new(),
            });
            break;
        }
        let sup = cs.support.clone();
        let sys_rows: Vec<Vec<f64>> = selected.iter().map(|&i| restrict(phi, i, &sup)).collect();
        let mut system = SupportSystem::new(sup.clone(), sys_rows, outputs.clone())?;
        history.push(IterationRecord {
            outer,
            inner: 0,
            candidate: None,
            score: None,
            samples: selected.len(),
            training_error: system.training_error(),
            change: None,
            support: sup.clone(),
            values: system.coeffs().iter().cloned().collect(),
        });
        let mut prev = system.coeffs().clone();
        support = sup.clone();
        coeffs = scatter(n, &sup, system.coeffs());
        graminv = Some(system.graminv().clone());

        for inner in 1..=config.t_max {
            if selected.len() >= budget {
                termination = Termination::BudgetExhausted;
                break 'outer;
            }
            let Some((next, score)) = d_optimal_next(&system, phi, &used) else {
                termination = Termination::PoolExhausted;
                break 'outer;
            };
            let y = source.response(next, &pool.point(next))?;
            used[next] = true;
            selected.push(next);
            outputs.push(y);
            if system.rank_one_update(restrict(phi, next, &sup), y)? == UpdateKind::Refactored {
                refactorizations += 1;
            }
            let change = relative_change(system.coeffs(), &prev);
            prev = system.coeffs().clone();
            coeffs = scatter(n, &sup, system.coeffs());
            graminv = Some(system.graminv().clone());
            history.push(IterationRecord {
                outer,
                inner,
                candidate: Some(next),
                score: Some(score),
                samples: selected.len(),
                training_error: system.training_error(),
                change: Some(change),
                support: sup.clone(),
                values: system.coeffs().iter().cloned().collect(),
            });
            if change < config.tol_stop {
                termination = Termination::Converged;
                break 'outer;
            }
        }
    }
    if config.final_solve && termination != Termination::ZeroOutput {
        let s = config.sparsity(selected.len());
        let rows = select_rows(phi, &selected);
        let cs = cosamp(&rows, &outputs, s, config.cosamp_tol, config.cosamp_maxit);
        dependent.extend(cs.dependent_columns.iter().copied());
        if !cs.support.is_empty() {
            let sys_rows = selected
                .iter()
                .map(|&i| restrict(phi, i, &cs.support))
                .collect();
            let system = SupportSystem::new(cs.support.clone(), sys_rows, outputs.clone())?;
            support = cs.support;
            coeffs = scatter(n, &support, system.coeffs());
            graminv = Some(system.graminv().clone());
            history.push(IterationRecord {
                outer: history.last().map_or(1, |h| h.outer),
                inner: 0,
                candidate: None,
                score: None,
                samples: selected.len(),
                training_error: system.training_error(),
                change: None,
                support: support.clone(),
                values: system.coeffs().iter().cloned().collect(),
            });
        }
    }
    dependent.sort_unstable();
    dependent.dedup();
    Ok(SparseFit {
        selected,
        outputs,
        support,
        coeffs,
        graminv,
        history,
        termination,
        rank_limited: seed.rank_limited,
        dependent_columns: dependent,
        refactorizations,
    })
}

fn scatter(n: usize, support: &[usize], values: &DVector<f64>) -> Vec<f64> {
    let mut c = vec![0.0; n];
    for (&j, &v) in support.iter().zip(values.iter()) {
        c[j] = v;
    }
    c
}

/// Baseline: `budget` uniformly random candidates and one CoSaMP solve.
pub fn random_fit<R: Rng + ?Sized>(
    pool: &CandidatePool,
    source: &mut dyn ResponseSource,
    budget: usize,
    config: &SolverConfig,
    rng: &mut R,
) -> Result<SparseFit> {
    let budget = budget.min(pool.len());
    let selected: Vec<usize> = rand::seq::index::sample(rng, pool.len(), budget).into_vec();
    let mut outputs = Vec::with_capacity(budget);
    for &i in &selected {
        outputs.push(source.response(i, &pool.point(i))?);
    }
    let rows = select_rows(pool.phi(), &selected);
    let cs = cosamp(
        &rows,
        &outputs,
        config.sparsity(budget),
        config.cosamp_tol,
        config.cosamp_maxit,
    );
    let training_error = crate::stats::relative_error(&rows, &cs.coeffs, &outputs).unwrap_or(0.0);
    let values = cs.support.iter().map(|&j| cs.coeffs[j]).collect();
    Ok(SparseFit {
        history: vec![IterationRecord {
            outer: 1,
            inner: 0,
            candidate: None,
            score: None,
            samples: budget,
            training_error,
            change: None,
            support: cs.support.clone(),
            values,
        }],
        selected,
        outputs,
        support: cs.support,
        coeffs: cs.coeffs,
        graminv: None,
        termination: Termination::BudgetExhausted,
        rank_limited: false,
        dependent_columns: cs.dependent_columns,
        refactorizations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_singular_value;
    use crate::rng::{stream, substream, Stream};
    use rand_distr::StandardNormal;

    fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, Stream::Oracle);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn rrqr_skips_duplicates() {
        let mut phi = gaussian_matrix(6, 8, 1);
        let dup = phi.row(2).clone_owned();
        phi.row_mut(5).copy_from(&dup);
        let sel = rrqr_select(&phi, 6);
        let pos2 = sel.indices.iter().position(|&i| i == 2);
        let pos5 = sel.indices.iter().position(|&i| i == 5);
        // only one of the twins can be selected among 6 rows of rank 5
        assert!(pos2.is_some() ^ pos5.is_some());
        assert_eq!(sel.indices.len(), 5);
        assert!(sel.rank_limited);
    }

    #[test]
    fn rrqr_orthonormal_is_deterministic() {
        let phi = DMatrix::<f64>::identity(4, 4);
        let a = rrqr_select(&phi, 3);
        assert_eq!(a.indices, vec![0, 1, 2]);
        assert_eq!(a, rrqr_select(&phi, 3));
    }

    #[test]
    fn rrqr_beats_random_subsets() {
        let phi = gaussian_matrix(100, 20, 3);
        let sel = rrqr_select(&phi, 20);
        let ours = min_singular_value(&select_rows(&phi, &sel.indices));
        let mut rng = stream(4, Stream::RandomBaseline);
        let mut others: Vec<f64> = (0..50)
            .map(|_| {
                let idx = rand::seq::index::sample(&mut rng, 100, 20).into_vec();
                min_singular_value(&select_rows(&phi, &idx))
            })
            .collect();
        others.sort_by(f64::total_cmp);
        assert!(ours >= others[25], "{ours} vs median {}", others[25]);
    }

    #[test]
    fn cosamp_recovers_planted() {
        let (m, n, s) = (60, 200, 8);
        let phi = gaussian_matrix(m, n, 5);
        let mut truth = vec![0.0; n];
        for (k, j) in [3usize, 17, 40, 41, 99, 150, 160, 199].iter().enumerate() {
            truth[*j] = (k as f64 + 1.0) * if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        let y: Vec<f64> = (0..m)
            .map(|i| (0..n).map(|j| phi[(i, j)] * truth[j]).sum())
            .collect();
        let r = cosamp(&phi, &y, s, 1e-12, 100);
        let err: f64 = truth
            .iter()
            .zip(&r.coeffs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let nrm: f64 = truth.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / nrm < 1e-8, "relative error {}", err / nrm);
        assert!(r.support.len() <= s);
    }

    #[test]
    fn cosamp_zero_output() {
        let phi = gaussian_matrix(10, 30, 6);
        let r = cosamp(&phi, &[0.0; 10], 3, 1e-10, 50);
        assert!(r.coeffs.iter().all(|&c| c == 0.0));
        assert!(r.support.is_empty());
    }

    #[test]
    fn cosamp_one_sparse_matches_exhaustive_search() {
        let phi = gaussian_matrix(12, 15, 7);
        let mut rng = stream(8, Stream::Oracle);
        let y: Vec<f64> = (0..12)
            .map(|i| 3.0 * phi[(i, 9)] + 0.05 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        // oracle: best single column by residual
        let mut best = (0, f64::INFINITY, 0.0);
        for j in 0..15 {
            let col = phi.column(j);
            let c = col.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / col.norm_squared();
            let res: f64 = col.iter().zip(&y).map(|(a, b)| (b - c * a).powi(2)).sum();
            if res < best.1 {
                best = (j, res, c);
            }
        }
        let r = cosamp(&phi, &y, 1, 1e-12, 50);
        assert_eq!(r.support, vec![best.0]);
        assert!((r.coeffs[best.0] - best.2).abs() < 1e-12);
    }

    fn system_from(rows: &DMatrix<f64>, y: &[f64]) -> SupportSystem {
        let s = rows.ncols();
        SupportSystem::new(
            (0..s).collect(),
            (0..rows.nrows())
                .map(|i| rows.row(i).iter().cloned().collect())
                .collect(),
            y.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn d_optimal_prefers_information() {
        let rows = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let sys = system_from(&rows, &[1.0, 2.0, 3.0]);
        let cands = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, -0.5]);
        assert_eq!(d_optimal_next(&sys, &cands, &[false, false]).unwrap().0, 1);
        assert!(d_optimal_next(&sys, &cands, &[true, true]).is_none());

        // duplicate of an existing row vs a row along the weakly sampled direction
        let rows = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let sys = system_from(&rows, &[1.0, 1.0, 1.0]);
        let cands = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        // scores: 1/2 for the duplicate, 1 for the orthogonal direction
        let (i, score) = d_optimal_next(&sys, &cands, &[false, false]).unwrap();
        assert_eq!(i, 1);
        assert!((score - 1.0).abs() < 1e-15);
    }

    #[test]
    fn d_optimal_matches_determinant_search() {
        let rows = gaussian_matrix(4, 2, 9);
        let sys = system_from(&rows, &[0.0, 1.0, 2.0, 3.0]);
        let cands = gaussian_matrix(5, 2, 10);
        let gram = rows.transpose() * &rows;
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..5 {
            let x = cands.row(i).transpose();
            let det = (&gram + &x * x.transpose()).determinant();
            if det > best.1 {
                best = (i, det);
            }
        }
        assert_eq!(d_optimal_next(&sys, &cands, &[false; 5]).unwrap().0, best.0);
    }

    #[test]
    fn update_matches_fresh_inverse() {
        let rows = gaussian_matrix(6, 3, 11);
        let mut sys = system_from(&rows, &[1.0, 0.0, 2.0, -1.0, 0.5, 0.3]);
        let x = vec![0.3, -1.2, 0.8];
        assert_eq!(
            sys.rank_one_update(x, 0.7).unwrap(),
            UpdateKind::ShermanMorrison
        );
        let fresh = sys.gram().clone().try_inverse().unwrap();
        assert!((sys.graminv() - &fresh).amax() < 1e-10 * fresh.amax());
    }

    #[test]
    fn duplicate_consistent_row_keeps_fit() {
        let rows = gaussian_matrix(5, 2, 12);
        let c = [2.0, -1.0];
        let y: Vec<f64> = (0..5)
            .map(|i| rows[(i, 0)] * c[0] + rows[(i, 1)] * c[1])
            .collect();
        let mut sys = system_from(&rows, &y);
        let before = sys.coeffs().clone();
        sys.rank_one_update(vec![rows[(2, 0)], rows[(2, 1)]], y[2])
            .unwrap();
        assert!((sys.coeffs() - before).amax() < 1e-12);
    }

    #[test]
    fn drift_triggers_refactorization() {
        let rows = gaussian_matrix(6, 3, 13);
        let mut sys = system_from(&rows, &[1.0; 6]);
        sys.corrupt_graminv(1e-3);
        let kind = sys.rank_one_update(vec![0.1, 0.2, 0.3], 1.0).unwrap();
        assert_eq!(kind, UpdateKind::Refactored);
        assert_eq!(sys.refactorizations(), 1);
        assert!(sys.drift() < 1e-10);
    }

    #[test]
    fn sparsity_schedule() {
        let c = SolverConfig::default();
        assert_eq!(c.sparsity(10), 5);
        assert_eq!(c.sparsity(100), 25);
        assert_eq!(c.sparsity(1000), 50);
        assert_eq!(c.sparsity(4), 3);
        assert_eq!(c.initial(), 100);
    }

    #[test]
    fn random_fit_is_seeded() {
        let phi = gaussian_matrix(50, 10, 14);
        let pool = CandidatePool::from_parts(DMatrix::zeros(50, 1), phi);
        let mut src = ModelSource::new(|_: &[f64]| 1.0);
        let a = random_fit(
            &pool,
            &mut src,
            20,
            &SolverConfig::default(),
            &mut substream(1, Stream::RandomBaseline, 0),
        )
        .unwrap();
        let b = random_fit(
            &pool,
            &mut src,
            20,
            &SolverConfig::default(),
            &mut substream(1, Stream::RandomBaseline, 0),
        )
        .unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.coeffs, b.coeffs);
    }
}

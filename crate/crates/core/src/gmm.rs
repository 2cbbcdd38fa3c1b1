//! Gaussian-mixture joint densities: validation, evaluation, sampling and standardization.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One multivariate normal component with its cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl GaussianComponent {
    /// Validates that `cov` is symmetric positive definite and caches `Σ = AAᵀ`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidMixture("empty mean vector".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::InvalidMixture(format!(
                "covariance is {}x{}, expected {d}x{d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMixture("non-finite parameter".into()));
        }
        let scale = cov.amax();
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidMixture(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidMixture("covariance is not positive definite".into()))?
            .unpack();
        if chol.diagonal().iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(Error::InvalidMixture(
                "covariance is not positive definite".into(),
            ));
        }
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            cov,
            chol,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular `A` with `Σ = AAᵀ`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `log N(ξ | μ, Σ)`.
    pub fn log_density(&self, xi: &[f64]) -> f64 {
        let d = self.dim();
        let diff = DVector::from_iterator(d, xi.iter().zip(self.mean.iter()).map(|(x, m)| x - m));
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has positive diagonal");
        -0.5 * (d as f64 * (2.0 * PI).ln() + self.log_det + z.norm_squared())
    }

    /// Writes `μ + A z` with `z` standard normal into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let d = self.dim();
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let mut acc = self.mean[i];
            for k in 0..=i {
                acc += self.chol[(i, k)] * z[k];
            }
            out[i] = acc;
        }
    }
}

/// Convex combination of Gaussian components.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
    cumulative: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::InvalidMixture(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if let Some(i) = weights.iter().position(|&w| w.is_nan() || w <= 0.0 || !w.is_finite()) {
            return Err(Error::InvalidMixture(format!("weight {i} is not positive")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let d = components[0].dim();
        if let Some(i) = components.iter().position(|c| c.dim() != d) {
            return Err(Error::InvalidMixture(format!(
                "component {i} has dimension {}, expected {d}",
                components[i].dim()
            )));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self {
            weights,
            components,
            cumulative,
        })
    }

    /// Mixture with a single component of weight one.
    pub fn single(component: GaussianComponent) -> Self {
        Self::new(vec![1.0], vec![component]).expect("single component is valid")
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Joint density `ρ(ξ) = Σ w_i N(ξ | μ_i, Σ_i)`, accumulated in log space.
    pub fn density(&self, xi: &[f64]) -> Result<f64> {
        Ok(self.log_density(xi)?.exp())
    }

    pub fn log_density(&self, xi: &[f64]) -> Result<f64> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: xi.len(),
            });
        }
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(xi))
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Ok(top);
        }
        Ok(top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln())
    }

    /// Index of the component owning cumulative-weight position `u ∈ [0,1)`.
    fn pick(&self, u: f64) -> usize {
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.components.len() - 1)
    }

    /// Writes one draw into `out`; `z` is scratch space of length `d`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let u: f64 = rng.random();
        self.components[self.pick(u)].sample_into(rng, z, out);
    }

    /// `count` draws as rows of a matrix.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(count, d);
        let mut z = vec![0.0; d];
        let mut row = vec![0.0; d];
        for i in 0..count {
            self.sample_into(rng, &mut z, &mut row);
            for k in 0..d {
                out[(i, k)] = row[k];
            }
        }
        out
    }

    /// Calls `f` on each of `count` draws without materializing them.
    pub fn for_each_sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
        mut f: impl FnMut(&[f64]),
    ) {
        let d = self.dim();
        let mut z = vec![0.0; d];
        let mut row = vec![0.0; d];
        for _ in 0..count {
            self.sample_into(rng, &mut z, &mut row);
            f(&row);
        }
    }

    /// Mixture mean `Σ w_i μ_i`.
    pub fn mean(&self) -> DVector<f64> {
        self.weights
            .iter()
            .zip(&self.components)
            .fold(DVector::zeros(self.dim()), |acc, (w, c)| {
                acc + c.mean() * *w
            })
    }

    /// Mixture covariance `Σ w_i (Σ_i + μ_i μ_iᵀ) − m mᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let d = self.dim();
        let second = self
            .weights
            .iter()
            .zip(&self.components)
            .fold(DMatrix::zeros(d, d), |acc, (w, c)| {
                acc + (c.cov() + c.mean() * c.mean().transpose()) * *w
            });
        second - &m * m.transpose()
    }

    /// Shift to zero mixture mean and scale to unit per-coordinate variance.
    pub fn standardize(&self) -> Result<(AffineMap, GaussianMixture)> {
        let shift = self.mean();
        let cov = self.covariance();
        let mut scale = DVector::zeros(self.dim());
        for k in 0..self.dim() {
            let v = cov[(k, k)];
            if v.is_nan() || v <= 0.0 {
                return Err(Error::ZeroVariance { coordinate: k });
            }
            scale[k] = v.sqrt();
        }
        let map = AffineMap { shift, scale };
        Ok((map.clone(), self.pushforward(&map)?))
    }

    /// Image of this mixture under `ξ ↦ D⁻¹(ξ − m)`.
    pub fn pushforward(&self, map: &AffineMap) -> Result<GaussianMixture> {
        let inv = map.scale.map(|s| 1.0 / s);
        let comps = self
            .components
            .iter()
            .map(|c| {
                let mean = (c.mean() - &map.shift).component_mul(&inv);
                let mut cov = c.cov().clone();
                for i in 0..cov.nrows() {
                    for j in 0..cov.ncols() {
                        cov[(i, j)] *= inv[i] * inv[j];
                    }
                }
                // exact symmetry after scaling
                for i in 0..cov.nrows() {
                    for j in 0..i {
                        cov[(j, i)] = cov[(i, j)];
                    }
                }
                GaussianComponent::new(mean, cov)
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(self.weights.clone(), comps)
    }

    pub fn to_spec(&self) -> MixtureSpec {
        MixtureSpec {
            d: self.dim(),
            n: self.len(),
            weights: self.weights.clone(),
            means: self
                .components
                .iter()
                .map(|c| c.mean().iter().cloned().collect())
                .collect(),
            covariances: self
                .components
                .iter()
                .map(|c| {
                    (0..c.dim())
                        .map(|i| c.cov().row(i).iter().cloned().collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_spec(spec: &MixtureSpec) -> Result<Self> {
        if spec.weights.len() != spec.n {
            return Err(Error::InvalidMixture(format!(
                "field `weights` has {} entries, expected n = {}",
                spec.weights.len(),
                spec.n
            )));
        }
        if spec.means.len() != spec.n {
            return Err(Error::InvalidMixture(format!(
                "field `means` has {} rows, expected n = {}",
                spec.means.len(),
                spec.n
            )));
        }
        if spec.covariances.len() != spec.n {
            return Err(Error::InvalidMixture(format!(
                "field `covariances` has {} matrices, expected n = {}",
                spec.covariances.len(),
                spec.n
            )));
        }
        let d = spec.d;
        let mut comps = Vec::with_capacity(spec.n);
        for (i, (mean, cov)) in spec.means.iter().zip(&spec.covariances).enumerate() {
            if mean.len() != d {
                return Err(Error::InvalidMixture(format!(
                    "field `means[{i}]` has {} entries, expected d = {d}",
                    mean.len()
                )));
            }
            if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidMixture(format!(
                    "field `covariances[{i}]` is not {d}x{d}"
                )));
            }
            let cov = DMatrix::from_fn(d, d, |r, c| cov[r][c]);
            let comp = GaussianComponent::new(DVector::from_column_slice(mean), cov).map_err(
                |e| match e {
                    Error::InvalidMixture(m) => {
                        Error::InvalidMixture(format!("component {i}: {m}"))
                    }
                    other => other,
                },
            )?;
            comps.push(comp);
        }
        GaussianMixture::new(spec.weights.clone(), comps)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: MixtureSpec = serde_json::from_str(&text)?;
        Self::from_spec(&spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_spec())?)?;
        Ok(())
    }
}

/// Serialized mixture: `d`, `n`, `weights`, `means` (n×d), `covariances` (n×d×d, rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub d: usize,
    pub n: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

/// `ξ ↦ D⁻¹(ξ − m)` with diagonal `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub shift: DVector<f64>,
    pub scale: DVector<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: DVector::zeros(dim),
            scale: DVector::from_element(dim, 1.0),
        }
    }

    pub fn apply_into(&self, xi: &[f64], out: &mut [f64]) {
        for k in 0..xi.len() {
            out[k] = (xi[k] - self.shift[k]) / self.scale[k];
        }
    }

    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; xi.len()];
        self.apply_into(xi, &mut out);
        out
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, v)| v * self.scale[k] + self.shift[k])
            .collect()
    }
}

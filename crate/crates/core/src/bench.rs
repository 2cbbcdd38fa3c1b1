//! Synthetic black-box models, Monte Carlo baselines and offline sample tables.
//!
//! The models stand in for expensive device or circuit simulators. Their mixtures
//! and response parameters are synthetic: they reproduce the structure of the
//! experiments (dimension, correlated non-Gaussian inputs, multimodal outputs),
//! not any physical device.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::gmm::{GaussianComponent, GaussianMixture};
use crate::rng::{stream, Stream};
use crate::stats::{Histogram, RunningStats, SurrogateModel};

/// Names accepted by [`model_by_name`], besides `poly-planted-<d>`.
pub const BUILTIN_NAMES: [&str; 5] = ["poly-planted-10", "filter19", "osc57", "tiny2", "tiny3"];

#[derive(Debug, Clone)]
enum Response {
    /// `f₀ · exp(−a·ξ) · (1 + (b·ξ)²)⁻¹`
    Coupled {
        f0: f64,
        a: Vec<f64>,
        b: Vec<f64>,
    },
    /// `f₀ / (1 + a·ξ + q·(ξ_0 ξ_1))`
    Oscillator {
        f0: f64,
        a: Vec<f64>,
        q: f64,
    },
    Tiny2,
    Tiny3,
    Planted(Box<SurrogateModel>),
    Constant(f64),
}

/// A deterministic scalar function of `d` parameters with its recommended mixture.
#[derive(Debug, Clone)]
pub struct BlackBoxModel {
    name: String,
    order: usize,
    mixture: GaussianMixture,
    response: Response,
}

impl BlackBoxModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }

    /// Recommended expansion order `p`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn evaluate(&self, xi: &[f64]) -> f64 {
        match &self.response {
            Response::Coupled { f0, a, b } => {
                let detune = dot(b, xi);
                f0 * (-dot(a, xi)).exp() / (1.0 + detune * detune)
            }
            Response::Oscillator { f0, a, q } => f0 / (1.0 + dot(a, xi) + q * xi[0] * xi[1]),
            Response::Tiny2 => (0.4 * xi[0]).exp() + 0.5 * xi[0] * xi[1] + xi[1].sin(),
            Response::Tiny3 => {
                let s = xi[0] + 0.5 * xi[1] - 0.3 * xi[2];
                2.0 + s / (1.0 + 0.1 * s * s) + 0.2 * xi[1] * xi[2]
            }
            Response::Planted(model) => model.evaluate(xi),
            Response::Constant(c) => *c,
        }
    }

    /// Evaluates every row of `points` (rows are samples).
    pub fn evaluate_rows(&self, points: &DMatrix<f64>) -> Vec<f64> {
        (0..points.nrows())
            .into_par_iter()
            .map(|i| {
                let x: Vec<f64> = points.row(i).iter().cloned().collect();
                self.evaluate(&x)
            })
            .collect()
    }

    /// Ground-truth coefficients of a planted model.
    pub fn planted(&self) -> Option<&SurrogateModel> {
        match &self.response {
            Response::Planted(m) => Some(m),
            _ => None,
        }
    }

    /// Constant model under a standard normal mixture.
    pub fn constant(value: f64, dim: usize, order: usize) -> Self {
        let comp = GaussianComponent::new(DVector::zeros(dim), DMatrix::identity(dim, dim))
            .expect("identity covariance");
        Self {
            name: format!("constant-{dim}"),
            order,
            mixture: GaussianMixture::single(comp),
            response: Response::Constant(value),
        }
    }

    /// Polynomial with exactly `sparsity` nonzero coefficients (including the
    /// constant term) in the orthonormal basis of its mixture.
    pub fn planted_polynomial(
        dim: usize,
        order: usize,
        sparsity: usize,
        seed: u64,
    ) -> Result<Self> {
        let mixture = planted_mixture(dim)?;
        let basis = BasisSet::build(&mixture, order)?;
        let n = basis.len();
        if sparsity == 0 || sparsity > n {
            return Err(Error::InvalidArgument(format!(
                "sparsity {sparsity} outside 1..={n}"
            )));
        }
        let mut rng = stream(seed, Stream::Model);
        let mut coeffs = vec![0.0; n];
        coeffs[0] = 2.0 + rng.random::<f64>();
        let others = rand::seq::index::sample(&mut rng, n - 1, sparsity - 1);
        for j in others.iter() {
            let magnitude = 0.2 + rng.random::<f64>();
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            coeffs[j + 1] = sign * magnitude;
        }
        Ok(Self {
            name: format!("poly-planted-{dim}"),
            order,
            mixture,
            response: Response::Planted(Box::new(SurrogateModel::new(basis, coeffs)?)),
        })
    }
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(u, v)| u * v).sum()
}

/// Default instances of every builtin model.
pub fn builtin_models() -> Result<Vec<BlackBoxModel>> {
    BUILTIN_NAMES.iter().map(|n| model_by_name(n)).collect()
}

/// Looks up a builtin model: `filter19`, `osc57`, `tiny2`, `tiny3`, or
/// `poly-planted-<d>` (order 3, ten nonzero coefficients).
pub fn model_by_name(name: &str) -> Result<BlackBoxModel> {
    match name {
        "filter19" => filter19(),
        "osc57" => osc57(),
        "tiny2" => tiny2(),
        "tiny3" => tiny3(),
        _ => {
            let d = name
                .strip_prefix("poly-planted-")
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&d| d >= 1)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown model '{name}'")))?;
            BlackBoxModel::planted_polynomial(d, 3, 10.min(crate::indexing::binomial(d + 3, 3)), 0)
        }
    }
}

/// Covariance `s_a s_b ρ^{|a−b|}` on the coordinate block `range`.
fn ar1_block(cov: &mut DMatrix<f64>, range: std::ops::Range<usize>, std: &[f64], rho: f64) {
    let start = range.start;
    for a in range.clone() {
        for b in range.clone() {
            cov[(a, b)] = std[a - start] * std[b - start] * rho.powi((a as i32 - b as i32).abs());
        }
    }
}

fn planted_mixture(dim: usize) -> Result<GaussianMixture> {
    let comps = [(-1.0, 0.8, 0.3), (1.5, 0.6, -0.2)]
        .iter()
        .map(|&(shift, scale, rho)| {
            let mean = DVector::from_fn(dim, |k, _| if k == 0 { shift } else { 0.0 });
            let mut cov = DMatrix::zeros(dim, dim);
            ar1_block(&mut cov, 0..dim, &vec![scale; dim], rho);
            GaussianComponent::new(mean, cov)
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(vec![0.6, 0.4], comps)
}

/// Coupled-resonator-filter-like model: 19 parameters, three process corners
/// separated along the first coordinates. The bandwidth decays exponentially with
/// the gap deviations and drops with the detuning between neighbouring rings.
fn filter19() -> Result<BlackBoxModel> {
    let d = 19;
    let corners = [
        (0.45, [-1.5, -0.6, 0.3], [0.45, 0.5, 0.4], 0.6),
        (0.35, [1.2, 0.7, -0.4], [0.5, 0.4, 0.5], -0.3),
        (0.20, [2.6, -0.3, 0.8], [0.4, 0.5, 0.45], 0.2),
    ];
    let mut weights = Vec::new();
    let mut comps = Vec::new();
    for (w, mu, sd, rho) in corners {
        let mean = DVector::from_fn(d, |k, _| if k < 3 { mu[k] } else { 0.0 });
        let mut cov = DMatrix::zeros(d, d);
        ar1_block(&mut cov, 0..3, &sd, rho);
        ar1_block(&mut cov, 3..d, &[1.0; 16], 0.5);
        weights.push(w);
        comps.push(GaussianComponent::new(mean, cov)?);
    }
    let mut a = vec![0.06, 0.03, 0.02];
    let mut b = vec![0.0, 0.05, -0.03];
    for k in 0..16 {
        a.push(0.01 * 0.75f64.powi(k));
        b.push(0.0);
    }
    Ok(BlackBoxModel {
        name: "filter19".into(),
        order: 3,
        mixture: GaussianMixture::new(weights, comps)?,
        response: Response::Coupled { f0: 21.5, a, b },
    })
}

/// Ring-oscillator-like model: 57 parameters, two corners differing in five
/// device parameters, frequency inversely proportional to a total delay.
fn osc57() -> Result<BlackBoxModel> {
    let d = 57;
    let corners = [(0.6, -0.8, 1.0), (0.4, 1.2, 1.2)];
    let mut weights = Vec::new();
    let mut comps = Vec::new();
    for (w, shift, spread) in corners {
        let mean = DVector::from_fn(d, |k, _| if k < 5 { shift } else { 0.0 });
        let sd: Vec<f64> = (0..d)
            .map(|k| if k < 5 { 0.5 * spread } else { 1.0 })
            .collect();
        let mut cov = DMatrix::zeros(d, d);
        ar1_block(&mut cov, 0..d, &sd, 0.4);
        weights.push(w);
        comps.push(GaussianComponent::new(mean, cov)?);
    }
    let a: Vec<f64> = (0..d)
        .map(|k| {
            if k < 5 {
                0.012
            } else {
                0.002 * 0.8f64.powi(k as i32 - 5)
            }
        })
        .collect();
    Ok(BlackBoxModel {
        name: "osc57".into(),
        order: 2,
        mixture: GaussianMixture::new(weights, comps)?,
        response: Response::Oscillator {
            f0: 90.5,
            a,
            q: 0.004,
        },
    })
}

fn tiny2() -> Result<BlackBoxModel> {
    let comps = vec![
        GaussianComponent::new(
            DVector::from_vec(vec![-0.8, 0.2]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.6]),
        )?,
        GaussianComponent::new(
            DVector::from_vec(vec![1.0, -0.3]),
            DMatrix::from_row_slice(2, 2, &[0.4, -0.15, -0.15, 0.3]),
        )?,
    ];
    Ok(BlackBoxModel {
        name: "tiny2".into(),
        order: 3,
        mixture: GaussianMixture::new(vec![0.55, 0.45], comps)?,
        response: Response::Tiny2,
    })
}

fn tiny3() -> Result<BlackBoxModel> {
    let mut comps = Vec::new();
    for (shift, rho) in [(-1.0, 0.4), (0.5, -0.2), (1.8, 0.1)] {
        let mean = DVector::from_vec(vec![shift, 0.3 * shift, 0.0]);
        let mut cov = DMatrix::zeros(3, 3);
        ar1_block(&mut cov, 0..3, &[0.5, 0.7, 0.6], rho);
        comps.push(GaussianComponent::new(mean, cov)?);
    }
    Ok(BlackBoxModel {
        name: "tiny3".into(),
        order: 3,
        mixture: GaussianMixture::new(vec![0.3, 0.45, 0.25], comps)?,
        response: Response::Tiny3,
    })
}

/// Direct sampling statistics of a model.
#[derive(Debug, Clone)]
pub struct McBaseline {
    pub samples: usize,
    pub seed: u64,
    pub mean: f64,
    pub std_error: f64,
    pub variance: f64,
    pub variance_std_error: f64,
    pub histogram: Histogram,
    pub values: Vec<f64>,
}

/// Histogram bins used by [`mc_baseline`].
pub const MC_BINS: usize = 100;

/// Mean, variance and output histogram from `n` mixture draws.
pub fn mc_baseline(
    model: &BlackBoxModel,
    gmm: &GaussianMixture,
    n: usize,
    seed: u64,
) -> McBaseline {
    assert!(n >= 2);
    let mut rng = stream(seed, Stream::MonteCarlo);
    let values = sample_model(model, gmm, n, &mut rng);
    let mut stats = RunningStats::default();
    values.iter().for_each(|&v| stats.push(v));
    let mean = stats.mean();
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n as f64;
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = if hi > lo { MC_BINS } else { 1 };
    McBaseline {
        samples: n,
        seed,
        mean,
        std_error: stats.std_error(),
        variance: stats.variance(),
        variance_std_error: stats.variance_std_error(m4),
        histogram: Histogram::new(&values, lo, hi, bins),
        values,
    }
}

/// Model outputs on `n` mixture draws; draws are sequential, evaluation is parallel.
pub fn sample_model<R: Rng + ?Sized>(
    model: &BlackBoxModel,
    gmm: &GaussianMixture,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    const CHUNK: usize = 1 << 14;
    let mut values = Vec::with_capacity(n);
    let mut remaining = n;
    while remaining > 0 {
        let m = remaining.min(CHUNK);
        let pts = gmm.sample(rng, m);
        values.extend(model.evaluate_rows(&pts));
        remaining -= m;
    }
    values
}

/// Checks that the model is finite on `n` mixture draws and on the corners of each
/// component's ±8σ box along its principal axes.
pub fn check_finite(model: &BlackBoxModel, n: usize, seed: u64) -> Result<()> {
    let mut rng = stream(seed, Stream::MonteCarlo);
    let values = sample_model(model, &model.mixture, n, &mut rng);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "{}: non-finite output at draw {i}",
            model.name
        )));
    }
    let d = model.dim();
    for comp in model.mixture.components() {
        for k in 0..d {
            for sign in [-8.0, 8.0] {
                let mut eta = vec![0.0; d];
                eta[k] = sign;
                let x = comp.mean() + comp.chol() * DVector::from_vec(eta);
                let y = model.evaluate(x.as_slice());
                if !y.is_finite() {
                    return Err(Error::Numerical(format!(
                        "{}: non-finite output on the 8-sigma box, axis {k}",
                        model.name
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Parameter samples with their outputs, for offline fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub model: String,
    pub seed: u64,
    /// `M₀ × d`, one sample per row.
    pub points: DMatrix<f64>,
    pub outputs: Vec<f64>,
    /// Whether repeated rows are intentional.
    pub duplicates: bool,
}

impl SampleTable {
    /// `n` mixture draws of a builtin model, seeded from the pool stream.
    pub fn generate(model: &BlackBoxModel, n: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::Pool);
        let points = model.mixture.sample(&mut rng, n);
        let outputs = model.evaluate_rows(&points);
        Self {
            model: model.name.clone(),
            seed,
            points,
            outputs,
            duplicates: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.points.nrows() != self.outputs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.points.nrows(),
                got: self.outputs.len(),
            });
        }
        if !self.duplicates {
            let mut rows: Vec<Vec<u64>> = (0..self.points.nrows())
                .map(|i| self.points.row(i).iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort_unstable();
            if rows.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(
                    "sample table has duplicated rows but duplicates=false".into(),
                ));
            }
        }
        Ok(())
    }

    /// Text form; see `docs/sample-table.md`.
    pub fn to_text(&self) -> Result<String> {
        self.validate()?;
        let d = self.dim();
        let mut s = String::new();
        writeln!(s, "model,d,seed,duplicates").unwrap();
        writeln!(s, "{},{},{},{}", self.model, d, self.seed, self.duplicates).unwrap();
        let names: Vec<String> = (1..=d)
            .map(|k| format!("xi{k}"))
            .chain(["y".into()])
            .collect();
        writeln!(s, "{}", names.join(",")).unwrap();
        for i in 0..self.len() {
            for k in 0..d {
                write!(s, "{},", self.points[(i, k)]).unwrap();
            }
            writeln!(s, "{}", self.outputs[i]).unwrap();
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, message: String| Error::Parse { line, message };
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("missing {what}")))
        };
        let (ln, head) = next("metadata header")?;
        if head != "model,d,seed,duplicates" {
            return Err(err(
                ln,
                format!("expected 'model,d,seed,duplicates', found '{head}'"),
            ));
        }
        let (ln, meta) = next("metadata")?;
        let fields: Vec<&str> = meta.split(',').collect();
        if fields.len() != 4 {
            return Err(err(
                ln,
                format!("metadata has {} fields, expected 4", fields.len()),
            ));
        }
        let model = fields[0].to_string();
        let d: usize = fields[1]
            .parse()
            .map_err(|_| err(ln, format!("field 'd': invalid value '{}'", fields[1])))?;
        let seed: u64 = fields[2]
            .parse()
            .map_err(|_| err(ln, format!("field 'seed': invalid value '{}'", fields[2])))?;
        let duplicates: bool = fields[3].parse().map_err(|_| {
            err(
                ln,
                format!("field 'duplicates': invalid value '{}'", fields[3]),
            )
        })?;
        let (ln, cols) = next("column names")?;
        let names: Vec<&str> = cols.split(',').collect();
        if names.len() != d + 1 {
            return Err(err(
                ln,
                format!(
                    "field 'd': header declares d={d} but has {} columns",
                    names.len()
                ),
            ));
        }
        for (k, name) in names.iter().enumerate() {
            let want = if k == d {
                "y".to_string()
            } else {
                format!("xi{}", k + 1)
            };
            if *name != want {
                return Err(err(
                    ln,
                    format!("column {}: expected '{want}', found '{name}'", k + 1),
                ));
            }
        }
        let mut data = Vec::new();
        let mut outputs = Vec::new();
        for (ln, line) in lines {
            if line.is_empty() {
                continue;
            }
            let vals: Vec<&str> = line.split(',').collect();
            if vals.len() != d + 1 {
                return Err(err(
                    ln,
                    format!("row has {} values, expected {}", vals.len(), d + 1),
                ));
            }
            for (k, v) in vals.iter().enumerate() {
                let x: f64 = v
                    .parse()
                    .map_err(|_| err(ln, format!("column {}: invalid number '{v}'", k + 1)))?;
                if !x.is_finite() {
                    return Err(err(ln, format!("column {}: non-finite value", k + 1)));
                }
                if k == d {
                    outputs.push(x);
                } else {
                    data.push(x);
                }
            }
        }
        let table = Self {
            model,
            seed,
            points: DMatrix::from_row_slice(outputs.len(), d, &data),
            outputs,
            duplicates,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_matches_its_expansion_at_the_mean() {
        let m = model_by_name("poly-planted-4").unwrap();
        let truth = m.planted().unwrap();
        let mean: Vec<f64> = m.mixture().mean().iter().cloned().collect();
        let psi = truth.basis().evaluate(&mean);
        let direct: f64 = psi.iter().zip(truth.coeffs()).map(|(a, b)| a * b).sum();
        assert!((m.evaluate(&mean) - direct).abs() < 1e-12 * direct.abs().max(1.0));
        assert_eq!(truth.coeffs().iter().filter(|c| **c != 0.0).count(), 10);
    }

    #[test]
    fn constant_model_baseline() {
        let m = BlackBoxModel::constant(7.0, 2, 2);
        for n in [100, 10_000] {
            let mc = mc_baseline(&m, m.mixture(), n, 3);
            assert_eq!(mc.mean, 7.0);
            assert_eq!(mc.variance, 0.0);
        }
    }

    #[test]
    fn unknown_model_is_rejected() {
        assert!(model_by_name("filter20").is_err());
        assert!(model_by_name("poly-planted-x").is_err());
    }

    #[test]
    fn table_round_trip() {
        let m = model_by_name("tiny3").unwrap();
        let t = SampleTable::generate(&m, 50, 9);
        let back = SampleTable::parse(&t.to_text().unwrap()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn table_errors_name_the_field() {
        let m = model_by_name("tiny2").unwrap();
        let text = SampleTable::generate(&m, 3, 1).to_text().unwrap();
        let bad_d = text.replacen("tiny2,2,", "tiny2,3,", 1);
        let e = SampleTable::parse(&bad_d).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("'d'"), "{e}");
        let bad_num = text.lines().take(4).collect::<Vec<_>>().join("\n") + "\n1.0,abc,2.0\n";
        let e = SampleTable::parse(&bad_num).unwrap_err().to_string();
        assert!(e.contains("line 5") && e.contains("column 2"), "{e}");
        let bad_head = text.replacen("model,d,seed", "model,dim,seed", 1);
        assert!(SampleTable::parse(&bad_head)
            .unwrap_err()
            .to_string()
            .contains("line 1"));
    }

    #[test]
    fn duplicate_rows_need_the_flag() {
        let m = model_by_name("tiny2").unwrap();
        let mut t = SampleTable::generate(&m, 3, 1);
        let row = t.points.row(0).clone_owned();
        t.points.row_mut(2).copy_from(&row);
        t.outputs[2] = t.outputs[0];
        assert!(t.to_text().is_err());
        t.duplicates = true;
        assert_eq!(SampleTable::parse(&t.to_text().unwrap()).unwrap(), t);
    }

    #[test]
    fn builtins_are_finite_on_their_mixtures() {
        for m in builtin_models().unwrap() {
            check_finite(&m, 20_000, 5).unwrap();
        }
    }
}

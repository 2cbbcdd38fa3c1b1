//! Closed-form statistics of a fitted expansion, error metrics and output densities.

use nalgebra::DMatrix;
use rand::Rng;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;

/// Welford accumulator for mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    /// Standard error of the sample variance under a normal approximation of its
    /// sampling distribution, computed from the fourth central moment when given.
    pub fn variance_std_error(&self, fourth_central: f64) -> f64 {
        let n = self.count as f64;
        let s2 = self.variance();
        ((fourth_central - s2 * s2 * (n - 3.0) / (n - 1.0)) / n)
            .max(0.0)
            .sqrt()
    }
}

/// Truncated expansion `y(ξ) ≈ Σ c_j Ψ_j(ξ)`.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    basis: BasisSet,
    coeffs: Vec<f64>,
    // L⁻ᵀc: evaluation is one dot product with the monomial vector
    monomial: Vec<f64>,
}

impl SurrogateModel {
    pub fn new(basis: BasisSet, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        let monomial = basis.monomial_coefficients(&coeffs);
        Ok(Self {
            basis,
            coeffs,
            monomial,
        })
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `c · Ψ(ξ)`.
    pub fn evaluate(&self, xi: &[f64]) -> f64 {
        let z = self.basis.map().apply(xi);
        let b = self.basis.order().monomial_vector(&z);
        self.monomial.iter().zip(&b).map(|(g, m)| g * m).sum()
    }

    /// Evaluation with caller-provided scratch buffers of length `d` and `N`.
    pub fn evaluate_with(&self, xi: &[f64], z: &mut [f64], b: &mut [f64]) -> f64 {
        self.basis.map().apply_into(xi, z);
        self.basis.order().monomial_vector_into(z, b);
        self.monomial.iter().zip(b.iter()).map(|(g, m)| g * m).sum()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.coeffs)
    }

    pub fn variance(&self) -> f64 {
        variance(&self.coeffs)
    }
}

/// `E[y] = c_0` (since `Ψ_0 ≡ 1` and the basis is orthonormal).
pub fn mean(coeffs: &[f64]) -> f64 {
    coeffs[0]
}

/// `var[y] = Σ_{j≥1} c_j²`.
pub fn variance(coeffs: &[f64]) -> f64 {
    coeffs[1..].iter().map(|c| c * c).sum()
}

/// `ε = ‖Φc − y‖₂ / ‖y‖₂`.
pub fn relative_error(phi: &DMatrix<f64>, coeffs: &[f64], y: &[f64]) -> Result<f64> {
    if phi.ncols() != coeffs.len() || phi.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: phi.ncols(),
            got: coeffs.len(),
        });
    }
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ny == 0.0 {
        return Err(Error::InvalidArgument(
            "relative error of a zero output vector".into(),
        ));
    }
    let mut res = 0.0;
    for i in 0..phi.nrows() {
        let mut acc = -y[i];
        for (j, c) in coeffs.iter().enumerate() {
            if *c != 0.0 {
                acc += phi[(i, j)] * c;
            }
        }
        res += acc * acc;
    }
    Ok(res.sqrt() / ny)
}

/// `‖ŷ − y‖₂ / ‖y‖₂` for precomputed predictions.
pub fn relative_error_of(pred: &[f64], y: &[f64]) -> Result<f64> {
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ny == 0.0 {
        return Err(Error::InvalidArgument(
            "relative error of a zero output vector".into(),
        ));
    }
    let num = pred
        .iter()
        .zip(y)
        .map(|(p, v)| (p - v) * (p - v))
        .sum::<f64>()
        .sqrt();
    Ok(num / ny)
}

/// Equal-width histogram over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        assert!(bins >= 1);
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let k = if width > 0.0 {
                (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize
            } else {
                0
            };
            counts[k] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.bin_width()
    }

    /// Normalized density value of each bin.
    pub fn density(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        let w = self.bin_width();
        self.counts
            .iter()
            .map(|&c| c as f64 / (total as f64 * w))
            .collect()
    }
}

/// Histogram plus Gaussian-kernel density of a scalar output.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub samples: usize,
    pub seed: u64,
    pub histogram: Histogram,
    /// Grid and smoothed density; `None` when all values coincide.
    pub kde: Option<Kde>,
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Number of points of the smoothed density grid.
pub const KDE_POINTS: usize = 512;

/// Silverman's rule `0.9 · min(σ, IQR/1.34) · n^{-1/5}`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mut s = RunningStats::default();
    values.iter().for_each(|&v| s.push(v));
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        sorted[i] * (1.0 - f) + sorted[(i + 1).min(sorted.len() - 1)] * f
    };
    let iqr = q(0.75) - q(0.25);
    let sd = s.variance().sqrt();
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian KDE of `values` on `points` equally spaced grid points over `[lo, hi]`.
///
/// Values are first linearly binned onto the grid, then convolved with the kernel
/// truncated at five bandwidths.
pub fn kde_on_grid(values: &[f64], bandwidth: f64, lo: f64, hi: f64, points: usize) -> Kde {
    assert!(points >= 2 && hi > lo && bandwidth > 0.0);
    let delta = (hi - lo) / (points - 1) as f64;
    let mut mass = vec![0.0; points];
    for &v in values {
        let pos = (v - lo) / delta;
        if pos < 0.0 || pos > (points - 1) as f64 {
            continue;
        }
        let i = (pos.floor() as usize).min(points - 2);
        let f = pos - i as f64;
        mass[i] += 1.0 - f;
        mass[i + 1] += f;
    }
    let n = values.len() as f64;
    let reach = ((5.0 * bandwidth / delta).ceil() as usize).min(points - 1);
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let kernel: Vec<f64> = (0..=reach)
        .map(|k| {
            let u = k as f64 * delta / bandwidth;
            (-0.5 * u * u).exp() * norm
        })
        .collect();
    let mut density = vec![0.0; points];
    for (i, &m) in mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let lo_j = i.saturating_sub(reach);
        let hi_j = (i + reach).min(points - 1);
        for (j, d) in density.iter_mut().enumerate().take(hi_j + 1).skip(lo_j) {
            *d += m * kernel[i.abs_diff(j)];
        }
    }
    Kde {
        bandwidth,
        grid: (0..points).map(|i| lo + i as f64 * delta).collect(),
        density,
    }
}

/// Histogram and KDE of a sample of scalar outputs.
pub fn density_of_values(values: &[f64], bins: usize) -> (Histogram, Option<Kde>) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return (Histogram::new(values, lo, lo, 1), None);
    }
    let hist = Histogram::new(values, lo, hi, bins);
    let h = silverman_bandwidth(values);
    let kde = (h > 0.0).then(|| kde_on_grid(values, h, lo - 3.0 * h, hi + 3.0 * h, KDE_POINTS));
    (hist, kde)
}

/// Output density of the surrogate under the mixture, from `n` seeded draws.
pub fn density<R: Rng + ?Sized>(
    model: &SurrogateModel,
    gmm: &GaussianMixture,
    n: usize,
    rng: &mut R,
    seed: u64,
    bins: usize,
    keep_values: bool,
) -> DensityEstimate {
    let values = sample_surrogate(model, gmm, n, rng);
    let (histogram, kde) = density_of_values(&values, bins);
    DensityEstimate {
        samples: n,
        seed,
        histogram,
        kde,
        values: keep_values.then_some(values),
    }
}

/// Surrogate evaluated on `n` mixture draws.
pub fn sample_surrogate<R: Rng + ?Sized>(
    model: &SurrogateModel,
    gmm: &GaussianMixture,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut z = vec![0.0; gmm.dim()];
    let mut b = vec![0.0; model.basis().len()];
    let mut values = Vec::with_capacity(n);
    gmm.for_each_sample(rng, n, |x| {
        values.push(model.evaluate_with(x, &mut z, &mut b))
    });
    values
}

/// `∫|p − q|` of two densities tabulated on the same grid (trapezoid rule).
pub fn l1_distance(grid: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
    trapezoid(grid, &diff)
}

pub fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2)
        .zip(f.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Positions of local maxima whose height is at least `rel_height · max` and which
/// rise by at least that much above the lowest point separating them from the
/// previous accepted peak.
pub fn find_modes(density: &[f64], rel_height: f64) -> Vec<usize> {
    let top = density.iter().cloned().fold(0.0, f64::max);
    let floor = rel_height * top;
    let mut peaks: Vec<usize> = Vec::new();
    let mut valley = f64::INFINITY;
    for i in 1..density.len().saturating_sub(1) {
        valley = valley.min(density[i]);
        let is_max = density[i] >= density[i - 1] && density[i] > density[i + 1];
        if !is_max || density[i] < floor {
            continue;
        }
        match peaks.last() {
            None => {
                peaks.push(i);
                valley = density[i];
            }
            Some(&prev) => {
                let dip = density[i].min(density[prev]) - valley;
                if dip >= floor {
                    peaks.push(i);
                    valley = density[i];
                } else if density[i] > density[prev] {
                    *peaks.last_mut().expect("nonempty") = i;
                    valley = density[i];
                }
            }
        }
    }
    peaks
}

/// Number of leading significant digits on which `estimate` agrees with `reference`:
/// the largest `k` with `|estimate − reference| ≤ ½·10^{e−k+1}`, `e = ⌊log₁₀|reference|⌋`.
pub fn matching_digits(estimate: f64, reference: f64) -> usize {
    if reference == 0.0 || !estimate.is_finite() {
        return 0;
    }
    let e = reference.abs().log10().floor() as i32;
    let err = (estimate - reference).abs();
    let mut k = 0;
    while k < 16 && err <= 0.5 * 10f64.powi(e - k as i32) {
        k += 1;
    }
    k
}

/// Formats `value` with `decimals` fraction digits, underlining (U+0332) the first
/// `digits` significant digits.
pub fn underline_digits(value: f64, decimals: usize, digits: usize) -> String {
    let text = format!("{value:.decimals$}");
    let mut out = String::new();
    let mut seen = 0;
    let mut started = false;
    for ch in text.chars() {
        out.push(ch);
        if ch.is_ascii_digit() {
            if ch != '0' {
                started = true;
            }
            if started {
                seen += 1;
                if seen <= digits {
                    out.push('\u{332}');
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GaussianComponent;
    use crate::rng::{stream, Stream};
    use nalgebra::DVector;

    #[test]
    fn closed_form_examples() {
        let c = [7.0, 0.0, 0.0];
        assert_eq!(mean(&c), 7.0);
        assert_eq!(variance(&c), 0.0);
        assert_eq!(variance(&[0.0, 3.0, 4.0, 0.0]), 25.0);
    }

    #[test]
    fn relative_error_examples() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, -1.0, 2.0, 0.3]);
        let c = [1.5, -0.25];
        let y: Vec<f64> = (0..3)
            .map(|i| phi[(i, 0)] * c[0] + phi[(i, 1)] * c[1])
            .collect();
        assert!(relative_error(&phi, &c, &y).unwrap() < 1e-15);
        assert_eq!(relative_error(&phi, &[0.0, 0.0], &y).unwrap(), 1.0);
        assert!(relative_error(&phi, &c, &[0.0; 3]).is_err());

        // y + δ with ‖δ‖ = 0.01‖y‖, c fitted exactly to y
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dir = [0.6, 0.0, 0.8];
        let y2: Vec<f64> = y.iter().zip(dir).map(|(v, d)| v + 0.01 * ny * d).collect();
        let eps = relative_error(&phi, &c, &y2).unwrap();
        let ny2 = y2.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((eps - 0.01 * ny / ny2).abs() < 1e-14);
    }

    #[test]
    fn relative_error_scale_invariant() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (c, y) = ([0.3, 0.1], [1.0, 1.5]);
        let e1 = relative_error(&phi, &c, &y).unwrap();
        let e2 =
            relative_error(&phi, &[c[0] * 1e3, c[1] * 1e3], &[y[0] * 1e3, y[1] * 1e3]).unwrap();
        assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn constant_output_is_single_bin() {
        let (h, kde) = density_of_values(&[2.5; 100], 50);
        assert_eq!(h.counts, vec![100]);
        assert!(kde.is_none());
    }

    #[test]
    fn identity_model_density_is_standard_normal() {
        let g = GaussianMixture::single(
            GaussianComponent::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap(),
        );
        let basis = BasisSet::build(&g, 1).unwrap();
        let model = SurrogateModel::new(basis, vec![0.0, 1.0]).unwrap();
        let mut rng = stream(9, Stream::Surrogate);
        let est = density(&model, &g, 1_000_000, &mut rng, 9, 100, true);
        let mut v = est.values.unwrap();
        v.sort_by(f64::total_cmp);
        // Kolmogorov–Smirnov distance against Φ
        let n = v.len() as f64;
        let mut ks: f64 = 0.0;
        for (i, x) in v.iter().enumerate().step_by(97) {
            let cdf = 0.5 * (1.0 + erf(x / 2f64.sqrt()));
            ks = ks
                .max((cdf - i as f64 / n).abs())
                .max((cdf - (i + 1) as f64 / n).abs());
        }
        assert!(ks < 0.01, "KS {ks}");
        let kde = est.kde.unwrap();
        let mass = trapezoid(&kde.grid, &kde.density);
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }

    fn erf(x: f64) -> f64 {
        // Abramowitz–Stegun 7.1.26, |error| < 1.5e-7
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        if x >= 0.0 {
            y
        } else {
            -y
        }
    }

    #[test]
    fn modes_of_bimodal_curve() {
        let grid: Vec<f64> = (0..400).map(|i| -6.0 + 12.0 * i as f64 / 399.0).collect();
        let f: Vec<f64> = grid
            .iter()
            .map(|x| (-(x + 2.0f64).powi(2)).exp() + 0.7 * (-(x - 2.0f64).powi(2)).exp())
            .collect();
        assert_eq!(find_modes(&f, 0.05).len(), 2);
        let g: Vec<f64> = grid.iter().map(|x| (-x * x).exp()).collect();
        assert_eq!(find_modes(&g, 0.05).len(), 1);
    }

    #[test]
    fn digit_matching() {
        assert_eq!(matching_digits(21.4717, 21.4717), 16);
        assert_eq!(matching_digits(21.47, 21.4717), 4);
        assert_eq!(matching_digits(21.5, 21.4717), 3);
        assert_eq!(matching_digits(22.9, 21.4717), 1);
        assert_eq!(matching_digits(40.0, 21.4717), 0);
        assert_eq!(underline_digits(21.47, 2, 2), "2\u{332}1\u{332}.47");
    }

    #[test]
    fn running_stats() {
        let mut s = RunningStats::default();
        for v in [1.0, 2.0, 3.0, 4.0] {
            s.push(v);
        }
        assert_eq!(s.mean(), 2.5);
        assert!((s.variance() - 5.0 / 3.0).abs() < 1e-15);
    }
}

use gmpce::basis::BasisSet;
use gmpce::bench::model_by_name;
use gmpce::indexing::{binomial, GradedLexOrder};
use gmpce::linalg::select_columns;
use gmpce::rng::{stream, Stream};
use gmpce::solver::{
    adaptive_fit, cosamp, d_optimal_next, CandidatePool, SolverConfig, SupportSystem, TableSource,
};
use gmpce::stats::relative_error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, Stream::Oracle);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn graded_lex_order_is_sorted_and_indexed(d in 1usize..5, p in 0usize..5) {
        let order = GradedLexOrder::enumerate(d, p);
        prop_assert_eq!(order.len(), binomial(d + p, p));
        for (j, a) in order.indices().iter().enumerate() {
            prop_assert_eq!(order.position(a), Some(j));
        }
        for w in order.indices().windows(2) {
            prop_assert!(w[0].degree() <= w[1].degree());
        }
    }

    #[test]
    fn relative_error_is_scale_invariant(seed in 0u64..1000, k in 0.01f64..100.0) {
        let phi = gaussian(20, 5, seed);
        let c: Vec<f64> = gaussian(5, 1, seed + 1).iter().cloned().collect();
        let y: Vec<f64> = gaussian(20, 1, seed + 2).iter().cloned().collect();
        let base = relative_error(&phi, &c, &y).unwrap();
        let kc: Vec<f64> = c.iter().map(|v| k * v).collect();
        let ky: Vec<f64> = y.iter().map(|v| k * v).collect();
        let scaled = relative_error(&phi, &kc, &ky).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn cosamp_support_is_bounded_and_least_squares_optimal(seed in 0u64..1000, s in 1usize..8) {
        let phi = gaussian(40, 25, seed);
        let y: Vec<f64> = gaussian(40, 1, seed + 7).iter().cloned().collect();
        let fit = cosamp(&phi, &y, s, 1e-10, 100);
        prop_assert!(fit.support.len() <= s);
        for (j, c) in fit.coeffs.iter().enumerate() {
            if !fit.support.contains(&j) {
                prop_assert_eq!(*c, 0.0);
            }
        }
        let c = DVector::from_vec(fit.coeffs.clone());
        let residual = DVector::from_vec(y.clone()) - &phi * &c;
        let cols = select_columns(&phi, &fit.support);
        let normal = cols.transpose() * &residual;
        let scale = cols.norm() * DVector::from_vec(y).norm();
        prop_assert!(normal.amax() <= 1e-8 * scale);
    }

    #[test]
    fn sherman_morrison_matches_fresh_inverse(seed in 0u64..1000, s in 2usize..8, updates in 1usize..20) {
        let rows = gaussian(2 * s, s, seed);
        let mut sys = SupportSystem::new((0..s).collect(), rows_of(&rows), vec![1.0; 2 * s]).unwrap();
        let extra = gaussian(updates, s, seed + 1);
        for (i, x) in rows_of(&extra).into_iter().enumerate() {
            sys.rank_one_update(x, i as f64).unwrap();
        }
        let fresh = sys.gram().clone().try_inverse().unwrap();
        prop_assert!((sys.graminv() - &fresh).amax() <= 1e-10 * fresh.amax());
    }

    #[test]
    fn selected_candidate_has_maximal_information(seed in 0u64..1000, s in 1usize..5, pool in 6usize..30) {
        let phi = gaussian(pool, s + 3, seed);
        let support: Vec<usize> = (0..s).collect();
        let seeded: Vec<usize> = (0..s + 1).collect();
        let restrict = |i: usize| support.iter().map(|&j| phi[(i, j)]).collect::<Vec<f64>>();
        let sys = SupportSystem::new(
            support.clone(),
            seeded.iter().map(|&i| restrict(i)).collect(),
            vec![0.0; seeded.len()],
        )
        .unwrap();
        let used: Vec<bool> = (0..pool).map(|i| i <= s).collect();
        let (best, score) = d_optimal_next(&sys, &phi, &used).unwrap();
        prop_assert!(!used[best]);
        let g = sys.graminv();
        for i in (0..pool).filter(|&i| !used[i]) {
            let x = DVector::from_vec(restrict(i));
            let other = (x.transpose() * g * &x)[(0, 0)];
            prop_assert!(score >= other - 1e-12 * other.abs().max(1.0));
            prop_assert!(other >= 0.0);
        }
    }
}

#[test]
fn adaptive_fit_is_deterministic() {
    let model = model_by_name("tiny3").unwrap();
    let basis = BasisSet::build(model.mixture(), 3).unwrap();
    let pool =
        CandidatePool::sample(&basis, model.mixture(), 300, &mut stream(4, Stream::Pool)).unwrap();
    let y = model.evaluate_rows(pool.points());
    let cfg = SolverConfig {
        s_max: 10,
        max_samples: Some(80),
        ..SolverConfig::default()
    };
    let a = adaptive_fit(&pool, &mut TableSource::new(&y), &cfg).unwrap();
    let b = adaptive_fit(&pool, &mut TableSource::new(&y), &cfg).unwrap();
    assert_eq!(a.selected, b.selected);
    assert_eq!(a.coeffs, b.coeffs);
    assert_eq!(a.support, b.support);
    assert_eq!(a.termination, b.termination);
}

#[test]
fn basis_columns_are_nearly_orthogonal() {
    let model = model_by_name("tiny3").unwrap();
    let basis = BasisSet::build(model.mixture(), 3).unwrap();
    let mut rng = stream(5, Stream::Oracle);
    let points = model.mixture().sample(&mut rng, 500);
    let mut phi = basis.evaluate_many(&points);
    for mut col in phi.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    let gram = phi.transpose() * &phi;
    let n = gram.nrows();
    let mut off: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in 0..i {
            off.push(gram[(i, j)].abs());
        }
    }
    off.sort_by(f64::total_cmp);
    let median = off[off.len() / 2];
    assert!(median <= 0.1, "median |inner product| {median}");
}

#[test]
fn cholesky_factor_is_lower_triangular() {
    let model = model_by_name("tiny3").unwrap();
    let basis = BasisSet::build(model.mixture(), 3).unwrap();
    let l = basis.chol();
    for i in 0..l.nrows() {
        for j in i + 1..l.ncols() {
            assert_eq!(l[(i, j)], 0.0);
        }
    }
}

//! Results checked against independent computations written out here.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vdmfpca::dataset::Series;
use vdmfpca::linalg::{psd_repair, sorted_symmetric_eigen, trapezoid_weights, uniform_grid};
use vdmfpca::metrics::{armse_x, summarize};
use vdmfpca::mfpca::{
    multivariate_eigen_at, score_domain_association, MvComponents, ScoreCovariance,
};
use vdmfpca::pspline::{
    bspline_design, difference_penalty, BasisSpec, NormalEquations, PenaltySpec,
};
use vdmfpca::simgen::{
    sample_domains, type2_weight, DomainDistribution, DOMAIN_MAX, DOMAIN_MIN, GEOMETRIC_P,
};
use vdmfpca::ufpca::{eigen_from_kernel, project_scores, ComponentRule};

fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return if knots[i] <= x && x < knots[i + 1] {
            1.0
        } else {
            0.0
        };
    }
    let mut v = 0.0;
    let left = knots[i + p] - knots[i];
    if left > 0.0 {
        v += (x - knots[i]) / left * cox_de_boor(knots, i, p - 1, x);
    }
    let right = knots[i + p + 1] - knots[i + 1];
    if right > 0.0 {
        v += (knots[i + p + 1] - x) / right * cox_de_boor(knots, i + 1, p - 1, x);
    }
    v
}

#[test]
fn cubic_basis_matches_recursive_definition() {
    let spec = BasisSpec::new(3, 8, 0.0, 1.0).unwrap();
    // 5 interior segments on [0, 1], knots extended by 3 on each side.
    let knots: Vec<f64> = (0..12).map(|i| (i as f64 - 3.0) / 5.0).collect();
    let row = bspline_design(&spec, &[0.37]).unwrap();
    for i in 0..8 {
        let oracle = cox_de_boor(&knots, i, 3, 0.37);
        assert!(
            (row[(0, i)] - oracle).abs() < 1e-12,
            "basis {i}: {} vs {oracle}",
            row[(0, i)]
        );
    }
}

#[test]
fn gcv_choice_matches_brute_force_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 120;
    let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|t| (2.0 * std::f64::consts::PI * t).sin() + 0.3 * (rng.random::<f64>() - 0.5))
        .collect();
    let spec = BasisSpec::spanning(0.0, 1.0, 3, 15).unwrap();
    let penalty = PenaltySpec::default();
    let mut normal = NormalEquations::new(vec![spec.clone()]).unwrap();
    for (t, v) in x.iter().zip(&y) {
        normal.add(&[*t], *v, 1.0).unwrap();
    }
    let fitted = normal.fit(&penalty).unwrap();

    // Refit from scratch at every grid value through the explicit hat matrix.
    let b = bspline_design(&spec, &x).unwrap();
    let p = difference_penalty(15, 2).unwrap();
    let yv = nalgebra::DVector::from_column_slice(&y);
    let btb = b.transpose() * &b;
    let mut best = (f64::INFINITY, 0.0);
    for &lambda in &penalty.lambda_grid {
        let inv = (&btb + &p * lambda).try_inverse().unwrap();
        let hat = &b * inv * b.transpose();
        let resid = &yv - &hat * &yv;
        let edf = hat.trace();
        let gcv = n as f64 * resid.norm_squared() / (n as f64 - edf).powi(2);
        if gcv < best.0 {
            best = (gcv, lambda);
        }
    }
    assert_eq!(fitted.selected_lambda[0], best.1);
}

#[test]
fn two_by_two_analytic_eigenproblem() {
    let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let e = sorted_symmetric_eigen(&m);
    assert!((e.values[0] - 3.0).abs() < 1e-12 && (e.values[1] - 1.0).abs() < 1e-12);
    let c = e.vectors.column(0);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!((c[0].abs() - s).abs() < 1e-12 && (c[1].abs() - s).abs() < 1e-12);
    assert!(c[0] * c[1] > 0.0);

    let cov = ScoreCovariance::Fixed {
        domain_length: 5.0,
        matrix: m,
    };
    let mv = multivariate_eigen_at(&cov, 5.0, MvComponents::Fixed(2)).unwrap();
    assert!((mv.all_eigenvalues[0] - 3.0).abs() < 1e-12);
    assert!((mv.shares()[0] - 0.75).abs() < 1e-12);
}

/// Cyclic Jacobi rotations; returns eigenvalues and eigenvectors as columns.
fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut rot = DMatrix::<f64>::identity(n, n);
                rot[(p, p)] = c;
                rot[(q, q)] = c;
                rot[(p, q)] = s;
                rot[(q, p)] = -s;
                a = rot.transpose() * &a * &rot;
                v = &v * &rot;
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

#[test]
fn psd_repair_matches_independent_spectral_projection() {
    let m = DMatrix::from_row_slice(
        4,
        4,
        &[
            2.0, 0.5, -1.2, 0.3, //
            0.5, -1.0, 0.4, 0.8, //
            -1.2, 0.4, 0.5, -0.6, //
            0.3, 0.8, -0.6, 1.5,
        ],
    );
    let (values, vectors) = jacobi_eigen(&m);
    assert!(values.iter().any(|v| *v < 0.0));
    let mut oracle = DMatrix::zeros(4, 4);
    for (k, &nu) in values.iter().enumerate() {
        if nu > 0.0 {
            let c = vectors.column(k);
            oracle += c * c.transpose() * nu;
        }
    }
    let repaired = psd_repair(&m);
    assert!((repaired - oracle).amax() < 1e-10);
}

#[test]
fn spearman_matches_rank_difference_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
    // Rank by counting smaller elements (no ties in continuous draws).
    let rank = |v: &[f64], i: usize| v.iter().filter(|w| **w < v[i]).count() as f64 + 1.0;
    let d2: f64 = (0..10).map(|i| (rank(&x, i) - rank(&y, i)).powi(2)).sum();
    let oracle = 1.0 - 6.0 * d2 / (10.0 * 99.0);
    let s = score_domain_association(&x, &y).unwrap();
    assert!((s.rho - oracle).abs() < 1e-12);
}

#[test]
fn armse_matches_double_loop() {
    let truth = vec![
        vec![1.0, 2.0, 3.0],
        vec![0.5, -0.5],
        vec![2.0, 2.0, 2.0, 2.0],
    ];
    let est = vec![
        vec![1.1, 1.8, 3.0],
        vec![0.0, 0.0],
        vec![2.5, 1.5, 2.0, 2.2],
    ];
    let mut total = 0.0;
    for i in 0..3 {
        let mut ss = 0.0;
        for j in 0..truth[i].len() {
            ss += (truth[i][j] - est[i][j]) * (truth[i][j] - est[i][j]);
        }
        total += (ss / truth[i].len() as f64).sqrt();
    }
    assert!((armse_x(&truth, &est).unwrap() - total / 3.0).abs() < 1e-15);
}

#[test]
fn summary_matches_definitional_formulas() {
    let v = [0.31, 0.27, 0.35, 0.29, 0.40];
    let mean = (0.31 + 0.27 + 0.35 + 0.29 + 0.40) / 5.0;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
    let s = summarize(&v).unwrap();
    assert!((s.mean - mean).abs() < 1e-15);
    assert!((s.sd.unwrap() - var.sqrt()).abs() < 1e-15);
}

#[test]
fn clamped_geometric_mean_matches_pmf_sum() {
    let p = GEOMETRIC_P;
    let cap = DOMAIN_MAX - DOMAIN_MIN;
    let mut mean = 0.0;
    for k in 0..cap {
        mean += (DOMAIN_MIN + k) as f64 * p * (1.0 - p).powi(k as i32);
    }
    mean += DOMAIN_MAX as f64 * (1.0 - p).powi(cap as i32);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = sample_domains(DomainDistribution::BoundedGeometric, 100_000, &mut rng);
    let empirical = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
    assert!(
        (empirical - mean).abs() < 0.5,
        "empirical {empirical}, analytic {mean}"
    );
}

/// `erf` by its Maclaurin series, accurate to ~1e-15 for |x| ≤ 3.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

#[test]
fn blend_weight_matches_erf() {
    assert_eq!(type2_weight(30.0), 0.5);
    let oracle = 0.5 * (1.0 + erf_series(2.0 / std::f64::consts::SQRT_2));
    assert!((type2_weight(50.0) - oracle).abs() < 1e-4);
    assert!((oracle - 0.97725).abs() < 1e-5);
}

#[test]
fn scores_match_fine_riemann_sum() {
    // Period T sampled at unit spacing; trapezoid error scales with (2π/T)².
    let big_t = 100.0;
    let grid = uniform_grid(big_t, 1.0).unwrap();
    let f1 = |t: f64| (2.0 * std::f64::consts::PI * t / big_t).sin() * (2.0 / big_t).sqrt();
    let f2 = |t: f64| (2.0 * std::f64::consts::PI * t / big_t).cos() * (2.0 / big_t).sqrt();
    let kernel = DMatrix::from_fn(grid.len(), grid.len(), |i, j| {
        f1(grid[i]) * f1(grid[j]) + 0.5 * f2(grid[i]) * f2(grid[j])
    });
    let eigen = eigen_from_kernel(&kernel, grid.clone(), big_t, ComponentRule::Fixed(2)).unwrap();

    // Noiseless residual observed at 1..=T.
    let times: Vec<f64> = (1..=100).map(f64::from).collect();
    let values: Vec<f64> = times.iter().map(|&t| 0.8 * f1(t) - 0.3 * f2(t)).collect();
    let residual = Series::new(times.clone(), values.clone());
    let scores = project_scores(&residual, &eigen);

    let lin = |xs: &[f64], ys: &[f64], x: f64| {
        if x <= xs[0] {
            return ys[0];
        }
        let i = xs.partition_point(|v| *v <= x).min(xs.len() - 1);
        let (x0, x1) = (xs[i - 1], xs[i]);
        ys[i - 1] + (x - x0) / (x1 - x0) * (ys[i] - ys[i - 1])
    };
    let h = 0.1;
    let n = (big_t / h) as usize;
    for k in 0..2 {
        let psi = eigen.function(k);
        let riemann: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                lin(&times, &values, t) * lin(&grid, &psi, t) * h
            })
            .sum();
        assert!(
            (scores[k] - riemann).abs() < 1e-3,
            "component {k}: {} vs {riemann}",
            scores[k]
        );
    }
    let w = trapezoid_weights(&grid);
    assert!((w.iter().sum::<f64>() - big_t).abs() < 1e-12);
}

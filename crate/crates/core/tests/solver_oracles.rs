//! Cross-checks of the production solvers against slow, independent oracles
//! from the testkit crate: closed-form soft-thresholding, normal equations,
//! a simplex LP for check-loss regression, and a dense Newton logistic MLE.

use dmlcqr::solvers::{
    lasso_logit, lasso_ls, lasso_qr, penalty_logit_level, penalty_ls_level, PenaltyRule,
};
use dmlcqr_testkit as testkit;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// Random matrix with columns orthonormalized in the E_n inner product
/// (1/n) sum_i x_ij x_ik = delta_jk.
fn orthonormal_design(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let mut x = Array2::zeros((n, p));
    for j in 0..p {
        let mut col: Vec<f64> = (0..n).map(|_| standard_normal(&mut r)).collect();
        for k in 0..j {
            let dot: f64 = (0..n).map(|i| col[i] * x[[i, k]]).sum::<f64>() / n as f64;
            for i in 0..n {
                col[i] -= dot * x[[i, k]];
            }
        }
        let norm = ((0..n).map(|i| col[i] * col[i]).sum::<f64>() / n as f64).sqrt();
        assert!(norm > 1e-8, "degenerate column in test fixture");
        for i in 0..n {
            x[[i, j]] = col[i] / norm;
        }
    }
    x
}

#[test]
fn ls_matches_soft_threshold_on_orthonormal_design() {
    let (n, p) = (64, 5);
    let x = orthonormal_design(n, p, 11);
    let mut r = rng(12);
    let beta_true = [1.5, -0.8, 0.0, 0.3, 0.05];
    let y: Vec<f64> = (0..n)
        .map(|i| {
            (0..p).map(|j| x[[i, j]] * beta_true[j]).sum::<f64>() + 0.4 * standard_normal(&mut r)
        })
        .collect();
    let weights = vec![1.0; n];
    let loadings = [1.0, 2.0, 0.5, 1.0, 3.0];
    for lambda in [0.0, 5.0, 20.0, 60.0] {
        let fit = lasso_ls(x.view(), &y, &weights, lambda, &loadings).unwrap();
        for j in 0..p {
            let score: f64 = (0..n).map(|i| x[[i, j]] * y[i]).sum::<f64>() / n as f64;
            let expected =
                testkit::soft_threshold(score, lambda * loadings[j] / (2.0 * n as f64));
            assert!(
                (fit.coefficients[j] - expected).abs() < 1e-6,
                "lambda={lambda} j={j}: {} vs {}",
                fit.coefficients[j],
                expected
            );
        }
    }
}

#[test]
fn ls_unpenalized_matches_weighted_normal_equations() {
    let (n, p) = (50, 4);
    let mut r = rng(21);
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        x[[i, 0]] = 1.0;
        for j in 1..p {
            x[[i, j]] = standard_normal(&mut r);
        }
    }
    let y: Vec<f64> = (0..n)
        .map(|i| 0.7 + 1.3 * x[[i, 1]] - 0.5 * x[[i, 2]] + 0.2 * standard_normal(&mut r))
        .collect();
    let weights: Vec<f64> = (0..n).map(|i| 0.5 + (i % 5) as f64 * 0.3).collect();
    let fit = lasso_ls(x.view(), &y, &weights, 0.0, &vec![0.0; p]).unwrap();
    let oracle = testkit::wls(x.view(), &y, &weights).unwrap();
    for j in 0..p {
        assert!(
            (fit.coefficients[j] - oracle[j]).abs() < 1e-8,
            "j={j}: {} vs {}",
            fit.coefficients[j],
            oracle[j]
        );
    }
}

#[test]
fn qr_matches_lp_oracle_unpenalized() {
    // Mixed per-observation levels and a couple of fixed-level designs.
    let cases: [(usize, usize, u64, bool); 3] = [(60, 4, 31, true), (80, 6, 32, false), (40, 3, 33, true)];
    for (n, p, seed, mixed) in cases {
        let mut r = rng(seed);
        let mut x = Array2::zeros((n, p));
        for i in 0..n {
            x[[i, 0]] = 1.0;
            for j in 1..p {
                x[[i, j]] = standard_normal(&mut r);
            }
        }
        let y: Vec<f64> = (0..n)
            .map(|i| x[[i, 1]] - 0.6 * x[[i, p - 1]] + standard_normal(&mut r))
            .collect();
        let keep = vec![1u8; n];
        let levels: Vec<f64> = if mixed {
            (0..n).map(|i| 0.2 + 0.6 * ((i as f64 * 0.37).sin().abs())).collect()
        } else {
            vec![0.75; n]
        };
        let loadings = vec![0.0; p];
        let fit = lasso_qr(x.view(), &y, &keep, &levels, 0.0, &loadings).unwrap();
        let lp = testkit::qr_lp(x.view(), &y, &keep, &levels, 0.0, &loadings).unwrap();
        let obj_fit =
            testkit::qr_objective(x.view(), &y, &keep, &levels, 0.0, &loadings, &fit.coefficients);
        let obj_lp = testkit::qr_objective(x.view(), &y, &keep, &levels, 0.0, &loadings, &lp);
        assert!(
            obj_fit - obj_lp < 1e-6,
            "n={n} p={p}: solver {obj_fit} vs LP {obj_lp}"
        );
        // The LP is exact, so the solver can never be better by more than
        // certification slack either.
        assert!(obj_lp - obj_fit < 1e-6, "LP worse than solver: {obj_lp} vs {obj_fit}");
    }
}

#[test]
fn qr_matches_lp_oracle_penalized() {
    let (n, p) = (60, 5);
    let mut r = rng(41);
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        x[[i, 0]] = 1.0;
        for j in 1..p {
            x[[i, j]] = standard_normal(&mut r);
        }
    }
    let y: Vec<f64> = (0..n)
        .map(|i| 0.5 + 0.9 * x[[i, 2]] + standard_normal(&mut r))
        .collect();
    let keep: Vec<u8> = (0..n).map(|i| u8::from(i % 7 != 0)).collect();
    let levels = vec![0.5; n];
    // Intercept unpenalized, heterogeneous loadings elsewhere.
    let loadings = [0.0, 1.0, 0.4, 2.0, 1.5];
    for lambda in [2.0, 8.0, 25.0] {
        let fit = lasso_qr(x.view(), &y, &keep, &levels, lambda, &loadings).unwrap();
        let lp = testkit::qr_lp(x.view(), &y, &keep, &levels, lambda, &loadings).unwrap();
        let obj_fit = testkit::qr_objective(
            x.view(), &y, &keep, &levels, lambda, &loadings, &fit.coefficients,
        );
        let obj_lp = testkit::qr_objective(x.view(), &y, &keep, &levels, lambda, &loadings, &lp);
        assert!(
            (obj_fit - obj_lp).abs() < 1e-6,
            "lambda={lambda}: solver {obj_fit} vs LP {obj_lp}"
        );
    }
}

#[test]
fn qr_intercept_only_equals_type1_sample_quantile() {
    let mut r = rng(51);
    let n = 37;
    let y: Vec<f64> = (0..n).map(|_| 3.0 * standard_normal(&mut r)).collect();
    let x = Array2::from_elem((n, 1), 1.0);
    let keep = vec![1u8; n];
    for tau in [0.25, 0.5, 0.75, 0.9] {
        let levels = vec![tau; n];
        let fit = lasso_qr(x.view(), &y, &keep, &levels, 0.0, &[0.0]).unwrap();
        let q = testkit::sample_quantile_type1(&y, tau).unwrap();
        assert_eq!(fit.coefficients[0], q, "tau={tau}");
    }
}

#[test]
fn logit_unpenalized_matches_newton_mle() {
    let (n, p) = (200, 4);
    let mut r = rng(61);
    let mut x = Array2::zeros((n, p));
    for i in 0..n {
        x[[i, 0]] = 1.0;
        for j in 1..p {
            x[[i, j]] = standard_normal(&mut r);
        }
    }
    let alpha_true = [-0.3, 0.8, -1.1, 0.4];
    let t: Vec<u8> = (0..n)
        .map(|i| {
            let u: f64 = (0..p).map(|j| x[[i, j]] * alpha_true[j]).sum();
            let pr = 1.0 / (1.0 + (-u).exp());
            u8::from(r.random::<f64>() < pr)
        })
        .collect();
    let fit = lasso_logit(x.view(), &t, 0.0, &vec![0.0; p]).unwrap();
    let mle = testkit::logit_mle(x.view(), &t, 1e-12).unwrap();
    for j in 0..p {
        assert!(
            (fit.coefficients[j] - mle[j]).abs() < 1e-6,
            "j={j}: {} vs {}",
            fit.coefficients[j],
            mle[j]
        );
    }
}

#[test]
fn gaussian_penalty_levels_match_reference_values() {
    // Benchmark-scale level for the logistic stage.
    let rule = PenaltyRule { c: 1.1, gamma: 0.1 / 500f64.ln(), alpha: 0.1, ndraws: 500, seed: 0 };
    let l1 = penalty_logit_level(500, 300, &rule).unwrap();
    assert!((l1 - 130.6).abs() < 0.5, "lambda1 = {l1}");

    // Doubled-quantile level with hand-checkable constants.
    let rule = PenaltyRule { c: 1.0, gamma: 0.05, alpha: 0.1, ndraws: 500, seed: 0 };
    let l3 = penalty_ls_level(100, 1, &rule).unwrap();
    assert!((l3 - 39.19928).abs() < 1e-3, "lambda3 = {l3}");

    // Both levels grow with the column count.
    let rule = PenaltyRule::default_for(400, 0);
    let lo = penalty_logit_level(400, 10, &rule).unwrap();
    let hi = penalty_logit_level(400, 1000, &rule).unwrap();
    assert!(lo < hi);
    let lo = penalty_ls_level(400, 10, &rule).unwrap();
    let hi = penalty_ls_level(400, 1000, &rule).unwrap();
    assert!(lo < hi);
}

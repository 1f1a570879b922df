//! Weighted least-squares Lasso via cyclic coordinate descent.

use super::{kkt_violation, validate_loadings, Cols, LassoFit};
use crate::math::soft_threshold;
use crate::{Error, Result};
use ndarray::ArrayView2;

const KKT_TOL: f64 = 1e-8;
const MAX_MACRO: usize = 10_000;

/// Minimizes `mean(w_i (y_i - x_i'b)^2) + (lambda/n) * sum_j G_j |b_j|`.
/// Columns with loading 0 (by convention the intercept) are unpenalized.
pub fn lasso_ls(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    weights: &[f64],
    lambda: f64,
    loadings: &[f64],
) -> Result<LassoFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n || weights.len() != n {
        return Err(Error::Parameter(format!(
            "row mismatch: x has {n} rows, y has {}, weights has {}",
            y.len(),
            weights.len()
        )));
    }
    validate_loadings(loadings, p)?;
    if let Some(i) = weights.iter().position(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::Parameter(format!(
            "weight at index {i} must be finite and nonnegative"
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let p_free = loadings.iter().filter(|&&g| g == 0.0).count();
    let n_pos = weights.iter().filter(|&&w| w > 0.0).count();
    if n_pos < p_free {
        return Err(Error::Parameter(format!(
            "{n_pos} positive weights cannot identify {p_free} unpenalized columns"
        )));
    }

    let cols = Cols::from_view(&x);
    let nf = n as f64;
    // Curvatures a_j = (2/n) sum w x_j^2; zero-curvature coordinates stay 0.
    let a: Vec<f64> = (0..p)
        .map(|j| {
            let mut s = 0.0;
            for (xi, wi) in cols.col(j).iter().zip(weights) {
                s += wi * xi * xi;
            }
            2.0 * s / nf
        })
        .collect();
    let thresholds: Vec<f64> = loadings.iter().map(|g| lambda * g / nf).collect();

    let mut beta = vec![0.0; p];
    let mut r: Vec<f64> = y.to_vec();
    let mut active: Vec<usize> = Vec::new();
    let mut macro_iters = 0usize;

    let sweep = |beta: &mut Vec<f64>, r: &mut Vec<f64>, which: &[usize]| -> f64 {
        let mut max_change = 0.0f64;
        for &j in which {
            if a[j] <= f64::MIN_POSITIVE {
                continue;
            }
            let xj = cols.col(j);
            let mut dot = 0.0;
            for i in 0..n {
                dot += weights[i] * xj[i] * r[i];
            }
            let b = 2.0 * dot / nf + a[j] * beta[j];
            let new = if thresholds[j] == 0.0 {
                b / a[j]
            } else {
                soft_threshold(b, thresholds[j]) / a[j]
            };
            let delta = new - beta[j];
            if delta != 0.0 {
                for i in 0..n {
                    r[i] -= xj[i] * delta;
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    };

    loop {
        macro_iters += 1;
        if macro_iters > MAX_MACRO {
            return Err(Error::NonConvergence {
                context: "lasso_ls coordinate descent".into(),
                iterations: macro_iters - 1,
                last_iterate: beta,
            });
        }
        let all: Vec<usize> = (0..p).collect();
        sweep(&mut beta, &mut r, &all);
        // Refresh residuals to stop incremental drift.
        r.copy_from_slice(y);
        for j in 0..p {
            cols.axpy_col(j, -beta[j], &mut r);
        }
        active.clear();
        active.extend((0..p).filter(|&j| beta[j] != 0.0 || thresholds[j] == 0.0));
        for _ in 0..100 {
            if sweep(&mut beta, &mut r, &active) <= 1e-13 {
                break;
            }
        }
        let grad: Vec<f64> = (0..p)
            .map(|j| {
                let mut s = 0.0;
                for (i, xi) in cols.col(j).iter().enumerate() {
                    s += weights[i] * xi * r[i];
                }
                -2.0 * s / nf
            })
            .collect();
        if kkt_violation(&beta, &grad, &thresholds) <= KKT_TOL {
            break;
        }
    }

    let mut obj = 0.0;
    for i in 0..n {
        obj += weights[i] * r[i] * r[i];
    }
    obj /= nf;
    for j in 0..p {
        obj += thresholds[j] * beta[j].abs();
    }
    Ok(LassoFit::assemble(
        beta,
        lambda,
        loadings.to_vec(),
        macro_iters,
        obj,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn huge_penalty_leaves_weighted_mean_intercept() {
        let x = array![[1.0, 0.5], [1.0, -0.3], [1.0, 1.2], [1.0, 0.1]];
        let y = [2.0, 1.0, 4.0, 3.0];
        let w = [1.0, 2.0, 1.0, 2.0];
        let fit = lasso_ls(x.view(), &y, &w, 1e12, &[0.0, 1.0]).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
        let wmean = (2.0 + 2.0 + 4.0 + 6.0) / 6.0;
        assert!((fit.coefficients[0] - wmean).abs() < 1e-10);
        assert_eq!(fit.support, vec![0]);
    }

    #[test]
    fn orthonormal_design_soft_thresholds() {
        // Columns with mean square exactly 1 and zero cross-moments.
        let x = array![
            [1.0, 1.0, 1.0],
            [1.0, 1.0, -1.0],
            [1.0, -1.0, 1.0],
            [1.0, -1.0, -1.0]
        ];
        let y = [3.0, 1.0, 0.5, -0.5];
        let w = [1.0; 4];
        let lambda = 1.2;
        let loadings = [0.0, 1.0, 1.0];
        let fit = lasso_ls(x.view(), &y, &w, lambda, &loadings).unwrap();
        let n = 4.0;
        for j in 1..3 {
            let enxy = (0..4).map(|i| x[[i, j]] * y[i]).sum::<f64>() / n;
            let expect = soft_threshold(enxy, lambda / (2.0 * n));
            assert!(
                (fit.coefficients[j] - expect).abs() < 1e-9,
                "j={j}: {} vs {expect}",
                fit.coefficients[j]
            );
        }
    }

    #[test]
    fn negative_weight_rejected() {
        let x = array![[1.0], [1.0]];
        let err = lasso_ls(x.view(), &[1.0, 2.0], &[1.0, -0.1], 0.0, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn objective_no_worse_than_zero_vector() {
        let x = array![[1.0, 2.0], [1.0, -1.0], [1.0, 0.5], [1.0, 3.0]];
        let y = [1.0, -2.0, 0.3, 2.2];
        let w = [1.0, 0.5, 2.0, 1.0];
        let fit = lasso_ls(x.view(), &y, &w, 3.0, &[0.0, 1.0]).unwrap();
        let zero_obj = y
            .iter()
            .zip(&w)
            .map(|(yi, wi)| wi * yi * yi)
            .sum::<f64>()
            / 4.0;
        assert!(fit.objective <= zero_obj + 1e-9);
    }
}

//! Data-driven penalty levels and iterated penalty loadings.

use super::{lasso_logit, lasso_ls, Cols, PenaltyRule};
use crate::math::{logistic, normal_quantile, sample_quantile};
use crate::rng::stream_rng;
use crate::{Error, Result};
use ndarray::{Array2, ArrayView2};
use rand::Rng;

const STREAM_PENALTY_QR: u64 = 0x5145_5052;

/// Gaussian level for the logistic stage:
/// `lambda_1 = c * sqrt(n) * qnorm(1 - gamma / (2 (p+1) n))`.
pub fn penalty_logit_level(n: usize, p: usize, rule: &PenaltyRule) -> Result<f64> {
    rule.validate()?;
    if n < 2 || p < 1 {
        return Err(Error::Parameter(format!(
            "need n >= 2 and p >= 1, got n={n}, p={p}"
        )));
    }
    let arg = 1.0 - rule.gamma / (2.0 * (p as f64 + 1.0) * n as f64);
    let q = normal_quantile(arg)?;
    Ok(rule.c * (n as f64).sqrt() * q)
}

/// Gaussian level for the weighted least-squares stage:
/// `lambda_3 = 2 c * sqrt(n) * qnorm(1 - gamma / (2 p))`.
pub fn penalty_ls_level(n: usize, p: usize, rule: &PenaltyRule) -> Result<f64> {
    rule.validate()?;
    if n < 2 || p < 1 {
        return Err(Error::Parameter(format!(
            "need n >= 2 and p >= 1, got n={n}, p={p}"
        )));
    }
    let arg = 1.0 - rule.gamma / (2.0 * p as f64);
    let q = normal_quantile(arg)?;
    Ok(2.0 * rule.c * (n as f64).sqrt() * q)
}

/// Simulated level for the quantile-regression stage. Draws
/// `U_i ~ Uniform(0,1)` per replication, evaluates the scaled score sup-norm
/// `max_j |mean_i(keep_i (h_i - I(U_i <= h_i)) x_ij)| / G_j`, and returns
/// `c * n` times the empirical `(1-alpha)`-quantile over `ndraws`
/// replications. Deterministic given the rule's seed.
pub fn penalty_qr_level(
    x_aug: ArrayView2<'_, f64>,
    keep: &[u8],
    levels: &[f64],
    loadings: &[f64],
    rule: &PenaltyRule,
) -> Result<f64> {
    rule.validate()?;
    let (n, p) = (x_aug.nrows(), x_aug.ncols());
    if keep.len() != n || levels.len() != n {
        return Err(Error::Parameter(format!(
            "row mismatch: x has {n} rows, keep {}, levels {}",
            keep.len(),
            levels.len()
        )));
    }
    if loadings.len() != p {
        return Err(Error::Parameter(format!(
            "{} loadings for {p} columns",
            loadings.len()
        )));
    }
    if let Some(j) = loadings.iter().position(|&g| !(g > 0.0) || !g.is_finite()) {
        return Err(Error::Parameter(format!(
            "simulated rule needs strictly positive loadings; column {j} fails"
        )));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| keep[i] == 1).collect();
    if rows.is_empty() {
        return Err(Error::DegenerateData(
            "no kept observations for the simulated penalty rule".into(),
        ));
    }
    if let Some(&i) = rows.iter().find(|&&i| !(levels[i] > 0.0 && levels[i] < 1.0)) {
        return Err(Error::Parameter(format!(
            "quantile level at kept index {i} must lie in (0,1)"
        )));
    }

    let nk = rows.len();
    let mut xk = Array2::zeros((nk, p));
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..p {
            xk[[r, j]] = x_aug[[i, j]];
        }
    }
    let mut rng = stream_rng(rule.seed, STREAM_PENALTY_QR);
    let nf = n as f64;
    let mut stats = Vec::with_capacity(rule.ndraws);
    let chunk = 64usize;
    let mut scores = Array2::zeros((chunk, nk));
    let mut done = 0;
    while done < rule.ndraws {
        let m = chunk.min(rule.ndraws - done);
        for d in 0..m {
            // One pass over all n indices keeps the stream aligned with
            // observations rather than with the keep pattern.
            let mut r = 0usize;
            for i in 0..n {
                let u: f64 = rng.random();
                if keep[i] == 1 {
                    let h = levels[i];
                    scores[[d, r]] = (h - if u <= h { 1.0 } else { 0.0 }) / nf;
                    r += 1;
                }
            }
        }
        let g = scores.slice(ndarray::s![0..m, ..]).dot(&xk);
        for d in 0..m {
            let mut sup = 0.0f64;
            for j in 0..p {
                let v = g[[d, j]].abs() / loadings[j];
                if v > sup {
                    sup = v;
                }
            }
            stats.push(sup);
        }
        done += m;
    }
    let q = sample_quantile(&stats, 1.0 - rule.alpha)?;
    Ok(rule.c * nf * q)
}

/// A problem for the iterated loadings algorithm.
#[derive(Debug, Clone)]
pub enum LoadingProblem<'a> {
    Logit {
        x: ArrayView2<'a, f64>,
        t: &'a [u8],
    },
    Ls {
        x: ArrayView2<'a, f64>,
        y: &'a [f64],
        weights: &'a [f64],
    },
}

/// Startup loadings from null-model residuals:
/// `G_j^2 = mean(x_ij^2 (t_i - mean(t))^2)`. Columns listed in `unpenalized`
/// (the intercept, by convention) get loading 0.
pub fn initial_loadings_logit(x: ArrayView2<'_, f64>, t: &[u8], unpenalized: &[usize]) -> Vec<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    let tbar = t.iter().map(|&ti| f64::from(ti)).sum::<f64>() / n as f64;
    let mut out = vec![0.0; p];
    for (j, g) in out.iter_mut().enumerate() {
        if unpenalized.contains(&j) {
            continue;
        }
        let mut s = 0.0;
        for i in 0..n {
            let resid = f64::from(t[i]) - tbar;
            s += x[[i, j]] * x[[i, j]] * resid * resid;
        }
        *g = (s / n as f64).sqrt();
    }
    out
}

/// Startup loadings from weighted null-model residuals:
/// `G_j^2 = mean(w_i^2 x_ij^2 (y_i - ybar_w)^2)` with the weighted mean
/// `ybar_w`. Columns listed in `unpenalized` get loading 0.
pub fn initial_loadings_ls(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    weights: &[f64],
    unpenalized: &[usize],
) -> Vec<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    let wsum: f64 = weights.iter().sum();
    let ybar = if wsum > 0.0 {
        weights.iter().zip(y).map(|(w, yi)| w * yi).sum::<f64>() / wsum
    } else {
        0.0
    };
    let mut out = vec![0.0; p];
    for (j, g) in out.iter_mut().enumerate() {
        if unpenalized.contains(&j) {
            continue;
        }
        let mut s = 0.0;
        for i in 0..n {
            let resid = y[i] - ybar;
            s += weights[i] * weights[i] * x[[i, j]] * x[[i, j]] * resid * resid;
        }
        *g = (s / n as f64).sqrt();
    }
    out
}

/// Iterates fit-then-update `rounds` times: fit the Lasso at the current
/// loadings, then set `G_j` to the root mean square of the per-observation
/// score component for column j at the fit. Columns whose initial loading is
/// 0 stay unpenalized.
pub fn penalty_loadings(
    problem: &LoadingProblem<'_>,
    lambda: f64,
    initial: &[f64],
    rounds: usize,
) -> Result<Vec<f64>> {
    if rounds < 1 {
        return Err(Error::Parameter(format!(
            "loading iteration needs rounds >= 1, got {rounds}"
        )));
    }
    let mut loadings = initial.to_vec();
    for _ in 0..rounds {
        match problem {
            LoadingProblem::Logit { x, t } => {
                let fit = lasso_logit(x.view(), t, lambda, &loadings)?;
                let (n, p) = (x.nrows(), x.ncols());
                let cols = Cols::from_view(x);
                let mut u = vec![0.0; n];
                for j in 0..p {
                    cols.axpy_col(j, fit.coefficients[j], &mut u);
                }
                for j in 0..p {
                    if initial[j] == 0.0 {
                        continue;
                    }
                    let mut s = 0.0;
                    let xj = cols.col(j);
                    for i in 0..n {
                        let resid = f64::from(t[i]) - logistic(u[i]);
                        s += xj[i] * xj[i] * resid * resid;
                    }
                    loadings[j] = (s / n as f64).sqrt();
                }
            }
            LoadingProblem::Ls { x, y, weights } => {
                let fit = lasso_ls(x.view(), y, weights, lambda, &loadings)?;
                let (n, p) = (x.nrows(), x.ncols());
                let cols = Cols::from_view(x);
                let mut r = y.to_vec();
                for j in 0..p {
                    cols.axpy_col(j, -fit.coefficients[j], &mut r);
                }
                for j in 0..p {
                    if initial[j] == 0.0 {
                        continue;
                    }
                    let mut s = 0.0;
                    let xj = cols.col(j);
                    for i in 0..n {
                        s += weights[i] * weights[i] * xj[i] * xj[i] * r[i] * r[i];
                    }
                    loadings[j] = (s / n as f64).sqrt();
                }
            }
        }
    }
    Ok(loadings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn logit_level_formula() {
        let rule = PenaltyRule {
            c: 1.1,
            gamma: 0.05,
            alpha: 0.1,
            ndraws: 100,
            seed: 0,
        };
        let level = penalty_logit_level(100, 1, &rule).unwrap();
        let arg = 1.0 - 0.05 / (2.0 * 2.0 * 100.0);
        let expect = 1.1 * 10.0 * normal_quantile(arg).unwrap();
        assert!((level - expect).abs() < 1e-10);
    }

    #[test]
    fn logit_level_increases_in_p() {
        let rule = PenaltyRule::default_for(500, 0);
        let a = penalty_logit_level(500, 10, &rule).unwrap();
        let b = penalty_logit_level(500, 1000, &rule).unwrap();
        assert!(b > a);
    }

    #[test]
    fn paper_scale_level_lands_near_reference() {
        let rule = PenaltyRule::default_for(500, 0);
        let level = penalty_logit_level(500, 300, &rule).unwrap();
        assert!(
            (level - 130.6).abs() < 0.5,
            "lambda_1 at n=500, p=300 was {level}"
        );
    }

    #[test]
    fn ls_level_is_doubled_quantile() {
        // p = 1, gamma = 0.05 puts the quantile argument at 0.975.
        let rule = PenaltyRule {
            c: 1.1,
            gamma: 0.05,
            alpha: 0.1,
            ndraws: 100,
            seed: 0,
        };
        let level = penalty_ls_level(100, 1, &rule).unwrap();
        assert!(
            (level - 1.1 * 20.0 * 1.959963984540054).abs() < 1e-9,
            "{level}"
        );
    }

    #[test]
    fn qr_level_deterministic_and_monotone_in_c() {
        let n = 60;
        let mut x = Array2::from_elem((n, 2), 1.0);
        for i in 0..n {
            x[[i, 1]] = (i as f64 / n as f64) - 0.5;
        }
        let keep = vec![1u8; n];
        let levels = vec![0.5; n];
        let loadings = vec![1.0, 0.29];
        let mut rule = PenaltyRule::default_for(n, 99);
        rule.ndraws = 200;
        let a = penalty_qr_level(x.view(), &keep, &levels, &loadings, &rule).unwrap();
        let b = penalty_qr_level(x.view(), &keep, &levels, &loadings, &rule).unwrap();
        assert_eq!(a, b);
        rule.c = 2.2;
        let c2 = penalty_qr_level(x.view(), &keep, &levels, &loadings, &rule).unwrap();
        assert!(c2 > a);
        assert!((c2 / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn qr_level_rejects_empty_keep() {
        let x = Array2::from_elem((4, 1), 1.0);
        let rule = PenaltyRule::default_for(4, 0);
        let err =
            penalty_qr_level(x.view(), &[0, 0, 0, 0], &[0.5; 4], &[1.0], &rule).unwrap_err();
        assert!(matches!(err, Error::DegenerateData(_)));
    }

    #[test]
    fn loadings_positive_after_one_round() {
        let n = 40;
        let mut x = Array2::from_elem((n, 3), 1.0);
        for i in 0..n {
            x[[i, 1]] = ((i * 13) % 7) as f64 - 3.0;
            x[[i, 2]] = ((i * 5) % 11) as f64 / 11.0;
        }
        let t: Vec<u8> = (0..n).map(|i| u8::from((i * 7) % 3 == 0)).collect();
        let initial = initial_loadings_logit(x.view(), &t, &[0]);
        assert_eq!(initial[0], 0.0);
        assert!(initial[1..].iter().all(|&g| g > 0.0));
        let out = penalty_loadings(
            &LoadingProblem::Logit { x: x.view(), t: &t },
            5.0,
            &initial,
            1,
        )
        .unwrap();
        assert_eq!(out[0], 0.0);
        assert!(out[1..].iter().all(|&g| g > 0.0 && g.is_finite()));
    }

    #[test]
    fn ls_loadings_scale_with_y() {
        let n = 30;
        let mut x = Array2::from_elem((n, 2), 1.0);
        for i in 0..n {
            x[[i, 1]] = (i as f64) / 10.0 - 1.4;
        }
        let y: Vec<f64> = (0..n).map(|i| ((i * 3) % 13) as f64 - 6.0).collect();
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let w = vec![1.0; n];
        let a = initial_loadings_ls(x.view(), &y, &w, &[0]);
        let b = initial_loadings_ls(x.view(), &y2, &w, &[0]);
        assert!((b[1] - 2.0 * a[1]).abs() < 1e-12);
    }
}

//! Unpenalized refits on the selected (plus forced) support.

use super::{lasso_qr, logit_newton, LassoFit, NewtonMode};
use crate::math::{log1pexp, RankCholesky};
use crate::{Error, Result};
use ndarray::{Array2, ArrayView2};

const RANK_TOL: f64 = 1e-10;

/// The data of the problem a Lasso fit came from, for refitting.
#[derive(Debug, Clone)]
pub enum PostLassoProblem<'a> {
    Ls {
        x: ArrayView2<'a, f64>,
        y: &'a [f64],
        weights: &'a [f64],
    },
    Logit {
        x: ArrayView2<'a, f64>,
        t: &'a [u8],
    },
    Qr {
        x: ArrayView2<'a, f64>,
        y: &'a [f64],
        keep: &'a [u8],
        levels: &'a [f64],
    },
}

impl PostLassoProblem<'_> {
    fn design(&self) -> ArrayView2<'_, f64> {
        match self {
            PostLassoProblem::Ls { x, .. }
            | PostLassoProblem::Logit { x, .. }
            | PostLassoProblem::Qr { x, .. } => x.view(),
        }
    }
}

/// Re-solves the unpenalized problem on `support(fit) ∪ forced`. Collinear
/// columns within that set are dropped (earliest kept) and reported in the
/// second return value; coefficients outside the set are exactly 0.
pub fn post_lasso(
    fit: &LassoFit,
    problem: &PostLassoProblem<'_>,
    forced: &[usize],
) -> Result<(LassoFit, Vec<usize>)> {
    let x = problem.design();
    let (n, p) = (x.nrows(), x.ncols());
    let mut selected: Vec<usize> = fit
        .support
        .iter()
        .chain(forced.iter())
        .copied()
        .collect();
    selected.sort_unstable();
    selected.dedup();
    if selected.is_empty() {
        return Err(Error::Parameter(
            "post-selection refit needs a nonempty support or forced set".into(),
        ));
    }
    if let Some(&j) = selected.iter().find(|&&j| j >= p) {
        return Err(Error::Parameter(format!(
            "forced/support index {j} out of range for {p} columns"
        )));
    }

    // Row relevance for the rank screen mirrors the refit's own weighting.
    let row_weight: Vec<f64> = match problem {
        PostLassoProblem::Ls { weights, .. } => weights.to_vec(),
        PostLassoProblem::Logit { .. } => vec![1.0; n],
        PostLassoProblem::Qr { keep, .. } => keep.iter().map(|&k| f64::from(k)).collect(),
    };
    let m = selected.len();
    let mut gram = Array2::zeros((m, m));
    for a in 0..m {
        for b in a..m {
            let mut s = 0.0;
            for i in 0..n {
                s += row_weight[i] * x[[i, selected[a]]] * x[[i, selected[b]]];
            }
            let v = s / n as f64;
            gram[[a, b]] = v;
            gram[[b, a]] = v;
        }
    }
    let chol = RankCholesky::new(gram.view(), RANK_TOL);
    let dropped: Vec<usize> = chol.dropped.iter().map(|&k| selected[k]).collect();
    let kept: Vec<usize> = chol.kept.iter().map(|&k| selected[k]).collect();
    if kept.is_empty() {
        return Err(Error::RankDeficient(
            "all selected columns are degenerate on the relevant rows".into(),
        ));
    }

    let mut coef = vec![0.0; p];
    let iterations;
    let objective;
    match problem {
        PostLassoProblem::Ls { x, y, weights } => {
            // Normal equations on the screened Gram (dropped pivots solve to 0).
            let mut rhs = vec![0.0; m];
            for (a, &j) in selected.iter().enumerate() {
                let mut s = 0.0;
                for i in 0..n {
                    s += weights[i] * x[[i, j]] * y[i];
                }
                rhs[a] = s / n as f64;
            }
            let sol = chol.solve(&rhs);
            for (a, &j) in selected.iter().enumerate() {
                coef[j] = sol[a];
            }
            iterations = 1;
            let mut obj = 0.0;
            for i in 0..n {
                let mut pred = 0.0;
                for &j in &kept {
                    pred += x[[i, j]] * coef[j];
                }
                let r = y[i] - pred;
                obj += weights[i] * r * r;
            }
            objective = obj / n as f64;
        }
        PostLassoProblem::Logit { x, t } => {
            // Capped mode: near-separated refits keep the last iterate rather
            // than aborting; downstream probability clipping bounds the effect.
            let sub = gather_columns(x, &kept);
            let (sol, iters, _) = logit_newton(sub.view(), t, 200, NewtonMode::Capped)?;
            for (a, &j) in kept.iter().enumerate() {
                coef[j] = sol[a];
            }
            iterations = iters;
            let mut obj = 0.0;
            for i in 0..n {
                let mut u = 0.0;
                for &j in &kept {
                    u += x[[i, j]] * coef[j];
                }
                obj += log1pexp(u) - f64::from(t[i]) * u;
            }
            objective = obj / n as f64;
        }
        PostLassoProblem::Qr { x, y, keep, levels } => {
            let sub = gather_columns(x, &kept);
            let zero_loadings = vec![0.0; kept.len()];
            let sub_fit = lasso_qr(sub.view(), y, keep, levels, 0.0, &zero_loadings)?;
            for (a, &j) in kept.iter().enumerate() {
                coef[j] = sub_fit.coefficients[a];
            }
            iterations = sub_fit.iterations;
            objective = sub_fit.objective;
        }
    }

    let refit = LassoFit::assemble(coef, 0.0, vec![0.0; p], iterations, objective);
    Ok((refit, dropped))
}

fn gather_columns(x: &ArrayView2<'_, f64>, cols: &[usize]) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, cols.len()));
    for (a, &j) in cols.iter().enumerate() {
        for i in 0..n {
            out[[i, a]] = x[[i, j]];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::lasso_ls as ls;
    use ndarray::array;

    fn empty_fit(p: usize) -> LassoFit {
        LassoFit::assemble(vec![0.0; p], 1.0, vec![1.0; p], 0, 0.0)
    }

    #[test]
    fn forced_only_refit_on_two_columns() {
        let x = array![
            [1.0, 0.5, 2.0],
            [1.0, -1.0, 0.2],
            [1.0, 0.3, -0.4],
            [1.0, 2.0, 1.1],
            [1.0, -0.7, 0.9]
        ];
        let y = [2.0, -1.0, 0.5, 4.0, -0.2];
        let w = [1.0; 5];
        let problem = PostLassoProblem::Ls {
            x: x.view(),
            y: &y,
            weights: &w,
        };
        let (refit, dropped) = post_lasso(&empty_fit(3), &problem, &[0, 1]).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(refit.coefficients[2], 0.0);
        // Matches an unrestricted fit on just those two columns.
        let direct = ls(
            x.slice(ndarray::s![.., 0..2]).view(),
            &y,
            &w,
            0.0,
            &[0.0, 0.0],
        )
        .unwrap();
        assert!((refit.coefficients[0] - direct.coefficients[0]).abs() < 1e-8);
        assert!((refit.coefficients[1] - direct.coefficients[1]).abs() < 1e-8);
    }

    #[test]
    fn idempotent_when_lasso_was_unpenalized() {
        let x = array![[1.0, 0.4], [1.0, -0.8], [1.0, 1.5], [1.0, 0.1]];
        let y = [1.0, 0.0, 2.5, 0.7];
        let w = [1.0; 4];
        let fit = ls(x.view(), &y, &w, 0.0, &[0.0, 0.0]).unwrap();
        let problem = PostLassoProblem::Ls {
            x: x.view(),
            y: &y,
            weights: &w,
        };
        let (refit, _) = post_lasso(&fit, &problem, &[]).unwrap();
        for j in 0..2 {
            assert!(
                (refit.coefficients[j] - fit.coefficients[j]).abs() < 1e-7,
                "j={j}"
            );
        }
    }

    #[test]
    fn rank_deficient_support_drops_and_reports() {
        // Column 2 duplicates column 1.
        let x = array![[1.0, 2.0, 2.0], [1.0, -1.0, -1.0], [1.0, 0.5, 0.5], [1.0, 3.0, 3.0]];
        let y = [1.0, 2.0, 3.0, 4.0];
        let w = [1.0; 4];
        let mut fit = empty_fit(3);
        fit.support = vec![1, 2];
        let problem = PostLassoProblem::Ls {
            x: x.view(),
            y: &y,
            weights: &w,
        };
        let (refit, dropped) = post_lasso(&fit, &problem, &[0]).unwrap();
        assert_eq!(dropped, vec![2]);
        assert_eq!(refit.coefficients[2], 0.0);
        assert_ne!(refit.coefficients[1], 0.0);
    }

    #[test]
    fn empty_selection_is_an_error() {
        let x = array![[1.0], [1.0]];
        let y = [1.0, 2.0];
        let w = [1.0; 2];
        let problem = PostLassoProblem::Ls {
            x: x.view(),
            y: &y,
            weights: &w,
        };
        assert!(post_lasso(&empty_fit(1), &problem, &[]).is_err());
    }

    #[test]
    fn qr_refit_zeroes_outside_support() {
        let x = array![
            [1.0, 0.5, 1.4],
            [1.0, -1.0, 0.3],
            [1.0, 0.3, -2.0],
            [1.0, 2.0, 0.8],
            [1.0, -0.7, 1.2],
            [1.0, 0.9, -0.5]
        ];
        let y = [2.0, -1.0, 0.5, 4.0, -0.2, 1.1];
        let keep = vec![1u8; 6];
        let levels = vec![0.5; 6];
        let mut fit = empty_fit(3);
        fit.support = vec![1];
        let problem = PostLassoProblem::Qr {
            x: x.view(),
            y: &y,
            keep: &keep,
            levels: &levels,
        };
        let (refit, dropped) = post_lasso(&fit, &problem, &[0]).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(refit.coefficients[2], 0.0);
        assert_eq!(refit.lambda, 0.0);
    }
}

//! Competitor estimators: naive post-selection, unpenalized censored QR on
//! all controls, and the infeasible oracle. All three share the same
//! three-step backbone (censoring logit, transformed levels, weighted QR)
//! and report a Powell-type kernel sandwich standard error.

use crate::data::{Dataset, DesignMatrix};
use crate::math::{iqr, logistic, sd_population, RankCholesky};
use crate::nuisance::compute_h;
use crate::solvers::{
    initial_loadings_logit, lasso_logit, lasso_qr, logit_newton, penalty_loadings,
    penalty_logit_level, penalty_qr_level, post_lasso, LassoFit, LoadingProblem, NewtonMode,
    PenaltyRule, PostLassoProblem,
};
use crate::{Error, Result};
use ndarray::Array2;

const CLIP: f64 = 1e-4;

/// Point estimate plus the naive-refit standard error.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SimpleEstimate {
    pub theta: f64,
    pub se: f64,
    /// Observations passing the estimator's own positivity gate.
    pub kept: usize,
    pub support_size: usize,
}

/// `[d | cols]` with the treatment in front.
fn augment(data: &Dataset, cols: &Array2<f64>) -> Array2<f64> {
    let n = data.n();
    let m = cols.ncols();
    let mut aug = Array2::zeros((n, m + 1));
    for i in 0..n {
        aug[[i, 0]] = data.d[i];
        for j in 0..m {
            aug[[i, 1 + j]] = cols[[i, j]];
        }
    }
    aug
}

fn full_support(p: usize) -> LassoFit {
    LassoFit::assemble(vec![1.0; p], 0.0, vec![0.0; p], 0, 0.0)
}

fn fitted_pi(aug: &Array2<f64>, alpha: &[f64]) -> Vec<f64> {
    (0..aug.nrows())
        .map(|i| {
            let mut u = 0.0;
            for j in 0..aug.ncols() {
                u += aug[[i, j]] * alpha[j];
            }
            logistic(u).clamp(CLIP, 1.0 - CLIP)
        })
        .collect()
}

/// Powell-type sandwich standard error of the treatment coefficient from an
/// unpenalized weighted-QR fit on the columns in `cols`.
fn powell_sandwich(
    aug: &Array2<f64>,
    y: &[f64],
    coef: &[f64],
    gate: &[u8],
    h: &[f64],
    cols: &[usize],
) -> Result<f64> {
    let n = aug.nrows();
    let m = cols.len();
    let ti = cols
        .iter()
        .position(|&c| c == 0)
        .ok_or_else(|| Error::RankDeficient("treatment column left the refit".into()))?;
    let resid: Vec<f64> = (0..n)
        .map(|i| {
            let mut pred = 0.0;
            for &j in cols {
                pred += aug[[i, j]] * coef[j];
            }
            y[i] - pred
        })
        .collect();
    let kept_resid: Vec<f64> = (0..n).filter(|&i| gate[i] == 1).map(|i| resid[i]).collect();
    if kept_resid.is_empty() {
        return Err(Error::DegenerateData(
            "no observations pass the gate for the sandwich".into(),
        ));
    }
    let spread = iqr(&kept_resid).map(|v| v / 1.349).unwrap_or(0.0);
    let scale = if spread > 0.0 {
        spread
    } else {
        sd_population(&kept_resid)
    };
    let bw = (scale * (kept_resid.len() as f64).powf(-0.2)).max(1e-8);

    let nf = n as f64;
    let mut jmat = Array2::<f64>::zeros((m, m));
    let mut vmat = Array2::<f64>::zeros((m, m));
    for i in 0..n {
        if gate[i] == 0 {
            continue;
        }
        let kern = if resid[i].abs() <= bw { 0.5 / bw } else { 0.0 };
        let sc = h[i] - f64::from(resid[i] <= 0.0);
        let s2 = sc * sc;
        for (a, &ja) in cols.iter().enumerate() {
            let xa = aug[[i, ja]];
            for (b, &jb) in cols.iter().enumerate().skip(a) {
                let prod = xa * aug[[i, jb]] / nf;
                jmat[[a, b]] += kern * prod;
                vmat[[a, b]] += s2 * prod;
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            jmat[[a, b]] = jmat[[b, a]];
            vmat[[a, b]] = vmat[[b, a]];
        }
    }
    // Invert the bread with an escalating ridge if the kernel Hessian is
    // numerically singular (e.g. near-interpolating fits).
    for ridge in [0.0, 1e-10, 1e-8, 1e-6, 1e-4] {
        let mut jr = jmat.clone();
        for a in 0..m {
            jr[[a, a]] += ridge;
        }
        let chol = RankCholesky::new(jr.view(), 1e-12);
        if chol.dropped.contains(&ti) {
            continue;
        }
        let mut e = vec![0.0; m];
        e[ti] = 1.0;
        let u = chol.solve(&e);
        let mut var = 0.0;
        for a in 0..m {
            for b in 0..m {
                var += u[a] * vmat[[a, b]] * u[b];
            }
        }
        if var.is_finite() && var >= 0.0 {
            return Ok((var / nf).sqrt());
        }
    }
    Err(Error::RankDeficient(
        "kernel Hessian is singular at every ridge level".into(),
    ))
}

/// Unpenalized three-step on the given control columns (intercept included
/// in `cols`): capped-Newton logit, transformed levels, rank-screened QR.
fn unpenalized_three_step(data: &Dataset, cols: &Array2<f64>, tau: f64) -> Result<SimpleEstimate> {
    let aug = augment(data, cols);
    let pi = if data.t.iter().all(|&t| t == 1) {
        vec![1.0 - CLIP; data.n()]
    } else {
        let (alpha, _, _) = logit_newton(aug.view(), &data.t, 50, NewtonMode::Capped)?;
        fitted_pi(&aug, &alpha)
    };
    let (h, keep) = compute_h(&pi, tau)?;
    let gate: Vec<u8> = (0..data.n()).map(|i| keep[i] & data.t[i]).collect();
    let dummy = full_support(aug.ncols());
    let (refit, _) = post_lasso(
        &dummy,
        &PostLassoProblem::Qr {
            x: aug.view(),
            y: &data.y,
            keep: &gate,
            levels: &h,
        },
        &[0, 1],
    )?;
    let se = powell_sandwich(&aug, &data.y, &refit.coefficients, &gate, &h, &refit.support)?;
    Ok(SimpleEstimate {
        theta: refit.coefficients[0],
        se,
        kept: gate.iter().map(|&g| usize::from(g)).sum(),
        support_size: refit.support.len(),
    })
}

/// Full-sample post-selection estimator: penalized logit and penalized QR
/// with post-selection refits, no cross-fitting, no orthogonalization.
pub fn estimator_naive_ps(
    data: &Dataset,
    design: &DesignMatrix,
    tau: f64,
    rule: &PenaltyRule,
) -> Result<SimpleEstimate> {
    estimator_naive_ps_with_forced(data, design, tau, rule, &[])
}

/// Same as [`estimator_naive_ps`] with extra design columns forced into
/// both selection stages.
pub fn estimator_naive_ps_with_forced(
    data: &Dataset,
    design: &DesignMatrix,
    tau: f64,
    rule: &PenaltyRule,
    forced_controls: &[usize],
) -> Result<SimpleEstimate> {
    let n = data.n();
    let aug = augment(data, &design.x);
    for &j in forced_controls {
        if j == 0 || j >= design.p() {
            return Err(Error::Parameter(format!(
                "forced control index {j} out of range (intercept is always forced)"
            )));
        }
    }
    // Augmented-column indices: treatment 0, intercept 1, control j -> j + 1.
    let mut forced_logit: Vec<usize> = vec![1];
    let mut forced_qr: Vec<usize> = vec![0, 1];
    for &j in forced_controls {
        forced_logit.push(j + 1);
        forced_qr.push(j + 1);
    }
    forced_logit.sort_unstable();
    forced_qr.sort_unstable();

    let pi = if data.t.iter().all(|&t| t == 1) {
        vec![1.0 - CLIP; n]
    } else {
        let lambda1 = penalty_logit_level(n, design.p(), rule)?;
        let initial = initial_loadings_logit(aug.view(), &data.t, &forced_logit);
        let loadings = penalty_loadings(
            &LoadingProblem::Logit {
                x: aug.view(),
                t: &data.t,
            },
            lambda1,
            &initial,
            2,
        )?;
        let fit = lasso_logit(aug.view(), &data.t, lambda1, &loadings)?;
        let (refit, _) = post_lasso(
            &fit,
            &PostLassoProblem::Logit {
                x: aug.view(),
                t: &data.t,
            },
            &forced_logit,
        )?;
        fitted_pi(&aug, &refit.coefficients)
    };
    let (h, keep) = compute_h(&pi, tau)?;
    let gate: Vec<u8> = (0..n).map(|i| keep[i] & data.t[i]).collect();

    let nf = n as f64;
    let stat_loadings: Vec<f64> = (0..aug.ncols())
        .map(|j| (aug.column(j).iter().map(|v| v * v).sum::<f64>() / nf).sqrt())
        .collect();
    let lambda2 = penalty_qr_level(aug.view(), &gate, &h, &stat_loadings, rule)?;
    let mut solver_loadings = stat_loadings;
    for &j in &forced_qr {
        solver_loadings[j] = 0.0;
    }
    let fit = lasso_qr(aug.view(), &data.y, &gate, &h, lambda2, &solver_loadings)?;
    let (refit, _) = post_lasso(
        &fit,
        &PostLassoProblem::Qr {
            x: aug.view(),
            y: &data.y,
            keep: &gate,
            levels: &h,
        },
        &forced_qr,
    )?;
    let se = powell_sandwich(&aug, &data.y, &refit.coefficients, &gate, &h, &refit.support)?;
    Ok(SimpleEstimate {
        theta: refit.coefficients[0],
        se,
        kept: gate.iter().map(|&g| usize::from(g)).sum(),
        support_size: refit.support.len(),
    })
}

/// Unpenalized three-step on all controls; requires fewer controls than
/// observations.
pub fn estimator_hdcqr(data: &Dataset, design: &DesignMatrix, tau: f64) -> Result<SimpleEstimate> {
    if design.p().saturating_sub(1) >= data.n() {
        return Err(Error::RankDeficient(format!(
            "{} controls with only {} observations",
            design.p() - 1,
            data.n()
        )));
    }
    unpenalized_three_step(data, &design.x, tau)
}

/// Unpenalized three-step on the `relevant` design columns (the intercept
/// is always included).
pub fn estimator_oracle(
    data: &Dataset,
    design: &DesignMatrix,
    tau: f64,
    relevant: &[usize],
) -> Result<SimpleEstimate> {
    let mut cols: Vec<usize> = vec![0];
    cols.extend_from_slice(relevant);
    cols.sort_unstable();
    cols.dedup();
    if let Some(&j) = cols.iter().find(|&&j| j >= design.p()) {
        return Err(Error::Parameter(format!(
            "relevant column {j} out of range for {} design columns",
            design.p()
        )));
    }
    let n = data.n();
    let mut sub = Array2::zeros((n, cols.len()));
    for i in 0..n {
        for (a, &j) in cols.iter().enumerate() {
            sub[[i, a]] = design.x[[i, j]];
        }
    }
    unpenalized_three_step(data, &sub, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{design_from_dataset, generate_replication, DgpConfig, Signal};

    fn small_data() -> (Dataset, DesignMatrix) {
        let cfg = DgpConfig::benchmark(
            400,
            15,
            0.5,
            Signal::Coef { c_y: 0.2, c_d: 0.2 },
            41,
        )
        .unwrap();
        let data = generate_replication(&cfg, 17).unwrap();
        let (design, _) = design_from_dataset(&data).unwrap();
        (data, design)
    }

    #[test]
    fn hdcqr_rejects_too_many_controls() {
        let (data, design) = small_data();
        let mut fat = design.clone();
        let err = {
            // Shrink n instead of growing p: slice the first rows.
            let few = Dataset::new(
                data.y[..12].to_vec(),
                data.d[..12].to_vec(),
                data.z_raw.slice(ndarray::s![..12, ..]).to_owned(),
                data.t[..12].to_vec(),
                data.censor_value.as_ref().map(|c| c[..12].to_vec()),
            )
            .unwrap();
            fat.x = fat.x.slice(ndarray::s![..12, ..]).to_owned();
            estimator_hdcqr(&few, &fat, 0.5).unwrap_err()
        };
        assert!(matches!(err, Error::RankDeficient(_)));
    }

    #[test]
    fn oracle_runs_and_is_near_truth() {
        let (data, design) = small_data();
        let relevant: Vec<usize> = (1..15).collect();
        let est = estimator_oracle(&data, &design, 0.5, &relevant).unwrap();
        assert!(est.se > 0.0);
        assert!((est.theta - 1.0).abs() < 0.5, "theta = {}", est.theta);
    }

    #[test]
    fn oracle_all_columns_equals_hdcqr() {
        let (data, design) = small_data();
        let all: Vec<usize> = (1..design.p()).collect();
        let a = estimator_oracle(&data, &design, 0.5, &all).unwrap();
        let b = estimator_hdcqr(&data, &design, 0.5).unwrap();
        assert!((a.theta - b.theta).abs() < 1e-10);
        assert!((a.se - b.se).abs() < 1e-10);
    }

    #[test]
    fn empty_relevant_set_is_a_valid_degenerate_run() {
        let (data, design) = small_data();
        let est = estimator_oracle(&data, &design, 0.5, &[]).unwrap();
        assert!(est.theta.is_finite());
        assert_eq!(est.support_size, 2); // treatment + intercept
    }

    #[test]
    fn naive_ps_runs_on_benchmark_slice() {
        let (data, design) = small_data();
        let rule = PenaltyRule::default_for(data.n(), 9);
        let est = estimator_naive_ps(&data, &design, 0.5, &rule).unwrap();
        assert!(est.theta.is_finite());
        assert!(est.se > 0.0);
        assert!(est.kept > 100);
    }
}

//! Per-fold nuisance estimation on auxiliary samples: censoring probability,
//! transformed quantile levels, pilot quantile fit, conditional density, and
//! the weighted projection of the treatment on the controls.

use crate::data::{Dataset, DesignMatrix};
use crate::math::{iqr, logistic};
use crate::rng::stream_seed;
use crate::solvers::{
    initial_loadings_logit, initial_loadings_ls, lasso_logit, lasso_ls, lasso_qr,
    penalty_loadings, penalty_logit_level, penalty_ls_level, penalty_qr_level, post_lasso,
    LoadingProblem, PenaltyRule, PostLassoProblem,
};
use crate::{Error, Result};
use ndarray::Array2;

const SALT_PILOT: u64 = 0x5049_4c4f;
const SALT_DENSITY: u64 = 0x4445_4e53;
const SALT_FOLD: u64 = 0x4e55_4953;

/// Tuning constants for the nuisance pipeline.
#[derive(Debug, Clone, serde::Serialize)]
pub struct NuisanceConfig {
    /// Minimum count of kept uncensored observations per auxiliary sample.
    pub min_kept: usize,
    /// Probability clip applied to the fitted censoring probability.
    pub pi_clip: f64,
    /// Density denominator floor as a fraction of IQR of uncensored outcomes.
    pub density_floor_frac: f64,
    /// Maximum tolerated fraction of kept rows with crossed quantile fits.
    pub crossing_limit: f64,
    /// Iterations of the penalty-loading refinement.
    pub loading_rounds: usize,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            min_kept: 20,
            pi_clip: 1e-4,
            density_floor_frac: 1e-3,
            crossing_limit: 0.1,
            loading_rounds: 2,
        }
    }
}

impl NuisanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_kept < 3 {
            return Err(Error::Parameter(format!(
                "min_kept must be at least 3, got {}",
                self.min_kept
            )));
        }
        if !(self.pi_clip > 0.0 && self.pi_clip < 0.5) {
            return Err(Error::Parameter(format!(
                "pi_clip must lie in (0, 0.5), got {}",
                self.pi_clip
            )));
        }
        if !(self.density_floor_frac > 0.0) {
            return Err(Error::Parameter("density_floor_frac must be positive".into()));
        }
        if !(self.crossing_limit >= 0.0 && self.crossing_limit <= 1.0) {
            return Err(Error::Parameter(format!(
                "crossing_limit must lie in [0,1], got {}",
                self.crossing_limit
            )));
        }
        if self.loading_rounds < 1 {
            return Err(Error::Parameter("loading_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// All nuisance objects evaluated on a target fold, plus the fitted
/// coefficient vectors needed to form residuals there.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub pi_hat: Vec<f64>,
    pub h_hat: Vec<f64>,
    pub keep: Vec<u8>,
    pub theta_pilot: f64,
    pub beta_pilot: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub tau: f64,
    pub bandwidth: f64,
}

impl NuisanceFit {
    fn validate(&self) -> Result<()> {
        let all_finite = self.pi_hat.iter().all(|v| v.is_finite())
            && self.h_hat.iter().all(|v| v.is_finite())
            && self.beta_pilot.iter().all(|v| v.is_finite())
            && self.f_hat.iter().all(|v| v.is_finite())
            && self.mu_hat.iter().all(|v| v.is_finite())
            && self.v_hat.iter().all(|v| v.is_finite())
            && self.theta_pilot.is_finite()
            && self.bandwidth.is_finite();
        if !all_finite {
            return Err(Error::Parameter(
                "nuisance fit contains non-finite values".into(),
            ));
        }
        for i in 0..self.pi_hat.len() {
            let identity = self.h_hat[i] * self.pi_hat[i] - (self.pi_hat[i] - (1.0 - self.tau));
            if identity.abs() > 1e-12 {
                return Err(Error::Parameter(format!(
                    "transformed level identity violated at index {i}"
                )));
            }
            let expect_keep = u8::from(self.h_hat[i] > 0.0);
            if self.keep[i] != expect_keep {
                return Err(Error::Parameter(format!(
                    "keep flag inconsistent with transformed level at index {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-fold counters for the run report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub kept_aux: usize,
    pub no_censoring: bool,
    pub logit_support: usize,
    pub pilot_support: usize,
    pub projection_support: usize,
    pub density_caps: usize,
    pub density_crossings: usize,
    pub rank_dropped: usize,
    pub pi_min: f64,
    pub pi_max: f64,
    pub theta_pilot: f64,
    pub lambda2: f64,
}

fn gather(v: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| v[i]).collect()
}

/// Rows of the design alone.
fn design_rows(design: &DesignMatrix, rows: &[usize]) -> Array2<f64> {
    let p = design.p();
    let mut out = Array2::zeros((rows.len(), p));
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..p {
            out[[r, j]] = design.x[[i, j]];
        }
    }
    out
}

/// Rows of the augmented design `(d, x)`; treatment first, intercept second.
fn augmented_rows(data: &Dataset, design: &DesignMatrix, rows: &[usize]) -> Array2<f64> {
    let p = design.p();
    let mut out = Array2::zeros((rows.len(), p + 1));
    for (r, &i) in rows.iter().enumerate() {
        out[[r, 0]] = data.d[i];
        for j in 0..p {
            out[[r, 1 + j]] = design.x[[i, j]];
        }
    }
    out
}

/// Censoring-probability stage: Logit Lasso then Post-Lasso on `(d, x)`.
#[derive(Debug, Clone)]
pub struct CensoringFit {
    /// Clipped probabilities on the target fold.
    pub pi_target: Vec<f64>,
    /// Clipped probabilities on the auxiliary rows (reused downstream).
    pub pi_aux: Vec<f64>,
    /// Coefficients on the augmented design.
    pub alpha: Vec<f64>,
    pub no_censoring: bool,
    pub support_size: usize,
    pub dropped_rank: usize,
}

pub fn fit_censoring_prob(
    data: &Dataset,
    design: &DesignMatrix,
    aux: &[usize],
    target: &[usize],
    cfg: &NuisanceConfig,
    rule: &PenaltyRule,
) -> Result<CensoringFit> {
    let t_aux: Vec<u8> = aux.iter().map(|&i| data.t[i]).collect();
    let p_aug = design.p() + 1;
    if t_aux.iter().all(|&ti| ti == 1) {
        // No censoring detected in the auxiliary sample.
        let hi = 1.0 - cfg.pi_clip;
        return Ok(CensoringFit {
            pi_target: vec![hi; target.len()],
            pi_aux: vec![hi; aux.len()],
            alpha: vec![0.0; p_aug],
            no_censoring: true,
            support_size: 0,
            dropped_rank: 0,
        });
    }
    let aug_aux = augmented_rows(data, design, aux);
    let lambda1 = penalty_logit_level(aux.len(), design.p(), rule)?;
    let initial = initial_loadings_logit(aug_aux.view(), &t_aux, &[1]);
    let loadings = penalty_loadings(
        &LoadingProblem::Logit {
            x: aug_aux.view(),
            t: &t_aux,
        },
        lambda1,
        &initial,
        cfg.loading_rounds,
    )?;
    let fit = lasso_logit(aug_aux.view(), &t_aux, lambda1, &loadings)?;
    let (refit, dropped) = post_lasso(
        &fit,
        &PostLassoProblem::Logit {
            x: aug_aux.view(),
            t: &t_aux,
        },
        &[1],
    )?;
    let predict = |rows: &[usize]| -> Vec<f64> {
        rows.iter()
            .map(|&i| {
                let mut u = refit.coefficients[0] * data.d[i];
                for j in 0..design.p() {
                    u += refit.coefficients[1 + j] * design.x[[i, j]];
                }
                logistic(u).clamp(cfg.pi_clip, 1.0 - cfg.pi_clip)
            })
            .collect()
    };
    Ok(CensoringFit {
        pi_target: predict(target),
        pi_aux: predict(aux),
        alpha: refit.coefficients.clone(),
        no_censoring: false,
        support_size: refit.support.len(),
        dropped_rank: dropped.len(),
    })
}

/// Transformed per-observation quantile levels and the positivity gate:
/// `h_i = (pi_i - (1 - tau)) / pi_i`, `keep_i = I(h_i > 0)`.
pub fn compute_h(pi_hat: &[f64], tau: f64) -> Result<(Vec<f64>, Vec<u8>)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Parameter(format!(
            "quantile index must lie in (0,1), got {tau}"
        )));
    }
    let mut h = Vec::with_capacity(pi_hat.len());
    let mut keep = Vec::with_capacity(pi_hat.len());
    for (i, &pi) in pi_hat.iter().enumerate() {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::Parameter(format!(
                "censoring probability at index {i} must lie in (0,1], got {pi}"
            )));
        }
        let hi = (pi - (1.0 - tau)) / pi;
        h.push(hi);
        keep.push(u8::from(hi > 0.0));
    }
    Ok((h, keep))
}

/// Pilot weighted/rotated quantile fit on the auxiliary sample.
#[derive(Debug, Clone)]
pub struct PilotFit {
    pub theta: f64,
    pub beta: Vec<f64>,
    pub lambda2: f64,
    pub support_size: usize,
    pub dropped_rank: usize,
}

/// Shared Lasso stage of the weighted/rotated quantile fits: the simulated
/// penalty level, then the penalized solve on the augmented design with the
/// intercept unpenalized. Returns the fit, the solver gate `keep & t`, and
/// the level.
fn lasso_qr_stage(
    data: &Dataset,
    design: &DesignMatrix,
    aux: &[usize],
    h_aux: &[f64],
    keep_aux: &[u8],
    cfg: &NuisanceConfig,
    rule: &PenaltyRule,
) -> Result<(crate::solvers::LassoFit, Vec<u8>, f64)> {
    let y_aux = gather(&data.y, aux);
    let keep_solver: Vec<u8> = aux
        .iter()
        .enumerate()
        .map(|(r, &i)| keep_aux[r] & data.t[i])
        .collect();
    let kept: usize = keep_solver.iter().map(|&k| usize::from(k)).sum();
    if kept < cfg.min_kept {
        return Err(Error::DegenerateData(format!(
            "{kept} kept uncensored observations in the auxiliary sample, need {}",
            cfg.min_kept
        )));
    }
    let aug = augmented_rows(data, design, aux);
    let nf = aux.len() as f64;
    let stat_loadings: Vec<f64> = (0..aug.ncols())
        .map(|j| {
            let ms = aug.column(j).iter().map(|v| v * v).sum::<f64>() / nf;
            ms.sqrt()
        })
        .collect();
    let lambda2 = penalty_qr_level(aug.view(), &keep_solver, h_aux, &stat_loadings, rule)?;
    let mut solver_loadings = stat_loadings;
    solver_loadings[1] = 0.0; // intercept
    let fit = lasso_qr(aug.view(), &y_aux, &keep_solver, h_aux, lambda2, &solver_loadings)?;
    Ok((fit, keep_solver, lambda2))
}

pub fn fit_pilot_qr(
    data: &Dataset,
    design: &DesignMatrix,
    aux: &[usize],
    h_aux: &[f64],
    keep_aux: &[u8],
    cfg: &NuisanceConfig,
    rule: &PenaltyRule,
) -> Result<PilotFit> {
    let (fit, keep_solver, lambda2) =
        lasso_qr_stage(data, design, aux, h_aux, keep_aux, cfg, rule)?;
    let y_aux = gather(&data.y, aux);
    let aug = augmented_rows(data, design, aux);
    let (refit, dropped) = post_lasso(
        &fit,
        &PostLassoProblem::Qr {
            x: aug.view(),
            y: &y_aux,
            keep: &keep_solver,
            levels: h_aux,
        },
        &[0, 1],
    )?;
    Ok(PilotFit {
        theta: refit.coefficients[0],
        beta: refit.coefficients[1..].to_vec(),
        lambda2,
        support_size: refit.support.len(),
        dropped_rank: dropped.len(),
    })
}

/// Density-estimation bandwidth: `min(n^(-1/6), min(tau, 1-tau)/2)`, always
/// keeping `tau ± h` inside (0,1).
pub fn default_bandwidth(n: usize, tau: f64) -> f64 {
    let rate = (n as f64).powf(-1.0 / 6.0);
    rate.min(tau.min(1.0 - tau) / 2.0)
}

/// Conditional density of the latent outcome at the tau-th quantile,
/// from the spacing of quantile fits at `tau ± bandwidth`.
#[derive(Debug, Clone)]
pub struct DensityFit {
    pub f_target: Vec<f64>,
    pub f_aux: Vec<f64>,
    pub caps: usize,
    pub crossings: usize,
    pub coef_plus: Vec<f64>,
    pub coef_minus: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_density(
    data: &Dataset,
    design: &DesignMatrix,
    aux: &[usize],
    target: &[usize],
    pi_aux: &[f64],
    pi_target: &[f64],
    tau: f64,
    bandwidth: f64,
    cfg: &NuisanceConfig,
    rule: &PenaltyRule,
) -> Result<DensityFit> {
    if !(bandwidth > 0.0 && tau - bandwidth > 0.0 && tau + bandwidth < 1.0) {
        return Err(Error::Parameter(format!(
            "bandwidth {bandwidth} must keep tau +- h inside (0,1) at tau = {tau}"
        )));
    }
    // Lasso stage per side, then one refit support shared by both sides: the
    // union of the two selections. Disjoint side supports would make the
    // fitted spacing swing with every control selected on only one side; a
    // common support confines the spacing noise to coefficient differences.
    let stage = |u: f64, salt: u64| -> Result<(crate::solvers::LassoFit, Vec<u8>, Vec<f64>)> {
        let (h_u, keep_u) = compute_h(pi_aux, u)?;
        let side_rule = PenaltyRule {
            seed: stream_seed(rule.seed, salt),
            ..rule.clone()
        };
        let (fit, keep_solver, _) =
            lasso_qr_stage(data, design, aux, &h_u, &keep_u, cfg, &side_rule)?;
        Ok((fit, keep_solver, h_u))
    };
    let (fit_plus, keep_plus, h_plus) = stage(tau + bandwidth, 1)?;
    let (fit_minus, keep_minus, h_minus) = stage(tau - bandwidth, 2)?;
    let mut union: Vec<usize> = fit_plus
        .support
        .iter()
        .chain(fit_minus.support.iter())
        .copied()
        .chain([0usize, 1])
        .collect();
    union.sort_unstable();
    union.dedup();
    let y_aux = gather(&data.y, aux);
    let aug = augmented_rows(data, design, aux);
    let refit = |fit: &crate::solvers::LassoFit,
                 keep_solver: &[u8],
                 h_u: &[f64]|
     -> Result<Vec<f64>> {
        let (refit, _) = post_lasso(
            fit,
            &PostLassoProblem::Qr {
                x: aug.view(),
                y: &y_aux,
                keep: keep_solver,
                levels: h_u,
            },
            &union,
        )?;
        Ok(refit.coefficients)
    };
    let coef_plus = refit(&fit_plus, &keep_plus, &h_plus)?;
    let coef_minus = refit(&fit_minus, &keep_minus, &h_minus)?;

    let uncensored_y: Vec<f64> = (0..data.n())
        .filter(|&i| data.t[i] == 1 && aux.contains(&i))
        .map(|i| data.y[i])
        .collect();
    let spread = iqr(&uncensored_y).unwrap_or(0.0);
    let floor = if spread > 0.0 {
        cfg.density_floor_frac * spread
    } else {
        let ymax = data.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        1e-12 * (1.0 + ymax)
    };

    let spacing = |i: usize| -> f64 {
        let mut s = (coef_plus[0] - coef_minus[0]) * data.d[i];
        for j in 0..design.p() {
            s += (coef_plus[1 + j] - coef_minus[1 + j]) * design.x[[i, j]];
        }
        s
    };
    let mut caps = 0usize;
    let mut crossings = 0usize;
    let mut kept_rows = 0usize;
    let mut crossed_kept = 0usize;
    let mut evaluate = |rows: &[usize], pi: &[f64]| -> Result<Vec<f64>> {
        let (h_tau, keep_tau) = compute_h(pi, tau)?;
        let _ = h_tau;
        let mut out = Vec::with_capacity(rows.len());
        for (r, &i) in rows.iter().enumerate() {
            let den = spacing(i);
            let kept = keep_tau[r] == 1;
            if kept {
                kept_rows += 1;
            }
            if den < 0.0 {
                crossings += 1;
                if kept {
                    crossed_kept += 1;
                }
            }
            if den < floor {
                caps += 1;
                out.push(2.0 * bandwidth / floor);
            } else {
                out.push(2.0 * bandwidth / den);
            }
        }
        Ok(out)
    };
    let f_aux = evaluate(aux, pi_aux)?;
    let f_target = evaluate(target, pi_target)?;
    if kept_rows > 0 {
        let frac = crossed_kept as f64 / kept_rows as f64;
        if frac > cfg.crossing_limit {
            return Err(Error::Quality(format!(
                "quantile fits at tau +- bandwidth cross on {:.1}% of kept rows (limit {:.1}%)",
                100.0 * frac,
                100.0 * cfg.crossing_limit
            )));
        }
    }
    Ok(DensityFit {
        f_target,
        f_aux,
        caps,
        crossings,
        coef_plus,
        coef_minus,
    })
}

/// Weighted projection of the treatment on the controls.
#[derive(Debug, Clone)]
pub struct ProjectionFit {
    pub mu: Vec<f64>,
    pub v_target: Vec<f64>,
    pub lambda3: f64,
    pub support_size: usize,
    pub dropped_rank: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn fit_projection(
    data: &Dataset,
    design: &DesignMatrix,
    aux: &[usize],
    target: &[usize],
    keep_aux: &[u8],
    f_aux: &[f64],
    cfg: &NuisanceConfig,
    rule: &PenaltyRule,
) -> Result<ProjectionFit> {
    let kept: usize = aux
        .iter()
        .enumerate()
        .map(|(r, &i)| usize::from(keep_aux[r] & data.t[i]))
        .sum();
    if kept < cfg.min_kept {
        return Err(Error::DegenerateData(format!(
            "{kept} kept uncensored observations for the projection, need {}",
            cfg.min_kept
        )));
    }
    let x_aux = design_rows(design, aux);
    let d_aux = gather(&data.d, aux);
    let weights: Vec<f64> = aux
        .iter()
        .enumerate()
        .map(|(r, &i)| f64::from(keep_aux[r] & data.t[i]) * f_aux[r])
        .collect();
    let lambda3 = penalty_ls_level(aux.len(), design.p(), rule)?;
    let initial = initial_loadings_ls(x_aux.view(), &d_aux, &weights, &[0]);
    let loadings = penalty_loadings(
        &LoadingProblem::Ls {
            x: x_aux.view(),
            y: &d_aux,
            weights: &weights,
        },
        lambda3,
        &initial,
        cfg.loading_rounds,
    )?;
    let fit = lasso_ls(x_aux.view(), &d_aux, &weights, lambda3, &loadings)?;
    let (refit, dropped) = post_lasso(
        &fit,
        &PostLassoProblem::Ls {
            x: x_aux.view(),
            y: &d_aux,
            weights: &weights,
        },
        &[0],
    )?;
    let v_target: Vec<f64> = target
        .iter()
        .map(|&i| {
            let mut pred = 0.0;
            for j in 0..design.p() {
                pred += refit.coefficients[j] * design.x[[i, j]];
            }
            data.d[i] - pred
        })
        .collect();
    Ok(ProjectionFit {
        mu: refit.coefficients.clone(),
        v_target,
        lambda3,
        support_size: refit.support.len(),
        dropped_rank: dropped.len(),
    })
}

/// Runs all four nuisance stages for one fold: fit on `aux`, evaluate on
/// `target`. Stage-specific seeds are derived from the rule seed and the
/// fold id, so fold fits are independent and reproducible.
pub fn fit_fold_nuisance(
    data: &Dataset,
    design: &DesignMatrix,
    tau: f64,
    aux: &[usize],
    target: &[usize],
    cfg: &NuisanceConfig,
    rule: &PenaltyRule,
    fold: usize,
) -> Result<(NuisanceFit, FoldDiagnostics)> {
    cfg.validate()?;
    rule.validate()?;
    let fold_seed = stream_seed(stream_seed(rule.seed, SALT_FOLD), fold as u64);
    let cens = fit_censoring_prob(data, design, aux, target, cfg, rule)?;
    let (h_aux, keep_aux) = compute_h(&cens.pi_aux, tau)?;
    let (h_target, keep_target) = compute_h(&cens.pi_target, tau)?;

    let pilot_rule = PenaltyRule {
        seed: stream_seed(fold_seed, SALT_PILOT),
        ..rule.clone()
    };
    let pilot = fit_pilot_qr(data, design, aux, &h_aux, &keep_aux, cfg, &pilot_rule)?;

    let bandwidth = default_bandwidth(aux.len(), tau);
    let density_rule = PenaltyRule {
        seed: stream_seed(fold_seed, SALT_DENSITY),
        ..rule.clone()
    };
    let dens = estimate_density(
        data,
        design,
        aux,
        target,
        &cens.pi_aux,
        &cens.pi_target,
        tau,
        bandwidth,
        cfg,
        &density_rule,
    )?;

    let proj = fit_projection(
        data, design, aux, target, &keep_aux, &dens.f_aux, cfg, rule,
    )?;

    let fit = NuisanceFit {
        pi_hat: cens.pi_target.clone(),
        h_hat: h_target,
        keep: keep_target,
        theta_pilot: pilot.theta,
        beta_pilot: pilot.beta.clone(),
        f_hat: dens.f_target.clone(),
        mu_hat: proj.mu.clone(),
        v_hat: proj.v_target.clone(),
        tau,
        bandwidth,
    };
    fit.validate()?;
    let kept_aux: usize = aux
        .iter()
        .enumerate()
        .map(|(r, &i)| usize::from(keep_aux[r] & data.t[i]))
        .sum();
    let (pi_min, pi_max) = cens
        .pi_target
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let diag = FoldDiagnostics {
        fold,
        kept_aux,
        no_censoring: cens.no_censoring,
        logit_support: cens.support_size,
        pilot_support: pilot.support_size,
        projection_support: proj.support_size,
        density_caps: dens.caps,
        density_crossings: dens.crossings,
        rank_dropped: cens.dropped_rank + pilot.dropped_rank + proj.dropped_rank,
        pi_min,
        pi_max,
        theta_pilot: pilot.theta,
        lambda2: pilot.lambda2,
    };
    Ok((fit, diag))
}

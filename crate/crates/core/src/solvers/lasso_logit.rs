//! Logistic Lasso via proximal gradient (FISTA with backtracking and
//! adaptive restart), plus a damped-Newton solver for unpenalized refits.

use super::{kkt_violation, validate_loadings, Cols, LassoFit};
use crate::math::{log1pexp, logistic, soft_threshold, RankCholesky};
use crate::{Error, Result};
use ndarray::{Array2, ArrayView2};

const KKT_TOL: f64 = 1e-7;
const MAX_MACRO: usize = 10_000;
const DIVERGE_NORM: f64 = 1e6;

fn logit_objective(u: &[f64], t: &[u8]) -> f64 {
    let n = u.len() as f64;
    u.iter()
        .zip(t)
        .map(|(&ui, &ti)| log1pexp(ui) - f64::from(ti) * ui)
        .sum::<f64>()
        / n
}

/// Minimizes `mean(log(1+exp(x_i'a)) - t_i x_i'a) + (lambda/n) sum G_j |a_j|`.
pub fn lasso_logit(
    x: ArrayView2<'_, f64>,
    t: &[u8],
    lambda: f64,
    loadings: &[f64],
) -> Result<LassoFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if t.len() != n {
        return Err(Error::Parameter(format!(
            "x has {n} rows but t has {}",
            t.len()
        )));
    }
    validate_loadings(loadings, p)?;
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    let ones = t.iter().filter(|&&ti| ti == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::DegenerateData(
            "logistic fit needs both classes present".into(),
        ));
    }

    let cols = Cols::from_view(&x);
    let nf = n as f64;
    let thresholds: Vec<f64> = loadings.iter().map(|g| lambda * g / nf).collect();
    let l0 = (cols.spectral_bound(nf) / 4.0).max(1e-10);

    let mut alpha = vec![0.0; p];
    let mut iters = 0usize;
    // Working set: unpenalized columns plus whatever violates the KKT bound.
    let mut working: Vec<usize> = (0..p).filter(|&j| thresholds[j] == 0.0).collect();
    loop {
        // Gradient at current point over all columns.
        let mut u = vec![0.0; n];
        for j in 0..p {
            cols.axpy_col(j, alpha[j], &mut u);
        }
        let gu: Vec<f64> = u
            .iter()
            .zip(t)
            .map(|(&ui, &ti)| (logistic(ui) - f64::from(ti)) / nf)
            .collect();
        let grad: Vec<f64> = (0..p)
            .map(|j| cols.col(j).iter().zip(&gu).map(|(xi, gi)| xi * gi).sum())
            .collect();
        if kkt_violation(&alpha, &grad, &thresholds) <= KKT_TOL {
            break;
        }
        if iters >= MAX_MACRO {
            return Err(Error::NonConvergence {
                context: "lasso_logit proximal gradient".into(),
                iterations: iters,
                last_iterate: alpha,
            });
        }
        // Expand the working set with the strongest violators.
        let mut violators: Vec<(f64, usize)> = (0..p)
            .filter(|j| !working.contains(j))
            .map(|j| {
                let viol = if alpha[j] == 0.0 {
                    (grad[j].abs() - thresholds[j]).max(0.0)
                } else {
                    (grad[j] + alpha[j].signum() * thresholds[j]).abs()
                };
                (viol, j)
            })
            .filter(|(v, _)| *v > KKT_TOL)
            .collect();
        violators.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        working.extend(violators.iter().take(100).map(|&(_, j)| j));
        working.sort_unstable();
        working.dedup();

        iters = fista_restricted(
            &cols, t, &thresholds, &working, l0, &mut alpha, iters,
        )?;
    }

    let mut u = vec![0.0; n];
    for j in 0..p {
        cols.axpy_col(j, alpha[j], &mut u);
    }
    let mut obj = logit_objective(&u, t);
    for j in 0..p {
        obj += thresholds[j] * alpha[j].abs();
    }
    Ok(LassoFit::assemble(
        alpha,
        lambda,
        loadings.to_vec(),
        iters,
        obj,
    ))
}

/// FISTA on the coordinates in `working`; all others stay fixed at 0.
/// Returns the updated global iteration count.
fn fista_restricted(
    cols: &Cols,
    t: &[u8],
    thresholds: &[f64],
    working: &[usize],
    l_init: f64,
    alpha: &mut [f64],
    mut iters: usize,
) -> Result<usize> {
    let n = cols.n;
    let nf = n as f64;
    let mut l = l_init;
    let mut cur: Vec<f64> = working.iter().map(|&j| alpha[j]).collect();
    let mut mom = cur.clone();
    let mut tk = 1.0f64;
    let u_of = |coefs: &[f64]| -> Vec<f64> {
        let mut u = vec![0.0; n];
        for (w, &j) in working.iter().enumerate() {
            cols.axpy_col(j, coefs[w], &mut u);
        }
        u
    };
    let mut u_cur = u_of(&cur);
    let mut f_cur = penalized_obj_local(&u_cur, t, &cur, working, thresholds);

    for _ in 0..2000 {
        iters += 1;
        if iters > MAX_MACRO {
            for (w, &j) in working.iter().enumerate() {
                alpha[j] = cur[w];
            }
            return Err(Error::NonConvergence {
                context: "lasso_logit proximal gradient".into(),
                iterations: iters - 1,
                last_iterate: alpha.to_vec(),
            });
        }
        let u_mom = u_of(&mom);
        let f_mom = logit_objective(&u_mom, t);
        let gu: Vec<f64> = u_mom
            .iter()
            .zip(t)
            .map(|(&ui, &ti)| (logistic(ui) - f64::from(ti)) / nf)
            .collect();
        let grad: Vec<f64> = working
            .iter()
            .map(|&j| cols.col(j).iter().zip(&gu).map(|(xi, gi)| xi * gi).sum())
            .collect();
        // Backtracking line search on the smooth part.
        let mut next;
        loop {
            next = (0..working.len())
                .map(|w| {
                    let step = mom[w] - grad[w] / l;
                    let th = thresholds[working[w]];
                    if th == 0.0 {
                        step
                    } else {
                        soft_threshold(step, th / l)
                    }
                })
                .collect::<Vec<f64>>();
            let u_next = u_of(&next);
            let f_next = logit_objective(&u_next, t);
            let mut quad = f_mom;
            for w in 0..working.len() {
                let d = next[w] - mom[w];
                quad += grad[w] * d + 0.5 * l * d * d;
            }
            if f_next <= quad + 1e-12 * quad.abs().max(1.0) {
                u_cur = u_next;
                break;
            }
            l *= 2.0;
            if !l.is_finite() {
                return Err(Error::NonConvergence {
                    context: "lasso_logit line search".into(),
                    iterations: iters,
                    last_iterate: alpha.to_vec(),
                });
            }
        }
        let f_next = penalized_obj_local(&u_cur, t, &next, working, thresholds);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        if f_next > f_cur {
            // Adaptive restart: drop momentum.
            mom = cur.clone();
            tk = 1.0;
            continue;
        }
        let beta_mom = (tk - 1.0) / t_next;
        mom = (0..working.len())
            .map(|w| next[w] + beta_mom * (next[w] - cur[w]))
            .collect();
        tk = t_next;
        let change: f64 = (0..working.len())
            .map(|w| (next[w] - cur[w]).abs())
            .fold(0.0, f64::max);
        cur = next;
        f_cur = f_next;
        if cur.iter().any(|c| c.abs() > DIVERGE_NORM) {
            for (w, &j) in working.iter().enumerate() {
                alpha[j] = cur[w];
            }
            return Err(Error::NonConvergence {
                context: "lasso_logit diverging iterates (possible separation)".into(),
                iterations: iters,
                last_iterate: alpha.to_vec(),
            });
        }
        if change <= 1e-12 {
            break;
        }
        // Periodic KKT check restricted to the working set.
        if iters % 25 == 0 {
            let gu: Vec<f64> = u_cur
                .iter()
                .zip(t)
                .map(|(&ui, &ti)| (logistic(ui) - f64::from(ti)) / nf)
                .collect();
            let mut ok = true;
            for (w, &j) in working.iter().enumerate() {
                let g: f64 = cols.col(j).iter().zip(&gu).map(|(xi, gi)| xi * gi).sum();
                let viol = if thresholds[j] == 0.0 {
                    g.abs()
                } else if cur[w] == 0.0 {
                    (g.abs() - thresholds[j]).max(0.0)
                } else {
                    (g + cur[w].signum() * thresholds[j]).abs()
                };
                if viol > 0.5 * KKT_TOL {
                    ok = false;
                    break;
                }
            }
            if ok {
                break;
            }
        }
    }
    for (w, &j) in working.iter().enumerate() {
        alpha[j] = cur[w];
    }
    Ok(iters)
}

fn penalized_obj_local(
    u: &[f64],
    t: &[u8],
    coefs: &[f64],
    working: &[usize],
    thresholds: &[f64],
) -> f64 {
    let mut v = logit_objective(u, t);
    for (w, &j) in working.iter().enumerate() {
        v += thresholds[j] * coefs[w].abs();
    }
    v
}

/// Behavior of [`logit_newton`] when the iteration budget runs out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonMode {
    /// Exhausting the budget (or diverging) is a non-convergence error.
    Strict,
    /// Return the final iterate regardless; `converged` reports the truth.
    Capped,
}

/// Damped Newton for the unpenalized logistic MLE. Returns coefficients,
/// iterations used, and whether the gradient tolerance was met.
pub fn logit_newton(
    x: ArrayView2<'_, f64>,
    t: &[u8],
    max_iter: usize,
    mode: NewtonMode,
) -> Result<(Vec<f64>, usize, bool)> {
    let (n, p) = (x.nrows(), x.ncols());
    if t.len() != n {
        return Err(Error::Parameter(format!(
            "x has {n} rows but t has {}",
            t.len()
        )));
    }
    let ones = t.iter().filter(|&&ti| ti == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::DegenerateData(
            "logistic fit needs both classes present".into(),
        ));
    }
    let cols = Cols::from_view(&x);
    let nf = n as f64;
    let mut alpha = vec![0.0; p];
    let mut u = vec![0.0; n];
    let mut f = logit_objective(&u, t);
    let tol = 1e-9;
    for it in 1..=max_iter {
        let probs: Vec<f64> = u.iter().map(|&ui| logistic(ui)).collect();
        let grad: Vec<f64> = (0..p)
            .map(|j| {
                cols.col(j)
                    .iter()
                    .zip(probs.iter().zip(t))
                    .map(|(xi, (pi, &ti))| xi * (pi - f64::from(ti)))
                    .sum::<f64>()
                    / nf
            })
            .collect();
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm <= tol {
            return Ok((alpha, it - 1, true));
        }
        // Hessian X' diag(p(1-p)) X / n, ridged slightly for stability.
        let mut hess = Array2::zeros((p, p));
        for a in 0..p {
            for b in a..p {
                let mut s = 0.0;
                let ca = cols.col(a);
                let cb = cols.col(b);
                for i in 0..n {
                    s += ca[i] * cb[i] * probs[i] * (1.0 - probs[i]);
                }
                let v = s / nf;
                hess[[a, b]] = v;
                hess[[b, a]] = v;
            }
        }
        for j in 0..p {
            hess[[j, j]] += 1e-12;
        }
        let chol = RankCholesky::new(hess.view(), 1e-14);
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = chol.solve(&neg);
        let descent: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = alpha
                .iter()
                .zip(&step)
                .map(|(a, s)| a + scale * s)
                .collect();
            let mut u_cand = vec![0.0; n];
            for j in 0..p {
                cols.axpy_col(j, cand[j], &mut u_cand);
            }
            let f_cand = logit_objective(&u_cand, t);
            if f_cand <= f + 1e-4 * scale * descent || f_cand < f {
                alpha = cand;
                u = u_cand;
                f = f_cand;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || alpha.iter().any(|a| a.abs() > DIVERGE_NORM) {
            return match mode {
                NewtonMode::Strict => Err(Error::NonConvergence {
                    context: "logistic Newton (possible separation)".into(),
                    iterations: it,
                    last_iterate: alpha,
                }),
                NewtonMode::Capped => Ok((alpha, it, false)),
            };
        }
    }
    match mode {
        NewtonMode::Strict => Err(Error::NonConvergence {
            context: "logistic Newton iteration budget".into(),
            iterations: max_iter,
            last_iterate: alpha,
        }),
        NewtonMode::Capped => Ok((alpha, max_iter, false)),
    }
}

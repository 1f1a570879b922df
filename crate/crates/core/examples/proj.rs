//! Scratch: projection-stage forensics — per-column scores vs thresholds.

use dmlcqr::data::{make_folds, DesignMatrix};
use dmlcqr::nuisance::{
    compute_h, default_bandwidth, estimate_density, fit_censoring_prob, fit_pilot_qr,
    NuisanceConfig,
};
use dmlcqr::rng::stream_seed;
use dmlcqr::sim::{design_from_dataset, generate_replication, DgpConfig, Signal};
use dmlcqr::solvers::{
    initial_loadings_ls, lasso_ls, penalty_loadings, penalty_ls_level, post_lasso,
    LoadingProblem, PenaltyRule, PostLassoProblem,
};
use ndarray::Array2;

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

const SALT_FOLD: u64 = 0x4e55_4953;
const SALT_PILOT: u64 = 0x5049_4c4f;
const SALT_DENSITY: u64 = 0x4445_4e53;

fn main() {
    let tau = 0.5;
    let dgp = DgpConfig::benchmark(
        500,
        300,
        tau,
        Signal::R2 {
            r2_y: 0.75,
            r2_d: 0.75,
        },
        1,
    )
    .unwrap();
    let (_, c_d) = dgp.signal_scales().unwrap();
    println!("c_d = {c_d:.4}, true mu coefs: {:?}", &dgp.nu_d[..10].iter().map(|v| (v * c_d * 1000.0).round() / 1000.0).collect::<Vec<_>>());

    for rep in [1u64, 3, 11] {
        let data = generate_replication(&dgp, stream_seed(1, rep)).unwrap();
        let (design, _) = design_from_dataset(&data).unwrap();
        let folds = make_folds(data.n(), 2, stream_seed(2, rep)).unwrap();
        let rule = PenaltyRule::default_for(data.n(), stream_seed(3, rep));
        let cfg = NuisanceConfig::default();

        for fold in 0..2usize {
            let aux = folds.complement(fold);
            let target = folds.fold(fold);
            let fold_seed = stream_seed(stream_seed(rule.seed, SALT_FOLD), fold as u64);

            let cens = fit_censoring_prob(&data, &design, &aux, &target, &cfg, &rule).unwrap();
            let (h_aux, keep_aux) = compute_h(&cens.pi_aux, tau).unwrap();
            let pilot_rule = PenaltyRule { seed: stream_seed(fold_seed, SALT_PILOT), ..rule.clone() };
            let _pilot = fit_pilot_qr(&data, &design, &aux, &h_aux, &keep_aux, &cfg, &pilot_rule).unwrap();
            let bandwidth = default_bandwidth(aux.len(), tau);
            let density_rule = PenaltyRule { seed: stream_seed(fold_seed, SALT_DENSITY), ..rule.clone() };
            let dens = estimate_density(
                &data, &design, &aux, &target, &cens.pi_aux, &cens.pi_target, tau, bandwidth,
                &cfg, &density_rule,
            )
            .unwrap();

            // fit_projection internals
            let x_aux = design_rows(&design, &aux);
            let d_aux: Vec<f64> = aux.iter().map(|&i| data.d[i]).collect();
            let weights: Vec<f64> = aux
                .iter()
                .enumerate()
                .map(|(r, &i)| f64::from(keep_aux[r] & data.t[i]) * dens.f_aux[r])
                .collect();
            let nf = aux.len() as f64;
            let wmean = weights.iter().sum::<f64>() / nf;
            let wmax = weights.iter().cloned().fold(0.0f64, f64::max);
            let lambda3 = penalty_ls_level(aux.len(), design.p(), &rule).unwrap();
            let initial = initial_loadings_ls(x_aux.view(), &d_aux, &weights, &[0]);
            let loadings = penalty_loadings(
                &LoadingProblem::Ls { x: x_aux.view(), y: &d_aux, weights: &weights },
                lambda3,
                &initial,
                cfg.loading_rounds,
            )
            .unwrap();
            // Null-model score: intercept-only weighted fit.
            let dbar = weights
                .iter()
                .zip(&d_aux)
                .map(|(w, d)| w * d)
                .sum::<f64>()
                / weights.iter().sum::<f64>();
            println!(
                "\nrep {rep} fold {fold}: lam3={lambda3:.1} wmean={wmean:.3} wmax={wmax:.2} dbar={dbar:.3} caps={} f_aux range=[{:.3},{:.3}]",
                dens.caps,
                dens.f_aux.iter().cloned().fold(f64::INFINITY, f64::min),
                dens.f_aux.iter().cloned().fold(0.0f64, f64::max),
            );
            println!("  col   score      init_G    iter_G    thr(iter)  true_coef");
            for j in 1..=12usize {
                let mut score = 0.0;
                for r in 0..aux.len() {
                    score += weights[r] * x_aux[[r, j]] * (d_aux[r] - dbar);
                }
                score /= nf;
                let thr = lambda3 * loadings[j] / (2.0 * nf);
                let truec = if j <= 10 { c_d * dgp.nu_d[j - 1] } else { 0.0 };
                println!(
                    "  z{:<4} {:+.4}  {:.4}   {:.4}   {:.4}    {:+.3} {}",
                    j, score, initial[j], loadings[j], thr, truec,
                    if score.abs() > thr { "IN" } else { "" }
                );
            }
            let fit = lasso_ls(x_aux.view(), &d_aux, &weights, lambda3, &loadings).unwrap();
            let (refit, _) = post_lasso(
                &fit,
                &PostLassoProblem::Ls { x: x_aux.view(), y: &d_aux, weights: &weights },
                &[0],
            )
            .unwrap();
            let names: Vec<String> = refit.support.iter().map(|&j| design.names[j].clone()).collect();
            println!("  lasso support: {:?}", fit.support.iter().map(|&j| design.names[j].clone()).collect::<Vec<_>>());
            println!("  post support: {names:?}");

            // Side fits by pure Lasso (no refit): shrunk slope differences.
            {
                let aug = {
                    let p = design.p();
                    let mut out = Array2::zeros((aux.len(), p + 1));
                    for (r, &i) in aux.iter().enumerate() {
                        out[[r, 0]] = data.d[i];
                        for j in 0..p {
                            out[[r, 1 + j]] = design.x[[i, j]];
                        }
                    }
                    out
                };
                let y_aux: Vec<f64> = aux.iter().map(|&i| data.y[i]).collect();
                let nf2 = aux.len() as f64;
                let side = |u: f64, salt: u64| -> Vec<f64> {
                    let (h_u, keep_u) = compute_h(&cens.pi_aux, u).unwrap();
                    let keep_solver: Vec<u8> = aux
                        .iter()
                        .enumerate()
                        .map(|(r, &i)| keep_u[r] & data.t[i])
                        .collect();
                    let stat: Vec<f64> = (0..aug.ncols())
                        .map(|j| {
                            (aug.column(j).iter().map(|v| v * v).sum::<f64>() / nf2).sqrt()
                        })
                        .collect();
                    let srule = PenaltyRule {
                        seed: stream_seed(stream_seed(fold_seed, SALT_DENSITY), salt),
                        ..rule.clone()
                    };
                    let lam = dmlcqr::solvers::penalty_qr_level(
                        aug.view(),
                        &keep_solver,
                        &h_u,
                        &stat,
                        &srule,
                    )
                    .unwrap();
                    let mut sl = stat.clone();
                    sl[1] = 0.0;
                    dmlcqr::solvers::lasso_qr(aug.view(), &y_aux, &keep_solver, &h_u, lam, &sl)
                        .unwrap()
                        .coefficients
                };
                let cp = side(tau + bandwidth, 1);
                let cm = side(tau - bandwidth, 2);
                let mut fmin = f64::INFINITY;
                let mut fmax = 0.0f64;
                let mut fsum = 0.0;
                let mut ncap = 0usize;
                let floor_s = 1e-3 * 3.5;
                let f_l: Vec<f64> = aux
                    .iter()
                    .enumerate()
                    .map(|(r, &_i)| {
                        let mut s = (cp[0] - cm[0]) * aug[[r, 0]];
                        for j in 1..aug.ncols() {
                            s += (cp[j] - cm[j]) * aug[[r, j]];
                        }
                        if s < floor_s {
                            ncap += 1;
                        }
                        let f = 2.0 * bandwidth / s.max(floor_s);
                        fmin = fmin.min(f);
                        fmax = fmax.max(f);
                        fsum += f;
                        f
                    })
                    .collect();
                let w_l: Vec<f64> = aux
                    .iter()
                    .enumerate()
                    .map(|(r, &i)| f64::from(keep_aux[r] & data.t[i]) * f_l[r])
                    .collect();
                let initial_l = initial_loadings_ls(x_aux.view(), &d_aux, &w_l, &[0]);
                let loadings_l = penalty_loadings(
                    &LoadingProblem::Ls { x: x_aux.view(), y: &d_aux, weights: &w_l },
                    lambda3,
                    &initial_l,
                    cfg.loading_rounds,
                )
                .unwrap();
                let fit_l = lasso_ls(x_aux.view(), &d_aux, &w_l, lambda3, &loadings_l).unwrap();
                println!(
                    "  lasso-f: f in [{:.3},{:.3}] mean={:.3} caps={} -> proj support {:?}",
                    fmin,
                    fmax,
                    fsum / nf2,
                    ncap,
                    fit_l.support.iter().map(|&j| design.names[j].clone()).collect::<Vec<_>>()
                );
            }

            // Same fit with the true constant density in the weights.
            let w_true: Vec<f64> = aux
                .iter()
                .enumerate()
                .map(|(r, &i)| f64::from(keep_aux[r] & data.t[i]) * 0.39894)
                .collect();
            let initial_t = initial_loadings_ls(x_aux.view(), &d_aux, &w_true, &[0]);
            let loadings_t = penalty_loadings(
                &LoadingProblem::Ls { x: x_aux.view(), y: &d_aux, weights: &w_true },
                lambda3,
                &initial_t,
                cfg.loading_rounds,
            )
            .unwrap();
            let fit_t = lasso_ls(x_aux.view(), &d_aux, &w_true, lambda3, &loadings_t).unwrap();
            println!(
                "  true-f lasso support: {:?}",
                fit_t.support.iter().map(|&j| design.names[j].clone()).collect::<Vec<_>>()
            );
        }
    }
}

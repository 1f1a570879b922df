//! Scratch diagnostics for the benchmark design (not part of the crate API).

use dmlcqr::data::{make_folds, Dataset, DesignMatrix};
use dmlcqr::nuisance::{
    compute_h, default_bandwidth, fit_censoring_prob, fit_pilot_qr, NuisanceConfig,
};
use dmlcqr::rng::stream_seed;
use dmlcqr::sim::{design_from_dataset, generate_replication, DgpConfig, Signal};
use dmlcqr::solvers::{lasso_qr, PenaltyRule};
use dmlcqr_testkit::{normal_inverse, qr_lp, qr_objective};
use ndarray::Array2;

const SALT_DENSITY: u64 = 0x4445_4e53;
const SALT_FOLD: u64 = 0x4e55_4953;

fn quantiles(label: &str, v: &[f64]) {
    if v.is_empty() {
        println!("   {label}: empty");
        return;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |f: f64| s[((s.len() - 1) as f64 * f).round() as usize];
    println!(
        "   {label}: n={} min={:.4} q10={:.4} q50={:.4} q90={:.4} max={:.4}",
        s.len(),
        q(0.0),
        q(0.1),
        q(0.5),
        q(0.9),
        q(1.0)
    );
}

fn augmented(data: &Dataset, design: &DesignMatrix, rows: &[usize]) -> Array2<f64> {
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

#[allow(clippy::too_many_arguments)]
fn side_forensics(
    data: &Dataset,
    design: &DesignMatrix,
    dgp: &DgpConfig,
    aux: &[usize],
    pi_aux: &[f64],
    u: f64,
    seed: u64,
    cfg: &NuisanceConfig,
    rule: &PenaltyRule,
) -> Vec<f64> {
    let (h_u, keep_u) = compute_h(pi_aux, u).unwrap();
    let t_aux: Vec<u8> = aux.iter().map(|&i| data.t[i]).collect();
    let keep_solver: Vec<u8> = (0..aux.len()).map(|r| keep_u[r] & t_aux[r]).collect();
    let kept: usize = keep_solver.iter().map(|&k| usize::from(k)).sum();
    let h_kept: Vec<f64> = (0..aux.len())
        .filter(|&r| keep_solver[r] == 1)
        .map(|r| h_u[r])
        .collect();
    println!("   side u={u}: kept(t&keep)={kept}");
    quantiles("h_u kept", &h_kept);

    let side_rule = PenaltyRule {
        seed,
        ..rule.clone()
    };
    let pilot = fit_pilot_qr(data, design, aux, &h_u, &keep_u, cfg, &side_rule).unwrap();
    let mut coef = Vec::with_capacity(design.p() + 1);
    coef.push(pilot.theta);
    coef.extend_from_slice(&pilot.beta);
    let support: Vec<(usize, f64)> = coef
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0.0)
        .map(|(j, &c)| (j, c))
        .collect();
    println!(
        "   side u={u}: lambda2={:.2} support={:?}",
        pilot.lambda2, support
    );

    // Objective comparisons on the auxiliary problem.
    let aug = augmented(data, design, aux);
    let y_aux: Vec<f64> = aux.iter().map(|&i| data.y[i]).collect();
    let zero_loadings = vec![0.0; aug.ncols()];
    let obj_refit = qr_objective(
        aug.view(),
        &y_aux,
        &keep_solver,
        &h_u,
        0.0,
        &zero_loadings,
        &coef,
    );

    // True side coefficients: theta, then intercept with the u-quantile shift.
    let (c_y, _) = dgp.signal_scales().unwrap();
    let mut truth = vec![0.0; design.p() + 1];
    truth[0] = dgp.theta;
    truth[1] = c_y * dgp.nu_y[0] + normal_inverse(u).unwrap();
    for j in 0..dgp.p {
        truth[2 + j] = c_y * dgp.nu_y[j + 1];
    }
    let obj_truth = qr_objective(
        aug.view(),
        &y_aux,
        &keep_solver,
        &h_u,
        0.0,
        &zero_loadings,
        &truth,
    );

    // LP refit on the same support (exact optimum of the refit problem).
    let support_cols: Vec<usize> = {
        let mut s: Vec<usize> = support.iter().map(|&(j, _)| j).collect();
        for forced in [0usize, 1] {
            if !s.contains(&forced) {
                s.push(forced);
            }
        }
        s.sort_unstable();
        s
    };
    let mut sub = Array2::zeros((aux.len(), support_cols.len()));
    for r in 0..aux.len() {
        for (k, &j) in support_cols.iter().enumerate() {
            sub[[r, k]] = aug[[r, j]];
        }
    }
    let lp_coef = qr_lp(
        sub.view(),
        &y_aux,
        &keep_solver,
        &h_u,
        0.0,
        &vec![0.0; support_cols.len()],
    )
    .unwrap();
    let obj_lp = qr_objective(
        sub.view(),
        &y_aux,
        &keep_solver,
        &h_u,
        0.0,
        &vec![0.0; support_cols.len()],
        &lp_coef,
    );
    println!(
        "   side u={u}: refit_obj={obj_refit:.6} lp_refit_obj={obj_lp:.6} truth_obj={obj_truth:.6}"
    );

    // Penalized-stage optimization quality: rerun the lasso stage exactly as
    // fit_pilot_qr does and compare to the LP optimum of the same program.
    let nf = aux.len() as f64;
    let stat_loadings: Vec<f64> = (0..aug.ncols())
        .map(|j| (aug.column(j).iter().map(|v| v * v).sum::<f64>() / nf).sqrt())
        .collect();
    let mut solver_loadings = stat_loadings;
    solver_loadings[1] = 0.0;
    let fit = lasso_qr(
        aug.view(),
        &y_aux,
        &keep_solver,
        &h_u,
        pilot.lambda2,
        &solver_loadings,
    )
    .unwrap();
    let obj_mine = qr_objective(
        aug.view(),
        &y_aux,
        &keep_solver,
        &h_u,
        pilot.lambda2,
        &solver_loadings,
        &fit.coefficients,
    );
    let lp_full = qr_lp(
        aug.view(),
        &y_aux,
        &keep_solver,
        &h_u,
        pilot.lambda2,
        &solver_loadings,
    );
    match lp_full {
        Ok(lp_c) => {
            let obj_lp_full = qr_objective(
                aug.view(),
                &y_aux,
                &keep_solver,
                &h_u,
                pilot.lambda2,
                &solver_loadings,
                &lp_c,
            );
            let lp_support: Vec<usize> = lp_c
                .iter()
                .enumerate()
                .filter(|(_, &c)| c.abs() > 1e-9)
                .map(|(j, _)| j)
                .collect();
            println!(
                "   side u={u}: lasso_obj={obj_mine:.6} lp_lasso_obj={obj_lp_full:.6} gap={:.2e} lp_support={lp_support:?}",
                obj_mine - obj_lp_full
            );
        }
        Err(e) => println!("   side u={u}: full LP failed: {e}"),
    }
    coef
}

fn main() {
    let dgp = DgpConfig::benchmark(
        500,
        300,
        0.5,
        Signal::R2 {
            r2_y: 0.75,
            r2_d: 0.75,
        },
        1,
    )
    .unwrap();
    let data = generate_replication(&dgp, stream_seed(1, 0)).unwrap();
    let (design, _) = design_from_dataset(&data).unwrap();
    let folds = make_folds(data.n(), 2, 7).unwrap();
    let rule = PenaltyRule::default_for(data.n(), 99);
    let cfg = NuisanceConfig::default();
    let tau = 0.5;
    let bandwidth = default_bandwidth(250, tau);
    println!("bandwidth={bandwidth}");

    for fold in 0..2usize {
        let aux = folds.complement(fold);
        println!("== fold {fold}: aux={}", aux.len());
        let target = folds.fold(fold);
        let cens = fit_censoring_prob(&data, &design, &aux, &target, &cfg, &rule).unwrap();
        let fold_seed = stream_seed(stream_seed(rule.seed, SALT_FOLD), fold as u64);
        let density_seed = stream_seed(fold_seed, SALT_DENSITY);
        let coef_plus = side_forensics(
            &data,
            &design,
            &dgp,
            &aux,
            &cens.pi_aux,
            tau + bandwidth,
            stream_seed(density_seed, 1),
            &cfg,
            &rule,
        );
        let coef_minus = side_forensics(
            &data,
            &design,
            &dgp,
            &aux,
            &cens.pi_aux,
            tau - bandwidth,
            stream_seed(density_seed, 2),
            &cfg,
            &rule,
        );
        // Spacing over kept target rows.
        let (_, keep_t) = compute_h(&cens.pi_target, tau).unwrap();
        let spacing: Vec<f64> = target
            .iter()
            .enumerate()
            .filter(|&(r, _)| keep_t[r] == 1)
            .map(|(_, &i)| {
                let mut s = (coef_plus[0] - coef_minus[0]) * data.d[i];
                for j in 0..design.p() {
                    s += (coef_plus[1 + j] - coef_minus[1 + j]) * design.x[[i, j]];
                }
                s
            })
            .collect();
        quantiles("spacing kept target", &spacing);
        let neg = spacing.iter().filter(|&&s| s < 0.0).count();
        println!("   crossings(kept target)={neg}/{}", spacing.len());
    }
}

//! Scratch: selection quality of the logit stage at the benchmark scale.

use dmlcqr::data::{make_folds, Dataset, DesignMatrix};
use dmlcqr::math::logistic;
use dmlcqr::rng::stream_seed;
use dmlcqr::sim::{design_from_dataset, generate_replication, DgpConfig, Signal};
use dmlcqr::solvers::{
    initial_loadings_logit, lasso_logit, penalty_loadings, penalty_logit_level, post_lasso,
    LoadingProblem, PenaltyRule, PostLassoProblem,
};
use dmlcqr_testkit::normal_cdf;
use ndarray::Array2;

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
    let (c_y, _) = dgp.signal_scales().unwrap();

    for rep in 0..3u64 {
        let data = generate_replication(&dgp, stream_seed(1, rep)).unwrap();
        let (design, _) = design_from_dataset(&data).unwrap();
        let folds = make_folds(data.n(), 2, stream_seed(2, rep)).unwrap();
        let aux = folds.complement(0);
        let target = folds.fold(0);
        let censor = data.censor_value.clone().unwrap();

        let aug = augmented(&data, &design, &aux);
        let t_aux: Vec<u8> = aux.iter().map(|&i| data.t[i]).collect();
        let rule = PenaltyRule::default_for(data.n(), stream_seed(3, rep));
        let lambda1 = penalty_logit_level(aux.len(), design.p(), &rule).unwrap();
        println!("rep {rep}: lambda1={lambda1:.2} (aux n={}, p={})", aux.len(), design.p());

        let pi_true = |i: usize| -> f64 {
            let mut m = data.d[i] * dgp.theta + c_y * dgp.nu_y[0];
            for j in 0..dgp.p {
                m += c_y * dgp.nu_y[j + 1] * design.x[[i, 1 + j]];
            }
            normal_cdf(m - censor[i])
        };

        for scale in [1.0, 0.75, 0.5, 0.33, 0.25] {
            let lam = lambda1 * scale;
            let initial = initial_loadings_logit(aug.view(), &t_aux, &[1]);
            let loadings =
                penalty_loadings(&LoadingProblem::Logit { x: aug.view(), t: &t_aux }, lam, &initial, 2)
                    .unwrap();
            let fit = lasso_logit(aug.view(), &t_aux, lam, &loadings).unwrap();
            let (refit, _) = post_lasso(
                &fit,
                &PostLassoProblem::Logit { x: aug.view(), t: &t_aux },
                &[1],
            )
            .unwrap();
            // names: col 0 = d, 1 = intercept, 1+j = design col j (z_j at j>=1)
            let support: Vec<String> = refit
                .support
                .iter()
                .map(|&j| match j {
                    0 => "d".to_string(),
                    1 => "1".to_string(),
                    _ => format!("z{}", j - 1),
                })
                .collect();
            // RMSE of pi on the target fold.
            let mut sse = 0.0;
            for &i in &target {
                let mut u = refit.coefficients[0] * data.d[i];
                for j in 0..design.p() {
                    u += refit.coefficients[1 + j] * design.x[[i, j]];
                }
                let pi = logistic(u).clamp(1e-4, 1.0 - 1e-4);
                let diff = pi - pi_true(i);
                sse += diff * diff;
            }
            let rmse = (sse / target.len() as f64).sqrt();
            println!(
                "  scale={scale:.2} lam={lam:7.2} support={support:?} pi_rmse={rmse:.4}"
            );
        }
    }
}

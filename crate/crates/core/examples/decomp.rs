//! Scratch: bias decomposition by swapping true nuisance components in.

use dmlcqr::data::{make_folds, Dataset, DesignMatrix};
use dmlcqr::dml::{estimate_from_nuisances, DmlConfig};
use dmlcqr::math::normal_quantile;
use dmlcqr::nuisance::{
    compute_h, fit_censoring_prob, fit_fold_nuisance, fit_projection, NuisanceConfig, NuisanceFit,
};
use dmlcqr::rng::stream_seed;
use dmlcqr::sim::{design_from_dataset, generate_replication, DgpConfig, Signal};
use dmlcqr::solvers::PenaltyRule;
use dmlcqr_testkit::{normal_cdf, normal_pdf};

struct Truth {
    theta: f64,
    beta: Vec<f64>,    // design-aligned, tau-quantile intercept shift included
    mu: Vec<f64>,      // design-aligned projection of d on x
    f_const: f64,      // conditional density at the tau-quantile
    censor: Vec<f64>,  // per-row censoring points
}

fn truth_for(dgp: &DgpConfig, data: &Dataset, design: &DesignMatrix) -> Truth {
    let (c_y, c_d) = dgp.signal_scales().unwrap();
    let q = normal_quantile(dgp.tau).unwrap();
    let mut beta = vec![0.0; design.p()];
    let mut mu = vec![0.0; design.p()];
    beta[0] = c_y * dgp.nu_y[0] + q;
    mu[0] = c_d * dgp.nu_d[0];
    for j in 0..dgp.p {
        beta[1 + j] = c_y * dgp.nu_y[j + 1];
        mu[1 + j] = c_d * dgp.nu_d[j + 1];
    }
    Truth {
        theta: dgp.theta,
        beta,
        mu,
        f_const: normal_pdf(q),
        censor: data.censor_value.clone().unwrap(),
    }
}

fn pi_true(truth: &Truth, dgp: &DgpConfig, data: &Dataset, design: &DesignMatrix, i: usize) -> f64 {
    let (c_y, _) = dgp.signal_scales().unwrap();
    let mut m = data.d[i] * truth.theta + c_y * dgp.nu_y[0];
    for j in 0..dgp.p {
        m += c_y * dgp.nu_y[j + 1] * design.x[[i, 1 + j]];
    }
    normal_cdf(m - truth.censor[i]).clamp(1e-4, 1.0 - 1e-4)
}

fn main() {
    let reps = 12u64;
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
    let variants = ["est", "t-pi", "t-beta", "t-mu", "t-f", "tfmu", "true"];
    let mut thetas: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    let mut ses: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    let mut fails = vec![0usize; variants.len()];

    for rep in 0..reps {
        let data = generate_replication(&dgp, stream_seed(1, rep)).unwrap();
        let (design, _) = design_from_dataset(&data).unwrap();
        let truth = truth_for(&dgp, &data, &design);
        let cfg = DmlConfig::new(tau, 2, stream_seed(2, rep), data.n());
        let folds = make_folds(data.n(), cfg.k, cfg.seed).unwrap();
        let ncfg = NuisanceConfig::default();
        let rule = PenaltyRule::default_for(data.n(), stream_seed(3, rep));

        let mut base: Vec<NuisanceFit> = Vec::new();
        let mut diags = Vec::new();
        let mut ok = true;
        for j in 0..cfg.k {
            let aux = folds.complement(j);
            let target = folds.fold(j);
            match fit_fold_nuisance(&data, &design, tau, &aux, &target, &ncfg, &rule, j) {
                Ok((fit, diag)) => {
                    base.push(fit);
                    diags.push(diag);
                }
                Err(e) => {
                    println!("rep {rep}: nuisance failure: {e}");
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            for f in fails.iter_mut() {
                *f += 1;
            }
            continue;
        }
        for d in &diags {
            println!(
                "rep {rep} fold {}: kept={} logit_s={} pilot_s={} proj_s={} caps={} cross={} pilot_th={:+.3} lam2={:.1} pi=[{:.3},{:.3}]",
                d.fold, d.kept_aux, d.logit_support, d.pilot_support, d.projection_support,
                d.density_caps, d.density_crossings, d.theta_pilot, d.lambda2, d.pi_min, d.pi_max
            );
        }

        for (vi, &name) in variants.iter().enumerate() {
            let mut fits = base.clone();
            for (j, fit) in fits.iter_mut().enumerate() {
                let target = folds.fold(j);
                if name == "t-pi" || name == "true" {
                    let pi: Vec<f64> = target
                        .iter()
                        .map(|&i| pi_true(&truth, &dgp, &data, &design, i))
                        .collect();
                    let (h, keep) = compute_h(&pi, tau).unwrap();
                    fit.pi_hat = pi;
                    fit.h_hat = h;
                    fit.keep = keep;
                }
                if name == "t-beta" || name == "true" {
                    fit.beta_pilot = truth.beta.clone();
                    fit.theta_pilot = truth.theta;
                }
                if name == "t-mu" || name == "true" {
                    fit.mu_hat = truth.mu.clone();
                    fit.v_hat = target
                        .iter()
                        .map(|&i| {
                            let mut pred = 0.0;
                            for c in 0..design.p() {
                                pred += truth.mu[c] * design.x[[i, c]];
                            }
                            data.d[i] - pred
                        })
                        .collect();
                }
                if name == "t-f" || name == "true" {
                    fit.f_hat = vec![truth.f_const; target.len()];
                }
                if name == "tfmu" {
                    // True constant density in the projection weights, then
                    // refit the projection: isolates the f-noise channel.
                    let aux = folds.complement(j);
                    let cens =
                        fit_censoring_prob(&data, &design, &aux, &target, &ncfg, &rule).unwrap();
                    let (_, keep_aux) = compute_h(&cens.pi_aux, tau).unwrap();
                    let f_aux = vec![truth.f_const; aux.len()];
                    let proj = fit_projection(
                        &data, &design, &aux, &target, &keep_aux, &f_aux, &ncfg, &rule,
                    )
                    .unwrap();
                    fit.mu_hat = proj.mu.clone();
                    fit.v_hat = proj.v_target.clone();
                    fit.f_hat = vec![truth.f_const; target.len()];
                }
            }
            match estimate_from_nuisances(&data, &design, &folds, &fits, diags.clone(), &cfg) {
                Ok(est) => {
                    if name == "est" || name == "t-mu" {
                        println!("rep {rep} {name}: theta={:+.4} se={:.4}", est.theta, est.se);
                    }
                    thetas[vi].push(est.theta);
                    ses[vi].push(est.se);
                }
                Err(e) => {
                    fails[vi] += 1;
                    println!("rep {rep} variant {name}: {e}");
                }
            }
        }
    }

    println!("\nvariant   n_ok  bias      sd        rmse      mean_se");
    for (vi, &name) in variants.iter().enumerate() {
        let v = &thetas[vi];
        if v.is_empty() {
            println!("{name:9} 0     all failed");
            continue;
        }
        let nf = v.len() as f64;
        let mean = v.iter().sum::<f64>() / nf;
        let bias = mean - dgp.theta;
        let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf).sqrt();
        let rmse = (bias * bias + sd * sd).sqrt();
        let mse = ses[vi].iter().sum::<f64>() / nf;
        println!(
            "{name:9} {:4}  {bias:+.4}   {sd:.4}    {rmse:.4}    {mse:.4}",
            v.len()
        );
    }
}

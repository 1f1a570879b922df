//! End-to-end runs of the cross-fitted estimator on simulated data.

use dmlcqr::dml::{estimate_dml, DmlConfig, DmlMode};
use dmlcqr::sim::{design_from_dataset, generate_replication, DgpConfig, Signal};
use dmlcqr::solvers::PenaltyRule;

fn benchmark_estimate(n: usize, p: usize, tau: f64, k: usize, seed: u64) -> dmlcqr::dml::DmlEstimate {
    let dgp = DgpConfig::benchmark(n, p, tau, Signal::R2 { r2_y: 0.75, r2_d: 0.75 }, seed).unwrap();
    let data = generate_replication(&dgp, seed).unwrap();
    let (design, report) = design_from_dataset(&data).unwrap();
    assert!(report.dropped.is_empty());
    let mut cfg = DmlConfig::new(tau, k, seed, data.n());
    cfg.penalty = PenaltyRule::default_for(data.n(), seed ^ 0x9e37);
    estimate_dml(&data, &design, &cfg).unwrap()
}

#[test]
fn benchmark_replication_medians() {
    let est = benchmark_estimate(500, 300, 0.5, 2, 4242);
    assert!(est.theta.is_finite());
    assert!(est.se > 0.0);
    assert!(
        (est.theta - 1.0).abs() < 0.6,
        "theta = {} should be in the truth's neighborhood",
        est.theta
    );
    assert!(est.ci_lo < est.theta && est.theta < est.ci_hi);
    assert_eq!(est.k, 2);
    assert_eq!(est.diagnostics.folds.len(), 2);
    // CI reconstruction from the reported pieces.
    let z = (est.ci_hi - est.theta) / est.se;
    assert!((z - 1.959964).abs() < 1e-4, "z = {z}");
}

#[test]
fn dml1_equals_fold_mean_and_modes_agree_roughly() {
    let dgp = DgpConfig::benchmark(
        600,
        20,
        0.5,
        Signal::Coef { c_y: 0.3, c_d: 0.3 },
        99,
    )
    .unwrap();
    let data = generate_replication(&dgp, 7).unwrap();
    let (design, _) = design_from_dataset(&data).unwrap();
    let mut cfg = DmlConfig::new(0.5, 2, 11, data.n());
    cfg.mode = DmlMode::Dml1;
    let est1 = estimate_dml(&data, &design, &cfg).unwrap();
    let fold_mean =
        est1.per_fold_theta.iter().sum::<f64>() / est1.per_fold_theta.len() as f64;
    assert!((est1.theta - fold_mean).abs() < 1e-12);

    cfg.mode = DmlMode::Dml2;
    let est2 = estimate_dml(&data, &design, &cfg).unwrap();
    assert!(est2.per_fold_theta.is_empty());
    assert!(
        (est1.theta - est2.theta).abs() < 0.5,
        "modes disagree: {} vs {}",
        est1.theta,
        est2.theta
    );
}

#[test]
fn k1_is_rejected() {
    let dgp = DgpConfig::benchmark(
        200,
        15,
        0.5,
        Signal::Coef { c_y: 0.2, c_d: 0.2 },
        3,
    )
    .unwrap();
    let data = generate_replication(&dgp, 3).unwrap();
    let (design, _) = design_from_dataset(&data).unwrap();
    let cfg = DmlConfig::new(0.5, 1, 3, data.n());
    let err = estimate_dml(&data, &design, &cfg).unwrap_err();
    assert!(err.to_string().contains("2 folds"), "{err}");
}

#[test]
fn estimate_is_deterministic() {
    let a = benchmark_estimate(400, 15, 0.75, 2, 31);
    let b = benchmark_estimate(400, 15, 0.75, 2, 31);
    assert_eq!(a.theta.to_bits(), b.theta.to_bits());
    assert_eq!(a.se.to_bits(), b.se.to_bits());
    assert_eq!(a.ci_lo.to_bits(), b.ci_lo.to_bits());
}

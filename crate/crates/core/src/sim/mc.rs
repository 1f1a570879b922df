//! Replication studies: per-replication estimator runs, Table-style summary
//! metrics, and rejection-frequency grids over signal-strength designs.

use super::{
    design_from_dataset, estimator_hdcqr, estimator_naive_ps, estimator_oracle,
    generate_replication, DgpConfig, Signal,
};
use crate::data::DesignMatrix;
use crate::dml::{estimate_dml, DmlConfig, DmlMode};
use crate::math::{mean, normal_quantile};
use crate::rng::stream_seed;
use crate::solvers::{PenaltyOverrides, PenaltyRule};
use crate::{Error, Result};
use rayon::prelude::*;

const STREAM_EST: u64 = 0x4553_5400;
const STREAM_CELL: u64 = 0x4345_4c4c;

/// Which estimator a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Dmlcqr,
    NaivePs,
    Hdcqr,
    Oracle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Dmlcqr,
        EstimatorKind::NaivePs,
        EstimatorKind::Hdcqr,
        EstimatorKind::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Dmlcqr => "dmlcqr",
            EstimatorKind::NaivePs => "naive_ps",
            EstimatorKind::Hdcqr => "hdcqr",
            EstimatorKind::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dmlcqr" => Ok(EstimatorKind::Dmlcqr),
            "naive_ps" => Ok(EstimatorKind::NaivePs),
            "hdcqr" => Ok(EstimatorKind::Hdcqr),
            "oracle" => Ok(EstimatorKind::Oracle),
            other => Err(Error::Parameter(format!(
                "unknown estimator '{other}' (valid: dmlcqr, naive_ps, hdcqr, oracle)"
            ))),
        }
    }
}

/// Study specification. The DGP's seed is the base seed; replication `r`
/// uses the derived stream `stream_seed(seed, r)`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub estimators: Vec<EstimatorKind>,
    pub reps: usize,
    /// Folds for the cross-fitted estimator.
    pub k: usize,
    pub mode: DmlMode,
    pub ci_level: f64,
    /// Adjustments applied on top of each replication's data-driven
    /// penalty rule.
    pub penalty: PenaltyOverrides,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.estimators.is_empty() {
            return Err(Error::Parameter("no estimators requested".into()));
        }
        if self.k < 2 {
            return Err(Error::Parameter(format!(
                "cross-fitting requires at least 2 folds, got {}",
                self.k
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Parameter(format!(
                "confidence level must lie in (0,1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }
}

/// One estimator run inside one replication.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub estimator: EstimatorKind,
    pub theta: f64,
    pub se: f64,
    pub failed: bool,
    pub message: Option<String>,
}

/// Summary metrics for one estimator. The SD uses the population
/// denominator (divide by the replication count), so
/// `rmse^2 = bias^2 + sd^2` holds exactly.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EstimatorMetrics {
    pub estimator: EstimatorKind,
    pub reps_used: usize,
    pub failures: usize,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mean_se: f64,
    /// Share of replications whose CI excludes the truth.
    pub rejection_rate: f64,
    pub coverage: f64,
    pub single_rep: bool,
}

/// Full study output.
#[derive(Debug, Clone, serde::Serialize)]
pub struct McReport {
    pub theta_true: f64,
    pub tau: f64,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    /// Denominator convention used by `sd`.
    pub sd_denominator: &'static str,
    pub metrics: Vec<EstimatorMetrics>,
    pub records: Vec<RepRecord>,
}

/// Metrics for one estimator from its replication records. Failed records
/// are excluded from every average and counted separately.
pub fn metrics_from_records(
    estimator: EstimatorKind,
    records: &[RepRecord],
    theta_true: f64,
    ci_level: f64,
) -> Result<EstimatorMetrics> {
    let z = normal_quantile(1.0 - (1.0 - ci_level) / 2.0)?;
    let ok: Vec<&RepRecord> = records.iter().filter(|r| !r.failed).collect();
    let failures = records.len() - ok.len();
    let used = ok.len();
    if used == 0 {
        return Ok(EstimatorMetrics {
            estimator,
            reps_used: 0,
            failures,
            bias: 0.0,
            sd: 0.0,
            rmse: 0.0,
            mae: 0.0,
            mean_se: 0.0,
            rejection_rate: 0.0,
            coverage: 0.0,
            single_rep: false,
        });
    }
    let thetas: Vec<f64> = ok.iter().map(|r| r.theta).collect();
    let m = mean(&thetas);
    let bias = m - theta_true;
    let nf = used as f64;
    let var = thetas.iter().map(|&t| (t - m) * (t - m)).sum::<f64>() / nf;
    let mse = thetas
        .iter()
        .map(|&t| (t - theta_true) * (t - theta_true))
        .sum::<f64>()
        / nf;
    let mae = thetas.iter().map(|&t| (t - theta_true).abs()).sum::<f64>() / nf;
    let mean_se = mean(&ok.iter().map(|r| r.se).collect::<Vec<_>>());
    let rejections = ok
        .iter()
        .filter(|r| (r.theta - theta_true).abs() > z * r.se)
        .count();
    let rejection_rate = rejections as f64 / nf;
    Ok(EstimatorMetrics {
        estimator,
        reps_used: used,
        failures,
        bias,
        sd: var.sqrt(),
        rmse: mse.sqrt(),
        mae,
        mean_se,
        rejection_rate,
        coverage: 1.0 - rejection_rate,
        single_rep: used == 1,
    })
}

fn run_one_estimator(
    kind: EstimatorKind,
    data: &crate::data::Dataset,
    design: &DesignMatrix,
    cfg: &McConfig,
    est_seed: u64,
) -> Result<(f64, f64)> {
    let tau = cfg.dgp.tau;
    match kind {
        EstimatorKind::Dmlcqr => {
            let mut dml = DmlConfig::new(tau, cfg.k, est_seed, data.n());
            dml.mode = cfg.mode;
            dml.ci_level = cfg.ci_level;
            dml.penalty = cfg
                .penalty
                .apply(PenaltyRule::default_for(data.n(), stream_seed(est_seed, 1)))?;
            let est = estimate_dml(data, design, &dml)?;
            Ok((est.theta, est.se))
        }
        EstimatorKind::NaivePs => {
            let rule = cfg
                .penalty
                .apply(PenaltyRule::default_for(data.n(), stream_seed(est_seed, 2)))?;
            let est = estimator_naive_ps(data, design, tau, &rule)?;
            Ok((est.theta, est.se))
        }
        EstimatorKind::Hdcqr => {
            let est = estimator_hdcqr(data, design, tau)?;
            Ok((est.theta, est.se))
        }
        EstimatorKind::Oracle => {
            // Map relevant raw controls to design columns by name.
            let mut relevant = Vec::new();
            for j in cfg.dgp.relevant_controls() {
                let name = format!("z{}", j + 1);
                if let Some(pos) = design.names.iter().position(|n| n == &name) {
                    relevant.push(pos);
                }
            }
            let est = estimator_oracle(data, design, tau, &relevant)?;
            Ok((est.theta, est.se))
        }
    }
}

/// Runs the study: one derived RNG stream per replication, estimator
/// failures recorded and excluded from metrics, deterministic at any
/// parallelism degree.
pub fn run_mc(cfg: &McConfig) -> Result<McReport> {
    cfg.validate()?;
    if cfg.reps == 0 {
        return Ok(McReport {
            theta_true: cfg.dgp.theta,
            tau: cfg.dgp.tau,
            n: cfg.dgp.n,
            p: cfg.dgp.p,
            reps: 0,
            sd_denominator: "population",
            metrics: Vec::new(),
            records: Vec::new(),
        });
    }
    let per_rep: Vec<Result<Vec<RepRecord>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = stream_seed(cfg.dgp.seed, rep as u64);
            let data = generate_replication(&cfg.dgp, rep_seed)?;
            let (design, _) = design_from_dataset(&data)?;
            let est_seed = stream_seed(rep_seed, STREAM_EST);
            let mut records = Vec::with_capacity(cfg.estimators.len());
            for &kind in &cfg.estimators {
                let record = match run_one_estimator(kind, &data, &design, cfg, est_seed) {
                    Ok((theta, se)) if theta.is_finite() && se.is_finite() => RepRecord {
                        rep,
                        estimator: kind,
                        theta,
                        se,
                        failed: false,
                        message: None,
                    },
                    Ok((theta, se)) => RepRecord {
                        rep,
                        estimator: kind,
                        theta: 0.0,
                        se: 0.0,
                        failed: true,
                        message: Some(format!("non-finite estimate ({theta}, {se})")),
                    },
                    Err(e) => RepRecord {
                        rep,
                        estimator: kind,
                        theta: 0.0,
                        se: 0.0,
                        failed: true,
                        message: Some(e.to_string()),
                    },
                };
                records.push(record);
            }
            Ok(records)
        })
        .collect();
    let mut records = Vec::with_capacity(cfg.reps * cfg.estimators.len());
    for r in per_rep {
        records.extend(r?);
    }
    let mut metrics = Vec::with_capacity(cfg.estimators.len());
    for &kind in &cfg.estimators {
        let subset: Vec<RepRecord> = records
            .iter()
            .filter(|r| r.estimator == kind)
            .cloned()
            .collect();
        metrics.push(metrics_from_records(
            kind,
            &subset,
            cfg.dgp.theta,
            cfg.ci_level,
        )?);
    }
    Ok(McReport {
        theta_true: cfg.dgp.theta,
        tau: cfg.dgp.tau,
        n: cfg.dgp.n,
        p: cfg.dgp.p,
        reps: cfg.reps,
        sd_denominator: "population",
        metrics,
        records,
    })
}

/// One signal-strength cell of the rejection grid.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoverageCell {
    pub r2_d: f64,
    pub r2_y: f64,
    pub metrics: Vec<EstimatorMetrics>,
}

/// Rejection-frequency grid over `(r2_d, r2_y)` designs.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CoverageReport {
    pub reps: usize,
    pub cells: Vec<CoverageCell>,
}

/// Runs one study per grid cell, deriving an independent seed per cell.
pub fn coverage_grid(grid: &[(f64, f64)], template: &McConfig) -> Result<CoverageReport> {
    template.validate()?;
    if template.reps == 0 || grid.is_empty() {
        return Ok(CoverageReport {
            reps: template.reps,
            cells: Vec::new(),
        });
    }
    let mut cells = Vec::with_capacity(grid.len());
    for (idx, &(r2_d, r2_y)) in grid.iter().enumerate() {
        let mut cfg = template.clone();
        cfg.dgp.signal = Signal::R2 { r2_y, r2_d };
        cfg.dgp.seed = stream_seed(stream_seed(template.dgp.seed, STREAM_CELL), idx as u64);
        cfg.dgp.validate()?;
        let report = run_mc(&cfg)?;
        cells.push(CoverageCell {
            r2_d,
            r2_y,
            metrics: report.metrics,
        });
    }
    Ok(CoverageReport {
        reps: template.reps,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(theta: f64, se: f64) -> RepRecord {
        RepRecord {
            rep: 0,
            estimator: EstimatorKind::Oracle,
            theta,
            se,
            failed: false,
            message: None,
        }
    }

    #[test]
    fn two_point_metrics() {
        let records = vec![record(1.1, 1.0), record(0.9, 1.0)];
        let m = metrics_from_records(EstimatorKind::Oracle, &records, 1.0, 0.95).unwrap();
        assert!(m.bias.abs() < 1e-15);
        assert!((m.mae - 0.1).abs() < 1e-15);
        assert!((m.rmse - 0.1).abs() < 1e-15);
        assert_eq!(m.rejection_rate, 0.0);
    }

    #[test]
    fn rmse_identity_holds_exactly() {
        let records = vec![
            record(1.3, 0.1),
            record(0.8, 0.2),
            record(1.05, 0.15),
            record(0.55, 0.05),
        ];
        let m = metrics_from_records(EstimatorKind::Oracle, &records, 1.0, 0.95).unwrap();
        let lhs = m.rmse * m.rmse;
        let rhs = m.bias * m.bias + m.sd * m.sd;
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn single_rep_flagged() {
        let m =
            metrics_from_records(EstimatorKind::Oracle, &[record(1.2, 0.5)], 1.0, 0.95).unwrap();
        assert!(m.single_rep);
        assert_eq!(m.sd, 0.0);
    }

    #[test]
    fn failures_excluded_and_counted() {
        let mut bad = record(99.0, 0.0);
        bad.failed = true;
        bad.message = Some("boom".into());
        let records = vec![record(1.0, 1.0), bad];
        let m = metrics_from_records(EstimatorKind::Oracle, &records, 1.0, 0.95).unwrap();
        assert_eq!(m.reps_used, 1);
        assert_eq!(m.failures, 1);
        assert_eq!(m.bias, 0.0);
    }

    #[test]
    fn rejection_counts_ci_exclusions() {
        // theta 2.0 with se 0.1: |2-1| > 1.96*0.1 -> rejected.
        let records = vec![record(2.0, 0.1), record(1.0, 0.1)];
        let m = metrics_from_records(EstimatorKind::Oracle, &records, 1.0, 0.95).unwrap();
        assert_eq!(m.rejection_rate, 0.5);
        assert_eq!(m.coverage, 0.5);
    }

    #[test]
    fn unknown_estimator_name_lists_valid() {
        let err = "banana".parse::<EstimatorKind>().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dmlcqr") && msg.contains("oracle"), "{msg}");
    }

    #[test]
    fn zero_reps_short_circuits() {
        let dgp = DgpConfig::benchmark(100, 15, 0.5, Signal::Coef { c_y: 0.1, c_d: 0.1 }, 1)
            .unwrap();
        let cfg = McConfig {
            dgp,
            estimators: vec![EstimatorKind::Oracle],
            reps: 0,
            k: 2,
            mode: DmlMode::Dml2,
            ci_level: 0.95,
            penalty: PenaltyOverrides::default(),
        };
        let report = run_mc(&cfg).unwrap();
        assert!(report.records.is_empty());
        assert!(report.metrics.is_empty());
        let grid = coverage_grid(&[(0.2, 0.2)], &cfg).unwrap();
        assert!(grid.cells.is_empty());
    }

    #[test]
    fn tiny_study_runs_oracle_only() {
        let dgp = DgpConfig::benchmark(300, 15, 0.5, Signal::Coef { c_y: 0.2, c_d: 0.2 }, 5)
            .unwrap();
        let cfg = McConfig {
            dgp,
            estimators: vec![EstimatorKind::Oracle],
            reps: 2,
            k: 2,
            mode: DmlMode::Dml2,
            ci_level: 0.95,
            penalty: PenaltyOverrides::default(),
        };
        let report = run_mc(&cfg).unwrap();
        assert_eq!(report.records.len(), 2);
        let m = &report.metrics[0];
        assert_eq!(m.reps_used + m.failures, 2);
        if m.reps_used == 2 {
            assert!(m.rmse < 1.0);
        }
        // Determinism across invocations.
        let again = run_mc(&cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&report.records).unwrap(),
            serde_json::to_string(&again.records).unwrap()
        );
    }
}

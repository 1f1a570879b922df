//! Monte-Carlo bench: data-generating process, competitor estimators, and
//! replication studies with rejection-frequency grids.

mod estimators;
pub mod mc;

pub use estimators::{
    estimator_hdcqr, estimator_naive_ps, estimator_naive_ps_with_forced, estimator_oracle,
    SimpleEstimate,
};
pub use mc::{
    coverage_grid, metrics_from_records, run_mc, CoverageCell, CoverageReport, EstimatorKind,
    EstimatorMetrics, McConfig, McReport, RepRecord,
};

use crate::data::{build_design, Dataset, DesignMatrix, DesignReport, ExpansionSpec};
use crate::math::sample_quantile;
use crate::rng::stream_rng;
use crate::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

const STREAM_DGP: u64 = 0x4447_5030;

/// Signal strength, either direct coefficient scales or R-squared targets
/// that determine them.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Signal {
    Coef { c_y: f64, c_d: f64 },
    R2 { r2_y: f64, r2_d: f64 },
}

/// Simulation design: latent outcome `y* = d theta + x'(c_y nu_y) + eps`,
/// treatment `d = x'(c_d nu_d) + v`, AR(1)-correlated Gaussian controls,
/// and left-censoring at the empirical `censor_quantile` of `y*`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    /// Number of raw controls; the design adds an intercept.
    pub p: usize,
    pub tau: f64,
    pub theta: f64,
    pub rho: f64,
    /// Coefficient pattern on `x = (1, z)`, length `p + 1`.
    pub nu_y: Vec<f64>,
    pub nu_d: Vec<f64>,
    pub signal: Signal,
    pub censor_quantile: f64,
    pub seed: u64,
}

/// Declining sparse outcome pattern on `(1, z)`: two blocks of
/// `1, 1/2, ..., 1/5` separated by five zeros.
pub fn paper_nu_y(p: usize) -> Result<Vec<f64>> {
    if p < 15 {
        return Err(Error::Parameter(format!(
            "outcome pattern needs at least 15 controls, got {p}"
        )));
    }
    let mut nu = vec![0.0; p + 1];
    for i in 0..5 {
        nu[i] = 1.0 / (i + 1) as f64;
        nu[10 + i] = 1.0 / (i + 1) as f64;
    }
    Ok(nu)
}

/// Declining sparse treatment pattern on `(1, z)`: `1, 1/2, ..., 1/10`.
pub fn paper_nu_d(p: usize) -> Result<Vec<f64>> {
    if p < 15 {
        return Err(Error::Parameter(format!(
            "treatment pattern needs at least 15 controls, got {p}"
        )));
    }
    let mut nu = vec![0.0; p + 1];
    for i in 0..10 {
        nu[i] = 1.0 / (i + 1) as f64;
    }
    Ok(nu)
}

impl DgpConfig {
    /// The benchmark design: declining sparse patterns, `theta = 1`,
    /// `rho = 0.5`, censoring at the empirical 0.3-quantile.
    pub fn benchmark(n: usize, p: usize, tau: f64, signal: Signal, seed: u64) -> Result<Self> {
        let cfg = DgpConfig {
            n,
            p,
            tau,
            theta: 1.0,
            rho: 0.5,
            nu_y: paper_nu_y(p)?,
            nu_d: paper_nu_d(p)?,
            signal,
            censor_quantile: 0.3,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Parameter("need at least 2 observations".into()));
        }
        if !(self.censor_quantile > 0.0 && self.censor_quantile < 1.0) {
            return Err(Error::Parameter(format!(
                "censor quantile must lie in (0,1), got {}",
                self.censor_quantile
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Parameter(format!(
                "quantile index must lie in (0,1), got {}",
                self.tau
            )));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Parameter(format!(
                "AR correlation must lie in (-1,1), got {}",
                self.rho
            )));
        }
        if self.nu_y.len() != self.p + 1 || self.nu_d.len() != self.p + 1 {
            return Err(Error::Parameter(format!(
                "coefficient patterns must have length p + 1 = {}",
                self.p + 1
            )));
        }
        match self.signal {
            Signal::Coef { c_y, c_d } => {
                if !c_y.is_finite() || !c_d.is_finite() {
                    return Err(Error::Parameter("coefficient scales must be finite".into()));
                }
            }
            Signal::R2 { r2_y, r2_d } => {
                for r2 in [r2_y, r2_d] {
                    if !(0.0..1.0).contains(&r2) {
                        return Err(Error::Parameter(format!(
                            "R-squared target must lie in [0,1), got {r2}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Resolves the signal specification to `(c_y, c_d)`.
    pub fn signal_scales(&self) -> Result<(f64, f64)> {
        match self.signal {
            Signal::Coef { c_y, c_d } => Ok((c_y, c_d)),
            Signal::R2 { r2_y, r2_d } => Ok((
                r2_to_coef(r2_y, &self.nu_y, self.rho)?,
                r2_to_coef(r2_d, &self.nu_d, self.rho)?,
            )),
        }
    }

    /// Raw-control indices with a nonzero coefficient in either equation.
    pub fn relevant_controls(&self) -> Vec<usize> {
        (0..self.p)
            .filter(|&j| self.nu_y[j + 1] != 0.0 || self.nu_d[j + 1] != 0.0)
            .collect()
    }
}

/// Scale that hits an R-squared target: with `S = nu' Sigma nu` over the
/// non-intercept entries and unit noise variance, `c = sqrt(r2/((1-r2) S))`.
/// The target is defined against the equation's own control index, so the
/// two equations' scales separate.
pub fn r2_to_coef(r2: f64, nu: &[f64], rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r2) {
        return Err(Error::Parameter(format!(
            "R-squared target must lie in [0,1), got {r2}"
        )));
    }
    if r2 == 0.0 {
        return Ok(0.0);
    }
    let p = nu.len().saturating_sub(1);
    let mut s = 0.0;
    for j in 0..p {
        for k in 0..p {
            s += nu[j + 1] * nu[k + 1] * rho.powi((j as i32 - k as i32).abs());
        }
    }
    if s <= 0.0 {
        return Err(Error::Parameter(
            "cannot hit a positive R-squared with a zero signal pattern".into(),
        ));
    }
    Ok((r2 / ((1.0 - r2) * s)).sqrt())
}

/// Draws one replication. The same `(config, rep_seed)` always produces an
/// identical dataset; the censoring point is the within-replication
/// empirical quantile of the latent outcome.
pub fn generate_replication(config: &DgpConfig, rep_seed: u64) -> Result<Dataset> {
    config.validate()?;
    let (c_y, c_d) = config.signal_scales()?;
    let (n, p) = (config.n, config.p);
    let mut rng = stream_rng(rep_seed, STREAM_DGP);
    let mut z = Array2::zeros((n, p));
    let root = (1.0 - config.rho * config.rho).sqrt();
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            let val = if j == 0 { e } else { config.rho * prev + root * e };
            z[[i, j]] = val;
            prev = val;
        }
    }
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();

    let mut d = Vec::with_capacity(n);
    let mut ystar = Vec::with_capacity(n);
    for i in 0..n {
        let mut xd = c_d * config.nu_d[0];
        let mut xy = c_y * config.nu_y[0];
        for j in 0..p {
            xd += c_d * config.nu_d[j + 1] * z[[i, j]];
            xy += c_y * config.nu_y[j + 1] * z[[i, j]];
        }
        let di = xd + v[i];
        d.push(di);
        ystar.push(di * config.theta + xy + eps[i]);
    }
    let c = sample_quantile(&ystar, config.censor_quantile)?;
    let y: Vec<f64> = ystar.iter().map(|&ys| ys.max(c)).collect();
    let t: Vec<u8> = ystar.iter().map(|&ys| u8::from(ys > c)).collect();
    Dataset::new(y, d, z, t, Some(vec![c; n]))
}

/// Linear design `(1, z1, ..., zp)` from a dataset's raw controls.
pub fn design_from_dataset(data: &Dataset) -> Result<(DesignMatrix, DesignReport)> {
    let names: Vec<String> = (1..=data.n_controls()).map(|j| format!("z{j}")).collect();
    let spec = ExpansionSpec::linear(&names);
    build_design(&data.z_raw.view(), &names, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_fixtures_exact() {
        let nu_y = paper_nu_y(20).unwrap();
        assert_eq!(nu_y.len(), 21);
        let head = [1.0, 0.5, 1.0 / 3.0, 0.25, 0.2];
        for i in 0..5 {
            assert_eq!(nu_y[i], head[i]);
            assert_eq!(nu_y[5 + i], 0.0);
            assert_eq!(nu_y[10 + i], head[i]);
            assert_eq!(nu_y[15 + i], 0.0);
        }
        let nu_d = paper_nu_d(20).unwrap();
        for i in 0..10 {
            assert_eq!(nu_d[i], 1.0 / (i + 1) as f64);
        }
        assert!(nu_d[10..].iter().all(|&v| v == 0.0));
        assert!(paper_nu_y(14).is_err());
    }

    #[test]
    fn r2_scale_formula() {
        assert_eq!(r2_to_coef(0.0, &[0.0, 1.0, 1.0], 0.5).unwrap(), 0.0);
        // Single unit coefficient: S = 1, so c = sqrt(r2/(1-r2)).
        let c = r2_to_coef(0.5, &[0.0, 1.0], 0.5).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
        // Intercept-only pattern has no variance to scale.
        assert!(r2_to_coef(0.5, &[1.0, 0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn replication_is_deterministic() {
        let cfg = DgpConfig::benchmark(60, 15, 0.5, Signal::Coef { c_y: 0.3, c_d: 0.3 }, 7).unwrap();
        let a = generate_replication(&cfg, 11).unwrap();
        let b = generate_replication(&cfg, 11).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.d, b.d);
        assert_eq!(a.t, b.t);
        assert_eq!(a.z_raw, b.z_raw);
        let c = generate_replication(&cfg, 12).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn censored_fraction_matches_quantile() {
        let cfg =
            DgpConfig::benchmark(501, 15, 0.5, Signal::Coef { c_y: 1.0, c_d: 1.0 }, 3).unwrap();
        let data = generate_replication(&cfg, 5).unwrap();
        let censored = data.n() - data.uncensored_count();
        let expect = (0.3f64 * 501.0).ceil();
        assert!((censored as f64 - expect).abs() <= 1.0);
    }

    #[test]
    fn no_signal_moments() {
        // With c_y = c_d = 0: d = v and y* = theta v + eps, so
        // corr(d, y*) = theta / sqrt(theta^2 + 1).
        let cfg =
            DgpConfig::benchmark(100_000, 15, 0.5, Signal::Coef { c_y: 0.0, c_d: 0.0 }, 1).unwrap();
        let (c_y, c_d) = cfg.signal_scales().unwrap();
        assert_eq!((c_y, c_d), (0.0, 0.0));
        let data = generate_replication(&cfg, 2).unwrap();
        // d = v is standard normal, untouched by censoring.
        let nf = data.n() as f64;
        let dbar = data.d.iter().sum::<f64>() / nf;
        let var_d = data.d.iter().map(|v| (v - dbar) * (v - dbar)).sum::<f64>() / nf;
        assert!((var_d.sqrt() - 1.0).abs() < 0.02, "sd(d) = {}", var_d.sqrt());
    }

    #[test]
    fn relevant_controls_union() {
        let cfg = DgpConfig::benchmark(50, 20, 0.5, Signal::Coef { c_y: 1.0, c_d: 1.0 }, 1).unwrap();
        // nu_y hits z-indices 0..4 and 9..13; nu_d hits 0..8.
        assert_eq!(cfg.relevant_controls(), (0..14).collect::<Vec<_>>());
    }
}

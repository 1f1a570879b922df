//! L1-penalized solvers: weighted least squares, logistic, and
//! weighted/rotated quantile regression, with Post-Lasso refits and
//! data-driven penalty levels and loadings.

mod lasso_ls;
mod lasso_logit;
mod lasso_qr;
mod penalty;
mod post;

pub use lasso_ls::lasso_ls;
pub use lasso_logit::{lasso_logit, logit_newton, NewtonMode};
pub use lasso_qr::lasso_qr;
pub use penalty::{
    initial_loadings_logit, initial_loadings_ls, penalty_loadings, penalty_logit_level,
    penalty_ls_level, penalty_qr_level, LoadingProblem,
};
pub use post::{post_lasso, PostLassoProblem};

use crate::{Error, Result};
use ndarray::ArrayView2;

/// Result of a penalized (or unpenalized restricted) fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LassoFit {
    /// Coefficients in the units of the supplied design columns.
    pub coefficients: Vec<f64>,
    /// Indices of nonzero coefficients.
    pub support: Vec<usize>,
    pub lambda: f64,
    /// Diagonal penalty loadings; 0 marks an unpenalized column.
    pub loadings: Vec<f64>,
    pub iterations: usize,
    /// Final penalized objective value.
    pub objective: f64,
    pub converged: bool,
}

impl LassoFit {
    pub(crate) fn assemble(
        coefficients: Vec<f64>,
        lambda: f64,
        loadings: Vec<f64>,
        iterations: usize,
        objective: f64,
    ) -> Self {
        let support = coefficients
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, _)| j)
            .collect();
        LassoFit {
            coefficients,
            support,
            lambda,
            loadings,
            iterations,
            objective,
            converged: true,
        }
    }
}

/// Constants of the data-driven penalty rules.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PenaltyRule {
    /// Scale constant; the convention is slightly above 1.
    pub c: f64,
    /// Tail probability for the Gaussian levels.
    pub gamma: f64,
    /// Quantile level for the simulated quantile-regression rule.
    pub alpha: f64,
    /// Simulation draw count for the quantile-regression rule.
    pub ndraws: usize,
    pub seed: u64,
}

impl PenaltyRule {
    /// Conventional defaults: c = 1.1, gamma = 0.1/ln(n), alpha = 0.1,
    /// 500 draws.
    pub fn default_for(n: usize, seed: u64) -> Self {
        PenaltyRule {
            c: 1.1,
            gamma: 0.1 / (n.max(2) as f64).ln(),
            alpha: 0.1,
            ndraws: 500,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::Parameter(format!(
                "penalty constant c must be positive, got {}",
                self.c
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Parameter(format!(
                "gamma must lie in (0,1), got {}",
                self.gamma
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.ndraws < 100 {
            return Err(Error::Parameter(format!(
                "ndraws must be at least 100, got {}",
                self.ndraws
            )));
        }
        Ok(())
    }
}

/// Optional tweaks applied on top of [`PenaltyRule::default_for`]; unset
/// fields keep the data-driven default.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyOverrides {
    pub c: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub ndraws: Option<usize>,
}

impl PenaltyOverrides {
    pub fn is_empty(&self) -> bool {
        *self == PenaltyOverrides::default()
    }

    pub fn apply(&self, mut rule: PenaltyRule) -> Result<PenaltyRule> {
        if let Some(c) = self.c {
            rule.c = c;
        }
        if let Some(g) = self.gamma {
            rule.gamma = g;
        }
        if let Some(a) = self.alpha {
            rule.alpha = a;
        }
        if let Some(m) = self.ndraws {
            rule.ndraws = m;
        }
        rule.validate()?;
        Ok(rule)
    }
}

/// Check loss `(h - I(u <= 0)) * u` at quantile level `h`.
pub fn check_loss(u: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::Parameter(format!(
            "quantile level must lie in (0,1), got {h}"
        )));
    }
    let ind = if u <= 0.0 { 1.0 } else { 0.0 };
    Ok((h - ind) * u)
}

/// Column-major copy of a design (optionally row-subset) for cache-friendly
/// coordinate sweeps.
pub(crate) struct Cols {
    pub n: usize,
    pub p: usize,
    data: Vec<f64>,
}

impl Cols {
    pub fn from_view(x: &ArrayView2<'_, f64>) -> Self {
        let (n, p) = (x.nrows(), x.ncols());
        let mut data = vec![0.0; n * p];
        for j in 0..p {
            let col = x.column(j);
            let dst = &mut data[j * n..(j + 1) * n];
            for (d, &v) in dst.iter_mut().zip(col.iter()) {
                *d = v;
            }
        }
        Cols { n, p, data }
    }

    pub fn from_view_rows(x: &ArrayView2<'_, f64>, rows: &[usize]) -> Self {
        let (n, p) = (rows.len(), x.ncols());
        let mut data = vec![0.0; n * p];
        for j in 0..p {
            let dst = &mut data[j * n..(j + 1) * n];
            for (d, &i) in dst.iter_mut().zip(rows.iter()) {
                *d = x[[i, j]];
            }
        }
        Cols { n, p, data }
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    /// u += coef * col_j
    pub fn axpy_col(&self, j: usize, coef: f64, u: &mut [f64]) {
        if coef == 0.0 {
            return;
        }
        for (ui, &xi) in u.iter_mut().zip(self.col(j)) {
            *ui += coef * xi;
        }
    }

    /// Largest eigenvalue of X'X / divisor via power iteration, padded 5%.
    pub fn spectral_bound(&self, divisor: f64) -> f64 {
        if self.p == 0 || self.n == 0 {
            return 0.0;
        }
        let mut v = vec![1.0 / (self.p as f64).sqrt(); self.p];
        let mut lam = 0.0;
        let mut u = vec![0.0; self.n];
        for _ in 0..30 {
            u.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..self.p {
                self.axpy_col(j, v[j], &mut u);
            }
            let mut w = vec![0.0; self.p];
            for j in 0..self.p {
                let mut s = 0.0;
                for (ui, xi) in u.iter().zip(self.col(j)) {
                    s += ui * xi;
                }
                w[j] = s / divisor;
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= 0.0 {
                return 0.0;
            }
            lam = norm;
            for (vj, wj) in v.iter_mut().zip(&w) {
                *vj = wj / norm;
            }
        }
        lam * 1.05
    }
}

/// Max KKT violation for an L1 objective with smooth-part gradient `grad`.
/// `threshold_j = lambda * loadings_j / n`; unpenalized coordinates demand a
/// vanishing gradient.
pub(crate) fn kkt_violation(coef: &[f64], grad: &[f64], thresholds: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..coef.len() {
        let t = thresholds[j];
        let viol = if t == 0.0 {
            grad[j].abs()
        } else if coef[j] == 0.0 {
            (grad[j].abs() - t).max(0.0)
        } else {
            (grad[j] + coef[j].signum() * t).abs()
        };
        if viol > worst {
            worst = viol;
        }
    }
    worst
}

pub(crate) fn validate_loadings(loadings: &[f64], p: usize) -> Result<()> {
    if loadings.len() != p {
        return Err(Error::Parameter(format!(
            "{} loadings for {} columns",
            loadings.len(),
            p
        )));
    }
    if let Some(j) = loadings.iter().position(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::Parameter(format!(
            "loading for column {j} must be finite and nonnegative"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_loss_formula() {
        assert_eq!(check_loss(2.0, 0.5).unwrap(), 1.0);
        assert_eq!(check_loss(-2.0, 0.75).unwrap(), 0.5);
        assert_eq!(check_loss(0.0, 0.31).unwrap(), 0.0);
        assert!(check_loss(1.0, 0.0).is_err());
        assert!(check_loss(1.0, 1.0).is_err());
    }

    #[test]
    fn default_rule_is_valid() {
        let rule = PenaltyRule::default_for(500, 7);
        rule.validate().unwrap();
        assert!((rule.gamma - 0.1 / 500f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rule_validation_catches_bad_constants() {
        let mut rule = PenaltyRule::default_for(100, 0);
        rule.c = 0.0;
        assert!(rule.validate().is_err());
        let mut rule = PenaltyRule::default_for(100, 0);
        rule.gamma = 1.0;
        assert!(rule.validate().is_err());
        let mut rule = PenaltyRule::default_for(100, 0);
        rule.ndraws = 50;
        assert!(rule.validate().is_err());
        let mut rule = PenaltyRule::default_for(100, 0);
        rule.c = 1.0;
        rule.validate().unwrap();
    }

    #[test]
    fn spectral_bound_identity_like() {
        // Orthonormal-ish columns: X'X/n = I, so the bound is close to 1.
        let x = ndarray::array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let cols = Cols::from_view(&x.view());
        let lam = cols.spectral_bound(2.0); // divisor 2 makes X'X/2 = I
        assert!((lam - 1.05).abs() < 1e-6, "{lam}");
    }
}

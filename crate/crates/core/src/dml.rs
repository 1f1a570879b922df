//! Orthogonal-score estimation: per-fold objectives, DML1/DML2 point
//! estimation over a 1-D search, sandwich variance, confidence intervals,
//! and the finite-difference orthogonality diagnostic.

use crate::data::{make_folds, Dataset, DesignMatrix, FoldPartition};
use crate::math::{mean, normal_quantile, sd_population};
use crate::nuisance::{fit_fold_nuisance, FoldDiagnostics, NuisanceConfig, NuisanceFit};
use crate::rng::stream_rng;
use crate::solvers::PenaltyRule;
use crate::{Error, Result};
use rand::Rng;
use rayon::prelude::*;

const STREAM_ORTHO: u64 = 0x4f52_5448;

/// Aggregation mode for the cross-fitted estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DmlMode {
    /// Per-fold argmins averaged.
    Dml1,
    /// Argmin of the pooled (averaged) fold objective.
    Dml2,
}

impl std::fmt::Display for DmlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DmlMode::Dml1 => write!(f, "DML1"),
            DmlMode::Dml2 => write!(f, "DML2"),
        }
    }
}

/// Everything needed to evaluate one observation's scores.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInputs {
    pub y: f64,
    pub d: f64,
    pub t: u8,
    /// Fitted control index `x'beta` from the pilot quantile fit.
    pub x_beta: f64,
    /// Transformed quantile level for this observation.
    pub h: f64,
    /// Fitted censoring probability.
    pub pi: f64,
    pub keep: u8,
    /// Projection residual `d - x'mu`.
    pub v: f64,
    pub tau: f64,
}

/// Orthogonal score: gated correction-augmented quantile score times the
/// projection residual.
pub fn score_psi(s: &ScoreInputs, theta: f64) -> f64 {
    if s.keep == 0 {
        return 0.0;
    }
    let ind = f64::from(s.y - s.d * theta - s.x_beta <= 0.0);
    let quantile_term = f64::from(s.t) * (s.h - ind);
    let correction = (f64::from(s.t) - s.pi) * (1.0 - s.tau) / s.pi;
    (quantile_term + correction) * s.v
}

/// Non-orthogonal score used by the naive estimator and the diagnostic:
/// same gated quantile term, multiplied by the raw treatment.
pub fn naive_score(s: &ScoreInputs, theta: f64) -> f64 {
    if s.keep == 0 || s.t == 0 {
        return 0.0;
    }
    let ind = f64::from(s.y - s.d * theta - s.x_beta <= 0.0);
    (s.h - ind) * s.d
}

/// Precomputed per-fold score pieces so the objective can be swept over
/// theta cheaply: `psi_i(theta) = a_i (h_i - I(base_i - d_i theta <= 0)) + c_i`.
#[derive(Debug, Clone)]
pub struct FoldScores {
    a: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    base: Vec<f64>,
    d: Vec<f64>,
    nk: usize,
    /// Fold contribution to the moment Jacobian.
    jbar: f64,
}

impl FoldScores {
    pub fn new(data: &Dataset, design: &DesignMatrix, target: &[usize], nui: &NuisanceFit) -> Self {
        let nk = target.len();
        let mut a = Vec::with_capacity(nk);
        let mut c = Vec::with_capacity(nk);
        let mut h = Vec::with_capacity(nk);
        let mut base = Vec::with_capacity(nk);
        let mut d = Vec::with_capacity(nk);
        let mut jsum = 0.0;
        for (r, &i) in target.iter().enumerate() {
            let keep = f64::from(nui.keep[r]);
            let t = f64::from(data.t[i]);
            let v = nui.v_hat[r];
            let mut xb = 0.0;
            for j in 0..design.p() {
                xb += nui.beta_pilot[j] * design.x[[i, j]];
            }
            a.push(keep * t * v);
            c.push(keep * (t - nui.pi_hat[r]) * (1.0 - nui.tau) / nui.pi_hat[r] * v);
            h.push(nui.h_hat[r]);
            base.push(data.y[i] - xb);
            d.push(data.d[i]);
            jsum += keep * t * nui.f_hat[r] * data.d[i] * v;
        }
        let jbar = jsum / nk as f64;
        FoldScores {
            a,
            c,
            h,
            base,
            d,
            nk,
            jbar,
        }
    }

    pub fn len(&self) -> usize {
        self.nk
    }

    pub fn is_empty(&self) -> bool {
        self.nk == 0
    }

    /// True when every score is identically zero at every theta.
    pub fn is_degenerate(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0) && self.c.iter().all(|&v| v == 0.0)
    }

    pub fn jacobian(&self) -> f64 {
        self.jbar
    }

    /// First and second empirical moments of the score at `theta`.
    pub fn moments(&self, theta: f64) -> (f64, f64) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for i in 0..self.nk {
            let ind = f64::from(self.base[i] - self.d[i] * theta <= 0.0);
            let psi = self.a[i] * (self.h[i] - ind) + self.c[i];
            s1 += psi;
            s2 += psi * psi;
        }
        let nf = self.nk as f64;
        (s1 / nf, s2 / nf)
    }
}

/// Normalized fold objective `(E psi)^2 / E psi^2`, in [0, 1]; a 0/0 fold
/// carries no information and evaluates to 0.
pub fn fold_objective(scores: &FoldScores, theta: f64) -> f64 {
    let (m, msq) = scores.moments(theta);
    if msq <= 0.0 {
        return 0.0;
    }
    m * m / msq
}

/// Search interval and stopping rule for the 1-D objective minimization.
#[derive(Debug, Clone, Copy)]
pub struct SearchSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Absolute plateau-edge resolution.
    pub tol: f64,
}

impl SearchSpec {
    pub fn new(lo: f64, hi: f64) -> Self {
        SearchSpec {
            lo,
            hi,
            points: 401,
            tol: 1e-5 * (hi - lo),
        }
    }
}

/// Result of one 1-D solve.
#[derive(Debug, Clone, Copy)]
pub struct ThetaSolution {
    pub theta: f64,
    pub value: f64,
    /// The minimum was attained on separated plateaus (smallest kept).
    pub multiple_plateaus: bool,
    /// The minimizing plateau touches the search boundary.
    pub on_boundary: bool,
}

/// Grid scan plus plateau-edge bisection. The objective is piecewise
/// constant in theta, so the minimizer is reported as the midpoint of the
/// minimizing plateau; ties across separated plateaus resolve to the
/// smallest theta, and a constant objective resolves to the left endpoint.
pub fn solve_theta<F: Fn(f64) -> f64>(objective: F, spec: &SearchSpec) -> Result<ThetaSolution> {
    if !(spec.hi > spec.lo) || spec.points < 3 || !(spec.tol > 0.0) {
        return Err(Error::Parameter(format!(
            "invalid search interval [{}, {}] with {} points",
            spec.lo, spec.hi, spec.points
        )));
    }
    let m = spec.points;
    let step = (spec.hi - spec.lo) / (m - 1) as f64;
    let grid: Vec<f64> = (0..m).map(|i| spec.lo + step * i as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&t| objective(t)).collect();
    let vmin = values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !vmin.is_finite() {
        return Err(Error::Search(
            "objective has no finite value on the search grid".into(),
        ));
    }
    let tie = 1e-12 * (1.0 + vmin.abs());
    let flat: Vec<bool> = values
        .iter()
        .map(|&v| v.is_finite() && v - vmin <= tie)
        .collect();
    // Contiguous runs of grid minimizers.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < m {
        if flat[i] {
            let start = i;
            while i + 1 < m && flat[i + 1] {
                i += 1;
            }
            runs.push((start, i));
        }
        i += 1;
    }
    let multiple = runs.len() > 1;
    let (lo_idx, hi_idx) = runs[0];
    if lo_idx == 0 && hi_idx == m - 1 {
        // Constant objective: no information in the interval.
        return Ok(ThetaSolution {
            theta: spec.lo,
            value: vmin,
            multiple_plateaus: true,
            on_boundary: true,
        });
    }
    let hits_min = |t: f64| -> bool {
        let v = objective(t);
        v.is_finite() && v - vmin <= tie
    };
    // Bisect the plateau edges out to the neighboring grid points.
    let mut left = grid[lo_idx];
    if lo_idx > 0 {
        let mut out = grid[lo_idx - 1];
        while left - out > spec.tol {
            let mid = 0.5 * (out + left);
            if hits_min(mid) {
                left = mid;
            } else {
                out = mid;
            }
        }
    }
    let mut right = grid[hi_idx];
    if hi_idx + 1 < m {
        let mut out = grid[hi_idx + 1];
        while out - right > spec.tol {
            let mid = 0.5 * (right + out);
            if hits_min(mid) {
                right = mid;
            } else {
                out = mid;
            }
        }
    }
    Ok(ThetaSolution {
        theta: 0.5 * (left + right),
        value: vmin,
        multiple_plateaus: multiple,
        on_boundary: lo_idx == 0 || hi_idx == m - 1,
    })
}

/// Run-level knobs for [`estimate_dml`].
#[derive(Debug, Clone)]
pub struct DmlConfig {
    pub k: usize,
    pub mode: DmlMode,
    pub tau: f64,
    /// Confidence level, e.g. 0.95.
    pub ci_level: f64,
    /// Seed for the fold assignment.
    pub seed: u64,
    pub grid_points: usize,
    /// Plateau resolution as a fraction of the interval width.
    pub tol_frac: f64,
    pub nuisance: NuisanceConfig,
    pub penalty: PenaltyRule,
}

impl DmlConfig {
    pub fn new(tau: f64, k: usize, seed: u64, n: usize) -> Self {
        DmlConfig {
            k,
            mode: DmlMode::Dml2,
            tau,
            ci_level: 0.95,
            seed,
            grid_points: 401,
            tol_frac: 1e-5,
            nuisance: NuisanceConfig::default(),
            penalty: PenaltyRule::default_for(n, seed),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Parameter(format!(
                "cross-fitting requires at least 2 folds, got {}",
                self.k
            )));
        }
        if n < self.k * 40 {
            return Err(Error::Parameter(format!(
                "{n} observations cannot support {} folds (need at least {})",
                self.k,
                self.k * 40
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Parameter(format!(
                "quantile index must lie in (0,1), got {}",
                self.tau
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Parameter(format!(
                "confidence level must lie in (0,1), got {}",
                self.ci_level
            )));
        }
        if self.grid_points < 3 {
            return Err(Error::Parameter("search grid needs at least 3 points".into()));
        }
        if !(self.tol_frac > 0.0) {
            return Err(Error::Parameter("search tolerance must be positive".into()));
        }
        self.nuisance.validate()?;
        self.penalty.validate()
    }
}

/// Run-level diagnostics attached to the estimate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DmlDiagnostics {
    pub folds: Vec<FoldDiagnostics>,
    pub fold_sizes: Vec<usize>,
    /// Per-fold mean score at the reported theta.
    pub score_means: Vec<f64>,
    pub jacobian: f64,
    pub jacobian_per_fold: Vec<f64>,
    /// Folds whose score second moment vanished at the reported theta.
    pub zero_information: Vec<usize>,
    pub search_widenings: usize,
    pub multiple_plateaus: bool,
    pub pilot_center: f64,
    pub search_halfwidth: f64,
}

/// Point estimate, sandwich variance, and confidence interval.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DmlEstimate {
    pub theta: f64,
    pub sigma2: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub per_fold_theta: Vec<f64>,
    pub mode: DmlMode,
    pub k: usize,
    pub tau: f64,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub diagnostics: DmlDiagnostics,
}

/// Sandwich variance `J^-2 * mean_k E_k[psi^2]`; errors when the Jacobian
/// is numerically zero, reporting each fold's contribution.
pub fn variance_estimate(folds: &[FoldScores], theta: f64) -> Result<(f64, f64, Vec<f64>)> {
    let per_fold: Vec<f64> = folds.iter().map(|f| f.jacobian()).collect();
    let jbar = mean(&per_fold);
    if jbar.abs() < 1e-8 {
        return Err(Error::SingularJacobian {
            jacobian: jbar,
            per_fold,
        });
    }
    let msq = folds.iter().map(|f| f.moments(theta).1).sum::<f64>() / folds.len() as f64;
    Ok((msq / (jbar * jbar), jbar, per_fold))
}

/// Two-sided normal interval `theta -+ z * sqrt(sigma2 / n)`.
pub fn confidence_interval(theta: f64, sigma2: f64, n: usize, xi: f64) -> Result<(f64, f64)> {
    if !(sigma2 > 0.0) {
        return Err(Error::Parameter(format!(
            "variance must be positive, got {sigma2}"
        )));
    }
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::Parameter(format!(
            "miscoverage must lie in (0,1), got {xi}"
        )));
    }
    let z = normal_quantile(1.0 - xi / 2.0)?;
    let se = (sigma2 / n as f64).sqrt();
    Ok((theta - z * se, theta + z * se))
}

fn solve_with_widening<F: Fn(f64) -> f64>(
    objective: F,
    center: f64,
    halfwidth: f64,
    grid_points: usize,
    tol_frac: f64,
) -> Result<(ThetaSolution, usize, f64)> {
    let mut hw = halfwidth;
    let mut widenings = 0;
    loop {
        let spec = SearchSpec {
            lo: center - hw,
            hi: center + hw,
            points: grid_points,
            tol: tol_frac * 2.0 * hw,
        };
        let sol = solve_theta(&objective, &spec)?;
        if !sol.on_boundary || widenings >= 3 {
            return Ok((sol, widenings, hw));
        }
        hw *= 2.0;
        widenings += 1;
    }
}

/// Cross-fitted estimation from precomputed per-fold nuisances. Fold `j`
/// of the partition is the held-out target of `fits[j]`.
pub fn estimate_from_nuisances(
    data: &Dataset,
    design: &DesignMatrix,
    folds: &FoldPartition,
    fits: &[NuisanceFit],
    diags: Vec<FoldDiagnostics>,
    cfg: &DmlConfig,
) -> Result<DmlEstimate> {
    let k = folds.k;
    if fits.len() != k {
        return Err(Error::Parameter(format!(
            "{} nuisance fits supplied for {k} folds",
            fits.len()
        )));
    }
    let mut scores = Vec::with_capacity(k);
    for j in 0..k {
        let target = folds.fold(j);
        let fs = FoldScores::new(data, design, &target, &fits[j]);
        if fs.is_degenerate() {
            return Err(Error::DegenerateFold {
                fold: j,
                msg: "score is identically zero for every candidate theta".into(),
            });
        }
        scores.push(fs);
    }
    let pilots: Vec<f64> = fits.iter().map(|f| f.theta_pilot).collect();
    let center = mean(&pilots);
    let halfwidth = (10.0 * sd_population(&pilots)).max(1.0);

    let mut widenings = 0usize;
    let mut multiple = false;
    let mut final_halfwidth = halfwidth;
    let (theta, per_fold_theta) = match cfg.mode {
        DmlMode::Dml1 => {
            let mut per_fold = Vec::with_capacity(k);
            for fs in &scores {
                let (sol, w, hw) = solve_with_widening(
                    |t| fold_objective(fs, t),
                    center,
                    halfwidth,
                    cfg.grid_points,
                    cfg.tol_frac,
                )?;
                widenings += w;
                multiple |= sol.multiple_plateaus;
                final_halfwidth = final_halfwidth.max(hw);
                per_fold.push(sol.theta);
            }
            (mean(&per_fold), per_fold)
        }
        DmlMode::Dml2 => {
            let pooled = |t: f64| -> f64 {
                scores.iter().map(|fs| fold_objective(fs, t)).sum::<f64>() / k as f64
            };
            let (sol, w, hw) =
                solve_with_widening(pooled, center, halfwidth, cfg.grid_points, cfg.tol_frac)?;
            widenings = w;
            multiple = sol.multiple_plateaus;
            final_halfwidth = hw;
            (sol.theta, Vec::new())
        }
    };

    let (sigma2, jbar, per_fold_j) = variance_estimate(&scores, theta)?;
    let n = data.n();
    let se = (sigma2 / n as f64).sqrt();
    let xi = 1.0 - cfg.ci_level;
    let (ci_lo, ci_hi) = confidence_interval(theta, sigma2, n, xi)?;

    let mut score_means = Vec::with_capacity(k);
    let mut zero_information = Vec::new();
    for (j, fs) in scores.iter().enumerate() {
        let (m, msq) = fs.moments(theta);
        score_means.push(m);
        if msq <= 0.0 {
            zero_information.push(j);
        }
    }
    Ok(DmlEstimate {
        theta,
        sigma2,
        se,
        ci_lo,
        ci_hi,
        level: cfg.ci_level,
        per_fold_theta,
        mode: cfg.mode,
        k,
        tau: cfg.tau,
        n,
        p: design.p(),
        seed: cfg.seed,
        diagnostics: DmlDiagnostics {
            folds: diags,
            fold_sizes: scores.iter().map(|f| f.len()).collect(),
            score_means,
            jacobian: jbar,
            jacobian_per_fold: per_fold_j,
            zero_information,
            search_widenings: widenings,
            multiple_plateaus: multiple,
            pilot_center: center,
            search_halfwidth: final_halfwidth,
        },
    })
}

/// Full cross-fitted run: fold split, per-fold nuisance fits (in parallel),
/// then the orthogonal-moment solve.
pub fn estimate_dml(data: &Dataset, design: &DesignMatrix, cfg: &DmlConfig) -> Result<DmlEstimate> {
    cfg.validate(data.n())?;
    let folds = make_folds(data.n(), cfg.k, cfg.seed)?;
    let fitted: Vec<Result<(NuisanceFit, FoldDiagnostics)>> = (0..cfg.k)
        .into_par_iter()
        .map(|j| {
            let aux = folds.complement(j);
            let target = folds.fold(j);
            fit_fold_nuisance(
                data,
                design,
                cfg.tau,
                &aux,
                &target,
                &cfg.nuisance,
                &cfg.penalty,
                j,
            )
        })
        .collect();
    let mut fits = Vec::with_capacity(cfg.k);
    let mut diags = Vec::with_capacity(cfg.k);
    for (j, r) in fitted.into_iter().enumerate() {
        match r {
            Ok((f, dg)) => {
                fits.push(f);
                diags.push(dg);
            }
            Err(Error::DegenerateFold { fold, msg }) => {
                return Err(Error::DegenerateFold { fold, msg })
            }
            Err(e) => {
                return Err(Error::DegenerateFold {
                    fold: j,
                    msg: e.to_string(),
                })
            }
        }
    }
    estimate_from_nuisances(data, design, &folds, &fits, diags, cfg)
}

/// Direction of a nuisance perturbation for the orthogonality diagnostic.
#[derive(Debug, Clone)]
pub enum Direction {
    /// Additive per-observation perturbation of the censoring probability,
    /// clipped back into (clip, 1 - clip).
    Pi(Vec<f64>),
    /// Perturbation of the quantile-fit coefficients.
    Beta(Vec<f64>),
    /// Perturbation of the projection coefficients.
    Mu(Vec<f64>),
}

/// Reference values at which the scores are differentiated.
#[derive(Debug, Clone)]
pub struct TrueNuisance {
    pub pi: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    pub tau: f64,
    pub pi_clip: f64,
}

/// Finite-difference slopes of the mean orthogonal and naive scores.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OrthogonalityReport {
    pub psi_slope: f64,
    pub naive_slope: f64,
    /// Bootstrap standard errors of the two slopes.
    pub psi_se: f64,
    pub naive_se: f64,
    pub epsilons: Vec<f64>,
}

/// Central finite-difference Gateaux-derivative estimate of both scores at
/// a reference nuisance, along one perturbation direction. `epsilons` must
/// come in symmetric pairs around zero.
pub fn orthogonality_check(
    data: &Dataset,
    design: &DesignMatrix,
    theta0: f64,
    eta0: &TrueNuisance,
    direction: &Direction,
    epsilons: &[f64],
    seed: u64,
) -> Result<OrthogonalityReport> {
    let n = data.n();
    if n < 50_000 {
        return Err(Error::Parameter(format!(
            "orthogonality check needs at least 50000 observations, got {n}"
        )));
    }
    let mut pos: Vec<f64> = epsilons.iter().copied().filter(|&e| e > 0.0).collect();
    pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pos.dedup();
    if pos.is_empty() {
        return Err(Error::Parameter("epsilon grid has no positive entries".into()));
    }
    for &e in &pos {
        if !epsilons.iter().any(|&x| x == -e) {
            return Err(Error::Parameter(format!(
                "epsilon grid is not symmetric: missing -{e}"
            )));
        }
    }
    let p = design.p();
    match direction {
        Direction::Pi(dir) if dir.len() != n => {
            return Err(Error::Parameter(
                "probability direction length must match the sample size".into(),
            ))
        }
        Direction::Beta(dir) | Direction::Mu(dir) if dir.len() != p => {
            return Err(Error::Parameter(
                "coefficient direction length must match the design width".into(),
            ))
        }
        _ => {}
    }

    let xb0: Vec<f64> = (0..n)
        .map(|i| (0..p).map(|j| eta0.beta[j] * design.x[[i, j]]).sum())
        .collect();
    let xmu0: Vec<f64> = (0..n)
        .map(|i| (0..p).map(|j| eta0.mu[j] * design.x[[i, j]]).sum())
        .collect();
    let xdir: Option<Vec<f64>> = match direction {
        Direction::Beta(dir) | Direction::Mu(dir) => Some(
            (0..n)
                .map(|i| (0..p).map(|j| dir[j] * design.x[[i, j]]).sum())
                .collect(),
        ),
        Direction::Pi(_) => None,
    };

    let row = |i: usize, eps: f64| -> ScoreInputs {
        let mut pi = eta0.pi[i];
        let mut x_beta = xb0[i];
        let mut v = data.d[i] - xmu0[i];
        match direction {
            Direction::Pi(dir) => {
                pi = (pi + eps * dir[i]).clamp(eta0.pi_clip, 1.0 - eta0.pi_clip);
            }
            Direction::Beta(_) => {
                x_beta += eps * xdir.as_ref().unwrap()[i];
            }
            Direction::Mu(_) => {
                v -= eps * xdir.as_ref().unwrap()[i];
            }
        }
        let h = (pi - (1.0 - eta0.tau)) / pi;
        ScoreInputs {
            y: data.y[i],
            d: data.d[i],
            t: data.t[i],
            x_beta,
            h,
            pi,
            keep: u8::from(h > 0.0),
            v,
            tau: eta0.tau,
        }
    };

    // Per-observation central difference quotients, averaged over the pairs.
    let mut g_psi = vec![0.0; n];
    let mut g_naive = vec![0.0; n];
    for &e in &pos {
        for i in 0..n {
            let up = row(i, e);
            let dn = row(i, -e);
            g_psi[i] += (score_psi(&up, theta0) - score_psi(&dn, theta0)) / (2.0 * e);
            g_naive[i] += (naive_score(&up, theta0) - naive_score(&dn, theta0)) / (2.0 * e);
        }
    }
    let npairs = pos.len() as f64;
    for i in 0..n {
        g_psi[i] /= npairs;
        g_naive[i] /= npairs;
    }
    let psi_slope = mean(&g_psi);
    let naive_slope = mean(&g_naive);

    // Nonparametric bootstrap over observations for the slope uncertainty.
    let b = 200;
    let mut rng = stream_rng(seed, STREAM_ORTHO);
    let mut boot_psi = Vec::with_capacity(b);
    let mut boot_naive = Vec::with_capacity(b);
    for _ in 0..b {
        let mut s_psi = 0.0;
        let mut s_naive = 0.0;
        for _ in 0..n {
            let i = rng.random_range(0..n);
            s_psi += g_psi[i];
            s_naive += g_naive[i];
        }
        boot_psi.push(s_psi / n as f64);
        boot_naive.push(s_naive / n as f64);
    }
    Ok(OrthogonalityReport {
        psi_slope,
        naive_slope,
        psi_se: sd_population(&boot_psi),
        naive_se: sd_population(&boot_naive),
        epsilons: epsilons.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> ScoreInputs {
        ScoreInputs {
            y: 3.0,
            d: 2.0,
            t: 1,
            x_beta: 0.0,
            h: 0.5,
            pi: 1.0,
            keep: 1,
            v: 2.0,
            tau: 0.5,
        }
    }

    #[test]
    fn score_psi_examples() {
        // Residual positive, pi = 1: correction vanishes, psi = h * v.
        let s = inputs();
        assert_eq!(score_psi(&s, 0.5), 1.0);
        // Censored observation: only the correction term.
        let s = ScoreInputs {
            t: 0,
            pi: 0.8,
            tau: 0.75,
            h: (0.8 - 0.25) / 0.8,
            v: 1.0,
            ..inputs()
        };
        assert!((score_psi(&s, 0.0) - (-0.8 * 0.25 / 0.8)).abs() < 1e-15);
        // Gate closed: zero regardless.
        let s = ScoreInputs {
            keep: 0,
            h: -0.1,
            ..inputs()
        };
        assert_eq!(score_psi(&s, 123.0), 0.0);
    }

    #[test]
    fn naive_score_examples() {
        let s = inputs();
        assert_eq!(naive_score(&s, 0.5), 1.0);
        assert_eq!(naive_score(&ScoreInputs { t: 0, ..inputs() }, 0.5), 0.0);
        assert_eq!(
            naive_score(
                &ScoreInputs {
                    keep: 0,
                    h: -0.2,
                    ..inputs()
                },
                0.5
            ),
            0.0
        );
    }

    #[test]
    fn grouped_and_expanded_score_forms_agree() {
        // psi written as one product must equal the sum of its two pieces.
        let mut state = 0x2460_9d1fu64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let pi = 0.05 + 0.9 * next();
            let tau = 0.05 + 0.9 * next();
            let s = ScoreInputs {
                y: 4.0 * next() - 2.0,
                d: 4.0 * next() - 2.0,
                t: u8::from(next() > 0.5),
                x_beta: next() - 0.5,
                h: (pi - (1.0 - tau)) / pi,
                pi,
                keep: u8::from((pi - (1.0 - tau)) / pi > 0.0),
                v: 4.0 * next() - 2.0,
                tau,
            };
            let theta = 2.0 * next() - 1.0;
            let ind = f64::from(s.y - s.d * theta - s.x_beta <= 0.0);
            let expanded = f64::from(s.keep) * f64::from(s.t) * (s.h - ind) * s.v
                + f64::from(s.keep) * (f64::from(s.t) - s.pi) * (1.0 - s.tau) / s.pi * s.v;
            assert!((score_psi(&s, theta) - expanded).abs() < 1e-12);
        }
    }

    fn constant_scores(c: f64, n: usize) -> FoldScores {
        FoldScores {
            a: vec![0.0; n],
            c: vec![c; n],
            h: vec![0.5; n],
            base: vec![1.0; n],
            d: vec![1.0; n],
            nk: n,
            jbar: 1.0,
        }
    }

    #[test]
    fn objective_extremes() {
        // Constant nonzero scores: L = 1, its maximum.
        let fs = constant_scores(0.7, 8);
        assert!((fold_objective(&fs, 0.0) - 1.0).abs() < 1e-15);
        // Mean-zero scores with positive second moment: L = 0.
        let fs = FoldScores {
            a: vec![0.0; 2],
            c: vec![1.0, -1.0],
            h: vec![0.5; 2],
            base: vec![1.0; 2],
            d: vec![1.0; 2],
            nk: 2,
            jbar: 1.0,
        };
        assert_eq!(fold_objective(&fs, 0.0), 0.0);
        // All-zero scores: 0/0 defined as 0.
        let fs = constant_scores(0.0, 3);
        assert_eq!(fold_objective(&fs, 0.0), 0.0);
        assert!(fs.is_degenerate());
    }

    #[test]
    fn objective_bounded_by_one() {
        let fs = FoldScores {
            a: vec![0.3, -0.2, 0.9],
            c: vec![0.1, 0.4, -0.6],
            h: vec![0.5, 0.2, 0.8],
            base: vec![1.0, -0.5, 0.2],
            d: vec![1.0, 2.0, -1.0],
            nk: 3,
            jbar: 1.0,
        };
        for i in -20..20 {
            let t = i as f64 * 0.25;
            let val = fold_objective(&fs, t);
            assert!((0.0..=1.0 + 1e-12).contains(&val));
        }
    }

    #[test]
    fn smooth_objective_minimum_found() {
        let sol = solve_theta(|t| (t - 1.0) * (t - 1.0), &SearchSpec::new(0.0, 2.0)).unwrap();
        assert!((sol.theta - 1.0).abs() < 1e-4, "theta {}", sol.theta);
        assert!(!sol.multiple_plateaus);
        assert!(!sol.on_boundary);
    }

    #[test]
    fn constant_objective_returns_left_endpoint() {
        let sol = solve_theta(|_| 3.0, &SearchSpec::new(-1.0, 5.0)).unwrap();
        assert_eq!(sol.theta, -1.0);
        assert!(sol.multiple_plateaus);
    }

    #[test]
    fn step_plateau_midpoint() {
        let obj = |t: f64| if (0.9..1.1).contains(&t) { 0.0 } else { 1.0 };
        let sol = solve_theta(obj, &SearchSpec::new(0.0, 2.0)).unwrap();
        assert!((sol.theta - 1.0).abs() < 1e-3, "theta {}", sol.theta);
        assert!(!sol.multiple_plateaus);
    }

    #[test]
    fn separated_ties_take_smallest() {
        // Minimum value 0 attained on [0.2, 0.3] and [1.5, 1.6].
        let obj = |t: f64| {
            if (0.2..0.3).contains(&t) || (1.5..1.6).contains(&t) {
                0.0
            } else {
                1.0
            }
        };
        let sol = solve_theta(obj, &SearchSpec::new(0.0, 2.0)).unwrap();
        assert!((sol.theta - 0.25).abs() < 1e-2, "theta {}", sol.theta);
        assert!(sol.multiple_plateaus);
    }

    #[test]
    fn no_finite_value_errors() {
        let err = solve_theta(|_| f64::NAN, &SearchSpec::new(0.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Search(_)));
    }

    #[test]
    fn sandwich_formula() {
        let fs = constant_scores(2.0, 4); // E psi^2 = 4, jbar = 1
        let (s2, j, per) = variance_estimate(std::slice::from_ref(&fs), 0.0).unwrap();
        assert!((s2 - 4.0).abs() < 1e-12);
        assert_eq!(j, 1.0);
        assert_eq!(per, vec![1.0]);
        let fs2 = FoldScores {
            jbar: 2.0,
            ..constant_scores(2.0, 4)
        };
        let (s2, _, _) = variance_estimate(std::slice::from_ref(&fs2), 0.0).unwrap();
        assert!((s2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_jacobian_reported() {
        let fs = FoldScores {
            jbar: 1e-9,
            ..constant_scores(1.0, 4)
        };
        let err = variance_estimate(std::slice::from_ref(&fs), 0.0).unwrap_err();
        match err {
            Error::SingularJacobian { per_fold, .. } => assert_eq!(per_fold.len(), 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ci_formula() {
        let (lo, hi) = confidence_interval(1.0, 4.0, 400, 0.05).unwrap();
        assert!((lo - 0.804).abs() < 1e-3, "lo {lo}");
        assert!((hi - 1.196).abs() < 1e-3, "hi {hi}");
        // Monotone in the level.
        let (lo2, hi2) = confidence_interval(1.0, 4.0, 400, 0.01).unwrap();
        assert!(lo2 < lo && hi2 > hi);
        assert!(confidence_interval(1.0, 0.0, 400, 0.05).is_err());
        assert!(confidence_interval(1.0, 1.0, 400, 1.5).is_err());
    }
}

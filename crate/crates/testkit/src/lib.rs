//! Independent reference implementations used as oracles by the test
//! suites. Everything here is written from first principles (dense simplex,
//! Gauss-Jordan, bisection) and deliberately shares no code with the main
//! crate, so agreement between the two is meaningful evidence.

use ndarray::{Array2, ArrayView2};

/// Error from an oracle computation.
#[derive(Debug)]
pub struct OracleError(pub String);

impl std::fmt::Display for OracleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "oracle error: {}", self.0)
    }
}

impl std::error::Error for OracleError {}

type Result<T> = std::result::Result<T, OracleError>;

// ---------------------------------------------------------------------------
// Normal distribution via erfc.

/// Standard normal CDF through `erfc`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF by bisection on the erfc-based CDF.
/// Accurate to ~1e-12, independent of any rational approximation.
pub fn normal_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(OracleError(format!("probability {p} outside (0,1)")));
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Check loss and quantile-regression objective.

/// Check loss `(h - I(u <= 0)) * u`.
pub fn check_loss(u: f64, h: f64) -> f64 {
    (h - f64::from(u <= 0.0)) * u
}

/// Penalized weighted quantile-regression objective evaluated directly:
/// `E_n[keep_i rho_{h_i}(y_i - x_i' beta)] + (lambda/n) sum_j loadings_j |beta_j|`.
/// The empirical mean divides by the full row count.
pub fn qr_objective(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    keep: &[u8],
    levels: &[f64],
    lambda: f64,
    loadings: &[f64],
    beta: &[f64],
) -> f64 {
    let n = x.nrows();
    let nf = n as f64;
    let mut total = 0.0;
    for i in 0..n {
        if keep[i] == 0 {
            continue;
        }
        let mut pred = 0.0;
        for j in 0..x.ncols() {
            pred += x[[i, j]] * beta[j];
        }
        total += check_loss(y[i] - pred, levels[i]);
    }
    let mut pen = 0.0;
    for j in 0..beta.len() {
        pen += loadings[j] * beta[j].abs();
    }
    total / nf + lambda * pen / nf
}

/// Type-1 (left-continuous) sample quantile: the `ceil(n tau)`-th order
/// statistic.
pub fn sample_quantile_type1(values: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(OracleError("empty sample".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(OracleError(format!("quantile index {tau} outside (0,1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (sorted.len() as f64 * tau).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

// ---------------------------------------------------------------------------
// Dense-tableau simplex for the penalized weighted QR linear program.
//
//   min  sum_i (keep_i/n)(h_i u_i^+ + (1-h_i) u_i^-)
//        + (lambda/n) sum_j loadings_j (b_j^+ + b_j^-)
//   s.t. x_i'(b^+ - b^-) + u_i^+ - u_i^- = y_i
//
// Variables: [b^+ (p), b^- (p), u^+ (n), u^- (n)], all nonnegative.
// Bland's rule guarantees termination on degenerate problems.

struct Tableau {
    /// (m+1) x (ncols+1); last row is the objective, last column the rhs.
    t: Vec<Vec<f64>>,
    m: usize,
    ncols: usize,
    basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= piv;
        }
        for r in 0..=self.m {
            if r == row {
                continue;
            }
            let factor = self.t[r][col];
            if factor == 0.0 {
                continue;
            }
            for c in 0..=self.ncols {
                self.t[r][c] -= factor * self.t[row][c];
            }
        }
        self.basis[row] = col;
    }

    /// Phase-2 simplex with Bland's anticycling rule.
    fn solve(&mut self, max_iter: usize) -> Result<()> {
        for _ in 0..max_iter {
            // Entering: smallest index with negative reduced cost.
            let mut enter = None;
            for c in 0..self.ncols {
                if self.t[self.m][c] < -1e-11 {
                    enter = Some(c);
                    break;
                }
            }
            let Some(col) = enter else { return Ok(()) };
            // Leaving: minimum ratio, ties by smallest basis index (Bland).
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.t[r][col];
                if a > 1e-11 {
                    let ratio = self.t[r][self.ncols] / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Err(OracleError("unbounded linear program".into()));
            };
            self.pivot(row, col);
        }
        Err(OracleError("simplex iteration budget exhausted".into()))
    }
}

/// Exact penalized weighted QR solve as a linear program. Returns the
/// coefficient vector; use [`qr_objective`] to compare objective values
/// (the minimizer itself may be non-unique).
pub fn qr_lp(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    keep: &[u8],
    levels: &[f64],
    lambda: f64,
    loadings: &[f64],
) -> Result<Vec<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n || keep.len() != n || levels.len() != n || loadings.len() != p {
        return Err(OracleError("dimension mismatch".into()));
    }
    let nf = n as f64;
    let ncols = 2 * p + 2 * n;
    let m = n;
    let mut t = vec![vec![0.0; ncols + 1]; m + 1];
    // Constraints: row i is x_i'(b+ - b-) + u_i^+ - u_i^- = y_i, with the
    // row negated when y_i < 0 so the rhs is nonnegative for the start basis.
    for i in 0..n {
        let sign = if y[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..p {
            t[i][j] = sign * x[[i, j]];
            t[i][p + j] = -sign * x[[i, j]];
        }
        t[i][2 * p + i] = sign; // u_i^+
        t[i][2 * p + n + i] = -sign; // u_i^-
        t[i][ncols] = sign * y[i];
    }
    // Objective coefficients.
    let mut cost = vec![0.0; ncols];
    for j in 0..p {
        cost[j] = lambda * loadings[j] / nf;
        cost[p + j] = lambda * loadings[j] / nf;
    }
    for i in 0..n {
        let w = f64::from(keep[i]) / nf;
        cost[2 * p + i] = w * levels[i];
        cost[2 * p + n + i] = w * (1.0 - levels[i]);
    }
    // Start basis: for each row, whichever of u_i^+/u_i^- has entry +1.
    let mut basis = vec![0usize; m];
    for i in 0..n {
        basis[i] = if y[i] < 0.0 { 2 * p + n + i } else { 2 * p + i };
    }
    // Objective row: reduced costs c - c_B B^-1 A with the start basis.
    for c in 0..ncols {
        t[m][c] = cost[c];
    }
    for (r, &b) in basis.iter().enumerate() {
        let cb = cost[b];
        if cb == 0.0 {
            continue;
        }
        for c in 0..=ncols {
            let v = t[r][c];
            if v != 0.0 {
                t[m][c] -= cb * v;
            }
        }
    }
    let mut tab = Tableau { t, m, ncols, basis };
    tab.solve(200_000)?;
    let mut beta = vec![0.0; p];
    for (r, &b) in tab.basis.iter().enumerate() {
        let v = tab.t[r][tab.ncols];
        if b < p {
            beta[b] += v;
        } else if b < 2 * p {
            beta[b - p] -= v;
        }
    }
    Ok(beta)
}

// ---------------------------------------------------------------------------
// Gauss-Jordan linear solve, Gram-Schmidt rank, weighted least squares.

/// Solves `A x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_solve(a: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(OracleError("dimension mismatch".into()));
    }
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[[i, j]];
        }
        m[i][n] = b[i];
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r1, &r2| m[r1][col].abs().partial_cmp(&m[r2][col].abs()).unwrap())
            .unwrap();
        if m[piv][col].abs() < 1e-12 {
            return Err(OracleError("singular system".into()));
        }
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col && m[r][col] != 0.0 {
                let f = m[r][col];
                for c in 0..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Ok((0..n).map(|i| m[i][n]).collect())
}

/// Numerical rank by modified Gram-Schmidt with a relative tolerance.
pub fn gram_schmidt_rank(x: ArrayView2<'_, f64>, rel_tol: f64) -> usize {
    let n = x.nrows();
    let p = x.ncols();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut rank = 0;
    for j in 0..p {
        let mut v: Vec<f64> = (0..n).map(|i| x[[i, j]]).collect();
        let orig: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > rel_tol * orig.max(1e-300) {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            q.push(v);
            rank += 1;
        }
    }
    rank
}

/// Weighted least squares through the normal equations and Gauss-Jordan.
pub fn wls(x: ArrayView2<'_, f64>, y: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    let mut gram = Array2::zeros((p, p));
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let w = weights[i];
        for a in 0..p {
            rhs[a] += w * x[[i, a]] * y[i];
            for b in a..p {
                gram[[a, b]] += w * x[[i, a]] * x[[i, b]];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[[a, b]] = gram[[b, a]];
        }
    }
    gauss_solve(&gram, &rhs)
}

// ---------------------------------------------------------------------------
// Logistic MLE by damped Newton with Gauss-Jordan steps.

/// Average negative log-likelihood of the logistic model.
pub fn logit_nll(x: ArrayView2<'_, f64>, t: &[u8], beta: &[f64]) -> f64 {
    let n = x.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let mut u = 0.0;
        for j in 0..x.ncols() {
            u += x[[i, j]] * beta[j];
        }
        // log(1 + e^u) - t u, stably.
        let softplus = if u > 30.0 { u } else { (1.0 + u.exp()).ln() };
        total += softplus - f64::from(t[i]) * u;
    }
    total / n as f64
}

/// Logistic MLE oracle: damped Newton with step halving on the average
/// negative log-likelihood.
pub fn logit_mle(x: ArrayView2<'_, f64>, t: &[u8], tol: f64) -> Result<Vec<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    let mut beta = vec![0.0; p];
    for _ in 0..500 {
        let mut grad = vec![0.0; p];
        let mut hess = Array2::zeros((p, p));
        for i in 0..n {
            let mut u = 0.0;
            for j in 0..p {
                u += x[[i, j]] * beta[j];
            }
            let mu = 1.0 / (1.0 + (-u).exp());
            let w = mu * (1.0 - mu);
            let r = mu - f64::from(t[i]);
            for a in 0..p {
                grad[a] += r * x[[i, a]] / n as f64;
                for b in a..p {
                    hess[[a, b]] += w * x[[i, a]] * x[[i, b]] / n as f64;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[[a, b]] = hess[[b, a]];
            }
        }
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < tol {
            return Ok(beta);
        }
        for a in 0..p {
            hess[[a, a]] += 1e-12;
        }
        let step = gauss_solve(&hess, &grad)?;
        let f0 = logit_nll(x, t, &beta);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&step)
                .map(|(b, s)| b - scale * s)
                .collect();
            if logit_nll(x, t, &cand) <= f0 {
                beta = cand;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Ok(beta);
        }
    }
    Err(OracleError("logit oracle did not converge".into()))
}

// ---------------------------------------------------------------------------
// Soft-thresholding closed form.

/// `sign(z) max(|z| - g, 0)`.
pub fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normal_inverse_matches_known_points() {
        assert!((normal_inverse(0.5).unwrap()).abs() < 1e-10);
        assert!((normal_inverse(0.975).unwrap() - 1.959963985).abs() < 1e-6);
        assert!((normal_inverse(0.84134474).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn lp_recovers_sample_median() {
        // Intercept-only median of an odd sample is the middle order stat.
        let x = array![[1.0], [1.0], [1.0], [1.0], [1.0]];
        let y = [3.0, -1.0, 7.0, 0.5, 2.0];
        let keep = [1u8; 5];
        let levels = [0.5; 5];
        let beta = qr_lp(x.view(), &y, &keep, &levels, 0.0, &[0.0]).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-9, "median {}", beta[0]);
    }

    #[test]
    fn lp_handles_weighted_line_fit() {
        let x = array![
            [1.0, 0.0],
            [1.0, 1.0],
            [1.0, 2.0],
            [1.0, 3.0],
            [1.0, 4.0]
        ];
        let y = [0.1, 1.0, 2.2, 2.9, 4.1];
        let keep = [1u8; 5];
        let levels = [0.5; 5];
        let beta = qr_lp(x.view(), &y, &keep, &levels, 0.0, &[0.0, 0.0]).unwrap();
        // Median regression of a nearly-linear cloud interpolates two points.
        let obj = qr_objective(x.view(), &y, &keep, &levels, 0.0, &[0.0, 0.0], &beta);
        // Any candidate must do no better.
        for cand in [[0.0, 1.0], [0.1, 0.98], [-0.1, 1.05]] {
            let alt = qr_objective(x.view(), &y, &keep, &levels, 0.0, &[0.0, 0.0], &cand);
            assert!(obj <= alt + 1e-9);
        }
    }

    #[test]
    fn gauss_and_wls_agree_with_hand_solution() {
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        let sol = gauss_solve(&a, &[5.0, 10.0]).unwrap();
        assert!((sol[0] - 1.0).abs() < 1e-12);
        assert!((sol[1] - 3.0).abs() < 1e-12);
        let x = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]];
        let beta = wls(x.view(), &[1.0, 3.0, 5.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-10 && (beta[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn rank_counts_independent_columns() {
        let x = array![[1.0, 2.0, 3.0], [0.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
        assert_eq!(gram_schmidt_rank(x.view(), 1e-10), 2);
    }

    #[test]
    fn logit_oracle_learns_separable_mean() {
        // Intercept-only: MLE is log(pbar/(1-pbar)).
        let x = array![[1.0], [1.0], [1.0], [1.0]];
        let beta = logit_mle(x.view(), &[1, 1, 1, 0], 1e-12).unwrap();
        let expect = (0.75f64 / 0.25).ln();
        assert!((beta[0] - expect).abs() < 1e-8);
    }
}

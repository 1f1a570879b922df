//! Small numeric kernel shared across the crate: standard-normal quantile,
//! sample quantiles, stable logistic helpers, and a rank-revealing Cholesky
//! used for every dense symmetric solve (no external linear-algebra backend).

use crate::{Error, Result};
use ndarray::ArrayView2;

/// Inverse standard-normal CDF (Wichura's PPND16 rational approximations),
/// accurate to ~1e-15 over (0,1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Parameter(format!(
            "normal_quantile argument must lie in (0,1), got {p}"
        )));
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_608e0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_3e0,
        4.630_337_846_156_545_295_9e0,
        5.769_497_221_460_691_405_5e0,
        3.647_848_324_763_204_605e0,
        1.270_458_252_452_368_382_6e0,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_3e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_9e0,
        1.676_384_830_183_803_849_4e0,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_7e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_2e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2e0,
        5.463_784_911_164_114_369_9e0,
        1.784_826_539_917_291_335_8e0,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_2e-5,
        2.010_334_399_292_288_132_6e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_2e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_6e-15,
    ];
    #[inline]
    fn poly(c: &[f64; 8], r: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &ck| acc * r + ck)
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < 0.0 { -val } else { val })
}

/// Type-1 sample quantile (left-continuous inverse empirical CDF): the
/// order statistic at rank `ceil(n*tau)`.
pub fn sample_quantile(values: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Parameter("sample_quantile of empty slice".into()));
    }
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::Parameter(format!(
            "quantile level must lie in (0,1), got {tau}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-finite value in quantile"));
    let n = sorted.len() as f64;
    let rank = (n * tau).ceil().max(1.0) as usize;
    Ok(sorted[rank - 1])
}

/// Interquartile range based on type-1 quantiles.
pub fn iqr(values: &[f64]) -> Result<f64> {
    Ok(sample_quantile(values, 0.75)? - sample_quantile(values, 0.25)?)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (denominator n).
pub fn sd_population(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Numerically stable logistic function exp(u)/(1+exp(u)).
#[inline]
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + exp(u)).
#[inline]
pub fn log1pexp(u: f64) -> f64 {
    if u <= -37.0 {
        u.exp()
    } else if u <= 18.0 {
        u.exp().ln_1p()
    } else if u <= 33.3 {
        u + (-u).exp()
    } else {
        u
    }
}

/// Soft-thresholding operator; exact threshold ties resolve to 0.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Rank-revealing Cholesky factorization of a symmetric PSD matrix, processed
/// in natural column order so that earlier columns win collinearity ties.
/// A column is dropped when its residual pivot falls below `rel_tol` times its
/// original diagonal entry.
pub struct RankCholesky {
    /// Factor rows of kept columns; `rows[q]` has length `q+1`.
    rows: Vec<Vec<f64>>,
    /// Original indices of kept columns, ascending.
    pub kept: Vec<usize>,
    /// Original indices of dropped columns, ascending.
    pub dropped: Vec<usize>,
    dim: usize,
}

impl RankCholesky {
    pub fn new(gram: ArrayView2<'_, f64>, rel_tol: f64) -> Self {
        let p = gram.nrows();
        debug_assert_eq!(p, gram.ncols());
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut kept: Vec<usize> = Vec::new();
        let mut dropped: Vec<usize> = Vec::new();
        for j in 0..p {
            let mut c = vec![0.0; kept.len() + 1];
            for (q, &kq) in kept.iter().enumerate() {
                let mut s = gram[(j, kq)];
                for r in 0..q {
                    s -= c[r] * rows[q][r];
                }
                c[q] = s / rows[q][q];
            }
            let mut pivot = gram[(j, j)];
            for cq in c.iter().take(kept.len()) {
                pivot -= cq * cq;
            }
            if pivot <= rel_tol * gram[(j, j)].max(f64::MIN_POSITIVE) {
                dropped.push(j);
            } else {
                let q = kept.len();
                c[q] = pivot.sqrt();
                rows.push(c);
                kept.push(j);
            }
        }
        RankCholesky {
            rows,
            kept,
            dropped,
            dim: p,
        }
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// Solves `A x = b` on the kept columns and scatters into a full-length
    /// vector with zeros at dropped positions.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rhs.len(), self.dim);
        let k = self.kept.len();
        // Forward substitution L z = b.
        let mut z = vec![0.0; k];
        for q in 0..k {
            let mut s = rhs[self.kept[q]];
            for r in 0..q {
                s -= self.rows[q][r] * z[r];
            }
            z[q] = s / self.rows[q][q];
        }
        // Back substitution L' x = z.
        let mut xk = vec![0.0; k];
        for q in (0..k).rev() {
            let mut s = z[q];
            for r in (q + 1)..k {
                s -= self.rows[r][q] * xk[r];
            }
            xk[q] = s / self.rows[q][q];
        }
        let mut out = vec![0.0; self.dim];
        for (q, &kq) in self.kept.iter().enumerate() {
            out[kq] = xk[q];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normal_quantile_reference_points() {
        // Frozen double-precision references for the inverse normal CDF.
        let cases = [
            (0.5, 0.0),
            (0.975, 1.959963984540054),
            (0.025, -1.959963984540054),
            (0.84, 0.994457883209753),
            (0.9, 1.2815515655446004),
            (1e-10, -6.361340902404056),
        ];
        for (p, want) in cases {
            let got = normal_quantile(p).unwrap();
            assert!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "quantile({p}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn normal_quantile_rejects_out_of_range() {
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(-0.2).is_err());
    }

    #[test]
    fn sample_quantile_type1_convention() {
        let v = [3.0, 1.0, 2.0, 4.0];
        // n*tau integral: rank n*tau; fractional: rank ceil(n*tau).
        assert_eq!(sample_quantile(&v, 0.5).unwrap(), 2.0);
        assert_eq!(sample_quantile(&v, 0.51).unwrap(), 3.0);
        assert_eq!(sample_quantile(&v, 0.25).unwrap(), 1.0);
        assert_eq!(sample_quantile(&v, 0.75).unwrap(), 3.0);
    }

    #[test]
    fn soft_threshold_tie_goes_to_zero() {
        assert_eq!(soft_threshold(0.5, 0.5), 0.0);
        assert_eq!(soft_threshold(-0.5, 0.5), 0.0);
        assert_eq!(soft_threshold(1.5, 0.5), 1.0);
        assert_eq!(soft_threshold(-1.5, 0.5), -1.0);
    }

    #[test]
    fn rank_cholesky_drops_duplicate_and_solves() {
        // Columns 0 and 2 identical; column 2 must be dropped, solve exact.
        let g = array![[4.0, 2.0, 4.0], [2.0, 3.0, 2.0], [4.0, 2.0, 4.0]];
        let ch = RankCholesky::new(g.view(), 1e-10);
        assert_eq!(ch.kept, vec![0, 1]);
        assert_eq!(ch.dropped, vec![2]);
        // Solve [4 2; 2 3] x = [8; 7] -> x = (1.25, 1.5).
        let x = ch.solve(&[8.0, 7.0, 8.0]);
        assert!((x[0] - 1.25).abs() < 1e-12);
        assert!((x[1] - 1.5).abs() < 1e-12);
        assert_eq!(x[2], 0.0);
    }
}

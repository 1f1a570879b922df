//! Dictionary expansion of raw controls and column standardization.

use crate::math::RankCholesky;
use crate::{Error, Result};
use ndarray::{Array2, ArrayView1};

/// Relative pivot tolerance for declaring a design column collinear.
const COLLINEAR_TOL: f64 = 1e-10;
/// Relative variance tolerance for declaring a column constant.
const ZERO_VAR_TOL: f64 = 1e-14;

/// Expanded regressor matrix. Column 0 is always the all-ones intercept.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: Array2<f64>,
    pub names: Vec<String>,
    /// Per-column divisor applied so far relative to the original columns;
    /// a coefficient on the stored column equals `scale[j]` times the
    /// coefficient on the original column.
    pub scale: Vec<f64>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.x.column(j)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: String,
}

/// Columns removed while building or standardizing a design.
#[derive(Debug, Clone, Default)]
pub struct DesignReport {
    pub dropped: Vec<DroppedColumn>,
}

/// Knot placement for spline terms.
#[derive(Debug, Clone, PartialEq)]
pub enum KnotRule {
    /// `Quantiles(b)` places break points at the `j/(b+1)` sample quantiles.
    Quantiles(usize),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineSpec {
    /// Polynomial degree of the truncated power basis (2 = quadratic spline).
    pub degree: usize,
    pub knots: KnotRule,
}

/// Expansion of one raw control: either a plain polynomial up to `degree`,
/// or a truncated power spline.
#[derive(Debug, Clone, PartialEq)]
pub struct TermSpec {
    pub control: String,
    pub degree: usize,
    pub spline: Option<SplineSpec>,
}

impl TermSpec {
    pub fn linear(control: &str) -> Self {
        TermSpec {
            control: control.into(),
            degree: 1,
            spline: None,
        }
    }
}

/// Full dictionary: per-control terms plus pairwise interactions of raw
/// controls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpansionSpec {
    pub terms: Vec<TermSpec>,
    pub interactions: Vec<(String, String)>,
}

impl ExpansionSpec {
    /// Every control enters linearly; no interactions.
    pub fn linear(controls: &[String]) -> Self {
        ExpansionSpec {
            terms: controls.iter().map(|c| TermSpec::linear(c)).collect(),
            interactions: Vec::new(),
        }
    }
}

fn quantile_knots(values: &[f64], b: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, c| a.partial_cmp(c).unwrap());
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let mut knots = Vec::new();
    for j in 1..=b {
        let q = crate::math::sample_quantile(values, j as f64 / (b + 1) as f64).unwrap();
        if q > lo && q < hi && knots.last() != Some(&q) {
            knots.push(q);
        }
    }
    knots
}

/// Expands raw controls into the regressor dictionary: intercept, per-control
/// polynomial or spline terms, then interaction products of raw controls.
/// Exactly collinear columns are removed (later columns lose) and reported.
pub fn build_design(
    z_raw: &ndarray::ArrayView2<'_, f64>,
    control_names: &[String],
    spec: &ExpansionSpec,
) -> Result<(DesignMatrix, DesignReport)> {
    let n = z_raw.nrows();
    if control_names.len() != z_raw.ncols() {
        return Err(Error::Parameter(format!(
            "{} control names for {} columns",
            control_names.len(),
            z_raw.ncols()
        )));
    }
    let index_of = |name: &str| -> Result<usize> {
        control_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("unknown control '{name}' in expansion spec")))
    };

    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut names: Vec<String> = vec!["(intercept)".into()];
    let mut seen_count: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();

    for term in &spec.terms {
        let j = index_of(&term.control)?;
        let u: Vec<f64> = z_raw.column(j).to_vec();
        let occurrence = seen_count.entry(term.control.as_str()).or_insert(0);
        *occurrence += 1;
        let base = if *occurrence == 1 {
            term.control.clone()
        } else {
            format!("{}.{}", term.control, *occurrence)
        };
        let poly_degree = match &term.spline {
            Some(s) => s.degree,
            None => term.degree,
        };
        if poly_degree == 0 {
            return Err(Error::Schema(format!(
                "degree must be at least 1 for control '{}'",
                term.control
            )));
        }
        for e in 1..=poly_degree {
            let col: Vec<f64> = u.iter().map(|&v| v.powi(e as i32)).collect();
            let name = if e == 1 {
                base.clone()
            } else {
                format!("{base}^{e}")
            };
            columns.push(col);
            names.push(name);
        }
        if let Some(s) = &term.spline {
            let lo = u.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let knots = match &s.knots {
                KnotRule::Quantiles(b) => quantile_knots(&u, *b),
                KnotRule::Explicit(k) => {
                    let mut k = k.clone();
                    k.sort_by(|a, c| a.partial_cmp(c).unwrap());
                    k.dedup();
                    for &kv in &k {
                        if !(kv > lo && kv < hi) {
                            return Err(Error::Schema(format!(
                                "spline break point {kv} for control '{}' lies outside the data range ({lo}, {hi})",
                                term.control
                            )));
                        }
                    }
                    k
                }
            };
            for (idx, &kv) in knots.iter().enumerate() {
                let col: Vec<f64> = u
                    .iter()
                    .map(|&v| {
                        let t = v - kv;
                        if t > 0.0 {
                            t.powi(s.degree as i32)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                columns.push(col);
                names.push(format!("{base}_spl{}", idx + 1));
            }
        }
    }

    for (a, b) in &spec.interactions {
        if a == b {
            return Err(Error::Schema(format!(
                "interaction of '{a}' with itself; raise its degree instead"
            )));
        }
        let ja = index_of(a)?;
        let jb = index_of(b)?;
        let col: Vec<f64> = (0..n).map(|i| z_raw[[i, ja]] * z_raw[[i, jb]]).collect();
        columns.push(col);
        names.push(format!("{a}:{b}"));
    }

    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(Error::Schema(format!(
                "duplicate design column name '{name}'"
            )));
        }
    }

    let p = columns.len();
    let mut x = Array2::zeros((n, p));
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            x[[i, j]] = v;
        }
    }

    // Exact-collinearity screen on the Gram matrix; later columns lose.
    let mut gram = Array2::zeros((p, p));
    for a in 0..p {
        for b in a..p {
            let mut s = 0.0;
            for i in 0..n {
                s += x[[i, a]] * x[[i, b]];
            }
            let v = s / n as f64;
            gram[[a, b]] = v;
            gram[[b, a]] = v;
        }
    }
    let chol = RankCholesky::new(gram.view(), COLLINEAR_TOL);
    let mut report = DesignReport::default();
    if chol.dropped.is_empty() {
        let scale = vec![1.0; p];
        return Ok((DesignMatrix { x, names, scale }, report));
    }
    for &j in &chol.dropped {
        report.dropped.push(DroppedColumn {
            name: names[j].clone(),
            reason: "collinear with earlier columns".into(),
        });
    }
    let kept = &chol.kept;
    let mut xk = Array2::zeros((n, kept.len()));
    for (out, &j) in kept.iter().enumerate() {
        for i in 0..n {
            xk[[i, out]] = x[[i, j]];
        }
    }
    let names_kept: Vec<String> = kept.iter().map(|&j| names[j].clone()).collect();
    let scale = vec![1.0; kept.len()];
    Ok((
        DesignMatrix {
            x: xk,
            names: names_kept,
            scale,
        },
        report,
    ))
}

/// Rescales every non-intercept column to unit sample second moment
/// (`mean(x_j^2) = 1`). Constant columns cannot be scaled and are dropped.
pub fn standardize(design: &DesignMatrix) -> (DesignMatrix, DesignReport) {
    let n = design.n() as f64;
    let mut keep: Vec<(usize, f64)> = vec![(0, 1.0)];
    let mut report = DesignReport::default();
    for j in 1..design.p() {
        let col = design.x.column(j);
        let ms = col.iter().map(|v| v * v).sum::<f64>() / n;
        let mean = col.sum() / n;
        let var = (ms - mean * mean).max(0.0);
        if var <= ZERO_VAR_TOL * ms.max(f64::MIN_POSITIVE) {
            report.dropped.push(DroppedColumn {
                name: design.names[j].clone(),
                reason: "zero variance".into(),
            });
        } else {
            keep.push((j, ms.sqrt()));
        }
    }
    let mut x = Array2::zeros((design.n(), keep.len()));
    let mut names = Vec::with_capacity(keep.len());
    let mut scale = Vec::with_capacity(keep.len());
    for (out, &(j, rms)) in keep.iter().enumerate() {
        for i in 0..design.n() {
            x[[i, out]] = design.x[[i, j]] / rms;
        }
        names.push(design.names[j].clone());
        scale.push(design.scale[j] * rms);
    }
    (DesignMatrix { x, names, scale }, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_terms_with_interaction() {
        let z = array![[1.0, 2.0], [3.0, 4.0], [5.0, 0.5], [2.0, -1.0]];
        let names = vec!["a".to_string(), "b".to_string()];
        let spec = ExpansionSpec {
            terms: vec![TermSpec::linear("a"), TermSpec::linear("b")],
            interactions: vec![("a".into(), "b".into())],
        };
        let (dm, report) = build_design(&z.view(), &names, &spec).unwrap();
        assert_eq!(dm.names, vec!["(intercept)", "a", "b", "a:b"]);
        assert!(report.dropped.is_empty());
        assert_eq!(dm.x.row(0).to_vec(), vec![1.0, 1.0, 2.0, 2.0]);
        assert_eq!(dm.x.row(2).to_vec(), vec![1.0, 5.0, 0.5, 2.5]);
    }

    #[test]
    fn duplicated_control_drops_one_copy() {
        let z = array![[1.0], [2.0], [3.0], [-1.0]];
        let names = vec!["a".to_string()];
        let spec = ExpansionSpec {
            terms: vec![TermSpec::linear("a"), TermSpec::linear("a")],
            interactions: vec![],
        };
        let (dm, report) = build_design(&z.view(), &names, &spec).unwrap();
        assert_eq!(dm.names, vec!["(intercept)", "a"]);
        assert_eq!(report.dropped.len(), 1);
        assert_eq!(report.dropped[0].name, "a.2");
    }

    #[test]
    fn quadratic_spline_truncated_powers() {
        let z = array![[0.0], [1.0], [2.0], [3.0], [4.0]];
        let names = vec!["u".to_string()];
        let spec = ExpansionSpec {
            terms: vec![TermSpec {
                control: "u".into(),
                degree: 1,
                spline: Some(SplineSpec {
                    degree: 2,
                    knots: KnotRule::Explicit(vec![2.0]),
                }),
            }],
            interactions: vec![],
        };
        let (dm, _) = build_design(&z.view(), &names, &spec).unwrap();
        assert_eq!(dm.names, vec!["(intercept)", "u", "u^2", "u_spl1"]);
        // (u - 2)^2_+ at u = 0..4
        let spl: Vec<f64> = (0..5).map(|i| dm.x[[i, 3]]).collect();
        assert_eq!(spl, vec![0.0, 0.0, 0.0, 1.0, 4.0]);
    }

    #[test]
    fn out_of_range_knot_rejected() {
        let z = array![[0.0], [1.0], [2.0]];
        let names = vec!["u".to_string()];
        let spec = ExpansionSpec {
            terms: vec![TermSpec {
                control: "u".into(),
                degree: 1,
                spline: Some(SplineSpec {
                    degree: 2,
                    knots: KnotRule::Explicit(vec![5.0]),
                }),
            }],
            interactions: vec![],
        };
        let err = build_design(&z.view(), &names, &spec).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn quantile_knots_are_interior_sample_quantiles() {
        let values: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let knots = quantile_knots(&values, 3);
        assert_eq!(knots, vec![3.0, 5.0, 8.0]);
    }

    #[test]
    fn standardize_unit_second_moment() {
        let z = array![[2.0, 1.0], [4.0, 1.0], [6.0, 1.0]];
        let names = vec!["a".to_string(), "b".to_string()];
        // b is constant: collinear with the intercept, dropped at build time.
        let spec = ExpansionSpec::linear(&names);
        let (dm, rep) = build_design(&z.view(), &names, &spec).unwrap();
        assert_eq!(rep.dropped.len(), 1);
        assert_eq!(rep.dropped[0].name, "b");
        let (std_dm, rep2) = standardize(&dm);
        assert!(rep2.dropped.is_empty());
        let n = std_dm.n() as f64;
        for j in 1..std_dm.p() {
            let ms = std_dm.x.column(j).iter().map(|v| v * v).sum::<f64>() / n;
            assert!((ms - 1.0).abs() <= 1e-12, "column {j} second moment {ms}");
        }
        // intercept untouched
        assert!(std_dm.x.column(0).iter().all(|&v| v == 1.0));
        let rms = ((4.0 + 16.0 + 36.0) / 3.0_f64).sqrt();
        assert!((std_dm.scale[1] - rms).abs() <= 1e-15);
    }

    #[test]
    fn standardize_drops_constant_column() {
        // Hand-built design (bypassing build_design) with a constant column.
        let x = array![[1.0, 2.0, 5.0], [1.0, 2.0, 7.0], [1.0, 2.0, 9.0]];
        let dm = DesignMatrix {
            x,
            names: vec!["(intercept)".into(), "c".into(), "v".into()],
            scale: vec![1.0; 3],
        };
        let (out, rep) = standardize(&dm);
        assert_eq!(rep.dropped.len(), 1);
        assert_eq!(rep.dropped[0].name, "c");
        assert_eq!(out.names, vec!["(intercept)", "v"]);
    }

    #[test]
    fn self_interaction_rejected() {
        let z = array![[1.0], [2.0]];
        let names = vec!["a".to_string()];
        let spec = ExpansionSpec {
            terms: vec![TermSpec::linear("a")],
            interactions: vec![("a".into(), "a".into())],
        };
        assert!(matches!(
            build_design(&z.view(), &names, &spec).unwrap_err(),
            Error::Schema(_)
        ));
    }
}

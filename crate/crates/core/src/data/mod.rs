//! Observations, censoring rules, CSV ingestion, design expansion, folds.

mod design;
mod folds;

pub use design::{
    build_design, standardize, DesignMatrix, DesignReport, DroppedColumn, ExpansionSpec,
    KnotRule, SplineSpec, TermSpec,
};
pub use folds::{make_folds, FoldPartition};

use crate::{Error, Result};
use ndarray::Array2;
use std::path::Path;

/// One estimation sample. Outcomes are stored in canonical left-censored form
/// (`y = max(y*, c)`); right-censored inputs are negated at ingestion.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Observed (censored) outcomes.
    pub y: Vec<f64>,
    /// Treatment variable (real; may be binary).
    pub d: Vec<f64>,
    /// Raw controls, n x m, before dictionary expansion.
    pub z_raw: Array2<f64>,
    /// Not-censored indicators: `t_i = 1` iff the latent outcome exceeds the
    /// censoring point.
    pub t: Vec<u8>,
    /// Per-observation censoring points, when known.
    pub censor_value: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        d: Vec<f64>,
        z_raw: Array2<f64>,
        t: Vec<u8>,
        censor_value: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::DegenerateData(format!(
                "need at least 2 observations, got {n}"
            )));
        }
        if d.len() != n || z_raw.nrows() != n || t.len() != n {
            return Err(Error::Parameter(format!(
                "length mismatch: y={}, d={}, z rows={}, t={}",
                n,
                d.len(),
                z_raw.nrows(),
                t.len()
            )));
        }
        for (name, v) in [("y", &y), ("d", &d)] {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Parameter(format!(
                    "non-finite value in {name} at index {i}"
                )));
            }
        }
        if !z_raw.iter().all(|x| x.is_finite()) {
            return Err(Error::Parameter("non-finite value in controls".into()));
        }
        if let Some(b) = t.iter().position(|&ti| ti > 1) {
            return Err(Error::Parameter(format!(
                "censoring indicator outside {{0,1}} at index {b}"
            )));
        }
        if let Some(c) = &censor_value {
            if c.len() != n {
                return Err(Error::Parameter(
                    "censor_value length does not match sample size".into(),
                ));
            }
            for i in 0..n {
                if !c[i].is_finite() {
                    return Err(Error::Parameter(format!(
                        "non-finite censoring point at index {i}"
                    )));
                }
                if y[i] < c[i] {
                    return Err(Error::Parameter(format!(
                        "observed outcome below censoring point at index {i}: left-censored data must satisfy y >= c"
                    )));
                }
                let expect = u8::from(y[i] > c[i]);
                if t[i] != expect {
                    return Err(Error::Parameter(format!(
                        "censoring indicator inconsistent with (y, c) at index {i}"
                    )));
                }
            }
        }
        if t.iter().all(|&ti| ti == 0) {
            return Err(Error::DegenerateData(
                "all observations censored; estimation impossible".into(),
            ));
        }
        Ok(Dataset {
            y,
            d,
            z_raw,
            t,
            censor_value,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_controls(&self) -> usize {
        self.z_raw.ncols()
    }

    pub fn uncensored_count(&self) -> usize {
        self.t.iter().map(|&ti| usize::from(ti)).sum()
    }
}

/// How the censoring point is encoded in an input file.
#[derive(Debug, Clone, PartialEq)]
pub enum CensorRule {
    /// A single known constant `c` for every row.
    Constant(f64),
    /// A column holding per-row censoring points `c_i`.
    Column(String),
    /// An explicit 0/1 not-censored indicator column (censoring points unknown).
    Indicator(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CensorSide {
    Left,
    Right,
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub outcome: String,
    pub treatment: String,
    pub controls: Vec<String>,
    pub censor: CensorRule,
    pub side: CensorSide,
}

/// Loads a comma-separated file (header row required, `#` comment lines
/// ignored) and derives censoring indicators per the schema's censor rule.
/// Right-censored inputs are converted to canonical left-censored form by
/// negating outcomes and censoring points.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Schema(format!(
                "cannot open input file {}: {e}",
                path.display()
            )),
            _ => Error::Parse {
                row: 0,
                msg: e.to_string(),
            },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            msg: format!("cannot read header row: {e}"),
        })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in {}", path.display())))
    };

    let y_col = col(&schema.outcome)?;
    let d_col = col(&schema.treatment)?;
    let z_cols = schema
        .controls
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let censor_col = match &schema.censor {
        CensorRule::Constant(_) => None,
        CensorRule::Column(name) | CensorRule::Indicator(name) => Some(col(name)?),
    };

    let negate = schema.side == CensorSide::Right;
    let sign = if negate { -1.0 } else { 1.0 };
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut z_flat = Vec::new();
    let mut t = Vec::new();
    let mut c_vals = Vec::new();

    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        let field = |j: usize, what: &str| -> Result<f64> {
            let raw = record.get(j).ok_or_else(|| Error::Parse {
                row,
                msg: format!("missing field for column '{what}'"),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric value '{raw}' in column '{what}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("non-finite value in column '{what}'"),
                });
            }
            Ok(v)
        };
        let yi = sign * field(y_col, &schema.outcome)?;
        y.push(yi);
        d.push(field(d_col, &schema.treatment)?);
        for (&j, name) in z_cols.iter().zip(&schema.controls) {
            z_flat.push(field(j, name)?);
        }
        match &schema.censor {
            CensorRule::Constant(c) => {
                let ci = sign * c;
                t.push(u8::from(yi > ci));
                c_vals.push(ci);
            }
            CensorRule::Column(name) => {
                let ci = sign * field(censor_col.unwrap(), name)?;
                t.push(u8::from(yi > ci));
                c_vals.push(ci);
            }
            CensorRule::Indicator(name) => {
                let ti = field(censor_col.unwrap(), name)?;
                if ti != 0.0 && ti != 1.0 {
                    return Err(Error::Parse {
                        row,
                        msg: format!("indicator column '{name}' must be 0 or 1, got {ti}"),
                    });
                }
                t.push(ti as u8);
            }
        }
    }

    let n = y.len();
    let m = schema.controls.len();
    let z_raw = Array2::from_shape_vec((n, m), z_flat)
        .map_err(|e| Error::Parameter(format!("control matrix shape: {e}")))?;
    let censor_value = match &schema.censor {
        CensorRule::Indicator(_) => None,
        _ => Some(c_vals),
    };
    Dataset::new(y, d, z_raw, t, censor_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn schema_const(c: f64) -> CsvSchema {
        CsvSchema {
            outcome: "y".into(),
            treatment: "d".into(),
            controls: vec!["z1".into()],
            censor: CensorRule::Constant(c),
            side: CensorSide::Left,
        }
    }

    #[test]
    fn constant_censoring_derives_indicators() {
        let f = write_temp("y,d,z1\n0,1,0.1\n1.5,0,0.2\n2,1,0.3\n");
        let ds = load_csv(f.path(), &schema_const(0.0)).unwrap();
        assert_eq!(ds.t, vec![0, 1, 1]);
        assert_eq!(ds.censor_value.as_deref(), Some(&[0.0, 0.0, 0.0][..]));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_temp("w,d,z1\n0,1,0.1\n1.5,0,0.2\n");
        let err = load_csv(f.path(), &schema_const(0.0)).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "got {err}");
    }

    #[test]
    fn all_censored_is_degenerate() {
        let f = write_temp("y,d,z1\n0,1,0.1\n0,0,0.2\n0,1,0.3\n");
        let err = load_csv(f.path(), &schema_const(0.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateData(_)), "got {err}");
    }

    #[test]
    fn non_numeric_field_names_row() {
        let f = write_temp("y,d,z1\n1,1,0.1\nxyz,0,0.2\n");
        let err = load_csv(f.path(), &schema_const(0.0)).unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn right_censoring_negates_at_ingestion() {
        // Right-censored: y = min(y*, c) with c = 2; y values 2, 1 mean the
        // first row is censored. After negation: y = (-2, -1), c = -2.
        let f = write_temp("y,d,z1\n2,1,0.1\n1,0,0.2\n");
        let mut s = schema_const(2.0);
        s.side = CensorSide::Right;
        let ds = load_csv(f.path(), &s).unwrap();
        assert_eq!(ds.y, vec![-2.0, -1.0]);
        assert_eq!(ds.t, vec![0, 1]);
        assert_eq!(ds.censor_value.as_deref(), Some(&[-2.0, -2.0][..]));
    }

    #[test]
    fn indicator_rule_reads_t_directly() {
        let f = write_temp("y,d,z1,cens\n1,1,0.1,1\n2,0,0.2,0\n");
        let s = CsvSchema {
            outcome: "y".into(),
            treatment: "d".into(),
            controls: vec!["z1".into()],
            censor: CensorRule::Indicator("cens".into()),
            side: CensorSide::Left,
        };
        let ds = load_csv(f.path(), &s).unwrap();
        assert_eq!(ds.t, vec![1, 0]);
        assert!(ds.censor_value.is_none());
    }

    #[test]
    fn dataset_round_trips_indicators_from_censor_values() {
        let ds = Dataset::new(
            vec![0.0, 1.5, 2.0],
            vec![1.0, 0.0, 1.0],
            array![[0.1], [0.2], [0.3]],
            vec![0, 1, 1],
            Some(vec![0.0, 0.0, 0.0]),
        )
        .unwrap();
        let recomputed: Vec<u8> = ds
            .y
            .iter()
            .zip(ds.censor_value.as_ref().unwrap())
            .map(|(&yi, &ci)| u8::from(yi > ci))
            .collect();
        assert_eq!(recomputed, ds.t);
    }

    #[test]
    fn equal_to_censor_point_counts_as_censored() {
        let err = Dataset::new(
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            array![[0.0], [0.0]],
            vec![1, 1], // first row claims uncensored despite y == c
            Some(vec![0.0, 0.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }
}

//! Run configuration: a TOML file, command-line flag overrides (flags win),
//! and validation into the resolved structs the library consumes.

use std::path::{Path, PathBuf};

use dmlcqr::data::{CensorRule, CensorSide, CsvSchema, ExpansionSpec, KnotRule, SplineSpec, TermSpec};
use dmlcqr::dml::{DmlConfig, DmlMode};
use dmlcqr::sim::mc::{EstimatorKind, McConfig};
use dmlcqr::sim::{DgpConfig, Signal};
use dmlcqr::solvers::{PenaltyOverrides, PenaltyRule};
use dmlcqr::{Error, Result};

/// One `[[term]]` entry: how a control enters the design. A plain `degree`
/// gives a polynomial; adding `knots` turns it into a truncated power
/// spline with that many interior quantile knots.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermFile {
    pub control: String,
    #[serde(default = "default_degree")]
    pub degree: usize,
    pub knots: Option<usize>,
}

fn default_degree() -> usize {
    1
}

impl TermFile {
    fn to_spec(&self) -> TermSpec {
        TermSpec {
            control: self.control.clone(),
            degree: self.degree,
            spline: self.knots.map(|b| SplineSpec {
                degree: self.degree,
                knots: KnotRule::Quantiles(b),
            }),
        }
    }
}

/// `estimate` subcommand file schema.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateFile {
    pub data: Option<PathBuf>,
    pub outcome: Option<String>,
    pub treatment: Option<String>,
    /// Raw control columns; defaults to every column not otherwise used.
    pub controls: Option<Vec<String>>,
    pub censor_constant: Option<f64>,
    pub censor_column: Option<String>,
    pub censor_indicator: Option<String>,
    /// "left" (default) or "right".
    pub side: Option<String>,
    pub tau: Option<Vec<f64>>,
    pub folds: Option<usize>,
    /// "dml1" or "dml2".
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub level: Option<f64>,
    #[serde(default)]
    pub penalty: PenaltyOverrides,
    #[serde(default)]
    pub term: Vec<TermFile>,
    #[serde(default)]
    pub interactions: Vec<[String; 2]>,
}

/// `simulate` / `coverage` / `dgp` file schema (superset; unused keys for a
/// given subcommand are simply ignored by that command's resolver).
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub tau: Option<f64>,
    pub theta: Option<f64>,
    pub rho: Option<f64>,
    pub r2_y: Option<f64>,
    pub r2_d: Option<f64>,
    pub coef_y: Option<f64>,
    pub coef_d: Option<f64>,
    pub censor_quantile: Option<f64>,
    pub reps: Option<usize>,
    pub estimators: Option<Vec<String>>,
    pub folds: Option<usize>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub level: Option<f64>,
    /// Grid axes for the `coverage` subcommand.
    pub r2_d_grid: Option<Vec<f64>>,
    pub r2_y_grid: Option<Vec<f64>>,
    /// Replication index exported by the `dgp` subcommand.
    pub rep: Option<usize>,
    #[serde(default)]
    pub penalty: PenaltyOverrides,
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Schema(format!("cannot read config file {}: {e}", path.display()))
    })?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        row: 0,
        msg: format!("config file {}: {e}", path.display()),
    })
}

pub fn parse_mode(s: &str) -> Result<DmlMode> {
    match s {
        "dml1" => Ok(DmlMode::Dml1),
        "dml2" => Ok(DmlMode::Dml2),
        other => Err(Error::Parameter(format!(
            "unknown mode '{other}' (expected dml1 or dml2)"
        ))),
    }
}

pub fn parse_side(s: &str) -> Result<CensorSide> {
    match s {
        "left" => Ok(CensorSide::Left),
        "right" => Ok(CensorSide::Right),
        other => Err(Error::Parameter(format!(
            "unknown censoring side '{other}' (expected left or right)"
        ))),
    }
}

/// Fully resolved `estimate` run; serialized form feeds the config hash.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EstimatePlan {
    pub data: PathBuf,
    pub outcome: String,
    pub treatment: String,
    pub controls: Vec<String>,
    pub censor: CensorPlan,
    pub side: String,
    pub tau: Vec<f64>,
    pub folds: usize,
    pub mode: DmlMode,
    pub seed: u64,
    pub level: f64,
    pub penalty: PenaltyOverrides,
    pub term: Vec<TermFile>,
    pub interactions: Vec<[String; 2]>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub enum CensorPlan {
    Constant(f64),
    Column(String),
    Indicator(String),
}

impl EstimatePlan {
    /// Merges file values and flag overrides; `controls` may still be empty
    /// here, in which case the caller fills it from the CSV header.
    pub fn from_file(file: EstimateFile) -> Result<Self> {
        let data = file
            .data
            .ok_or_else(|| Error::Parameter("no input data file given (set --data)".into()))?;
        let censor = match (file.censor_constant, &file.censor_column, &file.censor_indicator) {
            (Some(v), None, None) => CensorPlan::Constant(v),
            (None, Some(c), None) => CensorPlan::Column(c.clone()),
            (None, None, Some(t)) => CensorPlan::Indicator(t.clone()),
            (None, None, None) => {
                return Err(Error::Parameter(
                    "no censoring rule given (set one of censor_constant, censor_column, censor_indicator)"
                        .into(),
                ))
            }
            _ => {
                return Err(Error::Parameter(
                    "conflicting censoring rules: set exactly one of censor_constant, censor_column, censor_indicator"
                        .into(),
                ))
            }
        };
        let side = file.side.unwrap_or_else(|| "left".into());
        parse_side(&side)?;
        let tau = file.tau.unwrap_or_else(|| vec![0.5]);
        if tau.is_empty() {
            return Err(Error::Parameter("tau list is empty".into()));
        }
        for &t in &tau {
            if !(t > 0.0 && t < 1.0) || !t.is_finite() {
                return Err(Error::Parameter(format!(
                    "quantile level must lie strictly inside (0, 1), got {t}"
                )));
            }
        }
        let level = file.level.unwrap_or(0.95);
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Parameter(format!(
                "confidence level must lie strictly inside (0, 1), got {level}"
            )));
        }
        let folds = file.folds.unwrap_or(4);
        let mode = parse_mode(file.mode.as_deref().unwrap_or("dml2"))?;
        Ok(EstimatePlan {
            data,
            outcome: file.outcome.unwrap_or_else(|| "y".into()),
            treatment: file.treatment.unwrap_or_else(|| "d".into()),
            controls: file.controls.unwrap_or_default(),
            censor,
            side,
            tau,
            folds,
            mode,
            seed: file.seed.unwrap_or(0),
            level,
            penalty: file.penalty,
            term: file.term,
            interactions: file.interactions,
        })
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            outcome: self.outcome.clone(),
            treatment: self.treatment.clone(),
            controls: self.controls.clone(),
            censor: match &self.censor {
                CensorPlan::Constant(v) => CensorRule::Constant(*v),
                CensorPlan::Column(c) => CensorRule::Column(c.clone()),
                CensorPlan::Indicator(t) => CensorRule::Indicator(t.clone()),
            },
            side: parse_side(&self.side).expect("side validated at construction"),
        }
    }

    pub fn expansion(&self) -> ExpansionSpec {
        if self.term.is_empty() && self.interactions.is_empty() {
            return ExpansionSpec::linear(&self.controls);
        }
        let mut spec = ExpansionSpec {
            terms: self.term.iter().map(TermFile::to_spec).collect(),
            interactions: self
                .interactions
                .iter()
                .map(|[a, b]| (a.clone(), b.clone()))
                .collect(),
        };
        // Controls without an explicit term still enter linearly.
        for c in &self.controls {
            if !spec.terms.iter().any(|t| &t.control == c) {
                spec.terms.push(TermSpec::linear(c));
            }
        }
        spec
    }

    pub fn dml_config(&self, tau: f64, n: usize) -> Result<DmlConfig> {
        let mut cfg = DmlConfig::new(tau, self.folds, self.seed, n);
        cfg.mode = self.mode;
        cfg.ci_level = self.level;
        cfg.penalty = self
            .penalty
            .apply(PenaltyRule::default_for(n, cfg.penalty.seed))?;
        Ok(cfg)
    }
}

/// Fully resolved simulation-study run (simulate / coverage / dgp).
#[derive(Debug, Clone, serde::Serialize)]
pub struct StudyPlan {
    pub dgp: DgpConfig,
    pub estimators: Vec<EstimatorKind>,
    pub reps: usize,
    pub folds: usize,
    pub mode: DmlMode,
    pub level: f64,
    pub r2_d_grid: Vec<f64>,
    pub r2_y_grid: Vec<f64>,
    pub rep: usize,
    pub penalty: PenaltyOverrides,
}

impl StudyPlan {
    pub fn from_file(file: StudyFile) -> Result<Self> {
        let n = file.n.unwrap_or(500);
        let p = file.p.unwrap_or(300);
        let tau = file.tau.unwrap_or(0.5);
        let seed = file.seed.unwrap_or(0);
        let signal = match (file.r2_y, file.r2_d, file.coef_y, file.coef_d) {
            (None, None, Some(c_y), Some(c_d)) => Signal::Coef { c_y, c_d },
            (r2_y, r2_d, None, None) => Signal::R2 {
                r2_y: r2_y.unwrap_or(0.5),
                r2_d: r2_d.unwrap_or(0.5),
            },
            _ => {
                return Err(Error::Parameter(
                    "conflicting signal spec: use r2_y/r2_d or coef_y/coef_d, not both".into(),
                ))
            }
        };
        let mut dgp = DgpConfig::benchmark(n, p, tau, signal, seed)?;
        if let Some(t) = file.theta {
            dgp.theta = t;
        }
        if let Some(r) = file.rho {
            dgp.rho = r;
        }
        if let Some(q) = file.censor_quantile {
            dgp.censor_quantile = q;
        }
        dgp.validate()?;
        let estimators = match &file.estimators {
            None => vec![EstimatorKind::Dmlcqr],
            Some(names) => names
                .iter()
                .map(|s| s.parse::<EstimatorKind>())
                .collect::<Result<Vec<_>>>()?,
        };
        let level = file.level.unwrap_or(0.95);
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Parameter(format!(
                "confidence level must lie strictly inside (0, 1), got {level}"
            )));
        }
        let grid_default = || match dgp.signal {
            Signal::R2 { r2_d, .. } => vec![r2_d],
            Signal::Coef { .. } => vec![0.5],
        };
        let r2_d_grid = file.r2_d_grid.clone().unwrap_or_else(grid_default);
        let r2_y_grid = file.r2_y_grid.clone().unwrap_or_else(|| match dgp.signal {
            Signal::R2 { r2_y, .. } => vec![r2_y],
            Signal::Coef { .. } => vec![0.5],
        });
        for &r in r2_d_grid.iter().chain(r2_y_grid.iter()) {
            if !(r >= 0.0 && r < 1.0) {
                return Err(Error::Parameter(format!(
                    "grid R^2 values must lie in [0, 1), got {r}"
                )));
            }
        }
        if r2_d_grid.is_empty() || r2_y_grid.is_empty() {
            return Err(Error::Parameter("coverage grid axis is empty".into()));
        }
        Ok(StudyPlan {
            dgp,
            estimators,
            reps: file.reps.unwrap_or(100),
            folds: file.folds.unwrap_or(2),
            mode: parse_mode(file.mode.as_deref().unwrap_or("dml2"))?,
            level,
            r2_d_grid,
            r2_y_grid,
            rep: file.rep.unwrap_or(0),
            penalty: file.penalty,
        })
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            dgp: self.dgp.clone(),
            estimators: self.estimators.clone(),
            reps: self.reps,
            k: self.folds,
            mode: self.mode,
            ci_level: self.level,
            penalty: self.penalty.clone(),
        }
    }

    pub fn grid(&self) -> Vec<(f64, f64)> {
        let mut cells = Vec::with_capacity(self.r2_d_grid.len() * self.r2_y_grid.len());
        for &r2_d in &self.r2_d_grid {
            for &r2_y in &self.r2_y_grid {
                cells.push((r2_d, r2_y));
            }
        }
        cells
    }
}

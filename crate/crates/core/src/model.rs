//! Subject records, model specification and dataset ingestion.

use std::cmp::Ordering;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Name of the partner-identifier variable. Stratifying on it switches the
/// fit to site-aggregated scores.
pub const PARTNER_VAR: &str = "dp_cd";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ties {
    Breslow,
    Efron,
}

impl Ties {
    pub fn as_str(self) -> &'static str {
        match self {
            Ties::Breslow => "BRESLOW",
            Ties::Efron => "EFRON",
        }
    }
}

impl fmt::Display for Ties {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ties {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BRESLOW" => Ok(Ties::Breslow),
            "EFRON" => Ok(Ties::Efron),
            other => Err(Error::InvalidSpec(format!(
                "ties must be BRESLOW or EFRON, got `{other}`"
            ))),
        }
    }
}

/// Which side sums over event times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComputationPath {
    /// Stratified on the partner id: each site reduces its own strata to
    /// (loglik, gradient, Hessian).
    SiteAggregated,
    /// Sites ship per-event-time risk-set summaries and the center reduces.
    CenterAggregated,
}

impl ComputationPath {
    pub fn as_str(self) -> &'static str {
        match self {
            ComputationPath::SiteAggregated => "SITE_AGGREGATED",
            ComputationPath::CenterAggregated => "CENTER_AGGREGATED",
        }
    }
}

impl fmt::Display for ComputationPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComputationPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SITE_AGGREGATED" => Ok(ComputationPath::SiteAggregated),
            "CENTER_AGGREGATED" => Ok(ComputationPath::CenterAggregated),
            other => Err(Error::InvalidSpec(format!("unknown computation path `{other}`"))),
        }
    }
}

/// One component of a stratum key. Numeric text is canonicalised so that
/// `1` and `1.0` name the same stratum.
#[derive(Debug, Clone)]
pub enum StratumValue {
    Num(f64),
    Text(String),
}

impl StratumValue {
    pub fn parse(raw: &str) -> Self {
        let raw = raw.trim();
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => StratumValue::Num(v),
            _ => StratumValue::Text(raw.to_string()),
        }
    }
}

impl PartialEq for StratumValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for StratumValue {}

impl PartialOrd for StratumValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for StratumValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (StratumValue::Num(a), StratumValue::Num(b)) => a.total_cmp(b),
            (StratumValue::Num(_), StratumValue::Text(_)) => Ordering::Less,
            (StratumValue::Text(_), StratumValue::Num(_)) => Ordering::Greater,
            (StratumValue::Text(a), StratumValue::Text(b)) => a.cmp(b),
        }
    }
}

impl fmt::Display for StratumValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StratumValue::Num(v) => write!(f, "{v}"),
            StratumValue::Text(s) => f.write_str(s),
        }
    }
}

/// Tuple of stratification-variable values; empty for an unstratified model.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct StratumKey(pub Vec<StratumValue>);

impl StratumKey {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Inverse of `Display`: components separated by `;`.
    pub fn parse(s: &str) -> Self {
        if s.is_empty() {
            return Self::empty();
        }
        Self(s.split(';').map(StratumValue::parse).collect())
    }
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub weight: f64,
    pub freq: u64,
    pub time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
    pub stratum: StratumKey,
    pub partner_id: i64,
}

impl SubjectRecord {
    /// Weight multiplied by frequency: what enters every weighted sum.
    pub fn total_weight(&self) -> f64 {
        self.weight * self.freq as f64
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> f64 {
        crate::matrix::dot(beta, &self.covariates)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisDataset {
    pub records: Vec<SubjectRecord>,
    pub covariate_names: Vec<String>,
    pub partner_id: i64,
    pub dropped_rows: usize,
}

impl AnalysisDataset {
    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    /// Distinct strata present in the data, in key order.
    pub fn strata(&self) -> Vec<StratumKey> {
        let mut keys: Vec<StratumKey> = self.records.iter().map(|r| r.stratum.clone()).collect();
        keys.sort();
        keys.dedup();
        keys
    }

    /// Event count with frequencies applied.
    pub fn total_events(&self) -> u64 {
        self.records.iter().filter(|r| r.event).map(|r| r.freq).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub run_id: String,
    pub dataset_name: String,
    pub dependent_var: String,
    pub censoring_var: String,
    pub censoring_level: f64,
    pub independent_vars: Vec<String>,
    pub strata_vars: Vec<String>,
    pub ties: Ties,
    pub weight_var: Option<String>,
    pub freq_var: Option<String>,
    pub xconv: f64,
    pub max_iter: usize,
    pub alpha: f64,
    pub groups: usize,
    pub min_count_per_grp_glob: usize,
    pub max_numb_of_grp: usize,
    pub initial_estimates: Vec<f64>,
    pub partner_ids: Vec<i64>,
}

impl ModelSpec {
    /// Spec with every optional parameter at its documented default.
    pub fn new(
        run_id: impl Into<String>,
        dependent_var: impl Into<String>,
        censoring_var: impl Into<String>,
        independent_vars: Vec<String>,
    ) -> Self {
        let p = independent_vars.len();
        Self {
            run_id: run_id.into(),
            dataset_name: String::new(),
            dependent_var: dependent_var.into(),
            censoring_var: censoring_var.into(),
            censoring_level: 0.0,
            independent_vars,
            strata_vars: Vec::new(),
            ties: Ties::Breslow,
            weight_var: None,
            freq_var: None,
            xconv: 1e-4,
            max_iter: 20,
            alpha: 0.05,
            groups: 10,
            min_count_per_grp_glob: 6,
            max_numb_of_grp: 10_000,
            initial_estimates: vec![0.0; p],
            partner_ids: Vec::new(),
        }
    }

    pub fn p(&self) -> usize {
        self.independent_vars.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.independent_vars.is_empty() {
            return bad("independent_vars must not be empty".into());
        }
        for v in &self.independent_vars {
            if v.eq_ignore_ascii_case(&self.dependent_var)
                || v.eq_ignore_ascii_case(&self.censoring_var)
            {
                return bad(format!(
                    "independent variable `{v}` repeats the dependent or censoring variable"
                ));
            }
        }
        if self.initial_estimates.len() != self.p() {
            return bad(format!(
                "{} initial estimates for {} covariates",
                self.initial_estimates.len(),
                self.p()
            ));
        }
        if self.initial_estimates.iter().any(|b| !b.is_finite()) {
            return bad("initial estimates must be finite".into());
        }
        if !(self.xconv > 0.0 && self.xconv.is_finite()) {
            return bad(format!("xconv must be positive, got {}", self.xconv));
        }
        if self.max_iter == 0 {
            return bad("max_iter_nb must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.groups == 0 || self.min_count_per_grp_glob == 0 || self.max_numb_of_grp == 0 {
            return bad("groups, min_count_per_grp_glob and max_numb_of_grp must be positive".into());
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return bad(format!("RunID `{}` is not a valid identifier", self.run_id));
        }
        Ok(())
    }
}

pub fn select_computation_path(spec: &ModelSpec) -> ComputationPath {
    if spec.strata_vars.iter().any(|v| v.eq_ignore_ascii_case(PARTNER_VAR)) {
        ComputationPath::SiteAggregated
    } else {
        ComputationPath::CenterAggregated
    }
}

pub fn ingest_dataset(path: &Path, spec: &ModelSpec, partner_id: i64) -> Result<AnalysisDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, spec, partner_id).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        other => other,
    })
}

enum StratumSource {
    Column(usize),
    PartnerId,
}

/// Missing cells: empty, `.` (SAS missing), or anything that does not
/// parse as a finite number.
fn numeric(cell: Option<&str>) -> Option<f64> {
    let cell = cell?.trim();
    if cell.is_empty() || cell == "." {
        return None;
    }
    cell.parse::<f64>().ok().filter(|v| !v.is_nan())
}

pub fn ingest_reader<R: Read>(reader: R, spec: &ModelSpec, partner_id: i64) -> Result<AnalysisDataset> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::csv("<input>", e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    let find = |name: &str| -> Option<usize> {
        headers.iter().position(|h| h.eq_ignore_ascii_case(name))
    };
    let require = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let time_col = require(&spec.dependent_var)?;
    let cens_col = require(&spec.censoring_var)?;
    let cov_cols = spec
        .independent_vars
        .iter()
        .map(|v| require(v))
        .collect::<Result<Vec<_>>>()?;
    let strata_cols = spec
        .strata_vars
        .iter()
        .map(|v| match find(v) {
            Some(i) => Ok(StratumSource::Column(i)),
            None if v.eq_ignore_ascii_case(PARTNER_VAR) => Ok(StratumSource::PartnerId),
            None => Err(Error::MissingColumn(v.clone())),
        })
        .collect::<Result<Vec<_>>>()?;
    let weight_col = spec.weight_var.as_deref().map(require).transpose()?;
    let freq_col = spec.freq_var.as_deref().map(require).transpose()?;

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (idx, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::csv("<input>", e))?;
        let line = idx + 2;
        let Some(time) = numeric(row.get(time_col)) else {
            dropped += 1;
            continue;
        };
        let Some(raw_cens) = numeric(row.get(cens_col)) else {
            dropped += 1;
            continue;
        };
        let covariates: Option<Vec<f64>> = cov_cols
            .iter()
            .map(|&c| numeric(row.get(c)).filter(|v| v.is_finite()))
            .collect();
        let Some(covariates) = covariates else {
            dropped += 1;
            continue;
        };
        let mut stratum = Vec::with_capacity(strata_cols.len());
        let mut missing = false;
        for src in &strata_cols {
            match src {
                StratumSource::PartnerId => stratum.push(StratumValue::Num(partner_id as f64)),
                StratumSource::Column(c) => match row.get(*c).map(str::trim) {
                    Some(s) if !s.is_empty() && s != "." => stratum.push(StratumValue::parse(s)),
                    _ => missing = true,
                },
            }
        }
        if missing {
            dropped += 1;
            continue;
        }
        let weight = match weight_col {
            Some(c) => match numeric(row.get(c)) {
                Some(w) => w,
                None => {
                    dropped += 1;
                    continue;
                }
            },
            None => 1.0,
        };
        let freq = match freq_col {
            Some(c) => match numeric(row.get(c)) {
                Some(f) => f,
                None => {
                    dropped += 1;
                    continue;
                }
            },
            None => 1.0,
        };

        if !(time > 0.0 && time.is_finite()) {
            return Err(Error::NonPositiveTime { row: line, time });
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidWeight { row: line, value: weight });
        }
        if !(freq >= 1.0 && freq.fract() == 0.0 && freq < u32::MAX as f64) {
            return Err(Error::InvalidFreq { row: line, value: freq });
        }

        records.push(SubjectRecord {
            weight,
            freq: freq as u64,
            time,
            event: raw_cens != spec.censoring_level,
            covariates,
            stratum: StratumKey(stratum),
            partner_id,
        });
    }

    if records.is_empty() {
        return Err(Error::EmptyDataset { dropped });
    }
    Ok(AnalysisDataset {
        records,
        covariate_names: spec.independent_vars.clone(),
        partner_id,
        dropped_rows: dropped,
    })
}

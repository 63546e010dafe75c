//! `key = value` run configuration. Key names follow the center macro's
//! parameter names and are matched case-insensitively.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use discox_core::output::parse_float;
use discox_core::{ModelSpec, Ties};
use discox_exchange::{Mode, PartnerConfig, TransportConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()))
}

const TRANSPORT_KEYS: &[&str] = &["runid", "transport", "exchange_dir", "wait_time_min", "wait_time_max", "output_dir"];

const CENTER_KEYS: &[&str] = &[
    "dp_cd_list",
    "regr_type_cd",
    "reg_ds_in",
    "dependent_vars",
    "independent_vars",
    "censoring_var",
    "censoring_lev",
    "strata_vars",
    "ties",
    "weight",
    "freq",
    "xconv",
    "max_iter_nb",
    "alpha",
    "groups",
    "min_count_per_grp_glob",
    "max_numb_of_grp",
    "tbl_initial_est",
    "tbl_events_time_set",
];

const PARTNER_KEYS: &[&str] = &["dp_cd", "reg_ds_in", "min_count_per_grp"];

/// Parsed but uninterpreted settings, keys lower-cased.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    base: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, base: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg = RawConfig {
            values: BTreeMap::new(),
            base: base.into(),
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("line {}: expected `key = value`", n + 1));
            };
            let key = k.trim().to_ascii_lowercase();
            if cfg.values.insert(key.clone(), v.trim().to_string()).is_some() {
                return err(format!("line {}: `{}` is set twice", n + 1, k.trim()));
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Applies `key=value` overrides from the command line.
    pub fn override_with(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let Some((k, v)) = p.split_once('=') else {
                return err(format!("override `{p}` is not key=value"));
            };
            self.values.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_ascii_lowercase(), value.into());
    }

    fn check_keys(&self, allowed: &[&[&str]], role: &str) -> Result<()> {
        for k in self.values.keys() {
            if !allowed.iter().any(|set| set.contains(&k.as_str())) {
                return err(format!("unknown key `{k}` for the {role} role"));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| ConfigError(format!("`{key}` is required")))
    }

    fn number<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| ConfigError(format!("`{key}` has invalid value `{v}`"))))
            .transpose()
    }

    fn real(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                parse_float(v)
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| ConfigError(format!("`{key}` has invalid value `{v}`")))
            })
            .transpose()
    }

    fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| v.split([' ', ',', '\t']).filter(|s| !s.is_empty()).map(str::to_string).collect())
            .unwrap_or_default()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|v| self.base.join(v))
    }

    pub fn run_id(&self) -> Result<String> {
        self.required("runid").map(str::to_string)
    }

    fn transport(&self) -> Result<TransportConfig> {
        let mut cfg = TransportConfig::default();
        match self.get("transport").map(str::to_ascii_uppercase).as_deref() {
            None | Some("DIRECTORY") => {}
            Some("LOOPBACK") => cfg.mode = Mode::Loopback,
            Some(other) => return err(format!("transport must be DIRECTORY or LOOPBACK, got `{other}`")),
        }
        if let Some(dir) = self.path("exchange_dir") {
            cfg.root = dir;
        } else if cfg.mode == Mode::Directory {
            cfg.root = self.base.join("exchange");
        }
        if let Some(v) = self.real("wait_time_min")? {
            cfg.wait_time_min = v;
        }
        if let Some(v) = self.real("wait_time_max")? {
            cfg.wait_time_max = v;
        }
        cfg.validate().map_err(ConfigError)?;
        Ok(cfg)
    }

    fn output_dir(&self) -> PathBuf {
        self.path("output_dir").unwrap_or_else(|| {
            if self.base.as_os_str().is_empty() {
                PathBuf::from(".")
            } else {
                self.base.clone()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterSettings {
    pub spec: ModelSpec,
    pub transport: TransportConfig,
    pub output_dir: PathBuf,
    /// Pooled input for the reference fit.
    pub data: Option<PathBuf>,
    pub event_time_set: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartnerSettings {
    pub partner: PartnerConfig,
    pub transport: TransportConfig,
    pub output_dir: PathBuf,
}

fn read_single_row(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        .clone();
    let row = rdr
        .records()
        .next()
        .ok_or_else(|| ConfigError(format!("{}: no data row", path.display())))?
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    Ok(header
        .iter()
        .zip(row.iter())
        .map(|(h, v)| (h.trim().to_ascii_lowercase(), v.trim().to_string()))
        .collect())
}

/// One column per parameter, named after the covariate.
fn initial_estimates(path: &Path, vars: &[String]) -> Result<Vec<f64>> {
    let row = read_single_row(path)?;
    vars.iter()
        .map(|v| {
            let raw = row
                .get(&v.to_ascii_lowercase())
                .ok_or_else(|| ConfigError(format!("{}: no column `{v}`", path.display())))?;
            parse_float(raw)
                .filter(|x| x.is_finite())
                .ok_or_else(|| ConfigError(format!("{}: `{v}` is not a number", path.display())))
        })
        .collect()
}

/// The column named after the dependent variable, one event time per row.
fn event_time_set(path: &Path, dependent: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let col = rdr
        .headers()
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(dependent))
        .ok_or_else(|| ConfigError(format!("{}: no column `{dependent}`", path.display())))?;
    let mut times = Vec::new();
    for r in rdr.records() {
        let r = r.map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let t = parse_float(&r[col])
            .filter(|x| x.is_finite())
            .ok_or_else(|| ConfigError(format!("{}: bad event time `{}`", path.display(), &r[col])))?;
        times.push(t);
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    Ok(times)
}

impl CenterSettings {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        raw.check_keys(&[TRANSPORT_KEYS, CENTER_KEYS], "center")?;
        if let Some(code) = raw.get("regr_type_cd") {
            if code != "10" {
                return err(format!("regr_type_cd = {code}: only Cox regression (10) is supported"));
            }
        }
        let dependent = raw.required("dependent_vars")?;
        if dependent.split_whitespace().count() != 1 {
            return err("dependent_vars must name exactly one variable");
        }
        let independent = raw.list("independent_vars");
        if independent.is_empty() {
            return err("`independent_vars` is required");
        }
        let mut spec = ModelSpec::new(raw.run_id()?, dependent, raw.required("censoring_var")?, independent);
        spec.dataset_name = raw.get("reg_ds_in").unwrap_or_default().to_string();
        spec.strata_vars = raw.list("strata_vars");
        if let Some(t) = raw.get("ties") {
            spec.ties = t.parse::<Ties>().map_err(|e| ConfigError(e.to_string()))?;
        }
        spec.weight_var = raw.get("weight").map(str::to_string);
        spec.freq_var = raw.get("freq").map(str::to_string);
        if let Some(v) = raw.real("censoring_lev")? {
            spec.censoring_level = v;
        }
        if let Some(v) = raw.real("xconv")? {
            spec.xconv = v;
        }
        if let Some(v) = raw.number("max_iter_nb")? {
            spec.max_iter = v;
        }
        if let Some(v) = raw.real("alpha")? {
            spec.alpha = v;
        }
        if let Some(v) = raw.number("groups")? {
            spec.groups = v;
        }
        if let Some(v) = raw.number("min_count_per_grp_glob")? {
            spec.min_count_per_grp_glob = v;
        }
        if let Some(v) = raw.number("max_numb_of_grp")? {
            spec.max_numb_of_grp = v;
        }
        spec.partner_ids = raw
            .list("dp_cd_list")
            .iter()
            .map(|s| s.parse().map_err(|_| ConfigError(format!("dp_cd_list entry `{s}` is not an integer"))))
            .collect::<Result<_>>()?;
        let mut seen = spec.partner_ids.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != spec.partner_ids.len() {
            return err("dp_cd_list repeats a partner");
        }
        if let Some(p) = raw.path("tbl_initial_est") {
            spec.initial_estimates = initial_estimates(&p, &spec.independent_vars)?;
        }
        let event_time_set = raw
            .path("tbl_events_time_set")
            .map(|p| event_time_set(&p, &spec.dependent_var))
            .transpose()?;
        spec.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(Self {
            transport: raw.transport()?,
            output_dir: raw.output_dir(),
            data: raw.path("reg_ds_in"),
            event_time_set,
            spec,
        })
    }
}

impl PartnerSettings {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        raw.check_keys(&[TRANSPORT_KEYS, PARTNER_KEYS], "partner")?;
        let partner_id = raw
            .number("dp_cd")?
            .ok_or_else(|| ConfigError("`dp_cd` is required".into()))?;
        let min_count_override: Option<usize> = raw.number("min_count_per_grp")?;
        if min_count_override == Some(0) {
            return err("min_count_per_grp must be positive");
        }
        Ok(Self {
            partner: PartnerConfig {
                run_id: raw.run_id()?,
                partner_id,
                data: raw
                    .path("reg_ds_in")
                    .ok_or_else(|| ConfigError("`reg_ds_in` is required".into()))?,
                min_count_override,
            },
            transport: raw.transport()?,
            output_dir: raw.output_dir(),
        })
    }
}

//! Message <-> CSV files. Every message is a `manifest.csv` of key/value
//! rows plus zero or more payload tables. Floats use the shortest text
//! that parses back to the same bits, symmetric matrices travel as their
//! lower triangle, and stratum keys are `;`-joined.

use std::collections::BTreeMap;

use discox_core::diagnostics::{BaselineEstimator, BaselineHazard, BinnedResidualSummary, ResidualBin};
use discox_core::matrix::Matrix;
use discox_core::model::{ComputationPath, StratumKey, Ties};
use discox_core::output::{fmt_float, parse_float};
use discox_core::site::{
    CensoringRow, CensoringSummary, CovariateSums, EventTimeGrid, RiskSetSummary, Scope, ScoreContribution, TiedRiskSums,
};
use discox_core::{ErrorCategory, EvalPurpose};

use crate::error::{ExchangeError, Result};
use crate::message::*;

pub const MANIFEST: &str = "manifest.csv";
pub const TRIGGER: &str = "files_done.ok";

/// File name to raw bytes, manifest included.
pub type Files = BTreeMap<String, Vec<u8>>;

struct OutTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl OutTable {
    fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    fn bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

struct InTable<'a> {
    file: &'a str,
    cols: Vec<usize>,
    rows: Vec<Vec<String>>,
}

impl InTable<'_> {
    /// Cell of declared column `c` (index into the `required` list).
    fn cell(&self, row: usize, c: usize) -> &str {
        &self.rows[row][self.cols[c]]
    }

    fn float(&self, row: usize, c: usize, name: &str) -> Result<f64> {
        parse_float(self.cell(row, c)).ok_or_else(|| {
            ExchangeError::malformed(
                self.file,
                format!("row {}: column `{name}` is not a number: `{}`", row + 1, self.cell(row, c)),
            )
        })
    }

    fn finite(&self, row: usize, c: usize, name: &str) -> Result<f64> {
        let v = self.float(row, c, name)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExchangeError::malformed(
                self.file,
                format!("row {}: column `{name}` must be finite", row + 1),
            ))
        }
    }

    fn int<T: std::str::FromStr>(&self, row: usize, c: usize, name: &str) -> Result<T> {
        self.cell(row, c).trim().parse().map_err(|_| {
            ExchangeError::malformed(
                self.file,
                format!("row {}: column `{name}` is not an integer: `{}`", row + 1, self.cell(row, c)),
            )
        })
    }

    fn len(&self) -> usize {
        self.rows.len()
    }
}

fn parse_table<'a>(files: &Files, file: &'a str, required: &[String], declared_rows: usize) -> Result<InTable<'a>> {
    let bytes = files
        .get(file)
        .ok_or_else(|| ExchangeError::malformed(file, "payload file listed in the manifest is missing"))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(bytes.as_slice());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| ExchangeError::malformed(file, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let cols = required
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| ExchangeError::malformed(file, format!("missing column `{name}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = rdr
        .records()
        .map(|r| {
            r.map(|r| r.iter().map(str::to_string).collect::<Vec<_>>())
                .map_err(|e| ExchangeError::malformed(file, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.len() != declared_rows {
        return Err(ExchangeError::malformed(
            file,
            format!("manifest declares {declared_rows} rows, file has {}", rows.len()),
        ));
    }
    Ok(InTable { file, cols, rows })
}

fn names(prefix: &str, p: usize) -> Vec<String> {
    (0..p).map(|i| format!("{prefix}{i}")).collect()
}

fn tri_names(prefix: &str, p: usize) -> Vec<String> {
    let mut v = Vec::with_capacity(p * (p + 1) / 2);
    for i in 0..p {
        for j in 0..=i {
            v.push(format!("{prefix}{i}_{j}"));
        }
    }
    v
}

fn floats(v: &[f64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|&x| fmt_float(x))
}

fn purpose_str(p: EvalPurpose) -> &'static str {
    match p {
        EvalPurpose::NullModel => "NULL_MODEL",
        EvalPurpose::Iteration => "ITERATION",
        EvalPurpose::Covariance => "COVARIANCE",
    }
}

fn parse_purpose(s: &str) -> Option<EvalPurpose> {
    Some(match s {
        "NULL_MODEL" => EvalPurpose::NullModel,
        "ITERATION" => EvalPurpose::Iteration,
        "COVARIANCE" => EvalPurpose::Covariance,
        _ => return None,
    })
}

fn estimator_from(s: &str) -> Option<BaselineEstimator> {
    match s {
        "BRESLOW" => Some(BaselineEstimator::Breslow),
        "FLEMING_HARRINGTON" => Some(BaselineEstimator::FlemingHarrington),
        _ => None,
    }
}

/// Builder for one outgoing message.
struct Writer {
    manifest: Vec<(String, String)>,
    files: Files,
}

impl Writer {
    fn new(msg: &Message) -> Self {
        Self {
            manifest: vec![
                ("run_id".into(), msg.run_id.clone()),
                ("round".into(), msg.round.to_string()),
                ("kind".into(), msg.kind().as_str().into()),
            ],
            files: Files::new(),
        }
    }

    fn scalar(&mut self, key: &str, value: impl ToString) {
        self.manifest.push((key.to_string(), value.to_string()));
    }

    fn table(&mut self, name: &str, t: OutTable) {
        self.manifest.push((format!("file:{name}"), t.rows.len().to_string()));
        self.files.insert(name.to_string(), t.bytes());
    }

    fn finish(mut self) -> Files {
        let mut m = OutTable::new(vec!["key".into(), "value".into()]);
        for (k, v) in self.manifest {
            m.rows.push(vec![k, v]);
        }
        self.files.insert(MANIFEST.to_string(), m.bytes());
        self.files
    }
}

fn grid_table(grid: &EventTimeGrid) -> OutTable {
    let mut t = OutTable::new(vec!["stratum".into(), "time".into(), "ties".into()]);
    for (k, g) in &grid.strata {
        if g.is_empty() {
            // Keeps strata without events on the grid.
            t.rows.push(vec![k.to_string(), String::new(), String::new()]);
        }
        for (time, ties) in g.times.iter().zip(&g.ties) {
            t.rows.push(vec![k.to_string(), fmt_float(*time), ties.to_string()]);
        }
    }
    t
}

fn baseline_table(b: &BaselineHazard) -> OutTable {
    let mut t = OutTable::new(vec!["stratum".into(), "time".into(), "cum_hazard".into()]);
    for (k, steps) in &b.strata {
        if steps.is_empty() {
            t.rows.push(vec![k.to_string(), String::new(), String::new()]);
        }
        for &(time, h) in steps {
            t.rows.push(vec![k.to_string(), fmt_float(time), fmt_float(h)]);
        }
    }
    t
}

fn beta_table(beta: &[f64]) -> OutTable {
    let mut t = OutTable::new(vec!["index".into(), "value".into()]);
    for (i, b) in beta.iter().enumerate() {
        t.rows.push(vec![i.to_string(), fmt_float(*b)]);
    }
    t
}

pub fn encode(msg: &Message) -> Files {
    let mut w = Writer::new(msg);
    match &msg.payload {
        Payload::HandshakeRequest(h) => {
            w.scalar("dependent_var", &h.dependent_var);
            w.scalar("censoring_var", &h.censoring_var);
            w.scalar("censoring_level", fmt_float(h.censoring_level));
            w.scalar("independent_vars", h.independent_vars.join(" "));
            w.scalar("strata_vars", h.strata_vars.join(" "));
            w.scalar("weight_var", h.weight_var.clone().unwrap_or_default());
            w.scalar("freq_var", h.freq_var.clone().unwrap_or_default());
            w.scalar("ties", h.ties.as_str());
            w.scalar("path", h.path.as_str());
            w.scalar("want_grid", u8::from(h.want_grid));
            w.scalar("groups", h.groups);
            w.scalar("min_count_per_grp_glob", h.min_count_per_grp_glob);
            w.scalar("max_numb_of_grp", h.max_numb_of_grp);
        }
        Payload::HandshakeReply(h) => {
            let p = h.covariate_sums.first().map_or(0, |c| c.sums.len());
            w.scalar("partner_id", h.partner_id);
            w.scalar("p", p);
            w.scalar("records", h.records);
            w.scalar("dropped_rows", h.dropped_rows);
            w.scalar("has_grid", u8::from(h.grid.is_some()));
            if let Some(g) = &h.grid {
                w.table("grid.csv", grid_table(g));
            }
            let mut c = OutTable::new(vec!["stratum".into(), "total".into(), "events".into(), "censored".into()]);
            for r in &h.censoring.rows {
                c.rows.push(vec![
                    r.stratum.to_string(),
                    r.total.to_string(),
                    r.events.to_string(),
                    r.censored.to_string(),
                ]);
            }
            w.table("censoring.csv", c);
            let mut header = vec!["stratum".to_string(), "weight_total".to_string()];
            header.extend(names("z", p));
            let mut s = OutTable::new(header);
            for cs in &h.covariate_sums {
                let mut row = vec![cs.stratum.to_string(), fmt_float(cs.weight_total)];
                row.extend(floats(&cs.sums));
                s.rows.push(row);
            }
            w.table("covariate_sums.csv", s);
        }
        Payload::Iterate(it) => {
            w.scalar("p", it.beta.len());
            w.scalar("ties", it.ties.as_str());
            w.scalar("path", it.path.as_str());
            w.scalar("purpose", purpose_str(it.purpose));
            w.scalar("want_baseline", u8::from(it.want_baseline));
            w.table("beta.csv", beta_table(&it.beta));
            w.table("grid.csv", grid_table(&it.grid));
        }
        Payload::SummaryReply(SummaryReply::RiskSets { partner_id, summaries }) => {
            let p = summaries.first().map_or(0, RiskSetSummary::p);
            let efron = summaries.first().is_some_and(|s| s.tied.is_some());
            w.scalar("partner_id", partner_id);
            w.scalar("p", p);
            w.scalar("efron", u8::from(efron));
            let mut header: Vec<String> = vec!["stratum".into(), "time".into(), "tie_count".into(), "d0".into()];
            header.extend(names("d1_", p));
            header.push("s0".into());
            header.extend(names("s1_", p));
            header.extend(tri_names("s2_", p));
            if efron {
                header.push("q0".into());
                header.extend(names("q1_", p));
                header.extend(tri_names("q2_", p));
            }
            let mut t = OutTable::new(header);
            for s in summaries {
                let mut row = vec![
                    s.stratum.to_string(),
                    fmt_float(s.time),
                    s.local_tie_count.to_string(),
                    fmt_float(s.d0),
                ];
                row.extend(floats(&s.d1));
                row.push(fmt_float(s.s0));
                row.extend(floats(&s.s1));
                row.extend(floats(&s.s2.lower_triangle()));
                if let Some(q) = &s.tied {
                    row.push(fmt_float(q.q0));
                    row.extend(floats(&q.q1));
                    row.extend(floats(&q.q2.lower_triangle()));
                }
                t.rows.push(row);
            }
            w.table("summaries.csv", t);
        }
        Payload::SummaryReply(SummaryReply::Scores {
            partner_id,
            scores,
            baseline,
        }) => {
            let p = scores.first().map_or(0, |s| s.gradient.len());
            w.scalar("partner_id", partner_id);
            w.scalar("p", p);
            let mut header: Vec<String> = vec!["stratum".into(), "loglik".into()];
            header.extend(names("g_", p));
            header.extend(tri_names("h_", p));
            let mut t = OutTable::new(header);
            for s in scores {
                let mut row = vec![s.stratum.to_string(), fmt_float(s.loglik)];
                row.extend(floats(&s.gradient));
                row.extend(floats(&s.hessian.lower_triangle()));
                t.rows.push(row);
            }
            w.table("scores.csv", t);
            if let Some(b) = baseline {
                w.scalar("estimator", b.estimator.as_str());
                w.table("baseline.csv", baseline_table(b));
            }
        }
        Payload::Finalize(f) => {
            w.scalar("p", f.beta_hat.len());
            w.scalar("estimator", f.baseline.estimator.as_str());
            w.table("beta.csv", beta_table(&f.beta_hat));
            w.table("baseline.csv", baseline_table(&f.baseline));
        }
        Payload::DiagnosticsReply(d) => {
            w.scalar("partner_id", d.partner_id);
            w.scalar("suppressed", u8::from(d.suppressed));
            let mut t = OutTable::new(
                ["bin", "count", "mean_linear_predictor", "mean_martingale", "mean_deviance"]
                    .map(String::from)
                    .to_vec(),
            );
            for r in &d.rows {
                t.rows.push(vec![
                    r.bin.to_string(),
                    r.count.to_string(),
                    fmt_float(r.mean_linear_predictor),
                    fmt_float(r.mean_martingale),
                    fmt_float(r.mean_deviance),
                ]);
            }
            w.table("bins.csv", t);
        }
        Payload::Stop(s) => {
            w.scalar("status", &s.status);
            w.scalar("reason", &s.reason);
        }
        Payload::Error(e) => {
            w.scalar("partner_id", e.partner_id);
            w.scalar("category", e.category.as_str());
            w.scalar("reason", &e.reason);
        }
    }
    w.finish()
}

struct Manifest {
    values: BTreeMap<String, String>,
}

impl Manifest {
    fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ExchangeError::malformed(MANIFEST, format!("missing key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| ExchangeError::malformed(MANIFEST, format!("key `{key}` has invalid value `{raw}`")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(ExchangeError::malformed(MANIFEST, format!("key `{key}` must be 0 or 1, got `{other}`"))),
        }
    }

    fn float(&self, key: &str) -> Result<f64> {
        let raw = self.get(key)?;
        parse_float(raw)
            .filter(|v| v.is_finite())
            .ok_or_else(|| ExchangeError::malformed(MANIFEST, format!("key `{key}` has invalid value `{raw}`")))
    }

    fn list(&self, key: &str) -> Result<Vec<String>> {
        Ok(self.get(key)?.split_whitespace().map(str::to_string).collect())
    }

    fn optional(&self, key: &str) -> Result<Option<String>> {
        let v = self.get(key)?;
        Ok((!v.is_empty()).then(|| v.to_string()))
    }

    fn rows(&self, file: &str) -> Result<usize> {
        self.parse(&format!("file:{file}"))
    }

    fn has_file(&self, file: &str) -> bool {
        self.values.contains_key(&format!("file:{file}"))
    }

    fn ties(&self) -> Result<Ties> {
        self.get("ties")?
            .parse()
            .map_err(|_| ExchangeError::malformed(MANIFEST, "invalid `ties`"))
    }

    fn path(&self) -> Result<ComputationPath> {
        self.get("path")?
            .parse()
            .map_err(|_| ExchangeError::malformed(MANIFEST, "invalid `path`"))
    }
}

fn read_manifest(files: &Files) -> Result<Manifest> {
    let bytes = files
        .get(MANIFEST)
        .ok_or_else(|| ExchangeError::malformed(MANIFEST, "manifest is missing"))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(bytes.as_slice());
    let header = rdr.headers().map_err(|e| ExchangeError::malformed(MANIFEST, e.to_string()))?;
    for col in ["key", "value"] {
        if !header.iter().any(|h| h == col) {
            return Err(ExchangeError::malformed(MANIFEST, format!("missing column `{col}`")));
        }
    }
    let mut values = BTreeMap::new();
    for r in rdr.records() {
        let r = r.map_err(|e| ExchangeError::malformed(MANIFEST, e.to_string()))?;
        if r.len() != 2 {
            return Err(ExchangeError::malformed(MANIFEST, "every row needs a key and a value"));
        }
        values.insert(r[0].to_string(), r[1].to_string());
    }
    Ok(Manifest { values })
}

fn read_grid(files: &Files, m: &Manifest) -> Result<EventTimeGrid> {
    let req = ["stratum", "time", "ties"].map(String::from);
    let t = parse_table(files, "grid.csv", &req, m.rows("grid.csv")?)?;
    let mut grid = EventTimeGrid::default();
    for i in 0..t.len() {
        let g = grid.strata.entry(StratumKey::parse(t.cell(i, 0))).or_default();
        if t.cell(i, 1).is_empty() {
            continue;
        }
        let time = t.finite(i, 1, "time")?;
        if g.times.last().is_some_and(|&last| last >= time) {
            return Err(ExchangeError::malformed("grid.csv", format!("row {}: times must increase", i + 1)));
        }
        g.times.push(time);
        g.ties.push(t.int(i, 2, "ties")?);
    }
    Ok(grid)
}

fn read_baseline(files: &Files, m: &Manifest) -> Result<BaselineHazard> {
    let estimator = estimator_from(m.get("estimator")?)
        .ok_or_else(|| ExchangeError::malformed(MANIFEST, "invalid `estimator`"))?;
    let req = ["stratum", "time", "cum_hazard"].map(String::from);
    let t = parse_table(files, "baseline.csv", &req, m.rows("baseline.csv")?)?;
    let mut strata: BTreeMap<StratumKey, Vec<(f64, f64)>> = BTreeMap::new();
    for i in 0..t.len() {
        let steps = strata.entry(StratumKey::parse(t.cell(i, 0))).or_default();
        if t.cell(i, 1).is_empty() {
            continue;
        }
        steps.push((t.finite(i, 1, "time")?, t.finite(i, 2, "cum_hazard")?));
    }
    Ok(BaselineHazard { estimator, strata })
}

fn read_beta(files: &Files, m: &Manifest, p: usize) -> Result<Vec<f64>> {
    let req = ["index", "value"].map(String::from);
    let t = parse_table(files, "beta.csv", &req, m.rows("beta.csv")?)?;
    if t.len() != p {
        return Err(ExchangeError::malformed("beta.csv", format!("expected {p} coefficients, found {}", t.len())));
    }
    let mut beta = vec![0.0; p];
    for i in 0..p {
        let idx: usize = t.int(i, 0, "index")?;
        if idx >= p {
            return Err(ExchangeError::malformed("beta.csv", format!("index {idx} out of range")));
        }
        beta[idx] = t.finite(i, 1, "value")?;
    }
    Ok(beta)
}

/// Reads consecutive columns `first..first+n` as finite floats.
fn row_floats(t: &InTable, row: usize, first: usize, names: &[String]) -> Result<Vec<f64>> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| t.finite(row, first + k, name))
        .collect()
}

fn sym(file: &str, p: usize, lower: &[f64]) -> Result<Matrix> {
    Matrix::from_lower_triangle(p, lower).ok_or_else(|| ExchangeError::malformed(file, "bad lower-triangle length"))
}

pub fn decode(files: &Files) -> Result<Message> {
    let m = read_manifest(files)?;
    let run_id = m.get("run_id")?.to_string();
    let round: u32 = m.parse("round")?;
    let kind = Kind::parse(m.get("kind")?)
        .ok_or_else(|| ExchangeError::malformed(MANIFEST, format!("unknown kind `{}`", m.get("kind").unwrap_or(""))))?;

    let payload = match kind {
        Kind::HandshakeRequest => Payload::HandshakeRequest(HandshakeRequest {
            dependent_var: m.get("dependent_var")?.to_string(),
            censoring_var: m.get("censoring_var")?.to_string(),
            censoring_level: m.float("censoring_level")?,
            independent_vars: m.list("independent_vars")?,
            strata_vars: m.list("strata_vars")?,
            weight_var: m.optional("weight_var")?,
            freq_var: m.optional("freq_var")?,
            ties: m.ties()?,
            path: m.path()?,
            want_grid: m.flag("want_grid")?,
            groups: m.parse("groups")?,
            min_count_per_grp_glob: m.parse("min_count_per_grp_glob")?,
            max_numb_of_grp: m.parse("max_numb_of_grp")?,
        }),
        Kind::HandshakeReply => {
            let p: usize = m.parse("p")?;
            let grid = if m.flag("has_grid")? { Some(read_grid(files, &m)?) } else { None };
            let req = ["stratum", "total", "events", "censored"].map(String::from);
            let t = parse_table(files, "censoring.csv", &req, m.rows("censoring.csv")?)?;
            let mut rows = Vec::with_capacity(t.len());
            for i in 0..t.len() {
                rows.push(CensoringRow {
                    stratum: StratumKey::parse(t.cell(i, 0)),
                    total: t.int(i, 1, "total")?,
                    events: t.int(i, 2, "events")?,
                    censored: t.int(i, 3, "censored")?,
                });
            }
            let zs = names("z", p);
            let mut req = vec!["stratum".to_string(), "weight_total".to_string()];
            req.extend(zs.iter().cloned());
            let t = parse_table(files, "covariate_sums.csv", &req, m.rows("covariate_sums.csv")?)?;
            let mut sums = Vec::with_capacity(t.len());
            for i in 0..t.len() {
                sums.push(CovariateSums {
                    stratum: StratumKey::parse(t.cell(i, 0)),
                    weight_total: t.finite(i, 1, "weight_total")?,
                    sums: row_floats(&t, i, 2, &zs)?,
                });
            }
            Payload::HandshakeReply(HandshakeReply {
                partner_id: m.parse("partner_id")?,
                grid,
                censoring: CensoringSummary { rows },
                covariate_sums: sums,
                records: m.parse("records")?,
                dropped_rows: m.parse("dropped_rows")?,
            })
        }
        Kind::Iterate => {
            let p: usize = m.parse("p")?;
            Payload::Iterate(Iterate {
                beta: read_beta(files, &m, p)?,
                grid: read_grid(files, &m)?,
                ties: m.ties()?,
                path: m.path()?,
                purpose: parse_purpose(m.get("purpose")?)
                    .ok_or_else(|| ExchangeError::malformed(MANIFEST, "invalid `purpose`"))?,
                want_baseline: m.flag("want_baseline")?,
            })
        }
        Kind::SummaryReply if m.has_file("summaries.csv") => {
            let p: usize = m.parse("p")?;
            let efron = m.flag("efron")?;
            let (d1, s1, s2) = (names("d1_", p), names("s1_", p), tri_names("s2_", p));
            let (q1, q2) = (names("q1_", p), tri_names("q2_", p));
            let mut req: Vec<String> = ["stratum", "time", "tie_count", "d0"].map(String::from).to_vec();
            req.extend(d1.iter().cloned());
            req.push("s0".into());
            req.extend(s1.iter().cloned());
            req.extend(s2.iter().cloned());
            if efron {
                req.push("q0".into());
                req.extend(q1.iter().cloned());
                req.extend(q2.iter().cloned());
            }
            let t = parse_table(files, "summaries.csv", &req, m.rows("summaries.csv")?)?;
            let mut out = Vec::with_capacity(t.len());
            let tri = p * (p + 1) / 2;
            for i in 0..t.len() {
                let mut c = 4;
                let d1v = row_floats(&t, i, c, &d1)?;
                c += p;
                let s0 = t.finite(i, c, "s0")?;
                c += 1;
                let s1v = row_floats(&t, i, c, &s1)?;
                c += p;
                let s2v = sym("summaries.csv", p, &row_floats(&t, i, c, &s2)?)?;
                c += tri;
                let tied = if efron {
                    let q0 = t.finite(i, c, "q0")?;
                    c += 1;
                    let q1v = row_floats(&t, i, c, &q1)?;
                    c += p;
                    let q2v = sym("summaries.csv", p, &row_floats(&t, i, c, &q2)?)?;
                    Some(TiedRiskSums { q0, q1: q1v, q2: q2v })
                } else {
                    None
                };
                out.push(RiskSetSummary {
                    stratum: StratumKey::parse(t.cell(i, 0)),
                    time: t.finite(i, 1, "time")?,
                    local_tie_count: t.int(i, 2, "tie_count")?,
                    d0: t.finite(i, 3, "d0")?,
                    d1: d1v,
                    s0,
                    s1: s1v,
                    s2: s2v,
                    tied,
                });
            }
            Payload::SummaryReply(SummaryReply::RiskSets {
                partner_id: m.parse("partner_id")?,
                summaries: out,
            })
        }
        Kind::SummaryReply => {
            let p: usize = m.parse("p")?;
            let (g, h) = (names("g_", p), tri_names("h_", p));
            let mut req: Vec<String> = vec!["stratum".into(), "loglik".into()];
            req.extend(g.iter().cloned());
            req.extend(h.iter().cloned());
            let t = parse_table(files, "scores.csv", &req, m.rows("scores.csv")?)?;
            let mut scores = Vec::with_capacity(t.len());
            for i in 0..t.len() {
                scores.push(ScoreContribution {
                    stratum: StratumKey::parse(t.cell(i, 0)),
                    loglik: t.finite(i, 1, "loglik")?,
                    gradient: row_floats(&t, i, 2, &g)?,
                    hessian: sym("scores.csv", p, &row_floats(&t, i, 2 + p, &h)?)?,
                    scope: Scope::Stratum,
                });
            }
            let baseline = if m.has_file("baseline.csv") { Some(read_baseline(files, &m)?) } else { None };
            Payload::SummaryReply(SummaryReply::Scores {
                partner_id: m.parse("partner_id")?,
                scores,
                baseline,
            })
        }
        Kind::Finalize => {
            let p: usize = m.parse("p")?;
            Payload::Finalize(Finalize {
                beta_hat: read_beta(files, &m, p)?,
                baseline: read_baseline(files, &m)?,
            })
        }
        Kind::DiagnosticsReply => {
            let partner_id: i64 = m.parse("partner_id")?;
            let req = ["bin", "count", "mean_linear_predictor", "mean_martingale", "mean_deviance"].map(String::from);
            let t = parse_table(files, "bins.csv", &req, m.rows("bins.csv")?)?;
            let mut rows = Vec::with_capacity(t.len());
            for i in 0..t.len() {
                rows.push(ResidualBin {
                    partner_id,
                    bin: t.int(i, 0, "bin")?,
                    count: t.int(i, 1, "count")?,
                    mean_linear_predictor: t.float(i, 2, "mean_linear_predictor")?,
                    mean_martingale: t.float(i, 3, "mean_martingale")?,
                    mean_deviance: t.float(i, 4, "mean_deviance")?,
                });
            }
            Payload::DiagnosticsReply(BinnedResidualSummary {
                partner_id,
                rows,
                suppressed: m.flag("suppressed")?,
            })
        }
        Kind::Stop => Payload::Stop(Stop {
            status: m.get("status")?.to_string(),
            reason: m.get("reason")?.to_string(),
        }),
        Kind::Error => Payload::Error(ErrorReply {
            partner_id: m.parse("partner_id")?,
            category: ErrorCategory::parse(m.get("category")?)
                .ok_or_else(|| ExchangeError::malformed(MANIFEST, "invalid `category`"))?,
            reason: m.get("reason")?.to_string(),
        }),
    };
    Ok(Message { run_id, round, payload })
}

/// Size of an encoded message: payload bytes and data rows, manifest
/// excluded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WireStats {
    pub bytes: usize,
    pub rows: usize,
}

pub fn wire_stats(files: &Files) -> WireStats {
    let mut s = WireStats::default();
    for (name, bytes) in files {
        if name == MANIFEST {
            continue;
        }
        s.bytes += bytes.len();
        s.rows += bytes.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
    }
    s
}

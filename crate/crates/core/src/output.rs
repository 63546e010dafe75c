//! Output tables under `msoc/`, plus the plain-text report and residual
//! plot rendered from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analysis::{Analysis, RunState};
use crate::error::{Error, Result};
use crate::model::StratumKey;

pub const OUTPUT_SUBDIR: &str = "msoc";

pub const BASELN_HAZARD: &str = "baseln_hazard";
pub const BASELN_SURVIVAL: &str = "baseln_survival";
pub const CENS_SUM: &str = "cens_sum";
pub const CONVRG_STATUS: &str = "convrg_status";
pub const COV_EST: &str = "cov_est";
pub const GLOB_NULL_CHISQ: &str = "glob_null_chisq";
pub const ITER_PARMS_HIST: &str = "iter_parms_hist";
pub const MODELFIT: &str = "modelfit";
pub const MODELINFO: &str = "modelinfo";
pub const MODEL_COEFF: &str = "model_coeff";
pub const P_EST: &str = "p_est";
pub const RESID_SUM: &str = "resid_sum";
pub const RESID_SUM_BY_PCT: &str = "resid_sum_by_pct";

pub const ALL_TABLES: [&str; 13] = [
    BASELN_HAZARD,
    BASELN_SURVIVAL,
    CENS_SUM,
    CONVRG_STATUS,
    COV_EST,
    GLOB_NULL_CHISQ,
    ITER_PARMS_HIST,
    MODELFIT,
    MODELINFO,
    MODEL_COEFF,
    P_EST,
    RESID_SUM,
    RESID_SUM_BY_PCT,
];

/// Shortest text that parses back to the same f64. Integral values print
/// without a trailing `.0`; NaN prints empty.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:?}")
    }
}

pub fn parse_float(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h.eq_ignore_ascii_case(name))
    }

    /// Value in the first row whose first cell equals `key`.
    pub fn lookup(&self, key: &str, column: &str) -> Option<&str> {
        let c = self.column(column)?;
        self.rows.iter().find(|r| r[0] == key).map(|r| r[c].as_str())
    }
}

pub fn file_name(run_id: &str, table: &str) -> String {
    format!("{run_id}_{table}.csv")
}

fn stratum_cell(k: &StratumKey) -> String {
    k.to_string()
}

/// Builds every table the run supports. A run without a converged fit
/// gets only the descriptive and status tables.
pub fn build_tables(a: &Analysis) -> Vec<Table> {
    let spec = &a.spec;
    let names = &spec.independent_vars;
    let mut tables = Vec::new();

    let mut info = Table::new(MODELINFO, &["Label", "Value"]);
    let mut kv = |k: &str, v: String| info.push(vec![k.to_string(), v]);
    kv("Data Set", spec.dataset_name.clone());
    kv("Dependent Variable", spec.dependent_var.clone());
    kv("Censoring Variable", spec.censoring_var.clone());
    kv("Censoring Value(s)", fmt_float(spec.censoring_level));
    kv("Ties Handling", spec.ties.as_str().to_string());
    kv("Strata Variables", spec.strata_vars.join(" "));
    kv("Weight Variable", spec.weight_var.clone().unwrap_or_default());
    kv("Frequency Variable", spec.freq_var.clone().unwrap_or_default());
    kv("Computation Path", a.path.as_str().to_string());
    kv("Number of Data Partners", a.partner_count.to_string());
    kv("Rows Dropped (missing values)", a.dropped_rows.to_string());
    kv("Null Model", "log-likelihood evaluated at beta = 0".to_string());
    tables.push(info);

    let stratified = !spec.strata_vars.is_empty();
    let mut cens_header: Vec<&str> = Vec::new();
    if stratified {
        cens_header.push("Stratum");
        cens_header.extend(spec.strata_vars.iter().map(String::as_str));
    }
    cens_header.extend(["Total", "Event", "Censored", "PercentCensored"]);
    let mut cens = Table::new(CENS_SUM, &cens_header);
    let counts = |r: &crate::site::CensoringRow| {
        vec![
            r.total.to_string(),
            r.events.to_string(),
            r.censored.to_string(),
            format!("{:.2}", r.percent_censored()),
        ]
    };
    for (i, row) in a.censoring.rows.iter().enumerate() {
        let mut cells = Vec::new();
        if stratified {
            cells.push((i + 1).to_string());
            for j in 0..spec.strata_vars.len() {
                cells.push(row.stratum.0.get(j).map(|v| v.to_string()).unwrap_or_default());
            }
        }
        cells.extend(counts(row));
        cens.push(cells);
    }
    if stratified {
        let mut cells = vec!["Total".to_string()];
        cells.extend(std::iter::repeat_n(String::new(), spec.strata_vars.len()));
        cells.extend(counts(&a.censoring.total()));
        cens.push(cells);
    }
    tables.push(cens);

    let mut status = Table::new(
        CONVRG_STATUS,
        &["Status", "Converged", "Reason", "Iterations", "Criterion", "CriterionValue", "MaxRelativeChange"],
    );
    let last_delta = a
        .fit
        .as_ref()
        .and_then(|f| f.history.iter().rev().find_map(|h| h.max_delta))
        .map(fmt_float)
        .unwrap_or_default();
    status.push(vec![
        a.status.state.as_str().to_string(),
        u8::from(a.status.state == RunState::Converged).to_string(),
        a.status.reason.clone(),
        a.fit.as_ref().map(|f| f.iterations_used.to_string()).unwrap_or_default(),
        "XCONV".to_string(),
        fmt_float(spec.xconv),
        last_delta,
    ]);
    tables.push(status);

    if let Some(fit) = &a.fit {
        let mut header = vec!["Iteration", "LogLik", "Neg2LogL"];
        header.extend(names.iter().map(String::as_str));
        header.push("MaxRelativeChange");
        let mut hist = Table::new(ITER_PARMS_HIST, &header);
        for rec in &fit.history {
            let mut row = vec![rec.iteration.to_string(), fmt_float(rec.loglik), fmt_float(-2.0 * rec.loglik)];
            row.extend(rec.beta.iter().map(|&b| fmt_float(b)));
            row.push(rec.max_delta.map(fmt_float).unwrap_or_default());
            hist.push(row);
        }
        tables.push(hist);
    }

    let (Some(fit), Some(inf)) = (&a.fit, &a.inference) else {
        return tables;
    };

    let mut p_est = Table::new(
        P_EST,
        &["Parameter", "DF", "Estimate", "StdErr", "ChiSq", "ProbChiSq", "HazardRatio", "HRLowerCL", "HRUpperCL"],
    );
    for r in &inf.estimates {
        p_est.push(vec![
            r.name.clone(),
            r.df.to_string(),
            fmt_float(r.estimate),
            fmt_float(r.stderr),
            fmt_float(r.chisq),
            fmt_float(r.pvalue),
            fmt_float(r.hazard_ratio),
            fmt_float(r.ci_lower),
            fmt_float(r.ci_upper),
        ]);
    }
    tables.push(p_est);

    let mut header = vec!["Parameter"];
    header.extend(names.iter().map(String::as_str));
    let mut cov = Table::new(COV_EST, &header);
    if let Some(m) = &fit.covariance {
        for (i, name) in names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(m.row(i).iter().map(|&v| fmt_float(v)));
            cov.push(row);
        }
    }
    tables.push(cov);

    let s = &inf.fit_stats;
    let mut mf = Table::new(MODELFIT, &["Criterion", "WithoutCovariates", "WithCovariates"]);
    mf.push(vec!["-2 LOG L".into(), fmt_float(s.neg2loglik_null), fmt_float(s.neg2loglik_fit)]);
    mf.push(vec!["AIC".into(), fmt_float(s.neg2loglik_null), fmt_float(s.aic)]);
    mf.push(vec!["SBC".into(), fmt_float(s.neg2loglik_null), fmt_float(s.bic)]);
    tables.push(mf);

    let mut gn = Table::new(GLOB_NULL_CHISQ, &["Test", "ChiSq", "DF", "ProbChiSq"]);
    gn.push(vec![
        "Likelihood Ratio".into(),
        fmt_float(inf.null_test.chisq),
        inf.null_test.df.to_string(),
        fmt_float(inf.null_test.pvalue),
    ]);
    tables.push(gn);

    let mut header = vec!["_TYPE_", "_TIES_", "_STATUS_", "_LNLIKE_"];
    header.extend(names.iter().map(String::as_str));
    let mut coeff = Table::new(MODEL_COEFF, &header);
    let mut row = vec![
        "PARMS".to_string(),
        spec.ties.as_str().to_string(),
        "0 Converged".to_string(),
        fmt_float(fit.loglik_final),
    ];
    row.extend(fit.beta_hat.iter().map(|&b| fmt_float(b)));
    coeff.push(row);
    tables.push(coeff);

    let mut bh = Table::new(BASELN_HAZARD, &["Stratum", "Time", "CumHazard"]);
    if let Some(b) = &a.baseline {
        for (k, steps) in &b.strata {
            for &(t, h) in steps {
                bh.push(vec![stratum_cell(k), fmt_float(t), fmt_float(h)]);
            }
        }
    }
    tables.push(bh);

    let mut bs = Table::new(BASELN_SURVIVAL, &["Stratum", "Time", "Survival"]);
    for (k, steps) in &a.survival {
        for &(t, v) in steps {
            bs.push(vec![stratum_cell(k), fmt_float(t), fmt_float(v)]);
        }
    }
    tables.push(bs);

    let mut by_pct = Table::new(
        RESID_SUM_BY_PCT,
        &[
            "dp_cd",
            "Bin",
            "Count",
            "MeanLinearPredictor",
            "MeanMartingale",
            "MeanDeviance",
            "Suppressed",
        ],
    );
    let (mut n_bins, mut n_obs, mut m_sum, mut d_sum, mut counted) = (0usize, 0usize, 0.0, 0.0, 0usize);
    for summary in &a.residual_bins {
        for r in &summary.rows {
            by_pct.push(vec![
                r.partner_id.to_string(),
                r.bin.to_string(),
                r.count.to_string(),
                fmt_float(r.mean_linear_predictor),
                fmt_float(r.mean_martingale),
                fmt_float(r.mean_deviance),
                u8::from(summary.suppressed).to_string(),
            ]);
            n_bins += 1;
            n_obs += r.count;
            if !summary.suppressed {
                m_sum += r.mean_martingale * r.count as f64;
                d_sum += r.mean_deviance * r.count as f64;
                counted += r.count;
            }
        }
    }
    tables.push(by_pct);

    let total = a.censoring.total();
    let mean = |s: f64| if counted > 0 { s / counted as f64 } else { f64::NAN };
    let mut rs = Table::new(RESID_SUM, &["Statistic", "Value"]);
    let mut kv = |k: &str, v: String| rs.push(vec![k.to_string(), v]);
    kv("Observations", total.total.to_string());
    kv("Events", total.events.to_string());
    kv("Censored", total.censored.to_string());
    kv("Parameters", spec.p().to_string());
    kv("LogLikNull", fmt_float(fit.loglik_null));
    kv("LogLik", fmt_float(fit.loglik_final));
    kv("Neg2LogL", fmt_float(s.neg2loglik_fit));
    kv("AIC", fmt_float(s.aic));
    kv("SBC", fmt_float(s.bic));
    kv("ResidualBins", n_bins.to_string());
    kv("ResidualObservations", n_obs.to_string());
    kv("MeanMartingale", fmt_float(mean(m_sum)));
    kv("MeanDeviance", fmt_float(mean(d_sum)));
    tables.push(rs);

    tables
}

pub fn write_table(table: &Table, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(&table.header).map_err(|e| Error::csv(path, e))?;
    for row in &table.rows {
        w.write_record(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `<run_id>_<table>.csv` files into `dir` (created if needed).
pub fn write_bundle(a: &Analysis, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    build_tables(a)
        .iter()
        .map(|t| {
            let path = dir.join(file_name(&a.spec.run_id, &t.name));
            write_table(t, &path)?;
            Ok(path)
        })
        .collect()
}

pub fn read_table(path: &Path, name: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) => Error::io(path, std::io::Error::new(io.kind(), io.to_string())),
            _ => Error::csv(path, e),
        })?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::csv(path, e))?;
    Ok(Table {
        name: name.to_string(),
        header,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub run_id: String,
    pub tables: BTreeMap<String, Table>,
}

impl Bundle {
    pub fn get(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Table> {
        self.get(name).ok_or_else(|| Error::MalformedTable {
            file: file_name(&self.run_id, name),
            detail: "table missing from bundle".into(),
        })
    }
}

/// Run ids with a status table in `dir`.
pub fn discover_run_ids(dir: &Path) -> Result<Vec<String>> {
    let suffix = format!("_{CONVRG_STATUS}.csv");
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(&suffix)).map(str::to_string))
        .collect();
    ids.sort();
    Ok(ids)
}

/// Reads a bundle. The status, model-info and censoring tables are
/// required; the rest are loaded when present.
pub fn read_bundle(dir: &Path, run_id: &str) -> Result<Bundle> {
    let mut tables = BTreeMap::new();
    for name in ALL_TABLES {
        let path = dir.join(file_name(run_id, name));
        let required = matches!(name, CONVRG_STATUS | MODELINFO | CENS_SUM);
        if !path.exists() {
            if required {
                return Err(Error::io(
                    &path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, format!("required table {name} is missing")),
                ));
            }
            continue;
        }
        tables.insert(name.to_string(), read_table(&path, name)?);
    }
    Ok(Bundle {
        run_id: run_id.to_string(),
        tables,
    })
}

fn fixed(cell: &str, digits: usize) -> String {
    match parse_float(cell) {
        Some(v) if v.is_finite() => format!("{v:.digits$}"),
        _ => cell.to_string(),
    }
}

fn pvalue(cell: &str) -> String {
    match parse_float(cell) {
        Some(v) if v < 1e-4 => "<.0001".to_string(),
        _ => fixed(cell, 4),
    }
}

/// Fixed-width text rendering with right-aligned columns.
fn text_table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let _ = writeln!(out, "{}", line(header));
    let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    for r in rows {
        let _ = writeln!(out, "{}", line(r));
    }
    out.push('\n');
}

fn section(out: &mut String, title: &str) {
    let _ = writeln!(out, "{title}\n{}", "=".repeat(title.len()));
}

/// Point of the residual plot: one bin of one partner.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub partner_id: String,
    pub x: f64,
    pub y: f64,
    pub size: usize,
}

pub fn plot_points(bundle: &Bundle) -> Vec<PlotPoint> {
    let Some(t) = bundle.get(RESID_SUM_BY_PCT) else {
        return Vec::new();
    };
    let (Some(k), Some(n), Some(x), Some(y)) = (
        t.column("dp_cd"),
        t.column("Count"),
        t.column("MeanLinearPredictor"),
        t.column("MeanMartingale"),
    ) else {
        return Vec::new();
    };
    t.rows
        .iter()
        .filter_map(|r| {
            let x = parse_float(&r[x])?;
            let y = parse_float(&r[y])?;
            (x.is_finite() && y.is_finite()).then(|| PlotPoint {
                partner_id: r[k].clone(),
                x,
                y,
                size: r[n].parse().unwrap_or(0),
            })
        })
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn residual_svg(points: &[PlotPoint]) -> String {
    let (w, h, m) = (640.0, 420.0, 50.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    if points.is_empty() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    y0 = y0.min(0.0);
    y1 = y1.max(0.0);
    let pad = |lo: f64, hi: f64| {
        let span = if hi > lo { hi - lo } else { 1.0 };
        (lo - 0.05 * span, hi + 0.05 * span)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let _ = writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
        sy(0.0),
        w - m,
        sy(0.0)
    );
    let _ = writeln!(
        svg,
        "<rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - 2.0 * m,
        h - 2.0 * m
    );
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"{anchor}\">{v:.3}</text>",
            sx(v),
            h - m + 15.0
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{v:.3}</text>",
            m - 4.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\">Mean linear predictor</text>",
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">Mean martingale residual</text>",
        h / 2.0,
        h / 2.0
    );

    let mut partners: Vec<&str> = points.iter().map(|p| p.partner_id.as_str()).collect();
    partners.sort();
    partners.dedup();
    let max_size = points.iter().map(|p| p.size).max().unwrap_or(1).max(1) as f64;
    for p in points {
        let idx = partners.iter().position(|k| *k == p.partner_id).unwrap_or(0);
        let r = 2.5 + 4.5 * (p.size as f64 / max_size).sqrt();
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r:.2}\" fill=\"{}\" fill-opacity=\"0.7\"/>",
            sx(p.x),
            sy(p.y),
            PALETTE[idx % PALETTE.len()]
        );
    }
    for (i, k) in partners.iter().enumerate() {
        let y = m + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.1}\" cy=\"{y:.1}\" r=\"5\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">dp_cd {k}</text>",
            w - m - 70.0,
            PALETTE[i % PALETTE.len()],
            w - m - 60.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Plain-text report of a bundle.
pub fn report_text(bundle: &Bundle) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "Cox proportional hazards regression: run {}\n", bundle.run_id);

    section(&mut out, "Model Information");
    let info = bundle.require(MODELINFO)?;
    text_table(&mut out, &info.header, &info.rows);

    section(&mut out, "Summary of the Number of Event and Censored Values");
    let cens = bundle.require(CENS_SUM)?;
    text_table(&mut out, &cens.header, &cens.rows);

    section(&mut out, "Convergence Status");
    let st = bundle.require(CONVRG_STATUS)?;
    let status_cols: Vec<usize> = ["Status", "Reason", "Iterations"].iter().filter_map(|c| st.column(c)).collect();
    text_table(
        &mut out,
        &status_cols.iter().map(|&c| st.header[c].clone()).collect::<Vec<_>>(),
        &st.rows.iter().map(|r| status_cols.iter().map(|&c| r[c].clone()).collect()).collect::<Vec<_>>(),
    );

    if let Some(t) = bundle.get(MODELFIT) {
        section(&mut out, "Model Fit Statistics");
        let rows: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|r| vec![r[0].clone(), fixed(&r[1], 6), fixed(&r[2], 6)])
            .collect();
        text_table(&mut out, &t.header, &rows);
    }
    if let Some(t) = bundle.get(GLOB_NULL_CHISQ) {
        section(&mut out, "Testing Global Null Hypothesis: BETA=0");
        let rows: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|r| vec![r[0].clone(), fixed(&r[1], 4), r[2].clone(), pvalue(&r[3])])
            .collect();
        text_table(&mut out, &t.header, &rows);
    }
    if let Some(t) = bundle.get(P_EST) {
        section(&mut out, "Analysis of Maximum Likelihood Estimates");
        let rows: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|r| {
                vec![
                    r[0].clone(),
                    r[1].clone(),
                    fixed(&r[2], 6),
                    fixed(&r[3], 6),
                    fixed(&r[4], 4),
                    pvalue(&r[5]),
                    fixed(&r[6], 6),
                    fixed(&r[7], 6),
                    fixed(&r[8], 6),
                ]
            })
            .collect();
        text_table(&mut out, &t.header, &rows);
    }

    section(&mut out, "Residual Summary by Percentile of the Linear Predictor");
    match bundle.get(RESID_SUM_BY_PCT) {
        Some(t) if !plot_points(bundle).is_empty() => {
            let rows: Vec<Vec<String>> = t
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r[0].clone(),
                        r[1].clone(),
                        r[2].clone(),
                        fixed(&r[3], 6),
                        fixed(&r[4], 6),
                        fixed(&r[5], 6),
                        r[6].clone(),
                    ]
                })
                .collect();
            text_table(&mut out, &t.header, &rows);
        }
        _ => out.push_str("Residual summaries are suppressed or unavailable for this run.\n\n"),
    }
    Ok(out)
}

/// Writes `<run_id>_report.txt`, `<run_id>_resid_plot.csv` and
/// `<run_id>_resid_plot.svg` into `dest`.
pub fn render_report(bundle: &Bundle, dest: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dest).map_err(|e| Error::io(dest, e))?;
    let report = dest.join(format!("{}_report.txt", bundle.run_id));
    std::fs::write(&report, report_text(bundle)?).map_err(|e| Error::io(&report, e))?;

    let points = plot_points(bundle);
    let mut plot = Table::new("resid_plot", &["dp_cd", "x", "y", "size"]);
    for p in &points {
        plot.push(vec![p.partner_id.clone(), fmt_float(p.x), fmt_float(p.y), p.size.to_string()]);
    }
    let csv_path = dest.join(format!("{}_resid_plot.csv", bundle.run_id));
    write_table(&plot, &csv_path)?;
    let svg_path = dest.join(format!("{}_resid_plot.svg", bundle.run_id));
    std::fs::write(&svg_path, residual_svg(&points)).map_err(|e| Error::io(&svg_path, e))?;
    Ok(vec![report, csv_path, svg_path])
}

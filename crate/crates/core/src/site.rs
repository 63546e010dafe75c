//! Everything a data partner computes on its own rows: event-time grids,
//! risk-set summaries, site-level score contributions, censoring counts and
//! covariate sums.

use std::collections::BTreeMap;

use crate::aggregate::{stratum_scores_from_summaries, GlobalRiskSummary};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{AnalysisDataset, StratumKey, SubjectRecord, Ties};

/// Distinct event times of one stratum with their (frequency-weighted) tie
/// counts. Times are strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StratumGrid {
    pub times: Vec<f64>,
    /// Number of events at each time. Zero only for externally supplied
    /// event-time sets where the count is not known in advance.
    pub ties: Vec<u64>,
}

impl StratumGrid {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTimeGrid {
    pub strata: BTreeMap<StratumKey, StratumGrid>,
}

impl EventTimeGrid {
    /// Total number of (stratum, event time) cells.
    pub fn cells(&self) -> usize {
        self.strata.values().map(StratumGrid::len).sum()
    }

    /// Grid that uses the same time set for every listed stratum; used for
    /// user-supplied event-time tables.
    pub fn from_time_set(strata: impl IntoIterator<Item = StratumKey>, times: &[f64]) -> Self {
        let mut sorted: Vec<f64> = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let grid = StratumGrid {
            ties: vec![0; sorted.len()],
            times: sorted,
        };
        Self {
            strata: strata.into_iter().map(|k| (k, grid.clone())).collect(),
        }
    }
}

/// Efron-only sums over the subjects who fail at the event time.
#[derive(Debug, Clone, PartialEq)]
pub struct TiedRiskSums {
    pub q0: f64,
    pub q1: Vec<f64>,
    pub q2: Matrix,
}

impl TiedRiskSums {
    pub fn zeros(p: usize) -> Self {
        Self {
            q0: 0.0,
            q1: vec![0.0; p],
            q2: Matrix::zeros(p),
        }
    }
}

/// Site aggregates for one (stratum, event time) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSetSummary {
    pub stratum: StratumKey,
    pub time: f64,
    /// Unweighted number of events at `time` (frequencies applied).
    pub local_tie_count: u64,
    /// Weighted event count.
    pub d0: f64,
    /// Weighted covariate sum over events.
    pub d1: Vec<f64>,
    pub s0: f64,
    pub s1: Vec<f64>,
    pub s2: Matrix,
    /// Present only for Efron ties.
    pub tied: Option<TiedRiskSums>,
}

impl RiskSetSummary {
    pub fn zeros(stratum: StratumKey, time: f64, p: usize, ties: Ties) -> Self {
        Self {
            stratum,
            time,
            local_tie_count: 0,
            d0: 0.0,
            d1: vec![0.0; p],
            s0: 0.0,
            s1: vec![0.0; p],
            s2: Matrix::zeros(p),
            tied: (ties == Ties::Efron).then(|| TiedRiskSums::zeros(p)),
        }
    }

    pub fn p(&self) -> usize {
        self.d1.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Stratum,
    Site,
    Global,
}

/// (log-likelihood, gradient, Hessian) at some aggregation level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreContribution {
    /// Stratum the contribution belongs to; empty for site/global scope.
    pub stratum: StratumKey,
    pub loglik: f64,
    pub gradient: Vec<f64>,
    pub hessian: Matrix,
    pub scope: Scope,
}

impl ScoreContribution {
    pub fn zeros(p: usize, stratum: StratumKey, scope: Scope) -> Self {
        Self {
            stratum,
            loglik: 0.0,
            gradient: vec![0.0; p],
            hessian: Matrix::zeros(p),
            scope,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.loglik.is_finite() && self.gradient.iter().all(|g| g.is_finite()) && self.hessian.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensoringRow {
    pub stratum: StratumKey,
    pub total: u64,
    pub events: u64,
    pub censored: u64,
}

impl CensoringRow {
    pub fn percent_censored(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.censored as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CensoringSummary {
    pub rows: Vec<CensoringRow>,
}

impl CensoringSummary {
    /// Sums partner summaries stratum by stratum.
    pub fn merge<'a>(parts: impl IntoIterator<Item = &'a CensoringSummary>) -> Self {
        let mut acc: BTreeMap<StratumKey, (u64, u64, u64)> = BTreeMap::new();
        for part in parts {
            for row in &part.rows {
                let e = acc.entry(row.stratum.clone()).or_default();
                e.0 += row.total;
                e.1 += row.events;
                e.2 += row.censored;
            }
        }
        Self {
            rows: acc
                .into_iter()
                .map(|(stratum, (total, events, censored))| CensoringRow {
                    stratum,
                    total,
                    events,
                    censored,
                })
                .collect(),
        }
    }

    pub fn total(&self) -> CensoringRow {
        let mut t = CensoringRow {
            stratum: StratumKey::empty(),
            total: 0,
            events: 0,
            censored: 0,
        };
        for r in &self.rows {
            t.total += r.total;
            t.events += r.events;
            t.censored += r.censored;
        }
        t
    }
}

/// Weighted covariate sums and weight total for one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSums {
    pub stratum: StratumKey,
    pub sums: Vec<f64>,
    pub weight_total: f64,
}

pub fn extract_local_event_times(ds: &AnalysisDataset) -> EventTimeGrid {
    let mut events: BTreeMap<StratumKey, Vec<(f64, u64)>> = BTreeMap::new();
    for r in ds.records.iter().filter(|r| r.event) {
        events.entry(r.stratum.clone()).or_default().push((r.time, r.freq));
    }
    let strata = events
        .into_iter()
        .map(|(key, mut list)| {
            list.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut grid = StratumGrid::default();
            for (t, f) in list {
                if grid.times.last() == Some(&t) {
                    *grid.ties.last_mut().unwrap() += f;
                } else {
                    grid.times.push(t);
                    grid.ties.push(f);
                }
            }
            (key, grid)
        })
        .collect();
    EventTimeGrid { strata }
}

/// `w * freq * exp(beta'Z)` for every record, failing on overflow.
fn risk_scores(records: &[SubjectRecord], beta: &[f64]) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            let theta = r.linear_predictor(beta);
            let e = theta.exp();
            if !e.is_finite() {
                return Err(Error::NonFiniteIntermediate {
                    magnitude: theta.abs(),
                });
            }
            Ok(r.total_weight() * e)
        })
        .collect()
}

/// Record indices per stratum, sorted by descending time (stable).
fn descending_by_stratum(ds: &AnalysisDataset) -> BTreeMap<&StratumKey, Vec<usize>> {
    let mut groups: BTreeMap<&StratumKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records.iter().enumerate() {
        groups.entry(&r.stratum).or_default().push(i);
    }
    for idx in groups.values_mut() {
        idx.sort_by(|&a, &b| ds.records[b].time.total_cmp(&ds.records[a].time));
    }
    groups
}

fn check_beta(ds: &AnalysisDataset, beta: &[f64]) -> Result<()> {
    if beta.len() != ds.p() {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} entries, dataset has {} covariates",
            beta.len(),
            ds.p()
        )));
    }
    Ok(())
}

/// Risk-set summaries on the designated grid. Every grid cell gets a row,
/// zero-filled where this site has nobody at risk.
///
/// Runs one descending sweep per stratum, so the cost is O(N p^2) rather
/// than rescanning the risk set for each event time.
pub fn compute_site_summaries(
    ds: &AnalysisDataset,
    beta: &[f64],
    grid: &EventTimeGrid,
    ties: Ties,
) -> Result<Vec<RiskSetSummary>> {
    check_beta(ds, beta)?;
    let p = ds.p();
    let risk = risk_scores(&ds.records, beta)?;
    let groups = descending_by_stratum(ds);

    let local_events = ds.total_events();
    let mut matched_events = 0u64;
    let mut out = Vec::with_capacity(grid.cells());

    for (key, sg) in &grid.strata {
        let idx: &[usize] = groups.get(key).map(Vec::as_slice).unwrap_or(&[]);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = Matrix::zeros(p);
        let mut pos = 0;
        let mut cells = Vec::with_capacity(sg.len());

        for &t in sg.times.iter().rev() {
            let mut cell = RiskSetSummary::zeros(key.clone(), t, p, ties);
            while pos < idx.len() && ds.records[idx[pos]].time >= t {
                let r = &ds.records[idx[pos]];
                let e = risk[idx[pos]];
                s0 += e;
                for (acc, z) in s1.iter_mut().zip(&r.covariates) {
                    *acc += e * z;
                }
                s2.rank_one_lower(e, &r.covariates);

                if r.event && r.time == t {
                    let w = r.total_weight();
                    cell.local_tie_count += r.freq;
                    cell.d0 += w;
                    for (acc, z) in cell.d1.iter_mut().zip(&r.covariates) {
                        *acc += w * z;
                    }
                    if let Some(q) = cell.tied.as_mut() {
                        q.q0 += e;
                        for (acc, z) in q.q1.iter_mut().zip(&r.covariates) {
                            *acc += e * z;
                        }
                        q.q2.rank_one_lower(e, &r.covariates);
                    }
                }
                pos += 1;
            }
            matched_events += cell.local_tie_count;
            cell.s0 = s0;
            cell.s1.clone_from(&s1);
            cell.s2 = s2.clone();
            cell.s2.mirror_lower();
            if let Some(q) = cell.tied.as_mut() {
                q.q2.mirror_lower();
            }
            cells.push(cell);
        }
        cells.reverse();
        out.extend(cells);
    }

    if matched_events != local_events {
        return Err(Error::GridMismatch {
            partner_id: ds.partner_id,
            detail: format!(
                "{} of {} local events fall on designated event times",
                matched_events, local_events
            ),
        });
    }
    Ok(out)
}

/// Per-stratum (l, g, H) computed entirely on site, valid when every
/// stratum is local to this site (stratified on the partner id). The
/// payload is one score per stratum regardless of the number of event
/// times.
pub fn compute_site_contributions(
    ds: &AnalysisDataset,
    beta: &[f64],
    ties: Ties,
) -> Result<Vec<ScoreContribution>> {
    let grid = extract_local_event_times(ds);
    let summaries = compute_site_summaries(ds, beta, &grid, ties)?;
    let global: Vec<GlobalRiskSummary> = summaries.into_iter().map(GlobalRiskSummary).collect();
    stratum_scores_from_summaries(&global, beta, ties)
}

pub fn compute_censoring_summary(ds: &AnalysisDataset) -> CensoringSummary {
    let mut acc: BTreeMap<StratumKey, (u64, u64)> = BTreeMap::new();
    for r in &ds.records {
        let e = acc.entry(r.stratum.clone()).or_default();
        e.0 += r.freq;
        if r.event {
            e.1 += r.freq;
        }
    }
    CensoringSummary {
        rows: acc
            .into_iter()
            .map(|(stratum, (total, events))| CensoringRow {
                stratum,
                total,
                events,
                censored: total - events,
            })
            .collect(),
    }
}

/// Sums rather than means, so the center can pool them across sites.
pub fn compute_covariate_means(ds: &AnalysisDataset) -> Vec<CovariateSums> {
    let p = ds.p();
    let mut acc: BTreeMap<StratumKey, (Vec<f64>, f64)> = BTreeMap::new();
    for r in &ds.records {
        let w = r.total_weight();
        let e = acc.entry(r.stratum.clone()).or_insert_with(|| (vec![0.0; p], 0.0));
        for (s, z) in e.0.iter_mut().zip(&r.covariates) {
            *s += w * z;
        }
        e.1 += w;
    }
    acc.into_iter()
        .map(|(stratum, (sums, weight_total))| CovariateSums {
            stratum,
            sums,
            weight_total,
        })
        .collect()
}

//! Baseline cumulative hazard, survival, per-subject martingale and deviance
//! residuals, and the binned residual summaries that partners share.

use std::collections::BTreeMap;

use crate::aggregate::GlobalRiskSummary;
use crate::error::{Error, Result};
use crate::model::{AnalysisDataset, StratumKey, Ties};
use crate::site::{CovariateSums, EventTimeGrid};

/// Floor for the log argument in the deviance residual when an event has
/// zero cumulative hazard.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineEstimator {
    Breslow,
    FlemingHarrington,
}

impl BaselineEstimator {
    pub fn for_ties(ties: Ties) -> Self {
        match ties {
            Ties::Breslow => BaselineEstimator::Breslow,
            Ties::Efron => BaselineEstimator::FlemingHarrington,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineEstimator::Breslow => "BRESLOW",
            BaselineEstimator::FlemingHarrington => "FLEMING_HARRINGTON",
        }
    }
}

/// Right-continuous step function: `(t, H)` means H applies for T >= t.
pub type StepFunction = Vec<(f64, f64)>;

fn step_value(steps: &[(f64, f64)], t: f64) -> f64 {
    let n = steps.partition_point(|(s, _)| *s <= t);
    if n == 0 {
        0.0
    } else {
        steps[n - 1].1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineHazard {
    pub estimator: BaselineEstimator,
    pub strata: BTreeMap<StratumKey, StepFunction>,
}

impl BaselineHazard {
    pub fn cumulative(&self, stratum: &StratumKey, t: f64) -> f64 {
        self.strata.get(stratum).map_or(0.0, |s| step_value(s, t))
    }
}

/// Cumulative baseline hazard from summaries evaluated at the final beta.
/// Breslow increments are d/S0; the Efron (Fleming-Harrington) increment
/// sums 1/S0E over the d tied events.
pub fn baseline_cumulative_hazard(
    grid: &EventTimeGrid,
    summaries: &[GlobalRiskSummary],
    ties: Ties,
) -> Result<BaselineHazard> {
    let mut strata: BTreeMap<StratumKey, StepFunction> =
        grid.strata.keys().map(|k| (k.clone(), Vec::new())).collect();
    let mut running: BTreeMap<StratumKey, f64> = BTreeMap::new();

    for GlobalRiskSummary(row) in summaries {
        let d = row.local_tie_count;
        if d == 0 {
            continue;
        }
        let degenerate = |s0: f64| Error::DegenerateRiskSet {
            stratum: row.stratum.to_string(),
            time: row.time,
            s0,
        };
        if !(row.s0 > 0.0) {
            return Err(degenerate(row.s0));
        }
        let increment = match (ties, row.tied.as_ref()) {
            (Ties::Breslow, _) => d as f64 / row.s0,
            (Ties::Efron, Some(q)) => {
                let mut inc = 0.0;
                for s in 1..=d {
                    let s0 = row.s0 - (s - 1) as f64 / d as f64 * q.q0;
                    if !(s0 > 0.0) {
                        return Err(degenerate(s0));
                    }
                    inc += 1.0 / s0;
                }
                inc
            }
            (Ties::Efron, None) => {
                return Err(Error::DimensionMismatch(
                    "Efron baseline needs tied-event sums".into(),
                ))
            }
        };
        let cum = running.entry(row.stratum.clone()).or_insert(0.0);
        *cum += increment;
        strata.entry(row.stratum.clone()).or_default().push((row.time, *cum));
    }
    Ok(BaselineHazard {
        estimator: BaselineEstimator::for_ties(ties),
        strata,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRecord {
    pub time: f64,
    pub linear_predictor: f64,
    pub cumulative_hazard: f64,
    pub survival: f64,
    pub martingale: f64,
    pub deviance: f64,
    pub event: bool,
    pub partner_id: i64,
    pub stratum: StratumKey,
    /// Event with zero cumulative hazard; the deviance used [`LOG_FLOOR`].
    pub log_clamped: bool,
}

/// Martingale and deviance residuals for one subject.
/// Returns (martingale, deviance, log_clamped).
pub fn residuals(event: bool, cumulative_hazard: f64) -> (f64, f64, bool) {
    let delta = if event { 1.0 } else { 0.0 };
    let m = delta - cumulative_hazard;
    let mut clamped = false;
    let log_term = if event {
        let arg = delta - m;
        if arg < LOG_FLOOR {
            clamped = true;
        }
        delta * arg.max(LOG_FLOOR).ln()
    } else {
        0.0
    };
    let inner = (-2.0 * (m + log_term)).max(0.0);
    let dev = if m > 0.0 {
        inner.sqrt()
    } else if m < 0.0 {
        -inner.sqrt()
    } else {
        0.0
    };
    (m, dev, clamped)
}

pub fn evaluate_subject_diagnostics(
    ds: &AnalysisDataset,
    beta_hat: &[f64],
    baseline: &BaselineHazard,
) -> Vec<ResidualRecord> {
    ds.records
        .iter()
        .map(|r| {
            let theta = r.linear_predictor(beta_hat);
            let h = theta.exp() * baseline.cumulative(&r.stratum, r.time);
            let (martingale, deviance, log_clamped) = residuals(r.event, h);
            ResidualRecord {
                time: r.time,
                linear_predictor: theta,
                cumulative_hazard: h,
                survival: (-h).exp(),
                martingale,
                deviance,
                event: r.event,
                partner_id: r.partner_id,
                stratum: r.stratum.clone(),
                log_clamped,
            }
        })
        .collect()
}

/// Pools partner covariate sums into per-stratum weighted means.
pub fn pooled_covariate_means<'a>(
    parts: impl IntoIterator<Item = &'a CovariateSums>,
) -> BTreeMap<StratumKey, Vec<f64>> {
    let mut acc: BTreeMap<StratumKey, (Vec<f64>, f64)> = BTreeMap::new();
    for part in parts {
        let e = acc
            .entry(part.stratum.clone())
            .or_insert_with(|| (vec![0.0; part.sums.len()], 0.0));
        for (a, s) in e.0.iter_mut().zip(&part.sums) {
            *a += s;
        }
        e.1 += part.weight_total;
    }
    acc.into_iter()
        .map(|(k, (sums, total))| (k, sums.into_iter().map(|s| s / total).collect()))
        .collect()
}

/// Survival curve per stratum at that stratum's mean covariate vector.
pub fn baseline_survival_at_means(
    baseline: &BaselineHazard,
    means: &BTreeMap<StratumKey, Vec<f64>>,
    beta_hat: &[f64],
) -> BTreeMap<StratumKey, StepFunction> {
    baseline
        .strata
        .iter()
        .map(|(key, steps)| {
            let theta = means
                .get(key)
                .map_or(0.0, |z| crate::matrix::dot(beta_hat, z));
            let scale = theta.exp();
            let curve = steps.iter().map(|&(t, h)| (t, (-scale * h).exp())).collect();
            (key.clone(), curve)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBin {
    pub partner_id: i64,
    /// 1-based, in increasing linear-predictor order.
    pub bin: usize,
    pub count: usize,
    pub mean_linear_predictor: f64,
    pub mean_martingale: f64,
    pub mean_deviance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedResidualSummary {
    pub partner_id: i64,
    pub rows: Vec<ResidualBin>,
    /// Fewer records than the minimum cell size: a single bin whose means
    /// are withheld (NaN).
    pub suppressed: bool,
}

impl BinnedResidualSummary {
    pub fn total_count(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }
}

/// Groups one partner's residuals into linear-predictor quantile bins.
/// Tied predictors share an average rank and so land in the same bin. The
/// bin count shrinks until every bin holds at least `min_count` records.
pub fn bin_residuals(
    partner_id: i64,
    records: &[ResidualRecord],
    groups: usize,
    min_count: usize,
    max_groups: usize,
) -> BinnedResidualSummary {
    let n = records.len();
    if n == 0 {
        return BinnedResidualSummary {
            partner_id,
            rows: Vec::new(),
            suppressed: false,
        };
    }
    let min_count = min_count.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[a].linear_predictor.total_cmp(&records[b].linear_predictor));

    let mut rank = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && records[order[j]].linear_predictor == records[order[i]].linear_predictor {
            j += 1;
        }
        let avg = (i + j - 1) as f64 / 2.0;
        for &k in &order[i..j] {
            rank[k] = avg;
        }
        i = j;
    }

    let mut effective = groups.min(n / min_count).min(max_groups).max(1);
    let assignment = loop {
        let bins: Vec<usize> = order
            .iter()
            .map(|&k| ((rank[k] * effective as f64 / n as f64).floor() as usize).min(effective - 1))
            .collect();
        let mut counts = vec![0usize; effective];
        for &b in &bins {
            counts[b] += 1;
        }
        if effective == 1 || counts.iter().all(|&c| c == 0 || c >= min_count) {
            break bins;
        }
        effective -= 1;
    };

    let suppressed = n < min_count;
    let mut rows: Vec<ResidualBin> = Vec::new();
    let mut start = 0;
    while start < n {
        let b = assignment[start];
        let mut end = start;
        let (mut lp, mut mg, mut dv) = (0.0, 0.0, 0.0);
        while end < n && assignment[end] == b {
            let r = &records[order[end]];
            lp += r.linear_predictor;
            mg += r.martingale;
            dv += r.deviance;
            end += 1;
        }
        let count = end - start;
        let c = count as f64;
        let (lp, mg, dv) = if suppressed {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (lp / c, mg / c, dv / c)
        };
        rows.push(ResidualBin {
            partner_id,
            bin: rows.len() + 1,
            count,
            mean_linear_predictor: lp,
            mean_martingale: mg,
            mean_deviance: dv,
        });
        start = end;
    }
    BinnedResidualSummary {
        partner_id,
        rows,
        suppressed,
    }
}

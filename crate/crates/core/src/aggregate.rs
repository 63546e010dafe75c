//! Analysis-center reductions: grid union, summary summation across
//! partners, and the Breslow/Efron stratum scores built from summed
//! risk-set aggregates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::model::{StratumKey, Ties};
use crate::site::{EventTimeGrid, RiskSetSummary, ScoreContribution, Scope, StratumGrid};

/// A risk-set summary summed over partners. `local_tie_count` of the inner
/// summary holds the global tie count d_{m,j}.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRiskSummary(pub RiskSetSummary);

impl GlobalRiskSummary {
    pub fn tie_count(&self) -> u64 {
        self.0.local_tie_count
    }
}

/// One partner's summaries for a round.
#[derive(Debug, Clone, PartialEq)]
pub struct PartnerSummaries {
    pub partner_id: i64,
    pub summaries: Vec<RiskSetSummary>,
}

pub fn merge_event_time_grids<'a>(grids: impl IntoIterator<Item = &'a EventTimeGrid>) -> EventTimeGrid {
    let mut acc: BTreeMap<StratumKey, BTreeMap<OrderedTime, u64>> = BTreeMap::new();
    for grid in grids {
        for (key, sg) in &grid.strata {
            let cell = acc.entry(key.clone()).or_default();
            for (t, d) in sg.times.iter().zip(&sg.ties) {
                *cell.entry(OrderedTime(*t)).or_default() += d;
            }
        }
    }
    EventTimeGrid {
        strata: acc
            .into_iter()
            .map(|(key, cells)| {
                let (times, ties) = cells.into_iter().map(|(t, d)| (t.0, d)).unzip();
                (key, StratumGrid { times, ties })
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrderedTime(f64);

impl Eq for OrderedTime {}

impl PartialOrd for OrderedTime {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedTime {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn add_vec(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Elementwise sum of partner summaries, in ascending partner-id order.
pub fn aggregate_summaries(
    parts: &[PartnerSummaries],
    expected_partners: &[i64],
    grid: &EventTimeGrid,
    ties: Ties,
) -> Result<Vec<GlobalRiskSummary>> {
    for id in expected_partners {
        if !parts.iter().any(|p| p.partner_id == *id) {
            return Err(Error::MissingPartnerPayload { partner_id: *id });
        }
    }
    let mut ordered: Vec<&PartnerSummaries> = parts.iter().collect();
    ordered.sort_by_key(|p| p.partner_id);

    let p = ordered
        .iter()
        .flat_map(|part| part.summaries.first())
        .map(RiskSetSummary::p)
        .next()
        .unwrap_or(0);
    let mut out: Vec<RiskSetSummary> = grid
        .strata
        .iter()
        .flat_map(|(key, sg)| {
            sg.times
                .iter()
                .map(move |&t| RiskSetSummary::zeros(key.clone(), t, p, ties))
        })
        .collect();

    for part in ordered {
        let mismatch = |detail: String| Error::GridMismatch {
            partner_id: part.partner_id,
            detail,
        };
        if part.summaries.len() != out.len() {
            return Err(mismatch(format!(
                "{} rows for {} grid cells",
                part.summaries.len(),
                out.len()
            )));
        }
        for (acc, s) in out.iter_mut().zip(&part.summaries) {
            if s.stratum != acc.stratum || s.time != acc.time {
                return Err(mismatch(format!(
                    "row ({}, {}) where ({}, {}) was expected",
                    s.stratum, s.time, acc.stratum, acc.time
                )));
            }
            if s.p() != p || s.tied.is_some() != acc.tied.is_some() {
                return Err(mismatch(format!(
                    "row ({}, {}) has the wrong shape for p = {p}, ties = {ties}",
                    s.stratum, s.time
                )));
            }
            acc.local_tie_count += s.local_tie_count;
            acc.d0 += s.d0;
            add_vec(&mut acc.d1, &s.d1);
            acc.s0 += s.s0;
            add_vec(&mut acc.s1, &s.s1);
            acc.s2.add_assign(&s.s2);
            if let (Some(q), Some(sq)) = (acc.tied.as_mut(), s.tied.as_ref()) {
                q.q0 += sq.q0;
                add_vec(&mut q.q1, &sq.q1);
                q.q2.add_assign(&sq.q2);
            }
        }
    }
    Ok(out.into_iter().map(GlobalRiskSummary).collect())
}

/// Adds `-f * log s0`, `-f * s1/s0` and `-f * (s2/s0 - a a')` to a
/// stratum score (lower triangle of the Hessian only).
fn subtract_risk_term(acc: &mut ScoreContribution, f: f64, s0: f64, s1: &[f64], s2: &Matrix) {
    acc.loglik -= f * s0.ln();
    let mean: Vec<f64> = s1.iter().map(|v| v / s0).collect();
    for (g, a) in acc.gradient.iter_mut().zip(&mean) {
        *g -= f * a;
    }
    let p = mean.len();
    for i in 0..p {
        for k in 0..=i {
            acc.hessian[(i, k)] -= f * (s2[(i, k)] / s0 - mean[i] * mean[k]);
        }
    }
}

/// Stratum-level (l, g, H) from globally summed summaries. Rows must be
/// grouped by stratum (the order produced by [`aggregate_summaries`]).
pub fn stratum_scores_from_summaries(
    gs: &[GlobalRiskSummary],
    beta: &[f64],
    ties: Ties,
) -> Result<Vec<ScoreContribution>> {
    let p = beta.len();
    let mut out: Vec<ScoreContribution> = Vec::new();

    for GlobalRiskSummary(row) in gs {
        if row.p() != p {
            return Err(Error::DimensionMismatch(format!(
                "summary has {} covariates, beta has {p}",
                row.p()
            )));
        }
        if out.last().map(|c| &c.stratum) != Some(&row.stratum) {
            out.push(ScoreContribution::zeros(p, row.stratum.clone(), Scope::Stratum));
        }
        let d = row.local_tie_count;
        if d == 0 {
            continue;
        }
        if !(row.s0 > 0.0) {
            return Err(Error::DegenerateRiskSet {
                stratum: row.stratum.to_string(),
                time: row.time,
                s0: row.s0,
            });
        }
        let acc = out.last_mut().unwrap();
        acc.loglik += dot(beta, &row.d1);
        add_vec(&mut acc.gradient, &row.d1);

        match (ties, row.tied.as_ref()) {
            (Ties::Breslow, _) => subtract_risk_term(acc, row.d0, row.s0, &row.s1, &row.s2),
            (Ties::Efron, Some(q)) => {
                let f = row.d0 / d as f64;
                for s in 1..=d {
                    let c = (s - 1) as f64 / d as f64;
                    let s0 = row.s0 - c * q.q0;
                    if !(s0 > 0.0) {
                        return Err(Error::DegenerateRiskSet {
                            stratum: row.stratum.to_string(),
                            time: row.time,
                            s0,
                        });
                    }
                    let s1: Vec<f64> = row.s1.iter().zip(&q.q1).map(|(a, b)| a - c * b).collect();
                    let mut s2 = row.s2.clone();
                    s2.add_scaled(-c, &q.q2);
                    subtract_risk_term(acc, f, s0, &s1, &s2);
                }
            }
            (Ties::Efron, None) => {
                return Err(Error::DimensionMismatch(
                    "Efron ties requested but summary carries no tied-event sums".into(),
                ))
            }
        }
    }
    for c in &mut out {
        c.hessian.mirror_lower();
    }
    Ok(out)
}

/// Fieldwise sum, ordered by stratum key.
pub fn total_score(parts: &[ScoreContribution]) -> ScoreContribution {
    let p = parts.first().map(|c| c.gradient.len()).unwrap_or(0);
    let mut ordered: Vec<&ScoreContribution> = parts.iter().collect();
    ordered.sort_by(|a, b| a.stratum.cmp(&b.stratum));
    let mut total = ScoreContribution::zeros(p, StratumKey::empty(), Scope::Global);
    for c in ordered {
        total.loglik += c.loglik;
        add_vec(&mut total.gradient, &c.gradient);
        total.hessian.add_assign(&c.hessian);
    }
    total
}

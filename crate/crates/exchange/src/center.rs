//! Analysis-center side of a run.

use std::collections::BTreeMap;

use discox_core::aggregate::{
    aggregate_summaries, merge_event_time_grids, stratum_scores_from_summaries, total_score, GlobalRiskSummary,
    PartnerSummaries,
};
use discox_core::analysis::{RunState, RunStatus};
use discox_core::diagnostics::{
    baseline_cumulative_hazard, baseline_survival_at_means, pooled_covariate_means, BaselineEstimator, BaselineHazard,
    BinnedResidualSummary,
};
use discox_core::site::{CensoringSummary, CovariateSums, EventTimeGrid, ScoreContribution};
use discox_core::{
    run_fit, select_computation_path, Analysis, ComputationPath, Error as CoreError, EvalPurpose, ModelSpec,
    ScoreProvider,
};

use crate::codec::WireStats;
use crate::error::{ExchangeError, Result};
use crate::message::*;
use crate::transport::{Direction, Transport};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CenterOptions {
    /// Designated event times; skips grid collection at the handshake.
    pub event_time_set: Option<Vec<f64>>,
    /// Overrides the path implied by the strata variables.
    pub force_path: Option<ComputationPath>,
}

/// One message the center received.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficRecord {
    pub round: u32,
    pub partner_id: i64,
    pub kind: Kind,
    /// Set for summary replies.
    pub purpose: Option<EvalPurpose>,
    pub stats: WireStats,
}

#[derive(Debug)]
pub struct CenterRun {
    pub analysis: Analysis,
    pub traffic: Vec<TrafficRecord>,
    /// Last round number used, STOP included.
    pub rounds: u32,
    /// Set when the run aborted; `analysis.status` carries the same outcome.
    pub error: Option<ExchangeError>,
}

impl CenterRun {
    pub fn exit_code(&self) -> i32 {
        self.analysis.status.state.exit_code()
    }
}

struct Session<'a> {
    spec: &'a ModelSpec,
    transport: &'a Transport,
    round: u32,
    traffic: Vec<TrafficRecord>,
}

impl Session<'_> {
    /// Sends one message per partner in the next round and collects the
    /// replies in partner-id order.
    fn exchange(&mut self, payload: impl Fn(i64) -> Payload, purpose: Option<EvalPurpose>) -> Result<Vec<Payload>> {
        self.round += 1;
        let round = self.round - 1;
        let run_id = &self.spec.run_id;
        for &k in &self.spec.partner_ids {
            self.transport
                .send(Direction::ToPartner(k), &Message::new(run_id.clone(), round, payload(k)))?;
        }
        let mut replies = Vec::with_capacity(self.spec.partner_ids.len());
        for &k in &self.spec.partner_ids {
            let (msg, stats) = self.transport.receive(Direction::FromPartner(k), run_id, round)?;
            self.traffic.push(TrafficRecord {
                round,
                partner_id: k,
                kind: msg.kind(),
                purpose,
                stats,
            });
            if let Payload::Error(e) = msg.payload {
                return Err(ExchangeError::PartnerFailed {
                    partner_id: k,
                    category: e.category,
                    reason: e.reason,
                });
            }
            replies.push(msg.payload);
        }
        Ok(replies)
    }

    fn broadcast_stop(&mut self, status: &str, reason: &str) {
        let round = self.round;
        self.round += 1;
        for &k in &self.spec.partner_ids {
            let msg = Message::new(
                self.spec.run_id.clone(),
                round,
                Payload::Stop(Stop {
                    status: status.to_string(),
                    reason: reason.to_string(),
                }),
            );
            if let Err(e) = self.transport.send(Direction::ToPartner(k), &msg) {
                log::warn!("could not deliver STOP to partner {k}: {e}");
            }
        }
    }
}

fn unexpected(k: i64, expected: Kind, got: &Payload) -> ExchangeError {
    ExchangeError::UnexpectedMessage {
        mailbox: Direction::FromPartner(k).to_string(),
        expected: expected.as_str(),
        got: got.kind().as_str(),
    }
}

struct Provider<'s, 'a> {
    session: &'s mut Session<'a>,
    path: ComputationPath,
    grid: &'s EventTimeGrid,
    /// Case (b) summaries from the covariance round.
    final_summaries: Option<Vec<GlobalRiskSummary>>,
    /// Case (a) partner baselines from the covariance round.
    partner_baselines: Vec<BaselineHazard>,
    failure: Option<ExchangeError>,
}

impl Provider<'_, '_> {
    fn round_trip(&mut self, beta: &[f64], purpose: EvalPurpose) -> Result<ScoreContribution> {
        let spec = self.session.spec;
        let want_baseline = self.path == ComputationPath::SiteAggregated && purpose == EvalPurpose::Covariance;
        let iterate = Iterate {
            beta: beta.to_vec(),
            grid: self.grid.clone(),
            ties: spec.ties,
            path: self.path,
            purpose,
            want_baseline,
        };
        let replies = self
            .session
            .exchange(|_| Payload::Iterate(iterate.clone()), Some(purpose))?;
        let ids = &spec.partner_ids;
        match self.path {
            ComputationPath::CenterAggregated => {
                let mut parts = Vec::with_capacity(replies.len());
                for (reply, &k) in replies.into_iter().zip(ids) {
                    match reply {
                        Payload::SummaryReply(SummaryReply::RiskSets { partner_id, summaries }) if partner_id == k => {
                            parts.push(PartnerSummaries { partner_id, summaries })
                        }
                        other => return Err(unexpected(k, Kind::SummaryReply, &other)),
                    }
                }
                let global = aggregate_summaries(&parts, ids, self.grid, spec.ties)?;
                let strata = stratum_scores_from_summaries(&global, beta, spec.ties)?;
                if purpose == EvalPurpose::Covariance {
                    self.final_summaries = Some(global);
                }
                Ok(total_score(&strata))
            }
            ComputationPath::SiteAggregated => {
                let mut all = Vec::new();
                for (reply, &k) in replies.into_iter().zip(ids) {
                    match reply {
                        Payload::SummaryReply(SummaryReply::Scores {
                            partner_id,
                            scores,
                            baseline,
                        }) if partner_id == k => {
                            all.extend(scores);
                            if want_baseline {
                                self.partner_baselines.push(baseline.ok_or_else(|| {
                                    ExchangeError::malformed("baseline.csv", format!("partner {k} sent no baseline"))
                                })?);
                            }
                        }
                        other => return Err(unexpected(k, Kind::SummaryReply, &other)),
                    }
                }
                Ok(total_score(&all))
            }
        }
    }
}

impl ScoreProvider for Provider<'_, '_> {
    fn evaluate(&mut self, beta: &[f64], purpose: EvalPurpose) -> discox_core::Result<ScoreContribution> {
        match self.round_trip(beta, purpose) {
            Ok(sc) => Ok(sc),
            Err(ExchangeError::Core(e)) => Err(e),
            Err(e) => {
                let msg = e.to_string();
                self.failure = Some(e);
                // Placeholder so the engine unwinds; the exchange error wins.
                Err(CoreError::InvalidSpec(msg))
            }
        }
    }
}

/// Joins site-computed baselines; every stratum must come from one site.
fn merge_partner_baselines(parts: Vec<BaselineHazard>, estimator: BaselineEstimator) -> Result<BaselineHazard> {
    let mut strata = BTreeMap::new();
    for part in parts {
        for (key, steps) in part.strata {
            if strata.contains_key(&key) {
                return Err(ExchangeError::malformed(
                    "baseline.csv",
                    format!("stratum [{key}] reported by more than one partner"),
                ));
            }
            strata.insert(key, steps);
        }
    }
    Ok(BaselineHazard { estimator, strata })
}

struct Handshake {
    censoring: CensoringSummary,
    sums: Vec<CovariateSums>,
    grid: EventTimeGrid,
    dropped: usize,
}

fn handshake(s: &mut Session, path: ComputationPath, opts: &CenterOptions) -> Result<Handshake> {
    let want_grid = path == ComputationPath::CenterAggregated && opts.event_time_set.is_none();
    let req = HandshakeRequest::from_spec(s.spec, path, want_grid);
    let replies = s.exchange(|_| Payload::HandshakeRequest(req.clone()), None)?;

    let mut censoring = Vec::new();
    let mut sums = Vec::new();
    let mut grids = Vec::new();
    let mut dropped = 0;
    for (reply, &k) in replies.into_iter().zip(&s.spec.partner_ids) {
        let Payload::HandshakeReply(h) = reply else {
            return Err(unexpected(k, Kind::HandshakeReply, &reply));
        };
        if h.partner_id != k {
            return Err(ExchangeError::malformed(
                "manifest.csv",
                format!("mailbox of partner {k} holds a reply from partner {}", h.partner_id),
            ));
        }
        if want_grid {
            grids.push(h.grid.ok_or_else(|| {
                ExchangeError::malformed("grid.csv", format!("partner {k} sent no event times"))
            })?);
        }
        censoring.push(h.censoring);
        sums.extend(h.covariate_sums);
        dropped += h.dropped_rows;
    }
    let censoring = CensoringSummary::merge(&censoring);
    let grid = match (path, &opts.event_time_set) {
        (ComputationPath::SiteAggregated, _) => EventTimeGrid::default(),
        (ComputationPath::CenterAggregated, Some(times)) => {
            EventTimeGrid::from_time_set(censoring.rows.iter().map(|r| r.stratum.clone()), times)
        }
        (ComputationPath::CenterAggregated, None) => merge_event_time_grids(&grids),
    };
    Ok(Handshake {
        censoring,
        sums,
        grid,
        dropped,
    })
}

fn status_for(e: &ExchangeError) -> RunStatus {
    match e {
        ExchangeError::Core(core) => RunStatus::from_error(core),
        other => RunStatus {
            state: RunState::Failed(other.category()),
            reason: other.to_string(),
        },
    }
}

/// Drives a full run against the partners listed in `spec.partner_ids`.
/// Always returns the analysis so far; on failure every partner is sent a
/// STOP before returning.
pub fn orchestrate_center(spec: &ModelSpec, transport: &Transport, opts: &CenterOptions) -> CenterRun {
    let path = opts.force_path.unwrap_or_else(|| select_computation_path(spec));
    let mut analysis = Analysis::new(spec.clone(), CensoringSummary::default());
    analysis.path = path;
    let mut session = Session {
        spec,
        transport,
        round: 0,
        traffic: Vec::new(),
    };

    let outcome = run(&mut session, &mut analysis, path, opts);
    let error = match outcome {
        Ok(()) => {
            let st = &analysis.status;
            session.broadcast_stop(st.state.as_str(), &st.reason);
            None
        }
        Err(e) => {
            log::error!("run {} aborted: {e}", spec.run_id);
            if !matches!(&e, ExchangeError::Core(CoreError::MaxIterationsExceeded(_))) {
                analysis.status = status_for(&e);
            }
            let st = &analysis.status;
            session.broadcast_stop(st.state.as_str(), &st.reason);
            Some(e)
        }
    };
    CenterRun {
        analysis,
        traffic: session.traffic,
        rounds: session.round.saturating_sub(1),
        error,
    }
}

fn run(s: &mut Session, analysis: &mut Analysis, path: ComputationPath, opts: &CenterOptions) -> Result<()> {
    let spec = s.spec;
    spec.validate()?;
    if spec.partner_ids.is_empty() {
        return Err(CoreError::InvalidSpec("dp_cd_list names no partners".into()).into());
    }
    if let Some(times) = &opts.event_time_set {
        if times.is_empty() || times.iter().any(|t| !t.is_finite()) {
            return Err(CoreError::InvalidSpec("event-time set must be non-empty and finite".into()).into());
        }
    }

    let hs = handshake(s, path, opts)?;
    analysis.censoring = hs.censoring;
    analysis.dropped_rows = hs.dropped;
    analysis.partner_count = spec.partner_ids.len();
    log::info!(
        "handshake complete: {} partners, {} events, {} grid cells",
        spec.partner_ids.len(),
        analysis.total_events(),
        hs.grid.cells()
    );

    let mut provider = Provider {
        session: s,
        path,
        grid: &hs.grid,
        final_summaries: None,
        partner_baselines: Vec::new(),
        failure: None,
    };
    let fit = run_fit(&mut provider, spec);
    if let Some(e) = provider.failure.take() {
        return Err(e);
    }
    let (final_summaries, partner_baselines) = (provider.final_summaries.take(), std::mem::take(&mut provider.partner_baselines));
    analysis.record_fit(fit)?;
    let fit = analysis.fit.as_ref().expect("recorded fit");
    log::info!("converged after {} iterations", fit.iterations_used);
    let beta_hat = fit.beta_hat.clone();

    let baseline = match path {
        ComputationPath::CenterAggregated => {
            let summaries = final_summaries.expect("covariance round stores summaries");
            baseline_cumulative_hazard(&hs.grid, &summaries, spec.ties)?
        }
        ComputationPath::SiteAggregated => {
            merge_partner_baselines(partner_baselines, BaselineEstimator::for_ties(spec.ties))?
        }
    };

    let finalize = Finalize {
        beta_hat: beta_hat.clone(),
        baseline: baseline.clone(),
    };
    let replies = s.exchange(|_| Payload::Finalize(finalize.clone()), None)?;
    let mut bins: Vec<BinnedResidualSummary> = Vec::with_capacity(replies.len());
    for (reply, &k) in replies.into_iter().zip(&spec.partner_ids) {
        match reply {
            Payload::DiagnosticsReply(d) if d.partner_id == k => bins.push(d),
            other => return Err(unexpected(k, Kind::DiagnosticsReply, &other)),
        }
    }
    bins.sort_by_key(|b| b.partner_id);

    analysis.survival = baseline_survival_at_means(&baseline, &pooled_covariate_means(&hs.sums), &beta_hat);
    analysis.baseline = Some(baseline);
    analysis.residual_bins = bins;
    Ok(())
}

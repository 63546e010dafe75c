//! Data-partner side of a run: answers each center round until STOP.

use std::path::PathBuf;

use discox_core::analysis::partner_residual_bins;
use discox_core::diagnostics::{baseline_cumulative_hazard, bin_residuals, BinnedResidualSummary};
use discox_core::aggregate::GlobalRiskSummary;
use discox_core::site::{
    compute_censoring_summary, compute_covariate_means, compute_site_contributions, compute_site_summaries,
    extract_local_event_times,
};
use discox_core::{ingest_dataset, AnalysisDataset, ComputationPath, ModelSpec};

use crate::error::{ExchangeError, Result};
use crate::message::*;
use crate::transport::{Direction, Transport};

#[derive(Debug, Clone, PartialEq)]
pub struct PartnerConfig {
    pub run_id: String,
    pub partner_id: i64,
    pub data: PathBuf,
    /// Local minimum records per residual bin; replaces the center's
    /// global value when set.
    pub min_count_override: Option<usize>,
}

/// How a partner loop ended.
#[derive(Debug, Clone, PartialEq)]
pub struct PartnerExit {
    pub rounds: u32,
    pub stop: Stop,
}

struct State {
    spec: ModelSpec,
    ds: AnalysisDataset,
}

fn bins_for(cfg: &PartnerConfig, st: &State, f: &Finalize) -> BinnedResidualSummary {
    let min_count = cfg.min_count_override.unwrap_or(st.spec.min_count_per_grp_glob);
    let mut parts = partner_residual_bins(&st.ds, &f.beta_hat, &f.baseline, &st.spec, min_count);
    match parts.len() {
        1 => parts.remove(0),
        _ => bin_residuals(cfg.partner_id, &[], st.spec.groups, min_count, st.spec.max_numb_of_grp),
    }
}

fn handle(cfg: &PartnerConfig, state: &mut Option<State>, payload: Payload) -> Result<Payload> {
    let k = cfg.partner_id;
    let ready = |state: &Option<State>| -> Result<()> {
        if state.is_none() {
            return Err(ExchangeError::UnexpectedMessage {
                mailbox: Direction::ToPartner(k).to_string(),
                expected: Kind::HandshakeRequest.as_str(),
                got: payload.kind().as_str(),
            });
        }
        Ok(())
    };
    match &payload {
        Payload::HandshakeRequest(req) => {
            let spec = req.to_spec(&cfg.run_id);
            let ds = ingest_dataset(&cfg.data, &spec, k)?;
            log::info!("partner {k}: {} records ({} dropped)", ds.records.len(), ds.dropped_rows);
            let reply = HandshakeReply {
                partner_id: k,
                grid: req.want_grid.then(|| extract_local_event_times(&ds)),
                censoring: compute_censoring_summary(&ds),
                covariate_sums: compute_covariate_means(&ds),
                records: ds.records.len(),
                dropped_rows: ds.dropped_rows,
            };
            *state = Some(State { spec, ds });
            Ok(Payload::HandshakeReply(reply))
        }
        Payload::Iterate(it) => {
            ready(state)?;
            let st = state.as_ref().expect("checked");
            let reply = match it.path {
                ComputationPath::CenterAggregated => SummaryReply::RiskSets {
                    partner_id: k,
                    summaries: compute_site_summaries(&st.ds, &it.beta, &it.grid, it.ties)?,
                },
                ComputationPath::SiteAggregated => {
                    let baseline = if it.want_baseline {
                        let grid = extract_local_event_times(&st.ds);
                        let local: Vec<GlobalRiskSummary> = compute_site_summaries(&st.ds, &it.beta, &grid, it.ties)?
                            .into_iter()
                            .map(GlobalRiskSummary)
                            .collect();
                        Some(baseline_cumulative_hazard(&grid, &local, it.ties)?)
                    } else {
                        None
                    };
                    SummaryReply::Scores {
                        partner_id: k,
                        scores: compute_site_contributions(&st.ds, &it.beta, it.ties)?,
                        baseline,
                    }
                }
            };
            Ok(Payload::SummaryReply(reply))
        }
        Payload::Finalize(f) => {
            ready(state)?;
            Ok(Payload::DiagnosticsReply(bins_for(cfg, state.as_ref().expect("checked"), f)))
        }
        other => Err(ExchangeError::UnexpectedMessage {
            mailbox: Direction::ToPartner(k).to_string(),
            expected: "a center request",
            got: other.kind().as_str(),
        }),
    }
}

/// Serves center rounds 0, 1, 2, ... until a STOP arrives. A local
/// failure is reported to the center as an ERROR reply before returning.
pub fn orchestrate_partner(cfg: &PartnerConfig, transport: &Transport) -> Result<PartnerExit> {
    let k = cfg.partner_id;
    let mut state = None;
    for round in 0.. {
        let (msg, _) = transport.receive(Direction::ToPartner(k), &cfg.run_id, round)?;
        let payload = match msg.payload {
            Payload::Stop(stop) => {
                log::info!("partner {k}: STOP ({}) at round {round}", stop.status);
                return Ok(PartnerExit { rounds: round, stop });
            }
            p => p,
        };
        let reply = match handle(cfg, &mut state, payload) {
            Ok(reply) => reply,
            Err(e) => {
                log::error!("partner {k}: {e}");
                let err = Payload::Error(ErrorReply {
                    partner_id: k,
                    category: e.category(),
                    reason: e.to_string(),
                });
                if let Err(send_err) = transport.send(Direction::FromPartner(k), &Message::new(cfg.run_id.clone(), round, err)) {
                    log::warn!("partner {k}: could not report the failure: {send_err}");
                }
                return Err(e);
            }
        };
        transport.send(Direction::FromPartner(k), &Message::new(cfg.run_id.clone(), round, reply))?;
    }
    unreachable!("the round loop only exits by returning")
}

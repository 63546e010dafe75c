//! Round messages exchanged between the analysis center and data partners.

use discox_core::diagnostics::{BaselineHazard, BinnedResidualSummary};
use discox_core::model::{ComputationPath, ModelSpec, Ties};
use discox_core::site::{CensoringSummary, CovariateSums, EventTimeGrid, RiskSetSummary, ScoreContribution};
use discox_core::{ErrorCategory, EvalPurpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    HandshakeRequest,
    HandshakeReply,
    Iterate,
    SummaryReply,
    Finalize,
    DiagnosticsReply,
    Stop,
    Error,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::HandshakeRequest => "HANDSHAKE_REQUEST",
            Kind::HandshakeReply => "HANDSHAKE_REPLY",
            Kind::Iterate => "ITERATE",
            Kind::SummaryReply => "SUMMARY_REPLY",
            Kind::Finalize => "FINALIZE",
            Kind::DiagnosticsReply => "DIAGNOSTICS_REPLY",
            Kind::Stop => "STOP",
            Kind::Error => "ERROR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "HANDSHAKE_REQUEST" => Kind::HandshakeRequest,
            "HANDSHAKE_REPLY" => Kind::HandshakeReply,
            "ITERATE" => Kind::Iterate,
            "SUMMARY_REPLY" => Kind::SummaryReply,
            "FINALIZE" => Kind::Finalize,
            "DIAGNOSTICS_REPLY" => Kind::DiagnosticsReply,
            "STOP" => Kind::Stop,
            "ERROR" => Kind::Error,
            _ => return None,
        })
    }
}

/// The part of the model specification a partner needs to prepare its
/// data and summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct HandshakeRequest {
    pub dependent_var: String,
    pub censoring_var: String,
    pub censoring_level: f64,
    pub independent_vars: Vec<String>,
    pub strata_vars: Vec<String>,
    pub weight_var: Option<String>,
    pub freq_var: Option<String>,
    pub ties: Ties,
    pub path: ComputationPath,
    /// False on the site-aggregated path or when the center already has an
    /// event-time set.
    pub want_grid: bool,
    pub groups: usize,
    pub min_count_per_grp_glob: usize,
    pub max_numb_of_grp: usize,
}

impl HandshakeRequest {
    pub fn from_spec(spec: &ModelSpec, path: ComputationPath, want_grid: bool) -> Self {
        Self {
            dependent_var: spec.dependent_var.clone(),
            censoring_var: spec.censoring_var.clone(),
            censoring_level: spec.censoring_level,
            independent_vars: spec.independent_vars.clone(),
            strata_vars: spec.strata_vars.clone(),
            weight_var: spec.weight_var.clone(),
            freq_var: spec.freq_var.clone(),
            ties: spec.ties,
            path,
            want_grid,
            groups: spec.groups,
            min_count_per_grp_glob: spec.min_count_per_grp_glob,
            max_numb_of_grp: spec.max_numb_of_grp,
        }
    }

    /// Spec a partner reconstructs for ingestion and binning.
    pub fn to_spec(&self, run_id: &str) -> ModelSpec {
        let mut spec = ModelSpec::new(
            run_id,
            self.dependent_var.clone(),
            self.censoring_var.clone(),
            self.independent_vars.clone(),
        );
        spec.censoring_level = self.censoring_level;
        spec.strata_vars = self.strata_vars.clone();
        spec.weight_var = self.weight_var.clone();
        spec.freq_var = self.freq_var.clone();
        spec.ties = self.ties;
        spec.groups = self.groups;
        spec.min_count_per_grp_glob = self.min_count_per_grp_glob;
        spec.max_numb_of_grp = self.max_numb_of_grp;
        spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandshakeReply {
    pub partner_id: i64,
    pub grid: Option<EventTimeGrid>,
    pub censoring: CensoringSummary,
    pub covariate_sums: Vec<CovariateSums>,
    pub records: usize,
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub beta: Vec<f64>,
    pub grid: EventTimeGrid,
    pub ties: Ties,
    pub path: ComputationPath,
    pub purpose: EvalPurpose,
    /// Site-aggregated path only: return the local baseline hazard too.
    pub want_baseline: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SummaryReply {
    /// Center-aggregated path: one row per designated (stratum, time) cell.
    RiskSets {
        partner_id: i64,
        summaries: Vec<RiskSetSummary>,
    },
    /// Site-aggregated path: one (l, g, H) per local stratum.
    Scores {
        partner_id: i64,
        scores: Vec<ScoreContribution>,
        baseline: Option<BaselineHazard>,
    },
}

impl SummaryReply {
    pub fn partner_id(&self) -> i64 {
        match self {
            SummaryReply::RiskSets { partner_id, .. } | SummaryReply::Scores { partner_id, .. } => *partner_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finalize {
    pub beta_hat: Vec<f64>,
    pub baseline: BaselineHazard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stop {
    pub status: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReply {
    pub partner_id: i64,
    pub category: ErrorCategory,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    HandshakeRequest(HandshakeRequest),
    HandshakeReply(HandshakeReply),
    Iterate(Iterate),
    SummaryReply(SummaryReply),
    Finalize(Finalize),
    DiagnosticsReply(BinnedResidualSummary),
    Stop(Stop),
    Error(ErrorReply),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::HandshakeRequest(_) => Kind::HandshakeRequest,
            Payload::HandshakeReply(_) => Kind::HandshakeReply,
            Payload::Iterate(_) => Kind::Iterate,
            Payload::SummaryReply(_) => Kind::SummaryReply,
            Payload::Finalize(_) => Kind::Finalize,
            Payload::DiagnosticsReply(_) => Kind::DiagnosticsReply,
            Payload::Stop(_) => Kind::Stop,
            Payload::Error(_) => Kind::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub run_id: String,
    pub round: u32,
    pub payload: Payload,
}

impl Message {
    pub fn new(run_id: impl Into<String>, round: u32, payload: Payload) -> Self {
        Self {
            run_id: run_id.into(),
            round,
            payload,
        }
    }

    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }
}

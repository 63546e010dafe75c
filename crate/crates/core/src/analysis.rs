//! Everything a finished run produces, and the in-process pooled fit that
//! assembles it from full datasets.

use std::collections::BTreeMap;

use crate::diagnostics::{
    baseline_cumulative_hazard, baseline_survival_at_means, bin_residuals, evaluate_subject_diagnostics,
    pooled_covariate_means, BaselineHazard, BinnedResidualSummary, StepFunction,
};
use crate::error::{Error, ErrorCategory, Result};
use crate::inference::{global_null_test, model_fit_stats, parameter_table, GlobalNullTest, ModelFitStats, ParameterEstimateRow};
use crate::model::{select_computation_path, AnalysisDataset, ComputationPath, ModelSpec, StratumKey};
use crate::newton::{run_fit, FitResult, LocalProvider};
use crate::site::{compute_censoring_summary, compute_covariate_means, CensoringSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunState {
    Converged,
    NotConverged,
    Failed(ErrorCategory),
}

impl RunState {
    pub fn as_str(self) -> &'static str {
        match self {
            RunState::Converged => "CONVERGED",
            RunState::NotConverged => "NOT_CONVERGED",
            RunState::Failed(ErrorCategory::Protocol) => "PROTOCOL_ERROR",
            RunState::Failed(ErrorCategory::Numeric) => "NUMERIC_ERROR",
            RunState::Failed(ErrorCategory::Config) => "CONFIG_ERROR",
            RunState::Failed(ErrorCategory::NotConverged) => "NOT_CONVERGED",
        }
    }

    /// Process exit code for this outcome.
    pub fn exit_code(self) -> i32 {
        match self {
            RunState::Converged => 0,
            RunState::NotConverged => 2,
            RunState::Failed(c) => c.exit_code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStatus {
    pub state: RunState,
    pub reason: String,
}

impl RunStatus {
    pub fn converged() -> Self {
        Self {
            state: RunState::Converged,
            reason: "Convergence criterion (XCONV) satisfied.".into(),
        }
    }

    pub fn from_error(e: &Error) -> Self {
        let state = match e.category() {
            ErrorCategory::NotConverged => RunState::NotConverged,
            c => RunState::Failed(c),
        };
        Self {
            state,
            reason: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub fit_stats: ModelFitStats,
    pub null_test: GlobalNullTest,
    pub estimates: Vec<ParameterEstimateRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub spec: ModelSpec,
    pub path: ComputationPath,
    pub status: RunStatus,
    /// Absent when the run failed before the first evaluation.
    pub fit: Option<FitResult>,
    pub inference: Option<Inference>,
    pub censoring: CensoringSummary,
    pub baseline: Option<BaselineHazard>,
    pub survival: BTreeMap<StratumKey, StepFunction>,
    pub residual_bins: Vec<BinnedResidualSummary>,
    pub dropped_rows: usize,
    pub partner_count: usize,
}

impl Analysis {
    /// Skeleton for a run that has not produced a fit yet.
    pub fn new(spec: ModelSpec, censoring: CensoringSummary) -> Self {
        Self {
            path: select_computation_path(&spec),
            partner_count: spec.partner_ids.len(),
            spec,
            status: RunStatus::converged(),
            fit: None,
            inference: None,
            censoring,
            baseline: None,
            survival: BTreeMap::new(),
            residual_bins: Vec::new(),
            dropped_rows: 0,
        }
    }

    pub fn total_events(&self) -> u64 {
        self.censoring.total().events
    }

    pub fn mark_failed(&mut self, e: &Error) {
        self.status = RunStatus::from_error(e);
        if let Error::MaxIterationsExceeded(fit) = e {
            self.fit = Some((**fit).clone());
        }
        self.inference = None;
    }

    /// Stores the fit outcome; a converged fit also gets its inference.
    pub fn record_fit(&mut self, fit: Result<FitResult>) -> Result<()> {
        match fit {
            Ok(fit) => {
                self.inference = Some(summarize_fit(&self.spec, &fit, self.total_events())?);
                self.status = RunStatus::converged();
                self.fit = Some(fit);
                Ok(())
            }
            Err(e) => {
                self.mark_failed(&e);
                Err(e)
            }
        }
    }
}

pub fn summarize_fit(spec: &ModelSpec, fit: &FitResult, total_events: u64) -> Result<Inference> {
    let cov = fit
        .covariance
        .as_ref()
        .ok_or_else(|| Error::DimensionMismatch("converged fit carries no covariance".into()))?;
    let p = spec.p();
    Ok(Inference {
        fit_stats: model_fit_stats(fit.loglik_null, fit.loglik_final, p, total_events),
        null_test: global_null_test(fit.loglik_null, fit.loglik_final, p),
        estimates: parameter_table(&fit.beta_hat, cov, &spec.independent_vars, spec.alpha)?,
    })
}

/// Residual bins for each partner present in `ds`, keyed by the record's
/// partner id.
pub fn partner_residual_bins(
    ds: &AnalysisDataset,
    beta_hat: &[f64],
    baseline: &BaselineHazard,
    spec: &ModelSpec,
    min_count: usize,
) -> Vec<BinnedResidualSummary> {
    let records = evaluate_subject_diagnostics(ds, beta_hat, baseline);
    let mut by_partner: BTreeMap<i64, Vec<_>> = BTreeMap::new();
    for r in records {
        by_partner.entry(r.partner_id).or_default().push(r);
    }
    by_partner
        .into_iter()
        .map(|(k, recs)| bin_residuals(k, &recs, spec.groups, min_count, spec.max_numb_of_grp))
        .collect()
}

/// Fits the model on full in-memory datasets with the same engine the
/// distributed run uses. With one pooled dataset this is the reference
/// fit; with one dataset per partner it mirrors the protocol in-process.
pub fn fit_local(datasets: &[AnalysisDataset], spec: &ModelSpec, path: ComputationPath) -> Result<Analysis> {
    spec.validate()?;
    if datasets.iter().all(|d| d.records.is_empty()) {
        return Err(Error::EmptyDataset {
            dropped: datasets.iter().map(|d| d.dropped_rows).sum(),
        });
    }
    let censoring = CensoringSummary::merge(&datasets.iter().map(compute_censoring_summary).collect::<Vec<_>>());
    let mut analysis = Analysis::new(spec.clone(), censoring);
    analysis.path = path;
    analysis.dropped_rows = datasets.iter().map(|d| d.dropped_rows).sum();
    analysis.partner_count = {
        let mut ids: Vec<i64> = datasets.iter().flat_map(|d| d.records.iter().map(|r| r.partner_id)).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };

    let mut provider = LocalProvider::new(datasets, path, spec.ties);
    if analysis.record_fit(run_fit(&mut provider, spec)).is_err() {
        return Ok(analysis);
    }
    let beta_hat = analysis.fit.as_ref().map(|f| f.beta_hat.clone()).unwrap_or_default();

    let baseline = baseline_cumulative_hazard(provider.grid(), &provider.global_summaries(&beta_hat)?, spec.ties)?;
    let sums: Vec<_> = datasets.iter().flat_map(compute_covariate_means).collect();
    analysis.survival = baseline_survival_at_means(&baseline, &pooled_covariate_means(&sums), &beta_hat);
    for ds in datasets {
        analysis
            .residual_bins
            .extend(partner_residual_bins(ds, &beta_hat, &baseline, spec, spec.min_count_per_grp_glob));
    }
    analysis.residual_bins.sort_by_key(|b| b.partner_id);
    analysis.baseline = Some(baseline);
    Ok(analysis)
}

/// Reference fit over a single pooled dataset.
pub fn fit_pooled(ds: &AnalysisDataset, spec: &ModelSpec) -> Result<Analysis> {
    fit_local(std::slice::from_ref(ds), spec, select_computation_path(spec))
}

//! Newton-Raphson driver with the XCONV relative convergence rule.

use crate::aggregate::{aggregate_summaries, merge_event_time_grids, stratum_scores_from_summaries, total_score, GlobalRiskSummary, PartnerSummaries};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{AnalysisDataset, ComputationPath, ModelSpec, Ties};
use crate::site::{compute_site_contributions, compute_site_summaries, extract_local_event_times, EventTimeGrid, ScoreContribution};
use crate::solver::solve_newton_step;

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub beta: Vec<f64>,
    pub loglik: f64,
    /// `None` for iteration 0.
    pub max_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    /// I^{-1}(beta_hat); present iff converged.
    pub covariance: Option<Matrix>,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    /// Number of Newton updates performed.
    pub iterations_used: usize,
    pub loglik_null: f64,
    pub loglik_final: f64,
    pub gradient_final: Vec<f64>,
    pub provider_calls: usize,
}

/// Why the driver is asking for a score evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPurpose {
    /// Log-likelihood at the zero vector when iterations start elsewhere.
    NullModel,
    Iteration,
    /// Extra evaluation at the converged estimate for the covariance.
    Covariance,
}

/// Source of global (l, g, H) for a given beta: in-process summation or a
/// network round trip.
pub trait ScoreProvider {
    fn evaluate(&mut self, beta: &[f64], purpose: EvalPurpose) -> Result<ScoreContribution>;
}

impl<F> ScoreProvider for F
where
    F: FnMut(&[f64], EvalPurpose) -> Result<ScoreContribution>,
{
    fn evaluate(&mut self, beta: &[f64], purpose: EvalPurpose) -> Result<ScoreContribution> {
        self(beta, purpose)
    }
}

pub fn update_beta(beta: &[f64], step: &[f64]) -> Vec<f64> {
    beta.iter().zip(step).map(|(b, s)| b + s).collect()
}

/// Relative change per coefficient, absolute when |beta_n| < 0.01.
/// Returns (converged, max |delta|).
pub fn check_convergence(beta_n: &[f64], beta_next: &[f64], xconv: f64) -> (bool, f64) {
    let max_delta = beta_n
        .iter()
        .zip(beta_next)
        .map(|(&old, &new)| {
            let diff = new - old;
            if old.abs() < 0.01 {
                diff.abs()
            } else {
                (diff / old).abs()
            }
        })
        .fold(0.0_f64, f64::max);
    (max_delta < xconv, max_delta)
}

fn checked(sc: ScoreContribution, iteration: usize, p: usize) -> Result<ScoreContribution> {
    if sc.gradient.len() != p || sc.hessian.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "provider returned gradient of length {} for p = {p}",
            sc.gradient.len()
        )));
    }
    if !sc.is_finite() {
        return Err(Error::NonFiniteLikelihood { iteration });
    }
    Ok(sc)
}

/// Runs plain Newton-Raphson from `spec.initial_estimates`. After the
/// convergence test passes, one more evaluation at the final estimate
/// supplies I(beta_hat) for the covariance.
pub fn run_fit<P: ScoreProvider + ?Sized>(provider: &mut P, spec: &ModelSpec) -> Result<FitResult> {
    let p = spec.p();
    let mut beta = spec.initial_estimates.clone();
    if beta.len() != p {
        return Err(Error::DimensionMismatch(format!("{} initial estimates for p = {p}", beta.len())));
    }
    let mut calls = 0usize;

    // A zero start gets the null log-likelihood from iteration 0 for free.
    let zero_start = beta.iter().all(|b| *b == 0.0);
    let mut loglik_null = f64::NAN;
    if !zero_start {
        let sc = checked(provider.evaluate(&vec![0.0; p], EvalPurpose::NullModel)?, 0, p)?;
        calls += 1;
        loglik_null = sc.loglik;
    }

    let mut history: Vec<IterationRecord> = Vec::new();
    let mut last_delta = None;
    let mut converged = false;

    for n in 0.. {
        let purpose = if converged { EvalPurpose::Covariance } else { EvalPurpose::Iteration };
        let sc = checked(provider.evaluate(&beta, purpose)?, n, p)?;
        calls += 1;
        if n == 0 && zero_start {
            loglik_null = sc.loglik;
        }
        history.push(IterationRecord {
            iteration: n,
            beta: beta.clone(),
            loglik: sc.loglik,
            max_delta: last_delta,
        });
        let info = sc.hessian.scaled(-1.0);

        if converged {
            let solved = solve_newton_step(&info, &sc.gradient, true)?;
            return Ok(FitResult {
                beta_hat: beta,
                covariance: solved.inverse,
                history,
                converged: true,
                iterations_used: n,
                loglik_null,
                loglik_final: sc.loglik,
                gradient_final: sc.gradient,
                provider_calls: calls,
            });
        }
        if n == spec.max_iter {
            return Err(Error::MaxIterationsExceeded(Box::new(FitResult {
                beta_hat: beta,
                covariance: None,
                history,
                converged: false,
                iterations_used: n,
                loglik_null,
                loglik_final: sc.loglik,
                gradient_final: sc.gradient,
                provider_calls: calls,
            })));
        }

        let step = solve_newton_step(&info, &sc.gradient, false)?.step;
        let next = update_beta(&beta, &step);
        let (ok, max_delta) = check_convergence(&beta, &next, spec.xconv);
        if next.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFiniteLikelihood { iteration: n + 1 });
        }
        beta = next;
        last_delta = Some(max_delta);
        converged = ok;
    }
    unreachable!("the iteration loop only exits by returning")
}

/// In-process score provider over full datasets. Produces exactly the
/// same arithmetic as the distributed protocol minus serialization, and
/// serves as the pooled-data reference fit.
pub struct LocalProvider<'a> {
    datasets: &'a [AnalysisDataset],
    path: ComputationPath,
    ties: Ties,
    grid: EventTimeGrid,
    partner_ids: Vec<i64>,
    pub calls: usize,
}

impl<'a> LocalProvider<'a> {
    pub fn new(datasets: &'a [AnalysisDataset], path: ComputationPath, ties: Ties) -> Self {
        let grids: Vec<EventTimeGrid> = datasets.iter().map(extract_local_event_times).collect();
        Self {
            datasets,
            path,
            ties,
            grid: merge_event_time_grids(&grids),
            partner_ids: datasets.iter().map(|d| d.partner_id).collect(),
            calls: 0,
        }
    }

    pub fn grid(&self) -> &EventTimeGrid {
        &self.grid
    }

    /// Globally summed risk-set summaries on the merged grid.
    pub fn global_summaries(&self, beta: &[f64]) -> Result<Vec<GlobalRiskSummary>> {
        let parts = self
            .datasets
            .iter()
            .map(|ds| {
                Ok(PartnerSummaries {
                    partner_id: ds.partner_id,
                    summaries: compute_site_summaries(ds, beta, &self.grid, self.ties)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        aggregate_summaries(&parts, &self.partner_ids, &self.grid, self.ties)
    }
}

impl ScoreProvider for LocalProvider<'_> {
    fn evaluate(&mut self, beta: &[f64], _purpose: EvalPurpose) -> Result<ScoreContribution> {
        self.calls += 1;
        let strata = match self.path {
            ComputationPath::CenterAggregated => {
                let global = self.global_summaries(beta)?;
                stratum_scores_from_summaries(&global, beta, self.ties)?
            }
            ComputationPath::SiteAggregated => {
                let mut all = Vec::new();
                for ds in self.datasets {
                    all.extend(compute_site_contributions(ds, beta, self.ties)?);
                }
                all
            }
        };
        Ok(total_score(&strata))
    }
}

//! Fit statistics, likelihood-ratio test and the parameter estimates table.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::special::{chi_square_upper_tail, normal_quantile};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFitStats {
    pub neg2loglik_null: f64,
    pub neg2loglik_fit: f64,
    pub aic: f64,
    pub bic: f64,
    pub p: usize,
    pub total_events: u64,
}

/// AIC = -2l + 2p; BIC uses the total event count as n.
pub fn model_fit_stats(loglik_null: f64, loglik_fit: f64, p: usize, total_events: u64) -> ModelFitStats {
    let neg2 = -2.0 * loglik_fit;
    ModelFitStats {
        neg2loglik_null: -2.0 * loglik_null,
        neg2loglik_fit: neg2,
        aic: neg2 + 2.0 * p as f64,
        bic: neg2 + p as f64 * (total_events as f64).ln(),
        p,
        total_events,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalNullTest {
    pub chisq: f64,
    pub df: usize,
    pub pvalue: f64,
}

/// Likelihood-ratio test of beta = 0. Tiny negative statistics from
/// rounding are clamped to zero.
pub fn global_null_test(loglik_null: f64, loglik_fit: f64, p: usize) -> GlobalNullTest {
    let chisq = (2.0 * (loglik_fit - loglik_null)).max(0.0);
    GlobalNullTest {
        chisq,
        df: p,
        pvalue: chi_square_upper_tail(chisq, p as u32),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimateRow {
    pub name: String,
    pub df: u32,
    pub estimate: f64,
    pub stderr: f64,
    pub chisq: f64,
    pub pvalue: f64,
    pub hazard_ratio: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

pub fn parameter_table(
    beta_hat: &[f64],
    covariance: &Matrix,
    names: &[String],
    alpha: f64,
) -> Result<Vec<ParameterEstimateRow>> {
    if beta_hat.len() != covariance.dim() || names.len() != beta_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates, {} names, {}x{} covariance",
            beta_hat.len(),
            names.len(),
            covariance.dim(),
            covariance.dim()
        )));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    beta_hat
        .iter()
        .zip(names)
        .enumerate()
        .map(|(i, (&estimate, name))| {
            let variance = covariance[(i, i)];
            if !(variance > 0.0) {
                return Err(Error::NonPositiveVariance {
                    name: name.clone(),
                    variance,
                });
            }
            let stderr = variance.sqrt();
            let chisq = (estimate / stderr).powi(2);
            Ok(ParameterEstimateRow {
                name: name.clone(),
                df: 1,
                estimate,
                stderr,
                chisq,
                pvalue: chi_square_upper_tail(chisq, 1),
                hazard_ratio: estimate.exp(),
                ci_lower: (estimate - z * stderr).exp(),
                ci_upper: (estimate + z * stderr).exp(),
            })
        })
        .collect()
}

//! Failure-probability estimators, their variance and the stopping rule.

use serde::{Deserialize, Serialize};

use crate::bernoulli::{covariance_sums, CovarianceSums, IndicatorCovariance, PairPassOptions};
use crate::kriging::MarginalPrediction;
use crate::normal::cdf_ratio;
use crate::{Error, Result};

/// Pool COV above which the report carries a warning.
pub const COV_PF_WARNING: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationMode {
    Deterministic,
    Probabilistic,
}

/// Whether indicator correlation enters the estimator variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceModel {
    Mi,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub pf_hat: f64,
    pub variance: f64,
    pub cov_estimator: f64,
    pub cov_mcs: f64,
    pub mode: ClassificationMode,
    pub correlation_mode: VarianceModel,
}

impl EstimatorStats {
    pub fn new(pf_hat: f64, variance: f64, n: usize, mode: ClassificationMode, correlation_mode: VarianceModel) -> Self {
        let cov_estimator = if pf_hat > 0.0 { variance.max(0.0).sqrt() / pf_hat } else { f64::INFINITY };
        Self { pf_hat, variance, cov_estimator, cov_mcs: cov_mcs(pf_hat, n), mode, correlation_mode }
    }

    pub fn pool_warning(&self) -> bool {
        self.cov_mcs > COV_PF_WARNING
    }
}

fn nonempty(preds: &[MarginalPrediction]) -> Result<()> {
    if preds.is_empty() {
        Err(Error::EmptyInput)
    } else {
        Ok(())
    }
}

/// Share of candidates whose predicted mean is `<= 0`.
pub fn pf_deterministic(preds: &[MarginalPrediction]) -> Result<f64> {
    nonempty(preds)?;
    Ok(preds.iter().filter(|p| p.mean <= 0.0).count() as f64 / preds.len() as f64)
}

/// Pool average of `Phi(-mu/sigma)`.
pub fn pf_probabilistic(preds: &[MarginalPrediction]) -> Result<f64> {
    nonempty(preds)?;
    Ok(preds.iter().map(|p| cdf_ratio(-p.mean, p.std())).sum::<f64>() / preds.len() as f64)
}

/// Estimator variance treating the indicators as independent.
pub fn var_mi(preds: &[MarginalPrediction]) -> Result<f64> {
    nonempty(preds)?;
    let n = preds.len() as f64;
    let s: f64 = preds.iter().map(|p| cdf_ratio(-p.mean, p.std()) * cdf_ratio(p.mean, p.std())).sum();
    Ok(s / (n * n))
}

/// Estimator variance including indicator correlation, streamed over pairs.
pub fn var_mc<C: IndicatorCovariance + ?Sized>(bern: &C, opts: &PairPassOptions) -> Result<f64> {
    if bern.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(var_mc_from_sums(&covariance_sums(bern, opts)))
}

/// `var_mc` from an already computed pair pass.
pub fn var_mc_from_sums(sums: &CovarianceSums) -> f64 {
    let n = sums.rows.len() as f64;
    (sums.total / (n * n)).max(0.0)
}

/// Coefficient of variation of a crude MC estimate from `n` samples;
/// `+inf` when `pf` is 0 or 1.
pub fn cov_mcs(pf: f64, n: usize) -> f64 {
    if pf > 0.0 && pf < 1.0 && n > 0 {
        ((1.0 - pf) / (pf * n as f64)).sqrt()
    } else {
        f64::INFINITY
    }
}

/// `sqrt(variance) / pf <= threshold`, never true for `pf = 0`.
pub fn stop_check(pf: f64, variance: f64, threshold: f64) -> bool {
    pf > 0.0 && variance.max(0.0).sqrt() / pf <= threshold
}

//! Learning functions and candidate selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bernoulli::{covariance_sums, sigma_b2, CovarianceSums, IndicatorCovariance, PairPassOptions};
use crate::kriging::{DesignOfExperiment, MarginalPrediction};
use crate::normal::{cdf, cdf_ratio, pdf_ratio, FRAC_1_SQRT_2PI};
use crate::rv::SamplePool;
use crate::{Error, Result};

/// Candidates closer than this to a design point are never selected.
pub const EXCLUSION_RADIUS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    U,
    Eff,
    H,
    Lif,
    Reif,
    Reif2,
    Fneif,
    OptNco,
    OptWco,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    Minimize,
    Maximize,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 9] = [
        StrategyKind::U,
        StrategyKind::Eff,
        StrategyKind::H,
        StrategyKind::Lif,
        StrategyKind::Reif,
        StrategyKind::Reif2,
        StrategyKind::Fneif,
        StrategyKind::OptNco,
        StrategyKind::OptWco,
    ];

    pub fn rule(self) -> SelectionRule {
        match self {
            StrategyKind::U => SelectionRule::Minimize,
            _ => SelectionRule::Maximize,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::U => "u",
            StrategyKind::Eff => "eff",
            StrategyKind::H => "h",
            StrategyKind::Lif => "lif",
            StrategyKind::Reif => "reif",
            StrategyKind::Reif2 => "reif2",
            StrategyKind::Fneif => "fneif",
            StrategyKind::OptNco => "opt_nco",
            StrategyKind::OptWco => "opt_wco",
        }
    }

    /// Needs the joint density of the inputs.
    pub fn uses_density(self) -> bool {
        matches!(self, StrategyKind::Lif | StrategyKind::Reif2)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub strategy: StrategyKind,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn map_scores(preds: &[MarginalPrediction], strategy: StrategyKind, f: impl Fn(f64, f64) -> f64) -> ScoreVector {
    ScoreVector { scores: preds.iter().map(|p| f(p.mean, p.std())).collect(), strategy }
}

/// `|mu| / sigma`.
pub fn u_value(mu: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        mu.abs() / sigma
    } else if mu == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn score_u(preds: &[MarginalPrediction]) -> ScoreVector {
    map_scores(preds, StrategyKind::U, u_value)
}

/// Expected feasibility with `a = -+2 sigma`.
pub fn eff_value(mu: f64, s: f64) -> f64 {
    let a = 2.0 * s;
    let z0 = cdf_ratio(-mu, s);
    let zm = cdf_ratio(-a - mu, s);
    let zp = cdf_ratio(a - mu, s);
    let p0 = pdf_ratio(-mu, s);
    let pm = pdf_ratio(-a - mu, s);
    let pp = pdf_ratio(a - mu, s);
    mu * (2.0 * z0 - zm - zp) - s * (2.0 * p0 - pm - pp) + a * (zp - zm)
}

pub fn score_eff(preds: &[MarginalPrediction]) -> ScoreVector {
    map_scores(preds, StrategyKind::Eff, eff_value)
}

/// Entropy-based H.
///
/// The second density term is evaluated at `(-2 sigma - mu) / sigma`, which
/// makes the expression even in `mu` like the probability bracket.
pub fn h_value(mu: f64, s: f64) -> f64 {
    let a = 2.0 * s;
    let entropy = (s / FRAC_1_SQRT_2PI + 0.5).ln() * (cdf_ratio(a - mu, s) - cdf_ratio(-a - mu, s));
    let tails = 0.5 * (a - mu) * pdf_ratio(a - mu, s) + 0.5 * (a + mu) * pdf_ratio(-a - mu, s);
    (entropy - tails).abs()
}

pub fn score_h(preds: &[MarginalPrediction]) -> ScoreVector {
    map_scores(preds, StrategyKind::H, h_value)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(2m - 1)!! = 1 * 3 * ... * (2m - 1)`.
fn odd_double_factorial(m: u32) -> f64 {
    (1..=m).fold(1.0, |acc, i| acc * (2 * i - 1) as f64)
}

/// `int_a^inf t^k exp(-t^2/2) dt` for `k = 0..=n`.
fn upper_moments(a: f64, n: u32) -> Vec<f64> {
    let e = (-0.5 * a * a).exp();
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(cdf(-a) / FRAC_1_SQRT_2PI);
    if n >= 1 {
        out.push(e);
    }
    for k in 2..=n as usize {
        let lead = if e == 0.0 { 0.0 } else { a.powi(k as i32 - 1) * e };
        out.push(lead + (k - 1) as f64 * out[k - 2]);
    }
    out
}

/// Bracketed moment term of LIF for problem dimension `n`.
fn lif_moment(mu: f64, s: f64, n: u32) -> f64 {
    if n % 2 == 0 {
        let mut acc = mu.powi(n as i32);
        for m in 1..=n / 2 {
            acc += binomial(n, 2 * m) * mu.powi((n - 2 * m) as i32) * s.powi(2 * m as i32) * odd_double_factorial(m);
        }
        acc
    } else {
        let moments = upper_moments(mu / s, n);
        let sum: f64 = (0..=n)
            .map(|m| binomial(n, m) * mu.powi((n - m) as i32) * s.powi(m as i32) * moments[m as usize])
            .sum();
        (2.0 / std::f64::consts::PI).sqrt() * sum
    }
}

/// LIF at one candidate: `Phi(-U) f(x) [moment term]`.
pub fn lif_value(mu: f64, s: f64, density: f64, dim: usize) -> f64 {
    if !(s > 0.0) {
        return 0.0;
    }
    cdf(-u_value(mu, s)) * density * lif_moment(mu, s, dim as u32)
}

pub fn score_lif(preds: &[MarginalPrediction], densities: &[f64], dim: usize) -> Result<ScoreVector> {
    if densities.len() != preds.len() {
        return Err(Error::DimensionMismatch { expected: preds.len(), got: densities.len() });
    }
    Ok(ScoreVector {
        scores: preds.iter().zip(densities).map(|(p, f)| lif_value(p.mean, p.std(), *f, dim)).collect(),
        strategy: StrategyKind::Lif,
    })
}

/// Mean of `|g_hat|` (folded normal).
pub fn folded_mean(mu: f64, s: f64) -> f64 {
    if !(s > 0.0) {
        return mu.abs();
    }
    (2.0 / std::f64::consts::PI).sqrt() * s * (-0.5 * (mu / s) * (mu / s)).exp() + mu * (2.0 * cdf(mu / s) - 1.0)
}

const C_OMEGA: f64 = 2.0;

pub fn reif_value(mu: f64, s: f64) -> f64 {
    C_OMEGA * s - folded_mean(mu, s)
}

pub fn score_reif(preds: &[MarginalPrediction]) -> ScoreVector {
    map_scores(preds, StrategyKind::Reif, reif_value)
}

pub fn score_reif2(preds: &[MarginalPrediction], densities: &[f64]) -> Result<ScoreVector> {
    if densities.len() != preds.len() {
        return Err(Error::DimensionMismatch { expected: preds.len(), got: densities.len() });
    }
    Ok(ScoreVector {
        scores: preds.iter().zip(densities).map(|(p, f)| reif_value(p.mean, p.std()) * f).collect(),
        strategy: StrategyKind::Reif2,
    })
}

/// Standard deviation of `|g_hat|`.
pub fn folded_std(mu: f64, s: f64) -> Result<f64> {
    let mf = folded_mean(mu, s);
    let scale = mu * mu + s * s;
    let rad = scale - mf * mf;
    if rad < -1e-12 * scale.max(1.0) {
        return Err(Error::Consistency(format!("negative folded-normal variance {rad}")));
    }
    Ok(rad.max(0.0).sqrt())
}

pub fn fneif_value(mu: f64, s: f64) -> Result<f64> {
    let mf = folded_mean(mu, s);
    let sf = folded_std(mu, s)?;
    let p = |num: f64| cdf_ratio(num, s);
    let band = p(2.0 * sf - mu) - p(-2.0 * sf - mu);
    Ok(if 2.0 * sf >= mf {
        2.0 * sf * band
            + mf * (p(mf - mu) - p(-mf - mu) - p(2.0 * sf - mu) + p(-2.0 * sf - mu) - 1.0)
            + s * (p(mf + mu) + p(mf - mu))
            + mu * (p(mf + mu) - p(mf - mu))
    } else {
        2.0 * sf * band - mf + s * (p(2.0 * sf + mu) + p(2.0 * sf - mu)) + mu * (p(2.0 * sf + mu) - p(2.0 * sf - mu))
    })
}

pub fn score_fneif(preds: &[MarginalPrediction]) -> Result<ScoreVector> {
    let scores = preds.iter().map(|p| fneif_value(p.mean, p.std())).collect::<Result<Vec<_>>>()?;
    Ok(ScoreVector { scores, strategy: StrategyKind::Fneif })
}

/// Indicator variance of each candidate.
pub fn score_opt_nco(preds: &[MarginalPrediction]) -> ScoreVector {
    ScoreVector { scores: preds.iter().map(sigma_b2).collect(), strategy: StrategyKind::OptNco }
}

/// `Gamma_i = 2 sum_k Sigma_b[i, k] - sigma_b2(i)` from a pair pass.
pub fn score_opt_wco_from_sums<C: IndicatorCovariance + ?Sized>(bern: &C, sums: &CovarianceSums) -> ScoreVector {
    ScoreVector {
        scores: sums.rows.iter().enumerate().map(|(i, r)| 2.0 * r - bern.diag(i)).collect(),
        strategy: StrategyKind::OptWco,
    }
}

pub fn score_opt_wco<C: IndicatorCovariance + ?Sized>(bern: &C, opts: &PairPassOptions) -> ScoreVector {
    let sums = covariance_sums(bern, opts);
    score_opt_wco_from_sums(bern, &sums)
}

/// Everything a learning function may consume.
#[derive(Clone, Copy)]
pub struct ScoringInput<'a> {
    pub preds: &'a [MarginalPrediction],
    /// Joint input density at each candidate (LIF, REIF2).
    pub densities: Option<&'a [f64]>,
    pub dim: usize,
    /// Indicator covariance and its pair pass (OPT_WCO).
    pub indicator: Option<(&'a dyn IndicatorCovariance, &'a CovarianceSums)>,
}

pub fn score(kind: StrategyKind, input: &ScoringInput<'_>) -> Result<ScoreVector> {
    let dens = || input.densities.ok_or_else(|| Error::Config(format!("{kind} needs input densities")));
    match kind {
        StrategyKind::U => Ok(score_u(input.preds)),
        StrategyKind::Eff => Ok(score_eff(input.preds)),
        StrategyKind::H => Ok(score_h(input.preds)),
        StrategyKind::Lif => score_lif(input.preds, dens()?, input.dim),
        StrategyKind::Reif => Ok(score_reif(input.preds)),
        StrategyKind::Reif2 => score_reif2(input.preds, dens()?),
        StrategyKind::Fneif => score_fneif(input.preds),
        StrategyKind::OptNco => Ok(score_opt_nco(input.preds)),
        StrategyKind::OptWco => {
            let (bern, sums) = input.indicator.ok_or_else(|| Error::Config("opt_wco needs indicator covariance".into()))?;
            Ok(score_opt_wco_from_sums(bern, sums))
        }
    }
}

/// Candidates that may not be selected: zero predicted variance or within
/// [`EXCLUSION_RADIUS`] of a design point.
pub fn exclusion_mask(pool: &SamplePool, preds: &[MarginalPrediction], doe: &DesignOfExperiment) -> Vec<bool> {
    (0..pool.len())
        .map(|i| !(preds[i].variance > 0.0) || doe.min_distance(pool.point(i)) <= EXCLUSION_RADIUS)
        .collect()
}

/// Best non-excluded candidate; ties go to the lowest index.
pub fn select(scores: &ScoreVector, excluded: &[bool]) -> Result<usize> {
    let rule = scores.strategy.rule();
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.scores.iter().enumerate() {
        if excluded.get(i).copied().unwrap_or(false) || s.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => match rule {
                SelectionRule::Minimize => s < b,
                SelectionRule::Maximize => s > b,
            },
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::AllExcluded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one(mu: f64, s: f64) -> Vec<MarginalPrediction> {
        vec![MarginalPrediction::new(mu, s * s)]
    }

    #[test]
    fn u_and_nco_values() {
        assert_eq!(score_u(&one(2.0, 1.0)).scores[0], 2.0);
        assert_eq!(score_u(&one(0.0, 1.0)).scores[0], 0.0);
        assert_eq!(score_opt_nco(&one(0.0, 3.0)).scores[0], 0.25);
        assert_abs_diff_eq!(score_opt_nco(&one(2.0, 1.0)).scores[0], 0.022_233, epsilon = 1e-6);
    }

    #[test]
    fn eff_values() {
        assert_abs_diff_eq!(eff_value(0.0, 1.0), 1.2191, epsilon = 1e-4);
        assert!(eff_value(10.0, 1.0).abs() < 1e-12);
    }

    #[test]
    fn h_values() {
        for mu in [0.0, 0.3, 1.7, 4.0] {
            assert_abs_diff_eq!(h_value(mu, 1.3), h_value(-mu, 1.3), epsilon = 1e-12);
        }
        assert!(h_value(10.0, 1.0) < 1e-12);
    }

    #[test]
    fn lif_values() {
        assert_abs_diff_eq!(lif_value(0.0, 1.0, 1.0, 2), 0.5, epsilon = 1e-15);
        assert_eq!(lif_value(0.4, 1.0, 0.0, 2), 0.0);
        assert_abs_diff_eq!(lif_value(0.4, 1.2, 0.2, 3), 2.0 * lif_value(0.4, 1.2, 0.1, 3), epsilon = 1e-15);
        assert_eq!(odd_double_factorial(3), 15.0);
    }

    #[test]
    fn upper_moment_recurrence() {
        // direct quadrature of int_a^inf t^k e^{-t^2/2} dt
        for &a in &[-1.5, 0.0, 0.7] {
            let m = upper_moments(a, 5);
            for (k, mk) in m.iter().enumerate() {
                let n = 200_000;
                let hi = 12.0;
                let h = (hi - a) / n as f64;
                let q: f64 = (0..n)
                    .map(|i| {
                        let t = a + (i as f64 + 0.5) * h;
                        t.powi(k as i32) * (-0.5 * t * t).exp()
                    })
                    .sum::<f64>()
                    * h;
                assert_abs_diff_eq!(*mk, q, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn reif_values() {
        assert_abs_diff_eq!(folded_mean(0.0, 1.0), 0.797_884_560_802_865_4, epsilon = 1e-15);
        assert_abs_diff_eq!(reif_value(0.0, 1.0), 1.202_115_439_197_134_6, epsilon = 1e-15);
        assert_eq!(folded_mean(3.0, 0.0), 3.0);
        assert_eq!(reif_value(3.0, 0.0), -3.0);
        for i in -20..=20 {
            let mu = i as f64 * 0.37;
            assert!(folded_mean(mu, 0.8) >= mu.abs());
        }
    }

    #[test]
    fn fneif_branches() {
        let sf = folded_std(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(sf, (1.0 - 2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-15);
        assert!(2.0 * sf >= folded_mean(0.0, 1.0));
        assert_eq!(folded_std(3.0, 0.0).unwrap(), 0.0);
        assert!(fneif_value(3.0, 0.0).unwrap().is_finite());
    }

    #[test]
    fn selection_rules() {
        let v = ScoreVector { scores: vec![3.0, 1.0, 1.0], strategy: StrategyKind::U };
        assert_eq!(select(&v, &[false; 3]).unwrap(), 1);
        let v = ScoreVector { scores: vec![3.0, 1.0], strategy: StrategyKind::U };
        assert_eq!(select(&v, &[false, true]).unwrap(), 0);
        assert!(matches!(select(&v, &[true, true]), Err(Error::AllExcluded)));
        let v = ScoreVector { scores: vec![3.0, 5.0, 5.0], strategy: StrategyKind::Eff };
        assert_eq!(select(&v, &[false; 3]).unwrap(), 1);
        for k in StrategyKind::ALL {
            let want = if k == StrategyKind::U { SelectionRule::Minimize } else { SelectionRule::Maximize };
            assert_eq!(k.rule(), want);
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert_eq!("OPT_WCO".parse::<StrategyKind>().unwrap(), StrategyKind::OptWco);
    }

    #[test]
    fn wco_two_candidates() {
        let c = crate::bernoulli::DenseIndicatorCovariance::new(2, vec![0.25, 0.10, 0.10, 0.16]).unwrap();
        let s = score_opt_wco(&c, &PairPassOptions { prune_tol: 0.0 });
        assert_abs_diff_eq!(s.scores[0], 0.45, epsilon = 1e-15);
        assert_abs_diff_eq!(s.scores[1], 0.36, epsilon = 1e-15);
        assert_eq!(select(&s, &[false, false]).unwrap(), 0);
    }
}

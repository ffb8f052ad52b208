//! Correlated Bernoulli failure indicators.
//!
//! For a candidate `x_i` the indicator `I(x_i) = 1{g_hat(x_i) <= 0}` has mean
//! `Phi(m_i)` with `m_i = -mu_i / sigma_i` and variance `Phi(m_i) Phi(-m_i)`.
//! Two indicators are correlated through the joint Gaussian posterior; their
//! covariance is `Phi2(m_i, m_j; rho) - Phi(m_i) Phi(m_j)`.

use crate::kriging::{MarginalPrediction, PoolPosterior};
use crate::normal::{cdf, cdf_ratio};
use crate::{Error, Result};

use std::f64::consts::{FRAC_PI_2, PI};

/// Default prior-correlation screening threshold.
pub const DEFAULT_R_MIN: f64 = 1e-6;

/// Above this `|rho|` the orthant integral is taken from the `rho = 1` end.
const HIGH_RHO: f64 = 0.8;

/// Two-point Gauss-Legendre abscissae on `[0, 1]`.
const GL2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Indicator variance `Phi(-mu/sigma) Phi(mu/sigma)`.
pub fn sigma_b2(pred: &MarginalPrediction) -> f64 {
    let s = pred.std();
    cdf_ratio(-pred.mean, s) * cdf_ratio(pred.mean, s)
}

/// Derivative of the bivariate normal CDF with respect to the correlation.
#[inline]
fn dtheta(h: f64, k: f64, r: f64) -> f64 {
    let one_m = 1.0 - r * r;
    (-(h * h + k * k - 2.0 * r * h * k) / (2.0 * one_m)).exp() / (2.0 * PI * one_m.sqrt())
}

/// Same integrand after `r = sin t`.
#[inline]
fn dtheta_angle(h: f64, k: f64, t: f64) -> f64 {
    let c = t.cos();
    (-(h * h + k * k - 2.0 * h * k * t.sin()) / (2.0 * c * c)).exp() / (2.0 * PI)
}

/// A standardized argument with its lower and upper tail probabilities.
#[derive(Debug, Clone, Copy)]
struct Arg {
    m: f64,
    /// `Phi(m)`
    p: f64,
    /// `Phi(-m)`
    q: f64,
}

impl Arg {
    #[inline]
    fn new(m: f64) -> Self {
        Self { m, p: cdf(m), q: cdf(-m) }
    }

    #[inline]
    fn neg(self) -> Self {
        Self { m: -self.m, p: self.q, q: self.p }
    }
}

fn orthant_nonneg(h: Arg, k: Arg, rho: f64) -> f64 {
    let lower = if h.m <= k.m { h.p } else { k.p };
    if rho == 0.0 {
        return h.p * k.p;
    }
    if rho == 1.0 {
        return lower;
    }
    let base = h.p * k.p;
    let (h, k) = (h.m, k.m);
    if rho <= HIGH_RHO {
        // integrate d/dr from 0 to rho
        let f = dtheta(h, k, GL2[0] * rho) + dtheta(h, k, GL2[1] * rho);
        base + 0.5 * rho * f
    } else {
        // integrate from rho to 1 in the angle variable
        let a = rho.asin();
        let len = FRAC_PI_2 - a;
        let f = dtheta_angle(h, k, a + GL2[0] * len) + dtheta_angle(h, k, a + GL2[1] * len);
        lower - 0.5 * len * f
    }
}

/// Orthant probability with `h.m <= k.m`.
#[inline]
fn orthant(h: Arg, k: Arg, rho: f64) -> f64 {
    let lower = (h.p + k.p - 1.0).max(0.0);
    let p = if rho == -1.0 {
        lower
    } else if rho < -HIGH_RHO {
        h.p - orthant_nonneg(h, k.neg(), -rho)
    } else {
        orthant_nonneg(h, k, rho)
    };
    // the approximation can leave the Frechet bounds far in the tails
    let upper = h.p.min(k.p);
    p.clamp(lower.min(upper), upper)
}

/// `P(X <= h, Y <= k)` for a standard bivariate normal with correlation `rho`.
///
/// Two-point Gauss-Legendre integration of `dPhi2/drho` from the nearer end of
/// the correlation range, with closed forms at `rho` in `{-1, 0, 1}`.
pub fn bvn_orthant(m_i: f64, m_j: f64, rho: f64) -> Result<f64> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::InvalidCorrelation(rho));
    }
    // fixed argument order makes the result exactly symmetric
    let (h, k) = if m_i <= m_j { (m_i, m_j) } else { (m_j, m_i) };
    Ok(orthant(Arg::new(h), Arg::new(k), rho))
}

fn standardized(pred: &MarginalPrediction) -> (f64, f64) {
    let s = pred.std();
    (if s > 0.0 { -pred.mean / s } else { 0.0 }, s)
}

/// Correlation from a covariance; values within round-off of `+-1` snap to it.
fn correlation(cov: f64, si: f64, sj: f64) -> f64 {
    let r = cov / (si * sj);
    if r.abs() >= 1.0 - 1e-12 {
        r.signum()
    } else {
        r
    }
}

/// Indicator covariance `Phi2(m_i, m_j; rho) - Phi(m_i) Phi(m_j)`; zero when either
/// indicator is degenerate.
pub fn sigma_b_cov(pred_i: &MarginalPrediction, pred_j: &MarginalPrediction, cov_ij: f64) -> f64 {
    let (mi, si) = standardized(pred_i);
    let (mj, sj) = standardized(pred_j);
    if !(si > 0.0 && sj > 0.0) {
        return 0.0;
    }
    indicator_cov(mi, mj, correlation(cov_ij, si, sj))
}

#[inline]
fn indicator_cov(mi: f64, mj: f64, rho: f64) -> f64 {
    indicator_cov_args(Arg::new(mi), Arg::new(mj), rho)
}

#[inline]
fn indicator_cov_args(a: Arg, b: Arg, rho: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    let (h, k) = if a.m <= b.m { (a, b) } else { (b, a) };
    orthant(h, k, rho) - a.p * b.p
}

/// Correlation of two failure indicators.
pub fn rho_b(pred_i: &MarginalPrediction, pred_j: &MarginalPrediction, cov_ij: f64) -> Result<f64> {
    let vi = sigma_b2(pred_i);
    let vj = sigma_b2(pred_j);
    if !(vi > 0.0 && vj > 0.0) {
        return Err(Error::DegenerateIndicator);
    }
    let (mi, si) = standardized(pred_i);
    let (mj, sj) = standardized(pred_j);
    let rho = correlation(cov_ij, si, sj);
    let r = if rho == 1.0 && mi == mj {
        1.0
    } else if rho == -1.0 && mi == -mj {
        -1.0
    } else {
        indicator_cov(mi, mj, rho) / (vi * vj).sqrt()
    };
    if r.abs() > 1.0 + 1e-6 {
        return Err(Error::Consistency(format!("indicator correlation {r} out of range")));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// Read access to an indicator covariance matrix `Sigma_b`.
pub trait IndicatorCovariance: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Sigma_b[i, i]`.
    fn diag(&self, i: usize) -> f64;

    /// `Sigma_b[i, j]` for `i != j`.
    fn entry(&self, i: usize, j: usize) -> f64;

    /// Off-diagonal entries of `rows` against `cols`, written to
    /// `out[r * cols.len() + c]`. Pairs with `rows[r] == cols[c]` are unused.
    fn tile(&self, rows: &[usize], cols: &[usize], out: &mut [f64]) {
        for (r, &i) in rows.iter().enumerate() {
            for (c, &j) in cols.iter().enumerate() {
                out[r * cols.len() + c] = if i == j { 0.0 } else { self.entry(i, j) };
            }
        }
    }
}

/// Controls for the streaming pair pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPassOptions {
    /// Bound on the neglected mass `sum_ij |Sigma_b[i, j]|` from dropping
    /// low-variance candidates out of the pair pass; 0 keeps everyone.
    pub prune_tol: f64,
}

impl Default for PairPassOptions {
    fn default() -> Self {
        Self { prune_tol: 1e-4 }
    }
}

/// Row sums `sum_k Sigma_b[i, k]` (diagonal included) and their total.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSums {
    pub rows: Vec<f64>,
    pub total: f64,
    /// Candidates that took part in the pair pass.
    pub active: usize,
}

const BLOCK: usize = 128;
const TILE: usize = 48;

/// Streaming pass over all pairs with `O(N)` memory.
///
/// Candidates are dropped (smallest `sigma_b` first) while
/// `2 * sum_dropped(sigma_b) * sum_all(sigma_b) <= prune_tol`, which bounds
/// the mass of the neglected off-diagonal entries since
/// `|Sigma_b[i, k]| <= sigma_b(i) sigma_b(k)`. Work is split in fixed row
/// blocks reduced in block order, so the result is independent of the
/// thread count.
pub fn covariance_sums<C: IndicatorCovariance + ?Sized>(cov: &C, opts: &PairPassOptions) -> CovarianceSums {
    let diag: Vec<f64> = (0..cov.len()).map(|i| cov.diag(i)).collect();
    pair_pass(&[diag], opts, |rows, cols, out| cov.tile(rows, cols, out)).pop().expect("one set")
}

/// Candidates kept in the pair pass of one covariance matrix.
fn keep_mask(diag: &[f64], opts: &PairPassOptions, keep: &mut [bool]) {
    let sd: Vec<f64> = diag.iter().map(|v| v.max(0.0).sqrt()).collect();
    let sd_total: f64 = sd.iter().sum();
    let mut order: Vec<usize> = (0..diag.len()).filter(|&i| diag[i] > 0.0).collect();
    order.sort_by(|&a, &b| sd[a].total_cmp(&sd[b]).then(a.cmp(&b)));
    let mut dropped = 0.0;
    let mut skip = 0;
    if opts.prune_tol > 0.0 {
        for &i in &order {
            if 2.0 * (dropped + sd[i]) * sd_total > opts.prune_tol {
                break;
            }
            dropped += sd[i];
            skip += 1;
        }
    }
    for &i in &order[skip..] {
        keep[i] = true;
    }
}

/// Row sums of several covariance matrices over the same candidates in one
/// sweep; `entry(i, k, out)` writes entry `(i, k)` of every matrix. A
/// candidate takes part if any matrix keeps it.
fn pair_pass<F>(diags: &[Vec<f64>], opts: &PairPassOptions, tile: F) -> Vec<CovarianceSums>
where
    F: Fn(&[usize], &[usize], &mut [f64]) + Sync,
{
    let sets = diags.len();
    let n = diags[0].len();
    let mut keep = vec![false; n];
    for d in diags {
        keep_mask(d, opts, &mut keep);
    }
    let active: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    let na = active.len();

    // Rows of one block against column tiles; only pairs below the diagonal
    // are used. Layouts: `acc[q * sets + s]`, `vals[(r * cols + c) * sets + s]`.
    let block_pass = |b: usize| -> Vec<f64> {
        let mut acc = vec![0.0; na * sets];
        let lo = b * BLOCK;
        let hi = ((b + 1) * BLOCK).min(na);
        let mut row_acc = vec![0.0; (hi - lo) * sets];
        let mut vals = vec![0.0; BLOCK * TILE * sets];
        for t0 in (0..hi).step_by(TILE) {
            let t1 = (t0 + TILE).min(hi);
            let r0 = lo.max(t0 + 1);
            if r0 >= hi {
                continue;
            }
            let cols = &active[t0..t1];
            let nc = t1 - t0;
            tile(&active[r0..hi], cols, &mut vals[..(hi - r0) * nc * sets]);
            for p in r0..hi {
                let end = t1.min(p);
                let base = (p - r0) * nc;
                if sets == 1 {
                    let v = &vals[base..base + (end - t0)];
                    let mut sum = 0.0;
                    for (a, x) in acc[t0..end].iter_mut().zip(v) {
                        sum += x;
                        *a += x;
                    }
                    row_acc[p - lo] += sum;
                    continue;
                }
                let ra = &mut row_acc[(p - lo) * sets..(p - lo + 1) * sets];
                for q in t0..end {
                    let v = &vals[(base + q - t0) * sets..(base + q - t0 + 1) * sets];
                    for s in 0..sets {
                        ra[s] += v[s];
                        acc[q * sets + s] += v[s];
                    }
                }
            }
        }
        for (p, r) in (lo..hi).zip(row_acc.chunks_exact(sets)) {
            for s in 0..sets {
                acc[p * sets + s] += r[s];
            }
        }
        acc
    };
    let nblocks = na.div_ceil(BLOCK);
    #[cfg(feature = "parallel")]
    let partial: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..nblocks).into_par_iter().map(block_pass).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partial: Vec<Vec<f64>> = (0..nblocks).map(block_pass).collect();

    let mut off = vec![0.0; na * sets];
    for part in &partial {
        for (o, v) in off.iter_mut().zip(part) {
            *o += v;
        }
    }
    (0..sets)
        .map(|s| {
            let mut rows = diags[s].clone();
            for (p, &i) in active.iter().enumerate() {
                rows[i] += off[p * sets + s];
            }
            let total = rows.iter().sum();
            CovarianceSums { rows, total, active: na }
        })
        .collect()
}

/// Indicator statistics of a pool under the current surrogate posterior.
pub struct BernoulliField<'a, 'p> {
    post: &'a PoolPosterior<'p>,
    args: Vec<Arg>,
    sd: Vec<f64>,
    var_b: Vec<f64>,
    r_min: f64,
}

impl<'a, 'p> BernoulliField<'a, 'p> {
    pub fn new(post: &'a PoolPosterior<'p>, r_min: f64) -> Self {
        let preds = post.predictions();
        let mut args = Vec::with_capacity(preds.len());
        let mut sd = Vec::with_capacity(preds.len());
        for p in preds {
            let (mi, si) = standardized(p);
            args.push(Arg::new(mi));
            sd.push(si);
        }
        let var_b = preds.iter().map(sigma_b2).collect();
        Self { post, args, sd, var_b, r_min }
    }

    pub fn sigma_b2(&self, i: usize) -> f64 {
        self.var_b[i]
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    /// Indicator correlation between candidates `i` and `j`.
    pub fn rho_b(&self, i: usize, j: usize) -> Result<f64> {
        let preds = self.post.predictions();
        if i == j {
            return if self.var_b[i] > 0.0 { Ok(1.0) } else { Err(Error::DegenerateIndicator) };
        }
        rho_b(&preds[i], &preds[j], self.post.pairwise_cov(i, j))
    }
}

impl IndicatorCovariance for BernoulliField<'_, '_> {
    fn len(&self) -> usize {
        self.var_b.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.var_b[i]
    }

    #[inline]
    fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.var_b[i];
        }
        if !(self.var_b[i] > 0.0 && self.var_b[j] > 0.0) {
            return 0.0;
        }
        let prior = self.post.prior_correlation(i, j);
        if prior < self.r_min {
            return 0.0;
        }
        let cov = self.post.pairwise_cov_with_prior(i, j, prior);
        indicator_cov_args(self.args[i], self.args[j], correlation(cov, self.sd[i], self.sd[j]))
    }

    fn tile(&self, rows: &[usize], cols: &[usize], out: &mut [f64]) {
        correlation_tile(self.post, &self.sd, self.r_min, rows, cols, out);
        let nc = cols.len();
        for (r, &i) in rows.iter().enumerate() {
            for (o, &j) in out[r * nc..(r + 1) * nc].iter_mut().zip(cols) {
                *o = if o.is_nan() || !(self.var_b[i] > 0.0 && self.var_b[j] > 0.0) {
                    0.0
                } else {
                    indicator_cov_args(self.args[i], self.args[j], *o)
                };
            }
        }
    }
}

/// Posterior correlations of `rows` against `cols`, `out[r * cols.len() + c]`.
/// Screened pairs, identical indices and zero-variance candidates get NaN.
fn correlation_tile(post: &PoolPosterior<'_>, sd: &[f64], r_min: f64, rows: &[usize], cols: &[usize], out: &mut [f64]) {
    let n = rows.len() * cols.len();
    let mut prior = vec![0.0; n];
    post.prior_tile(rows, cols, r_min, &mut prior);
    post.cov_tile(rows, cols, &prior, &mut out[..n], &mut Vec::new());
    let nc = cols.len();
    for (r, &i) in rows.iter().enumerate() {
        let span = r * nc..(r + 1) * nc;
        for ((o, &j), &p) in out[span.clone()].iter_mut().zip(cols).zip(&prior[span]) {
            *o = if i != j && p >= r_min && sd[i] > 0.0 && sd[j] > 0.0 {
                correlation(*o, sd[i], sd[j])
            } else {
                f64::NAN
            };
        }
    }
}

/// Pair-pass row sums for several pool predictions that share the
/// correlation structure of `post`.
///
/// Conditioning on different responses at the same point with fixed kernel
/// parameters changes the predicted means and a common variance scale but not
/// the posterior correlations, so each pair's correlation is computed once
/// and reused for every prediction set. Returns one `(sums, diag)` per set.
pub fn shared_covariance_sums(
    post: &PoolPosterior<'_>,
    sets: &[&[MarginalPrediction]],
    r_min: f64,
    opts: &PairPassOptions,
) -> Result<Vec<(CovarianceSums, Vec<f64>)>> {
    let n = post.len();
    if sets.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(bad) = sets.iter().find(|p| p.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
    }
    let sd: Vec<f64> = post.predictions().iter().map(|p| p.std()).collect();
    let args: Vec<Vec<Arg>> = sets.iter().map(|p| p.iter().map(|q| Arg::new(standardized(q).0)).collect()).collect();
    let diags: Vec<Vec<f64>> = sets.iter().map(|p| p.iter().map(sigma_b2).collect()).collect();
    let k = sets.len();
    let tile = |rows: &[usize], cols: &[usize], out: &mut [f64]| {
        let mut corr = vec![0.0; rows.len() * cols.len()];
        correlation_tile(post, &sd, r_min, rows, cols, &mut corr);
        let nc = cols.len();
        for (r, &i) in rows.iter().enumerate() {
            for (c, &j) in cols.iter().enumerate() {
                let rho = corr[r * nc + c];
                let v = &mut out[(r * nc + c) * k..(r * nc + c + 1) * k];
                for s in 0..k {
                    v[s] = if rho.is_nan() || !(diags[s][i] > 0.0 && diags[s][j] > 0.0) {
                        0.0
                    } else {
                        indicator_cov_args(args[s][i], args[s][j], rho)
                    };
                }
            }
        }
    };
    let sums = pair_pass(&diags, opts, tile);
    Ok(sums.into_iter().zip(diags).collect())
}

/// Dense symmetric indicator covariance, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndicatorCovariance {
    n: usize,
    data: Vec<f64>,
}

impl DenseIndicatorCovariance {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: data.len() });
        }
        Ok(Self { n, data })
    }

    /// Covariance of indicators with the given Gaussian means, standard
    /// deviations and correlation matrix (row-major).
    pub fn from_gaussian(mean: &[f64], std: &[f64], corr: &[f64]) -> Result<Self> {
        let n = mean.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let pi = MarginalPrediction::new(mean[i], std[i] * std[i]);
                let pj = MarginalPrediction::new(mean[j], std[j] * std[j]);
                data[i * n + j] = if i == j { sigma_b2(&pi) } else { sigma_b_cov(&pi, &pj, corr[i * n + j] * std[i] * std[j]) };
            }
        }
        Self::new(n, data)
    }
}

impl IndicatorCovariance for DenseIndicatorCovariance {
    fn len(&self) -> usize {
        self.n
    }

    fn diag(&self, i: usize) -> f64 {
        self.data[i * self.n + i]
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

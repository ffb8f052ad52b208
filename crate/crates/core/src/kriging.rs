//! Ordinary Kriging with a Gaussian kernel.
//!
//! The model stores the Cholesky factor `L` of the regularized correlation
//! matrix `R + jitter I` together with `a = L^-1 Y` and `b = L^-1 1`. All
//! quantities of the BLUP are expressed through these:
//!
//! ```text
//! c      = b.b                    (F^T R^-1 F)
//! beta   = b.a / c
//! sigma2 = |a - beta b|^2 / m
//! w(x)   = L^-1 r(x)
//! mu(x)  = beta + w.(a - beta b)
//! var(x) = sigma2 (1 + (w.b - 1)^2 / c - w.w)
//! ```
//!
//! A [`PoolPosterior`] caches `w(x)` for every candidate of a pool so that
//! single entries of the joint covariance can be produced on demand, and so
//! that conditioning on one more (fantasized) observation costs `O(N m)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::rv::SamplePool;
use crate::{Error, Result};

/// Two design points closer than this (Euclidean) are treated as identical.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Gaussian correlation `prod_n exp(-theta_n (xi_n - xj_n)^2)`.
#[inline]
pub fn kernel(xi: &[f64], xj: &[f64], theta: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), t) in xi.iter().zip(xj).zip(theta) {
        let d = a - b;
        s += t * d * d;
    }
    (-s).exp()
}

/// [`kernel`] with argument validation.
pub fn kernel_checked(xi: &[f64], xj: &[f64], theta: &[f64]) -> Result<f64> {
    if xi.len() != theta.len() || xj.len() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: xi.len().max(xj.len()) });
    }
    if let Some(t) = theta.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidTheta(format!("theta components must be positive, got {t}")));
    }
    Ok(kernel(xi, xj, theta))
}

/// Evaluated training points and their responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOfExperiment {
    dim: usize,
    points: Vec<f64>,
    responses: Vec<f64>,
}

impl DesignOfExperiment {
    pub fn new<R: AsRef<[f64]>>(rows: &[R], responses: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut points = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            points.extend_from_slice(r);
        }
        Self::from_flat(dim, points, responses)
    }

    pub fn from_flat(dim: usize, points: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDesign("points must have at least one coordinate".into()));
        }
        if points.len() != dim * responses.len() {
            return Err(Error::InvalidDesign(format!(
                "{} coordinates for {} responses in dimension {dim}",
                points.len(),
                responses.len()
            )));
        }
        if responses.len() < 2 {
            return Err(Error::InvalidDesign("at least two design points are required".into()));
        }
        if points.iter().chain(&responses).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDesign("coordinates and responses must be finite".into()));
        }
        let doe = Self { dim, points, responses };
        for i in 0..doe.len() {
            for j in 0..i {
                if distance(doe.point(i), doe.point(j)) <= DUPLICATE_TOL {
                    return Err(Error::DuplicatePoints(j, i));
                }
            }
        }
        Ok(doe)
    }

    /// A copy with one more observation.
    pub fn with_point(&self, x: &[f64], y: f64) -> Result<Self> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDesign("coordinates and responses must be finite".into()));
        }
        if let Some(j) = (0..self.len()).find(|&j| distance(self.point(j), x) <= DUPLICATE_TOL) {
            return Err(Error::DuplicatePoints(j, self.len()));
        }
        let mut next = self.clone();
        next.points.extend_from_slice(x);
        next.responses.push(y);
        Ok(next)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Distance from `x` to the closest design point.
    pub fn min_distance(&self, x: &[f64]) -> f64 {
        self.points().map(|p| distance(p, x)).fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-dimension search interval for `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ThetaBounds {
    pub const DEFAULT_LOWER: f64 = 1e-2;
    pub const DEFAULT_UPPER: f64 = 10.0;

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Self { lower: vec![lower; dim], upper: vec![upper; dim] }
    }

    pub fn default_for(dim: usize) -> Self {
        Self::uniform(dim, Self::DEFAULT_LOWER, Self::DEFAULT_UPPER)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.lower.len() != dim || self.upper.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: self.lower.len() });
        }
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if !(*lo > 0.0) || !(lo <= hi) || !hi.is_finite() {
                return Err(Error::InvalidTheta(format!("invalid bounds [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Escalating diagonal regularization of `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterPolicy {
    pub initial: f64,
    pub max: f64,
    pub factor: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self { initial: 1e-10, max: 1e-6, factor: 10.0 }
    }
}

/// Multi-start Hooke-Jeeves settings for the likelihood search (in `ln theta`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleOptions {
    pub starts: usize,
    pub max_evals_per_start: usize,
    pub tol: f64,
    /// Additional start point, e.g. the optimum of the previous fit.
    #[serde(skip)]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { starts: 8, max_evals_per_start: 200, tol: 1e-4, warm_start: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOptions {
    /// `None` means [`ThetaBounds::default_for`] the design dimension.
    pub bounds: Option<ThetaBounds>,
    pub jitter: JitterPolicy,
    pub mle: MleOptions,
}

/// Outcome of the likelihood search.
#[derive(Debug, Clone, PartialEq)]
pub struct MleSummary {
    /// Start points and their objective values, in start order.
    pub starts: Vec<(Vec<f64>, f64)>,
    pub objective: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl MarginalPrediction {
    pub fn new(mean: f64, variance: f64) -> Self {
        Self { mean, variance }
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Mean vector and dense covariance of the surrogate at a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPrediction {
    pub mean: Vec<f64>,
    /// Row-major `N x N`.
    pub covariance: Vec<f64>,
}

impl JointPrediction {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.len() + j]
    }
}

/// A fitted ordinary Kriging surrogate.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    doe: DesignOfExperiment,
    theta: Vec<f64>,
    jitter: f64,
    chol: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    beta: f64,
    z: Vec<f64>,
    sigma2: f64,
    mle: Option<MleSummary>,
}

/// New last row `[l, d]` of the Cholesky factor after appending one point.
#[derive(Debug, Clone)]
pub(crate) struct RowExtension {
    pub l: Vec<f64>,
    pub d: f64,
}

fn correlation_matrix(doe: &DesignOfExperiment, theta: &[f64]) -> Vec<f64> {
    let m = doe.len();
    let mut r = vec![0.0; m * m];
    for i in 0..m {
        let xi = doe.point(i);
        for j in 0..i {
            r[i * m + j] = kernel(xi, doe.point(j), theta);
        }
        r[i * m + i] = 1.0;
    }
    r
}

/// Cholesky of `R + jitter I` with escalation. Returns the factor and the jitter used.
fn factorize(doe: &DesignOfExperiment, theta: &[f64], policy: &JitterPolicy) -> Result<(Vec<f64>, f64)> {
    let m = doe.len();
    let base = correlation_matrix(doe, theta);
    let mut jitter = policy.initial;
    loop {
        let mut l = base.clone();
        for i in 0..m {
            l[i * m + i] += jitter;
        }
        if linalg::cholesky_in_place(&mut l, m) {
            return Ok((l, jitter));
        }
        let next = jitter * policy.factor;
        if next > policy.max * (1.0 + 1e-9) || !(policy.factor > 1.0) {
            return Err(Error::SingularCorrelation { jitter });
        }
        jitter = next;
    }
}

struct Solved {
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    beta: f64,
    z: Vec<f64>,
    sigma2: f64,
}

fn solve_trend(chol: &[f64], m: usize, y: &[f64]) -> Solved {
    let mut a = y.to_vec();
    linalg::forward_solve(chol, m, m, &mut a);
    let mut b = vec![1.0; m];
    linalg::forward_solve(chol, m, m, &mut b);
    trend_from(a, b)
}

fn trend_from(a: Vec<f64>, b: Vec<f64>) -> Solved {
    let m = a.len();
    let c = linalg::dot(&b, &b);
    let beta = linalg::dot(&b, &a) / c;
    let z: Vec<f64> = a.iter().zip(&b).map(|(ai, bi)| ai - beta * bi).collect();
    let sigma2 = linalg::dot(&z, &z) / m as f64;
    Solved { a, b, c, beta, z, sigma2 }
}

/// `ln(|R|^(1/m) sigma2)`, `+inf` when `R` cannot be factorized.
fn log_objective(doe: &DesignOfExperiment, theta: &[f64], policy: &JitterPolicy) -> f64 {
    let m = doe.len();
    match factorize(doe, theta, policy) {
        Ok((chol, _)) => {
            let log_det: f64 = 2.0 * (0..m).map(|i| chol[i * m + i].ln()).sum::<f64>();
            let s = solve_trend(&chol, m, doe.responses());
            log_det / m as f64 + s.sigma2.ln()
        }
        Err(_) => f64::INFINITY,
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Latin-style start points on the per-dimension log grid.
fn start_points(lo: &[f64], hi: &[f64], starts: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    if starts == 0 {
        return Vec::new();
    }
    let multipliers: Vec<usize> = (0..d)
        .map(|j| (2 * j + 1..).step_by(2).find(|&k| gcd(k, starts) == 1).unwrap_or(1))
        .collect();
    (0..starts)
        .map(|k| {
            (0..d)
                .map(|j| {
                    let cell = (k * multipliers[j] + j) % starts;
                    lo[j] + (cell as f64 + 0.5) / starts as f64 * (hi[j] - lo[j])
                })
                .collect()
        })
        .collect()
}

struct SearchResult {
    x_start: Vec<f64>,
    x: Vec<f64>,
    f: f64,
    f_start: f64,
    evals: usize,
}

/// Hooke-Jeeves pattern search on the box `[lo, hi]`.
fn pattern_search<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    step0: f64,
    tol: f64,
    max_evals: usize,
) -> SearchResult {
    let clamp = |x: &mut [f64]| {
        for (v, (l, h)) in x.iter_mut().zip(lo.iter().zip(hi)) {
            *v = v.clamp(*l, *h);
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    let explore = |center: &[f64], fc: f64, step: f64, evals: &mut usize, eval: &mut dyn FnMut(&[f64], &mut usize) -> f64| {
        let mut x = center.to_vec();
        let mut fx = fc;
        for j in 0..x.len() {
            if *evals >= max_evals {
                break;
            }
            let orig = x[j];
            let mut improved = false;
            for dir in [1.0, -1.0] {
                let cand = (orig + dir * step).clamp(lo[j], hi[j]);
                if cand == orig {
                    continue;
                }
                x[j] = cand;
                let fv = eval(&x, evals);
                if fv < fx {
                    fx = fv;
                    improved = true;
                    break;
                }
                if *evals >= max_evals {
                    break;
                }
            }
            if !improved {
                x[j] = orig;
            }
        }
        (x, fx)
    };

    let mut base = x0;
    clamp(&mut base);
    let mut fb = eval(&base, &mut evals);
    let f_start = fb;
    let x_start = base.clone();
    let mut step = step0;
    while step >= tol && evals < max_evals {
        let (mut x_new, mut f_new) = explore(&base, fb, step, &mut evals, &mut eval);
        if f_new < fb {
            loop {
                let mut pattern: Vec<f64> = x_new.iter().zip(&base).map(|(n, o)| 2.0 * n - o).collect();
                clamp(&mut pattern);
                base = x_new;
                fb = f_new;
                if evals >= max_evals {
                    break;
                }
                let fp = eval(&pattern, &mut evals);
                let (x_try, f_try) = explore(&pattern, fp, step, &mut evals, &mut eval);
                if f_try < fb {
                    x_new = x_try;
                    f_new = f_try;
                } else {
                    break;
                }
            }
        } else {
            step *= 0.5;
        }
    }
    SearchResult { x_start, x: base, f: fb, f_start, evals }
}

impl KrigingModel {
    /// Maximum-likelihood fit over `theta`.
    pub fn fit(doe: DesignOfExperiment, opts: &FitOptions) -> Result<Self> {
        let d = doe.dim();
        let bounds = opts.bounds.clone().unwrap_or_else(|| ThetaBounds::default_for(d));
        bounds.validate(d)?;
        let lo: Vec<f64> = bounds.lower.iter().map(|v| v.ln()).collect();
        let hi: Vec<f64> = bounds.upper.iter().map(|v| v.ln()).collect();
        let warm: Option<Vec<f64>> = opts
            .mle
            .warm_start
            .as_ref()
            .filter(|w| w.len() == d && w.iter().all(|t| *t > 0.0 && t.is_finite()))
            .map(|w| w.iter().map(|t| t.ln()).collect());
        // without grid starts the warm start alone is refined locally
        let starts = if opts.mle.starts == 0 && warm.is_some() { 0 } else { opts.mle.starts.max(1) };
        let spacing = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max)
            / MleOptions::default().starts.max(starts) as f64;
        let mut jobs: Vec<(Vec<f64>, f64)> =
            start_points(&lo, &hi, starts).into_iter().map(|x| (x, 0.5 * spacing.max(opts.mle.tol))).collect();
        if let Some(w) = warm {
            jobs.push((w, 0.125 * spacing.max(opts.mle.tol)));
        }

        let objective = |x: &[f64]| {
            let theta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            log_objective(&doe, &theta, &opts.jitter)
        };
        let run = |(x0, step): (Vec<f64>, f64)| {
            pattern_search(&objective, x0, &lo, &hi, step, opts.mle.tol, opts.mle.max_evals_per_start.max(1))
        };
        #[cfg(feature = "parallel")]
        let results: Vec<SearchResult> = {
            use rayon::prelude::*;
            jobs.into_par_iter().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<SearchResult> = jobs.into_iter().map(run).collect();

        let mut best = &results[0];
        for r in &results[1..] {
            if r.f < best.f {
                best = r;
            }
        }
        let theta: Vec<f64> = best.x.iter().map(|v| v.exp()).collect();
        let summary = MleSummary {
            starts: results.iter().map(|r| (r.x_start.iter().map(|v| v.exp()).collect(), r.f_start)).collect(),
            objective: best.f,
            evaluations: results.iter().map(|r| r.evals).sum(),
        };
        let mut model = Self::with_theta(doe, theta, &opts.jitter)?;
        model.mle = Some(summary);
        Ok(model)
    }

    /// Fit with fixed `theta` (no likelihood search).
    pub fn with_theta(doe: DesignOfExperiment, theta: Vec<f64>, jitter: &JitterPolicy) -> Result<Self> {
        if theta.len() != doe.dim() {
            return Err(Error::DimensionMismatch { expected: doe.dim(), got: theta.len() });
        }
        if theta.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidTheta(format!("{theta:?}")));
        }
        let (chol, jit) = factorize(&doe, &theta, jitter)?;
        let m = doe.len();
        let s = solve_trend(&chol, m, doe.responses());
        Ok(Self::assemble(doe, theta, jit, chol, s))
    }

    fn assemble(doe: DesignOfExperiment, theta: Vec<f64>, jitter: f64, chol: Vec<f64>, s: Solved) -> Self {
        Self {
            doe,
            theta,
            jitter,
            chol,
            a: s.a,
            b: s.b,
            c: s.c,
            beta: s.beta,
            z: s.z,
            sigma2: s.sigma2,
            mle: None,
        }
    }

    /// Refit on the design augmented with `(x_new, y)`.
    ///
    /// With `reoptimize = false` theta is held fixed and the factorization is
    /// extended by one row; otherwise the likelihood search is rerun.
    pub fn refit_with(&self, x_new: &[f64], y: f64, reoptimize: bool, opts: &FitOptions) -> Result<Self> {
        if reoptimize {
            let doe = self.doe.with_point(x_new, y)?;
            Self::fit(doe, opts)
        } else {
            Ok(self.extend(x_new, y, &opts.jitter)?.0)
        }
    }

    /// Append one observation with theta fixed. The row extension is returned
    /// when the existing factor could be reused.
    pub(crate) fn extend(&self, x_new: &[f64], y: f64, policy: &JitterPolicy) -> Result<(Self, Option<RowExtension>)> {
        let doe = self.doe.with_point(x_new, y)?;
        let m = self.doe.len();
        let mut l: Vec<f64> = self.doe.points().map(|p| kernel(p, x_new, &self.theta)).collect();
        linalg::forward_solve(&self.chol, m, m, &mut l);
        let d2 = 1.0 + self.jitter - linalg::dot(&l, &l);
        if !(d2 > self.jitter) {
            let model = Self::with_theta(doe, self.theta.clone(), &JitterPolicy { initial: self.jitter, ..*policy })?;
            return Ok((model, None));
        }
        let d = d2.sqrt();
        let n = m + 1;
        let mut chol = vec![0.0; n * n];
        for i in 0..m {
            chol[i * n..i * n + i + 1].copy_from_slice(&self.chol[i * m..i * m + i + 1]);
        }
        chol[m * n..m * n + m].copy_from_slice(&l);
        chol[m * n + m] = d;
        let mut a = self.a.clone();
        a.push((y - linalg::dot(&l, &self.a)) / d);
        let mut b = self.b.clone();
        b.push((1.0 - linalg::dot(&l, &self.b)) / d);
        let s = trend_from(a, b);
        let model = Self::assemble(doe, self.theta.clone(), self.jitter, chol, s);
        Ok((model, Some(RowExtension { l, d })))
    }

    pub fn doe(&self) -> &DesignOfExperiment {
        &self.doe
    }

    pub fn dim(&self) -> usize {
        self.doe.dim()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn mle_summary(&self) -> Option<&MleSummary> {
        self.mle.as_ref()
    }

    /// `gamma = R^-1 (Y - F beta)`.
    pub fn gamma(&self) -> Vec<f64> {
        let m = self.doe.len();
        let mut g = self.z.clone();
        linalg::backward_solve_transposed(&self.chol, m, m, &mut g);
        g
    }

    /// Lower Cholesky factor of `R + jitter I`, row-major `m x m`.
    pub fn chol_factor(&self) -> &[f64] {
        &self.chol
    }

    /// `ln(|R|^(1/m) sigma2)` at the fitted theta.
    pub fn log_likelihood_objective(&self) -> f64 {
        let m = self.doe.len();
        let log_det: f64 = 2.0 * (0..m).map(|i| self.chol[i * m + i].ln()).sum::<f64>();
        log_det / m as f64 + self.sigma2.ln()
    }

    /// The likelihood objective at an arbitrary theta for this design.
    pub fn log_objective_at(&self, theta: &[f64]) -> f64 {
        log_objective(&self.doe, theta, &JitterPolicy::default())
    }

    fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let m = self.doe.len();
        let mut w: Vec<f64> = self.doe.points().map(|p| kernel(p, x, &self.theta)).collect();
        linalg::forward_solve(&self.chol, m, m, &mut w);
        w
    }

    fn prediction_from(&self, wa: f64, wb: f64, ww: f64) -> MarginalPrediction {
        let mean = self.beta + wa - self.beta * wb;
        let u = wb - 1.0;
        let var = self.sigma2 * (1.0 + u * u / self.c - ww);
        MarginalPrediction::new(mean, var.max(0.0))
    }

    pub fn predict_point(&self, x: &[f64]) -> Result<MarginalPrediction> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let w = self.whiten(x);
        Ok(self.prediction_from(linalg::dot(&w, &self.a), linalg::dot(&w, &self.b), linalg::dot(&w, &w)))
    }

    pub fn predict_marginal(&self, points: &SamplePool) -> Result<Vec<MarginalPrediction>> {
        if points.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: points.dim() });
        }
        let rows: Vec<&[f64]> = points.iter().collect();
        let f = |x: &&[f64]| self.predict_point(x).expect("dimension checked");
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            Ok(rows.par_iter().with_min_len(256).map(f).collect())
        }
        #[cfg(not(feature = "parallel"))]
        Ok(rows.iter().map(f).collect())
    }

    pub fn predict_joint(&self, points: &SamplePool) -> Result<JointPrediction> {
        let post = PoolPosterior::new(self, points)?;
        let n = points.len();
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = post.pairwise_cov(i, j);
                cov[i * n + j] = v;
                cov[j * n + i] = v;
            }
        }
        Ok(JointPrediction { mean: post.predictions().iter().map(|p| p.mean).collect(), covariance: cov })
    }
}

/// Surrogate posterior restricted to a candidate pool.
///
/// Holds the whitened cross-correlations `w_k = L^-1 r(x_k)` for every
/// candidate. Conditioning on an extra observation with theta fixed appends
/// one component per candidate instead of recomputing the solves.
#[derive(Debug, Clone)]
pub struct PoolPosterior<'p> {
    pool: &'p SamplePool,
    model: KrigingModel,
    base_m: usize,
    base_w: Arc<Vec<f64>>,
    extra: Vec<Arc<Vec<f64>>>,
    wa: Vec<f64>,
    wb: Vec<f64>,
    ww: Vec<f64>,
    preds: Vec<MarginalPrediction>,
}

impl<'p> PoolPosterior<'p> {
    pub fn new(model: &KrigingModel, pool: &'p SamplePool) -> Result<Self> {
        if pool.dim() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got: pool.dim() });
        }
        let m = model.doe.len();
        let n = pool.len();
        let mut w = vec![0.0; n * m];
        // groups of four pool points share each pass over the factor
        let fill = |(g, rows): (usize, &mut [f64])| {
            for (r, row) in rows.chunks_mut(m).enumerate() {
                let x = pool.point(4 * g + r);
                for (j, p) in model.doe.points().enumerate() {
                    row[j] = kernel(p, x, &model.theta);
                }
            }
            if rows.len() == 4 * m {
                linalg::forward_solve4(&model.chol, m, m, rows);
            } else {
                for row in rows.chunks_mut(m) {
                    linalg::forward_solve(&model.chol, m, m, row);
                }
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            w.par_chunks_mut(4 * m).enumerate().with_min_len(16).for_each(fill);
        }
        #[cfg(not(feature = "parallel"))]
        w.chunks_mut(4 * m).enumerate().for_each(fill);

        let mut wa = Vec::with_capacity(n);
        let mut wb = Vec::with_capacity(n);
        let mut ww = Vec::with_capacity(n);
        for row in w.chunks_exact(m) {
            wa.push(linalg::dot(row, &model.a));
            wb.push(linalg::dot(row, &model.b));
            ww.push(linalg::dot(row, row));
        }
        let preds = (0..n).map(|k| model.prediction_from(wa[k], wb[k], ww[k])).collect();
        Ok(Self {
            pool,
            model: model.clone(),
            base_m: m,
            base_w: Arc::new(w),
            extra: Vec::new(),
            wa,
            wb,
            ww,
            preds,
        })
    }

    pub fn model(&self) -> &KrigingModel {
        &self.model
    }

    pub fn pool(&self) -> &'p SamplePool {
        self.pool
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn predictions(&self) -> &[MarginalPrediction] {
        &self.preds
    }

    /// Prior correlation `R(x_i, x_j; theta)` between two candidates.
    #[inline]
    pub fn prior_correlation(&self, i: usize, j: usize) -> f64 {
        kernel(self.pool.point(i), self.pool.point(j), &self.model.theta)
    }

    /// Posterior covariance between candidates `i` and `j`.
    #[inline]
    pub fn pairwise_cov(&self, i: usize, j: usize) -> f64 {
        self.pairwise_cov_with_prior(i, j, self.prior_correlation(i, j))
    }

    #[inline]
    pub(crate) fn pairwise_cov_with_prior(&self, i: usize, j: usize, prior: f64) -> f64 {
        let m = self.base_m;
        let wi = &self.base_w[i * m..(i + 1) * m];
        let wj = &self.base_w[j * m..(j + 1) * m];
        let mut ww = linalg::dot(wi, wj);
        for e in &self.extra {
            ww += e[i] * e[j];
        }
        let ui = self.wb[i] - 1.0;
        let uj = self.wb[j] - 1.0;
        self.model.sigma2 * (prior + ui * uj / self.model.c - ww)
    }

    /// Prior correlations of `rows` against `cols`, `out[r * cols.len() + c]`.
    /// Values certainly below `r_min` are written as 0 without evaluating
    /// the exponential.
    pub(crate) fn prior_tile(&self, rows: &[usize], cols: &[usize], r_min: f64, out: &mut [f64]) {
        let cut = if r_min > 0.0 { -r_min.ln() + 1e-9 } else { f64::INFINITY };
        let theta = &self.model.theta;
        let nc = cols.len();
        for (r, &i) in rows.iter().enumerate() {
            let xi = self.pool.point(i);
            for (o, &j) in out[r * nc..(r + 1) * nc].iter_mut().zip(cols) {
                let mut s = 0.0;
                for ((a, b), t) in xi.iter().zip(self.pool.point(j)).zip(theta) {
                    let d = a - b;
                    s += t * d * d;
                }
                *o = if s > cut { 0.0 } else { (-s).exp() };
            }
        }
    }

    /// Posterior covariances of `rows` against `cols` given their prior
    /// correlations `prior[r * cols.len() + c]`; written to `out` in the same
    /// layout. `pack` is scratch space.
    pub(crate) fn cov_tile(&self, rows: &[usize], cols: &[usize], prior: &[f64], out: &mut [f64], pack: &mut Vec<f64>) {
        let nc = cols.len();
        linalg::gram_tile(&self.base_w, self.base_m, rows, cols, out, pack);
        for e in &self.extra {
            for (r, &i) in rows.iter().enumerate() {
                let ei = e[i];
                for (o, &j) in out[r * nc..(r + 1) * nc].iter_mut().zip(cols) {
                    *o += ei * e[j];
                }
            }
        }
        let (s2, c) = (self.model.sigma2, self.model.c);
        for (r, &i) in rows.iter().enumerate() {
            let ui = (self.wb[i] - 1.0) / c;
            let span = r * nc..(r + 1) * nc;
            for ((o, &j), p) in out[span.clone()].iter_mut().zip(cols).zip(&prior[span]) {
                *o = s2 * (p + ui * (self.wb[j] - 1.0) - *o);
            }
        }
    }

    /// Posterior after observing `y` at `x_new` (theta fixed).
    pub fn condition(&self, x_new: &[f64], y: f64, policy: &JitterPolicy) -> Result<PoolPosterior<'p>> {
        let (model, ext) = self.model.extend(x_new, y, policy)?;
        let Some(ext) = ext else {
            return PoolPosterior::new(&model, self.pool);
        };
        let m_old = self.model.doe.len();
        let a_last = model.a[m_old];
        let b_last = model.b[m_old];
        let n = self.len();
        let mut e = vec![0.0; n];
        let mut tmp = vec![0.0; m_old];
        for (k, ek) in e.iter_mut().enumerate() {
            let x = self.pool.point(k);
            let m = self.base_m;
            tmp[..m].copy_from_slice(&self.base_w[k * m..(k + 1) * m]);
            for (t, extra) in self.extra.iter().enumerate() {
                tmp[m + t] = extra[k];
            }
            *ek = (kernel(x, x_new, &model.theta) - linalg::dot(&ext.l, &tmp)) / ext.d;
        }
        let mut next = PoolPosterior {
            pool: self.pool,
            model,
            base_m: self.base_m,
            base_w: Arc::clone(&self.base_w),
            extra: self.extra.clone(),
            wa: self.wa.clone(),
            wb: self.wb.clone(),
            ww: self.ww.clone(),
            preds: Vec::new(),
        };
        for k in 0..n {
            next.wa[k] += e[k] * a_last;
            next.wb[k] += e[k] * b_last;
            next.ww[k] += e[k] * e[k];
        }
        next.extra.push(Arc::new(e));
        next.preds = (0..n).map(|k| next.model.prediction_from(next.wa[k], next.wb[k], next.ww[k])).collect();
        Ok(next)
    }
}

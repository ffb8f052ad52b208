//! Multi-point enrichment with fantasized responses.
//!
//! A batch is built one point at a time. After each pick the surrogate is
//! conditioned on hypothetical responses at that point (theta fixed) and the
//! next pick is made on the scores expected after that enrichment. The
//! expectation over the newest response is taken with the loss-specific
//! estimator (mean, median or mode); the posterior carried to the next step
//! is conditioned on the predicted mean.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bernoulli::{covariance_sums, shared_covariance_sums, BernoulliField, IndicatorCovariance, PairPassOptions};
use crate::kriging::{JitterPolicy, MarginalPrediction, PoolPosterior};
use crate::learning::{score, select, ScoreVector, ScoringInput, StrategyKind};
use crate::normal::pdf_with;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FantasyKind {
    Mmse,
    Mape,
    Mmae,
}

impl std::str::FromStr for FantasyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mmse" => Ok(Self::Mmse),
            "mape" => Ok(Self::Mape),
            "mmae" => Ok(Self::Mmae),
            _ => Err(Error::Config(format!("unknown fantasy policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FantasyPolicy {
    pub kind: FantasyKind,
    pub quad_points: usize,
    pub mmae_samples: usize,
}

impl Default for FantasyPolicy {
    fn default() -> Self {
        Self { kind: FantasyKind::Mmse, quad_points: 3, mmae_samples: 15 }
    }
}

impl FantasyPolicy {
    pub fn new(kind: FantasyKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.quad_points != 3 {
            return Err(Error::Config("quad_points must be 3".into()));
        }
        if self.mmae_samples < 3 || self.mmae_samples % 2 == 0 {
            return Err(Error::Config("mmae_samples must be odd and at least 3".into()));
        }
        Ok(())
    }
}

const GL3_T: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Three-point Gauss-Legendre rule on `[mu - 3 sigma, mu + 3 sigma]` as
/// `(node, weight)` pairs; a single unit node at `mu` when `sigma = 0`.
pub fn quad_nodes(mu: f64, sigma: f64) -> Vec<(f64, f64)> {
    if !(sigma > 0.0) {
        return vec![(mu, 1.0)];
    }
    let half = 3.0 * sigma;
    GL3_T.iter().zip(GL3_W).map(|(t, w)| (mu + half * t, w * half)).collect()
}

/// Shared inputs of the scoring steps within a batch.
#[derive(Clone, Copy)]
pub struct BatchContext<'a> {
    pub densities: Option<&'a [f64]>,
    pub r_min: f64,
    pub pair: PairPassOptions,
    pub jitter: JitterPolicy,
    /// Seed and iteration index for the MMAE sampling stream.
    pub seed: u64,
    pub iteration: u64,
}

impl Default for BatchContext<'_> {
    fn default() -> Self {
        Self {
            densities: None,
            r_min: crate::bernoulli::DEFAULT_R_MIN,
            pair: PairPassOptions::default(),
            jitter: JitterPolicy::default(),
            seed: 0,
            iteration: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentBatch {
    pub indices: Vec<usize>,
    /// Score of each pick at the time it was selected.
    pub scores: Vec<f64>,
    /// Response the surrogate was conditioned on after each pick but the last.
    pub fantasies: Vec<f64>,
    pub n_para: usize,
}

/// Per-candidate quantities combined across fantasies.
enum Components {
    Scores(Vec<f64>),
    Wco { rows: Vec<f64>, diag: Vec<f64> },
}

fn components(post: &PoolPosterior<'_>, strategy: StrategyKind, ctx: &BatchContext<'_>) -> Result<Components> {
    if strategy == StrategyKind::OptWco {
        let field = BernoulliField::new(post, ctx.r_min);
        let sums = covariance_sums(&field, &ctx.pair);
        let diag = (0..field.len()).map(|i| field.diag(i)).collect();
        return Ok(Components::Wco { rows: sums.rows, diag });
    }
    let input = ScoringInput { preds: post.predictions(), densities: ctx.densities, dim: post.model().dim(), indicator: None };
    Ok(Components::Scores(score(strategy, &input)?.scores))
}

/// Scores of the base posterior (no fantasies).
pub fn base_scores(post: &PoolPosterior<'_>, strategy: StrategyKind, ctx: &BatchContext<'_>) -> Result<ScoreVector> {
    Ok(into_scores(components(post, strategy, ctx)?, strategy))
}

fn into_scores(c: Components, strategy: StrategyKind) -> ScoreVector {
    let scores = match c {
        Components::Scores(s) => s,
        Components::Wco { rows, diag } => rows.iter().zip(&diag).map(|(r, d)| 2.0 * r - d).collect(),
    };
    ScoreVector { scores, strategy }
}

fn weighted(parts: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    (0..parts[0].len())
        .map(|i| parts.iter().zip(w).map(|(p, wk)| wk * p[i]).sum::<f64>() / total)
        .collect()
}

fn median(parts: &[Vec<f64>]) -> Vec<f64> {
    let mut buf = vec![0.0; parts.len()];
    (0..parts[0].len())
        .map(|i| {
            for (b, p) in buf.iter_mut().zip(parts) {
                *b = p[i];
            }
            buf.sort_by(f64::total_cmp);
            buf[buf.len() / 2]
        })
        .collect()
}

enum Combine<'w> {
    Weighted(&'w [f64]),
    Median,
}

fn combine(cs: Vec<Components>, how: Combine<'_>) -> Components {
    let apply = |parts: &[Vec<f64>]| match how {
        Combine::Weighted(w) => weighted(parts, w),
        Combine::Median => median(parts),
    };
    if matches!(cs[0], Components::Scores(_)) {
        let parts: Vec<Vec<f64>> = cs
            .into_iter()
            .map(|c| match c {
                Components::Scores(s) => s,
                Components::Wco { .. } => unreachable!("mixed components"),
            })
            .collect();
        Components::Scores(apply(&parts))
    } else {
        let (rows, diags): (Vec<Vec<f64>>, Vec<Vec<f64>>) = cs
            .into_iter()
            .map(|c| match c {
                Components::Wco { rows, diag } => (rows, diag),
                Components::Scores(_) => unreachable!("mixed components"),
            })
            .unzip();
        Components::Wco { rows: apply(&rows), diag: apply(&diags) }
    }
}

/// Fantasy responses and their combination weights for a pick with
/// prediction `(mu, sigma)`.
fn fantasy_values(mu: f64, sigma: f64, policy: &FantasyPolicy, ctx: &BatchContext<'_>, step: u64) -> (Vec<f64>, Option<Vec<f64>>) {
    match policy.kind {
        FantasyKind::Mape => (vec![mu], Some(vec![1.0])),
        FantasyKind::Mmse => {
            let nodes = quad_nodes(mu, sigma);
            let w = nodes
                .iter()
                .map(|(y, w)| if sigma > 0.0 { w * pdf_with(*y, mu, sigma) } else { *w })
                .collect();
            (nodes.into_iter().map(|(y, _)| y).collect(), Some(w))
        }
        FantasyKind::Mmae => {
            let mut r = rng::substream(ctx.seed, rng::streams::FANTASY, ctx.iteration.wrapping_mul(1 << 16).wrapping_add(step));
            let ys = (0..policy.mmae_samples)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    mu + sigma * z
                })
                .collect();
            (ys, None)
        }
    }
}

/// Expected scores after enriching candidate `pick` of the posterior pool,
/// together with the posterior conditioned on the predicted mean there.
fn fantasize<'p>(
    post: &PoolPosterior<'p>,
    pick: usize,
    policy: &FantasyPolicy,
    strategy: StrategyKind,
    ctx: &BatchContext<'_>,
    step: u64,
) -> Result<(Components, PoolPosterior<'p>, f64)> {
    let pred = post.predictions()[pick];
    let x = post.pool().point(pick);
    let (mu, sigma) = (pred.mean, pred.std());
    let mode = post.condition(x, mu, &ctx.jitter)?;
    let (ys, weights) = fantasy_values(mu, sigma, policy, ctx, step);
    if strategy == StrategyKind::OptWco && ys.len() > 1 {
        // one pair pass for all fantasies: only means and the variance scale differ
        let others: Vec<PoolPosterior<'p>> = ys
            .iter()
            .filter(|y| **y != mu)
            .map(|y| post.condition(x, *y, &ctx.jitter))
            .collect::<Result<_>>()?;
        let mut it = others.iter();
        let sets: Vec<&[MarginalPrediction]> = ys
            .iter()
            .map(|y| if *y == mu { mode.predictions() } else { it.next().expect("conditioned").predictions() })
            .collect();
        let parts: Vec<Components> = shared_covariance_sums(&mode, &sets, ctx.r_min, &ctx.pair)?
            .into_iter()
            .map(|(sums, diag)| Components::Wco { rows: sums.rows, diag })
            .collect();
        let combined = match &weights {
            Some(w) => combine(parts, Combine::Weighted(w)),
            None => combine(parts, Combine::Median),
        };
        return Ok((combined, mode, mu));
    }
    let run = |y: &f64| -> Result<Components> {
        if *y == mu {
            components(&mode, strategy, ctx)
        } else {
            components(&post.condition(x, *y, &ctx.jitter)?, strategy, ctx)
        }
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Components> = {
        use rayon::prelude::*;
        ys.par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Components> = ys.iter().map(run).collect::<Result<_>>()?;
    let combined = match &weights {
        Some(w) => combine(parts, Combine::Weighted(w)),
        None => combine(parts, Combine::Median),
    };
    Ok((combined, mode, mu))
}

/// Scores expected after enriching `x_star`, which must be a pool candidate.
pub fn fantasy_score(
    post: &PoolPosterior<'_>,
    x_star: usize,
    policy: &FantasyPolicy,
    strategy: StrategyKind,
    ctx: &BatchContext<'_>,
) -> Result<ScoreVector> {
    let (c, _, _) = fantasize(post, x_star, policy, strategy, ctx, 0)?;
    Ok(into_scores(c, strategy))
}

/// Select `n_para` distinct candidates.
///
/// `first` are the scores of `post` itself (typically already computed by
/// the caller); `excluded` marks candidates that may never be chosen.
pub fn select_batch(
    post: &PoolPosterior<'_>,
    first: ScoreVector,
    excluded: &[bool],
    n_para: usize,
    policy: &FantasyPolicy,
    ctx: &BatchContext<'_>,
) -> Result<EnrichmentBatch> {
    if n_para == 0 {
        return Err(Error::Config("n_para must be at least 1".into()));
    }
    let strategy = first.strategy;
    let available = excluded.iter().filter(|e| !**e).count();
    if available < n_para {
        return Err(Error::InsufficientCandidates { needed: n_para, available });
    }
    let mut mask = excluded.to_vec();
    let mut batch = EnrichmentBatch { indices: Vec::with_capacity(n_para), scores: Vec::new(), fantasies: Vec::new(), n_para };
    let mut scores = first;
    let mut current = post.clone();
    for step in 0..n_para {
        let pick = select(&scores, &mask)?;
        mask[pick] = true;
        batch.indices.push(pick);
        batch.scores.push(scores.scores[pick]);
        if step + 1 == n_para {
            break;
        }
        let (c, next, y) = fantasize(&current, pick, policy, strategy, ctx, step as u64)?;
        scores = into_scores(c, strategy);
        batch.fantasies.push(y);
        current = next;
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kriging::{DesignOfExperiment, FitOptions, KrigingModel};
    use crate::rv::SamplePool;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadrature_exact_for_quintics() {
        let (mu, sigma) = (0.7, 1.3);
        let nodes = quad_nodes(mu, sigma);
        let (a, b) = (mu - 3.0 * sigma, mu + 3.0 * sigma);
        let coef = [0.3, -1.2, 0.5, 2.0, -0.7, 0.11];
        let poly = |y: f64| coef.iter().rev().fold(0.0, |acc, c| acc * y + c);
        let anti = |y: f64| coef.iter().enumerate().map(|(k, c)| c * y.powi(k as i32 + 1) / (k as f64 + 1.0)).sum::<f64>();
        let exact = anti(b) - anti(a);
        let quad: f64 = nodes.iter().map(|(y, w)| w * poly(*y)).sum();
        assert!((quad - exact).abs() <= 1e-10 * exact.abs());
        assert_eq!(quad_nodes(2.0, 0.0), vec![(2.0, 1.0)]);
    }

    #[test]
    fn policy_validation() {
        assert!(FantasyPolicy::default().validate().is_ok());
        assert!(FantasyPolicy { mmae_samples: 4, ..Default::default() }.validate().is_err());
        assert!(FantasyPolicy { quad_points: 5, ..Default::default() }.validate().is_err());
        assert_eq!("MMSE".parse::<FantasyKind>().unwrap(), FantasyKind::Mmse);
    }

    fn setup() -> (KrigingModel, SamplePool) {
        let xs = [-2.0, -1.1, -0.3, 0.4, 1.2, 2.1];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 - x * x / 2.0 + 0.2 * x).collect();
        let model = KrigingModel::fit(DesignOfExperiment::new(&rows, ys).unwrap(), &FitOptions::default()).unwrap();
        let pool_rows: Vec<[f64; 1]> = (0..40).map(|i| [-2.5 + 5.0 * i as f64 / 39.0 + 0.013]).collect();
        (model, SamplePool::from_rows(&pool_rows).unwrap())
    }

    #[test]
    fn batch_degenerates_to_single_pick() {
        let (model, pool) = setup();
        let post = PoolPosterior::new(&model, &pool).unwrap();
        let ctx = BatchContext::default();
        let mask = vec![false; pool.len()];
        for strategy in [StrategyKind::U, StrategyKind::OptNco, StrategyKind::OptWco, StrategyKind::Eff] {
            let first = base_scores(&post, strategy, &ctx).unwrap();
            let single = select(&first, &mask).unwrap();
            for kind in [FantasyKind::Mmse, FantasyKind::Mape, FantasyKind::Mmae] {
                let b = select_batch(&post, first.clone(), &mask, 1, &FantasyPolicy::new(kind), &ctx).unwrap();
                assert_eq!(b.indices, vec![single]);
            }
        }
    }

    #[test]
    fn batch_is_distinct() {
        let (model, pool) = setup();
        let post = PoolPosterior::new(&model, &pool).unwrap();
        let ctx = BatchContext::default();
        let mask = vec![false; pool.len()];
        for kind in [FantasyKind::Mmse, FantasyKind::Mape, FantasyKind::Mmae] {
            let first = base_scores(&post, StrategyKind::OptWco, &ctx).unwrap();
            let b = select_batch(&post, first, &mask, 5, &FantasyPolicy::new(kind), &ctx).unwrap();
            let mut idx = b.indices.clone();
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 5);
        }
        let first = base_scores(&post, StrategyKind::U, &ctx).unwrap();
        let mut few = vec![true; pool.len()];
        few[3] = false;
        assert!(matches!(
            select_batch(&post, first, &few, 2, &FantasyPolicy::default(), &ctx),
            Err(Error::InsufficientCandidates { needed: 2, available: 1 })
        ));
    }

    #[test]
    fn mmse_constant_scores_unchanged() {
        let parts = vec![vec![1.5, -2.0], vec![1.5, -2.0], vec![1.5, -2.0]];
        let nodes = quad_nodes(0.3, 0.9);
        let w: Vec<f64> = nodes.iter().map(|(y, w)| w * pdf_with(*y, 0.3, 0.9)).collect();
        let out = weighted(&parts, &w);
        assert_abs_diff_eq!(out[0], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn mape_conditions_on_mean() {
        let (model, pool) = setup();
        let post = PoolPosterior::new(&model, &pool).unwrap();
        let ctx = BatchContext::default();
        let pick = 17;
        let got = fantasy_score(&post, pick, &FantasyPolicy::new(FantasyKind::Mape), StrategyKind::OptNco, &ctx).unwrap();
        let mu = post.predictions()[pick].mean;
        let refit = model.refit_with(pool.point(pick), mu, false, &FitOptions::default()).unwrap();
        let preds = refit.predict_marginal(&pool).unwrap();
        for (g, p) in got.scores.iter().zip(&preds) {
            assert_abs_diff_eq!(*g, crate::bernoulli::sigma_b2(p), epsilon = 1e-9);
        }
    }
}

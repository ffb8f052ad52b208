//! The adaptive loop: fit, estimate, select, evaluate, until the estimator
//! is precise enough.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::bench::{LimitState, LimitStateKind};
use crate::bernoulli::{covariance_sums, sigma_b2, BernoulliField, PairPassOptions, DEFAULT_R_MIN};
use crate::enrich::{select_batch, BatchContext, FantasyPolicy};
use crate::estimator::{
    pf_probabilistic, stop_check, var_mc_from_sums, var_mi, ClassificationMode, EstimatorStats, VarianceModel,
};
use crate::kriging::{DesignOfExperiment, FitOptions, JitterPolicy, KrigingModel, MleOptions, PoolPosterior, ThetaBounds};
use crate::learning::{eff_value, exclusion_mask, score, u_value, ScoringInput, StrategyKind};
use crate::rng::{self, derive_seed};
use crate::rv::{joint_pdf, lhs_sample, mc_sample, PoolOrigin, RandomVariableSpec, SamplePool};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceChoice {
    /// `mc` for OPT_WCO, `mi` for every other strategy.
    #[default]
    Auto,
    Mi,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    #[default]
    Lhs,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub limit_state: LimitStateKind,
    /// Input distribution; independent standard normals when absent.
    pub variables: Option<RandomVariableSpec>,
    pub pool_size: usize,
    pub pool_kind: PoolKind,
    pub initial_doe: usize,
    pub strategy: StrategyKind,
    pub policy: FantasyPolicy,
    pub n_para: usize,
    pub threshold: f64,
    /// Use the learning function's own stopping rule where one exists.
    pub classic_stop: bool,
    pub variance_model: VarianceChoice,
    pub theta_lower: f64,
    pub theta_upper: f64,
    pub mle: MleOptions,
    /// A full multi-start search is rerun once the design has grown by this
    /// factor since the last one; in between, a warm-started local search.
    pub mle_full_growth: f64,
    pub r_min: f64,
    pub prune_tol: f64,
    /// Largest pool for which unscreened pair passes are allowed.
    pub wco_exact_cap: usize,
    /// Enrichment iterations; `ceil(2000 / n_para)` when absent.
    pub max_iterations: Option<usize>,
    pub seed: u64,
    /// Reference failure probability for the relative error.
    pub reference_pf: Option<f64>,
    /// Classify the pool with the true limit state (not counted as calls).
    pub pool_truth: Option<bool>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            limit_state: LimitStateKind::Rastrigin,
            variables: None,
            pool_size: 10_000,
            pool_kind: PoolKind::Lhs,
            initial_doe: 12,
            strategy: StrategyKind::U,
            policy: FantasyPolicy::default(),
            n_para: 1,
            threshold: 1e-3,
            classic_stop: false,
            variance_model: VarianceChoice::Auto,
            theta_lower: ThetaBounds::DEFAULT_LOWER,
            theta_upper: ThetaBounds::DEFAULT_UPPER,
            mle: MleOptions::default(),
            mle_full_growth: 1.25,
            r_min: DEFAULT_R_MIN,
            prune_tol: PairPassOptions::default().prune_tol,
            wco_exact_cap: 4000,
            max_iterations: None,
            seed: 0,
            reference_pf: None,
            pool_truth: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.pool_size == 0 || self.n_para == 0 {
            return bad("pool_size and n_para must be at least 1");
        }
        if self.initial_doe < 2 {
            return bad("initial_doe must be at least 2");
        }
        if self.initial_doe > self.pool_size {
            return bad("initial_doe exceeds pool_size");
        }
        if !(self.threshold > 0.0) {
            return bad("threshold must be positive");
        }
        if !(self.theta_lower > 0.0 && self.theta_lower <= self.theta_upper && self.theta_upper.is_finite()) {
            return bad("theta bounds must satisfy 0 < theta_lower <= theta_upper");
        }
        if !(self.mle_full_growth >= 1.0) {
            return bad("mle_full_growth must be at least 1");
        }
        if !(self.r_min >= 0.0 && self.prune_tol >= 0.0) {
            return bad("r_min and prune_tol must be non-negative");
        }
        if self.max_iterations == Some(0) {
            return bad("max_iterations must be at least 1");
        }
        if let Some(v) = &self.variables {
            if v.dim() != self.limit_state.dim() {
                return Err(Error::DimensionMismatch { expected: self.limit_state.dim(), got: v.dim() });
            }
        }
        self.policy.validate()
    }

    pub fn variables(&self) -> Result<RandomVariableSpec> {
        match &self.variables {
            Some(v) => Ok(v.clone()),
            None => RandomVariableSpec::standard_normal(self.limit_state.dim()),
        }
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations.unwrap_or_else(|| 2000usize.div_ceil(self.n_para))
    }

    pub fn variance_model(&self) -> VarianceModel {
        match self.variance_model {
            VarianceChoice::Mi => VarianceModel::Mi,
            VarianceChoice::Mc => VarianceModel::Mc,
            VarianceChoice::Auto if self.strategy == StrategyKind::OptWco => VarianceModel::Mc,
            VarianceChoice::Auto => VarianceModel::Mi,
        }
    }

    /// Screening threshold actually used: unscreened passes are only
    /// allowed up to `wco_exact_cap` candidates.
    pub fn effective_r_min(&self) -> f64 {
        if self.r_min == 0.0 && self.pool_size > self.wco_exact_cap {
            DEFAULT_R_MIN
        } else {
            self.r_min
        }
    }

    pub fn reference_pf(&self) -> Option<f64> {
        self.reference_pf.or_else(|| if self.variables.is_none() { self.limit_state.reference_pf() } else { None })
    }

    fn fit_options(&self, dim: usize, warm: Option<Vec<f64>>, full: bool) -> FitOptions {
        let mut mle = self.mle.clone();
        mle.warm_start = warm;
        if !full {
            mle.starts = 0;
        }
        FitOptions {
            bounds: Some(ThetaBounds::uniform(dim, self.theta_lower, self.theta_upper)),
            jitter: JitterPolicy::default(),
            mle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCause {
    EstimatorCov,
    ClassicCriterion,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Real limit-state calls behind the surrogate of this iteration.
    pub n_call: usize,
    pub pf_hat: f64,
    pub variance: f64,
    pub cov_estimator: f64,
    pub cov_mcs: f64,
    /// Pool indices chosen for enrichment (empty on the final iteration).
    pub selected: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    /// Learning-function value of the first pick.
    pub score: Option<f64>,
    pub theta: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: StrategyKind,
    pub n_para: usize,
    pub seed: u64,
    pub variance_model: VarianceModel,
    pub records: Vec<IterationRecord>,
    pub final_pf: f64,
    pub final_variance: f64,
    pub n_call: usize,
    /// Enrichment iterations performed.
    pub iterations: usize,
    pub stop_cause: StopCause,
    pub reference_pf: Option<f64>,
    /// Relative error against `reference_pf`.
    pub eps: Option<f64>,
    /// Failure fraction of the pool under the true limit state.
    pub pool_pf: Option<f64>,
    /// Relative error against `pool_pf`.
    pub eps_pool: Option<f64>,
    pub cov_mcs: f64,
    pub pool_warning: bool,
}

/// Report plus the final surrogate and its pool.
pub struct RunOutcome {
    pub report: RunReport,
    pub model: KrigingModel,
    pub pool: SamplePool,
}

fn now() -> Option<std::time::Instant> {
    #[cfg(not(target_arch = "wasm32"))]
    {
        Some(std::time::Instant::now())
    }
    #[cfg(target_arch = "wasm32")]
    {
        None
    }
}

fn elapsed(t: Option<std::time::Instant>) -> f64 {
    t.map(|t| t.elapsed().as_secs_f64()).unwrap_or(0.0)
}

fn relative_error(reference: f64, estimate: f64) -> Option<f64> {
    (reference > 0.0).then(|| (reference - estimate).abs() / reference)
}

/// Execute the adaptive loop for `config`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let mut ls = LimitState::new(config.limit_state.clone())?;
    run_with(config, &mut ls)
}

/// [`run`] with a caller-provided limit state.
pub fn run_with(config: &RunConfig, ls: &mut LimitState) -> Result<RunOutcome> {
    config.validate()?;
    let spec = config.variables()?;
    let d = spec.dim();
    if d != ls.dim() {
        return Err(Error::DimensionMismatch { expected: ls.dim(), got: d });
    }
    let pool = match config.pool_kind {
        PoolKind::Lhs => lhs_sample(&spec, config.pool_size, derive_seed(config.seed, rng::streams::POOL))?,
        PoolKind::MonteCarlo => mc_sample(&spec, config.pool_size, derive_seed(config.seed, rng::streams::POOL))?,
    };
    debug_assert!(matches!(pool.origin(), PoolOrigin::Lhs | PoolOrigin::MonteCarlo));
    let n = pool.len();
    let densities: Option<Vec<f64>> =
        config.strategy.uses_density().then(|| pool.iter().map(|x| joint_pdf(&spec, x)).collect());

    let pool_truth = config.pool_truth.unwrap_or(!config.limit_state.is_external());
    let pool_pf = if pool_truth {
        let rows: Vec<&[f64]> = pool.iter().collect();
        let g = ls.evaluate_uncounted(&rows)?;
        Some(g.iter().filter(|v| **v <= 0.0).count() as f64 / n as f64)
    } else {
        None
    };

    // initial design: random subset of the pool
    let mut r = rng::stream(config.seed, rng::streams::INITIAL_DOE);
    let mut picked: Vec<usize> = sample(&mut r, n, config.initial_doe).into_vec();
    picked.sort_unstable();
    let rows: Vec<&[f64]> = picked.iter().map(|&i| pool.point(i)).collect();
    let ys = ls.evaluate(&rows)?;
    let mut doe = DesignOfExperiment::new(&rows, ys)?;

    let variance_model = config.variance_model();
    let pair = PairPassOptions { prune_tol: config.prune_tol };
    let r_min = config.effective_r_min();
    let max_iter = config.max_iterations();
    let mut records = Vec::new();
    let mut theta: Option<Vec<f64>> = None;
    let mut last_full = 0usize;
    let mut iteration = 0usize;

    let (stop_cause, model) = loop {
        let t0 = now();
        let full = theta.is_none() || doe.len() as f64 >= last_full as f64 * config.mle_full_growth;
        if full {
            last_full = doe.len();
        }
        let model = KrigingModel::fit(doe.clone(), &config.fit_options(d, theta.clone(), full))?;
        theta = Some(model.theta().to_vec());
        let post = PoolPosterior::new(&model, &pool)?;
        let preds = post.predictions();
        let pf = pf_probabilistic(preds)?;

        let needs_pairs = variance_model == VarianceModel::Mc || config.strategy == StrategyKind::OptWco;
        let field = needs_pairs.then(|| BernoulliField::new(&post, r_min));
        let sums = field.as_ref().map(|f| covariance_sums(f, &pair));
        let variance = match variance_model {
            VarianceModel::Mi => var_mi(preds)?,
            VarianceModel::Mc => var_mc_from_sums(sums.as_ref().expect("pair pass")),
        };
        let stats = EstimatorStats::new(pf, variance, n, ClassificationMode::Probabilistic, variance_model);
        let excluded = exclusion_mask(&pool, preds, &doe);

        let mut record = IterationRecord {
            iteration,
            n_call: doe.len(),
            pf_hat: pf,
            variance,
            cov_estimator: stats.cov_estimator,
            cov_mcs: stats.cov_mcs,
            selected: Vec::new(),
            points: Vec::new(),
            score: None,
            theta: model.theta().to_vec(),
            wall_time_s: 0.0,
        };

        let classic = config.classic_stop && classic_stop(config.strategy, preds, &excluded);
        let cause = if config.classic_stop && has_classic_rule(config.strategy) {
            classic.then_some(StopCause::ClassicCriterion)
        } else {
            stop_check(pf, variance, config.threshold).then_some(StopCause::EstimatorCov)
        };
        let cause = cause.or_else(|| (iteration >= max_iter).then_some(StopCause::MaxIterations));
        if let Some(cause) = cause {
            record.wall_time_s = elapsed(t0);
            records.push(record);
            break (cause, model);
        }

        let input = ScoringInput {
            preds,
            densities: densities.as_deref(),
            dim: d,
            indicator: match (&field, &sums) {
                (Some(f), Some(s)) => Some((f as &dyn crate::bernoulli::IndicatorCovariance, s)),
                _ => None,
            },
        };
        let first = score(config.strategy, &input)?;
        let ctx = BatchContext {
            densities: densities.as_deref(),
            r_min,
            pair,
            jitter: JitterPolicy::default(),
            seed: config.seed,
            iteration: iteration as u64,
        };
        let batch = select_batch(&post, first, &excluded, config.n_para, &config.policy, &ctx)?;
        let xs: Vec<&[f64]> = batch.indices.iter().map(|&i| pool.point(i)).collect();
        let ys = ls.evaluate(&xs)?;
        for (x, y) in xs.iter().zip(&ys) {
            doe = doe.with_point(x, *y)?;
        }
        record.selected = batch.indices.clone();
        record.points = xs.iter().map(|x| x.to_vec()).collect();
        record.score = batch.scores.first().copied();
        record.wall_time_s = elapsed(t0);
        records.push(record);
        iteration += 1;
    };

    let last = records.last().expect("at least one record");
    let reference_pf = config.reference_pf();
    let report = RunReport {
        strategy: config.strategy,
        n_para: config.n_para,
        seed: config.seed,
        variance_model,
        final_pf: last.pf_hat,
        final_variance: last.variance,
        n_call: last.n_call,
        iterations: iteration,
        stop_cause,
        reference_pf,
        eps: reference_pf.and_then(|r| relative_error(r, last.pf_hat)),
        pool_pf,
        eps_pool: pool_pf.and_then(|r| relative_error(r, last.pf_hat)),
        cov_mcs: last.cov_mcs,
        pool_warning: last.cov_mcs > crate::estimator::COV_PF_WARNING,
        records,
    };
    debug_assert_eq!(report.n_call as u64, ls.calls());
    Ok(RunOutcome { report, model, pool })
}

fn has_classic_rule(kind: StrategyKind) -> bool {
    matches!(kind, StrategyKind::U | StrategyKind::Eff)
}

/// `min U >= 2` or `max EFF <= 0.001` over selectable candidates.
fn classic_stop(kind: StrategyKind, preds: &[crate::kriging::MarginalPrediction], excluded: &[bool]) -> bool {
    let live = preds.iter().zip(excluded).filter(|(_, e)| !**e).map(|(p, _)| p);
    match kind {
        StrategyKind::U => live.map(|p| u_value(p.mean, p.std())).fold(f64::INFINITY, f64::min) >= 2.0,
        StrategyKind::Eff => live.map(|p| eff_value(p.mean, p.std())).fold(f64::NEG_INFINITY, f64::max) <= 0.001,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub mean_n_call: f64,
    pub cov_n_call: f64,
    pub mean_eps: f64,
    pub cov_eps: f64,
    pub runs: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Per configuration, the reports of the successful replications.
    #[serde(skip)]
    pub reports: Vec<Vec<RunReport>>,
}

/// Mean and coefficient of variation (sample standard deviation over mean).
pub fn mean_cov(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, if mean != 0.0 { var.sqrt() / mean.abs() } else if var == 0.0 { 0.0 } else { f64::INFINITY })
}

/// Seed of replication `r` for base seed `seed`; shared by every configuration.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, r as u64)
}

/// Run every configuration `replications` times with paired seeds.
pub fn compare(configs: &[(String, RunConfig)], replications: usize) -> Result<Comparison> {
    if replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..replications).map(move |r| (c, r))).collect();
    let job = |&(c, r): &(usize, usize)| {
        let mut cfg = configs[c].1.clone();
        cfg.seed = replication_seed(configs[c].1.seed, r);
        run(&cfg).map(|o| o.report)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<RunReport>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(job).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<RunReport>> = jobs.iter().map(job).collect();

    let mut grouped: BTreeMap<usize, (Vec<RunReport>, Vec<String>)> = BTreeMap::new();
    for ((c, r), res) in jobs.iter().zip(results) {
        let entry = grouped.entry(*c).or_default();
        match res {
            Ok(rep) => entry.0.push(rep),
            Err(e) => entry.1.push(format!("replication {r}: {e}")),
        }
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (c, (label, _)) in configs.iter().enumerate() {
        let (reps, failures) = grouped.remove(&c).unwrap_or_default();
        let calls: Vec<f64> = reps.iter().map(|r| r.n_call as f64).collect();
        let eps: Vec<f64> = reps.iter().filter_map(|r| r.eps).collect();
        let (mean_n_call, cov_n_call) = mean_cov(&calls);
        let (mean_eps, cov_eps) = mean_cov(&eps);
        rows.push(ComparisonRow { label: label.clone(), mean_n_call, cov_n_call, mean_eps, cov_eps, runs: reps.len(), failures });
        reports.push(reps);
    }
    Ok(Comparison { rows, reports })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub x1: f64,
    pub x2: f64,
    pub mu: f64,
    pub sigma: f64,
    pub sigma_b2: f64,
}

/// Surrogate on a regular grid over `bounds`; `x1` varies fastest.
pub fn grid_dump(model: &KrigingModel, bounds: [(f64, f64); 2], resolution: usize) -> Result<Vec<GridRecord>> {
    if model.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: model.dim() });
    }
    if resolution < 2 {
        return Err(Error::Config("grid resolution must be at least 2".into()));
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..resolution)
            .map(|i| if i + 1 == resolution { hi } else { lo + (hi - lo) * i as f64 / (resolution - 1) as f64 })
            .collect()
    };
    let a1 = axis(bounds[0]);
    let a2 = axis(bounds[1]);
    let mut rows = Vec::with_capacity(resolution * resolution);
    for &x2 in &a2 {
        for &x1 in &a1 {
            rows.push([x1, x2]);
        }
    }
    let pool = SamplePool::from_rows(&rows)?;
    let preds = model.predict_marginal(&pool)?;
    Ok(rows
        .iter()
        .zip(&preds)
        .map(|(x, p)| GridRecord { x1: x[0], x2: x[1], mu: p.mean, sigma: p.std(), sigma_b2: sigma_b2(p) })
        .collect())
}

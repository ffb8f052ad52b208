//! Random variables, candidate pools and the joint density.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::normal;
use crate::rng;
use crate::{Error, Result};

/// Marginal distribution of one input variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    StandardNormal,
    Normal { mean: f64, std: f64 },
}

impl Marginal {
    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::StandardNormal => 0.0,
            Marginal::Normal { mean, .. } => mean,
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            Marginal::StandardNormal => 1.0,
            Marginal::Normal { std, .. } => std,
        }
    }

    pub fn inv_cdf(&self, p: f64) -> f64 {
        self.mean() + self.std() * normal::inv_cdf(p)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        normal::cdf((x - self.mean()) / self.std())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        normal::pdf_with(x, self.mean(), self.std())
    }
}

/// Independent marginals of the input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Marginal>", into = "Vec<Marginal>")]
pub struct RandomVariableSpec {
    marginals: Vec<Marginal>,
}

impl RandomVariableSpec {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidSpec("at least one variable is required".into()));
        }
        for (i, m) in marginals.iter().enumerate() {
            let (mean, std) = (m.mean(), m.std());
            if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "variable {i}: mean must be finite and std-dev positive (got {mean}, {std})"
                )));
            }
        }
        Ok(Self { marginals })
    }

    /// `d` independent standard normal variables.
    pub fn standard_normal(d: usize) -> Result<Self> {
        Self::new(vec![Marginal::StandardNormal; d])
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }
}

impl TryFrom<Vec<Marginal>> for RandomVariableSpec {
    type Error = Error;
    fn try_from(v: Vec<Marginal>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RandomVariableSpec> for Vec<Marginal> {
    fn from(s: RandomVariableSpec) -> Self {
        s.marginals
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOrigin {
    Lhs,
    MonteCarlo,
    /// Points supplied by the caller (grids, tests).
    Explicit,
}

/// Placement of an LHS point inside its stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LhsPlacement {
    #[default]
    Random,
    Midpoint,
}

/// An immutable `N x d` set of candidate points (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePool {
    data: Vec<f64>,
    dim: usize,
    origin: PoolOrigin,
    seed: u64,
}

impl SamplePool {
    /// Pool from explicit rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptySample)?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(Error::InvalidSpec("points must have at least one coordinate".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec("pool coordinates must be finite".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { data, dim, origin: PoolOrigin::Explicit, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> PoolOrigin {
        self.origin
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Flat row-major coordinates.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Latin hypercube sample with uniformly random placement inside each stratum.
pub fn lhs_sample(spec: &RandomVariableSpec, n: usize, seed: u64) -> Result<SamplePool> {
    lhs_sample_with(spec, n, seed, LhsPlacement::Random)
}

pub fn lhs_sample_with(
    spec: &RandomVariableSpec,
    n: usize,
    seed: u64,
    placement: LhsPlacement,
) -> Result<SamplePool> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let d = spec.dim();
    let mut rng = rng::stream(seed, rng::streams::POOL);
    let mut data = vec![0.0; n * d];
    let mut strata: Vec<usize> = (0..n).collect();
    for (j, marginal) in spec.marginals().iter().enumerate() {
        strata.shuffle(&mut rng);
        for (i, &s) in strata.iter().enumerate() {
            let offset = match placement {
                LhsPlacement::Random => Open01.sample(&mut rng),
                LhsPlacement::Midpoint => 0.5,
            };
            let u: f64 = (s as f64 + offset) / n as f64;
            data[i * d + j] = marginal.inv_cdf(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
        }
    }
    Ok(SamplePool { data, dim: d, origin: PoolOrigin::Lhs, seed })
}

/// Independent draws from the joint distribution.
pub fn mc_sample(spec: &RandomVariableSpec, n: usize, seed: u64) -> Result<SamplePool> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let d = spec.dim();
    let mut rng = rng::stream(seed, rng::streams::POOL);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for m in spec.marginals() {
            let z: f64 = rng.sample(StandardNormal);
            data.push(m.mean() + m.std() * z);
        }
    }
    Ok(SamplePool { data, dim: d, origin: PoolOrigin::MonteCarlo, seed })
}

/// Product of the marginal densities at `x`.
///
/// Panics if `x` does not have the dimension of `spec`.
pub fn joint_pdf(spec: &RandomVariableSpec, x: &[f64]) -> f64 {
    assert_eq!(x.len(), spec.dim(), "point dimension does not match the specification");
    spec.marginals().iter().zip(x).map(|(m, &v)| m.pdf(v)).product()
}

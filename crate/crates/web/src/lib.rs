//! Browser demo: indicator-correlation curves, learning-function profiles and
//! a small adaptive run on the Rastrigin limit state.
//!
//! Every export has a plain Rust counterpart so it can be tested natively.

use akrel::bench::LimitStateKind;
use akrel::bernoulli::{bvn_orthant, rho_b};
use akrel::driver::{grid_dump, run, RunConfig};
use akrel::enrich::FantasyKind;
use akrel::kriging::MarginalPrediction;
use akrel::learning::{eff_value, h_value, reif_value, u_value, StrategyKind};
use akrel::normal::cdf;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Evenly spaced points on `[lo, hi]`, endpoints included.
fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

/// Indicator correlation `rho_b` against the Gaussian correlation `rho` for
/// two candidates with standardized margins `m_i`, `m_j` (unit variance).
/// Returns `[rho_0.., rho_b_0.., phi2_0..]` (three blocks of `n`).
pub fn indicator_curve(m_i: f64, m_j: f64, n: usize) -> Vec<f64> {
    let rhos = linspace(-1.0, 1.0, n);
    let pi = MarginalPrediction::new(-m_i, 1.0);
    let pj = MarginalPrediction::new(-m_j, 1.0);
    let rb: Vec<f64> = rhos.iter().map(|&r| rho_b(&pi, &pj, r).unwrap_or(f64::NAN)).collect();
    let phi2: Vec<f64> = rhos.iter().map(|&r| bvn_orthant(m_i, m_j, r).unwrap_or(f64::NAN)).collect();
    [rhos, rb, phi2].concat()
}

/// Learning-function values over `mu` in `[-3, 3]` at fixed `sigma`.
/// Returns `[mu.., U.., EFF.., H.., REIF.., OPT_NCO..]` (six blocks of `n`).
pub fn learning_profiles(sigma: f64, n: usize) -> Vec<f64> {
    let mus = linspace(-3.0, 3.0, n);
    let mut out = mus.clone();
    let fns: [fn(f64, f64) -> f64; 4] = [u_value, eff_value, h_value, reif_value];
    for f in fns {
        out.extend(mus.iter().map(|&m| f(m, sigma)));
    }
    out.extend(mus.iter().map(|&m| if sigma > 0.0 { cdf(-m / sigma) * cdf(m / sigma) } else { 0.0 }));
    out
}

#[derive(Serialize)]
pub struct DemoResult {
    pub strategy: String,
    pub n_para: usize,
    pub pf: f64,
    pub pool_pf: Option<f64>,
    pub n_call: usize,
    pub iterations: usize,
    pub stop: String,
    pub resolution: usize,
    pub bounds: [f64; 2],
    /// Predicted mean on the grid, `x1` fastest.
    pub mu: Vec<f64>,
    /// Indicator variance on the grid.
    pub sigma_b2: Vec<f64>,
    pub doe: Vec<[f64; 2]>,
    /// Initial design size; later rows of `doe` were added by enrichment.
    pub initial: usize,
    pub history: Vec<(usize, f64)>,
}

/// Adaptive run on Rastrigin with a small pool, followed by a grid of the
/// final surrogate.
pub fn rastrigin_demo(
    strategy: &str,
    n_para: usize,
    pool_size: usize,
    seed: u64,
    max_iter: usize,
    resolution: usize,
) -> Result<DemoResult, String> {
    let strategy: StrategyKind = strategy.parse().map_err(|e: akrel::Error| e.to_string())?;
    let mut cfg = RunConfig {
        limit_state: LimitStateKind::Rastrigin,
        strategy,
        n_para,
        pool_size,
        seed,
        max_iterations: Some(max_iter),
        threshold: 5e-3,
        ..RunConfig::default()
    };
    cfg.policy.kind = FantasyKind::Mmse;
    let out = run(&cfg).map_err(|e| e.to_string())?;
    let bounds = (-5.0, 5.0);
    let grid = grid_dump(&out.model, [bounds, bounds], resolution).map_err(|e| e.to_string())?;
    let doe = out.model.doe().points().map(|p| [p[0], p[1]]).collect();
    let rep = &out.report;
    Ok(DemoResult {
        strategy: rep.strategy.name().into(),
        n_para: rep.n_para,
        pf: rep.final_pf,
        pool_pf: rep.pool_pf,
        n_call: rep.n_call,
        iterations: rep.iterations,
        stop: format!("{:?}", rep.stop_cause),
        resolution,
        bounds: [bounds.0, bounds.1],
        mu: grid.iter().map(|g| g.mu).collect(),
        sigma_b2: grid.iter().map(|g| g.sigma_b2).collect(),
        doe,
        initial: cfg.initial_doe,
        history: rep.records.iter().map(|r| (r.n_call, r.pf_hat)).collect(),
    })
}

#[wasm_bindgen(js_name = indicatorCurve)]
pub fn indicator_curve_js(m_i: f64, m_j: f64, n: usize) -> Vec<f64> {
    indicator_curve(m_i, m_j, n)
}

#[wasm_bindgen(js_name = learningProfiles)]
pub fn learning_profiles_js(sigma: f64, n: usize) -> Vec<f64> {
    learning_profiles(sigma, n)
}

/// JSON-encoded [`DemoResult`].
#[wasm_bindgen(js_name = rastriginDemo)]
pub fn rastrigin_demo_js(
    strategy: &str,
    n_para: usize,
    pool_size: usize,
    seed: u32,
    max_iter: usize,
    resolution: usize,
) -> Result<String, JsError> {
    let res = rastrigin_demo(strategy, n_para, pool_size, seed as u64, max_iter, resolution).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&res).map_err(|e| JsError::new(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints() {
        let v = linspace(-1.0, 1.0, 5);
        assert_eq!(v, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
    }
}

//! CSV and JSON writers. Floats use 17 significant digits so values round-trip.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use akrel::driver::{Comparison, GridRecord, RunConfig, RunReport};
use akrel::kriging::KrigingModel;
use serde::Serialize;

pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn join<T>(xs: &[T], sep: &str, f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(sep)
}

fn writer(path: &Path) -> Result<csv::Writer<File>, String> {
    csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<(), String> {
    w.flush().map_err(|e| format!("{}: {e}", path.display()))
}

macro_rules! row {
    ($w:expr, $path:expr, $($field:expr),+ $(,)?) => {
        $w.write_record(&[$($field),+]).map_err(|e| format!("{}: {e}", $path.display()))?
    };
}

/// One row per iteration. `selected` holds pool indices separated by `;`,
/// `points` their coordinates (`x1 x2;x1 x2`), `theta` the kernel scales.
pub fn write_history(path: &Path, rep: &RunReport) -> Result<(), String> {
    let mut w = writer(path)?;
    row!(w, path, "iteration", "n_call", "pf_hat", "variance", "cov_estimator", "cov_mcs", "score", "selected", "points", "theta");
    for r in &rep.records {
        row!(
            w,
            path,
            r.iteration.to_string(),
            r.n_call.to_string(),
            num(r.pf_hat),
            num(r.variance),
            num(r.cov_estimator),
            num(r.cov_mcs),
            r.score.map(num).unwrap_or_default(),
            join(&r.selected, ";", |i| i.to_string()),
            join(&r.points, ";", |p| join(p, " ", |v| num(*v))),
            join(&r.theta, ";", |v| num(*v)),
        );
    }
    finish(w, path)
}

/// Wall-clock time per iteration, kept apart so the other outputs stay
/// reproducible byte for byte.
pub fn write_timing(path: &Path, rep: &RunReport) -> Result<(), String> {
    let mut w = writer(path)?;
    row!(w, path, "iteration", "wall_time_s");
    for r in &rep.records {
        row!(w, path, r.iteration.to_string(), format!("{:.6}", r.wall_time_s));
    }
    finish(w, path)
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a RunConfig,
    strategy: String,
    n_para: usize,
    seed: u64,
    variance_model: akrel::estimator::VarianceModel,
    final_pf: f64,
    final_variance: f64,
    n_call: usize,
    iterations: usize,
    stop_cause: akrel::driver::StopCause,
    reference_pf: Option<f64>,
    eps: Option<f64>,
    pool_pf: Option<f64>,
    eps_pool: Option<f64>,
    cov_mcs: f64,
    pool_warning: bool,
}

pub fn write_summary(path: &Path, cfg: &RunConfig, rep: &RunReport) -> Result<(), String> {
    let s = Summary {
        config: cfg,
        strategy: rep.strategy.name().to_string(),
        n_para: rep.n_para,
        seed: rep.seed,
        variance_model: rep.variance_model,
        final_pf: rep.final_pf,
        final_variance: rep.final_variance,
        n_call: rep.n_call,
        iterations: rep.iterations,
        stop_cause: rep.stop_cause,
        reference_pf: rep.reference_pf,
        eps: rep.eps,
        pool_pf: rep.pool_pf,
        eps_pool: rep.eps_pool,
        cov_mcs: rep.cov_mcs,
        pool_warning: rep.pool_warning,
    };
    write_json(path, &s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), String> {
    let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| format!("{}: {e}", path.display()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn write_comparison(path: &Path, cmp: &Comparison) -> Result<(), String> {
    let mut w = writer(path)?;
    row!(w, path, "strategy", "mean_n_call", "cov_n_call", "mean_eps", "cov_eps");
    for r in &cmp.rows {
        row!(w, path, r.label.clone(), num(r.mean_n_call), num(r.cov_n_call), num(r.mean_eps), num(r.cov_eps));
    }
    finish(w, path)
}

pub fn write_grid(path: &Path, grid: &[GridRecord]) -> Result<(), String> {
    let mut w = writer(path)?;
    row!(w, path, "x1", "x2", "mu", "sigma", "sigma_b2");
    for g in grid {
        row!(w, path, num(g.x1), num(g.x2), num(g.mu), num(g.sigma), num(g.sigma_b2));
    }
    finish(w, path)
}

/// Training points of the final surrogate, for overlaying on the grid.
pub fn write_doe(path: &Path, model: &KrigingModel) -> Result<(), String> {
    let doe = model.doe();
    let mut w = writer(path)?;
    let mut header: Vec<String> = (1..=doe.dim()).map(|j| format!("x{j}")).collect();
    header.push("g".into());
    w.write_record(&header).map_err(|e| format!("{}: {e}", path.display()))?;
    for (x, y) in doe.points().zip(doe.responses()) {
        let mut rec: Vec<String> = x.iter().map(|v| num(*v)).collect();
        rec.push(num(*y));
        w.write_record(&rec).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    finish(w, path)
}

//! Limit-state functions and the external evaluator protocol.
//!
//! External evaluators are child processes that read one request line per
//! batch from standard input, a JSON array of points (`[[x11,x12],[x21,x22]]`),
//! and answer with one line holding a JSON array of responses of equal length.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::normal;
use crate::rv::{mc_sample, RandomVariableSpec};
use crate::{Error, Result};

/// Crude MC failure probability of [`rastrigin`] under independent standard
/// normal inputs: ten independent runs of 10^6 samples, averaged.
pub const RASTRIGIN_REFERENCE_PF: f64 = 0.072_940_1;

/// Seeds used to establish [`RASTRIGIN_REFERENCE_PF`].
pub const RASTRIGIN_REFERENCE_SEEDS: std::ops::Range<u64> = 0..10;

pub const DEFAULT_TIMEOUT_SECS: u64 = 300;

/// Modified Rastrigin function `10 - sum(x_i^2 - 5 cos(2 pi x_i))`.
pub fn rastrigin(x: &[f64]) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: x.len() });
    }
    Ok(10.0 - x.iter().map(|v| v * v - 5.0 * (2.0 * PI * v).cos()).sum::<f64>())
}

/// `beta - x_1`, failure probability `Phi(-beta)` for a standard normal input.
pub fn linear_gaussian(x: &[f64], beta: f64) -> Result<f64> {
    if x.len() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: x.len() });
    }
    Ok(beta - x[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LimitStateKind {
    Rastrigin,
    LinearGaussian {
        beta: f64,
    },
    External {
        /// Program followed by its arguments.
        command: Vec<String>,
        dim: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

impl Default for LimitStateKind {
    fn default() -> Self {
        LimitStateKind::Rastrigin
    }
}

impl LimitStateKind {
    pub fn dim(&self) -> usize {
        match self {
            LimitStateKind::Rastrigin => 2,
            LimitStateKind::LinearGaussian { .. } => 1,
            LimitStateKind::External { dim, .. } => *dim,
        }
    }

    /// Known failure probability under standard normal inputs, if any.
    pub fn reference_pf(&self) -> Option<f64> {
        match self {
            LimitStateKind::Rastrigin => Some(RASTRIGIN_REFERENCE_PF),
            LimitStateKind::LinearGaussian { beta } => Some(normal::cdf(-beta)),
            LimitStateKind::External { .. } => None,
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, LimitStateKind::External { .. })
    }
}

struct ExternalProcess {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl ExternalProcess {
    fn spawn(command: &[String], timeout_secs: u64) -> Result<Self> {
        let (prog, args) = command.split_first().ok_or_else(|| Error::ExternalEvaluator("empty command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::ExternalEvaluator(format!("cannot start `{prog}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines: rx, timeout: Duration::from_secs(timeout_secs) })
    }

    fn request(&mut self, points: &[&[f64]]) -> Result<Vec<f64>> {
        let msg = serde_json::to_string(points).map_err(|e| Error::ExternalEvaluator(e.to_string()))?;
        let io = |e: std::io::Error| Error::ExternalEvaluator(format!("write failed: {e}"));
        writeln!(self.stdin, "{msg}").map_err(io)?;
        self.stdin.flush().map_err(io)?;
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::ExternalEvaluator(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::ExternalEvaluator(format!("no reply within {} s", self.timeout.as_secs())))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.wait().ok().map(|s| s.to_string()).unwrap_or_else(|| "unknown".into());
                return Err(Error::ExternalEvaluator(format!("evaluator exited ({status})")));
            }
        };
        let values: Vec<f64> = serde_json::from_str(line.trim())
            .map_err(|e| Error::ExternalEvaluator(format!("malformed reply `{}`: {e}", line.trim())))?;
        if values.len() != points.len() {
            return Err(Error::ExternalEvaluator(format!(
                "reply has {} values for {} points",
                values.len(),
                points.len()
            )));
        }
        Ok(values)
    }
}

impl Drop for ExternalProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A limit state with its count of real evaluations.
pub struct LimitState {
    kind: LimitStateKind,
    calls: u64,
    external: Option<ExternalProcess>,
}

impl std::fmt::Debug for LimitState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LimitState").field("kind", &self.kind).field("calls", &self.calls).finish()
    }
}

impl LimitState {
    pub fn new(kind: LimitStateKind) -> Result<Self> {
        let external = match &kind {
            LimitStateKind::External { command, dim, timeout_secs } => {
                if *dim == 0 {
                    return Err(Error::Config("external evaluator dimension must be positive".into()));
                }
                Some(ExternalProcess::spawn(command, *timeout_secs)?)
            }
            _ => None,
        };
        Ok(Self { kind, calls: 0, external })
    }

    pub fn kind(&self) -> &LimitStateKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// Number of real evaluations so far.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// Evaluate without touching the counter (used for reference values).
    pub(crate) fn evaluate_uncounted(&mut self, points: &[&[f64]]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        let d = self.dim();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: p.len() });
        }
        match &self.kind {
            LimitStateKind::Rastrigin => points.iter().map(|p| rastrigin(p)).collect(),
            LimitStateKind::LinearGaussian { beta } => points.iter().map(|p| linear_gaussian(p, *beta)).collect(),
            LimitStateKind::External { .. } => self.external.as_mut().expect("spawned").request(points),
        }
    }

    /// Responses in input order; the counter advances by the batch size.
    pub fn evaluate(&mut self, points: &[&[f64]]) -> Result<Vec<f64>> {
        let out = self.evaluate_uncounted(points)?;
        self.calls += points.len() as u64;
        Ok(out)
    }
}

/// Crude MC estimate of `P(g <= 0)` with `n` samples.
pub fn crude_mcs(kind: &LimitStateKind, spec: &RandomVariableSpec, n: usize, seed: u64) -> Result<f64> {
    let pool = mc_sample(spec, n, seed)?;
    let mut ls = LimitState::new(kind.clone())?;
    let mut fails = 0usize;
    let rows: Vec<&[f64]> = pool.iter().collect();
    for chunk in rows.chunks(65_536) {
        fails += ls.evaluate_uncounted(chunk)?.iter().filter(|g| **g <= 0.0).count();
    }
    Ok(fails as f64 / n as f64)
}

//! Block proximal gradient solvers for [`CoupledProblem`].
//!
//! * `easap`: Gauss-Seidel sweep over the blocks `A_1..A_N` then `B_1..B_M`.
//!   Each block takes a gradient step on its fit term at the freshest point
//!   and a prox step on the coupling restricted to that block.
//! * `asap`: the two-block scheme, all of `A` then all of `B`.
//! * `accel_asap`: `asap` from an extrapolated point with FISTA-style weights.
//!
//! Stepsizes follow `tau = gamma * L (+ k)`, where `L` is the trace estimate of
//! the block Lipschitz constant and the optional `+ k` adds the iteration count.

mod diagnostics;
mod sweep;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoupledProblem, Side};
use crate::tensor::KruskalFactors;

pub use diagnostics::{descent_check, lyapunov_value, stationarity_error, stepsizes_at};
pub use sweep::{accel_asap_sweep, asap_sweep, easap_sweep, next_extrapolation_t, sweep};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Easap,
    Asap,
    AccelAsap,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Easap => "easap",
            Algorithm::Asap => "asap",
            Algorithm::AccelAsap => "accel_asap",
        })
    }
}

/// How eASAP partitions each side into blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockLayout {
    /// Every factor matrix is its own block.
    #[default]
    PerFactor,
    /// All factors of a side form one block.
    SingleBlock,
}

impl BlockLayout {
    pub(crate) fn groups(self, order: usize) -> Vec<Vec<usize>> {
        match self {
            BlockLayout::PerFactor => (0..order).map(|n| vec![n]).collect(),
            BlockLayout::SingleBlock => vec![(0..order).collect()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Diagnostics {
    pub stationarity_error: bool,
    pub lyapunov: bool,
    pub descent_check: bool,
    /// Record wall-clock time per sweep. Off by default so traces are reproducible byte for byte.
    pub wall_time: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            stationarity_error: true,
            lyapunov: false,
            descent_check: true,
            wall_time: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Stepsize multipliers for the `A` blocks; one value is broadcast to all blocks.
    pub gamma_a: Vec<f64>,
    pub gamma_b: Vec<f64>,
    /// Adds the iteration counter to every eASAP stepsize.
    pub add_iteration_to_step: bool,
    pub layout: BlockLayout,
    pub max_iters: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Easap,
            gamma_a: vec![1.01],
            gamma_b: vec![1.01],
            add_iteration_to_step: true,
            layout: BlockLayout::PerFactor,
            max_iters: 200,
            epsilon: 1e-8,
            seed: 0,
            diagnostics: Diagnostics::default(),
        }
    }
}

impl SolverConfig {
    pub fn easap() -> Self {
        Self::default()
    }

    pub fn asap() -> Self {
        Self {
            algorithm: Algorithm::Asap,
            ..Self::default()
        }
    }

    pub fn accel_asap() -> Self {
        Self {
            algorithm: Algorithm::AccelAsap,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma_a", &self.gamma_a), ("gamma_b", &self.gamma_b)] {
            if g.is_empty() {
                return Err(Error::InvalidArgument(format!("{name} is empty")));
            }
            if let Some(v) = g.iter().find(|&&v| !(v > 1.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} entries must be finite and > 1, got {v}"
                )));
            }
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Effective block layout: the two-block algorithms always use one block per side.
    pub fn effective_layout(&self) -> BlockLayout {
        match self.algorithm {
            Algorithm::Easap => self.layout,
            Algorithm::Asap | Algorithm::AccelAsap => BlockLayout::SingleBlock,
        }
    }

    pub(crate) fn gamma(&self, side: Side, group: usize, groups: usize) -> Result<f64> {
        let g = match side {
            Side::A => &self.gamma_a,
            Side::B => &self.gamma_b,
        };
        match g.len() {
            1 => Ok(g[0]),
            n if n == groups => Ok(g[group]),
            n => Err(Error::InvalidArgument(format!(
                "{n} gamma values for {groups} blocks on side {side:?}"
            ))),
        }
    }

    /// The `+ k` term of the stepsize at iteration `k`.
    pub(crate) fn iteration_term(&self, k: usize) -> f64 {
        if self.algorithm == Algorithm::Easap && self.add_iteration_to_step {
            k as f64
        } else {
            0.0
        }
    }
}

/// Per-block quantities of one completed sweep, `A` blocks first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepStats {
    pub stepsizes: Vec<f64>,
    pub lipschitz: Vec<f64>,
    /// `‖x_i^{k+1} − x_i^k‖²` per block.
    pub block_step_sq: Vec<f64>,
}

/// Iterate `z^k = (A^k, B^k)` plus what the next sweep needs.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub a: KruskalFactors,
    pub b: KruskalFactors,
    pub prev_a: KruskalFactors,
    pub prev_b: KruskalFactors,
    pub objective: f64,
    pub k: usize,
    /// Extrapolation memory `t_{k-1}`, `t_k`.
    pub t_prev: f64,
    pub t_cur: f64,
    pub last: Option<SweepStats>,
}

impl SolverState {
    pub fn new(p: &CoupledProblem, a: KruskalFactors, b: KruskalFactors) -> Result<Self> {
        p.check_iterate(&a, &b)?;
        let objective = p.objective(&a, &b)?;
        if !objective.is_finite() {
            return Err(Error::NonFinite("objective at the initial point".into()));
        }
        Ok(Self {
            prev_a: a.clone(),
            prev_b: b.clone(),
            a,
            b,
            objective,
            k: 0,
            t_prev: 1.0,
            t_cur: 1.0,
            last: None,
        })
    }

    /// `‖z^k − z^{k−1}‖` over all stacked blocks.
    pub fn step_norm(&self) -> Result<f64> {
        Ok((self.a.distance_sq(&self.prev_a)? + self.b.distance_sq(&self.prev_b)?).sqrt())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub objective: f64,
    pub step_norm: f64,
    pub stationarity: Option<f64>,
    pub relerr: Option<f64>,
    pub fms: Option<f64>,
    pub lyapunov: Option<f64>,
    pub descent_ok: Option<bool>,
    pub wall_ms: Option<f64>,
    /// Stepsizes, Lipschitz estimates and block step norms of the sweep that produced `z^k`.
    pub sweep: SweepStats,
}

/// Optional quality metrics supplied by a run observer.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSample {
    pub relerr: Option<f64>,
    pub fms: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "k,J,step_norm,stat_err,relerr,fms,wall_ms";

fn fmt_f64(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(out, "{v:.16e}");
    }
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// CSV with 17 significant digits; missing values are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},", r.k);
            fmt_f64(&mut out, Some(r.objective));
            out.push(',');
            fmt_f64(&mut out, Some(r.step_norm));
            out.push(',');
            fmt_f64(&mut out, r.stationarity);
            out.push(',');
            fmt_f64(&mut out, r.relerr);
            out.push(',');
            fmt_f64(&mut out, r.fms);
            out.push(',');
            fmt_f64(&mut out, r.wall_ms);
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Runs [`descent_check`] on every consecutive pair of records.
    pub fn descent_violations(&self) -> Vec<usize> {
        self.records
            .windows(2)
            .filter(|w| !record_descent(&w[0], &w[1]))
            .map(|w| w[1].k)
            .collect()
    }
}

fn record_descent(prev: &TraceRecord, next: &TraceRecord) -> bool {
    descent_check(
        prev.objective,
        next.objective,
        next.step_norm,
        &next.sweep.stepsizes,
        &next.sweep.lipschitz,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// `‖z^{k+1} − z^k‖ ≤ epsilon`
    Converged,
    MaxIters,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::MaxIters => "max_iters",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub state: SolverState,
    pub trace: RunTrace,
    pub stop: StopReason,
}

pub fn run(
    p: &CoupledProblem,
    init: (KruskalFactors, KruskalFactors),
    cfg: &SolverConfig,
) -> Result<RunOutcome> {
    run_with_observer(p, init, cfg, |_| MetricSample::default())
}

/// Iterates sweeps until the step norm drops to `epsilon` or `max_iters` sweeps
/// have run. `observer` is called on every iterate, including the initial one.
pub fn run_with_observer(
    p: &CoupledProblem,
    init: (KruskalFactors, KruskalFactors),
    cfg: &SolverConfig,
    mut observer: impl FnMut(&SolverState) -> MetricSample,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut state = SolverState::new(p, init.0, init.1)?;
    let mut trace = RunTrace::default();
    let elapsed = |start: &Instant| cfg.diagnostics.wall_time.then(|| start.elapsed().as_secs_f64() * 1e3);

    let mut first = TraceRecord {
        k: 0,
        objective: state.objective,
        lyapunov: cfg.diagnostics.lyapunov.then_some(state.objective),
        ..TraceRecord::default()
    };
    annotate(p, &state, cfg, &mut first, &mut observer)?;
    first.wall_ms = elapsed(&start);
    trace.records.push(first);

    let mut stop = StopReason::MaxIters;
    for _ in 0..cfg.max_iters {
        let next = sweep(p, &state, cfg)?;
        let step_norm = next.step_norm()?;
        let stats = next.last.clone().unwrap_or_default();
        let mut rec = TraceRecord {
            k: next.k,
            objective: next.objective,
            step_norm,
            ..TraceRecord::default()
        };
        if cfg.diagnostics.lyapunov {
            rec.lyapunov = Some(lyapunov_value(
                next.objective,
                &stats.block_step_sq,
                &stats.stepsizes,
                &stats.lipschitz,
            ));
        }
        if cfg.diagnostics.descent_check {
            rec.descent_ok = Some(descent_check(
                state.objective,
                next.objective,
                step_norm,
                &stats.stepsizes,
                &stats.lipschitz,
            ));
            if rec.descent_ok == Some(false) && cfg.algorithm != Algorithm::AccelAsap {
                log::warn!(
                    "descent check failed at k={}: J {} -> {}",
                    next.k,
                    state.objective,
                    next.objective
                );
            }
        }
        rec.sweep = stats;
        annotate(p, &next, cfg, &mut rec, &mut observer)?;
        rec.wall_ms = elapsed(&start);
        log::debug!("k={} J={:.6e} step={:.3e}", rec.k, rec.objective, step_norm);
        trace.records.push(rec);
        state = next;
        if step_norm <= cfg.epsilon {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(RunOutcome { state, trace, stop })
}

fn annotate(
    p: &CoupledProblem,
    state: &SolverState,
    cfg: &SolverConfig,
    rec: &mut TraceRecord,
    observer: &mut impl FnMut(&SolverState) -> MetricSample,
) -> Result<()> {
    if cfg.diagnostics.stationarity_error {
        let steps = stepsizes_at(p, &state.a, &state.b, cfg, state.k)?;
        rec.stationarity = Some(stationarity_error(p, &state.a, &state.b, &steps)?);
    }
    let m = observer(state);
    rec.relerr = m.relerr;
    rec.fms = m.fms;
    Ok(())
}

#[cfg(test)]
mod tests;

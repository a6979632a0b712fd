//! Piecewise deterministic Markov processes: description and execution.
//!
//! Jump times are sampled by time rescaling: draw `E ~ Exp(1)` and integrate
//! the mode's total intensity along the flow until it reaches `E`, unless
//! the guard fires first.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{
    flow_with_accumulator, integrate_until, Event, FlowConfig, FlowError, Trajectory, VectorField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitCause {
    Guard,
    Jump,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdmpError {
    #[error("mode {mode}: {source}")]
    Flow { mode: usize, source: FlowError },
    #[error("more than {0} jumps; the process looks Zeno")]
    Zeno(usize),
    #[error("mode {mode}: reset failed: {message}")]
    Reset {
        mode: usize,
        message: alloc::string::String,
    },
    #[error("invalid initial hybrid state")]
    InvalidState,
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
}

/// A PDMP over modes `0..mode_count()` and states in `R^dim()`.
pub trait Pdmp {
    fn dim(&self) -> usize;

    fn mode_count(&self) -> usize;

    fn vector_field(&self, mode: usize) -> Box<dyn VectorField + '_>;

    /// Whether `mode` has a guard; when false, [`Pdmp::guard`] is ignored.
    fn has_guard(&self, _mode: usize) -> bool {
        false
    }

    /// Guard as a level function: the guard holds iff the value is `>= 0`.
    fn guard(&self, _mode: usize, _x: &[f64]) -> f64 {
        -1.0
    }

    /// Jump intensities to other modes, `(target, rate)`.
    fn jump_rates(&self, _mode: usize, _x: &[f64]) -> Vec<(usize, f64)> {
        Vec::new()
    }

    /// Whether `mode` can jump spontaneously; when false the intensity is
    /// treated as identically zero.
    fn has_intensity(&self, _mode: usize) -> bool {
        false
    }

    /// Total intensity `λ_q(x)`.
    fn intensity(&self, mode: usize, x: &[f64]) -> f64 {
        self.jump_rates(mode, x).iter().map(|(_, r)| r).sum()
    }

    /// Sample the post-jump hybrid state. `target` is the mode selected in
    /// proportion to [`Pdmp::jump_rates`] for spontaneous jumps.
    fn reset(
        &self,
        mode: usize,
        target: Option<usize>,
        x: &[f64],
        cause: ExitCause,
        rng: &mut dyn RngCore,
    ) -> Result<(usize, Vec<f64>), PdmpError>;

    /// Execution stops on entering an absorbing mode.
    fn is_absorbing(&self, _mode: usize) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecConfig {
    pub flow: FlowConfig,
    pub max_jumps: usize,
    /// Keep dense trajectories of each segment.
    pub record: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            flow: FlowConfig::default(),
            max_jumps: 1_000_000,
            record: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub mode: usize,
    pub entry_time: f64,
    pub entry_state: Vec<f64>,
    pub exit_time: f64,
    pub exit_state: Vec<f64>,
    pub cause: ExitCause,
    /// Local time starts at 0 on entry.
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridPath {
    pub segments: Vec<Segment>,
    pub final_mode: usize,
    pub final_state: Vec<f64>,
    pub final_time: f64,
}

impl HybridPath {
    pub fn jumps(&self) -> usize {
        self.segments.iter().filter(|s| s.cause != ExitCause::Horizon).count()
    }
}

/// Run the process from `(q0, x0)` until `horizon` or an absorbing mode.
pub fn execute<P: Pdmp + ?Sized, R: RngCore>(
    pdmp: &P,
    q0: usize,
    x0: &[f64],
    horizon: f64,
    cfg: &ExecConfig,
    rng: &mut R,
) -> Result<HybridPath, PdmpError> {
    if !(horizon > 0.0) {
        return Err(PdmpError::Horizon(horizon));
    }
    if q0 >= pdmp.mode_count() || x0.len() != pdmp.dim() {
        return Err(PdmpError::InvalidState);
    }
    let mut q = q0;
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut segments = Vec::new();
    let mut jumps = 0usize;
    while t < horizon && !pdmp.is_absorbing(q) {
        let field = pdmp.vector_field(q);
        let guard = |y: &[f64]| pdmp.guard(q, y);
        let guard_ref: Option<Event<'_>> = pdmp.has_guard(q).then_some(&guard as _);
        let remaining = horizon - t;
        let flow_err = |source| PdmpError::Flow { mode: q, source };
        let (dt, y, cause, trajectory) = if pdmp.has_intensity(q) {
            let level: f64 = Exp1.sample(rng);
            let lam = |y: &[f64]| pdmp.intensity(q, y);
            let out = flow_with_accumulator(&field, &x, &lam, level, guard_ref, remaining, &cfg.flow, cfg.record)
                .map_err(flow_err)?;
            let mut y = out.state;
            y.truncate(pdmp.dim());
            let cause = match (out.event, guard_ref.is_some()) {
                (None, _) => ExitCause::Horizon,
                (Some(0), true) => ExitCause::Guard,
                _ => ExitCause::Jump,
            };
            (out.time, y, cause, out.trajectory)
        } else {
            let events: Vec<Event<'_>> = guard_ref.into_iter().collect();
            let out = integrate_until(&field, &x, remaining, &events, &cfg.flow, cfg.record).map_err(flow_err)?;
            let cause = if out.event.is_some() {
                ExitCause::Guard
            } else {
                ExitCause::Horizon
            };
            (out.time, out.state, cause, out.trajectory)
        };
        let exit_time = if cause == ExitCause::Horizon { horizon } else { t + dt };
        segments.push(Segment {
            mode: q,
            entry_time: t,
            entry_state: core::mem::take(&mut x),
            exit_time,
            exit_state: y.clone(),
            cause,
            trajectory,
        });
        t = exit_time;
        if cause == ExitCause::Horizon {
            x = y;
            break;
        }
        jumps += 1;
        if jumps > cfg.max_jumps {
            return Err(PdmpError::Zeno(cfg.max_jumps));
        }
        let target = if cause == ExitCause::Jump {
            pick_target(&pdmp.jump_rates(q, &y), rng)
        } else {
            None
        };
        let (q1, x1) = pdmp.reset(q, target, &y, cause, rng)?;
        if q1 >= pdmp.mode_count() || x1.len() != pdmp.dim() {
            return Err(PdmpError::Reset {
                mode: q,
                message: "reset left the hybrid state space".into(),
            });
        }
        q = q1;
        x = x1;
    }
    Ok(HybridPath {
        segments,
        final_mode: q,
        final_state: x,
        final_time: t,
    })
}

fn pick_target<R: RngCore + ?Sized>(rates: &[(usize, f64)], rng: &mut R) -> Option<usize> {
    let total: f64 = rates.iter().map(|(_, r)| r).sum();
    if rates.is_empty() || !(total > 0.0) {
        return rates.first().map(|(q, _)| *q);
    }
    let mut u = rng.random::<f64>() * total;
    for (q, r) in rates {
        if u < *r {
            return Some(*q);
        }
        u -= r;
    }
    rates.last().map(|(q, _)| *q)
}

/// Probability of staying in `mode` for time `t` from `x`:
/// `exp(-∫₀ᵗ λ_q(Φ(τ)) dτ)` before the exit time, `0` from it on.
pub fn survival<P: Pdmp + ?Sized>(
    pdmp: &P,
    mode: usize,
    x: &[f64],
    t: f64,
    cfg: &FlowConfig,
) -> Result<f64, PdmpError> {
    let field = pdmp.vector_field(mode);
    let guard = |y: &[f64]| pdmp.guard(mode, y);
    let guard_ref: Option<Event<'_>> = pdmp.has_guard(mode).then_some(&guard as _);
    if let Some(g) = guard_ref {
        if g(x) >= 0.0 {
            return Ok(0.0);
        }
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let lam = |y: &[f64]| {
        if pdmp.has_intensity(mode) {
            pdmp.intensity(mode, y)
        } else {
            0.0
        }
    };
    let out = flow_with_accumulator(&field, x, &lam, f64::INFINITY, guard_ref, t, cfg, false)
        .map_err(|source| PdmpError::Flow { mode, source })?;
    if out.event.is_some() {
        return Ok(0.0);
    }
    Ok(libm::exp(-out.state[pdmp.dim()]))
}

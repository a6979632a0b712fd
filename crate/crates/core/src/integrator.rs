//! Adaptive integration of autonomous ODEs with dense output and event
//! location.
//!
//! The default method is the Dormand–Prince 5(4) pair with its quartic
//! continuous extension. A four-stage Rosenbrock method (Shampine's
//! parameters, order 4 with an embedded order-3 estimate) is available for
//! stiff networks integrated over long horizons; its dense output is cubic
//! Hermite.
//!
//! Events are scalar functions of the state: an event fires when its value
//! becomes `>= 0`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Autonomous vector field `dx/dt = f(x)`.
pub trait VectorField {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], dx: &mut [f64]);

    /// Row-major `dim × dim` Jacobian. Defaults to forward differences.
    fn jacobian(&self, x: &[f64], jac: &mut [f64]) {
        let n = self.dim();
        let mut f0 = vec![0.0; n];
        let mut f1 = vec![0.0; n];
        let mut xp = x.to_vec();
        self.eval(x, &mut f0);
        for j in 0..n {
            let delta = libm::sqrt(f64::EPSILON) * x[j].abs().max(1e-8);
            xp[j] = x[j] + delta;
            self.eval(&xp, &mut f1);
            xp[j] = x[j];
            for i in 0..n {
                jac[i * n + j] = (f1[i] - f0[i]) / delta;
            }
        }
    }

    /// Whether coordinate `i` of accepted states must stay nonnegative.
    fn nonnegative(&self, _i: usize) -> bool {
        false
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        (**self).eval(x, dx)
    }
    fn jacobian(&self, x: &[f64], jac: &mut [f64]) {
        (**self).jacobian(x, jac)
    }
    fn nonnegative(&self, i: usize) -> bool {
        (**self).nonnegative(i)
    }
}

impl<T: VectorField + ?Sized> VectorField for alloc::boxed::Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        (**self).eval(x, dx)
    }
    fn jacobian(&self, x: &[f64], jac: &mut [f64]) {
        (**self).jacobian(x, jac)
    }
    fn nonnegative(&self, i: usize) -> bool {
        (**self).nonnegative(i)
    }
}

/// Closure-backed vector field.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

pub fn field_fn<F: Fn(&[f64], &mut [f64])>(dim: usize, f: F) -> FnField<F> {
    FnField { dim, f }
}

impl<F: Fn(&[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        (self.f)(x, dx)
    }
}

/// Field extended with one accumulator coordinate integrating a scalar
/// intensity along the flow.
struct Accumulated<'a, F> {
    inner: F,
    intensity: Event<'a>,
}

impl<F: VectorField> VectorField for Accumulated<'_, F> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        let n = self.inner.dim();
        self.inner.eval(&x[..n], &mut dx[..n]);
        dx[n] = (self.intensity)(&x[..n]);
    }
    fn nonnegative(&self, i: usize) -> bool {
        i < self.inner.dim() && self.inner.nonnegative(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    DormandPrince,
    Rosenbrock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub blowup_threshold: f64,
    pub horizon: f64,
    pub method: Method,
    pub max_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: f64::INFINITY,
            blowup_threshold: 1e12,
            horizon: f64::INFINITY,
            method: Method::DormandPrince,
            max_steps: 10_000_000,
        }
    }
}

impl FlowConfig {
    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.blowup_threshold > 0.0
            && self.max_step > 0.0
            && self.horizon >= 0.0
            && self.max_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(FlowError::InvalidConfig)
        }
    }
}

/// Reasons a flow has no (unique, finite) solution over the requested time.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum IllPosed {
    #[error("state norm {norm:e} exceeded the blowup threshold at t = {t}")]
    Blowup { t: f64, norm: f64 },
    #[error("step size {h:e} underflowed at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("coordinate {index} reached {value:e} at t = {t}")]
    NegativeState { t: f64, index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FlowError {
    #[error("ill posed: {0}")]
    IllPosed(#[from] IllPosed),
    #[error("step limit reached at t = {t}")]
    TooManySteps { t: f64 },
    #[error("requested time {t} is outside [0, {horizon}]")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("initial state has non-finite entries or wrong dimension")]
    InvalidState,
    #[error("invalid flow configuration")]
    InvalidConfig,
}

#[derive(Debug, Clone, PartialEq)]
enum Dense {
    /// Coefficients of the Dormand–Prince continuous extension.
    Quartic([Vec<f64>; 5]),
    /// Endpoint values and derivatives.
    Hermite {
        y0: Vec<f64>,
        y1: Vec<f64>,
        f0: Vec<f64>,
        f1: Vec<f64>,
    },
}

/// One accepted step with its interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep {
    pub t0: f64,
    h: f64,
    t1: f64,
    dense: Dense,
}

impl DenseStep {
    /// End of the valid range; earlier than `t0 + h` when cut by an event.
    pub fn t1(&self) -> f64 {
        self.t1
    }

    fn eval_theta(&self, theta: f64, out: &mut [f64]) {
        match &self.dense {
            Dense::Quartic([r1, r2, r3, r4, r5]) => {
                let t1 = 1.0 - theta;
                for i in 0..out.len() {
                    out[i] = r1[i] + theta * (r2[i] + t1 * (r3[i] + theta * (r4[i] + t1 * r5[i])));
                }
            }
            Dense::Hermite { y0, y1, f0, f1 } => {
                let t = theta;
                let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
                let h10 = t * (1.0 - t) * (1.0 - t);
                let h01 = t * t * (3.0 - 2.0 * t);
                let h11 = t * t * (t - 1.0);
                for i in 0..out.len() {
                    out[i] = h00 * y0[i] + h10 * self.h * f0[i] + h01 * y1[i] + h11 * self.h * f1[i];
                }
            }
        }
    }

    /// Interpolated state at absolute time `t` within the step.
    pub fn state_at(&self, t: f64, out: &mut [f64]) {
        let theta = if self.h > 0.0 {
            ((t - self.t0) / self.h).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.eval_theta(theta, out);
    }
}

/// Solution of an initial value problem with dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start: (f64, Vec<f64>),
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    steps: Vec<DenseStep>,
}

impl Trajectory {
    fn new(x0: &[f64]) -> Self {
        Trajectory {
            start: (0.0, x0.to_vec()),
            times: vec![0.0],
            states: vec![x0.to_vec()],
            steps: Vec::new(),
        }
    }

    /// Step end times, starting with 0.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn steps(&self) -> &[DenseStep] {
        &self.steps
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// Dense-output query; `t` is clamped to the covered interval.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.start.1.len()];
        if self.steps.is_empty() || t <= self.start.0 {
            out.copy_from_slice(&self.start.1);
            return out;
        }
        if t >= self.end_time() {
            out.copy_from_slice(self.final_state());
            return out;
        }
        let i = self.steps.partition_point(|s| s.t1() < t);
        self.steps[i.min(self.steps.len() - 1)].state_at(t, &mut out);
        out
    }
}

/// Result of a run stopped by time or by an event.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub time: f64,
    pub state: Vec<f64>,
    /// Index of the event that stopped the run, if any.
    pub event: Option<usize>,
    pub trajectory: Option<Trajectory>,
    pub steps: usize,
}

/// First guard crossing, or the state at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum Exit {
    Hit { time: f64, state: Vec<f64> },
    NoExit { horizon: f64, state: Vec<f64> },
}

impl Exit {
    pub fn time(&self) -> Option<f64> {
        match self {
            Exit::Hit { time, .. } => Some(*time),
            Exit::NoExit { .. } => None,
        }
    }
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// Shampine's Rosenbrock parameters.
const GAM: f64 = 1.0 / 2.0;
const RA21: f64 = 2.0;
const RA31: f64 = 48.0 / 25.0;
const RA32: f64 = 6.0 / 25.0;
const RC21: f64 = -8.0;
const RC31: f64 = 372.0 / 25.0;
const RC32: f64 = 12.0 / 5.0;
const RC41: f64 = -112.0 / 125.0;
const RC42: f64 = -54.0 / 125.0;
const RC43: f64 = -2.0 / 5.0;
const RB1: f64 = 19.0 / 9.0;
const RB2: f64 = 1.0 / 2.0;
const RB3: f64 = 25.0 / 108.0;
const RB4: f64 = 125.0 / 108.0;
const RE1: f64 = 17.0 / 54.0;
const RE2: f64 = 7.0 / 36.0;
const RE3: f64 = 0.0;
const RE4: f64 = 125.0 / 108.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

struct Solver<'a, F: VectorField> {
    field: &'a F,
    cfg: FlowConfig,
    n: usize,
    t: f64,
    x: Vec<f64>,
    fx: Vec<f64>,
    h: f64,
    steps: usize,
    rejected_last: bool,
    jac: Option<Vec<f64>>,
}

/// Accepted step returned by [`Solver::step`].
struct Accepted {
    step: DenseStep,
}

fn axpy_into(out: &mut [f64], x: &[f64], terms: &[(f64, &[f64])]) {
    for i in 0..out.len() {
        let mut acc = 0.0;
        for (c, v) in terms {
            acc += c * v[i];
        }
        out[i] = x[i] + acc;
    }
}

impl<'a, F: VectorField> Solver<'a, F> {
    fn new(field: &'a F, x0: &[f64], cfg: FlowConfig) -> Result<Self, FlowError> {
        cfg.validate()?;
        let n = field.dim();
        if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::InvalidState);
        }
        let mut fx = vec![0.0; n];
        field.eval(x0, &mut fx);
        Ok(Solver {
            field,
            cfg,
            n,
            t: 0.0,
            x: x0.to_vec(),
            fx,
            h: 0.0,
            steps: 0,
            rejected_last: false,
            jac: None,
        })
    }

    fn order(&self) -> f64 {
        match self.cfg.method {
            Method::DormandPrince => 5.0,
            Method::Rosenbrock => 4.0,
        }
    }

    fn norm(&self, v: &[f64], ya: &[f64], yb: &[f64]) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..self.n {
            let sc = self.cfg.abs_tol + self.cfg.rel_tol * ya[i].abs().max(yb[i].abs());
            let r = v[i] / sc;
            s += r * r;
        }
        libm::sqrt(s / self.n as f64)
    }

    fn initial_step(&self, span: f64) -> f64 {
        let n = self.n;
        if n == 0 {
            return span;
        }
        let d0 = self.norm(&self.x, &self.x, &self.x);
        let d1 = self.norm(&self.fx, &self.x, &self.x);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        let mut x1 = vec![0.0; n];
        for ((y, x), f) in x1.iter_mut().zip(&self.x).zip(&self.fx) {
            *y = x + h0 * f;
        }
        let mut f1 = vec![0.0; n];
        self.field.eval(&x1, &mut f1);
        let diff: Vec<f64> = f1.iter().zip(&self.fx).map(|(a, b)| a - b).collect();
        let d2 = self.norm(&diff, &self.x, &self.x) / h0;
        let d = d1.max(d2);
        let h1 = if !d.is_finite() {
            h0 * 1e-3
        } else if d <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            libm::pow(0.01 / d, 1.0 / self.order())
        };
        (100.0 * h0).min(h1).min(self.cfg.max_step).min(span)
    }

    fn underflow(&self, h: f64) -> bool {
        h < 4.0 * f64::EPSILON * self.t.abs() || h < 1e-300
    }

    /// Attempt steps until one is accepted, never stepping past `t_end`.
    fn step(&mut self, t_end: f64) -> Result<Accepted, FlowError> {
        let span = t_end - self.t;
        if self.h <= 0.0 {
            self.h = self.initial_step(span);
        }
        let mut negative: Option<(usize, f64)> = None;
        loop {
            if self.steps >= self.cfg.max_steps {
                return Err(FlowError::TooManySteps { t: self.t });
            }
            let mut h = self.h.min(self.cfg.max_step);
            let remaining = t_end - self.t;
            // never leave a sliver shorter than the resolution of t_end
            let last = h >= remaining - 8.0 * f64::EPSILON * t_end.abs();
            if last {
                h = remaining;
            }
            if !last && self.underflow(h) {
                if let Some((index, value)) = negative {
                    return Err(IllPosed::NegativeState {
                        t: self.t,
                        index,
                        value,
                    }
                    .into());
                }
                return Err(IllPosed::StepUnderflow { t: self.t, h }.into());
            }
            let attempt = match self.cfg.method {
                Method::DormandPrince => self.try_dopri(h),
                Method::Rosenbrock => self.try_rosenbrock(h),
            };
            self.steps += 1;
            let Some((mut y1, f1, err, dense)) = attempt else {
                self.h = h * FAC_MIN;
                self.rejected_last = true;
                continue;
            };
            let p = self.order();
            if !(err <= 1.0) {
                let fac = if err.is_finite() {
                    (SAFETY * libm::pow(err, -1.0 / p)).max(FAC_MIN)
                } else {
                    FAC_MIN
                };
                self.h = h * fac.min(1.0);
                self.rejected_last = true;
                continue;
            }
            let field = self.field;
            if let Some((i, &v)) = y1
                .iter()
                .enumerate()
                .find(|(i, v)| **v <= -crate::crn::NEGATIVE_TOLERANCE && field.nonnegative(*i))
            {
                negative = Some((i, v));
                self.h = h * 0.5;
                self.rejected_last = true;
                continue;
            }
            for (i, v) in y1.iter_mut().enumerate() {
                if *v < 0.0 && field.nonnegative(i) {
                    *v = 0.0;
                }
            }
            let norm = y1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let t_new = if last { t_end } else { self.t + h };
            if !(norm <= self.cfg.blowup_threshold) {
                return Err(IllPosed::Blowup { t: t_new, norm }.into());
            }
            let fac = if err == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * libm::pow(err, -1.0 / p)).clamp(FAC_MIN, FAC_MAX)
            };
            let fac = if self.rejected_last { fac.min(1.0) } else { fac };
            self.rejected_last = false;
            let step = DenseStep {
                t0: self.t,
                h,
                t1: t_new,
                dense,
            };
            self.t = t_new;
            self.x = y1;
            self.fx = f1;
            self.jac = None;
            self.h = if last { self.h.max(h * fac) } else { h * fac };
            return Ok(Accepted { step });
        }
    }

    #[allow(clippy::type_complexity)]
    fn try_dopri(&self, h: f64) -> Option<(Vec<f64>, Vec<f64>, f64, Dense)> {
        let n = self.n;
        let f = self.field;
        let y = &self.x;
        let k1 = &self.fx;
        let mut tmp = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        axpy_into(&mut tmp, y, &[(h * A21, k1)]);
        f.eval(&tmp, &mut k2);
        axpy_into(&mut tmp, y, &[(h * A31, k1), (h * A32, &k2)]);
        f.eval(&tmp, &mut k3);
        axpy_into(&mut tmp, y, &[(h * A41, k1), (h * A42, &k2), (h * A43, &k3)]);
        f.eval(&tmp, &mut k4);
        axpy_into(
            &mut tmp,
            y,
            &[(h * A51, k1), (h * A52, &k2), (h * A53, &k3), (h * A54, &k4)],
        );
        f.eval(&tmp, &mut k5);
        axpy_into(
            &mut tmp,
            y,
            &[
                (h * A61, k1),
                (h * A62, &k2),
                (h * A63, &k3),
                (h * A64, &k4),
                (h * A65, &k5),
            ],
        );
        f.eval(&tmp, &mut k6);
        let mut y1 = vec![0.0; n];
        axpy_into(
            &mut y1,
            y,
            &[
                (h * A71, k1),
                (h * A73, &k3),
                (h * A74, &k4),
                (h * A75, &k5),
                (h * A76, &k6),
            ],
        );
        if y1.iter().any(|v| !v.is_finite()) {
            return None;
        }
        f.eval(&y1, &mut k7);
        let mut e = vec![0.0; n];
        for i in 0..n {
            e[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err = self.norm(&e, y, &y1);
        let mut r2 = vec![0.0; n];
        let mut r3 = vec![0.0; n];
        let mut r4 = vec![0.0; n];
        let mut r5 = vec![0.0; n];
        for i in 0..n {
            let ydiff = y1[i] - y[i];
            let bspl = h * k1[i] - ydiff;
            r2[i] = ydiff;
            r3[i] = bspl;
            r4[i] = ydiff - h * k7[i] - bspl;
            r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        let dense = Dense::Quartic([y.clone(), r2, r3, r4, r5]);
        Some((y1, k7, err, dense))
    }

    #[allow(clippy::type_complexity)]
    fn try_rosenbrock(&mut self, h: f64) -> Option<(Vec<f64>, Vec<f64>, f64, Dense)> {
        let n = self.n;
        if self.jac.is_none() {
            let mut jac = vec![0.0; n * n];
            self.field.jacobian(&self.x, &mut jac);
            self.jac = Some(jac);
        }
        let jac = self.jac.as_ref().unwrap();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = -jac[i * n + j];
            }
            a[(i, i)] += 1.0 / (GAM * h);
        }
        let lu = a.lu();
        let solve = |rhs: Vec<f64>| -> Option<Vec<f64>> {
            let mut b = DVector::from_vec(rhs);
            if lu.solve_mut(&mut b) {
                Some(b.as_slice().to_vec())
            } else {
                None
            }
        };
        let f = self.field;
        let y = &self.x;
        let g1 = solve(self.fx.clone())?;
        let mut tmp = vec![0.0; n];
        let mut fx = vec![0.0; n];
        axpy_into(&mut tmp, y, &[(RA21, &g1)]);
        f.eval(&tmp, &mut fx);
        let rhs: Vec<f64> = (0..n).map(|i| fx[i] + RC21 * g1[i] / h).collect();
        let g2 = solve(rhs)?;
        axpy_into(&mut tmp, y, &[(RA31, &g1), (RA32, &g2)]);
        f.eval(&tmp, &mut fx);
        let rhs: Vec<f64> = (0..n).map(|i| fx[i] + (RC31 * g1[i] + RC32 * g2[i]) / h).collect();
        let g3 = solve(rhs)?;
        let rhs: Vec<f64> = (0..n)
            .map(|i| fx[i] + (RC41 * g1[i] + RC42 * g2[i] + RC43 * g3[i]) / h)
            .collect();
        let g4 = solve(rhs)?;
        let mut y1 = vec![0.0; n];
        axpy_into(&mut y1, y, &[(RB1, &g1), (RB2, &g2), (RB3, &g3), (RB4, &g4)]);
        if y1.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let e: Vec<f64> = (0..n)
            .map(|i| RE1 * g1[i] + RE2 * g2[i] + RE3 * g3[i] + RE4 * g4[i])
            .collect();
        let err = self.norm(&e, y, &y1);
        let mut f1 = vec![0.0; n];
        f.eval(&y1, &mut f1);
        let dense = Dense::Hermite {
            y0: y.clone(),
            y1: y1.clone(),
            f0: self.fx.clone(),
            f1: f1.clone(),
        };
        Some((y1, f1, err, dense))
    }
}

/// Relative time tolerance for located events (bisection width).
pub const EVENT_TIME_TOL: f64 = 1e-12;

/// Probe points inside each step for sign monitoring.
const PROBES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Earliest crossing of `event` inside `step`, located by bisection.
fn locate(step: &DenseStep, event: Event<'_>, end: &[f64], buf: &mut [f64]) -> Option<f64> {
    let mut lo = 0.0;
    let mut hi = None;
    for &theta in &PROBES {
        let g = if theta == 1.0 {
            event(end)
        } else {
            step.eval_theta(theta, buf);
            event(buf)
        };
        if g >= 0.0 {
            hi = Some(theta);
            break;
        }
        lo = theta;
    }
    let mut hi_theta = hi?;
    let mut lo_t = step.t0 + lo * step.h;
    let mut hi_t = step.t0 + hi_theta * step.h;
    let mut lo_theta = lo;
    while hi_t - lo_t > EVENT_TIME_TOL * hi_t.abs().max(1.0) {
        let mid = 0.5 * (lo_theta + hi_theta);
        step.eval_theta(mid, buf);
        if event(buf) >= 0.0 {
            hi_theta = mid;
            hi_t = step.t0 + mid * step.h;
        } else {
            lo_theta = mid;
            lo_t = step.t0 + mid * step.h;
        }
        if (hi_theta - lo_theta).abs() < f64::EPSILON {
            break;
        }
    }
    Some(hi_theta)
}

/// A scalar function of the state; an event fires when it becomes nonnegative.
pub type Event<'a> = &'a dyn Fn(&[f64]) -> f64;

/// Integrate from `x0` for up to `t_end`, stopping early at the first event
/// whose value becomes nonnegative.
pub fn integrate_until<F: VectorField>(
    field: &F,
    x0: &[f64],
    t_end: f64,
    events: &[Event<'_>],
    cfg: &FlowConfig,
    record: bool,
) -> Result<Outcome, FlowError> {
    if !(t_end >= 0.0) {
        return Err(FlowError::BeyondHorizon {
            t: t_end,
            horizon: cfg.horizon,
        });
    }
    let t_end = t_end.min(cfg.horizon);
    let mut solver = Solver::new(field, x0, *cfg)?;
    let mut traj = record.then(|| Trajectory::new(x0));
    for (i, ev) in events.iter().enumerate() {
        if ev(x0) >= 0.0 {
            return Ok(Outcome {
                time: 0.0,
                state: x0.to_vec(),
                event: Some(i),
                trajectory: traj,
                steps: 0,
            });
        }
    }
    let mut buf = vec![0.0; solver.n];
    while solver.t < t_end {
        let Accepted { step } = solver.step(t_end)?;
        let mut hit: Option<(f64, usize)> = None;
        for (i, ev) in events.iter().enumerate() {
            if let Some(theta) = locate(&step, *ev, &solver.x, &mut buf) {
                if hit.is_none_or(|(best, _)| theta < best) {
                    hit = Some((theta, i));
                }
            }
        }
        if let Some((theta, i)) = hit {
            let (time, state) = if theta >= 1.0 {
                (step.t1, solver.x.clone())
            } else {
                let mut s = vec![0.0; solver.n];
                step.eval_theta(theta, &mut s);
                (step.t0 + theta * step.h, s)
            };
            if let Some(tr) = traj.as_mut() {
                let mut cut = step;
                cut.t1 = time;
                tr.steps.push(cut);
                tr.times.push(time);
                tr.states.push(state.clone());
            }
            return Ok(Outcome {
                time,
                state,
                event: Some(i),
                trajectory: traj,
                steps: solver.steps,
            });
        }
        if let Some(tr) = traj.as_mut() {
            tr.times.push(step.t1());
            tr.states.push(solver.x.clone());
            tr.steps.push(step);
        }
        if !solver.t.is_finite() {
            break;
        }
    }
    Ok(Outcome {
        time: solver.t,
        state: solver.x,
        event: None,
        trajectory: traj,
        steps: solver.steps,
    })
}

/// Solve `G(t') = x0 + ∫ f(G)` on `[0, t]` with dense output.
pub fn integrate<F: VectorField>(field: &F, x0: &[f64], t: f64, cfg: &FlowConfig) -> Result<Trajectory, FlowError> {
    check_horizon(t, cfg)?;
    let out = integrate_until(field, x0, t, &[], cfg, true)?;
    Ok(out.trajectory.unwrap())
}

/// State at time `t`, without storing the trajectory.
pub fn flow<F: VectorField>(field: &F, x0: &[f64], t: f64, cfg: &FlowConfig) -> Result<Vec<f64>, FlowError> {
    check_horizon(t, cfg)?;
    if t == 0.0 {
        if x0.len() != field.dim() {
            return Err(FlowError::InvalidState);
        }
        return Ok(x0.to_vec());
    }
    Ok(integrate_until(field, x0, t, &[], cfg, false)?.state)
}

fn check_horizon(t: f64, cfg: &FlowConfig) -> Result<(), FlowError> {
    if !(t >= 0.0) || t > cfg.horizon {
        return Err(FlowError::BeyondHorizon {
            t,
            horizon: cfg.horizon,
        });
    }
    Ok(())
}

/// First time the guard becomes true along the flow from `x0`.
pub fn exit_time<F: VectorField>(field: &F, x0: &[f64], guard: Event<'_>, cfg: &FlowConfig) -> Result<Exit, FlowError> {
    let out = integrate_until(field, x0, cfg.horizon, &[guard], cfg, false)?;
    Ok(match out.event {
        Some(_) => Exit::Hit {
            time: out.time,
            state: out.state,
        },
        None => Exit::NoExit {
            horizon: out.time,
            state: out.state,
        },
    })
}

/// First time `∫₀ᵗ intensity(Φ(s)) ds` reaches `stop_level`.
pub fn integrate_with_accumulator<F: VectorField>(
    field: &F,
    x0: &[f64],
    intensity: Event<'_>,
    stop_level: f64,
    cfg: &FlowConfig,
) -> Result<Exit, FlowError> {
    let aug = Accumulated {
        inner: field,
        intensity,
    };
    let n = field.dim();
    let mut y0 = x0.to_vec();
    y0.push(0.0);
    let level = move |y: &[f64]| y[n] - stop_level;
    let out = integrate_until(&aug, &y0, cfg.horizon, &[&level], cfg, false)?;
    let mut state = out.state;
    state.truncate(n);
    Ok(match out.event {
        Some(_) => Exit::Hit { time: out.time, state },
        None => Exit::NoExit {
            horizon: out.time,
            state,
        },
    })
}

/// Advance `field` and the scalar accumulator together until the horizon,
/// the guard, or the accumulator level, whichever comes first. Returns the
/// outcome with the accumulator value appended to the state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn flow_with_accumulator<F: VectorField>(
    field: &F,
    x0: &[f64],
    intensity: Event<'_>,
    stop_level: f64,
    guard: Option<Event<'_>>,
    duration: f64,
    cfg: &FlowConfig,
    record: bool,
) -> Result<Outcome, FlowError> {
    let aug = Accumulated {
        inner: field,
        intensity,
    };
    let n = field.dim();
    let mut y0 = x0.to_vec();
    y0.push(0.0);
    let level = move |y: &[f64]| y[n] - stop_level;
    let guard_aug = guard.map(|g| move |y: &[f64]| g(&y[..n]));
    let mut events: Vec<Event<'_>> = Vec::new();
    if let Some(g) = guard_aug.as_ref() {
        events.push(g);
    }
    events.push(&level);
    integrate_until(&aug, &y0, duration, &events, cfg, record)
}

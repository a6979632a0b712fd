//! Stochastic semantics: noisy dispensing, random equilibration times and
//! per-run rate perturbation, plus compilation of a protocol to an explicit
//! PDMP.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::Open01;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::ast::{check_linear, desugar, Protocol, VarName, Violation};
use crate::crn::Crn;
use crate::integrator::{FlowConfig, VectorField};
use crate::noise::{
    DispenseNoise, EquilibrateNoise, NoiseConfig, NoiseConfigError, ObserveNoise, RandomStream, RateNoise,
    SamplingError, REJECTION_CAP,
};
use crate::pdmp::{execute, ExecConfig, ExitCause, HybridPath, Pdmp, PdmpError};
use crate::sample::{EvalResult, Observation, Sample};
use crate::sem_det::{eval_with, Choices, Env, EvalError, Trace};

/// Child index of the stream used for rate perturbation.
pub const RATES_STREAM: u64 = u64::MAX;

fn truncated_normal<R: Rng + ?Sized>(
    centre: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<f64, SamplingError> {
    let too_tight = || SamplingError::TruncationTooTight {
        centre,
        sigma,
        lo,
        hi,
        attempts: REJECTION_CAP,
    };
    let normal = Normal::new(centre, sigma).map_err(|_| too_tight())?;
    for _ in 0..REJECTION_CAP {
        let x = normal.sample(rng);
        if x > lo && x < hi {
            return Ok(x);
        }
    }
    Err(too_tight())
}

/// Actual fraction for a nominal dispense of fraction `p` from `volume`.
pub fn sample_dispense_fraction<R: Rng + ?Sized>(
    noise: &DispenseNoise,
    volume: f64,
    p: f64,
    rng: &mut R,
) -> Result<f64, SamplingError> {
    let sigma = noise.sigma(volume);
    match noise {
        DispenseNoise::TruncatedGaussian { bounds: (lo, hi), .. } if sigma > 0.0 => {
            truncated_normal(p, sigma, *lo, *hi, rng)
        }
        _ => Ok(p),
    }
}

/// Inverse transform for an exponential time with mean `t`.
pub fn equilibrate_time_from_uniform(t: f64, u: f64) -> f64 {
    -t * libm::log(u)
}

pub fn sample_equilibrate_time<R: Rng + ?Sized>(t: f64, rng: &mut R) -> Result<f64, SamplingError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(SamplingError::NonpositiveEquilibrateTime(t));
    }
    let u: f64 = rng.sample(Open01);
    Ok(equilibrate_time_from_uniform(t, u))
}

/// Rate constants drawn once for a whole run.
pub fn perturb_rates<R: Rng + ?Sized>(crn: &Crn, noise: &RateNoise, rng: &mut R) -> Result<Crn, SamplingError> {
    let rates = crn.rates();
    let sigmas: Vec<f64> = match noise {
        RateNoise::None => return Ok(crn.clone()),
        RateNoise::SubPoisson => rates.iter().map(|k| libm::sqrt(k / 2.0)).collect(),
        RateNoise::Gaussian { sigma } => {
            if sigma.len() != rates.len() {
                return Err(NoiseConfigError::RateCount {
                    found: sigma.len(),
                    expected: rates.len(),
                }
                .into());
            }
            sigma.clone()
        }
    };
    let mut drawn = Vec::with_capacity(rates.len());
    for (k, s) in rates.iter().zip(&sigmas) {
        drawn.push(if *s > 0.0 {
            truncated_normal(*k, *s, 0.0, f64::INFINITY, rng)?
        } else {
            *k
        });
    }
    Ok(crn.with_rates(&drawn).expect("positive draws"))
}

/// Per-node random choices from a run stream.
struct Stochastic<'a> {
    noise: &'a NoiseConfig,
    stream: RandomStream,
}

impl Choices for Stochastic<'_> {
    fn dispense_fraction(&mut self, node: usize, volume: f64, p: f64) -> Result<f64, EvalError> {
        let mut rng = self.stream.child(node as u64).rng();
        sample_dispense_fraction(&self.noise.dispense, volume, p, &mut rng)
            .map_err(|source| EvalError::Sampling { node, source })
    }

    fn equilibrate_time(&mut self, node: usize, t: f64) -> Result<f64, EvalError> {
        match self.noise.equilibrate {
            EquilibrateNoise::Deterministic => Ok(t),
            EquilibrateNoise::Exponential => {
                let mut rng = self.stream.child(node as u64).rng();
                sample_equilibrate_time(t, &mut rng).map_err(|source| EvalError::Sampling { node, source })
            }
        }
    }

    fn observe(&mut self, node: usize, conc: &mut [f64]) -> Result<(), EvalError> {
        if let ObserveNoise::AdditiveGaussian { sigma } = self.noise.observe_noise {
            if sigma > 0.0 {
                let mut rng = self.stream.child(node as u64).rng();
                add_observation_noise(sigma, conc, &mut rng);
            }
        }
        Ok(())
    }
}

fn add_observation_noise<R: Rng + ?Sized>(sigma: f64, conc: &mut [f64], rng: &mut R) {
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    for c in conc {
        *c += normal.sample(rng);
    }
}

/// One stochastic execution driven by `stream` (one run's stream).
pub fn eval_stoch(
    p: &Protocol,
    crn: &Crn,
    env: &Env,
    cfg: &FlowConfig,
    noise: &NoiseConfig,
    stream: RandomStream,
) -> Result<EvalResult, EvalError> {
    eval_stoch_with(p, crn, env, cfg, noise, stream, None)
}

pub fn eval_stoch_traced(
    p: &Protocol,
    crn: &Crn,
    env: &Env,
    cfg: &FlowConfig,
    noise: &NoiseConfig,
    stream: RandomStream,
) -> Result<(EvalResult, Vec<Trace>), EvalError> {
    let mut traces = Vec::new();
    let r = eval_stoch_with(p, crn, env, cfg, noise, stream, Some(&mut traces))?;
    Ok((r, traces))
}

fn eval_stoch_with(
    p: &Protocol,
    crn: &Crn,
    env: &Env,
    cfg: &FlowConfig,
    noise: &NoiseConfig,
    stream: RandomStream,
    traces: Option<&mut Vec<Trace>>,
) -> Result<EvalResult, EvalError> {
    noise.validate(crn.reactions().len())?;
    let perturbed;
    let run_crn = match noise.rates {
        RateNoise::None => crn,
        _ => {
            let mut rng = stream.child(RATES_STREAM).rng();
            perturbed =
                perturb_rates(crn, &noise.rates, &mut rng).map_err(|source| EvalError::Sampling { node: 0, source })?;
            &perturbed
        }
    };
    let mut choices = Stochastic { noise, stream };
    eval_with(p, run_crn, env, cfg, &mut choices, traces)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("protocol is not linear or not closed: {}", .0.first().map(|v| alloc::format!("{v}")).unwrap_or_default())]
    Linearity(Vec<Violation>),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Noise(#[from] NoiseConfigError),
    #[error("node {node}: equilibrate duration must be > 0 under exponential timing, got {duration}")]
    NonpositiveEquilibrateTime { node: usize, duration: f64 },
}

/// Register layout: `n` concentrations, volume, temperature, elapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Reg(usize);

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Load { dst: Reg, sample: Sample },
    Mix { dst: Reg, a: Reg, b: Reg },
    Dispose { reg: Reg },
    Dispense { src: Reg, a: Reg, b: Reg, p: f64 },
    Equilibrate { reg: Reg, t: f64 },
    Observe { reg: Reg, slot: usize },
}

impl Op {
    fn is_instant(&self) -> bool {
        matches!(self, Op::Load { .. } | Op::Mix { .. } | Op::Dispose { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    /// Draw the run's rate constants.
    DrawRates,
    /// Split a register by a (noisy) fraction.
    Dispense,
    /// Record an observation.
    Observe,
    /// Flow one register's rate equations.
    Equilibrate,
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
struct Mode {
    kind: ModeKind,
    op: Option<Op>,
    /// Instantaneous operations folded into this mode's reset.
    then: Vec<Op>,
}

/// A protocol compiled to a PDMP over the hybrid state
/// `[registers | rates | clock | mode timer | observation slots]`.
#[derive(Debug, Clone)]
pub struct CompiledProtocol {
    crn: Crn,
    noise: NoiseConfig,
    n: usize,
    registers: usize,
    modes: Vec<Mode>,
    result: Reg,
    result_obs: Vec<(usize, u64)>,
    obs_slots: usize,
    initial: Vec<f64>,
}

struct Compiler<'a> {
    crn: &'a Crn,
    noise: &'a NoiseConfig,
    ops: Vec<Op>,
    registers: usize,
    obs: Vec<Vec<(usize, u64)>>,
    slots: usize,
    env: Vec<(VarName, Reg)>,
    next: usize,
}

impl Compiler<'_> {
    fn reg(&mut self) -> Reg {
        self.registers += 1;
        self.obs.push(Vec::new());
        Reg(self.registers - 1)
    }

    fn go(&mut self, p: &Protocol) -> Result<Reg, CompileError> {
        let node = self.next;
        self.next += 1;
        Ok(match p {
            Protocol::Var(x) => self
                .env
                .iter()
                .rev()
                .find(|(n, _)| n == x)
                .map(|(_, r)| *r)
                .ok_or_else(|| EvalError::UnboundVariable(x.clone()))?,
            Protocol::Initial(s) => {
                let expected = self.crn.species_count();
                if s.conc.len() != expected {
                    return Err(EvalError::Dimension {
                        node,
                        found: s.conc.len(),
                        expected,
                    }
                    .into());
                }
                s.validate().map_err(|source| EvalError::Sample { node, source })?;
                let dst = self.reg();
                self.ops.push(Op::Load { dst, sample: s.clone() });
                dst
            }
            Protocol::Mix(a, b) => {
                let a = self.go(a)?;
                let b = self.go(b)?;
                let dst = self.reg();
                let mut obs = core::mem::take(&mut self.obs[a.0]);
                obs.extend(core::mem::take(&mut self.obs[b.0]));
                self.obs[dst.0] = obs;
                self.ops.push(Op::Mix { dst, a, b });
                dst
            }
            Protocol::Let { var, bound, body } => {
                let r = self.go(bound)?;
                self.env.push((var.clone(), r));
                let out = self.go(body)?;
                self.env.pop();
                out
            }
            Protocol::Dispense {
                first,
                second,
                source,
                fraction,
                body,
            } => {
                let src = self.go(source)?;
                if !(*fraction > 0.0 && *fraction < 1.0) {
                    return Err(EvalError::InvalidFraction {
                        node,
                        fraction: *fraction,
                    }
                    .into());
                }
                let a = self.reg();
                let b = self.reg();
                self.obs[a.0] = core::mem::take(&mut self.obs[src.0]);
                self.ops.push(Op::Dispense {
                    src,
                    a,
                    b,
                    p: *fraction,
                });
                self.env.push((first.clone(), a));
                self.env.push((second.clone().expect("desugared"), b));
                let out = self.go(body)?;
                self.env.pop();
                self.env.pop();
                out
            }
            Protocol::Equilibrate(q, t) => {
                let reg = self.go(q)?;
                if !(*t >= 0.0 && t.is_finite()) {
                    return Err(EvalError::InvalidDuration { node, duration: *t }.into());
                }
                if self.noise.equilibrate == EquilibrateNoise::Exponential && *t <= 0.0 {
                    return Err(CompileError::NonpositiveEquilibrateTime { node, duration: *t });
                }
                self.ops.push(Op::Equilibrate { reg, t: *t });
                reg
            }
            Protocol::Dispose(q) => {
                let reg = self.go(q)?;
                self.ops.push(Op::Dispose { reg });
                reg
            }
            Protocol::Observe(q, idn) => {
                let reg = self.go(q)?;
                let slot = self.slots;
                self.slots += 1;
                self.obs[reg.0].push((slot, *idn));
                self.ops.push(Op::Observe { reg, slot });
                reg
            }
        })
    }
}

/// Compile a closed, linear protocol. The initial hybrid state is
/// [`CompiledProtocol::initial_state`] in mode 0.
pub fn compile_to_pdmp(p: &Protocol, crn: &Crn, noise: &NoiseConfig) -> Result<CompiledProtocol, CompileError> {
    noise.validate(crn.reactions().len())?;
    let p = desugar(p).map_err(EvalError::from)?;
    let violations = check_linear(&p);
    if !violations.is_empty() {
        return Err(CompileError::Linearity(violations));
    }
    let mut c = Compiler {
        crn,
        noise,
        ops: Vec::new(),
        registers: 0,
        obs: Vec::new(),
        slots: 0,
        env: Vec::new(),
        next: 0,
    };
    let result = c.go(&p)?;
    let result_obs = core::mem::take(&mut c.obs[result.0]);
    let n = crn.species_count();
    let mut compiled = CompiledProtocol {
        crn: crn.clone(),
        noise: noise.clone(),
        n,
        registers: c.registers,
        modes: Vec::new(),
        result,
        result_obs,
        obs_slots: c.slots,
        initial: Vec::new(),
    };
    let mut leading = Vec::new();
    let mut modes = Vec::new();
    if noise.rates != RateNoise::None {
        modes.push(Mode {
            kind: ModeKind::DrawRates,
            op: None,
            then: Vec::new(),
        });
    }
    for op in c.ops {
        if op.is_instant() {
            match modes.last_mut() {
                Some(Mode { then, .. }) => then.push(op),
                None => leading.push(op),
            }
            continue;
        }
        let kind = match op {
            Op::Dispense { .. } => ModeKind::Dispense,
            Op::Equilibrate { .. } => ModeKind::Equilibrate,
            Op::Observe { .. } => ModeKind::Observe,
            _ => unreachable!(),
        };
        modes.push(Mode {
            kind,
            op: Some(op),
            then: Vec::new(),
        });
    }
    modes.push(Mode {
        kind: ModeKind::Terminal,
        op: None,
        then: Vec::new(),
    });
    compiled.modes = modes;
    let mut x = vec![0.0; compiled.dim()];
    let rates = compiled.crn.rates();
    x[compiled.rate_offset()..compiled.rate_offset() + rates.len()].copy_from_slice(&rates);
    for op in &leading {
        compiled.apply_instant(op, &mut x);
    }
    compiled.initial = x;
    Ok(compiled)
}

impl CompiledProtocol {
    fn stride(&self) -> usize {
        self.n + 3
    }

    fn base(&self, r: Reg) -> usize {
        r.0 * self.stride()
    }

    fn rate_offset(&self) -> usize {
        self.registers * self.stride()
    }

    fn clock(&self) -> usize {
        self.rate_offset() + self.crn.reactions().len()
    }

    fn timer(&self) -> usize {
        self.clock() + 1
    }

    fn slot_offset(&self, slot: usize) -> usize {
        self.timer() + 1 + slot * (self.n + 1)
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial
    }

    pub fn mode_kinds(&self) -> Vec<ModeKind> {
        self.modes.iter().map(|m| m.kind).collect()
    }

    /// Intensity of an equilibrating mode (`1/t` under exponential timing).
    pub fn equilibrate_rate(&self, mode: usize) -> Option<f64> {
        match (&self.modes[mode].op, self.noise.equilibrate) {
            (Some(Op::Equilibrate { t, .. }), EquilibrateNoise::Exponential) => Some(1.0 / t),
            _ => None,
        }
    }

    fn read_sample(&self, x: &[f64], r: Reg) -> Sample {
        let b = self.base(r);
        Sample {
            conc: x[b..b + self.n].to_vec(),
            volume: x[b + self.n],
            temperature: x[b + self.n + 1],
        }
    }

    fn write_sample(&self, x: &mut [f64], r: Reg, s: &Sample, elapsed: f64) {
        let b = self.base(r);
        x[b..b + self.n].copy_from_slice(&s.conc);
        x[b + self.n] = s.volume;
        x[b + self.n + 1] = s.temperature;
        x[b + self.n + 2] = elapsed;
    }

    fn elapsed(&self, x: &[f64], r: Reg) -> f64 {
        x[self.base(r) + self.n + 2]
    }

    fn apply_instant(&self, op: &Op, x: &mut [f64]) {
        match op {
            Op::Load { dst, sample } => self.write_sample(x, *dst, sample, 0.0),
            Op::Mix { dst, a, b } => {
                let sa = self.read_sample(x, *a);
                let sb = self.read_sample(x, *b);
                let mixed = sa
                    .mix(&sb)
                    .expect("same dimension")
                    .unwrap_or_else(|| Sample::empty(self.n));
                let el = self.elapsed(x, *a).max(self.elapsed(x, *b));
                self.write_sample(x, *dst, &mixed, el);
            }
            Op::Dispose { reg } => {
                let el = self.elapsed(x, *reg);
                self.write_sample(x, *reg, &Sample::empty(self.n), el);
            }
            _ => unreachable!("not instantaneous"),
        }
    }

    /// Read the protocol outcome from a terminal hybrid state.
    pub fn result(&self, x: &[f64]) -> EvalResult {
        let observations = self
            .result_obs
            .iter()
            .map(|&(slot, idn)| {
                let o = self.slot_offset(slot);
                Observation {
                    conc: x[o..o + self.n].to_vec(),
                    idn,
                    time: x[o + self.n],
                }
            })
            .collect();
        EvalResult {
            sample: self.read_sample(x, self.result),
            observations,
            elapsed: self.elapsed(x, self.result),
        }
    }

    /// Execute the compiled process to its terminal mode.
    pub fn run<R: RngCore>(&self, cfg: &ExecConfig, rng: &mut R) -> Result<(EvalResult, HybridPath), PdmpError> {
        let path = execute(self, 0, &self.initial, f64::INFINITY, cfg, rng)?;
        Ok((self.result(&path.final_state), path))
    }
}

struct CompiledField<'a> {
    c: &'a CompiledProtocol,
    active: Option<Reg>,
    moving: bool,
}

impl VectorField for CompiledField<'_> {
    fn dim(&self) -> usize {
        self.c.dim()
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        dx.iter_mut().for_each(|d| *d = 0.0);
        if !self.moving {
            return;
        }
        dx[self.c.clock()] = 1.0;
        dx[self.c.timer()] = 1.0;
        if let Some(r) = self.active {
            let b = self.c.base(r);
            let n = self.c.n;
            let ro = self.c.rate_offset();
            let rates = &x[ro..ro + self.c.crn.reactions().len()];
            let field = self.c.crn.field(x[b + n], x[b + n + 1]).with_rates(rates);
            field.eval(&x[b..b + n], &mut dx[b..b + n]);
            dx[b + n + 2] = 1.0;
        }
    }

    fn nonnegative(&self, i: usize) -> bool {
        i < self.c.rate_offset() && i % self.c.stride() < self.c.n
    }
}

impl Pdmp for CompiledProtocol {
    fn dim(&self) -> usize {
        self.timer() + 1 + self.obs_slots * (self.n + 1)
    }

    fn mode_count(&self) -> usize {
        self.modes.len()
    }

    fn vector_field(&self, mode: usize) -> Box<dyn VectorField + '_> {
        let active = match &self.modes[mode].op {
            Some(Op::Equilibrate { reg, .. }) => Some(*reg),
            _ => None,
        };
        Box::new(CompiledField {
            c: self,
            active,
            moving: self.modes[mode].kind == ModeKind::Equilibrate,
        })
    }

    fn has_guard(&self, mode: usize) -> bool {
        match self.modes[mode].kind {
            ModeKind::Equilibrate => self.equilibrate_rate(mode).is_none(),
            ModeKind::Terminal => false,
            _ => true,
        }
    }

    fn guard(&self, mode: usize, x: &[f64]) -> f64 {
        match &self.modes[mode].op {
            Some(Op::Equilibrate { t, .. }) => x[self.timer()] - t,
            _ => 0.0,
        }
    }

    fn has_intensity(&self, mode: usize) -> bool {
        self.equilibrate_rate(mode).is_some()
    }

    fn jump_rates(&self, mode: usize, _x: &[f64]) -> Vec<(usize, f64)> {
        match self.equilibrate_rate(mode) {
            Some(rate) => vec![(mode + 1, rate)],
            None => Vec::new(),
        }
    }

    fn intensity(&self, mode: usize, _x: &[f64]) -> f64 {
        self.equilibrate_rate(mode).unwrap_or(0.0)
    }

    fn reset(
        &self,
        mode: usize,
        _target: Option<usize>,
        x: &[f64],
        _cause: ExitCause,
        rng: &mut dyn RngCore,
    ) -> Result<(usize, Vec<f64>), PdmpError> {
        let m = &self.modes[mode];
        let mut y = x.to_vec();
        let fail = |e: SamplingError| PdmpError::Reset {
            mode,
            message: alloc::format!("{e}"),
        };
        match (&m.kind, &m.op) {
            (ModeKind::DrawRates, _) => {
                let crn = perturb_rates(&self.crn, &self.noise.rates, rng).map_err(fail)?;
                let ro = self.rate_offset();
                y[ro..ro + self.crn.reactions().len()].copy_from_slice(&crn.rates());
            }
            (ModeKind::Dispense, Some(Op::Dispense { src, a, b, p })) => {
                let s = self.read_sample(x, *src);
                let el = self.elapsed(x, *src);
                let q = sample_dispense_fraction(&self.noise.dispense, s.volume, *p, rng).map_err(fail)?;
                let (sa, sb) = s.split(q);
                self.write_sample(&mut y, *a, &sa, el);
                self.write_sample(&mut y, *b, &sb, el);
            }
            (ModeKind::Observe, Some(Op::Observe { reg, slot })) => {
                let o = self.slot_offset(*slot);
                let b = self.base(*reg);
                let mut conc = x[b..b + self.n].to_vec();
                if let ObserveNoise::AdditiveGaussian { sigma } = self.noise.observe_noise {
                    if sigma > 0.0 {
                        add_observation_noise(sigma, &mut conc, rng);
                    }
                }
                y[o..o + self.n].copy_from_slice(&conc);
                y[o + self.n] = self.elapsed(x, *reg);
            }
            _ => {}
        }
        for op in &m.then {
            self.apply_instant(op, &mut y);
        }
        y[self.timer()] = 0.0;
        Ok((mode + 1, y))
    }

    fn is_absorbing(&self, mode: usize) -> bool {
        self.modes[mode].kind == ModeKind::Terminal
    }
}

/// Count of modes by kind; handy for diagnostics.
pub fn mode_summary(c: &CompiledProtocol) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for m in &c.modes {
        let name = match m.kind {
            ModeKind::DrawRates => "draw_rates",
            ModeKind::Dispense => "dispense",
            ModeKind::Observe => "observe",
            ModeKind::Equilibrate => "equilibrate",
            ModeKind::Terminal => "terminal",
        };
        *out.entry(name).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crn::Reaction;
    use crate::sem_det::eval;
    use alloc::string::ToString;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn titration_crn() -> Crn {
        let names = ["H+", "Cl-", "Na+", "OH-", "H2O"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        Crn::new(
            names,
            vec![Reaction::new(vec![1, 1, 1, 1, 0], vec![0, 1, 1, 0, 1], 2.81e-10)],
        )
        .unwrap()
    }

    fn titration(t: f64) -> Protocol {
        let a = Sample::new(vec![0.1, 0.1, 0.0, 0.0, 0.0], 1e-3, 298.15).unwrap();
        let b = Sample::new(vec![0.0, 0.0, 0.1, 0.1, 0.0], 1e-3, 298.15).unwrap();
        Protocol::let_in(
            "A",
            Protocol::Initial(a),
            Protocol::let_in(
                "B",
                Protocol::Initial(b),
                Protocol::dispense_discard(
                    "a",
                    Protocol::var("A"),
                    0.5,
                    Protocol::dispense_discard(
                        "b",
                        Protocol::var("B"),
                        0.5,
                        Protocol::equilibrate(Protocol::mix(Protocol::var("a"), Protocol::var("b")), t),
                    ),
                ),
            ),
        )
    }

    #[test]
    fn degenerate_dispense_is_dirac() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert_eq!(
            sample_dispense_fraction(&DispenseNoise::None, 1.0, 0.3, &mut rng).unwrap(),
            0.3
        );
        let zero = DispenseNoise::relative(0.0, (0.1, 0.8));
        assert_eq!(sample_dispense_fraction(&zero, 1.0, 0.3, &mut rng).unwrap(), 0.3);
    }

    #[test]
    fn truncation_too_tight() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let tight = DispenseNoise::relative(1e-6, (0.1, 0.2));
        assert!(matches!(
            sample_dispense_fraction(&tight, 1.0, 0.9, &mut rng),
            Err(SamplingError::TruncationTooTight { .. })
        ));
    }

    #[test]
    fn equilibrate_time_examples() {
        assert!((equilibrate_time_from_uniform(3.0, 0.5) - 3.0 * core::f64::consts::LN_2).abs() < 1e-15);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        assert!(sample_equilibrate_time(0.0, &mut rng).is_err());
        assert!(sample_equilibrate_time(-1.0, &mut rng).is_err());
        let n = 100_000;
        let t = 10.0;
        let mean: f64 = (0..n)
            .map(|_| sample_equilibrate_time(t, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - t).abs() < 3.0 * t / (n as f64).sqrt());
    }

    #[test]
    fn rate_perturbation() {
        let crn = titration_crn();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert_eq!(
            perturb_rates(&crn, &RateNoise::None, &mut rng).unwrap().rates(),
            crn.rates()
        );
        for _ in 0..1000 {
            let k = perturb_rates(&crn, &RateNoise::SubPoisson, &mut rng).unwrap().rates()[0];
            assert!(k > 0.0);
        }
        let fixed = RateNoise::Gaussian { sigma: vec![0.0] };
        assert_eq!(perturb_rates(&crn, &fixed, &mut rng).unwrap().rates(), crn.rates());
    }

    #[test]
    fn degenerate_noise_matches_deterministic_bitwise() {
        let crn = titration_crn();
        let cfg = FlowConfig::default();
        let p = titration(1e4);
        let det = eval(&p, &crn, &Env::new(), &cfg).unwrap();
        let sto = eval_stoch(
            &p,
            &crn,
            &Env::new(),
            &cfg,
            &NoiseConfig::degenerate(),
            RandomStream::new(5),
        )
        .unwrap();
        assert_eq!(det, sto);
    }

    #[test]
    fn seed_determinism() {
        let crn = titration_crn();
        let cfg = FlowConfig::default();
        let p = Protocol::observe(titration(1e4), 3);
        let noise = NoiseConfig {
            observe_noise: ObserveNoise::AdditiveGaussian { sigma: 1e-4 },
            ..NoiseConfig::both()
        };
        let a = eval_stoch(&p, &crn, &Env::new(), &cfg, &noise, RandomStream::new(9)).unwrap();
        let b = eval_stoch(&p, &crn, &Env::new(), &cfg, &noise, RandomStream::new(9)).unwrap();
        let c = eval_stoch(&p, &crn, &Env::new(), &cfg, &noise, RandomStream::new(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn partition_is_exact_under_noise() {
        let crn = Crn::inert(vec!["X".to_string()]).unwrap();
        let s = Sample::new(vec![1.0], 0.37e-3, 300.0).unwrap();
        let p = Protocol::dispense(
            "a",
            "b",
            Protocol::Initial(s),
            0.42,
            Protocol::mix(Protocol::var("a"), Protocol::var("b")),
        );
        let noise = NoiseConfig {
            dispense: DispenseNoise::relative(0.05, (0.1, 0.9)),
            ..NoiseConfig::default()
        };
        for seed in 0..200 {
            let r = eval_stoch(
                &p,
                &crn,
                &Env::new(),
                &FlowConfig::default(),
                &noise,
                RandomStream::new(seed),
            )
            .unwrap();
            assert_eq!(r.sample.volume, 0.37e-3);
        }
    }

    #[test]
    fn compile_shapes() {
        let crn = titration_crn();
        let s = Sample::new(vec![0.1; 5], 1e-3, 298.15).unwrap();
        let single = Protocol::equilibrate(Protocol::Initial(s), 30.0);
        let noise = NoiseConfig::protocol_only();
        let c = compile_to_pdmp(&single, &crn, &noise).unwrap();
        assert_eq!(c.mode_kinds(), vec![ModeKind::Equilibrate, ModeKind::Terminal]);
        assert_eq!(c.equilibrate_rate(0), Some(1.0 / 30.0));

        let c = compile_to_pdmp(&titration(10.0), &crn, &noise).unwrap();
        assert_eq!(
            c.mode_kinds(),
            vec![
                ModeKind::Dispense,
                ModeKind::Dispense,
                ModeKind::Equilibrate,
                ModeKind::Terminal
            ]
        );
        let c = compile_to_pdmp(&titration(10.0), &crn, &NoiseConfig::both()).unwrap();
        assert_eq!(c.mode_kinds()[0], ModeKind::DrawRates);

        let zero = titration(0.0);
        assert!(matches!(
            compile_to_pdmp(&zero, &crn, &noise),
            Err(CompileError::NonpositiveEquilibrateTime { .. })
        ));
        let open = Protocol::var("x");
        assert!(matches!(
            compile_to_pdmp(&open, &crn, &noise),
            Err(CompileError::Linearity(_))
        ));
    }

    #[test]
    fn compiled_deterministic_matches_eval() {
        let crn = titration_crn();
        let cfg = FlowConfig::default();
        let p = Protocol::observe(titration(1e4), 7);
        let c = compile_to_pdmp(&p, &crn, &NoiseConfig::degenerate()).unwrap();
        assert!((0..c.mode_count()).all(|q| !c.has_intensity(q)));
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let (r, _) = c.run(&ExecConfig::default(), &mut rng).unwrap();
        let det = eval(&p, &crn, &Env::new(), &cfg).unwrap();
        for (a, b) in r.sample.conc.iter().zip(&det.sample.conc) {
            assert!((a - b).abs() <= 1e-8 * b.abs() + 1e-12, "{a} vs {b}");
        }
        assert_eq!(r.sample.volume, det.sample.volume);
        assert!((r.elapsed - det.elapsed).abs() < 1e-6);
        assert_eq!(r.observations.len(), 1);
        assert_eq!(r.observations[0].idn, 7);
    }

    #[test]
    fn compiled_observation_order_follows_mix() {
        let crn = Crn::inert(vec!["X".to_string()]).unwrap();
        let s = |c| Protocol::Initial(Sample::new(vec![c], 1.0, 300.0).unwrap());
        let left = Protocol::observe(Protocol::equilibrate(s(1.0), 5.0), 1);
        let right = Protocol::observe(Protocol::equilibrate(s(3.0), 6.0), 2);
        let p = Protocol::observe(Protocol::dispose(Protocol::mix(left, right)), 1);
        let det = eval(&p, &crn, &Env::new(), &FlowConfig::default()).unwrap();
        let c = compile_to_pdmp(&p, &crn, &NoiseConfig::degenerate()).unwrap();
        let (r, _) = c
            .run(&ExecConfig::default(), &mut ChaCha12Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(r.observations.len(), det.observations.len());
        for (a, b) in r.observations.iter().zip(&det.observations) {
            assert_eq!(a.idn, b.idn);
            assert_eq!(a.conc, b.conc);
            assert!((a.time - b.time).abs() < 1e-9);
        }
        assert_eq!(r.sample, det.sample);
    }
}

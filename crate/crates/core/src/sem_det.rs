//! Deterministic evaluation of protocols with observations and elapsed
//! time.
//!
//! The evaluator is generic over [`Choices`], which supplies the dispense
//! fraction, the equilibration time and observation post-processing at each
//! node. [`Exact`] returns the nominal values; the stochastic semantics
//! plugs in random draws.

use alloc::vec::Vec;

use thiserror::Error;

use crate::ast::{desugar, AstError, Protocol, VarName};
use crate::crn::Crn;
use crate::integrator::{flow, integrate, FlowConfig, FlowError, Trajectory};
use crate::noise::{NoiseConfigError, SamplingError};
use crate::sample::{EvalResult, Observation, Sample, SampleError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(VarName),
    #[error("node {node}: dispense fraction {fraction} is outside (0, 1)")]
    InvalidFraction { node: usize, fraction: f64 },
    #[error("node {node}: equilibrate duration {duration} is not a finite value >= 0")]
    InvalidDuration { node: usize, duration: f64 },
    #[error("node {node}: sample has {found} species, network has {expected}")]
    Dimension { node: usize, found: usize, expected: usize },
    #[error("node {node}: {source}")]
    Sample { node: usize, source: SampleError },
    #[error("node {node}: {source}")]
    Flow { node: usize, source: FlowError },
    #[error(transparent)]
    Ast(#[from] AstError),
    #[error("node {node}: {source}")]
    Sampling { node: usize, source: SamplingError },
    #[error("noise configuration: {0}")]
    Noise(#[from] NoiseConfigError),
}

impl EvalError {
    /// Whether the failure comes from the dynamics rather than the input.
    pub fn is_ill_posed(&self) -> bool {
        matches!(
            self,
            EvalError::Flow {
                source: FlowError::IllPosed(_) | FlowError::TooManySteps { .. },
                ..
            }
        )
    }
}

/// Values chosen at each protocol node during evaluation.
pub trait Choices {
    /// Fraction actually dispensed at `node` for nominal fraction `p`.
    fn dispense_fraction(&mut self, node: usize, volume: f64, p: f64) -> Result<f64, EvalError>;
    /// Duration actually equilibrated at `node` for nominal duration `t`.
    fn equilibrate_time(&mut self, node: usize, t: f64) -> Result<f64, EvalError>;
    /// Recorded concentrations for an observation at `node`.
    fn observe(&mut self, node: usize, conc: &mut [f64]) -> Result<(), EvalError>;
}

/// Nominal values everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exact;

impl Choices for Exact {
    fn dispense_fraction(&mut self, _: usize, _: f64, p: f64) -> Result<f64, EvalError> {
        Ok(p)
    }
    fn equilibrate_time(&mut self, _: usize, t: f64) -> Result<f64, EvalError> {
        Ok(t)
    }
    fn observe(&mut self, _: usize, _: &mut [f64]) -> Result<(), EvalError> {
        Ok(())
    }
}

/// Variable bindings; later bindings shadow earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Env {
    bindings: Vec<(VarName, EvalResult)>,
}

impl Env {
    pub fn new() -> Self {
        Env::default()
    }

    pub fn bind(&mut self, name: VarName, value: EvalResult) {
        self.bindings.push((name, value));
    }

    pub fn lookup(&self, name: &VarName) -> Option<&EvalResult> {
        self.bindings.iter().rev().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    fn pop(&mut self) {
        self.bindings.pop();
    }
}

/// Dense trajectory of one equilibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Pre-order id of the `Equilibrate` node in the desugared protocol.
    pub node: usize,
    /// Elapsed time of the sample when equilibration started.
    pub start: f64,
    pub trajectory: Trajectory,
}

pub fn eval(p: &Protocol, crn: &Crn, env: &Env, cfg: &FlowConfig) -> Result<EvalResult, EvalError> {
    eval_with(p, crn, env, cfg, &mut Exact, None)
}

/// As [`eval`], also returning one dense trace per equilibration.
pub fn eval_traced(
    p: &Protocol,
    crn: &Crn,
    env: &Env,
    cfg: &FlowConfig,
) -> Result<(EvalResult, Vec<Trace>), EvalError> {
    let mut traces = Vec::new();
    let r = eval_with(p, crn, env, cfg, &mut Exact, Some(&mut traces))?;
    Ok((r, traces))
}

/// The observation-free projection: only the final sample.
pub fn eval_sample(p: &Protocol, crn: &Crn, env: &Env, cfg: &FlowConfig) -> Result<Sample, EvalError> {
    eval(p, crn, env, cfg).map(|r| r.sample)
}

/// Evaluate with caller-supplied choices. Discard-form dispenses are
/// desugared first; node ids refer to the desugared protocol.
pub fn eval_with<C: Choices + ?Sized>(
    p: &Protocol,
    crn: &Crn,
    env: &Env,
    cfg: &FlowConfig,
    choices: &mut C,
    traces: Option<&mut Vec<Trace>>,
) -> Result<EvalResult, EvalError> {
    let desugared;
    let p = if p.has_sugar() {
        desugared = desugar(p)?;
        &desugared
    } else {
        p
    };
    let mut ev = Evaluator {
        crn,
        cfg,
        choices,
        env: env.clone(),
        next: 0,
        traces,
    };
    ev.go(p)
}

struct Evaluator<'a, C: ?Sized> {
    crn: &'a Crn,
    cfg: &'a FlowConfig,
    choices: &'a mut C,
    env: Env,
    next: usize,
    traces: Option<&'a mut Vec<Trace>>,
}

impl<C: Choices + ?Sized> Evaluator<'_, C> {
    fn go(&mut self, p: &Protocol) -> Result<EvalResult, EvalError> {
        let node = self.next;
        self.next += 1;
        match p {
            Protocol::Var(x) => self
                .env
                .lookup(x)
                .cloned()
                .ok_or_else(|| EvalError::UnboundVariable(x.clone())),
            Protocol::Initial(s) => {
                let expected = self.crn.species_count();
                if s.conc.len() != expected {
                    return Err(EvalError::Dimension {
                        node,
                        found: s.conc.len(),
                        expected,
                    });
                }
                s.validate().map_err(|source| EvalError::Sample { node, source })?;
                Ok(EvalResult::fresh(s.clone()))
            }
            Protocol::Mix(a, b) => {
                let ra = self.go(a)?;
                let rb = self.go(b)?;
                let sample = match ra
                    .sample
                    .mix(&rb.sample)
                    .map_err(|source| EvalError::Sample { node, source })?
                {
                    Some(s) => s,
                    None => {
                        log::warn!("node {node}: mixing two empty samples gives an empty sample");
                        Sample::empty(self.crn.species_count())
                    }
                };
                let mut observations = ra.observations;
                observations.extend(rb.observations);
                Ok(EvalResult {
                    sample,
                    observations,
                    elapsed: ra.elapsed.max(rb.elapsed),
                })
            }
            Protocol::Let { var, bound, body } => {
                let r = self.go(bound)?;
                self.env.bind(var.clone(), r);
                let out = self.go(body);
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
                let r = self.go(source)?;
                if !(*fraction > 0.0 && *fraction < 1.0) {
                    return Err(EvalError::InvalidFraction {
                        node,
                        fraction: *fraction,
                    });
                }
                let p = self.choices.dispense_fraction(node, r.sample.volume, *fraction)?;
                let (a, b) = r.sample.split(p);
                let rest = EvalResult {
                    sample: b,
                    observations: Vec::new(),
                    elapsed: r.elapsed,
                };
                let kept = EvalResult {
                    sample: a,
                    observations: r.observations,
                    elapsed: r.elapsed,
                };
                self.env.bind(first.clone(), kept);
                let second = second.as_ref().expect("desugared");
                self.env.bind(second.clone(), rest);
                let out = self.go(body);
                self.env.pop();
                self.env.pop();
                out
            }
            Protocol::Equilibrate(q, t) => {
                let mut r = self.go(q)?;
                if !(*t >= 0.0 && t.is_finite()) {
                    return Err(EvalError::InvalidDuration { node, duration: *t });
                }
                let dt = self.choices.equilibrate_time(node, *t)?;
                if dt > 0.0 {
                    let field = self.crn.field(r.sample.volume, r.sample.temperature);
                    let start = r.elapsed;
                    let conc = match self.traces.as_deref_mut() {
                        Some(traces) => {
                            let tr = integrate(&field, &r.sample.conc, dt, self.cfg)
                                .map_err(|source| EvalError::Flow { node, source })?;
                            let end = tr.final_state().to_vec();
                            traces.push(Trace {
                                node,
                                start,
                                trajectory: tr,
                            });
                            end
                        }
                        None => flow(&field, &r.sample.conc, dt, self.cfg)
                            .map_err(|source| EvalError::Flow { node, source })?,
                    };
                    r.sample.conc = conc;
                }
                r.elapsed += dt;
                Ok(r)
            }
            Protocol::Dispose(q) => {
                let mut r = self.go(q)?;
                r.sample = Sample::empty(self.crn.species_count());
                Ok(r)
            }
            Protocol::Observe(q, idn) => {
                let mut r = self.go(q)?;
                let mut conc = r.sample.conc.clone();
                self.choices.observe(node, &mut conc)?;
                r.observations.push(Observation {
                    conc,
                    idn: *idn,
                    time: r.elapsed,
                });
                Ok(r)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::substitute;
    use crate::crn::Reaction;
    use alloc::string::ToString;
    use alloc::vec;

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

    fn titration(p1: f64, p2: f64, t: f64, b_h: f64) -> Protocol {
        let a = Sample::new(vec![0.1, 0.1, 0.0, 0.0, 0.0], 1e-3, 298.15).unwrap();
        let b = Sample::new(vec![b_h, 0.0, 0.1, 0.1, 0.0], 1e-3, 298.15).unwrap();
        Protocol::let_in(
            "A",
            Protocol::Initial(a),
            Protocol::let_in(
                "B",
                Protocol::Initial(b),
                Protocol::dispense_discard(
                    "a",
                    Protocol::var("A"),
                    p1,
                    Protocol::dispense_discard(
                        "b",
                        Protocol::var("B"),
                        p2,
                        Protocol::equilibrate(Protocol::mix(Protocol::var("a"), Protocol::var("b")), t),
                    ),
                ),
            ),
        )
    }

    fn cfg() -> FlowConfig {
        FlowConfig::default()
    }

    #[test]
    fn mix_example() {
        let crn = Crn::inert(vec!["X".to_string()]).unwrap();
        let s = |c| Protocol::Initial(Sample::new(vec![c], 1.0, 300.0).unwrap());
        let r = eval(&Protocol::mix(s(1.0), s(3.0)), &crn, &Env::new(), &cfg()).unwrap();
        assert_eq!(r.sample, Sample::new(vec![2.0], 2.0, 300.0).unwrap());
    }

    #[test]
    fn titration_initial_mix() {
        let crn = titration_crn();
        for (p1, p2) in [(0.5, 0.5), (0.3, 0.3)] {
            let r = eval(&titration(p1, p2, 0.0, 0.0), &crn, &Env::new(), &cfg()).unwrap();
            let expected = 0.1 * p1 / (p1 + p2);
            assert!((r.sample.conc[0] - expected).abs() < 1e-15);
            let h = 10f64.powf(-7.4);
            let r = eval(&titration(p1, p2, 0.0, h), &crn, &Env::new(), &cfg()).unwrap();
            let expected = (p1 * 0.1 + p2 * h) / (p1 + p2);
            assert!((r.sample.conc[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let crn = titration_crn();
        let r = eval(&titration(0.5, 0.5, 0.0, 0.0), &crn, &Env::new(), &cfg()).unwrap();
        let a = Sample::new(vec![0.1, 0.1, 0.0, 0.0, 0.0], 0.5e-3, 298.15).unwrap();
        let b = Sample::new(vec![0.0, 0.0, 0.1, 0.1, 0.0], 0.5e-3, 298.15).unwrap();
        assert_eq!(r.sample, a.mix(&b).unwrap().unwrap());
        assert_eq!(r.elapsed, 0.0);
    }

    #[test]
    fn titration_closed_form() {
        let crn = titration_crn();
        let t = 1e4;
        let r = eval(&titration(0.5, 0.5, t, 0.0), &crn, &Env::new(), &cfg()).unwrap();
        let (c0, n0, k) = (0.05, 0.05, 2.81e-10);
        let exact = c0 / (1.0 + k * n0 * n0 * c0 * t);
        assert!(((r.sample.conc[0] - exact) / exact).abs() < 10.0 * cfg().rel_tol);
        assert_eq!(r.elapsed, t);
    }

    #[test]
    fn env_and_errors() {
        let crn = titration_crn();
        let mut env = Env::new();
        let s = Sample::new(vec![0.0; 5], 1.0, 1.0).unwrap();
        env.bind("z".into(), EvalResult::fresh(s.clone()));
        assert_eq!(eval(&Protocol::var("z"), &crn, &env, &cfg()).unwrap().sample, s);
        assert!(matches!(
            eval(&Protocol::var("w"), &crn, &env, &cfg()),
            Err(EvalError::UnboundVariable(_))
        ));
        let bad = Protocol::dispense("a", "b", Protocol::var("z"), 1.0, Protocol::var("a"));
        assert!(matches!(
            eval(&bad, &crn, &env, &cfg()),
            Err(EvalError::InvalidFraction { .. })
        ));
        let bad = Protocol::equilibrate(Protocol::var("z"), -1.0);
        assert!(matches!(
            eval(&bad, &crn, &env, &cfg()),
            Err(EvalError::InvalidDuration { .. })
        ));
        let wrong = Protocol::Initial(Sample::new(vec![1.0], 1.0, 1.0).unwrap());
        assert!(matches!(
            eval(&wrong, &crn, &env, &cfg()),
            Err(EvalError::Dimension { .. })
        ));
    }

    #[test]
    fn mixing_two_disposed_samples() {
        let crn = Crn::inert(vec!["X".to_string()]).unwrap();
        let s = Protocol::Initial(Sample::new(vec![1.0], 1.0, 300.0).unwrap());
        let p = Protocol::mix(Protocol::dispose(s.clone()), Protocol::dispose(s));
        let r = eval(&p, &crn, &Env::new(), &cfg()).unwrap();
        assert_eq!(r.sample, Sample::empty(1));
    }

    #[test]
    fn observations_and_elapsed() {
        let crn = Crn::inert(vec!["X".to_string()]).unwrap();
        let s = |c| Protocol::Initial(Sample::new(vec![c], 1.0, 300.0).unwrap());
        let left = Protocol::observe(Protocol::equilibrate(s(1.0), 5.0), 1);
        let right = Protocol::observe(Protocol::equilibrate(Protocol::equilibrate(s(3.0), 2.0), 4.0), 2);
        let p = Protocol::observe(Protocol::dispose(Protocol::mix(left, right)), 1);
        let r = eval(&p, &crn, &Env::new(), &cfg()).unwrap();
        let got: Vec<_> = r.observations.iter().map(|o| (o.idn, o.time, o.conc[0])).collect();
        assert_eq!(got, vec![(1, 5.0, 1.0), (2, 6.0, 3.0), (1, 6.0, 0.0)]);
        assert_eq!(r.elapsed, 6.0);
    }

    #[test]
    fn let_equals_substitution() {
        let crn = titration_crn();
        let p = titration(0.4, 0.6, 100.0, 0.0);
        let Protocol::Let { var, bound, body } = &p else {
            unreachable!()
        };
        let q = substitute(body, var, bound).unwrap();
        let a = eval(&p, &crn, &Env::new(), &cfg()).unwrap();
        let b = eval(&q, &crn, &Env::new(), &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn traces_cover_each_equilibration() {
        let crn = titration_crn();
        let (r, traces) = eval_traced(&titration(0.5, 0.5, 50.0, 0.0), &crn, &Env::new(), &cfg()).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].trajectory.final_state(), r.sample.conc.as_slice());
        assert_eq!(traces[0].trajectory.end_time(), 50.0);
    }
}

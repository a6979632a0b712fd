//! Random closed, linear protocols and small reference interpreters used by
//! the property tests.
#![allow(dead_code)]

use std::collections::HashMap;

use bioproto_core::ast::{BinderRef, BinderSlot, Protocol, VarName};
use bioproto_core::crn::{Crn, Reaction};
use bioproto_core::sample::{EvalResult, Sample};
use rand::Rng;

pub struct Gen<'a, R: Rng> {
    pub rng: &'a mut R,
    pub species: usize,
    /// Probability weight of `Dispose` nodes.
    pub dispose: bool,
    pub max_time: f64,
    names: usize,
    next_obs: u64,
}

impl<'a, R: Rng> Gen<'a, R> {
    pub fn new(rng: &'a mut R, species: usize) -> Self {
        Gen {
            rng,
            species,
            dispose: true,
            max_time: 5.0,
            names: 0,
            next_obs: 1,
        }
    }

    fn fresh(&mut self) -> VarName {
        self.names += 1;
        VarName::from(format!("v{}", self.names).as_str())
    }

    pub fn sample(&mut self) -> Sample {
        let conc = (0..self.species)
            .map(|_| {
                if self.rng.random_bool(0.2) {
                    0.0
                } else {
                    self.rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let volume = self.rng.random_range(1e-4..1e-2);
        let temperature = self.rng.random_range(280.0..320.0);
        Sample::new(conc, volume, temperature).unwrap()
    }

    fn fraction(&mut self) -> f64 {
        self.rng.random_range(0.05..0.95)
    }

    fn time(&mut self) -> f64 {
        if self.rng.random_bool(0.1) {
            0.0
        } else {
            self.rng.random_range(0.0..self.max_time)
        }
    }

    fn obs(&mut self) -> u64 {
        self.next_obs += 1;
        self.next_obs - 1
    }

    /// A closed protocol in which every binder is used exactly once.
    pub fn closed(&mut self, depth: u32) -> Protocol {
        if depth == 0 {
            return Protocol::Initial(self.sample());
        }
        let d = depth - 1;
        match self.rng.random_range(0..9) {
            0 => Protocol::Initial(self.sample()),
            1 | 2 => Protocol::mix(self.closed(d), self.closed(d)),
            3 => {
                let t = self.time();
                Protocol::equilibrate(self.closed(d), t)
            }
            4 if self.dispose => Protocol::dispose(self.closed(d)),
            4 | 5 => {
                let id = self.obs();
                Protocol::observe(self.closed(d), id)
            }
            6 => {
                let x = self.fresh();
                let bound = self.closed(d);
                let body = self.with_hole(d, &x);
                Protocol::let_in(x.as_str(), bound, body)
            }
            7 => {
                let (a, b) = (self.fresh(), self.fresh());
                let source = self.closed(d);
                let p = self.fraction();
                let body = Protocol::mix(self.with_hole(d, &a), self.with_hole(d, &b));
                Protocol::dispense(a.as_str(), b.as_str(), source, p, body)
            }
            _ => {
                let a = self.fresh();
                let source = self.closed(d);
                let p = self.fraction();
                let body = self.with_hole(d, &a);
                Protocol::dispense_discard(a.as_str(), source, p, body)
            }
        }
    }

    /// A protocol with exactly one free occurrence of `x` and nothing else
    /// free.
    pub fn with_hole(&mut self, depth: u32, x: &VarName) -> Protocol {
        if depth == 0 {
            return Protocol::Var(x.clone());
        }
        let d = depth - 1;
        match self.rng.random_range(0..9) {
            0 => Protocol::Var(x.clone()),
            1 => Protocol::mix(self.with_hole(d, x), self.closed(d)),
            2 => Protocol::mix(self.closed(d), self.with_hole(d, x)),
            3 => {
                let t = self.time();
                Protocol::equilibrate(self.with_hole(d, x), t)
            }
            4 if self.dispose => Protocol::dispose(self.with_hole(d, x)),
            4 | 5 => {
                let id = self.obs();
                Protocol::observe(self.with_hole(d, x), id)
            }
            6 => {
                let y = self.fresh();
                let bound = self.with_hole(d, x);
                let body = self.with_hole(d, &y);
                Protocol::let_in(y.as_str(), bound, body)
            }
            7 => {
                let y = self.fresh();
                let bound = self.closed(d);
                let body = Protocol::mix(self.with_hole(d, &y), self.with_hole(d, x));
                Protocol::let_in(y.as_str(), bound, body)
            }
            _ => {
                let (a, b) = (self.fresh(), self.fresh());
                let source = self.with_hole(d, x);
                let p = self.fraction();
                let body = Protocol::mix(self.with_hole(d, &a), self.with_hole(d, &b));
                Protocol::dispense(a.as_str(), b.as_str(), source, p, body)
            }
        }
    }
}

/// Networks used by the generated protocols.
pub fn inert(species: usize) -> Crn {
    Crn::inert((0..species).map(|i| format!("S{i}")).collect()).unwrap()
}

pub fn reacting() -> Crn {
    Crn::new(
        vec!["A".into(), "B".into(), "C".into()],
        vec![
            Reaction::new(vec![1, 1, 0], vec![0, 0, 1], 1.0),
            Reaction::new(vec![0, 0, 1], vec![1, 1, 0], 0.5),
            Reaction::new(vec![2, 0, 0], vec![0, 1, 0], 0.3),
        ],
    )
    .unwrap()
}

/// Every binder in `p`, addressed for `alpha_rename`.
pub fn binders(p: &Protocol) -> Vec<BinderRef> {
    fn go(p: &Protocol, path: &mut Vec<usize>, out: &mut Vec<BinderRef>) {
        match p {
            Protocol::Let { .. } => out.push(BinderRef {
                path: path.clone(),
                slot: BinderSlot::First,
            }),
            Protocol::Dispense { second, .. } => {
                out.push(BinderRef {
                    path: path.clone(),
                    slot: BinderSlot::First,
                });
                if second.is_some() {
                    out.push(BinderRef {
                        path: path.clone(),
                        slot: BinderSlot::Second,
                    });
                }
            }
            _ => {}
        }
        for (i, c) in p.children().into_iter().enumerate() {
            path.push(i);
            go(c, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    go(p, &mut Vec::new(), &mut out);
    out
}

/// Moles per species, tracked without concentrations: the reference for
/// reaction-free protocols. Returns the final moles and the total disposed.
pub fn moles(p: &Protocol, species: usize) -> (Vec<f64>, Vec<f64>) {
    fn go(p: &Protocol, env: &mut HashMap<String, Vec<f64>>, disposed: &mut Vec<f64>) -> Vec<f64> {
        match p {
            Protocol::Var(x) => env.remove(x.as_str()).expect("linear"),
            Protocol::Initial(s) => s.conc.iter().map(|c| c * s.volume).collect(),
            Protocol::Mix(a, b) => {
                let a = go(a, env, disposed);
                let b = go(b, env, disposed);
                a.iter().zip(&b).map(|(x, y)| x + y).collect()
            }
            Protocol::Let { var, bound, body } => {
                let v = go(bound, env, disposed);
                env.insert(var.as_str().into(), v);
                go(body, env, disposed)
            }
            Protocol::Dispense {
                first,
                second,
                source,
                fraction,
                body,
            } => {
                let m = go(source, env, disposed);
                let kept: Vec<f64> = m.iter().map(|x| x * fraction).collect();
                let rest: Vec<f64> = m.iter().zip(&kept).map(|(x, k)| x - k).collect();
                env.insert(first.as_str().into(), kept);
                match second {
                    Some(s) => {
                        env.insert(s.as_str().into(), rest);
                    }
                    None => {
                        for (d, r) in disposed.iter_mut().zip(&rest) {
                            *d += r;
                        }
                    }
                }
                go(body, env, disposed)
            }
            Protocol::Equilibrate(q, _) | Protocol::Observe(q, _) => go(q, env, disposed),
            Protocol::Dispose(q) => {
                let m = go(q, env, disposed);
                for (d, x) in disposed.iter_mut().zip(&m) {
                    *d += x;
                }
                vec![0.0; m.len()]
            }
        }
    }
    let mut disposed = vec![0.0; species];
    let out = go(p, &mut HashMap::new(), &mut disposed);
    (out, disposed)
}

/// Moles present in all `Initial` leaves.
pub fn initial_moles(p: &Protocol, species: usize) -> Vec<f64> {
    let mut total = vec![0.0; species];
    p.for_each_node(&mut |_, q| {
        if let Protocol::Initial(s) = q {
            for (t, c) in total.iter_mut().zip(&s.conc) {
                *t += c * s.volume;
            }
        }
    });
    total
}

/// Elapsed time of the result: maxima at joins, sums along chains.
pub fn elapsed(p: &Protocol) -> f64 {
    fn go(p: &Protocol, env: &mut HashMap<String, f64>) -> f64 {
        match p {
            Protocol::Var(x) => env[x.as_str()],
            Protocol::Initial(_) => 0.0,
            Protocol::Mix(a, b) => go(a, env).max(go(b, env)),
            Protocol::Let { var, bound, body } => {
                let t = go(bound, env);
                env.insert(var.as_str().into(), t);
                go(body, env)
            }
            Protocol::Dispense {
                first,
                second,
                source,
                body,
                ..
            } => {
                let t = go(source, env);
                env.insert(first.as_str().into(), t);
                if let Some(s) = second {
                    env.insert(s.as_str().into(), t);
                }
                go(body, env)
            }
            Protocol::Equilibrate(q, t) => go(q, env) + t,
            Protocol::Dispose(q) | Protocol::Observe(q, _) => go(q, env),
        }
    }
    go(p, &mut HashMap::new())
}

/// Bitwise equality of two results.
pub fn same_bits(a: &EvalResult, b: &EvalResult) -> bool {
    let v = |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
    v(&a.sample.conc, &b.sample.conc)
        && a.sample.volume.to_bits() == b.sample.volume.to_bits()
        && a.sample.temperature.to_bits() == b.sample.temperature.to_bits()
        && a.elapsed.to_bits() == b.elapsed.to_bits()
        && a.observations.len() == b.observations.len()
        && a.observations
            .iter()
            .zip(&b.observations)
            .all(|(o, p)| o.idn == p.idn && o.time.to_bits() == p.time.to_bits() && v(&o.conc, &p.conc))
}

/// `|a - b| <= tol * scale` per coordinate.
pub fn close(a: &[f64], b: &[f64], scale: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .zip(scale)
            .all(|((x, y), s)| (x - y).abs() <= tol * s.max(f64::MIN_POSITIVE))
}

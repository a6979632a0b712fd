//! Interval predicates on protocol outcomes:
//! `Output in [3.0e-4, 3.5e-4] at final` or `... at obs:<idn>`.

use std::fmt;

use bioproto_core::crn::Crn;
use bioproto_core::sample::EvalResult;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum At {
    Final,
    Observation(u64),
}

/// `lo <= conc[species] <= hi`, concentrations in the network's unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub species: String,
    pub lo: f64,
    pub hi: f64,
    pub at: At,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredicateError {
    #[error("malformed predicate `{0}`, expected `<species> in [<lo>, <hi>] at final|obs:<idn>`")]
    Syntax(String),
    #[error("empty interval [{0}, {1}]")]
    Interval(f64, f64),
    #[error("unknown species `{0}`")]
    Species(String),
    #[error("no observation with id {0}")]
    MissingObservation(u64),
}

fn bound(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" | "∞" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok().filter(|v: &f64| !v.is_nan()),
    }
}

impl Predicate {
    pub fn parse(text: &str) -> Result<Predicate, PredicateError> {
        let err = || PredicateError::Syntax(text.to_string());
        let (species, rest) = text.trim().split_once(" in ").ok_or_else(err)?;
        let rest = rest.trim_start().strip_prefix('[').ok_or_else(err)?;
        let (interval, rest) = rest.split_once(']').ok_or_else(err)?;
        let (lo, hi) = interval.split_once(',').ok_or_else(err)?;
        let (lo, hi) = (bound(lo).ok_or_else(err)?, bound(hi).ok_or_else(err)?);
        let at = rest.trim().strip_prefix("at").ok_or_else(err)?.trim();
        let at = match at {
            "final" => At::Final,
            _ => At::Observation(at.strip_prefix("obs:").and_then(|i| i.parse().ok()).ok_or_else(err)?),
        };
        if lo > hi {
            return Err(PredicateError::Interval(lo, hi));
        }
        let species = species.trim().to_string();
        if species.is_empty() {
            return Err(err());
        }
        Ok(Predicate { species, lo, hi, at })
    }

    /// Resolve the species against a network.
    pub fn bind<'a>(&'a self, crn: &Crn) -> Result<BoundPredicate<'a>, PredicateError> {
        let index = crn
            .species_index(&self.species)
            .ok_or_else(|| PredicateError::Species(self.species.clone()))?;
        Ok(BoundPredicate { pred: self, index })
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in [{}, {}] at ", self.species, self.lo, self.hi)?;
        match self.at {
            At::Final => f.write_str("final"),
            At::Observation(i) => write!(f, "obs:{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundPredicate<'a> {
    pub pred: &'a Predicate,
    pub index: usize,
}

impl BoundPredicate<'_> {
    pub fn value(&self, r: &EvalResult) -> Result<f64, PredicateError> {
        match self.pred.at {
            At::Final => Ok(r.sample.conc[self.index]),
            At::Observation(idn) => r
                .observation(idn)
                .map(|o| o.conc[self.index])
                .ok_or(PredicateError::MissingObservation(idn)),
        }
    }

    pub fn holds(&self, r: &EvalResult) -> Result<bool, PredicateError> {
        let v = self.value(r)?;
        Ok(self.pred.lo <= v && v <= self.pred.hi)
    }
}

//! Monte Carlo estimation of the probability that a protocol outcome
//! satisfies a predicate, with exact binomial confidence intervals, and
//! parameter sweeps over protocol templates.
//!
//! Stream layout: the root stream of a seed has one child per sweep cell
//! (a plain ensemble is cell 0), and each cell has one child per run.

use std::collections::BTreeMap;

use bioproto_core::ast::Protocol;
use bioproto_core::crn::Crn;
use bioproto_core::integrator::FlowConfig;
use bioproto_core::noise::{NoiseConfig, RandomStream};
use bioproto_core::sample::EvalResult;
use bioproto_core::sem_det::{Env, EvalError};
use bioproto_core::sem_stoch::eval_stoch;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::parser::{Template, TemplateError};
use crate::predicate::{Predicate, PredicateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    /// Stop at the first failing run.
    #[default]
    FailFast,
    /// Leave failing runs out of the estimate.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmcError {
    #[error("run {index}: {source}")]
    Run { index: u64, source: EvalError },
    #[error("run {index}: {source}")]
    Predicate { index: u64, source: PredicateError },
    #[error(transparent)]
    Bind(PredicateError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("all {0} runs failed")]
    AllFailed(u64),
    #[error("{0}")]
    Argument(String),
}

impl SmcError {
    pub fn is_ill_posed(&self) -> bool {
        matches!(self, SmcError::Run { source, .. } if source.is_ill_posed())
    }
}

/// Everything needed to execute a protocol once.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub protocol: &'a Protocol,
    pub crn: &'a Crn,
    pub flow: &'a FlowConfig,
    pub noise: &'a NoiseConfig,
}

impl Model<'_> {
    pub fn run(&self, stream: RandomStream) -> Result<EvalResult, EvalError> {
        eval_stoch(self.protocol, self.crn, &Env::new(), self.flow, self.noise, stream)
    }
}

/// Stream for one cell of an experiment.
pub fn cell_stream(seed: u64, cell: u64) -> RandomStream {
    RandomStream::new(seed).child(cell)
}

/// `n` runs on the children `0..n` of `cell`, in index order.
pub fn ensemble(model: &Model<'_>, cell: RandomStream, n: u64) -> Vec<Result<EvalResult, EvalError>> {
    (0..n).into_par_iter().map(|i| model.run(cell.child(i))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub p_hat: f64,
    /// Runs that entered the estimate.
    pub n: u64,
    pub successes: u64,
    /// Runs left out under [`ErrorPolicy::Skip`].
    pub failed: u64,
    pub ci: (f64, f64),
    pub delta: f64,
}

/// Exact two-sided interval at level `1 - delta` for `k` successes in `n`.
pub fn clopper_pearson(k: u64, n: u64, delta: f64) -> (f64, f64) {
    assert!(k <= n && n > 0);
    let (k, n) = (k as f64, n as f64);
    let lo = if k == 0.0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0).unwrap().inverse_cdf(delta / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new(k + 1.0, n - k).unwrap().inverse_cdf(1.0 - delta / 2.0)
    };
    // p_hat must sit inside even when the inversion rounds
    let p = k / n;
    (lo.min(p), hi.max(p))
}

/// Runs needed so that `|p_hat - p| > epsilon` has probability at most
/// `delta`, by the Hoeffding bound.
pub fn required_samples(epsilon: f64, delta: f64) -> u64 {
    assert!(epsilon > 0.0 && epsilon < 1.0 && delta > 0.0 && delta < 1.0);
    ((2.0 / delta).ln() / (2.0 * epsilon * epsilon)).ceil().max(1.0) as u64
}

fn check_args(n: u64, delta: f64) -> Result<(), SmcError> {
    if n == 0 {
        return Err(SmcError::Argument("the number of runs must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SmcError::Argument(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Summarize verdicts (`None` for a skipped run).
pub fn summarize(verdicts: &[Option<bool>], delta: f64) -> Result<Estimate, SmcError> {
    let failed = verdicts.iter().filter(|v| v.is_none()).count() as u64;
    let successes = verdicts.iter().filter(|v| **v == Some(true)).count() as u64;
    let n = verdicts.len() as u64 - failed;
    if n == 0 {
        return Err(SmcError::AllFailed(failed));
    }
    Ok(Estimate {
        p_hat: successes as f64 / n as f64,
        n,
        successes,
        failed,
        ci: clopper_pearson(successes, n, delta),
        delta,
    })
}

/// Verdict per run from ensemble results.
pub fn verdicts(
    results: &[Result<EvalResult, EvalError>],
    pred: &Predicate,
    crn: &Crn,
    policy: ErrorPolicy,
) -> Result<Vec<Option<bool>>, SmcError> {
    let bound = pred.bind(crn).map_err(SmcError::Bind)?;
    results
        .iter()
        .enumerate()
        .map(|(i, r)| match (r, policy) {
            (Ok(r), _) => match (bound.holds(r), policy) {
                (Ok(b), _) => Ok(Some(b)),
                (Err(_), ErrorPolicy::Skip) => Ok(None),
                (Err(e), ErrorPolicy::FailFast) => Err(SmcError::Predicate {
                    index: i as u64,
                    source: e,
                }),
            },
            (Err(_), ErrorPolicy::Skip) => Ok(None),
            (Err(e), ErrorPolicy::FailFast) => Err(SmcError::Run {
                index: i as u64,
                source: e.clone(),
            }),
        })
        .collect()
}

pub fn estimate(
    model: &Model<'_>,
    pred: &Predicate,
    n: u64,
    delta: f64,
    cell: RandomStream,
    policy: ErrorPolicy,
) -> Result<Estimate, SmcError> {
    check_args(n, delta)?;
    pred.bind(model.crn).map_err(SmcError::Bind)?;
    let results = ensemble(model, cell, n);
    summarize(&verdicts(&results, pred, model.crn, policy)?, delta)
}

/// One sweep axis, `steps` evenly spaced values from `lo` to `hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn linspace(name: &str, lo: f64, hi: f64, steps: usize) -> Axis {
        let values = match steps {
            0 => Vec::new(),
            1 => vec![lo],
            _ => (0..steps)
                .map(|i| {
                    if i + 1 == steps {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / (steps - 1) as f64
                    }
                })
                .collect(),
        };
        Axis {
            name: name.to_string(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub values: Vec<f64>,
    pub estimate: Option<Estimate>,
    /// Why the cell has no estimate.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axes: Vec<Axis>,
    /// Row-major, last axis fastest.
    pub cells: Vec<Cell>,
    pub n: u64,
    pub delta: f64,
    pub seed: u64,
}

impl SweepGrid {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.values.len()).collect()
    }

    pub fn best(&self) -> Option<f64> {
        self.cells
            .iter()
            .filter_map(|c| c.estimate.as_ref().map(|e| e.p_hat))
            .fold(None, |m, p| Some(m.map_or(p, |m: f64| m.max(p))))
    }

    /// Cells whose interval reaches the best estimate: those not
    /// distinguishable from the optimum at level `1 - delta`.
    pub fn argmax(&self) -> Vec<usize> {
        let Some(best) = self.best() else { return Vec::new() };
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.estimate.as_ref().is_some_and(|e| e.ci.1 >= best))
            .map(|(i, _)| i)
            .collect()
    }

    /// Multi-index of a flat cell index.
    pub fn index(&self, mut cell: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut out = vec![0; shape.len()];
        for (d, len) in shape.iter().enumerate().rev() {
            out[d] = cell % len;
            cell /= len;
        }
        out
    }
}

/// Whether `cells` form one connected set when cells sharing a face or a
/// corner are neighbours.
pub fn is_connected(grid: &SweepGrid, cells: &[usize]) -> bool {
    let Some(&first) = cells.first() else { return false };
    let idx: Vec<Vec<usize>> = cells.iter().map(|&c| grid.index(c)).collect();
    let mut seen = vec![false; cells.len()];
    let mut stack = vec![cells.iter().position(|&c| c == first).unwrap()];
    seen[stack[0]] = true;
    while let Some(i) = stack.pop() {
        for j in 0..cells.len() {
            let adjacent = idx[i].iter().zip(&idx[j]).all(|(a, b)| a.abs_diff(*b) <= 1);
            if !seen[j] && adjacent {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

pub struct SweepSpec<'a> {
    pub template: &'a Template,
    pub axes: Vec<Axis>,
    /// Parameters held at one value across the grid.
    pub fixed: BTreeMap<String, f64>,
    pub crn: &'a Crn,
    pub flow: &'a FlowConfig,
    pub noise: &'a NoiseConfig,
    pub pred: &'a Predicate,
    pub n: u64,
    pub delta: f64,
    pub seed: u64,
    pub policy: ErrorPolicy,
}

pub fn sweep(spec: &SweepSpec<'_>) -> Result<SweepGrid, SmcError> {
    check_args(spec.n, spec.delta)?;
    if spec.axes.is_empty() || spec.axes.iter().any(|a| a.values.is_empty()) {
        return Err(SmcError::Argument("the grid has no cells".into()));
    }
    spec.pred.bind(spec.crn).map_err(SmcError::Bind)?;
    for a in &spec.axes {
        if spec.fixed.contains_key(&a.name) || spec.axes.iter().filter(|b| b.name == a.name).count() > 1 {
            return Err(SmcError::Argument(format!("parameter `{}` is given twice", a.name)));
        }
    }
    let shape: Vec<usize> = spec.axes.iter().map(|a| a.values.len()).collect();
    let total: usize = shape.iter().product();
    let mut cells = Vec::with_capacity(total);
    for c in 0..total {
        let mut rem = c;
        let mut values = vec![0.0; shape.len()];
        for d in (0..shape.len()).rev() {
            values[d] = spec.axes[d].values[rem % shape[d]];
            rem /= shape[d];
        }
        let mut binding = spec.fixed.clone();
        for (a, v) in spec.axes.iter().zip(&values) {
            binding.insert(a.name.clone(), *v);
        }
        let outcome = spec
            .template
            .instantiate(&binding)
            .map_err(SmcError::from)
            .and_then(|protocol| {
                let model = Model {
                    protocol: &protocol,
                    crn: spec.crn,
                    flow: spec.flow,
                    noise: spec.noise,
                };
                estimate(
                    &model,
                    spec.pred,
                    spec.n,
                    spec.delta,
                    cell_stream(spec.seed, c as u64),
                    spec.policy,
                )
            });
        match (outcome, spec.policy) {
            (Ok(e), _) => cells.push(Cell {
                values,
                estimate: Some(e),
                error: None,
            }),
            (Err(e), ErrorPolicy::Skip) => cells.push(Cell {
                values,
                estimate: None,
                error: Some(e.to_string()),
            }),
            (Err(e), ErrorPolicy::FailFast) => return Err(e),
        }
    }
    Ok(SweepGrid {
        axes: spec.axes.clone(),
        cells,
        n: spec.n,
        delta: spec.delta,
        seed: spec.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planner() {
        assert_eq!(required_samples(0.05, 0.01), 1060);
        assert!(required_samples(0.5, 1.0 - 2.0 / std::f64::consts::E) >= 1);
        let mut last = 0;
        for eps in [0.4, 0.2, 0.1, 0.05, 0.01] {
            let n = required_samples(eps, 0.05);
            assert!(n > last);
            last = n;
        }
    }

    #[test]
    fn clopper_pearson_known_values() {
        // reference values from the beta quantile definition
        let (lo, hi) = clopper_pearson(0, 10, 0.05);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-12);
        let (lo, hi) = clopper_pearson(10, 10, 0.05);
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-12);
        assert_eq!(hi, 1.0);
        let (lo, hi) = clopper_pearson(5, 10, 0.05);
        assert!((lo - 0.187086).abs() < 1e-6 && (hi - 0.812914).abs() < 1e-6);
    }

    #[test]
    fn connected_sets() {
        let grid = SweepGrid {
            axes: vec![Axis::linspace("a", 0.0, 1.0, 3), Axis::linspace("b", 0.0, 1.0, 3)],
            cells: Vec::new(),
            n: 1,
            delta: 0.1,
            seed: 0,
        };
        assert!(is_connected(&grid, &[0, 4, 8]));
        assert!(!is_connected(&grid, &[0, 2]));
        assert!(is_connected(&grid, &[1]));
    }

    #[test]
    fn linspace_hits_endpoints() {
        let a = Axis::linspace("p", 0.45, 0.65, 5);
        assert_eq!(a.values.len(), 5);
        assert_eq!((a.values[0], a.values[4]), (0.45, 0.65));
        assert!((a.values[2] - 0.55).abs() < 1e-15);
    }
}

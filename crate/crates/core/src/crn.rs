//! Chemical reaction networks under mass-action kinetics.
//!
//! Concentrations are mol/L and rates are expressed per second, scaled by
//! concentration according to each reaction's order. Rates are treated as
//! constants at their reference temperature; the temperature argument is
//! threaded through so a temperature model can be added later without
//! touching callers.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::VectorField;

/// Negative concentrations above this magnitude are treated as round-off.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrnError {
    #[error("duplicate species `{0}`")]
    DuplicateSpecies(String),
    #[error("reaction {reaction}: stoichiometry has length {found}, expected {expected}")]
    Dimension {
        reaction: usize,
        expected: usize,
        found: usize,
    },
    #[error("reaction {reaction}: rate {rate} is not positive and finite")]
    NonpositiveRate { reaction: usize, rate: f64 },
    #[error("state has length {found}, network has {expected} species")]
    StateDimension { expected: usize, found: usize },
    #[error("concentration of species {species} is {value}, below the round-off tolerance")]
    NegativeConcentration { species: usize, value: f64 },
    #[error("initial concentration of species {species} is {value}")]
    InvalidInitial { species: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    pub index: usize,
}

/// A reaction `source ->{rate} product` over the species of its network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    pub source: Vec<u32>,
    pub product: Vec<u32>,
    pub rate: f64,
}

impl Reaction {
    pub fn new(source: Vec<u32>, product: Vec<u32>, rate: f64) -> Self {
        Reaction { source, product, rate }
    }

    /// Sum of the source coefficients.
    pub fn order(&self) -> u32 {
        self.source.iter().sum()
    }

    pub fn is_null_effect(&self) -> bool {
        self.source == self.product
    }

    /// Order ≥ 2 reaction that net-produces one of its own reactants
    /// (e.g. `X + X -> X + X + X`). Such drifts are not globally Lipschitz.
    pub fn is_superlinear_autocatalytic(&self) -> bool {
        self.order() >= 2 && self.source.iter().zip(&self.product).any(|(&r, &p)| r >= 1 && p > r)
    }
}

/// Net change `product - source`.
pub fn net_change(reaction: &Reaction) -> Vec<i64> {
    reaction
        .source
        .iter()
        .zip(&reaction.product)
        .map(|(&r, &p)| i64::from(p) - i64::from(r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crn {
    species: Vec<Species>,
    reactions: Vec<Reaction>,
}

impl Crn {
    pub fn new(names: Vec<String>, reactions: Vec<Reaction>) -> Result<Self, CrnError> {
        let mut species: Vec<Species> = Vec::with_capacity(names.len());
        for (index, name) in names.into_iter().enumerate() {
            if species.iter().any(|s| s.name == name) {
                return Err(CrnError::DuplicateSpecies(name));
            }
            species.push(Species { name, index });
        }
        let n = species.len();
        for (i, r) in reactions.iter().enumerate() {
            for v in [&r.source, &r.product] {
                if v.len() != n {
                    return Err(CrnError::Dimension {
                        reaction: i,
                        expected: n,
                        found: v.len(),
                    });
                }
            }
            if !(r.rate > 0.0 && r.rate.is_finite()) {
                return Err(CrnError::NonpositiveRate {
                    reaction: i,
                    rate: r.rate,
                });
            }
            if r.is_null_effect() {
                log::warn!("reaction {i} has no net effect");
            }
        }
        Ok(Crn { species, reactions })
    }

    /// A network over `names` with no reactions.
    pub fn inert(names: Vec<String>) -> Result<Self, CrnError> {
        Crn::new(names, Vec::new())
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn rates(&self) -> Vec<f64> {
        self.reactions.iter().map(|r| r.rate).collect()
    }

    /// Same network with the rate constants replaced.
    pub fn with_rates(&self, rates: &[f64]) -> Result<Crn, CrnError> {
        let mut reactions = self.reactions.clone();
        for (i, (r, &k)) in reactions.iter_mut().zip(rates).enumerate() {
            if !(k > 0.0 && k.is_finite()) {
                return Err(CrnError::NonpositiveRate { reaction: i, rate: k });
            }
            r.rate = k;
        }
        Ok(Crn {
            species: self.species.clone(),
            reactions,
        })
    }

    fn check_state(&self, conc: &[f64]) -> Result<(), CrnError> {
        if conc.len() != self.species.len() {
            return Err(CrnError::StateDimension {
                expected: self.species.len(),
                found: conc.len(),
            });
        }
        Ok(())
    }

    /// Mass-action drift at the given state and conditions.
    pub fn drift(&self, conc: &[f64], volume: f64, temperature: f64) -> Result<Vec<f64>, CrnError> {
        let _ = volume;
        self.check_state(conc)?;
        let mut out = vec![0.0; conc.len()];
        for reaction in &self.reactions {
            let rate = propensity(self, reaction, conc, temperature)?;
            add_contribution(reaction, rate, &mut out);
        }
        Ok(out)
    }

    /// Reactions flagged by the Lipschitz lint.
    pub fn superlinear_reactions(&self) -> Vec<usize> {
        self.reactions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_superlinear_autocatalytic())
            .map(|(i, _)| i)
            .collect()
    }

    /// Vector field of the rate equations at fixed volume and temperature.
    pub fn field(&self, volume: f64, temperature: f64) -> RateEquations<'_> {
        RateEquations {
            crn: self,
            rates: None,
            volume,
            temperature,
        }
    }
}

impl fmt::Display for Crn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let complex = |v: &[u32], f: &mut fmt::Formatter<'_>| -> fmt::Result {
            let mut first = true;
            for (i, &c) in v.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                if !first {
                    f.write_str(" + ")?;
                }
                first = false;
                if c > 1 {
                    write!(f, "{c}")?;
                }
                f.write_str(&self.species[i].name)?;
            }
            if first {
                f.write_str("0")?;
            }
            Ok(())
        };
        for r in &self.reactions {
            complex(&r.source, f)?;
            write!(f, " ->{{{:?}}} ", r.rate)?;
            complex(&r.product, f)?;
            writeln!(f)?;
        }
        Ok(())
    }
}

/// A network together with its initial concentrations.
#[derive(Debug, Clone, PartialEq)]
pub struct Crs {
    pub crn: Crn,
    pub initial: Vec<f64>,
}

impl Crs {
    pub fn new(crn: Crn, initial: Vec<f64>) -> Result<Self, CrnError> {
        crn.check_state(&initial)?;
        if let Some((species, &value)) = initial.iter().enumerate().find(|(_, c)| !(**c >= 0.0 && c.is_finite())) {
            return Err(CrnError::InvalidInitial { species, value });
        }
        Ok(Crs { crn, initial })
    }
}

/// Clamp round-off negatives to zero, rejecting anything beyond tolerance.
fn clamped(conc: f64, species: usize) -> Result<f64, CrnError> {
    if conc >= 0.0 {
        Ok(conc)
    } else if conc > -NEGATIVE_TOLERANCE {
        Ok(0.0)
    } else {
        Err(CrnError::NegativeConcentration { species, value: conc })
    }
}

/// Mass-action propensity `k · Π conc_S^{r_S}`.
pub fn propensity(crn: &Crn, reaction: &Reaction, conc: &[f64], temperature: f64) -> Result<f64, CrnError> {
    crn.check_state(conc)?;
    let mut rate = rate_at(reaction.rate, temperature);
    for (s, (&c, &r)) in conc.iter().zip(&reaction.source).enumerate() {
        if r > 0 {
            rate *= libm::pow(clamped(c, s)?, f64::from(r));
        }
    }
    Ok(rate)
}

fn rate_at(k: f64, _temperature: f64) -> f64 {
    k
}

fn mass_action(rate: f64, source: &[u32], conc: &[f64]) -> f64 {
    let mut a = rate;
    for (&c, &r) in conc.iter().zip(source) {
        match r {
            0 => {}
            1 => a *= c.max(0.0),
            _ => a *= libm::pow(c.max(0.0), f64::from(r)),
        }
    }
    a
}

fn add_contribution(reaction: &Reaction, rate: f64, out: &mut [f64]) {
    for ((o, &r), &p) in out.iter_mut().zip(&reaction.source).zip(&reaction.product) {
        if r != p {
            *o += (f64::from(p) - f64::from(r)) * rate;
        }
    }
}

/// Rate equations as an integrable vector field.
///
/// Stage states visited by the integrator may dip slightly negative; they are
/// read as zero here and the integrator's nonnegativity check is what rejects
/// genuinely negative accepted states.
#[derive(Debug, Clone)]
pub struct RateEquations<'a> {
    crn: &'a Crn,
    rates: Option<&'a [f64]>,
    volume: f64,
    temperature: f64,
}

impl<'a> RateEquations<'a> {
    /// Override the network's rate constants (one per reaction).
    pub fn with_rates(mut self, rates: &'a [f64]) -> Self {
        self.rates = Some(rates);
        self
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    fn k(&self, i: usize) -> f64 {
        let k = match self.rates {
            Some(rates) => rates[i],
            None => self.crn.reactions[i].rate,
        };
        rate_at(k, self.temperature)
    }
}

impl VectorField for RateEquations<'_> {
    fn dim(&self) -> usize {
        self.crn.species_count()
    }

    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        dx.iter_mut().for_each(|d| *d = 0.0);
        for (i, reaction) in self.crn.reactions.iter().enumerate() {
            let a = mass_action(self.k(i), &reaction.source, x);
            add_contribution(reaction, a, dx);
        }
    }

    fn jacobian(&self, x: &[f64], jac: &mut [f64]) {
        let n = self.dim();
        jac.iter_mut().for_each(|j| *j = 0.0);
        for (i, reaction) in self.crn.reactions.iter().enumerate() {
            let k = self.k(i);
            for (j, &rj) in reaction.source.iter().enumerate() {
                if rj == 0 {
                    continue;
                }
                // d/dx_j of k Π x_l^{r_l}
                let mut d = k * f64::from(rj) * libm::pow(x[j].max(0.0), f64::from(rj - 1));
                for (l, &rl) in reaction.source.iter().enumerate() {
                    if l != j && rl > 0 {
                        d *= libm::pow(x[l].max(0.0), f64::from(rl));
                    }
                }
                if d == 0.0 {
                    continue;
                }
                for (s, (&r, &p)) in reaction.source.iter().zip(&reaction.product).enumerate() {
                    if r != p {
                        jac[s * n + j] += (f64::from(p) - f64::from(r)) * d;
                    }
                }
            }
        }
    }

    fn nonnegative(&self, _i: usize) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// H2O, Na+, OH-, Cl-, H+ with the neutralisation reaction.
    fn neutralisation() -> Crn {
        Crn::new(
            names(&["H2O", "Na+", "OH-", "Cl-", "H+"]),
            vec![Reaction::new(vec![0, 1, 1, 1, 1], vec![1, 1, 0, 1, 0], 2.81e-10)],
        )
        .unwrap()
    }

    #[test]
    fn net_change_examples() {
        let r = Reaction::new(vec![1, 0, 1], vec![0, 2, 0], 1.0);
        assert_eq!(net_change(&r), vec![-1, 2, -1]);
        let r = Reaction::new(vec![1, 1, 0], vec![1, 1, 0], 1.0);
        assert_eq!(net_change(&r), vec![0, 0, 0]);
        let r = Reaction::new(vec![2, 0], vec![0, 1], 1.0);
        assert_eq!(net_change(&r), vec![-2, 1]);
    }

    #[test]
    fn propensity_examples() {
        let crn = Crn::new(names(&["A", "B"]), vec![Reaction::new(vec![1, 1], vec![0, 0], 0.5)]).unwrap();
        let r = &crn.reactions()[0];
        assert_eq!(propensity(&crn, r, &[2.0, 3.0], 298.15).unwrap(), 3.0);
        assert_eq!(propensity(&crn, r, &[0.0, 3.0], 298.15).unwrap(), 0.0);

        let crn = neutralisation();
        let r = &crn.reactions()[0];
        let a = propensity(&crn, r, &[0.0, 0.05, 0.05, 0.05, 0.05], 298.0).unwrap();
        assert!((a - 1.75625e-15).abs() <= 1e-15 * 1.75625e-15 * 10.0);
    }

    #[test]
    fn propensity_tolerates_round_off_only() {
        let crn = Crn::new(names(&["A"]), vec![Reaction::new(vec![1], vec![0], 2.0)]).unwrap();
        let r = &crn.reactions()[0];
        assert_eq!(propensity(&crn, r, &[-1e-13], 300.0).unwrap(), 0.0);
        assert!(matches!(
            propensity(&crn, r, &[-1e-9], 300.0),
            Err(CrnError::NegativeConcentration { .. })
        ));
    }

    #[test]
    fn drift_examples() {
        let crn = Crn::inert(names(&["A", "B"])).unwrap();
        assert_eq!(crn.drift(&[1.0, 2.0], 1.0, 300.0).unwrap(), vec![0.0, 0.0]);

        let crn = neutralisation();
        let d = crn.drift(&[0.0, 0.05, 0.05, 0.05, 0.05], 1e-3, 298.0).unwrap();
        let expected = 2.81e-10 * 0.05f64.powi(4);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[3], 0.0);
        assert_eq!(d[2], d[4]);
        assert!((d[4] + expected).abs() < 1e-28);
        assert!((d[0] - expected).abs() < 1e-28);

        let crn = Crn::new(names(&["A"]), vec![Reaction::new(vec![1], vec![0], 0.7)]).unwrap();
        assert_eq!(crn.drift(&[2.0], 1.0, 300.0).unwrap(), vec![-1.4]);
        assert!(matches!(
            crn.drift(&[1.0, 2.0], 1.0, 300.0),
            Err(CrnError::StateDimension { .. })
        ));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            Crn::new(names(&["A", "A"]), vec![]),
            Err(CrnError::DuplicateSpecies(_))
        ));
        assert!(matches!(
            Crn::new(names(&["A"]), vec![Reaction::new(vec![1, 0], vec![0], 1.0)]),
            Err(CrnError::Dimension { .. })
        ));
        assert!(matches!(
            Crn::new(names(&["A"]), vec![Reaction::new(vec![1], vec![0], 0.0)]),
            Err(CrnError::NonpositiveRate { .. })
        ));
        assert!(Crs::new(Crn::inert(names(&["A"])).unwrap(), vec![-1.0]).is_err());
    }

    #[test]
    fn superlinear_lint() {
        let crn = Crn::new(names(&["X"]), vec![Reaction::new(vec![2], vec![3], 1.0)]).unwrap();
        assert_eq!(crn.superlinear_reactions(), vec![0]);
        assert!(neutralisation().superlinear_reactions().is_empty());
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let crn = Crn::new(
            names(&["A", "B", "C"]),
            vec![
                Reaction::new(vec![2, 1, 0], vec![0, 0, 1], 0.3),
                Reaction::new(vec![0, 0, 1], vec![1, 0, 0], 1.7),
            ],
        )
        .unwrap();
        let f = crn.field(1.0, 300.0);
        let x = [0.4, 1.3, 0.2];
        let mut jac = [0.0; 9];
        f.jacobian(&x, &mut jac);
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (mut fp, mut fm) = ([0.0; 3], [0.0; 3]);
            f.eval(&xp, &mut fp);
            f.eval(&xm, &mut fm);
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((jac[i * 3 + j] - fd).abs() < 1e-8, "({i},{j})");
            }
        }
    }
}

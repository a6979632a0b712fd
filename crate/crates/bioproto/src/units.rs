//! Physical units accepted in source files.

use serde::{Deserialize, Serialize};

/// What a quantity measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Concentration,
    Volume,
    Temperature,
    Time,
}

impl Dimension {
    pub fn name(self) -> &'static str {
        match self {
            Dimension::Concentration => "concentration",
            Dimension::Volume => "volume",
            Dimension::Temperature => "temperature",
            Dimension::Time => "time",
        }
    }
}

/// Scale of a unit relative to the dimension's base: a power of ten for
/// concentration and volume, a factor for time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Pow10(i32),
    Factor(f64),
}

pub fn lookup(unit: &str) -> Option<(Dimension, Scale)> {
    use Dimension::*;
    Some(match unit {
        "M" => (Concentration, Scale::Pow10(0)),
        "mM" => (Concentration, Scale::Pow10(-3)),
        "uM" | "µM" => (Concentration, Scale::Pow10(-6)),
        "nM" => (Concentration, Scale::Pow10(-9)),
        "pM" => (Concentration, Scale::Pow10(-12)),
        "L" => (Volume, Scale::Pow10(0)),
        "mL" => (Volume, Scale::Pow10(-3)),
        "uL" | "µL" => (Volume, Scale::Pow10(-6)),
        "nL" => (Volume, Scale::Pow10(-9)),
        "K" => (Temperature, Scale::Factor(1.0)),
        "s" => (Time, Scale::Factor(1.0)),
        "min" => (Time, Scale::Factor(60.0)),
        "h" => (Time, Scale::Factor(3600.0)),
        _ => return None,
    })
}

/// Unit system of a reaction network file. Concentrations are held
/// internally in `concentration`; times are always seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub concentration: String,
    pub time: String,
}

impl Default for UnitSystem {
    fn default() -> Self {
        UnitSystem {
            concentration: "M".into(),
            time: "s".into(),
        }
    }
}

impl UnitSystem {
    pub fn new(concentration: &str, time: &str) -> Option<Self> {
        match (lookup(concentration)?, lookup(time)?) {
            ((Dimension::Concentration, _), (Dimension::Time, _)) => Some(UnitSystem {
                concentration: concentration.into(),
                time: time.into(),
            }),
            _ => None,
        }
    }

    pub fn concentration_exponent(&self) -> i32 {
        match lookup(&self.concentration) {
            Some((_, Scale::Pow10(e))) => e,
            _ => 0,
        }
    }

    pub fn seconds_per_time_unit(&self) -> f64 {
        match lookup(&self.time) {
            Some((_, Scale::Factor(f))) => f,
            _ => 1.0,
        }
    }
}

//! Noise configuration and hierarchical random streams.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seed-derived stream key. Children are derived by index, so the random
/// values used by one run or one protocol node do not depend on how many
/// draws any other consumer made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    key: u64,
}

const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { key: splitmix64(seed) }
    }

    pub fn child(&self, index: u64) -> Self {
        RandomStream {
            key: splitmix64(self.key ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(self.key)
    }
}

pub const DEFAULT_BOUNDS: (f64, f64) = (1e-6, 1.0 - 1e-6);

fn default_bounds() -> (f64, f64) {
    DEFAULT_BOUNDS
}

/// Pipetting error on the dispensed fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DispenseNoise {
    #[default]
    None,
    /// Gaussian centred at the nominal fraction, truncated to `bounds`.
    /// Exactly one of `sigma_rel` (fraction units) and `sigma_abs_volume`
    /// (liters, divided by the source volume) must be set.
    TruncatedGaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_rel: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_abs_volume: Option<f64>,
        #[serde(default = "default_bounds")]
        bounds: (f64, f64),
    },
}

impl DispenseNoise {
    /// 0.3 µL standard deviation per operation on a 1 mL device.
    pub fn iso8655() -> Self {
        DispenseNoise::TruncatedGaussian {
            sigma_rel: None,
            sigma_abs_volume: Some(ISO8655_SIGMA_1ML),
            bounds: DEFAULT_BOUNDS,
        }
    }

    pub fn relative(sigma: f64, bounds: (f64, f64)) -> Self {
        DispenseNoise::TruncatedGaussian {
            sigma_rel: Some(sigma),
            sigma_abs_volume: None,
            bounds,
        }
    }

    /// Standard deviation of the fraction when dispensing from `volume`.
    pub fn sigma(&self, volume: f64) -> f64 {
        match self {
            DispenseNoise::None => 0.0,
            DispenseNoise::TruncatedGaussian { sigma_rel: Some(s), .. } => *s,
            DispenseNoise::TruncatedGaussian {
                sigma_abs_volume: Some(s),
                ..
            } => {
                if volume > 0.0 {
                    s / volume
                } else {
                    0.0
                }
            }
            DispenseNoise::TruncatedGaussian { .. } => 0.0,
        }
    }
}

/// ISO 8655 systematic standard deviation for a 1 mL operation, in liters.
pub const ISO8655_SIGMA_1ML: f64 = 0.3e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EquilibrateNoise {
    /// Exponential with mean equal to the nominal duration.
    Exponential,
    #[default]
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateNoise {
    #[default]
    None,
    /// Normal with variance half the mean, truncated to positive values.
    SubPoisson,
    /// Normal with the given standard deviation per reaction, truncated to
    /// positive values.
    Gaussian { sigma: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObserveNoise {
    #[default]
    None,
    /// Independent zero-mean Gaussian added to each observed concentration.
    AdditiveGaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub dispense: DispenseNoise,
    pub equilibrate: EquilibrateNoise,
    pub rates: RateNoise,
    pub observe_noise: ObserveNoise,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseConfigError {
    #[error("dispense bounds ({0}, {1}) must satisfy 0 < lo < hi < 1")]
    Bounds(f64, f64),
    #[error("exactly one of sigma_rel and sigma_abs_volume must be given")]
    SigmaChoice,
    #[error("{0} must be a finite value >= 0, got {1}")]
    Sigma(&'static str, f64),
    #[error("gaussian rate noise has {found} sigmas for {expected} reactions")]
    RateCount { found: usize, expected: usize },
}

fn check_sigma(what: &'static str, s: f64) -> Result<(), NoiseConfigError> {
    if s >= 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(NoiseConfigError::Sigma(what, s))
    }
}

impl NoiseConfig {
    /// All sources off: evaluation reduces to the deterministic semantics.
    pub fn degenerate() -> Self {
        NoiseConfig::default()
    }

    /// ISO 8655 dispensing and exponential equilibration, exact rates.
    pub fn protocol_only() -> Self {
        NoiseConfig {
            dispense: DispenseNoise::iso8655(),
            equilibrate: EquilibrateNoise::Exponential,
            ..NoiseConfig::default()
        }
    }

    pub fn rates_only() -> Self {
        NoiseConfig {
            rates: RateNoise::SubPoisson,
            ..NoiseConfig::default()
        }
    }

    pub fn both() -> Self {
        NoiseConfig {
            rates: RateNoise::SubPoisson,
            ..NoiseConfig::protocol_only()
        }
    }

    pub fn is_degenerate(&self) -> bool {
        let dispense = match &self.dispense {
            DispenseNoise::None => true,
            DispenseNoise::TruncatedGaussian {
                sigma_rel,
                sigma_abs_volume,
                ..
            } => sigma_rel.unwrap_or(0.0) == 0.0 && sigma_abs_volume.unwrap_or(0.0) == 0.0,
        };
        let rates = match &self.rates {
            RateNoise::None => true,
            RateNoise::SubPoisson => false,
            RateNoise::Gaussian { sigma } => sigma.iter().all(|s| *s == 0.0),
        };
        let observe = match self.observe_noise {
            ObserveNoise::None => true,
            ObserveNoise::AdditiveGaussian { sigma } => sigma == 0.0,
        };
        dispense && rates && observe && self.equilibrate == EquilibrateNoise::Deterministic
    }

    /// `reactions` is the size of the network the config will be used with.
    pub fn validate(&self, reactions: usize) -> Result<(), NoiseConfigError> {
        if let DispenseNoise::TruncatedGaussian {
            sigma_rel,
            sigma_abs_volume,
            bounds: (lo, hi),
        } = &self.dispense
        {
            if !(0.0 < *lo && lo < hi && *hi < 1.0) {
                return Err(NoiseConfigError::Bounds(*lo, *hi));
            }
            match (sigma_rel, sigma_abs_volume) {
                (Some(s), None) => check_sigma("sigma_rel", *s)?,
                (None, Some(s)) => check_sigma("sigma_abs_volume", *s)?,
                _ => return Err(NoiseConfigError::SigmaChoice),
            }
        }
        if let RateNoise::Gaussian { sigma } = &self.rates {
            if sigma.len() != reactions {
                return Err(NoiseConfigError::RateCount {
                    found: sigma.len(),
                    expected: reactions,
                });
            }
            for s in sigma {
                check_sigma("rate sigma", *s)?;
            }
        }
        if let ObserveNoise::AdditiveGaussian { sigma } = self.observe_noise {
            check_sigma("observation sigma", sigma)?;
        }
        Ok(())
    }
}

/// Cap on rejection-sampling attempts for truncated draws.
pub const REJECTION_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("no draw inside ({lo}, {hi}) after {attempts} attempts (centre {centre}, sigma {sigma})")]
    TruncationTooTight {
        centre: f64,
        sigma: f64,
        lo: f64,
        hi: f64,
        attempts: usize,
    },
    #[error("equilibrate duration must be > 0 under exponential timing, got {0}")]
    NonpositiveEquilibrateTime(f64),
    #[error(transparent)]
    Config(#[from] NoiseConfigError),
}

//! Samples, observations and evaluation results.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SampleError {
    #[error("concentration entry {index} is {value}, expected a finite value >= 0")]
    Concentration { index: usize, value: f64 },
    #[error("volume {0} is not a finite value >= 0")]
    Volume(f64),
    #[error("temperature {0} is not a finite value >= 0")]
    Temperature(f64),
    #[error("samples have {left} and {right} species")]
    Dimension { left: usize, right: usize },
}

/// Concentrations (mol/L), volume (L) and temperature (K).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub conc: Vec<f64>,
    pub volume: f64,
    pub temperature: f64,
}

impl Sample {
    pub fn new(conc: Vec<f64>, volume: f64, temperature: f64) -> Result<Self, SampleError> {
        let s = Sample {
            conc,
            volume,
            temperature,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        for (index, &value) in self.conc.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(SampleError::Concentration { index, value });
            }
        }
        if !(self.volume >= 0.0 && self.volume.is_finite()) {
            return Err(SampleError::Volume(self.volume));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(SampleError::Temperature(self.temperature));
        }
        Ok(())
    }

    /// The result of `Dispose`: zero concentrations, volume and temperature.
    pub fn empty(species: usize) -> Self {
        Sample {
            conc: vec![0.0; species],
            volume: 0.0,
            temperature: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.volume == 0.0
    }

    /// Volume-weighted mix. Returns `None` when both volumes are zero.
    ///
    /// A zero-volume operand contributes nothing, so the other operand is
    /// returned unchanged.
    pub fn mix(&self, other: &Sample) -> Result<Option<Sample>, SampleError> {
        if self.conc.len() != other.conc.len() {
            return Err(SampleError::Dimension {
                left: self.conc.len(),
                right: other.conc.len(),
            });
        }
        let (v1, v2) = (self.volume, other.volume);
        if v1 == 0.0 && v2 == 0.0 {
            return Ok(None);
        }
        if v2 == 0.0 {
            return Ok(Some(self.clone()));
        }
        if v1 == 0.0 {
            return Ok(Some(other.clone()));
        }
        let v = v1 + v2;
        let conc = self
            .conc
            .iter()
            .zip(&other.conc)
            .map(|(a, b)| (a * v1 + b * v2) / v)
            .collect();
        let temperature = (self.temperature * v1 + other.temperature * v2) / v;
        Ok(Some(Sample {
            conc,
            volume: v,
            temperature,
        }))
    }

    /// Split by fraction `p`. The two volumes sum to `V` exactly in floating
    /// point: `v2 = V − V·p`, then `v1 = V − v2`.
    pub fn split(&self, p: f64) -> (Sample, Sample) {
        let v2 = self.volume - self.volume * p;
        let v1 = self.volume - v2;
        let mut a = self.clone();
        let mut b = self.clone();
        a.volume = v1;
        b.volume = v2;
        (a, b)
    }

    /// Amount of each species, `conc · V` (mol).
    pub fn moles(&self) -> Vec<f64> {
        self.conc.iter().map(|c| c * self.volume).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub conc: Vec<f64>,
    pub idn: u64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub sample: Sample,
    pub observations: Vec<Observation>,
    pub elapsed: f64,
}

impl EvalResult {
    pub fn fresh(sample: Sample) -> Self {
        EvalResult {
            sample,
            observations: Vec::new(),
            elapsed: 0.0,
        }
    }

    /// First observation with identifier `idn`.
    pub fn observation(&self, idn: u64) -> Option<&Observation> {
        self.observations.iter().find(|o| o.idn == idn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(c: f64, v: f64, t: f64) -> Sample {
        Sample::new(vec![c], v, t).unwrap()
    }

    #[test]
    fn mix_example() {
        let m = s(1.0, 1.0, 300.0).mix(&s(3.0, 1.0, 300.0)).unwrap().unwrap();
        assert_eq!(m, s(2.0, 2.0, 300.0));
    }

    #[test]
    fn mix_with_empty_is_identity() {
        let a = Sample::new(vec![0.1, 0.3], 0.7e-3, 298.15).unwrap();
        assert_eq!(a.mix(&Sample::empty(2)).unwrap().unwrap(), a);
        assert_eq!(Sample::empty(2).mix(&a).unwrap().unwrap(), a);
        assert_eq!(Sample::empty(2).mix(&Sample::empty(2)).unwrap(), None);
    }

    #[test]
    fn validation() {
        assert!(Sample::new(vec![-1.0], 1.0, 1.0).is_err());
        assert!(Sample::new(vec![1.0], -1.0, 1.0).is_err());
        assert!(Sample::new(vec![1.0], 1.0, f64::NAN).is_err());
        assert!(s(1.0, 1.0, 1.0).mix(&Sample::empty(2)).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_exactly(v in 0.0f64..10.0, p in 1e-9f64..(1.0 - 1e-9)) {
            let a = s(0.25, v, 300.0);
            let (x, y) = a.split(p);
            prop_assert_eq!(x.volume + y.volume, v);
            prop_assert_eq!(&x.conc, &a.conc);
            prop_assert_eq!(y.temperature.to_bits(), a.temperature.to_bits());
        }

        #[test]
        fn mix_commutes(c1 in 0.0f64..1.0, c2 in 0.0f64..1.0, v1 in 1e-6f64..1.0, v2 in 1e-6f64..1.0) {
            let a = s(c1, v1, 290.0);
            let b = s(c2, v2, 310.0);
            let ab = a.mix(&b).unwrap().unwrap();
            let ba = b.mix(&a).unwrap().unwrap();
            prop_assert!((ab.conc[0] - ba.conc[0]).abs() <= 1e-12 * ab.conc[0].abs().max(1e-300));
            prop_assert_eq!(ab.volume, ba.volume);
        }
    }
}

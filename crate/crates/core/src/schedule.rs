//! Exponential decay schedules for learning and exploration rates.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// `value(t) = max(floor, v0 * rate^(t / horizon))`: one rate-multiplication
/// per `horizon` steps, continuously interpolated. With `rate = 1` the
/// schedule is constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub v0: f64,
    pub rate: f64,
    pub horizon: u64,
    pub floor: f64,
}

impl DecaySchedule {
    pub fn new(v0: f64, rate: f64, horizon: u64, floor: f64) -> Self {
        Self { v0, rate, horizon, floor }
    }

    pub fn constant(v: f64) -> Self {
        Self { v0: v, rate: 1.0, horizon: 1, floor: 0.0 }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(CoreError::Config(format!(
                "decay rate must be in (0, 1], got {}",
                self.rate
            )));
        }
        if self.horizon == 0 {
            return Err(CoreError::Config("decay horizon must be positive".into()));
        }
        if self.floor < 0.0 {
            return Err(CoreError::Config(format!(
                "decay floor must be >= 0, got {}",
                self.floor
            )));
        }
        Ok(())
    }

    pub fn value(&self, t: u64) -> f64 {
        let decayed = self.v0 * self.rate.powf(t as f64 / self.horizon as f64);
        decayed.max(self.floor)
    }
}

//! Logistic body-weight curve of the harvested fish.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthCurve {
    /// Growth rate (1/day).
    pub rate: f64,
    /// Asymptotic body weight (g).
    pub capacity: f64,
    /// Weight at `t = 0` (g).
    pub initial_weight: f64,
}

impl Default for GrowthCurve {
    fn default() -> Self {
        Self { rate: 0.045, capacity: 90.0, initial_weight: 6.0 }
    }
}

impl GrowthCurve {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return config(format!("growth.rate must be > 0, got {}", self.rate));
        }
        if !(self.initial_weight > 0.0 && self.initial_weight < self.capacity) {
            return config(format!(
                "growth.initial_weight must lie in (0, growth.capacity), got {} and {}",
                self.initial_weight, self.capacity
            ));
        }
        Ok(())
    }

    /// Closed-form logistic weight `U_t` in grams.
    pub fn weight_at(&self, t: f64) -> f64 {
        let ratio = (self.capacity - self.initial_weight) / self.initial_weight;
        self.capacity / (1.0 + ratio * (-self.rate * t).exp())
    }
}

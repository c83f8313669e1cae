use super::QuantizerError;

/// Exponentially decaying Gumbel temperature `τ(j) = max(τ_max δ^j, τ_min)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureSchedule {
    tau_max: f64,
    tau_min: f64,
    delta: f64,
    step: u64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self::reaching_min_at(1000, 0.7, 2.0, 0.5).expect("default schedule is valid")
    }
}

impl TemperatureSchedule {
    pub fn new(tau_max: f64, tau_min: f64, delta: f64) -> Result<Self, QuantizerError> {
        if !(tau_min > 0.0 && tau_min <= tau_max && tau_max.is_finite()) {
            return Err(QuantizerError::InvalidSchedule(format!(
                "need 0 < tau_min <= tau_max, got {tau_min}, {tau_max}"
            )));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(QuantizerError::InvalidSchedule(format!("decay must lie in (0, 1], got {delta}")));
        }
        Ok(Self { tau_max, tau_min, delta, step: 0 })
    }

    /// Picks `δ` so that `τ` first reaches `τ_min` after `fraction · total_steps` steps.
    pub fn reaching_min_at(
        total_steps: u64,
        fraction: f64,
        tau_max: f64,
        tau_min: f64,
    ) -> Result<Self, QuantizerError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(QuantizerError::InvalidSchedule(format!("fraction must lie in (0, 1], got {fraction}")));
        }
        let horizon = (total_steps as f64 * fraction).max(1.0);
        let delta = if tau_max > 0.0 && tau_min > 0.0 { (tau_min / tau_max).powf(1.0 / horizon) } else { f64::NAN };
        Self::new(tau_max, tau_min, delta)
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Temperature at step `j`.
    pub fn temperature_at(&self, j: u64) -> f64 {
        let exponent = i32::try_from(j).unwrap_or(i32::MAX);
        (self.tau_max * self.delta.powi(exponent)).max(self.tau_min)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature_at(self.step)
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

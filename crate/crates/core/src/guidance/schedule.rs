use serde::{Deserialize, Serialize};

use super::GuidanceError;

pub const DEFAULT_STEPS: u32 = 1000;
pub const DEFAULT_BETA_START: f64 = 8.5e-4;
pub const DEFAULT_BETA_END: f64 = 1.2e-2;

/// Discrete variance-preserving noise schedule indexed by `t` in `1..=T`.
///
/// `alpha_t = sqrt(alpha_bar_t)` and `sigma_t = sqrt(1 - alpha_bar_t)` where
/// `alpha_bar_t` is the running product of `1 - beta_s` for `s <= t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::scaled_linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
    }
}

impl NoiseSchedule {
    /// Betas linear in `sqrt(beta)` between the two endpoints, then squared.
    pub fn scaled_linear(steps: u32, beta_start: f64, beta_end: f64) -> Self {
        assert!(steps >= 1, "schedule needs at least one step");
        let (a, b) = (beta_start.sqrt(), beta_end.sqrt());
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                let f = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                let r = a + f * (b - a);
                r * r
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Self {
        let mut acc = 1.0;
        let alpha_bar = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Self { betas, alpha_bar }
    }

    pub fn steps(&self) -> u32 {
        self.betas.len() as u32
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn check(&self, t: u32) -> Result<usize, GuidanceError> {
        if t >= 1 && t <= self.steps() {
            Ok(t as usize - 1)
        } else {
            Err(GuidanceError::Timestep { t, steps: self.steps() })
        }
    }

    pub fn alpha_bar(&self, t: u32) -> Result<f64, GuidanceError> {
        Ok(self.alpha_bar[self.check(t)?])
    }

    /// `(alpha_t, sigma_t)` at step `t`.
    pub fn schedule_at(&self, t: u32) -> Result<(f64, f64), GuidanceError> {
        let ab = self.alpha_bar(t)?;
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    }
}

/// Timestep weighting `w(t)` applied to the distillation gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFn {
    #[default]
    Uniform,
    /// `w(t) = sigma_t^2`
    Sigma2,
}

impl WeightFn {
    pub fn weight(self, sigma: f64) -> f64 {
        match self {
            WeightFn::Uniform => 1.0,
            WeightFn::Sigma2 => sigma * sigma,
        }
    }
}

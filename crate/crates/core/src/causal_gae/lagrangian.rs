use serde::{Deserialize, Serialize};

/// Augmented-Lagrangian multiplier state for the constraint `h(A) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LagrangianState {
    pub alpha: f64,
    pub rho: f64,
    /// Penalty growth factor, > 1.
    pub beta: f64,
    /// Required per-update shrink ratio of `h`, < 1.
    pub gamma: f64,
    /// `h` at the previous update; starts unbounded so the first update
    /// never grows `rho`.
    pub h_prev: f64,
}

impl Default for LagrangianState {
    fn default() -> Self {
        Self { alpha: 0.6, rho: 0.1, beta: 1.01, gamma: 0.9, h_prev: f64::INFINITY }
    }
}

impl LagrangianState {
    /// `α ← α + ρ h`; `ρ ← β ρ` unless `h` shrank below `γ · h_prev`.
    pub fn update(self, h_new: f64) -> Self {
        let alpha = self.alpha + self.rho * h_new;
        let rho = if h_new.abs() >= self.gamma * self.h_prev.abs() { self.beta * self.rho } else { self.rho };
        Self { alpha, rho, h_prev: h_new, ..self }
    }

    /// `α h + (ρ/2) h²`
    pub fn penalty(&self, h: f64) -> f64 {
        self.alpha * h + 0.5 * self.rho * h * h
    }

    /// `∂penalty/∂h`
    pub fn penalty_slope(&self, h: f64) -> f64 {
        self.alpha + self.rho * h
    }
}

pub fn lagrangian_update(lag: LagrangianState, h_new: f64) -> LagrangianState {
    lag.update(h_new)
}

//! The EAFLM "lazy client" gate, used as a baseline.

use serde::{Deserialize, Serialize};

use super::FlError;
use crate::nn::{GradSnapshot, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EaflmConfig {
    pub alpha: f64,
    pub beta: f64,
    /// `None` means "number of clients".
    #[serde(default)]
    pub m: Option<f64>,
    pub depth: usize,
    /// `None` means `1/depth` for every lag.
    #[serde(default)]
    pub xi: Option<Vec<f64>>,
}

impl Default for EaflmConfig {
    fn default() -> Self {
        Self {
            alpha: 0.98,
            beta: 1.0,
            m: None,
            depth: 1,
            xi: None,
        }
    }
}

impl EaflmConfig {
    pub fn validate(&self) -> Result<(), FlError> {
        let ok = self.alpha > 0.0
            && self.alpha < 1.0
            && self.beta > 0.0
            && self.beta.is_finite()
            && self.depth >= 1
            && self.m.is_none_or(|m| m > 0.0 && m.is_finite())
            && self.xi.as_ref().is_none_or(|xi| xi.len() == self.depth);
        if !ok {
            return Err(FlError::Invalid(format!("EAFLM config {self:?}")));
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        self.xi
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.depth as f64; self.depth])
    }

    /// Right-hand side of the gate for a history ordered oldest to newest
    /// (newest = current global model). `None` until the history holds
    /// `depth + 1` models.
    pub fn threshold(&self, history: &[ParamVector], n_clients: usize) -> Result<Option<f64>, FlError> {
        self.validate()?;
        let len = history.len();
        if len < self.depth + 1 {
            return Ok(None);
        }
        let dim = history[len - 1].len();
        if let Some(h) = history.iter().find(|h| h.len() != dim) {
            return Err(FlError::LengthMismatch(dim, h.len()));
        }
        let mut drift = vec![0.0; dim];
        for (d, xi) in (1..=self.depth).zip(self.weights()) {
            let newer = history[len - d].as_slice();
            let older = history[len - 1 - d].as_slice();
            for ((acc, a), b) in drift.iter_mut().zip(newer).zip(older) {
                *acc += xi * (a - b);
            }
        }
        let drift_sq: f64 = drift.iter().map(|v| v * v).sum();
        let m = self.m.unwrap_or(n_clients as f64);
        Ok(Some(drift_sq / (self.alpha * self.alpha * self.beta * m * m)))
    }
}

/// True when the client is "lazy" and should not upload this round.
pub fn eaflm_gate_sq_norm(
    grad_sq_norm: f64,
    history: &[ParamVector],
    cfg: &EaflmConfig,
    n_clients: usize,
) -> Result<bool, FlError> {
    if !grad_sq_norm.is_finite() {
        return Err(FlError::NonFinite("eaflm_gate"));
    }
    Ok(match cfg.threshold(history, n_clients)? {
        Some(t) => grad_sq_norm <= t,
        None => false,
    })
}

/// [`eaflm_gate_sq_norm`] on a gradient snapshot. `m` must be set in `cfg`
/// or defaults to 1 here, since the client count is not known.
pub fn eaflm_gate(cur_grad: &GradSnapshot, history: &[ParamVector], cfg: &EaflmConfig) -> Result<bool, FlError> {
    if let Some(h) = history.last() {
        if h.len() != cur_grad.len() {
            return Err(FlError::LengthMismatch(h.len(), cur_grad.len()));
        }
    }
    eaflm_gate_sq_norm(cur_grad.squared_norm(), history, cfg, 1)
}

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::SimError;

/// A delay distribution in abstract ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DelayDist {
    Fixed { ticks: f64 },
    Uniform { lo: f64, hi: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl DelayDist {
    pub fn zero() -> Self {
        DelayDist::Fixed { ticks: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = match *self {
            DelayDist::Fixed { ticks } => ticks.is_finite() && ticks >= 0.0,
            DelayDist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi,
            DelayDist::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
        };
        if !ok {
            return Err(SimError::Invalid(format!("delay distribution {self:?}")));
        }
        Ok(())
    }

    /// Draws a delay, rounded to whole ticks.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let v = match *self {
            DelayDist::Fixed { ticks } => ticks,
            DelayDist::Uniform { lo, hi } if lo == hi => lo,
            DelayDist::Uniform { lo, hi } => rng.random_range(lo..hi),
            DelayDist::LogNormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated").sample(rng),
        };
        v.round() as u64
    }
}

/// Heterogeneity of the simulated client population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    /// Local training time per client update.
    pub compute: DelayDist,
    /// One-way network delay for a report or a model upload.
    pub network: DelayDist,
    /// Per-round probability that a free client sits the round out.
    pub dropout_prob: f64,
    /// Ticks after the round trigger at which the server stops waiting for
    /// reports. `None` waits for every dispatched client.
    #[serde(default)]
    pub deadline: Option<u64>,
    /// Per-client multipliers on compute time (client 1 first). Missing
    /// entries mean 1.0.
    #[serde(default)]
    pub slowdown: Vec<f64>,
}

impl LatencyModel {
    /// No delays, no dropouts: the simulator degenerates to plain rounds.
    pub fn zero() -> Self {
        Self {
            compute: DelayDist::zero(),
            network: DelayDist::zero(),
            dropout_prob: 0.0,
            deadline: None,
            slowdown: Vec::new(),
        }
    }

    /// Moderate device heterogeneity with no lateness or dropouts.
    pub fn heterogeneous() -> Self {
        Self {
            compute: DelayDist::Uniform { lo: 80.0, hi: 120.0 },
            network: DelayDist::Uniform { lo: 2.0, hi: 8.0 },
            dropout_prob: 0.0,
            deadline: None,
            slowdown: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.compute.validate()?;
        self.network.validate()?;
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(SimError::Invalid(format!("dropout probability {}", self.dropout_prob)));
        }
        if self.slowdown.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(SimError::Invalid(
                "slowdown factors must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn speed_factor(&self, client_id: u16) -> f64 {
        self.slowdown.get(client_id as usize - 1).copied().unwrap_or(1.0)
    }
}

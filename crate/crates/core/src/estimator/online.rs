//! Per-neighbor linear regressors in random feature space, trained by
//! online gradient descent on `(βᵀΔ(u) − y)² + λ‖β‖²`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::rff::RffModel;
use crate::{Error, Result, Vector};

/// Step size `η_l` for round `l` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// `η_0 / √l`.
    InvSqrt { eta0: f64 },
}

impl StepSchedule {
    /// `0.1 / √D`.
    pub fn default_for(n_features: usize) -> Self {
        StepSchedule::Constant {
            eta: 0.1 / (n_features as f64).sqrt(),
        }
    }

    pub fn step(&self, round: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::InvSqrt { eta0 } => eta0 / (round.max(1) as f64).sqrt(),
        }
    }
}

/// Estimator node `owner` keeps for the values of in-neighbor `target`.
#[derive(Debug, Clone)]
pub struct NeighborEstimator {
    pub owner: usize,
    pub target: usize,
    pub model: Arc<RffModel>,
    /// `β`, length `2D`.
    pub beta: Vector,
    pub lambda: f64,
    pub schedule: StepSchedule,
    pub last_received: Option<f64>,
    pub updates: u64,
}

impl NeighborEstimator {
    pub fn new(owner: usize, target: usize, model: Arc<RffModel>, lambda: f64, schedule: StepSchedule) -> Self {
        let beta = Vector::zeros(2 * model.n_features());
        NeighborEstimator {
            owner,
            target,
            model,
            beta,
            lambda,
            schedule,
            last_received: None,
            updates: 0,
        }
    }

    /// `βᵀΔ_W(u)`.
    pub fn predict(&self, u: &Vector) -> Result<f64> {
        Ok(self.beta.dot(&self.model.features(u)?))
    }

    /// `(βᵀΔ(u) − y)² + λ‖β‖²`.
    pub fn cost(&self, u: &Vector, target: f64) -> Result<f64> {
        let r = self.predict(u)? - target;
        Ok(r * r + self.lambda * self.beta.norm_squared())
    }

    /// `2(βᵀΔ(u) − y) Δ(u) + 2λβ`.
    pub fn gradient(&self, u: &Vector, target: f64) -> Result<Vector> {
        let phi = self.model.features(u)?;
        let r = self.beta.dot(&phi) - target;
        Ok(phi * (2.0 * r) + &self.beta * (2.0 * self.lambda))
    }

    /// `β ← β − η ∇`. Leaves `β` untouched and fails on a non-finite result.
    pub fn ogd_step(&mut self, u: &Vector, target: f64, eta: f64) -> Result<()> {
        if !(eta > 0.0) {
            return Err(Error::InvalidInput(format!("step size must be > 0, got {eta}")));
        }
        let g = self.gradient(u, target)?;
        let next = &self.beta - g * eta;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "OGD update of estimator ({}, {})",
                self.owner + 1,
                self.target + 1
            )));
        }
        self.beta = next;
        self.updates += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::rff::Kernel;
    use approx::assert_relative_eq;

    fn estimator(lambda: f64) -> NeighborEstimator {
        let model = Arc::new(RffModel::new(16, Kernel::Gaussian { sigma: 1.0 }, 3, 4).unwrap());
        NeighborEstimator::new(0, 1, model, lambda, StepSchedule::default_for(16))
    }

    #[test]
    fn zero_beta_predicts_zero() {
        let e = estimator(0.0);
        assert_eq!(e.predict(&Vector::from_vec(vec![1.0, 2.0, 3.0])).unwrap(), 0.0);
        assert_eq!(e.beta.len(), 32);
    }

    #[test]
    fn beta_equal_to_features_predicts_one() {
        let mut e = estimator(0.0);
        let u = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        e.beta = e.model.features(&u).unwrap();
        assert_relative_eq!(e.predict(&u).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn exact_prediction_is_a_fixed_point() {
        let mut e = estimator(0.0);
        let u = Vector::from_vec(vec![0.3, -1.0, 2.0]);
        e.beta = e.model.features(&u).unwrap() * 2.5;
        let target = e.predict(&u).unwrap();
        let before = e.beta.clone();
        e.ogd_step(&u, target, 0.1).unwrap();
        assert_eq!(e.beta, before);
    }

    #[test]
    fn rejects_bad_step() {
        let mut e = estimator(0.0);
        assert!(e.ogd_step(&Vector::zeros(3), 1.0, 0.0).is_err());
        assert!(e.ogd_step(&Vector::zeros(3), f64::NAN, 0.1).is_err());
        assert_eq!(e.beta, Vector::zeros(32));
    }

    #[test]
    fn schedules() {
        assert_relative_eq!(StepSchedule::default_for(100).step(7), 0.01);
        assert_relative_eq!(StepSchedule::InvSqrt { eta0: 1.0 }.step(4), 0.5);
    }
}

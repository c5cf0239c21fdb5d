//! One-step constrained bandit with a closed-form solution.
//!
//! Reward `-a²`, cost `(0.5 - a)₊`, action in [-1, 1]. Under a cost limit
//! `eps < 0.5` the optimum is `a* = 0.5 - eps`.

use super::{ConstrainedEnv, FeatureStep};
use crate::env::EnvError;

#[derive(Debug, Clone, Default)]
pub struct ToyBandit {
    done: bool,
}

impl ToyBandit {
    pub fn reward(a: f64) -> f64 {
        -a * a
    }

    pub fn cost(a: f64) -> f64 {
        (0.5 - a).max(0.0)
    }

    pub fn optimal_action(eps: f64) -> f64 {
        (0.5 - eps).max(0.0)
    }
}

impl ConstrainedEnv for ToyBandit {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn horizon(&self) -> usize {
        1
    }

    fn reset_features(&mut self, _seed: u64) -> Vec<f64> {
        self.done = false;
        vec![1.0]
    }

    fn step_features(&mut self, action: f64) -> Result<FeatureStep, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        self.done = true;
        let a = action.clamp(-1.0, 1.0);
        Ok(FeatureStep {
            next: vec![1.0],
            r: Self::reward(a),
            c: Self::cost(a),
            done: true,
            fuel_g: 0.0,
            soc: f64::NAN,
        })
    }
}

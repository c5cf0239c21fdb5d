//! Squashed Gaussian policy over a scalar bounded action.
//!
//! The Gaussian lives in an unbounded latent `u`; the action is
//! `low + (high - low)·(1 + tanh u)/2`. Densities and KL divergences are
//! taken in latent space, where they have closed forms.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CrlError, Mlp, Rng};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const TANH_EDGE: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    log_std: f64,
    low: f64,
    high: f64,
}

impl GaussianPolicy {
    pub fn new(mean: Mlp, log_std: f64, (low, high): (f64, f64)) -> Result<Self, CrlError> {
        if mean.output_dim() != 1 {
            return Err(CrlError::ShapeMismatch {
                expected: 1,
                got: mean.output_dim(),
            });
        }
        if !(high > low) {
            return Err(CrlError::Config(format!(
                "empty action range [{low}, {high}]"
            )));
        }
        Ok(Self {
            mean,
            log_std: log_std.clamp(LOG_STD_MIN, LOG_STD_MAX),
            low,
            high,
        })
    }

    /// Tanh MLP mean with the given hidden sizes and a near-zero output layer.
    pub fn mlp(
        obs_dim: usize,
        hidden: &[usize],
        log_std: f64,
        range: (f64, f64),
        rng: &mut Rng,
    ) -> Result<Self, CrlError> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::new(Mlp::tanh(&sizes, 0.1, rng), log_std, range)
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.low, self.high)
    }

    pub fn log_std(&self) -> f64 {
        self.log_std
    }

    pub fn set_log_std(&mut self, v: f64) {
        self.log_std = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    pub fn mean_u(&self, s: &[f64]) -> Result<f64, CrlError> {
        Ok(self.mean.forward(s)?[0])
    }

    pub fn squash(&self, u: f64) -> f64 {
        self.low + (self.high - self.low) * 0.5 * (1.0 + u.tanh())
    }

    /// Inverse of `squash`, saturating just inside the bounds.
    pub fn unsquash(&self, a: f64) -> f64 {
        self.normalize(a).clamp(-TANH_EDGE, TANH_EDGE).atanh()
    }

    /// Maps an action onto [-1, 1].
    pub fn normalize(&self, a: f64) -> f64 {
        2.0 * (a - self.low) / (self.high - self.low) - 1.0
    }

    pub fn deterministic_action(&self, s: &[f64]) -> Result<f64, CrlError> {
        Ok(self.squash(self.mean_u(s)?))
    }

    pub fn sample_u(&self, s: &[f64], rng: &mut Rng) -> Result<f64, CrlError> {
        let eps: f64 = rng.sample(StandardNormal);
        Ok(self.mean_u(s)? + self.std() * eps)
    }

    pub fn sample_action(&self, s: &[f64], rng: &mut Rng) -> Result<f64, CrlError> {
        Ok(self.squash(self.sample_u(s, rng)?))
    }

    pub fn log_prob_u(&self, s: &[f64], u: f64) -> Result<f64, CrlError> {
        Ok(normal_log_density(u, self.mean_u(s)?, self.log_std))
    }

    /// Density of the squashed action, including the tanh Jacobian.
    pub fn log_prob_action(&self, s: &[f64], a: f64) -> Result<f64, CrlError> {
        let u = self.unsquash(a);
        let th = u.tanh();
        let jac = 0.5 * (self.high - self.low) * (1.0 - th * th);
        Ok(self.log_prob_u(s, u)? - jac.ln())
    }

    /// KL(self(·|s) ‖ other(·|s)).
    pub fn kl(&self, other: &GaussianPolicy, s: &[f64]) -> Result<f64, CrlError> {
        Ok(gaussian_kl(
            self.mean_u(s)?,
            self.log_std,
            other.mean_u(s)?,
            other.log_std,
        ))
    }
}

pub fn normal_log_density(x: f64, mu: f64, log_std: f64) -> f64 {
    let z = (x - mu) / log_std.exp();
    -0.5 * z * z - log_std - LN_SQRT_2PI
}

/// KL(N(mu_p, σ_p²) ‖ N(mu_q, σ_q²)).
pub fn gaussian_kl(mu_p: f64, log_std_p: f64, mu_q: f64, log_std_q: f64) -> f64 {
    let var_p = (2.0 * log_std_p).exp();
    let var_q = (2.0 * log_std_q).exp();
    let d = mu_p - mu_q;
    log_std_q - log_std_p + (var_p + d * d) / (2.0 * var_q) - 0.5
}

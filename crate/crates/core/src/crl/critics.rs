//! Reward and cost Q-functions with Polyak-averaged target copies.

use serde::{Deserialize, Serialize};

use super::{Adam, CrlError, Experience, GaussianPolicy, Mlp, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdLosses {
    pub loss_r: f64,
    pub loss_c: f64,
}

/// Both critics read `[features..., normalized action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critics {
    pub q_r: Mlp,
    pub q_c: Mlp,
    pub q_r_target: Mlp,
    pub q_c_target: Mlp,
    pub tau: f64,
    opt_r: Adam,
    opt_c: Adam,
}

impl Critics {
    pub fn new(obs_dim: usize, hidden: &[usize], lr: f64, tau: f64, rng: &mut Rng) -> Self {
        let mut sizes = vec![obs_dim + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q_r = Mlp::tanh(&sizes, 1.0, rng);
        let q_c = Mlp::tanh(&sizes, 1.0, rng);
        Self {
            opt_r: Adam::new(q_r.num_params(), lr),
            opt_c: Adam::new(q_c.num_params(), lr),
            q_r_target: q_r.clone(),
            q_c_target: q_c.clone(),
            q_r,
            q_c,
            tau,
        }
    }

    pub fn input(s: &[f64], a_norm: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(s.len() + 1);
        x.extend_from_slice(s);
        x.push(a_norm);
        x
    }

    /// (Q_r, Q_c) of the live networks at a normalized action.
    pub fn values(&self, s: &[f64], a_norm: f64) -> Result<(f64, f64), CrlError> {
        let x = Self::input(s, a_norm);
        Ok((self.q_r.forward(&x)?[0], self.q_c.forward(&x)?[0]))
    }

    /// One Adam step on each critic's mean squared TD error, then Polyak
    /// averaging of the targets. Returns the losses before the step.
    pub fn td_update(
        &mut self,
        batch: &[&Experience],
        policy: &GaussianPolicy,
        gamma: f64,
        rng: &mut Rng,
    ) -> Result<TdLosses, CrlError> {
        if batch.is_empty() {
            return Err(CrlError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let mut grad_r = vec![0.0; self.q_r.num_params()];
        let mut grad_c = vec![0.0; self.q_c.num_params()];
        let (mut loss_r, mut loss_c) = (0.0, 0.0);

        for e in batch {
            let (y_r, y_c) = if e.done || gamma == 0.0 {
                (e.r, e.c)
            } else {
                let a_next = policy.normalize(policy.sample_action(&e.s_next, rng)?);
                let x_next = Self::input(&e.s_next, a_next);
                (
                    e.r + gamma * self.q_r_target.forward(&x_next)?[0],
                    e.c + gamma * self.q_c_target.forward(&x_next)?[0],
                )
            };
            let x = Self::input(&e.s, policy.normalize(e.a));

            let cache = self.q_r.forward_cached(&x)?;
            let d = cache.output()[0] - y_r;
            loss_r += d * d / n;
            self.q_r.backward(&cache, &[2.0 * d / n], &mut grad_r)?;

            let cache = self.q_c.forward_cached(&x)?;
            let d = cache.output()[0] - y_c;
            loss_c += d * d / n;
            self.q_c.backward(&cache, &[2.0 * d / n], &mut grad_c)?;
        }
        if !(loss_r.is_finite() && loss_c.is_finite()) {
            return Err(CrlError::NonFinite("critic loss".into()));
        }
        self.opt_r.step(self.q_r.params_mut(), &grad_r);
        self.opt_c.step(self.q_c.params_mut(), &grad_c);
        self.q_r_target.polyak_from(&self.q_r, self.tau);
        self.q_c_target.polyak_from(&self.q_c, self.tau);
        Ok(TdLosses { loss_r, loss_c })
    }
}

//! Constrained variational policy optimisation.
//!
//! Each policy update is an EM pair. The E-step samples `M` latent actions
//! per state from the current policy and reweights them with
//! `w ∝ exp((Q_r - λ·Q_c)/η)`, where `(η, λ)` minimise a convex dual shared
//! across the batch. The M-step fits the policy mean to the reweighted
//! samples by weighted maximum likelihood inside a KL trust region.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::crl::policy::{gaussian_kl, normal_log_density};
use crate::crl::trainer::{
    collect, run_episode, track_best, Behaviour, BestPolicy, EpochRecord, TrainConfig,
    TrainObserver, TrainOutcome, Worker,
};
use crate::crl::{
    worker_rng, Adam, ConstrainedEnv, Critics, CrlError, GaussianPolicy, ReplayBuffer, Rng,
};
use crate::lagrangian::cost_limit;

/// Weighted-mean latent targets are clipped to `±LATENT_LIMIT`, where the
/// tanh squash still has slope, so the mean cannot drift into saturation.
pub const LATENT_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvpoParams {
    /// E-step KL radius around the sampling policy.
    pub eps2: f64,
    /// M-step KL radius.
    pub eps_kl: f64,
    /// Actions sampled per state.
    pub samples: usize,
    pub eta_min: f64,
    pub lambda_max: f64,
    pub dual_max_iters: usize,
    /// Projected-gradient norm at which the dual solve stops.
    pub dual_tol: f64,
    /// Run an E/M pair after every this many critic updates.
    pub policy_every: usize,
    pub m_iters: usize,
    pub m_lr: f64,
    /// Step size of the M-step KL multiplier, per unit of relative violation.
    pub kl_multiplier_lr: f64,
}

impl Default for CvpoParams {
    fn default() -> Self {
        Self {
            eps2: 0.1,
            eps_kl: 0.01,
            samples: 16,
            eta_min: 1e-6,
            lambda_max: 100.0,
            dual_max_iters: 200,
            dual_tol: 1e-6,
            policy_every: 4,
            m_iters: 10,
            m_lr: 1e-3,
            kl_multiplier_lr: 1.0,
        }
    }
}

impl CvpoParams {
    pub fn validate(&self) -> Result<(), CrlError> {
        let bad = |m: &str| Err(CrlError::Config(m.to_string()));
        if !(self.eps2 > 0.0 && self.eps_kl > 0.0) {
            return bad("eps2 and eps_kl must be positive");
        }
        if self.samples < 2 {
            return bad("need at least two sampled actions per state");
        }
        if !(self.eta_min > 0.0 && self.lambda_max > 0.0) {
            return bad("eta_min and lambda_max must be positive");
        }
        if self.dual_max_iters == 0 || !(self.dual_tol > 0.0) {
            return bad("dual solver needs iterations and a positive tolerance");
        }
        if self.policy_every == 0 || self.m_iters == 0 {
            return bad("policy_every and m_iters must be positive");
        }
        if !(self.m_lr > 0.0 && self.kl_multiplier_lr >= 0.0) {
            return bad("invalid M-step step sizes");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CvpoConfig {
    pub train: TrainConfig,
    pub cvpo: CvpoParams,
}

/// Critic values of `m` sampled actions for each state, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QSamples {
    m: usize,
    q_r: Vec<f64>,
    q_c: Vec<f64>,
}

impl QSamples {
    pub fn new(m: usize, q_r: Vec<f64>, q_c: Vec<f64>) -> Result<Self, CrlError> {
        if q_r.len() != q_c.len() {
            return Err(CrlError::ShapeMismatch {
                expected: q_r.len(),
                got: q_c.len(),
            });
        }
        if m == 0 || q_r.is_empty() {
            return Err(CrlError::EmptyBatch);
        }
        if !q_r.len().is_multiple_of(m) {
            return Err(CrlError::ShapeMismatch {
                expected: q_r.len().div_ceil(m) * m,
                got: q_r.len(),
            });
        }
        Ok(Self { m, q_r, q_c })
    }

    pub fn states(&self) -> usize {
        self.q_r.len() / self.m
    }

    pub fn samples(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> (&[f64], &[f64]) {
        let r = i * self.m..(i + 1) * self.m;
        (&self.q_r[r.clone()], &self.q_c[r])
    }
}

/// Dual value and its partial derivatives in η and λ.
fn dual_eval(eta: f64, lambda: f64, q: &QSamples, eps1: f64, eps2: f64) -> (f64, f64, f64) {
    let n = q.states() as f64;
    let ln_m = (q.m as f64).ln();
    let (mut lme, mut wa, mut wc) = (0.0, 0.0, 0.0);
    let mut z = vec![0.0; q.m];
    for i in 0..q.states() {
        let (qr, qc) = q.row(i);
        for j in 0..q.m {
            z[j] = (qr[j] - lambda * qc[j]) / eta;
        }
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let (mut sa, mut sc) = (0.0, 0.0);
        for j in 0..q.m {
            let e = (z[j] - zmax).exp();
            sum += e;
            sa += e * (z[j] - zmax);
            sc += e * qc[j];
        }
        lme += zmax + sum.ln() - ln_m;
        // Σ w·z = zmax + Σ w·(z - zmax)
        wa += zmax + sa / sum;
        wc += sc / sum;
    }
    let (lme, wa, wc) = (lme / n, wa / n, wc / n);
    let g = lambda * eps1 + eta * eps2 + eta * lme;
    (g, eps2 + lme - wa, eps1 - wc)
}

/// `λ·eps1 + η·eps2 + η·mean_s log mean_j exp((Q_r - λ·Q_c)/η)`.
pub fn dual_objective(eta: f64, lambda: f64, q: &QSamples, eps1: f64, eps2: f64) -> f64 {
    dual_eval(eta, lambda, q, eps1, eps2).0
}

/// Gradient of [`dual_objective`] with respect to `(η, λ)`.
pub fn dual_gradient(eta: f64, lambda: f64, q: &QSamples, eps1: f64, eps2: f64) -> (f64, f64) {
    let (_, de, dl) = dual_eval(eta, lambda, q, eps1, eps2);
    (de, dl)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSolution {
    pub eta: f64,
    pub lambda: f64,
    pub value: f64,
    pub iterations: usize,
    /// False when the iteration cap or a stalled line search ended the solve.
    pub converged: bool,
}

/// Projected gradient descent on the dual over `[eta_min, ∞) × [0, lambda_max]`
/// with Barzilai-Borwein steps and Armijo backtracking.
pub fn solve_duals(
    q: &QSamples,
    eps1: f64,
    eps2: f64,
    params: &CvpoParams,
    start: (f64, f64),
) -> Result<DualSolution, CrlError> {
    let proj = |x: [f64; 2]| [x[0].max(params.eta_min), x[1].clamp(0.0, params.lambda_max)];
    let eval = |x: [f64; 2]| -> Result<(f64, [f64; 2]), CrlError> {
        let (g, de, dl) = dual_eval(x[0], x[1], q, eps1, eps2);
        if !(g.is_finite() && de.is_finite() && dl.is_finite()) {
            return Err(CrlError::NonFinite(format!(
                "dual objective at eta={}, lambda={}",
                x[0], x[1]
            )));
        }
        Ok((g, [de, dl]))
    };

    let mut x = proj([start.0, start.1]);
    let (mut g, mut grad) = eval(x)?;
    let mut step = 1.0 / grad[0].abs().max(grad[1].abs()).max(1.0);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.dual_max_iters {
        let p = proj([x[0] - grad[0], x[1] - grad[1]]);
        if (p[0] - x[0]).hypot(p[1] - x[1]) <= params.dual_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut s = step;
        let accepted = loop {
            let xn = proj([x[0] - s * grad[0], x[1] - s * grad[1]]);
            let d = [xn[0] - x[0], xn[1] - x[1]];
            let (gn, gradn) = eval(xn)?;
            if gn <= g + 1e-4 * (grad[0] * d[0] + grad[1] * d[1]) {
                break Some((xn, d, gn, gradn));
            }
            s *= 0.5;
            if s < 1e-30 {
                break None;
            }
        };
        let Some((xn, d, gn, gradn)) = accepted else {
            break;
        };
        let y = [gradn[0] - grad[0], gradn[1] - grad[1]];
        let sy = d[0] * y[0] + d[1] * y[1];
        let ss = d[0] * d[0] + d[1] * d[1];
        step = if sy > 0.0 { ss / sy } else { 2.0 * s };
        step = step.clamp(1e-12, 1e12);
        x = xn;
        g = gn;
        grad = gradn;
    }
    if !converged {
        log::debug!(
            "dual solve stopped after {iterations} iterations at eta={}, lambda={}",
            x[0],
            x[1]
        );
    }
    Ok(DualSolution {
        eta: x[0],
        lambda: x[1],
        value: g,
        iterations,
        converged,
    })
}

/// Normalised `exp((Q_r - λ·Q_c)/η)` over the sampled actions.
pub fn variational_weights(eta: f64, lambda: f64, q_r: &[f64], q_c: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = q_r
        .iter()
        .zip(q_c)
        .map(|(r, c)| (r - lambda * c) / eta)
        .collect();
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Reweighted latent samples for a batch of states.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalWeights {
    pub m: usize,
    /// Latent samples, `m` per state.
    pub u: Vec<f64>,
    pub weights: Vec<f64>,
    pub eta: f64,
    pub lambda: f64,
    /// Batch mean of `E_q[Q_c]`.
    pub expected_cost: f64,
    /// Batch mean of the empirical `KL(q ‖ π_old)`.
    pub kl: f64,
    pub converged: bool,
}

impl VariationalWeights {
    fn check(&self) -> Result<(), CrlError> {
        if self.m == 0 || self.weights.is_empty() {
            return Err(CrlError::DegenerateWeights("no samples".into()));
        }
        for (i, w) in self.weights.chunks(self.m).enumerate() {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(CrlError::DegenerateWeights(format!(
                    "state {i} sums to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the variational distribution for `states` from the sampling policy.
pub fn e_step(
    states: &[&[f64]],
    critics: &Critics,
    policy: &GaussianPolicy,
    eps1: f64,
    params: &CvpoParams,
    start: (f64, f64),
    rng: &mut Rng,
) -> Result<VariationalWeights, CrlError> {
    if states.is_empty() {
        return Err(CrlError::DegenerateWeights("empty state batch".into()));
    }
    let m = params.samples;
    let sigma = policy.std();
    let mut u = Vec::with_capacity(states.len() * m);
    let mut q_r = Vec::with_capacity(u.capacity());
    let mut q_c = Vec::with_capacity(u.capacity());
    for s in states {
        let mu = policy.mean_u(s)?;
        for _ in 0..m {
            let eps: f64 = rng.sample(StandardNormal);
            let uj = mu + sigma * eps;
            let (r, c) = critics.values(s, uj.tanh())?;
            u.push(uj);
            q_r.push(r);
            q_c.push(c);
        }
    }
    if q_r.iter().chain(&q_c).any(|v| !v.is_finite()) {
        return Err(CrlError::DegenerateWeights(
            "non-finite critic values".into(),
        ));
    }
    let q = QSamples::new(m, q_r, q_c)?;
    let sol = solve_duals(&q, eps1, params.eps2, params, start)?;
    let mut weights = Vec::with_capacity(u.len());
    let (mut cost, mut kl) = (0.0, 0.0);
    for i in 0..q.states() {
        let (qr, qc) = q.row(i);
        let w = variational_weights(sol.eta, sol.lambda, qr, qc);
        cost += w.iter().zip(qc).map(|(w, c)| w * c).sum::<f64>();
        kl += w
            .iter()
            .filter(|w| **w > 0.0)
            .map(|w| w * (w * m as f64).ln())
            .sum::<f64>();
        weights.extend(w);
    }
    let n = q.states() as f64;
    let out = VariationalWeights {
        m,
        u,
        weights,
        eta: sol.eta,
        lambda: sol.lambda,
        expected_cost: cost / n,
        kl: kl / n,
        converged: sol.converged,
    };
    out.check()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStepReport {
    /// Mean KL(π_old ‖ π_new) over the batch after acceptance.
    pub kl: f64,
    /// Weighted log-likelihood per state, before the update and after each
    /// gradient iteration (before any backtracking).
    pub objective: Vec<f64>,
    /// Weighted log-likelihood of the accepted parameters.
    pub accepted_objective: f64,
    /// Fraction of the proposed parameter step that was kept.
    pub step_fraction: f64,
}

fn means(policy: &GaussianPolicy, states: &[&[f64]]) -> Result<Vec<f64>, CrlError> {
    states.iter().map(|s| policy.mean_u(s)).collect()
}

/// Per-state weighted log-likelihood of the samples under means `mu`.
fn weighted_loglik(mu: &[f64], log_std: f64, vw: &VariationalWeights) -> f64 {
    let total: f64 = mu
        .iter()
        .zip(vw.u.chunks(vw.m).zip(vw.weights.chunks(vw.m)))
        .map(|(m, (u, w))| {
            u.iter()
                .zip(w)
                .map(|(u, w)| w * normal_log_density(*u, *m, log_std))
                .sum::<f64>()
        })
        .sum();
    total / mu.len() as f64
}

fn mean_kl(mu_old: &[f64], mu_new: &[f64], log_std: f64) -> f64 {
    let total: f64 = mu_old
        .iter()
        .zip(mu_new)
        .map(|(a, b)| gaussian_kl(*a, log_std, *b, log_std))
        .sum();
    total / mu_old.len() as f64
}

/// Weighted maximum likelihood for the policy mean subject to
/// `mean KL(π_old ‖ π_new) ≤ eps_kl`.
///
/// Gradient steps on `-loglik + α·KL` alternate with ascent on the
/// multiplier `α`. A proposal whose KL still exceeds `1.5·eps_kl` is pulled
/// back towards the old parameters by halving.
pub fn m_step_update(
    policy: &mut GaussianPolicy,
    states: &[&[f64]],
    vw: &VariationalWeights,
    params: &CvpoParams,
    alpha: &mut f64,
) -> Result<MStepReport, CrlError> {
    vw.check()?;
    if vw.u.len() != states.len() * vw.m {
        return Err(CrlError::ShapeMismatch {
            expected: states.len() * vw.m,
            got: vw.u.len(),
        });
    }
    let old = policy.clone();
    let var = old.std().powi(2);
    let n = states.len() as f64;
    let ls = old.log_std();
    let mu_old = means(&old, states)?;
    let target: Vec<f64> =
        vw.u.chunks(vw.m)
            .zip(vw.weights.chunks(vw.m))
            .map(|(u, w)| {
                let m: f64 = u.iter().zip(w).map(|(u, w)| u * w).sum();
                m.clamp(-LATENT_LIMIT, LATENT_LIMIT)
            })
            .collect();

    let mut objective = vec![weighted_loglik(&mu_old, ls, vw)];
    let mut opt = Adam::new(policy.mean.num_params(), params.m_lr);
    let mut kl = 0.0;
    for _ in 0..params.m_iters {
        let mut grad = vec![0.0; policy.mean.num_params()];
        for (i, s) in states.iter().enumerate() {
            let cache = policy.mean.forward_cached(s)?;
            let mu = cache.output()[0];
            // d/dμ of the per-state loss, with Σ w = 1.
            let up = ((mu - target[i]) + *alpha * (mu - mu_old[i])) / (var * n);
            policy.mean.backward(&cache, &[up], &mut grad)?;
        }
        opt.step(policy.mean.params_mut(), &grad);
        if !policy.mean.is_finite() {
            return Err(CrlError::NonFinite("policy parameters in M-step".into()));
        }
        let mu = means(policy, states)?;
        kl = mean_kl(&mu_old, &mu, ls);
        *alpha = (*alpha + params.kl_multiplier_lr * (kl - params.eps_kl) / params.eps_kl).max(0.0);
        objective.push(weighted_loglik(&mu, ls, vw));
    }

    let proposal = policy.mean.params().to_vec();
    let mut t = 1.0;
    while !(kl <= 1.5 * params.eps_kl) && t > 1e-9 {
        t *= 0.5;
        let mixed: Vec<f64> = old
            .mean
            .params()
            .iter()
            .zip(&proposal)
            .map(|(a, b)| a + t * (b - a))
            .collect();
        policy.mean.set_params(&mixed)?;
        kl = mean_kl(&mu_old, &means(policy, states)?, ls);
    }
    if !(kl <= 10.0 * params.eps_kl) {
        *policy = old;
        return Err(CrlError::KlDivergenceBlowup {
            kl,
            eps_kl: params.eps_kl,
        });
    }
    if !(kl <= 1.5 * params.eps_kl) {
        // Within the blow-up margin but outside the acceptance band.
        *policy = old;
        kl = 0.0;
        t = 0.0;
    }
    Ok(MStepReport {
        kl,
        accepted_objective: weighted_loglik(&means(policy, states)?, ls, vw),
        objective,
        step_fraction: t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvpoState {
    pub epoch: usize,
    pub policy: GaussianPolicy,
    pub critics: Critics,
    pub eta: f64,
    pub lambda: f64,
    /// M-step KL multiplier, carried across updates.
    pub kl_alpha: f64,
    pub rng: Rng,
    pub worker_rngs: Vec<Rng>,
}

pub const CHECKPOINT_KIND: &str = "cvpo";

pub fn train<E, F>(
    config: &CvpoConfig,
    factory: F,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<CvpoState>, CrlError>
where
    E: ConstrainedEnv + Send,
    F: Fn(usize) -> Result<E, CrlError>,
{
    let cfg = &config.train;
    let params = &config.cvpo;
    cfg.validate()?;
    params.validate()?;
    let mut workers = (0..cfg.num_envs)
        .map(|i| {
            Ok(Worker {
                env: factory(i)?,
                rng: worker_rng(seed, i as u64 + 1),
                episodes: 0,
            })
        })
        .collect::<Result<Vec<_>, CrlError>>()?;
    let mut eval_env = factory(cfg.num_envs)?;
    let obs_dim = eval_env.observation_dim();
    let range = eval_env.action_range();
    // Critics learn scaled costs, so the E-step threshold is scaled too.
    let eps1 = cost_limit(cfg.eps_t, eval_env.horizon(), cfg.gamma)? * cfg.cost_scale;

    let mut rng = worker_rng(seed, 0);
    let policy = GaussianPolicy::mlp(obs_dim, &cfg.hidden, cfg.init_log_std, range, &mut rng)?;
    let critics = Critics::new(obs_dim, &cfg.hidden, cfg.critic_lr, cfg.tau, &mut rng);
    let mut state = CvpoState {
        epoch: 0,
        policy,
        critics,
        eta: 1.0,
        lambda: 0.0,
        kl_alpha: 0.0,
        rng,
        worker_rngs: Vec::new(),
    };
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<BestPolicy> = None;
    let scales = (cfg.reward_scale, cfg.cost_scale);
    let mut interrupted = false;

    for epoch in 0..cfg.epochs {
        if observer.should_stop() {
            interrupted = true;
            break;
        }
        state.policy.set_log_std(cfg.log_std_at(epoch));
        let warmup = epoch < cfg.warmup_epochs;
        let behaviour = if warmup {
            Behaviour::Uniform
        } else {
            Behaviour::Sample
        };
        let episodes = collect(
            &mut workers,
            &state.policy,
            behaviour,
            scales,
            cfg.gamma,
            cfg.steps_per_worker(),
        )?;
        let stats: Vec<_> = episodes.iter().map(|e| e.1).collect();
        for (exps, _) in episodes {
            for e in exps {
                buffer.push(e);
            }
        }

        if buffer.len() >= cfg.batch_size {
            for k in 0..cfg.updates_per_epoch {
                let batch = buffer.sample(cfg.batch_size, &mut state.rng)?;
                state
                    .critics
                    .td_update(&batch, &state.policy, cfg.gamma, &mut state.rng)?;
                if warmup || (k + 1) % params.policy_every != 0 {
                    continue;
                }
                let states: Vec<&[f64]> = batch.iter().map(|e| e.s.as_slice()).collect();
                let vw = e_step(
                    &states,
                    &state.critics,
                    &state.policy,
                    eps1,
                    params,
                    (state.eta, state.lambda),
                    &mut state.rng,
                )?;
                state.eta = vw.eta;
                state.lambda = vw.lambda;
                m_step_update(&mut state.policy, &states, &vw, params, &mut state.kl_alpha)?;
            }
        }

        let (_, eval) = run_episode(
            &mut eval_env,
            &state.policy,
            Behaviour::Mean,
            scales,
            cfg.gamma,
            0,
            &mut state.rng,
        )?;
        let mut record = EpochRecord::from_episodes(epoch, &stats, state.lambda, eval);
        record.eta = Some(state.eta);
        record.lambda_cvpo = Some(state.lambda);
        let candidate = BestPolicy {
            epoch,
            policy: state.policy.clone(),
            eval,
            feasible: eval.cost <= cfg.eps_t,
        };
        let improved = !warmup && track_best(&mut best, candidate);
        state.epoch = epoch + 1;
        log::info!(
            "epoch {epoch}: Jr {:.3} Jc {:.4} eta {:.4} lambda {:.4} | eval fuel {:.2} g cost {:.3} soc {:.4}",
            record.mean_jr,
            record.mean_jc,
            state.eta,
            state.lambda,
            eval.fuel_g,
            eval.cost,
            eval.final_soc
        );
        observer.on_epoch(&record, if improved { best.as_ref() } else { None })?;
        trace.push(record);
    }

    state.worker_rngs = workers.into_iter().map(|w| w.rng).collect();
    Ok(TrainOutcome {
        trace,
        best,
        state,
        interrupted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn q1(qr: &[f64], qc: &[f64]) -> QSamples {
        QSamples::new(qr.len(), qr.to_vec(), qc.to_vec()).unwrap()
    }

    #[test]
    fn dual_hand_value() {
        let q = q1(&[1.0, 0.0], &[0.0, 0.0]);
        let g = dual_objective(1.0, 0.0, &q, 0.3, 0.0);
        assert!((g - ((1f64.exp() + 1.0) / 2.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_reward_dual() {
        let q = QSamples::new(3, vec![2.5; 6], vec![0.0; 6]).unwrap();
        for (eta, lam) in [(0.1, 0.0), (3.0, 2.0), (1e-6, 7.0)] {
            let g = dual_objective(eta, lam, &q, 0.4, 0.2);
            assert!((g - (lam * 0.4 + eta * 0.2 + 2.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let q = QSamples::new(
            3,
            vec![1.0, -0.5, 0.3, 2.0, 0.1, -1.0],
            vec![0.4, 0.0, 1.2, 0.3, 0.9, 0.2],
        )
        .unwrap();
        let (eta, lam) = (0.7, 0.4);
        let (de, dl) = dual_gradient(eta, lam, &q, 0.3, 0.1);
        let h = 1e-6;
        let f = |e, l| dual_objective(e, l, &q, 0.3, 0.1);
        let fe = (f(eta + h, lam) - f(eta - h, lam)) / (2.0 * h);
        let fl = (f(eta, lam + h) - f(eta, lam - h)) / (2.0 * h);
        assert!((de - fe).abs() < 1e-7, "{de} vs {fe}");
        assert!((dl - fl).abs() < 1e-7, "{dl} vs {fl}");
    }

    #[test]
    fn softmax_weights() {
        let w = variational_weights(1.0, 0.0, &[1.0, 0.0], &[0.0, 0.0]);
        let e = 1f64.exp();
        assert!((w[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((w[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        let flat = variational_weights(1e9, 0.0, &[5.0, -3.0, 1.0], &[0.0; 3]);
        assert!(flat.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-8));
    }

    #[test]
    fn zero_cost_gives_zero_lambda() {
        let q = QSamples::new(
            4,
            vec![1.0, 0.2, -0.4, 0.9, 0.0, 0.5, 0.3, -1.0],
            vec![0.0; 8],
        )
        .unwrap();
        let sol = solve_duals(&q, 0.2, 0.1, &CvpoParams::default(), (1.0, 3.0)).unwrap();
        assert_eq!(sol.lambda, 0.0);
        assert!(sol.converged);
    }

    #[test]
    fn binding_constraint_instance() {
        let q = q1(&[1.0, 0.0], &[1.0, 0.0]);
        let params = CvpoParams {
            dual_max_iters: 5000,
            ..CvpoParams::default()
        };
        let sol = solve_duals(&q, 0.3, 1.0, &params, (1.0, 0.0)).unwrap();
        let w = variational_weights(sol.eta, sol.lambda, &[1.0, 0.0], &[1.0, 0.0]);
        assert!(
            (w[0] - 0.3).abs() < 0.05 && (w[1] - 0.7).abs() < 0.05,
            "{w:?} at {sol:?}"
        );
        assert!(w[0] <= 0.32);
    }

    #[test]
    fn m_step_fixed_point_under_uniform_weights() {
        let mut rng = Rng::seed_from_u64(3);
        let mut p = GaussianPolicy::mlp(2, &[8], -0.5, (0.0, 1.0), &mut rng).unwrap();
        let states: Vec<Vec<f64>> = (0..32).map(|i| vec![i as f64 / 32.0, 0.5]).collect();
        let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        // Symmetric samples around each mean so the weighted MLE is the old mean.
        let mut u = Vec::new();
        for s in &refs {
            let mu = p.mean_u(s).unwrap();
            u.extend([mu - 0.3, mu + 0.3, mu - 0.1, mu + 0.1]);
        }
        let vw = VariationalWeights {
            m: 4,
            weights: vec![0.25; u.len()],
            u,
            eta: 1.0,
            lambda: 0.0,
            expected_cost: 0.0,
            kl: 0.0,
            converged: true,
        };
        let params = CvpoParams {
            eps_kl: 1e-4,
            ..CvpoParams::default()
        };
        let before = weighted_loglik(&means(&p, &refs).unwrap(), p.log_std(), &vw);
        let rep = m_step_update(&mut p, &refs, &vw, &params, &mut 0.0).unwrap();
        assert!(rep.kl <= 1.5e-4);
        assert!((rep.accepted_objective - before).abs() < 1e-3);
    }

    #[test]
    fn kl_multiplier_never_negative() {
        let mut rng = Rng::seed_from_u64(5);
        let mut p = GaussianPolicy::mlp(1, &[4], 0.0, (-1.0, 1.0), &mut rng).unwrap();
        let s = [0.2];
        let refs: Vec<&[f64]> = vec![&s];
        let vw = VariationalWeights {
            m: 2,
            u: vec![0.0, 0.1],
            weights: vec![0.5, 0.5],
            eta: 1.0,
            lambda: 0.0,
            expected_cost: 0.0,
            kl: 0.0,
            converged: true,
        };
        let mut alpha = 0.0;
        m_step_update(&mut p, &refs, &vw, &CvpoParams::default(), &mut alpha).unwrap();
        assert!(alpha >= 0.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(QSamples::new(3, vec![0.0; 4], vec![0.0; 4]).is_err());
        assert!(QSamples::new(2, vec![0.0; 4], vec![0.0; 2]).is_err());
        assert_eq!(QSamples::new(2, vec![], vec![]), Err(CrlError::EmptyBatch));
    }
}

//! PID-Lagrangian constrained actor-critic.
//!
//! A deterministic-policy-gradient actor maximises `Q_r - λ·Q_c`; the
//! multiplier λ follows a PID controller on the measured episode cost,
//! updated once per epoch.

use serde::{Deserialize, Serialize};

use crate::crl::trainer::{
    collect, run_episode, track_best, Behaviour, BestPolicy, EpochRecord, TrainConfig,
    TrainObserver, TrainOutcome, Worker,
};
use crate::crl::{
    worker_rng, Adam, ConstrainedEnv, Critics, CrlError, GaussianPolicy, ReplayBuffer, Rng,
};

/// Discounted per-trajectory limit equivalent to an undiscounted
/// per-episode limit `eps_t` over `t` steps.
pub fn cost_limit(eps_t: f64, t: usize, gamma: f64) -> Result<f64, CrlError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(CrlError::Config(format!("invalid discount {gamma}")));
    }
    if t == 0 || !(eps_t >= 0.0) {
        return Err(CrlError::Config("need eps_t >= 0 and T >= 1".into()));
    }
    if gamma == 1.0 {
        return Ok(eps_t);
    }
    let tf = t as f64;
    Ok(eps_t * -(tf * gamma.ln()).exp_m1() / (tf * (1.0 - gamma)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 1.0,
            ki: 0.2,
            kd: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidDualState {
    pub lambda: f64,
    pub gains: PidGains,
    pub integral: f64,
    /// `None` until the first measurement; the derivative term is then zero.
    pub prev_cost: Option<f64>,
}

impl PidDualState {
    pub fn new(gains: PidGains) -> Result<Self, CrlError> {
        if !(gains.kp >= 0.0 && gains.ki >= 0.0 && gains.kd >= 0.0) {
            return Err(CrlError::Config("PID gains must be non-negative".into()));
        }
        Ok(Self {
            lambda: 0.0,
            gains,
            integral: 0.0,
            prev_cost: None,
        })
    }
}

pub fn pid_dual_update(state: &PidDualState, j_c: f64, eps1: f64) -> PidDualState {
    let delta = j_c - eps1;
    let deriv = state.prev_cost.map_or(0.0, |p| (j_c - p).max(0.0));
    let integral = (state.integral + delta).max(0.0);
    let g = state.gains;
    PidDualState {
        lambda: (g.kp * delta + g.ki * integral + g.kd * deriv).max(0.0),
        gains: g,
        integral,
        prev_cost: Some(j_c),
    }
}

/// `-mean(Q_r - λ·Q_c) / (1 + λ)`.
pub fn lagrangian_actor_loss(q_r: &[f64], q_c: &[f64], lambda: f64) -> Result<f64, CrlError> {
    if q_r.len() != q_c.len() {
        return Err(CrlError::ShapeMismatch {
            expected: q_r.len(),
            got: q_c.len(),
        });
    }
    if q_r.is_empty() {
        return Err(CrlError::EmptyBatch);
    }
    let n = q_r.len() as f64;
    let s: f64 = q_r.iter().zip(q_c).map(|(r, c)| r - lambda * c).sum();
    Ok(-s / n / (1.0 + lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LagrangianConfig {
    pub train: TrainConfig,
    pub pid: PidGains,
}

/// Everything needed to continue or replay training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianState {
    pub epoch: usize,
    pub policy: GaussianPolicy,
    pub actor_opt: Adam,
    pub critics: Critics,
    pub dual: PidDualState,
    pub rng: Rng,
    pub worker_rngs: Vec<Rng>,
}

pub const CHECKPOINT_KIND: &str = "pid_lagrangian";

/// One deterministic-policy-gradient step on the normalised Lagrangian.
fn actor_step(
    policy: &mut GaussianPolicy,
    opt: &mut Adam,
    critics: &Critics,
    states: &[&[f64]],
    lambda: f64,
    action_reg: f64,
) -> Result<(), CrlError> {
    let n = states.len() as f64;
    let mut grad = vec![0.0; policy.mean.num_params()];
    for s in states {
        let cache = policy.mean.forward_cached(s)?;
        let u = cache.output()[0];
        let an = u.tanh();
        let x = Critics::input(s, an);
        let (_, dxr) = critics.q_r.gradient(&x, &[1.0])?;
        let (_, dxc) = critics.q_c.gradient(&x, &[1.0])?;
        let k = x.len() - 1;
        let dq = dxr[k] - lambda * dxc[k];
        let up = (-dq * (1.0 - an * an) / (1.0 + lambda) + 2.0 * action_reg * u) / n;
        policy.mean.backward(&cache, &[up], &mut grad)?;
    }
    opt.step(policy.mean.params_mut(), &grad);
    if !policy.mean.is_finite() {
        return Err(CrlError::NonFinite("actor parameters".into()));
    }
    Ok(())
}

pub fn train<E, F>(
    config: &LagrangianConfig,
    factory: F,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<LagrangianState>, CrlError>
where
    E: ConstrainedEnv + Send,
    F: Fn(usize) -> Result<E, CrlError>,
{
    let cfg = &config.train;
    cfg.validate()?;
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
    let horizon = eval_env.horizon();
    let eps1 = cost_limit(cfg.eps_t, horizon, cfg.gamma)?;
    let ratio = cost_limit(1.0, horizon, cfg.gamma)?;

    let mut rng = worker_rng(seed, 0);
    let policy = GaussianPolicy::mlp(obs_dim, &cfg.hidden, cfg.init_log_std, range, &mut rng)?;
    let critics = Critics::new(obs_dim, &cfg.hidden, cfg.critic_lr, cfg.tau, &mut rng);
    let mut state = LagrangianState {
        epoch: 0,
        actor_opt: Adam::new(policy.mean.num_params(), cfg.actor_lr),
        policy,
        critics,
        dual: PidDualState::new(config.pid)?,
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

        if !warmup {
            let mean_cost = stats.iter().map(|s| s.cost).sum::<f64>() / stats.len() as f64;
            state.dual = pid_dual_update(&state.dual, mean_cost * ratio, eps1);
        }
        let lambda = state.dual.lambda;

        if buffer.len() >= cfg.batch_size {
            for _ in 0..cfg.updates_per_epoch {
                let batch = buffer.sample(cfg.batch_size, &mut state.rng)?;
                state
                    .critics
                    .td_update(&batch, &state.policy, cfg.gamma, &mut state.rng)?;
                let states: Vec<&[f64]> = batch.iter().map(|e| e.s.as_slice()).collect();
                actor_step(
                    &mut state.policy,
                    &mut state.actor_opt,
                    &state.critics,
                    &states,
                    lambda,
                    cfg.action_reg,
                )?;
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
        let record = EpochRecord::from_episodes(epoch, &stats, lambda, eval);
        let candidate = BestPolicy {
            epoch,
            policy: state.policy.clone(),
            eval,
            feasible: eval.cost <= cfg.eps_t,
        };
        let improved = !warmup && track_best(&mut best, candidate);
        state.epoch = epoch + 1;
        log::info!(
            "epoch {epoch}: Jr {:.3} Jc {:.4} lambda {:.4} | eval fuel {:.2} g cost {:.3} soc {:.4}",
            record.mean_jr,
            record.mean_jc,
            lambda,
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

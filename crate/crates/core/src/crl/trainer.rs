//! Pieces shared by both constrained trainers: configuration, parallel
//! rollout workers, per-epoch records and best-policy bookkeeping.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ConstrainedEnv, CrlError, Experience, GaussianPolicy, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Environment steps per epoch, summed over workers.
    pub steps_per_epoch: usize,
    pub num_envs: usize,
    pub gamma: f64,
    /// Undiscounted per-episode cost limit.
    pub eps_t: f64,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub updates_per_epoch: usize,
    pub replay_capacity: usize,
    /// Epochs of uniformly random actions before the policy takes over.
    pub warmup_epochs: usize,
    pub reward_scale: f64,
    pub cost_scale: f64,
    pub init_log_std: f64,
    /// Exploration std decays log-linearly to this value over training.
    pub final_log_std: f64,
    /// Weight of the penalty on the squared pre-squash actor output, which
    /// keeps the deterministic actor out of tanh saturation.
    pub action_reg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            steps_per_epoch: 800,
            num_envs: 4,
            gamma: 0.99,
            eps_t: 1.5,
            hidden: vec![64, 64],
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            tau: 0.01,
            batch_size: 128,
            updates_per_epoch: 200,
            replay_capacity: 200_000,
            warmup_epochs: 3,
            reward_scale: 1.0,
            cost_scale: 10.0,
            init_log_std: -0.5,
            final_log_std: -2.5,
            action_reg: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CrlError> {
        let bad = |m: &str| Err(CrlError::Config(m.to_string()));
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.num_envs == 0 {
            return bad("epochs, steps_per_epoch and num_envs must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.eps_t >= 0.0) {
            return bad("eps_t must be non-negative");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be non-empty and positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("need 0 < batch_size <= replay_capacity");
        }
        if !(self.action_reg >= 0.0) {
            return bad("action_reg must be non-negative");
        }
        if !(self.reward_scale > 0.0 && self.cost_scale > 0.0) {
            return bad("reward_scale and cost_scale must be positive");
        }
        Ok(())
    }

    /// Exploration log-std for `epoch`.
    pub fn log_std_at(&self, epoch: usize) -> f64 {
        let span = self.epochs.saturating_sub(1).max(1) as f64;
        let f = (epoch as f64 / span).min(1.0);
        self.init_log_std + f * (self.final_log_std - self.init_log_std)
    }

    pub fn steps_per_worker(&self) -> usize {
        self.steps_per_epoch.div_ceil(self.num_envs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    /// Discounted returns.
    pub j_r: f64,
    pub j_c: f64,
    /// Undiscounted sums.
    pub reward: f64,
    pub cost: f64,
    pub fuel_g: f64,
    pub final_soc: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behaviour {
    Uniform,
    Sample,
    Mean,
}

/// Plays one episode. Experiences carry scaled reward and cost.
pub fn run_episode<E: ConstrainedEnv + ?Sized>(
    env: &mut E,
    policy: &GaussianPolicy,
    behaviour: Behaviour,
    scales: (f64, f64),
    gamma: f64,
    seed: u64,
    rng: &mut Rng,
) -> Result<(Vec<Experience>, EpisodeStats), CrlError> {
    let (low, high) = env.action_range();
    let mut s = env.reset_features(seed);
    let mut out = Vec::with_capacity(env.horizon());
    let mut st = EpisodeStats {
        j_r: 0.0,
        j_c: 0.0,
        reward: 0.0,
        cost: 0.0,
        fuel_g: 0.0,
        final_soc: f64::NAN,
        steps: 0,
    };
    let mut w = 1.0;
    loop {
        let a = match behaviour {
            Behaviour::Uniform => rng.random_range(low..=high),
            Behaviour::Sample => policy.sample_action(&s, rng)?,
            Behaviour::Mean => policy.deterministic_action(&s)?,
        };
        let step = env.step_features(a)?;
        st.j_r += w * step.r;
        st.j_c += w * step.c;
        st.reward += step.r;
        st.cost += step.c;
        st.fuel_g += step.fuel_g;
        st.final_soc = step.soc;
        st.steps += 1;
        w *= gamma;
        out.push(Experience {
            s,
            a,
            r: step.r * scales.0,
            c: step.c * scales.1,
            s_next: step.next.clone(),
            done: step.done,
        });
        if step.done {
            break;
        }
        s = step.next;
    }
    Ok((out, st))
}

/// A rollout worker owns its environment and random stream.
pub struct Worker<E> {
    pub env: E,
    pub rng: Rng,
    pub episodes: u64,
}

/// Runs every worker concurrently until each has taken `steps` steps.
/// Results come back in worker order, so merging is deterministic.
pub fn collect<E: ConstrainedEnv + Send>(
    workers: &mut [Worker<E>],
    policy: &GaussianPolicy,
    behaviour: Behaviour,
    scales: (f64, f64),
    gamma: f64,
    steps: usize,
) -> Result<Vec<(Vec<Experience>, EpisodeStats)>, CrlError> {
    let per_worker: Vec<Result<Vec<_>, CrlError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = workers
            .iter_mut()
            .map(|w| {
                scope.spawn(move || {
                    let mut eps = Vec::new();
                    let mut taken = 0;
                    while taken < steps {
                        let seed = w.episodes;
                        w.episodes += 1;
                        let ep = run_episode(
                            &mut w.env, policy, behaviour, scales, gamma, seed, &mut w.rng,
                        )?;
                        taken += ep.1.steps;
                        eps.push(ep);
                    }
                    Ok(eps)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rollout worker panicked"))
            .collect()
    });
    let mut all = Vec::new();
    for r in per_worker {
        all.extend(r?);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_jr: f64,
    pub mean_jc: f64,
    pub lambda: f64,
    pub fuel_g: f64,
    pub final_soc: f64,
    pub eta: Option<f64>,
    pub lambda_cvpo: Option<f64>,
    /// Greedy evaluation episode after this epoch's updates.
    pub eval: EpisodeStats,
}

impl EpochRecord {
    pub fn from_episodes(
        epoch: usize,
        eps: &[EpisodeStats],
        lambda: f64,
        eval: EpisodeStats,
    ) -> Self {
        let n = eps.len().max(1) as f64;
        let mean = |f: fn(&EpisodeStats) -> f64| eps.iter().map(f).sum::<f64>() / n;
        Self {
            epoch,
            mean_jr: mean(|e| e.j_r),
            mean_jc: mean(|e| e.j_c),
            lambda,
            fuel_g: mean(|e| e.fuel_g),
            final_soc: mean(|e| e.final_soc),
            eta: None,
            lambda_cvpo: None,
            eval,
        }
    }
}

pub const TRACE_HEADER: &str = "epoch,mean_Jr,mean_Jc,lambda,fuel_g,final_soc";
pub const CVPO_TRACE_HEADER: &str = "epoch,mean_Jr,mean_Jc,lambda,fuel_g,final_soc,eta,lambda_cvpo";

pub fn write_trace_header<W: Write>(mut out: W, cvpo: bool) -> std::io::Result<()> {
    writeln!(
        out,
        "{}",
        if cvpo {
            CVPO_TRACE_HEADER
        } else {
            TRACE_HEADER
        }
    )
}

pub fn write_trace_row<W: Write>(mut out: W, r: &EpochRecord, cvpo: bool) -> std::io::Result<()> {
    write!(
        out,
        "{},{},{},{},{},{}",
        r.epoch, r.mean_jr, r.mean_jc, r.lambda, r.fuel_g, r.final_soc
    )?;
    if cvpo {
        write!(
            out,
            ",{},{}",
            r.eta.unwrap_or(f64::NAN),
            r.lambda_cvpo.unwrap_or(f64::NAN)
        )?;
    }
    writeln!(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPolicy {
    pub epoch: usize,
    pub policy: GaussianPolicy,
    pub eval: EpisodeStats,
    pub feasible: bool,
}

impl BestPolicy {
    /// Feasible beats infeasible; then higher reward; for two infeasible
    /// policies, lower cost.
    pub fn improves_on(&self, other: &BestPolicy) -> bool {
        match (self.feasible, other.feasible) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.eval.reward > other.eval.reward,
            (false, false) => self.eval.cost < other.eval.cost,
        }
    }
}

/// Hooks the trainers call once per epoch.
pub trait TrainObserver {
    fn on_epoch(
        &mut self,
        _record: &EpochRecord,
        _new_best: Option<&BestPolicy>,
    ) -> Result<(), CrlError> {
        Ok(())
    }

    fn should_stop(&self) -> bool {
        false
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub trace: Vec<EpochRecord>,
    pub best: Option<BestPolicy>,
    /// Trainer state after the last completed epoch.
    pub state: S,
    pub interrupted: bool,
}

/// Keeps `best` up to date; returns true on improvement.
pub fn track_best(best: &mut Option<BestPolicy>, candidate: BestPolicy) -> bool {
    let better = best.as_ref().is_none_or(|b| candidate.improves_on(b));
    if better {
        *best = Some(candidate);
    }
    better
}

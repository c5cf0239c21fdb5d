//! SOC-corridor constrained MDP over a reference drive cycle.
//!
//! The vehicle follows the cycle exactly; the action is engine power in kW.
//! Reward is minus the grams of fuel burnt in the step, cost is how far the
//! post-step SOC lies outside the time-varying corridor.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crl::{ConstrainedEnv, FeatureStep};
use crate::drive_cycle::{CycleError, DriveCycle};
use crate::powertrain::{EnginePoint, Powertrain, PowertrainStep};

/// Fuel density used to convert grams to litres.
pub const FUEL_DENSITY_G_PER_L: f64 = 720.0;

/// Fixed observation scales: SOC as-is, velocity / 33 m/s, accel / 3 m/s².
pub const FEATURE_SCALES: [f64; 3] = [1.0, 33.0, 3.0];

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("step {t} outside [0, {ts}]")]
    StepOutOfRange { t: usize, ts: usize },
    #[error("episode finished; call reset")]
    EpisodeFinished,
    #[error("distance must be positive")]
    ZeroDistance,
    #[error("episode has no transitions")]
    EmptyEpisode,
    #[error("invalid discount {0}; need 0 < gamma <= 1")]
    InvalidGamma(f64),
    #[error("invalid corridor: {0}")]
    InvalidCorridor(String),
    #[error("corridor horizon {ts} exceeds the cycle's {steps} steps")]
    HorizonTooLong { ts: usize, steps: usize },
    #[error(transparent)]
    Cycle(#[from] CycleError),
}

/// Time-varying SOC-allowed range. `bl`, `br`, `ts` are step indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocCorridor {
    pub high: f64,
    pub low: f64,
    pub balance: f64,
    pub bl: usize,
    pub br: usize,
    pub ts: usize,
}

impl SocCorridor {
    pub fn new(
        high: f64,
        low: f64,
        balance: f64,
        bl: usize,
        br: usize,
        ts: usize,
    ) -> Result<Self, EnvError> {
        let c = Self {
            high,
            low,
            balance,
            bl,
            br,
            ts,
        };
        c.validate()?;
        Ok(c)
    }

    /// `bl == br` is accepted so that very short horizons remain expressible.
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0 <= self.low
            && self.low < self.balance
            && self.balance < self.high
            && self.high <= 1.0)
        {
            return Err(EnvError::InvalidCorridor(format!(
                "need 0 <= L < B < H <= 1, got L={} B={} H={}",
                self.low, self.balance, self.high
            )));
        }
        if !(0 < self.bl && self.bl <= self.br && self.br < self.ts) {
            return Err(EnvError::InvalidCorridor(format!(
                "need 0 < bl <= br < Ts, got bl={} br={} Ts={}",
                self.bl, self.br, self.ts
            )));
        }
        Ok(())
    }

    /// Corridor used for the full NEDC: 0.3..0.7 around 0.5, opening over the
    /// first 200 s and closing over the last 200 s.
    pub fn nedc_default() -> Self {
        Self {
            high: 0.7,
            low: 0.3,
            balance: 0.5,
            bl: 200,
            br: 980,
            ts: 1180,
        }
    }

    /// Narrow corridor for the 200 s trapezoid cycle.
    pub fn trapezoid_default() -> Self {
        Self {
            high: 0.55,
            low: 0.45,
            balance: 0.5,
            bl: 20,
            br: 40,
            ts: 200,
        }
    }

    pub fn limits(&self, t: usize) -> Result<(f64, f64), EnvError> {
        corridor_limits(t, self)
    }
}

pub fn corridor_limits(t: usize, c: &SocCorridor) -> Result<(f64, f64), EnvError> {
    if t > c.ts {
        return Err(EnvError::StepOutOfRange { t, ts: c.ts });
    }
    let tf = t as f64;
    let (b, h, l) = (c.balance, c.high, c.low);
    Ok(if t <= c.bl {
        let bl = c.bl as f64;
        ((h - b) / bl * tf + b, (l - b) / bl * tf + b)
    } else if t > c.br {
        let (br, ts) = (c.br as f64, c.ts as f64);
        (
            (h - b) / (br - ts) * (tf - ts) + b,
            (l - b) / (br - ts) * (tf - ts) + b,
        )
    } else {
        (h, l)
    })
}

pub fn soc_cost(soc: f64, t: usize, c: &SocCorridor) -> Result<f64, EnvError> {
    let (upper, lower) = corridor_limits(t, c)?;
    Ok((soc - upper).max(0.0) + (lower - soc).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub soc: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl Observation {
    pub fn features(&self) -> [f64; 3] {
        [
            self.soc / FEATURE_SCALES[0],
            self.velocity / FEATURE_SCALES[1],
            self.acceleration / FEATURE_SCALES[2],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Observation,
    /// Engine power request after clamping into [0, max_power], kW.
    pub a: f64,
    pub s_next: Observation,
    pub r: f64,
    pub c: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReturns {
    pub j_r: f64,
    pub j_c: f64,
    pub total_fuel: f64,
    pub final_soc: f64,
}

/// L/100km from grams of fuel and kilometres driven.
pub fn fuel_economy(total_fuel_g: f64, distance_km: f64) -> Result<f64, EnvError> {
    if !(distance_km > 0.0) {
        return Err(EnvError::ZeroDistance);
    }
    Ok(total_fuel_g / FUEL_DENSITY_G_PER_L / distance_km * 100.0)
}

pub fn episode_returns(transitions: &[Transition], gamma: f64) -> Result<EpisodeReturns, EnvError> {
    let last = transitions.last().ok_or(EnvError::EmptyEpisode)?;
    let rewards: Vec<f64> = transitions.iter().map(|t| t.r).collect();
    let costs: Vec<f64> = transitions.iter().map(|t| t.c).collect();
    Ok(EpisodeReturns {
        j_r: discounted_sum(&rewards, gamma)?,
        j_c: discounted_sum(&costs, gamma)?,
        total_fuel: -rewards.iter().sum::<f64>(),
        final_soc: last.s_next.soc,
    })
}

pub fn discounted_sum(values: &[f64], gamma: f64) -> Result<f64, EnvError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(EnvError::InvalidGamma(gamma));
    }
    let mut acc = 0.0;
    let mut w = 1.0;
    for v in values {
        acc += w * v;
        w *= gamma;
    }
    Ok(acc)
}

/// Everything known about one step, for logs and plots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub v: f64,
    pub a: f64,
    pub action: f64,
    pub powertrain: PowertrainStep,
    pub upper: f64,
    pub lower: f64,
    pub r: f64,
    pub c: f64,
}

pub struct HevEnv {
    cycle: Arc<DriveCycle>,
    powertrain: Arc<Powertrain>,
    corridor: SocCorridor,
    accel: Vec<f64>,
    t: usize,
    soc: f64,
    last_seed: u64,
}

impl HevEnv {
    pub fn new(
        cycle: Arc<DriveCycle>,
        powertrain: Arc<Powertrain>,
        corridor: SocCorridor,
    ) -> Result<Self, EnvError> {
        corridor.validate()?;
        if corridor.ts > cycle.steps() {
            return Err(EnvError::HorizonTooLong {
                ts: corridor.ts,
                steps: cycle.steps(),
            });
        }
        let accel = (0..cycle.len())
            .map(|k| cycle.accel_at(k))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            soc: corridor.balance,
            cycle,
            powertrain,
            corridor,
            accel,
            t: 0,
            last_seed: 0,
        })
    }

    pub fn cycle(&self) -> &DriveCycle {
        &self.cycle
    }

    pub fn powertrain(&self) -> &Powertrain {
        &self.powertrain
    }

    pub fn corridor(&self) -> &SocCorridor {
        &self.corridor
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn soc(&self) -> f64 {
        self.soc
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.corridor.ts
    }

    /// Distance covered over the episode horizon, km.
    pub fn episode_distance_km(&self) -> f64 {
        let v = self.cycle.speeds();
        let dt = self.cycle.dt();
        (0..self.corridor.ts)
            .map(|k| 0.5 * (v[k] + v[k + 1]) * dt)
            .sum::<f64>()
            / 1000.0
    }

    /// The environment is deterministic; the seed is only remembered.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.last_seed = seed;
        self.t = 0;
        self.soc = self.corridor.balance;
        self.observation()
    }

    pub fn last_seed(&self) -> u64 {
        self.last_seed
    }

    pub fn observation(&self) -> Observation {
        self.observation_at(self.t, self.soc)
    }

    fn observation_at(&self, t: usize, soc: f64) -> Observation {
        Observation {
            soc,
            velocity: self.cycle.speeds()[t],
            acceleration: self.accel[t],
        }
    }

    pub fn step(&mut self, action: f64) -> Result<Transition, EnvError> {
        self.step_record(action).map(|(tr, _)| tr)
    }

    pub fn step_record(&mut self, action: f64) -> Result<(Transition, StepRecord), EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        let max = self.powertrain.engine.max_power;
        let clamped = if action.is_nan() {
            0.0
        } else {
            action.clamp(0.0, max)
        };
        if clamped != action {
            log::trace!("engine request {action} kW clamped to {clamped} kW");
        }
        let t = self.t;
        let s = self.observation();
        let pt = self.powertrain.step(
            self.soc,
            s.velocity,
            s.acceleration,
            clamped,
            self.cycle.dt(),
        );
        self.soc = pt.soc;
        self.t += 1;
        let (upper, lower) = corridor_limits(self.t, &self.corridor)?;
        let c = (pt.soc - upper).max(0.0) + (lower - pt.soc).max(0.0);
        let r = -pt.fuel_g;
        let tr = Transition {
            s,
            a: clamped,
            s_next: self.observation(),
            r,
            c,
            done: self.t == self.corridor.ts,
        };
        let rec = StepRecord {
            t,
            v: s.velocity,
            a: s.acceleration,
            action: clamped,
            powertrain: pt,
            upper,
            lower,
            r,
            c,
        };
        Ok((tr, rec))
    }

    /// Plays a whole episode with `policy` from a fresh reset.
    pub fn rollout<F>(&mut self, seed: u64, mut policy: F) -> Result<Episode, EnvError>
    where
        F: FnMut(&Observation, usize) -> f64,
    {
        let mut obs = self.reset(seed);
        let mut transitions = Vec::with_capacity(self.corridor.ts);
        let mut records = Vec::with_capacity(self.corridor.ts);
        while !self.is_done() {
            let a = policy(&obs, self.t);
            let (tr, rec) = self.step_record(a)?;
            obs = tr.s_next;
            transitions.push(tr);
            records.push(rec);
        }
        Ok(Episode {
            transitions,
            records,
        })
    }
}

impl ConstrainedEnv for HevEnv {
    fn observation_dim(&self) -> usize {
        3
    }

    fn action_range(&self) -> (f64, f64) {
        (0.0, self.powertrain.engine.max_power)
    }

    fn horizon(&self) -> usize {
        self.corridor.ts
    }

    fn reset_features(&mut self, seed: u64) -> Vec<f64> {
        self.reset(seed).features().to_vec()
    }

    fn step_features(&mut self, action: f64) -> Result<FeatureStep, EnvError> {
        let (tr, rec) = self.step_record(action)?;
        Ok(FeatureStep {
            next: tr.s_next.features().to_vec(),
            r: tr.r,
            c: tr.c,
            done: tr.done,
            fuel_g: rec.powertrain.fuel_g,
            soc: tr.s_next.soc,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub records: Vec<StepRecord>,
}

impl Episode {
    pub fn returns(&self, gamma: f64) -> Result<EpisodeReturns, EnvError> {
        episode_returns(&self.transitions, gamma)
    }

    /// Undiscounted corridor violation summed over the episode.
    pub fn total_cost(&self) -> f64 {
        self.transitions.iter().map(|t| t.c).sum()
    }

    /// Columns `t,v,a,P_dem,P_eng,P_batt,soc,upper,lower,r,c`; `a` is the
    /// reference acceleration. Row `t` holds the SOC reached after step `t`.
    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,v,a,P_dem,P_eng,P_batt,soc,upper,lower,r,c")?;
        for r in &self.records {
            let p = &r.powertrain;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.t, r.v, r.a, p.p_dem, p.p_eng, p.p_batt, p.soc, r.upper, r.lower, r.r, r.c
            )?;
        }
        Ok(())
    }

    /// Engine operating points of steps where the engine ran.
    pub fn write_working_points<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,P_eng,speed_rpm,torque_nm,fuel_rate_gps")?;
        for r in &self.records {
            let EnginePoint {
                fuel_rate,
                speed,
                torque,
            } = r.powertrain.engine;
            if r.powertrain.p_eng > 0.0 {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.t, r.powertrain.p_eng, speed, torque, fuel_rate
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_cycle(n: usize, v: f64) -> Arc<DriveCycle> {
        Arc::new(DriveCycle::from_speeds(vec![v; n], 1.0).unwrap())
    }

    fn nedc_corridor() -> SocCorridor {
        SocCorridor::nedc_default()
    }

    #[test]
    fn limits_examples() {
        let c = nedc_corridor();
        assert_eq!(corridor_limits(0, &c).unwrap(), (0.5, 0.5));
        let (u, l) = corridor_limits(100, &c).unwrap();
        assert!((u - 0.6).abs() < 1e-15 && (l - 0.4).abs() < 1e-15);
        assert_eq!(corridor_limits(500, &c).unwrap(), (0.7, 0.3));
        assert_eq!(corridor_limits(1180, &c).unwrap(), (0.5, 0.5));
        assert!(matches!(
            corridor_limits(1181, &c),
            Err(EnvError::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn cost_examples() {
        let c = nedc_corridor();
        assert_eq!(soc_cost(0.5, 500, &c).unwrap(), 0.0);
        assert!((soc_cost(0.75, 500, &c).unwrap() - 0.05).abs() < 1e-12);
        assert!((soc_cost(0.25, 500, &c).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn corridor_validation() {
        assert!(SocCorridor::new(0.7, 0.3, 0.5, 0, 10, 20).is_err());
        assert!(SocCorridor::new(0.7, 0.3, 0.5, 10, 20, 20).is_err());
        assert!(SocCorridor::new(0.4, 0.3, 0.5, 10, 15, 20).is_err());
        assert!(SocCorridor::new(0.7, 0.3, 0.5, 1, 1, 2).is_ok());
    }

    #[test]
    fn fuel_economy_examples() {
        assert!((fuel_economy(311.43, 10.93).unwrap() - 3.957).abs() < 1e-3);
        assert!((fuel_economy(333.91, 10.93).unwrap() - 4.243).abs() < 1e-3);
        assert_eq!(fuel_economy(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(fuel_economy(1.0, 0.0), Err(EnvError::ZeroDistance));
    }

    fn tr(r: f64, c: f64) -> Transition {
        let o = Observation {
            soc: 0.5,
            velocity: 0.0,
            acceleration: 0.0,
        };
        Transition {
            s: o,
            a: 0.0,
            s_next: o,
            r,
            c,
            done: false,
        }
    }

    #[test]
    fn returns_examples() {
        let ten: Vec<_> = (0..10).map(|_| tr(-1.0, 0.0)).collect();
        let ret = episode_returns(&ten, 1.0).unwrap();
        assert_eq!((ret.j_r, ret.j_c, ret.total_fuel), (-10.0, 0.0, 10.0));
        let two = [tr(-1.0, 0.0), tr(-1.0, 0.0)];
        assert_eq!(episode_returns(&two, 0.5).unwrap().j_r, -1.5);
        let three = [tr(0.0, 0.1), tr(0.0, 0.1), tr(0.0, 0.1)];
        assert!((episode_returns(&three, 0.9).unwrap().j_c - 0.271).abs() < 1e-12);
        assert_eq!(episode_returns(&[], 0.9), Err(EnvError::EmptyEpisode));
        assert_eq!(episode_returns(&two, 0.0), Err(EnvError::InvalidGamma(0.0)));
    }

    #[test]
    fn zero_speed_engine_off_is_free() {
        let corridor = SocCorridor::new(0.7, 0.3, 0.5, 2, 5, 9).unwrap();
        let mut env = HevEnv::new(
            flat_cycle(10, 0.0),
            Arc::new(Powertrain::default()),
            corridor,
        )
        .unwrap();
        let ep = env.rollout(1, |_, _| 0.0).unwrap();
        assert_eq!(ep.transitions.len(), 9);
        assert!(ep.transitions.iter().all(|t| t.r == 0.0 && t.c == 0.0));
        assert_eq!(
            ep.transitions.iter().filter(|t| t.done).count(),
            1,
            "done only on the last step"
        );
        assert!(ep.transitions.last().unwrap().done);
        assert_eq!(env.step(0.0), Err(EnvError::EpisodeFinished));
    }

    #[test]
    fn reset_restores_initial_state() {
        let mut env = HevEnv::new(
            Arc::new(DriveCycle::desk_trapezoid(1.0).unwrap()),
            Arc::new(Powertrain::default()),
            SocCorridor::trapezoid_default(),
        )
        .unwrap();
        let first = env.reset(3);
        for _ in 0..50 {
            env.step(20.0).unwrap();
        }
        assert_eq!(env.reset(3), first);
        assert_eq!(env.reset(99), first);
        assert_eq!(first.soc, 0.5);
    }

    #[test]
    fn reward_is_negative_fuel() {
        let pt = Powertrain::default();
        let mut env = HevEnv::new(
            flat_cycle(4, 0.0),
            Arc::new(pt.clone()),
            SocCorridor::new(0.7, 0.3, 0.5, 1, 2, 3).unwrap(),
        )
        .unwrap();
        env.reset(0);
        let t = env.step(10.0).unwrap();
        assert!((t.r + 10.0 * 255.0 / 3600.0).abs() < 1e-12);
        assert!(t.s_next.soc > 0.5, "surplus power charges the battery");
    }

    #[test]
    fn hevenv_rejects_long_horizon() {
        let r = HevEnv::new(
            flat_cycle(5, 1.0),
            Arc::new(Powertrain::default()),
            SocCorridor::new(0.7, 0.3, 0.5, 1, 2, 5).unwrap(),
        );
        assert!(matches!(r, Err(EnvError::HorizonTooLong { .. })));
    }

    #[test]
    fn log_has_one_row_per_step() {
        let mut env = HevEnv::new(
            Arc::new(DriveCycle::desk_trapezoid(1.0).unwrap()),
            Arc::new(Powertrain::default()),
            SocCorridor::trapezoid_default(),
        )
        .unwrap();
        let ep = env
            .rollout(0, |o, _| if o.soc < 0.5 { 20.0 } else { 0.0 })
            .unwrap();
        let mut buf = Vec::new();
        ep.write_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 201);
        assert!(text.starts_with("t,v,a,P_dem,P_eng,P_batt,soc,upper,lower,r,c\n"));
    }
}

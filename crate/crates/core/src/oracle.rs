//! Exact constrained minimum-fuel solutions on discretised instances.
//!
//! The corridor is a hard constraint, loosened by a small slack (half a SOC
//! grid cell unless set) so that the zero-width ends of the corridor stay
//! reachable. The episode must finish within that slack of the balance SOC. Decisions may be
//! held for several cycle steps (`decision_interval`), which is how small
//! exhaustive instances are built from a 1 s cycle.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::drive_cycle::DriveCycle;
use crate::env::{corridor_limits, EnvError, SocCorridor};
use crate::powertrain::Powertrain;

pub const DEFAULT_SOC_LEVELS: usize = 201;
pub const DEFAULT_ACTION_LEVELS: usize = 21;
pub const DEFAULT_BUDGET: usize = 100_000_000;
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("instance too large: {size} evaluations (limit {limit})")]
    InstanceTooLarge { size: u128, limit: u128 },
    #[error("no action sequence keeps SOC inside the corridor and ends at the balance point")]
    Infeasible,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone)]
pub struct DpGrid {
    pub soc_levels: usize,
    /// SOC span of the grid; defaults to the corridor's [L, H].
    pub soc_range: (f64, f64),
    pub action_levels: usize,
    pub cycle: Arc<DriveCycle>,
    pub corridor: SocCorridor,
    pub powertrain: Arc<Powertrain>,
    /// Cycle steps per decision.
    pub decision_interval: usize,
    /// Round SOC to the nearest grid node after every decision.
    pub snap_to_grid: bool,
    /// Upper bound on soc_levels × action_levels × steps.
    pub budget: usize,
    /// Slack on the corridor and terminal condition; half a cell if unset.
    pub slack: Option<f64>,
}

impl DpGrid {
    pub fn new(cycle: Arc<DriveCycle>, corridor: SocCorridor, powertrain: Arc<Powertrain>) -> Self {
        Self {
            soc_levels: DEFAULT_SOC_LEVELS,
            soc_range: (corridor.low, corridor.high),
            action_levels: DEFAULT_ACTION_LEVELS,
            cycle,
            corridor,
            powertrain,
            decision_interval: 1,
            snap_to_grid: false,
            budget: DEFAULT_BUDGET,
            slack: None,
        }
    }

    pub fn with_levels(mut self, soc_levels: usize, action_levels: usize) -> Self {
        self.soc_levels = soc_levels;
        self.action_levels = action_levels;
        self
    }

    pub fn with_decision_interval(mut self, steps: usize) -> Self {
        self.decision_interval = steps;
        self
    }

    pub fn snapped(mut self, snap: bool) -> Self {
        self.snap_to_grid = snap;
        self
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: String| Err(OracleError::InvalidGrid(m));
        if self.soc_levels < 2 || self.action_levels < 2 {
            return bad("soc_levels and action_levels must be >= 2".into());
        }
        let (lo, hi) = self.soc_range;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad(format!(
                "soc_range ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1"
            ));
        }
        if self.slack.is_some_and(|s| !(s >= 0.0)) {
            return bad("slack must be non-negative".into());
        }
        if self.decision_interval == 0 {
            return bad("decision_interval must be positive".into());
        }
        self.corridor.validate()?;
        if self.corridor.ts > self.cycle.steps() {
            return Err(EnvError::HorizonTooLong {
                ts: self.corridor.ts,
                steps: self.cycle.steps(),
            }
            .into());
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.corridor.ts
    }

    pub fn decisions(&self) -> usize {
        self.steps().div_ceil(self.decision_interval)
    }

    pub fn soc_grid(&self) -> Vec<f64> {
        let lo = self.soc_range.0;
        let h = self.cell();
        (0..self.soc_levels).map(|i| lo + h * i as f64).collect()
    }

    pub fn cell(&self) -> f64 {
        (self.soc_range.1 - self.soc_range.0) / (self.soc_levels - 1) as f64
    }

    /// Slack applied to the corridor and to the terminal condition.
    pub fn tolerance(&self) -> f64 {
        self.slack.unwrap_or(0.5 * self.cell())
    }

    pub fn actions(&self) -> Vec<f64> {
        let max = self.powertrain.engine.max_power;
        let n = self.action_levels - 1;
        (0..=n).map(|j| max * j as f64 / n as f64).collect()
    }

    fn snap(&self, soc: f64) -> Option<f64> {
        let (lo, _) = self.soc_range;
        let h = self.cell();
        let i = ((soc - lo) / h).round();
        if i < 0.0 || i as usize >= self.soc_levels {
            return None;
        }
        Some(lo + h * i)
    }
}

/// Outcome of holding one action over one decision block.
#[derive(Debug, Clone, Copy)]
struct Block {
    fuel: f64,
    soc: f64,
    feasible: bool,
}

struct Model<'a> {
    grid: &'a DpGrid,
    speeds: &'a [f64],
    accel: Vec<f64>,
    limits: Vec<(f64, f64)>,
    dt: f64,
    tol: f64,
}

impl<'a> Model<'a> {
    fn new(grid: &'a DpGrid) -> Result<Self, OracleError> {
        grid.validate()?;
        let ts = grid.steps();
        let accel = (0..ts)
            .map(|k| grid.cycle.accel_at(k).map_err(EnvError::from))
            .collect::<Result<Vec<_>, _>>()?;
        let limits = (0..=ts)
            .map(|t| corridor_limits(t, &grid.corridor))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            grid,
            speeds: grid.cycle.speeds(),
            accel,
            limits,
            dt: grid.cycle.dt(),
            tol: grid.tolerance(),
        })
    }

    fn block_range(&self, k: usize) -> std::ops::Range<usize> {
        let d = self.grid.decision_interval;
        k * d..((k + 1) * d).min(self.grid.steps())
    }

    /// Same powertrain code path as the environment.
    fn block(&self, k: usize, soc: f64, action: f64) -> Block {
        let mut soc = soc;
        let mut fuel = 0.0;
        let mut feasible = true;
        for t in self.block_range(k) {
            let st = self
                .grid
                .powertrain
                .step(soc, self.speeds[t], self.accel[t], action, self.dt);
            fuel += st.fuel_g;
            soc = st.soc;
            let (upper, lower) = self.limits[t + 1];
            if soc > upper + self.tol || soc < lower - self.tol {
                feasible = false;
            }
        }
        if self.grid.snap_to_grid {
            match self.grid.snap(soc) {
                Some(s) => soc = s,
                None => feasible = false,
            }
        }
        Block {
            fuel,
            soc,
            feasible,
        }
    }

    fn terminal_ok(&self, soc: f64) -> bool {
        (soc - self.grid.corridor.balance).abs() <= self.tol + 1e-12
    }
}

/// Linear interpolation on the SOC grid; infinite outside it or when a
/// contributing node is infinite.
fn interpolate(values: &[f64], grid: &DpGrid, soc: f64) -> f64 {
    let (lo, _) = grid.soc_range;
    let h = grid.cell();
    let pos = (soc - lo) / h;
    let n = values.len();
    if pos < -1e-9 || pos > (n - 1) as f64 + 1e-9 {
        return f64::INFINITY;
    }
    let pos = pos.clamp(0.0, (n - 1) as f64);
    let i0 = (pos.floor() as usize).min(n - 2);
    let w = pos - i0 as f64;
    if w <= 1e-12 {
        return values[i0];
    }
    if w >= 1.0 - 1e-12 {
        return values[i0 + 1];
    }
    let (a, b) = (values[i0], values[i0 + 1]);
    if a.is_infinite() || b.is_infinite() {
        return f64::INFINITY;
    }
    (1.0 - w) * a + w * b
}

#[derive(Debug, Clone, Serialize)]
pub struct DpSolution {
    pub min_fuel: f64,
    pub feasible: bool,
    pub soc_grid: Vec<f64>,
    pub actions: Vec<f64>,
    pub decision_interval: usize,
    /// `value[k][i]`: optimal fuel-to-go from decision `k` at SOC node `i`.
    #[serde(skip)]
    pub value: Vec<Vec<f64>>,
    /// `policy[k][i]`: index into `actions`, `None` where infeasible.
    #[serde(skip)]
    pub policy: Vec<Vec<Option<usize>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DpTrajectory {
    /// SOC after every cycle step, starting with the initial value.
    pub soc: Vec<f64>,
    /// Engine power held during every cycle step.
    pub actions: Vec<f64>,
    pub fuel_g: f64,
    pub feasible: bool,
}

impl DpSolution {
    /// Forward simulation from the balance SOC, choosing at every decision
    /// the action that minimises block fuel plus interpolated fuel-to-go.
    pub fn trajectory(&self, grid: &DpGrid) -> Result<DpTrajectory, OracleError> {
        let model = Model::new(grid)?;
        let kn = grid.decisions();
        let mut soc = grid.corridor.balance;
        let mut out = DpTrajectory {
            soc: vec![soc],
            actions: Vec::with_capacity(grid.steps()),
            fuel_g: 0.0,
            feasible: true,
        };
        for k in 0..kn {
            let mut best: Option<(f64, f64)> = None;
            for &a in &self.actions {
                let b = model.block(k, soc, a);
                if !b.feasible {
                    continue;
                }
                let rest = if k + 1 == kn {
                    if model.terminal_ok(b.soc) {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    interpolate(&self.value[k + 1], grid, b.soc)
                };
                let total = b.fuel + rest;
                if total.is_finite() && best.is_none_or(|(v, _)| total < v) {
                    best = Some((total, a));
                }
            }
            let Some((_, a)) = best else {
                out.feasible = false;
                break;
            };
            let pt = &grid.powertrain;
            for t in model.block_range(k) {
                let st = pt.step(soc, model.speeds[t], model.accel[t], a, model.dt);
                soc = st.soc;
                out.fuel_g += st.fuel_g;
                out.soc.push(soc);
                out.actions.push(a);
            }
            if grid.snap_to_grid {
                soc = grid.snap(soc).unwrap_or(soc);
                *out.soc.last_mut().unwrap() = soc;
            }
        }
        if !model.terminal_ok(soc) {
            out.feasible = false;
        }
        Ok(out)
    }

    pub fn write_trajectory_csv<W: std::io::Write>(
        traj: &DpTrajectory,
        grid: &DpGrid,
        mut out: W,
    ) -> std::io::Result<()> {
        writeln!(out, "t,soc,P_eng,upper,lower")?;
        for (t, soc) in traj.soc.iter().enumerate() {
            let (u, l) = corridor_limits(t, &grid.corridor).unwrap_or((f64::NAN, f64::NAN));
            let a = traj.actions.get(t).copied().unwrap_or(0.0);
            writeln!(out, "{t},{soc},{a},{u},{l}")?;
        }
        Ok(())
    }
}

/// Backward induction over decisions.
pub fn dp_solve(grid: &DpGrid) -> Result<DpSolution, OracleError> {
    let model = Model::new(grid)?;
    let size = grid.soc_levels as u128 * grid.action_levels as u128 * grid.steps() as u128;
    if size > grid.budget as u128 {
        return Err(OracleError::InstanceTooLarge {
            size,
            limit: grid.budget as u128,
        });
    }
    let socs = grid.soc_grid();
    let actions = grid.actions();
    let kn = grid.decisions();
    let mut value = vec![Vec::new(); kn];
    let mut policy = vec![Vec::new(); kn];
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(socs.len());

    for k in (0..kn).rev() {
        let next = value.get(k + 1).cloned();
        let stage = |i: usize| -> (f64, Option<usize>) {
            let mut best = (f64::INFINITY, None);
            for (j, &a) in actions.iter().enumerate() {
                let b = model.block(k, socs[i], a);
                if !b.feasible {
                    continue;
                }
                let rest = match &next {
                    None if model.terminal_ok(b.soc) => 0.0,
                    None => f64::INFINITY,
                    Some(v) => interpolate(v, grid, b.soc),
                };
                let total = b.fuel + rest;
                if total < best.0 {
                    best = (total, Some(j));
                }
            }
            best
        };
        let n = socs.len();
        let chunk = n.div_ceil(threads);
        let results: Vec<(f64, Option<usize>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    let stage = &stage;
                    scope.spawn(move || {
                        (start..(start + chunk).min(n))
                            .map(stage)
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("stage worker panicked"))
                .collect()
        });
        value[k] = results.iter().map(|r| r.0).collect();
        policy[k] = results.iter().map(|r| r.1).collect();
    }

    let min_fuel = interpolate(&value[0], grid, grid.corridor.balance);
    if !min_fuel.is_finite() {
        return Err(OracleError::Infeasible);
    }
    Ok(DpSolution {
        min_fuel,
        feasible: true,
        soc_grid: socs,
        actions,
        decision_interval: grid.decision_interval,
        value,
        policy,
    })
}

/// Exhaustive search over every action sequence on the same discrete
/// dynamics, without interpolation.
pub fn enumerate_solve(grid: &DpGrid) -> Result<f64, OracleError> {
    let model = Model::new(grid)?;
    let kn = grid.decisions();
    let size = (grid.action_levels as u128)
        .checked_pow(kn as u32)
        .unwrap_or(u128::MAX);
    if size > ENUMERATION_LIMIT {
        return Err(OracleError::InstanceTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }
    let actions = grid.actions();

    // Fuel-to-go is accumulated back to front, the same association as
    // the backward induction, so snapped instances agree bit for bit.
    fn search(model: &Model, actions: &[f64], k: usize, kn: usize, soc: f64) -> f64 {
        if k == kn {
            return if model.terminal_ok(soc) {
                0.0
            } else {
                f64::INFINITY
            };
        }
        let mut best = f64::INFINITY;
        for &a in actions {
            let b = model.block(k, soc, a);
            if !b.feasible {
                continue;
            }
            let total = b.fuel + search(model, actions, k + 1, kn, b.soc);
            if total < best {
                best = total;
            }
        }
        best
    }

    let start = if grid.snap_to_grid {
        grid.snap(grid.corridor.balance)
            .ok_or(OracleError::Infeasible)?
    } else {
        grid.corridor.balance
    };
    let best = search(&model, &actions, 0, kn, start);
    if best.is_finite() {
        Ok(best)
    } else {
        Err(OracleError::Infeasible)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(speeds: Vec<f64>, corridor: SocCorridor) -> DpGrid {
        DpGrid::new(
            Arc::new(DriveCycle::from_speeds(speeds, 1.0).unwrap()),
            corridor,
            Arc::new(Powertrain::default()),
        )
    }

    #[test]
    fn zero_speed_cycle_costs_nothing() {
        let corridor = SocCorridor::new(0.6, 0.4, 0.5, 2, 6, 10).unwrap();
        let grid = instance(vec![0.0; 11], corridor).with_levels(21, 5);
        let sol = dp_solve(&grid).unwrap();
        assert_eq!(sol.min_fuel, 0.0);
        let centre = 10;
        assert!(sol.policy.iter().all(|p| p[centre] == Some(0)));
        let traj = sol.trajectory(&grid).unwrap();
        assert!(traj.feasible);
        assert!(traj.actions.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn two_step_two_action_matches_enumeration() {
        let corridor = SocCorridor::new(0.9, 0.1, 0.5, 1, 1, 2).unwrap();
        let grid = instance(vec![5.0, 6.0, 6.0], corridor)
            .with_levels(81, 2)
            .snapped(true);
        let dp = dp_solve(&grid).unwrap();
        let en = enumerate_solve(&grid).unwrap();
        assert_eq!(dp.min_fuel, en);
    }

    #[test]
    fn sizes_are_checked() {
        let corridor = SocCorridor::new(0.6, 0.4, 0.5, 10, 20, 30).unwrap();
        let mut grid = instance(vec![1.0; 31], corridor).with_levels(11, 3);
        assert!(matches!(
            enumerate_solve(&grid),
            Err(OracleError::InstanceTooLarge { .. })
        ));
        grid.budget = 10;
        assert!(matches!(
            dp_solve(&grid),
            Err(OracleError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn interpolation_rules() {
        let corridor = SocCorridor::new(0.6, 0.4, 0.5, 1, 2, 3).unwrap();
        let grid = instance(vec![0.0; 4], corridor).with_levels(3, 2);
        let v = [1.0, 3.0, f64::INFINITY];
        assert_eq!(interpolate(&v, &grid, 0.4), 1.0);
        assert!((interpolate(&v, &grid, 0.45) - 2.0).abs() < 1e-12);
        assert_eq!(interpolate(&v, &grid, 0.5), 3.0);
        assert!(interpolate(&v, &grid, 0.52).is_infinite());
        assert!(interpolate(&v, &grid, 0.39).is_infinite());
    }
}

//! Longitudinal dynamics and power-split physics.
//!
//! The vehicle follows the reference speed exactly. Engine power is the
//! only control; the battery closes the power balance within its limits.
//! Units: power in kW, energy flows per step in grams of fuel and SOC
//! fraction, time in seconds.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HEV_TOML: &str = include_str!("../data/default_hev.toml");

const POWER_TOLERANCE_KW: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PowertrainError {
    #[error("engine power {power} kW outside [0, {max}] kW")]
    PowerOutOfRange { power: f64, max: f64 },
    #[error("battery power {power} kW exceeds limit ({limit} kW)")]
    PowerLimitExceeded { power: f64, limit: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("parameter file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass: f64,
    pub drag_coeff: f64,
    pub frontal_area: f64,
    pub air_density: f64,
    pub rolling_coeff: f64,
    pub gravity: f64,
    pub driveline_efficiency: f64,
    pub regen_efficiency: f64,
    pub max_regen_power: f64,
    #[serde(default)]
    pub accessory_load: f64,
}

/// One point of the optimal-BSFC line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct OperatingPoint {
    pub power: f64,
    pub speed: f64,
    pub torque: f64,
    pub bsfc: f64,
}

impl From<[f64; 4]> for OperatingPoint {
    fn from(p: [f64; 4]) -> Self {
        Self {
            power: p[0],
            speed: p[1],
            torque: p[2],
            bsfc: p[3],
        }
    }
}

impl From<OperatingPoint> for [f64; 4] {
    fn from(p: OperatingPoint) -> Self {
        [p.power, p.speed, p.torque, p.bsfc]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineMap {
    pub optimal_line: Vec<OperatingPoint>,
    pub idle_fuel_rate: f64,
    pub max_power: f64,
    #[serde(default = "default_on_threshold")]
    pub on_threshold: f64,
}

fn default_on_threshold() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    pub capacity: f64,
    pub nominal_voltage: f64,
    pub max_charge_power: f64,
    pub max_discharge_power: f64,
    pub coulombic_efficiency: f64,
}

/// Engine state along the optimal line.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnginePoint {
    /// g/s
    pub fuel_rate: f64,
    /// r/min
    pub speed: f64,
    /// N·m
    pub torque: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep {
    pub soc: f64,
    /// The unclamped update left [0, 1].
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSplit {
    pub p_batt: f64,
    /// Engine power the battery could not absorb (positive), or demand the
    /// battery could not deliver (negative).
    pub waste: f64,
}

/// Traction power demand at the battery/engine junction.
pub fn demand_power(speed: f64, accel: f64, params: &VehicleParams) -> f64 {
    let aero = 0.5 * params.air_density * params.drag_coeff * params.frontal_area * speed * speed;
    let rolling = if speed > 0.0 {
        params.mass * params.gravity * params.rolling_coeff
    } else {
        0.0
    };
    let wheel_kw = (params.mass * accel + aero + rolling) * speed / 1000.0;
    if wheel_kw > 0.0 {
        wheel_kw / params.driveline_efficiency
    } else {
        (wheel_kw * params.regen_efficiency).max(-params.max_regen_power)
    }
}

/// Fuel rate and operating point for an engine output of `power` kW.
/// Zero power means the engine is off.
pub fn engine_fuel_rate(power: f64, map: &EngineMap) -> Result<EnginePoint, PowertrainError> {
    if !(power >= 0.0 && power <= map.max_power + POWER_TOLERANCE_KW) {
        return Err(PowertrainError::PowerOutOfRange {
            power,
            max: map.max_power,
        });
    }
    if power == 0.0 {
        return Ok(EnginePoint::default());
    }
    let line = &map.optimal_line;
    let hi = line
        .iter()
        .position(|p| p.power >= power)
        .unwrap_or(line.len() - 1)
        .max(1);
    let (a, b) = (line[hi - 1], line[hi]);
    let w = ((power - a.power) / (b.power - a.power)).clamp(0.0, 1.0);
    let lerp = |x: f64, y: f64| x + w * (y - x);
    let bsfc = lerp(a.bsfc, b.bsfc);
    Ok(EnginePoint {
        fuel_rate: (power * bsfc / 3600.0).max(map.idle_fuel_rate),
        speed: lerp(a.speed, b.speed),
        torque: lerp(a.torque, b.torque),
    })
}

/// Coulomb-counting SOC update. Positive `p_batt` discharges.
pub fn battery_step(
    soc: f64,
    p_batt: f64,
    dt: f64,
    params: &BatteryParams,
) -> Result<BatteryStep, PowertrainError> {
    if p_batt > params.max_discharge_power + POWER_TOLERANCE_KW {
        return Err(PowertrainError::PowerLimitExceeded {
            power: p_batt,
            limit: params.max_discharge_power,
        });
    }
    if p_batt < -params.max_charge_power - POWER_TOLERANCE_KW {
        return Err(PowertrainError::PowerLimitExceeded {
            power: p_batt,
            limit: params.max_charge_power,
        });
    }
    let current = p_batt * 1000.0 / params.nominal_voltage;
    let mut delta = -current * dt / (3600.0 * params.capacity);
    if p_batt < 0.0 {
        delta *= params.coulombic_efficiency;
    }
    let raw = soc + delta;
    let next = raw.clamp(0.0, 1.0);
    Ok(BatteryStep {
        soc: next,
        clamped: next != raw,
    })
}

/// Battery power closing the balance for a given engine output.
pub fn power_split(
    p_dem: f64,
    p_eng: f64,
    _vehicle: &VehicleParams,
    battery: &BatteryParams,
) -> PowerSplit {
    let p_batt = (p_dem - p_eng).clamp(-battery.max_charge_power, battery.max_discharge_power);
    PowerSplit {
        p_batt,
        waste: p_eng + p_batt - p_dem,
    }
}

/// Complete parameter set of the simplified powertrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Powertrain {
    pub vehicle: VehicleParams,
    pub engine: EngineMap,
    pub battery: BatteryParams,
}

/// Everything that happens to the powertrain over one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowertrainStep {
    pub p_dem: f64,
    pub p_eng: f64,
    pub p_batt: f64,
    pub waste: f64,
    pub engine: EnginePoint,
    pub fuel_g: f64,
    pub soc: f64,
    pub soc_clamped: bool,
}

impl Default for Powertrain {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_HEV_TOML).expect("bundled parameter file is valid")
    }
}

impl Powertrain {
    pub fn from_toml_str(text: &str) -> Result<Self, PowertrainError> {
        let p: Self = toml::from_str(text).map_err(|e| PowertrainError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_str(text: &str) -> Result<Self, PowertrainError> {
        let p: Self =
            serde_json::from_str(text).map_err(|e| PowertrainError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load_path(path: impl AsRef<Path>) -> Result<Self, PowertrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PowertrainError::Parse(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn validate(&self) -> Result<(), PowertrainError> {
        let bad = |name: &'static str, reason: &str| {
            Err(PowertrainError::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        let v = &self.vehicle;
        for (name, x) in [
            ("vehicle.mass", v.mass),
            ("vehicle.drag_coeff", v.drag_coeff),
            ("vehicle.frontal_area", v.frontal_area),
            ("vehicle.air_density", v.air_density),
            ("vehicle.rolling_coeff", v.rolling_coeff),
            ("vehicle.gravity", v.gravity),
            ("vehicle.driveline_efficiency", v.driveline_efficiency),
            ("vehicle.max_regen_power", v.max_regen_power),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return bad(name, "must be positive");
            }
        }
        if v.driveline_efficiency > 1.0 {
            return bad("vehicle.driveline_efficiency", "must be <= 1");
        }
        if !(0.0..=1.0).contains(&v.regen_efficiency) {
            return bad("vehicle.regen_efficiency", "must be in [0, 1]");
        }
        if !(v.accessory_load >= 0.0) {
            return bad("vehicle.accessory_load", "must be non-negative");
        }

        let e = &self.engine;
        if !(e.max_power > 0.0) {
            return bad("engine.max_power", "must be positive");
        }
        if e.optimal_line.len() < 2 {
            return bad("engine.optimal_line", "needs at least two points");
        }
        if e.optimal_line[0].power != 0.0 {
            return bad("engine.optimal_line", "must start at 0 kW");
        }
        if e.optimal_line.windows(2).any(|w| w[1].power <= w[0].power) {
            return bad("engine.optimal_line", "powers must be strictly increasing");
        }
        if e.optimal_line.last().map(|p| p.power).unwrap_or(0.0) < e.max_power {
            return bad("engine.optimal_line", "must cover max_power");
        }
        if e.optimal_line.iter().any(|p| !(p.bsfc > 0.0)) {
            return bad("engine.optimal_line", "bsfc must be positive");
        }
        if e.optimal_line
            .iter()
            .any(|p| !(800.0..=4500.0).contains(&p.speed))
        {
            return bad("engine.optimal_line", "speed must lie in [800, 4500] r/min");
        }
        if !(e.idle_fuel_rate >= 0.0) || !(e.on_threshold >= 0.0) {
            return bad(
                "engine",
                "idle_fuel_rate and on_threshold must be non-negative",
            );
        }

        let b = &self.battery;
        for (name, x) in [
            ("battery.capacity", b.capacity),
            ("battery.nominal_voltage", b.nominal_voltage),
            ("battery.max_charge_power", b.max_charge_power),
            ("battery.max_discharge_power", b.max_discharge_power),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return bad(name, "must be positive");
            }
        }
        if !(b.coulombic_efficiency > 0.0 && b.coulombic_efficiency <= 1.0) {
            return bad("battery.coulombic_efficiency", "must be in (0, 1]");
        }
        Ok(())
    }

    /// Maps a requested engine power onto what the engine actually delivers:
    /// clamped into [0, max_power], and off below the on-threshold.
    pub fn effective_engine_power(&self, request: f64) -> f64 {
        let p = if request.is_nan() {
            0.0
        } else {
            request.clamp(0.0, self.engine.max_power)
        };
        if p < self.engine.on_threshold {
            0.0
        } else {
            p
        }
    }

    /// Advances one step of `dt` seconds at reference speed/acceleration.
    pub fn step(
        &self,
        soc: f64,
        speed: f64,
        accel: f64,
        engine_request: f64,
        dt: f64,
    ) -> PowertrainStep {
        // accessory load sits on the same bus as traction demand
        let p_dem = demand_power(speed, accel, &self.vehicle) + self.vehicle.accessory_load;
        let p_eng = self.effective_engine_power(engine_request);
        let split = power_split(p_dem, p_eng, &self.vehicle, &self.battery);
        let engine = engine_fuel_rate(p_eng, &self.engine).expect("power clamped into range");
        let batt = battery_step(soc, split.p_batt, dt, &self.battery)
            .expect("battery power clamped into limits");
        PowertrainStep {
            p_dem,
            p_eng,
            p_batt: split.p_batt,
            waste: split.waste,
            engine,
            fuel_g: engine.fuel_rate * dt,
            soc: batt.soc,
            soc_clamped: batt.clamped,
        }
    }

    /// Usable battery energy per unit SOC, kWh.
    pub fn battery_energy_kwh(&self) -> f64 {
        self.battery.capacity * self.battery.nominal_voltage / 1000.0
    }
}

//! Reference speed trajectories.
//!
//! Cycles are stored as `time,speed_kmh` CSV (the unit used by the public
//! NEDC tables) and held internally in m/s. Sampling must be uniform; the
//! interval is inferred from the first two rows.

use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

const KMH_PER_MS: f64 = 3.6;
const SAMPLING_TOLERANCE_S: f64 = 1e-9;

/// The NEDC table shipped with the crate (1 Hz, 1181 rows).
pub const NEDC_CSV: &str = include_str!("../data/nedc.csv");

#[derive(Debug, Error, PartialEq)]
pub enum CycleError {
    #[error("row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("row {line}: sample spacing {spacing} s differs from inferred dt {dt} s")]
    NonUniformSampling { line: usize, spacing: f64, dt: f64 },
    #[error("row {line}: negative speed {speed_kmh} km/h")]
    NegativeSpeed { line: usize, speed_kmh: f64 },
    #[error("a drive cycle needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("sampling interval must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("step index {index} out of range for a cycle of {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("io: {0}")]
    Io(String),
}

/// Uniformly sampled reference speed trajectory. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveCycle {
    times: Vec<f64>,
    speeds: Vec<f64>,
    dt: f64,
}

/// Summary figures of a cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleStats {
    pub distance_km: f64,
    pub duration_s: f64,
    pub max_speed: f64,
}

impl DriveCycle {
    /// Builds a cycle from speeds in m/s sampled every `dt` seconds from t = 0.
    pub fn from_speeds(speeds: Vec<f64>, dt: f64) -> Result<Self, CycleError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CycleError::NonPositiveDt(dt));
        }
        if speeds.len() < 2 {
            return Err(CycleError::TooShort(speeds.len()));
        }
        if let Some((i, &v)) = speeds.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(CycleError::NegativeSpeed {
                line: i + 2,
                speed_kmh: v * KMH_PER_MS,
            });
        }
        let times = (0..speeds.len()).map(|k| k as f64 * dt).collect();
        Ok(Self { times, speeds, dt })
    }

    /// Parses `time,speed_kmh` CSV. CRLF line endings and blank lines are tolerated.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, CycleError> {
        let mut times: Vec<f64> = Vec::new();
        let mut speeds = Vec::new();
        let mut header_seen = false;

        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| CycleError::Io(e.to_string()))?;
            let line = line.trim_end_matches('\r').trim();
            if line.is_empty() {
                continue;
            }
            if !header_seen {
                header_seen = true;
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols == ["time", "speed_kmh"] {
                    continue;
                }
                return Err(CycleError::MalformedRow {
                    line: line_no,
                    reason: format!("expected header `time,speed_kmh`, found `{line}`"),
                });
            }
            let mut fields = line.split(',');
            let (Some(t), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(CycleError::MalformedRow {
                    line: line_no,
                    reason: "expected exactly two columns".into(),
                });
            };
            let parse = |s: &str| -> Result<f64, CycleError> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| CycleError::MalformedRow {
                        line: line_no,
                        reason: format!("`{}` is not a finite number", s.trim()),
                    })
            };
            let t = parse(t)?;
            let v_kmh = parse(v)?;
            if v_kmh < 0.0 {
                return Err(CycleError::NegativeSpeed {
                    line: line_no,
                    speed_kmh: v_kmh,
                });
            }
            if times.len() >= 2 {
                let dt = times[1] - times[0];
                let spacing = t - times[times.len() - 1];
                if (spacing - dt).abs() > SAMPLING_TOLERANCE_S {
                    return Err(CycleError::NonUniformSampling {
                        line: line_no,
                        spacing,
                        dt,
                    });
                }
            }
            times.push(t);
            speeds.push(v_kmh / KMH_PER_MS);
        }

        if times.len() < 2 {
            return Err(CycleError::TooShort(times.len()));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(CycleError::NonPositiveDt(dt));
        }
        Ok(Self { times, speeds, dt })
    }

    pub fn load_str(text: &str) -> Result<Self, CycleError> {
        Self::load(text.as_bytes())
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Self, CycleError> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| CycleError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::load(std::io::BufReader::new(file))
    }

    /// The bundled 1 Hz NEDC table.
    pub fn nedc() -> Self {
        Self::load_str(NEDC_CSV).expect("bundled NEDC table is valid")
    }

    /// Idle, linear ramp up to `top_kmh`, cruise, linear ramp down, idle.
    /// Phase lengths are in seconds; the cycle is sampled every `dt` seconds.
    pub fn trapezoid(top_kmh: f64, phases: TrapezoidPhases, dt: f64) -> Result<Self, CycleError> {
        let knots = phases.knots(top_kmh / KMH_PER_MS);
        let total = knots.last().map(|k| k.0).unwrap_or(0.0);
        let n = (total / dt).round() as usize;
        if ((n as f64) * dt - total).abs() > SAMPLING_TOLERANCE_S {
            return Err(CycleError::NonUniformSampling {
                line: 0,
                spacing: dt,
                dt: total,
            });
        }
        let speeds = (0..=n)
            .map(|k| piecewise_linear(&knots, k as f64 * dt))
            .collect();
        Self::from_speeds(speeds, dt)
    }

    /// The 200 s, 0 → 50 km/h → 0 desk-scale cycle used by the tests and
    /// the `trapezoid` configuration.
    pub fn desk_trapezoid(dt: f64) -> Result<Self, CycleError> {
        Self::trapezoid(50.0, TrapezoidPhases::DESK, dt)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,speed_kmh")?;
        for (t, v) in self.times.iter().zip(&self.speeds) {
            writeln!(out, "{},{}", t, v * KMH_PER_MS)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of transitions in a full pass over the cycle.
    pub fn steps(&self) -> usize {
        self.speeds.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn speed_at(&self, index: usize) -> Result<f64, CycleError> {
        self.speeds
            .get(index)
            .copied()
            .ok_or(CycleError::IndexOutOfRange {
                index,
                len: self.len(),
            })
    }

    /// Forward-difference acceleration; the final sample reports 0.
    pub fn accel_at(&self, index: usize) -> Result<f64, CycleError> {
        if index >= self.len() {
            return Err(CycleError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        if index + 1 == self.len() {
            return Ok(0.0);
        }
        Ok((self.speeds[index + 1] - self.speeds[index]) / self.dt)
    }

    pub fn stats(&self) -> CycleStats {
        let distance_m: f64 = self
            .speeds
            .windows(2)
            .zip(self.times.windows(2))
            .map(|(v, t)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
            .sum();
        CycleStats {
            distance_km: distance_m / 1000.0,
            duration_s: self.times[self.times.len() - 1] - self.times[0],
            max_speed: self.speeds.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Phase durations (seconds) of a trapezoidal speed profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidPhases {
    pub idle_start: f64,
    pub ramp_up: f64,
    pub cruise: f64,
    pub ramp_down: f64,
    pub idle_end: f64,
}

impl TrapezoidPhases {
    pub const DESK: TrapezoidPhases = TrapezoidPhases {
        idle_start: 10.0,
        ramp_up: 30.0,
        cruise: 110.0,
        ramp_down: 30.0,
        idle_end: 20.0,
    };

    fn knots(&self, top: f64) -> Vec<(f64, f64)> {
        let mut t = 0.0;
        let mut knots = vec![(0.0, 0.0)];
        for (len, v) in [
            (self.idle_start, 0.0),
            (self.ramp_up, top),
            (self.cruise, top),
            (self.ramp_down, 0.0),
            (self.idle_end, 0.0),
        ] {
            t += len;
            knots.push((t, v));
        }
        knots
    }
}

fn piecewise_linear(knots: &[(f64, f64)], t: f64) -> f64 {
    for w in knots.windows(2) {
        let (t0, v0) = w[0];
        let (t1, v1) = w[1];
        if t <= t1 {
            if t1 <= t0 {
                return v1;
            }
            return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
        }
    }
    knots.last().map(|k| k.1).unwrap_or(0.0)
}

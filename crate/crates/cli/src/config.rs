//! Run configuration shared by every subcommand.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use cofc_core::crl::trainer::TrainConfig;
use cofc_core::cvpo::{CvpoConfig, CvpoParams};
use cofc_core::drive_cycle::DriveCycle;
use cofc_core::env::{HevEnv, SocCorridor};
use cofc_core::lagrangian::{LagrangianConfig, PidGains};
use cofc_core::oracle::DpGrid;
use cofc_core::powertrain::Powertrain;

pub const SEED_ENV: &str = "COFC_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[value(name = "pid_lagrangian")]
    PidLagrangian,
    Cvpo,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::PidLagrangian => "pid_lagrangian",
            Algorithm::Cvpo => "cvpo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub soc_levels: usize,
    pub action_levels: usize,
    pub decision_interval: usize,
    pub snap_to_grid: bool,
    pub slack: Option<f64>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            soc_levels: 201,
            action_levels: 21,
            decision_interval: 1,
            snap_to_grid: false,
            slack: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `nedc`, `trapezoid`, or a path to a `time,speed_kmh` CSV.
    pub cycle: String,
    /// `default` or a path to a TOML/JSON parameter file.
    pub powertrain: String,
    /// Defaults to the preset matching the cycle.
    pub corridor: Option<SocCorridor>,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub pid: PidGains,
    pub cvpo: CvpoParams,
    pub oracle: OracleSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PidLagrangian,
            seed: 16,
            cycle: "nedc".into(),
            powertrain: "default".into(),
            corridor: None,
            output_dir: PathBuf::from("runs/default"),
            train: TrainConfig::default(),
            pid: PidGains::default(),
            cvpo: CvpoParams::default(),
            oracle: OracleSettings::default(),
        }
    }
}

/// Everything needed to build environments for one run.
#[derive(Clone)]
pub struct Setup {
    pub cycle: Arc<DriveCycle>,
    pub powertrain: Arc<Powertrain>,
    pub corridor: SocCorridor,
}

impl Setup {
    pub fn env(&self) -> Result<HevEnv, cofc_core::env::EnvError> {
        HevEnv::new(self.cycle.clone(), self.powertrain.clone(), self.corridor)
    }
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json`. Relative cycle
    /// and powertrain paths are resolved against the config's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for field in [&mut cfg.cycle, &mut cfg.powertrain] {
            if !matches!(field.as_str(), "nedc" | "trapezoid" | "default")
                && Path::new(field.as_str()).is_relative()
            {
                *field = base.join(&*field).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Flag beats `COFC_SEED`, which beats the file.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> anyhow::Result<()> {
        if let Some(s) = flag {
            self.seed = s;
        } else if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?;
        }
        Ok(())
    }

    pub fn setup(&self) -> anyhow::Result<Setup> {
        let cycle = match self.cycle.as_str() {
            "nedc" => DriveCycle::nedc(),
            "trapezoid" => DriveCycle::desk_trapezoid(1.0)?,
            p => DriveCycle::load_path(p).with_context(|| format!("loading cycle {p}"))?,
        };
        let powertrain = match self.powertrain.as_str() {
            "default" => Powertrain::default(),
            p => Powertrain::load_path(p).with_context(|| format!("loading powertrain {p}"))?,
        };
        let corridor = match (self.corridor, self.cycle.as_str()) {
            (Some(c), _) => c,
            (None, "nedc") => SocCorridor::nedc_default(),
            (None, "trapezoid") => SocCorridor::trapezoid_default(),
            (None, _) => bail!("a custom cycle needs an explicit [corridor]"),
        };
        let setup = Setup {
            cycle: Arc::new(cycle),
            powertrain: Arc::new(powertrain),
            corridor,
        };
        setup.env().context("corridor does not fit the cycle")?;
        Ok(setup)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        cofc_core::lagrangian::PidDualState::new(self.pid)?;
        self.cvpo.validate()?;
        Ok(())
    }

    pub fn lagrangian(&self) -> LagrangianConfig {
        LagrangianConfig {
            train: self.train.clone(),
            pid: self.pid,
        }
    }

    pub fn cvpo_config(&self) -> CvpoConfig {
        CvpoConfig {
            train: self.train.clone(),
            cvpo: self.cvpo.clone(),
        }
    }

    pub fn dp_grid(&self, setup: &Setup) -> DpGrid {
        let o = &self.oracle;
        let mut g = DpGrid::new(
            setup.cycle.clone(),
            setup.corridor,
            setup.powertrain.clone(),
        )
        .with_levels(o.soc_levels, o.action_levels)
        .with_decision_interval(o.decision_interval)
        .snapped(o.snap_to_grid);
        g.slack = o.slack;
        g
    }
}

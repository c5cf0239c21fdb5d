use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use rand::Rng as _;
use serde_json::{json, Value};

use cofc_core::crl::checkpoint;
use cofc_core::crl::trainer::{
    write_trace_header, write_trace_row, BestPolicy, EpochRecord, TrainObserver,
};
use cofc_core::crl::{worker_rng, CrlError, GaussianPolicy};
use cofc_core::cvpo::{self, CvpoState};
use cofc_core::env::{fuel_economy, Episode, HevEnv};
use cofc_core::lagrangian::{self, LagrangianState};
use cofc_core::oracle::{dp_solve, DpSolution, OracleError};

use crate::config::{Algorithm, RunConfig, Setup};
use crate::plot;
use crate::{Classify, Common, Failure};

/// Kind tag of best-policy checkpoints.
pub const POLICY_KIND: &str = "policy";

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref()).config_err()?;
    cfg.resolve_seed(common.seed).config_err()?;
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .runtime_err()
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("JSON values always serialise");
    fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .runtime_err()
}

fn write_with<F>(path: &Path, f: F) -> Result<(), Failure>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let run = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        f(&mut w)?;
        w.flush()
    };
    run()
        .with_context(|| format!("writing {}", path.display()))
        .runtime_err()
}

/// Table-style summary of one episode.
fn episode_summary(ep: &Episode, env: &HevEnv) -> anyhow::Result<Value> {
    let ret = ep.returns(1.0)?;
    let distance = env.episode_distance_km();
    Ok(json!({
        "reward": ret.j_r,
        "fuel_g": ret.total_fuel,
        "l_per_100km": fuel_economy(ret.total_fuel, distance)?,
        "cost": ep.total_cost(),
        "final_soc": ret.final_soc,
        "distance_km": distance,
        "steps": ep.transitions.len(),
    }))
}

fn greedy_episode(policy: &GaussianPolicy, env: &mut HevEnv) -> anyhow::Result<Episode> {
    if policy.obs_dim() != 3 {
        return Err(anyhow!(
            "policy expects {} features, the environment has 3",
            policy.obs_dim()
        ));
    }
    let mut failure = None;
    let ep = env.rollout(0, |obs, _| {
        policy
            .deterministic_action(&obs.features())
            .unwrap_or_else(|e| {
                failure.get_or_insert(e);
                0.0
            })
    })?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(ep),
    }
}

fn write_episode(dir: &Path, prefix: &str, ep: &Episode) -> Result<(), Failure> {
    write_with(&dir.join(format!("{prefix}episode.csv")), |w| {
        ep.write_log(w)
    })?;
    write_with(&dir.join(format!("{prefix}working_points.csv")), |w| {
        ep.write_working_points(w)
    })
}

struct RunObserver {
    trace: BufWriter<File>,
    cvpo: bool,
    dir: PathBuf,
    stop: Arc<AtomicBool>,
}

impl TrainObserver for RunObserver {
    fn on_epoch(
        &mut self,
        record: &EpochRecord,
        new_best: Option<&BestPolicy>,
    ) -> Result<(), CrlError> {
        let io = |e: std::io::Error| CrlError::Checkpoint(format!("trace: {e}"));
        write_trace_row(&mut self.trace, record, self.cvpo).map_err(io)?;
        self.trace.flush().map_err(io)?;
        if let Some(b) = new_best {
            checkpoint::save(self.dir.join("best.ckpt"), POLICY_KIND, b)?;
        }
        Ok(())
    }

    fn should_stop(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

pub fn train(
    common: &Common,
    algo: Option<Algorithm>,
    epochs: Option<usize>,
) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if let Some(a) = algo {
        cfg.algorithm = a;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    cfg.validate().config_err()?;
    let setup = cfg.setup().config_err()?;
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    fs::write(
        dir.join("config.toml"),
        toml::to_string(&cfg).expect("config serialises"),
    )
    .context("writing config snapshot")
    .runtime_err()?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)) {
            log::warn!("Ctrl-C handler not installed: {e}");
        }
    }
    let trace_path = dir.join("trace.csv");
    let mut trace = BufWriter::new(
        File::create(&trace_path)
            .with_context(|| format!("creating {}", trace_path.display()))
            .runtime_err()?,
    );
    let is_cvpo = cfg.algorithm == Algorithm::Cvpo;
    write_trace_header(&mut trace, is_cvpo)
        .context("writing trace")
        .runtime_err()?;
    let mut observer = RunObserver {
        trace,
        cvpo: is_cvpo,
        dir: dir.clone(),
        stop,
    };
    let factory = |_: usize| setup.env().map_err(CrlError::from);

    let final_ckpt = dir.join("final.ckpt");
    let (trace, best, final_policy, interrupted) = match cfg.algorithm {
        Algorithm::PidLagrangian => {
            let out = lagrangian::train(&cfg.lagrangian(), factory, cfg.seed, &mut observer)
                .runtime_err()?;
            checkpoint::save::<LagrangianState>(
                &final_ckpt,
                lagrangian::CHECKPOINT_KIND,
                &out.state,
            )
            .runtime_err()?;
            (out.trace, out.best, out.state.policy, out.interrupted)
        }
        Algorithm::Cvpo => {
            let out =
                cvpo::train(&cfg.cvpo_config(), factory, cfg.seed, &mut observer).runtime_err()?;
            checkpoint::save::<CvpoState>(&final_ckpt, cvpo::CHECKPOINT_KIND, &out.state)
                .runtime_err()?;
            (out.trace, out.best, out.state.policy, out.interrupted)
        }
    };

    let (policy, best_epoch, feasible) = match &best {
        Some(b) => (&b.policy, Some(b.epoch), Some(b.feasible)),
        None => (&final_policy, None, None),
    };
    let mut env = setup.env().runtime_err()?;
    let ep = greedy_episode(policy, &mut env).runtime_err()?;
    write_episode(&dir, "best_", &ep)?;
    let mut summary = episode_summary(&ep, &env).runtime_err()?;
    let extra = json!({
        "algorithm": cfg.algorithm.name(),
        "seed": cfg.seed,
        "epochs_completed": trace.len(),
        "best_epoch": best_epoch,
        "feasible": feasible,
        "eps_t": cfg.train.eps_t,
        "interrupted": interrupted,
    });
    merge(&mut summary, extra);
    write_json(&dir.join("summary.json"), &summary)?;
    println!("{summary}");
    if interrupted {
        log::warn!(
            "training interrupted; final checkpoint written to {}",
            final_ckpt.display()
        );
    }
    Ok(())
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, from) {
        a.extend(b);
    }
}

/// Loads the policy from a best-policy or trainer-state checkpoint.
pub fn load_policy(path: &Path) -> anyhow::Result<GaussianPolicy> {
    let kind = checkpoint::peek_kind(path)?;
    Ok(match kind.as_str() {
        POLICY_KIND => checkpoint::load::<BestPolicy>(path, POLICY_KIND)?.policy,
        lagrangian::CHECKPOINT_KIND => {
            checkpoint::load::<LagrangianState>(path, lagrangian::CHECKPOINT_KIND)?.policy
        }
        cvpo::CHECKPOINT_KIND => checkpoint::load::<CvpoState>(path, cvpo::CHECKPOINT_KIND)?.policy,
        other => return Err(anyhow!("unknown checkpoint kind `{other}`")),
    })
}

pub fn eval(common: &Common, ckpt: Option<&Path>, random: bool) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let setup: Setup = cfg.setup().config_err()?;
    let mut env = setup.env().config_err()?;
    let (ep, source) = if random {
        let mut rng = worker_rng(cfg.seed, 0);
        let max = setup.powertrain.engine.max_power;
        let ep = env
            .rollout(cfg.seed, |_, _| rng.random_range(0.0..=max))
            .runtime_err()?;
        (ep, "random".to_string())
    } else {
        let path = ckpt.expect("clap requires --checkpoint without --random");
        let policy = load_policy(path)
            .with_context(|| format!("loading {}", path.display()))
            .config_err()?;
        if policy.range() != (0.0, setup.powertrain.engine.max_power) {
            return Err(anyhow!(
                "checkpoint action range {:?} does not match the powertrain",
                policy.range()
            ))
            .config_err();
        }
        (
            greedy_episode(&policy, &mut env).config_err()?,
            path.display().to_string(),
        )
    };
    create_dir(&cfg.output_dir)?;
    write_episode(&cfg.output_dir, "", &ep)?;
    let mut summary = episode_summary(&ep, &env).runtime_err()?;
    merge(&mut summary, json!({ "policy": source, "seed": cfg.seed }));
    write_json(&cfg.output_dir.join("eval_summary.json"), &summary)?;
    println!("{summary}");
    Ok(())
}

pub fn oracle(
    common: &Common,
    soc_levels: Option<usize>,
    action_levels: Option<usize>,
    decision_interval: Option<usize>,
) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    let o = &mut cfg.oracle;
    o.soc_levels = soc_levels.unwrap_or(o.soc_levels);
    o.action_levels = action_levels.unwrap_or(o.action_levels);
    o.decision_interval = decision_interval.unwrap_or(o.decision_interval);
    let setup = cfg.setup().config_err()?;
    let grid = cfg.dp_grid(&setup);
    grid.validate().config_err()?;
    let sol: DpSolution = match dp_solve(&grid) {
        Ok(s) => s,
        Err(e @ (OracleError::InstanceTooLarge { .. } | OracleError::InvalidGrid(_))) => {
            return Err(e).config_err()
        }
        Err(e) => return Err(e).runtime_err(),
    };
    let traj = sol.trajectory(&grid).runtime_err()?;
    let env = setup.env().runtime_err()?;
    let distance = env.episode_distance_km();
    let summary = json!({
        "min_fuel_g": sol.min_fuel,
        "feasible": sol.feasible && traj.feasible,
        "trajectory_fuel_g": traj.fuel_g,
        "final_soc": traj.soc.last(),
        "l_per_100km": fuel_economy(sol.min_fuel, distance).runtime_err()?,
        "distance_km": distance,
        "soc_levels": grid.soc_levels,
        "action_levels": grid.action_levels,
        "decision_interval": grid.decision_interval,
        "slack": grid.tolerance(),
    });
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("oracle.json"), &summary)?;
    write_with(&cfg.output_dir.join("oracle_trajectory.csv"), |w| {
        DpSolution::write_trajectory_csv(&traj, &grid, w)
    })?;
    println!("{summary}");
    Ok(())
}

pub fn plot(
    trace: Option<PathBuf>,
    episode: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let (input, is_trace) = match (trace, episode) {
        (Some(t), _) => (t, true),
        (None, Some(e)) => (e, false),
        (None, None) => return Err(anyhow!("need --trace or --episode")).config_err(),
    };
    let text = fs::read_to_string(&input)
        .with_context(|| format!("reading {}", input.display()))
        .config_err()?;
    let table = plot::Table::parse(&text)
        .with_context(|| format!("parsing {}", input.display()))
        .config_err()?;
    if table.rows.is_empty() {
        return Err(anyhow!("{} has no data rows", input.display())).config_err();
    }
    let svg = if is_trace {
        plot::trace_svg(&table)
    } else {
        plot::episode_svg(&table)
    }
    .config_err()?;
    let out = out.unwrap_or_else(|| input.with_extension("svg"));
    fs::write(&out, svg)
        .with_context(|| format!("writing {}", out.display()))
        .runtime_err()?;
    println!("{}", json!({ "svg": out.display().to_string() }));
    Ok(())
}

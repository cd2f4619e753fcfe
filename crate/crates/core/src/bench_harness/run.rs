use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::cmdp_env::EnvConfig;
use crate::ndmath::Checkpoint;
use crate::river_world::{generate_world, Level, World};
use crate::safe_algos::{Agent, AlgoConfig, Algorithm, CategoricalPolicy, Environment, Runner, UpdateStats};
use crate::vision_codec::{train_vae, FrameDataset, Vae, VaeConfig};

use super::eval::{evaluate_policy, EvalReport};
use super::metrics::{write_metrics, CostCounter, MetricsRow, MovingAverage, MA_WINDOW};
use super::river_task::EncodedRiverEnv;
use super::HarnessError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VAE_FILE: &str = "vae.ndm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub level: Level,
    pub world_seed: u64,
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    pub eval_episodes: usize,
    pub checkpoint_interval: usize,
    /// Frames collected to train the encoder when none is supplied.
    pub vae_frames: usize,
    pub algo: AlgoConfig,
    pub env: EnvConfig,
    pub vae: VaeConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            level: Level::Medium,
            world_seed: 0,
            seeds: vec![0, 1, 2],
            total_steps: 200_000,
            eval_episodes: 20,
            checkpoint_interval: 50_000,
            vae_frames: 2000,
            algo: AlgoConfig::default(),
            env: EnvConfig::default(),
            vae: VaeConfig::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return fail("at least one seed is required");
        }
        if self.total_steps == 0 || self.algo.horizon == 0 {
            return fail("total_steps and horizon must be positive");
        }
        if self.algo.epochs == 0 || self.algo.minibatch_size == 0 {
            return fail("epochs and minibatch_size must be positive");
        }
        if self.checkpoint_interval == 0 {
            return fail("checkpoint_interval must be positive");
        }
        if self.vae.latent_dim == 0 {
            return fail("latent_dim must be positive");
        }
        if ![32, 64, 128].contains(&self.env.resolution) {
            return fail("resolution must be 32, 64 or 128");
        }
        if self.algo.cost_budget < 0.0 || self.algo.gamma <= 0.0 || self.algo.gamma > 1.0 {
            return fail("cost_budget must be nonnegative and gamma in (0, 1]");
        }
        Ok(())
    }

    pub fn world(&self) -> World {
        generate_world(self.level, self.world_seed)
    }
}

/// Everything needed to reproduce a run's CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub vae: PathBuf,
    pub metrics: BTreeMap<u64, PathBuf>,
    pub checkpoints: BTreeMap<u64, Vec<PathBuf>>,
    pub final_checkpoints: BTreeMap<u64, PathBuf>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, HarnessError> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|_| HarnessError::Missing(path.display().to_string()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub struct TrainOutcome {
    pub agent: Agent,
    pub rows: Vec<MetricsRow>,
    pub stats: Vec<UpdateStats>,
}

/// Alternates rollouts and updates until `total_steps` environment steps have
/// been collected; the last rollout is truncated to fit. `on_update` runs after
/// every update.
pub fn train_agent<E, F>(
    env: E,
    algorithm: Algorithm,
    config: &AlgoConfig,
    seed: u64,
    total_steps: usize,
    mut on_update: F,
) -> Result<TrainOutcome, HarnessError>
where
    E: Environment,
    F: FnMut(&Agent, &MetricsRow) -> Result<(), HarnessError>,
{
    let (heads, choices) = env.action_layout();
    let mut agent = Agent::new(algorithm, config.clone(), env.obs_dim(), heads, choices, seed);
    let mut runner = Runner::new(env, seed, config.gamma);
    let mut ma = MovingAverage::new(MA_WINDOW);
    let mut costs = CostCounter::default();
    let mut rows = Vec::new();
    let mut all_stats = Vec::new();
    while runner.global_step < total_steps {
        let horizon = config.horizon.min(total_steps - runner.global_step);
        let mut buf = runner.collect(&agent.policy, &agent.value_r, &agent.value_c, horizon, &mut agent.rng)?;
        for ep in &buf.episodes {
            ma.push(ep.episode_return);
            costs.record(ep.outcome);
        }
        let stats = agent.update(&mut buf)?;
        let lambda = match algorithm {
            Algorithm::PpoLag => Some(stats.lambda),
            Algorithm::Focops => Some(stats.nu),
            _ => None,
        };
        let row = MetricsRow {
            step: runner.global_step,
            ep_ret_ma50: ma.mean(),
            cost_rate: costs.rates(runner.global_step),
            lambda,
            mean_kl: stats.mean_kl,
            clip_frac: stats.clip_frac,
        };
        on_update(&agent, &row)?;
        rows.push(row);
        all_stats.push(stats);
    }
    Ok(TrainOutcome {
        agent,
        rows,
        stats: all_stats,
    })
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Trains an encoder on frames collected from the run's training world.
pub fn train_encoder(config: &RunConfig, world: &World) -> Result<Vae, HarnessError> {
    let data = FrameDataset::collect(world, &config.env, config.vae_frames, config.env.resolution, config.vae.seed);
    let (vae, _) = train_vae(&data, &config.vae)?;
    Ok(vae)
}

pub fn load_vae(path: &Path) -> Result<Vae, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::Missing(path.display().to_string()));
    }
    Ok(Vae::load(&Checkpoint::load(path)?)?)
}

pub fn load_policy(path: &Path) -> Result<CategoricalPolicy, HarnessError> {
    if !path.exists() {
        return Err(HarnessError::Missing(path.display().to_string()));
    }
    Ok(CategoricalPolicy::load_from(&Checkpoint::load(path)?, "policy")?)
}

/// Trains every seed of `config`, writing metrics, checkpoints and a manifest
/// under `config.out_dir`. Without an `encoder`, one is trained first and saved
/// next to the runs.
pub fn run_training(config: &RunConfig, encoder: Option<Arc<Vae>>) -> Result<RunManifest, HarnessError> {
    config.validate()?;
    let started = now();
    let out = &config.out_dir;
    fs::create_dir_all(out)?;
    let world = Arc::new(config.world());
    let vae = match encoder {
        Some(v) => v,
        None => Arc::new(train_encoder(config, &world)?),
    };
    if vae.resolution != config.env.resolution {
        return Err(HarnessError::Config(format!(
            "encoder resolution {} does not match environment resolution {}",
            vae.resolution, config.env.resolution
        )));
    }
    let vae_path = out.join(VAE_FILE);
    vae.save().save(&vae_path)?;

    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seeds: config.seeds.clone(),
        started_unix: started,
        finished_unix: 0,
        vae: vae_path,
        metrics: BTreeMap::new(),
        checkpoints: BTreeMap::new(),
        final_checkpoints: BTreeMap::new(),
    };

    for &seed in &config.seeds {
        let seed_dir = out.join(format!("seed{seed}"));
        fs::create_dir_all(&seed_dir)?;
        let env = EncodedRiverEnv::new(Arc::clone(&world), config.env.clone(), Arc::clone(&vae));
        let mut next_ckpt = config.checkpoint_interval;
        let mut ckpts = Vec::new();
        let result = train_agent(env, config.algorithm, &config.algo, seed, config.total_steps, |agent, row| {
            if row.step >= next_ckpt {
                let p = seed_dir.join(format!("step_{:07}.ndm", row.step));
                agent.save().save(&p)?;
                ckpts.push(p);
                while next_ckpt <= row.step {
                    next_ckpt += config.checkpoint_interval;
                }
            }
            Ok(())
        })?;
        let final_path = seed_dir.join("final.ndm");
        result.agent.save().save(&final_path)?;
        let csv = out.join(format!("metrics_seed{seed}.csv"));
        write_metrics(fs::File::create(&csv)?, &result.rows)?;
        manifest.metrics.insert(seed, csv);
        manifest.checkpoints.insert(seed, ckpts);
        manifest.final_checkpoints.insert(seed, final_path);
    }
    manifest.finished_unix = now();
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Greedy evaluation of the final checkpoints of a finished run on `level`.
/// `episodes` is per seed; `max_seeds` keeps only the first seeds of the run.
pub fn evaluate_run(
    run_dir: &Path,
    level: Level,
    episodes: usize,
    max_seeds: Option<usize>,
) -> Result<EvalReport, HarnessError> {
    let manifest = RunManifest::load(run_dir)?;
    let cfg = &manifest.config;
    let vae = Arc::new(load_vae(&resolve(run_dir, &manifest.vae))?);
    let world = Arc::new(generate_world(level, cfg.world_seed));
    let mut all = Vec::new();
    let keep = max_seeds.unwrap_or(usize::MAX);
    for (&seed, path) in manifest.final_checkpoints.iter().take(keep) {
        let policy = load_policy(&resolve(run_dir, path))?;
        let mut env = EncodedRiverEnv::new(Arc::clone(&world), cfg.env.clone(), Arc::clone(&vae));
        all.extend(evaluate_policy(&mut env, &policy, seed, episodes)?);
    }
    Ok(EvalReport::from_episodes(cfg.algorithm.display_name(), level.name(), all))
}

/// Manifest paths are written as given; if the run directory moved, fall back
/// to the file name inside it.
fn resolve(run_dir: &Path, p: &Path) -> PathBuf {
    if p.exists() {
        return p.to_path_buf();
    }
    let rel: PathBuf = p.iter().rev().take(2).collect::<Vec<_>>().into_iter().rev().collect();
    let candidate = run_dir.join(&rel);
    if candidate.exists() {
        candidate
    } else {
        run_dir.join(p.file_name().unwrap_or_default())
    }
}

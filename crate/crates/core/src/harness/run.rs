use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ExperimentConfig;
use super::{mix, runtime, HarnessError};
use crate::envs::{make_env, Action, ActionSpace, Env, EnvSpec};
use crate::episodes::{finalize_episode, read_episodes, write_episode, Episode, EpisodeError, ReplayBuffer};
use crate::kernels::Smoother;
use crate::metrics::{self, prediction_rate, prediction_record, RunMetrics, Stat};
use crate::planner::Agent;
use crate::worldmodel::{checkpoint, stack_history, LossRecord, TrainingBatch, WorldModel};

const STREAM_MODEL: u64 = 1;
const STREAM_AGENT: u64 = 2;
const STREAM_BUFFER: u64 = 3;
const STREAM_EPISODES: u64 = 4;
const STREAM_EVAL_ENV: u64 = 5;
const STREAM_EVAL_AGENT: u64 = 6;
const STREAM_DATA: u64 = 7;
const STREAM_ROLL: u64 = 8;

/// Window of gradient steps averaged into the offline loss record.
const OFFLINE_LOSS_WINDOW: u64 = 100;

const TRAIN_RATIO_DEFINITION: &str = "gradient steps per 1000 environment steps, credited after each collected episode";

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Continue from the latest checkpoint of each seed.
    pub resume: bool,
    /// Added to every configured seed.
    pub seed_offset: u64,
    /// Stop each seed after this many checkpoints, leaving it resumable.
    pub halt_after_checkpoints: Option<u64>,
    /// Run seeds on the rayon pool instead of one after another.
    pub parallel: bool,
    /// Print one line per evaluation to stderr.
    pub progress: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            resume: false,
            seed_offset: 0,
            halt_after_checkpoints: None,
            parallel: true,
            progress: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Pending,
    Halted,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSeed {
    pub seed: u64,
    pub status: SeedStatus,
    pub dir: String,
}

/// Written once, before the first environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub seed_offset: u64,
    pub smoothing: String,
    pub train_ratio_definition: String,
    pub seeds: Vec<ManifestSeed>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: SeedStatus,
    pub env_steps: u64,
    pub episodes: u64,
    pub gradient_steps: u64,
    /// Environment steps at the first evaluation in which a majority of the
    /// episodes completed every subtask.
    pub first_success: Option<u64>,
    pub curve: Vec<RunMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub manifest: ExperimentManifest,
    pub seeds: Vec<SeedOutcome>,
}

/// Everything besides the model needed to continue a seed exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SeedState {
    env_steps: u64,
    episodes: u64,
    gradient_steps: u64,
    train_credit: u64,
    next_eval: u64,
    evals: u64,
    loss_sum: LossRecord,
    loss_count: u64,
    last_loss: LossRecord,
    curve: Vec<RunMetrics>,
    first_success: Option<u64>,
    finished: bool,
    model_updates: u64,
    episode_rng: ChaCha8Rng,
    agent_rng: ChaCha8Rng,
    buffer_rng: ChaCha8Rng,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    env_steps: u64,
    return_raw: f64,
    subtasks: f64,
    pred_rate: Option<f64>,
    dyn_mse: f64,
    rew_mse: f64,
}

fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(HarnessError::io(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(HarnessError::io(format!("renaming to {}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime("serializing json"))?;
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(HarnessError::io(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(runtime(&format!("parsing {}", path.display())))
}

fn write_curve(path: &Path, curve: &[RunMetrics]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if curve.is_empty() {
        w.write_record(["env_steps", "return_raw", "subtasks", "pred_rate", "dyn_mse", "rew_mse"])
            .map_err(runtime("curve csv"))?;
    }
    for m in curve {
        w.serialize(CurveRow {
            env_steps: m.env_steps,
            return_raw: m.episode_return_raw,
            subtasks: m.subtasks_done,
            pred_rate: m.prediction_rate,
            dyn_mse: m.losses.dyn_mse,
            rew_mse: m.losses.rew_mse,
        })
        .map_err(runtime("curve csv"))?;
    }
    let bytes = w.into_inner().map_err(runtime("curve csv"))?;
    write_atomic(path, &bytes)
}

fn write_metrics(out_dir: &Path, outcomes: &[SeedOutcome]) -> Result<(), HarnessError> {
    let curves: Vec<Vec<RunMetrics>> = outcomes.iter().map(|o| o.curve.clone()).collect();
    let rows = metrics::aggregate_runs(&curves, Stat::Median).map_err(runtime("aggregating metrics"))?;
    let mut bytes = Vec::new();
    metrics::write_csv(&mut bytes, &rows).map_err(runtime("metrics csv"))?;
    write_atomic(&out_dir.join("metrics.csv"), &bytes)
}

fn effective_seeds(config: &ExperimentConfig, offset: u64) -> Vec<u64> {
    config.seeds.iter().map(|s| s.wrapping_add(offset)).collect()
}

fn build_manifest(config: &ExperimentConfig, offset: u64) -> ExperimentManifest {
    let seeds = effective_seeds(config, offset);
    let mut artifacts = vec!["manifest.json".to_string(), "metrics.csv".to_string(), "summary.json".to_string()];
    if config.offline.is_some() {
        artifacts.push("dataset.jsonl".into());
    }
    for s in &seeds {
        for f in ["curve.csv", "episodes.jsonl", "checkpoint.bin", "state.json"] {
            artifacts.push(format!("seed_{s}/{f}"));
        }
    }
    let smoothing = config.smoothing.smoother().map(|s| s.label()).unwrap_or_default();
    ExperimentManifest {
        name: config.arm_name(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seed_offset: offset,
        smoothing,
        train_ratio_definition: TRAIN_RATIO_DEFINITION.to_string(),
        seeds: seeds
            .iter()
            .map(|&seed| ManifestSeed {
                seed,
                status: SeedStatus::Pending,
                dir: format!("seed_{seed}"),
            })
            .collect(),
        artifacts,
    }
}

/// Runs every seed of `config` and writes all artifacts under `out_dir`.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let smoother = config.smoothing.smoother().map_err(|e| HarnessError::Config(vec![format!("smoothing: {e}")]))?;
    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir).map_err(HarnessError::io(format!("creating {}", out_dir.display())))?;
    let manifest_path = out_dir.join("manifest.json");
    let manifest = build_manifest(config, opts.seed_offset);
    if manifest_path.exists() {
        if !opts.resume {
            return Err(HarnessError::Config(vec![format!(
                "out_dir: {} already holds a run; resume it or choose another directory",
                out_dir.display()
            )]));
        }
        let existing: ExperimentManifest = read_json(&manifest_path)?;
        if existing.config != manifest.config || existing.seed_offset != manifest.seed_offset {
            return Err(HarnessError::Config(vec![format!(
                "out_dir: {} was started with a different configuration or seed offset",
                out_dir.display()
            )]));
        }
    } else {
        write_json(&manifest_path, &manifest)?;
    }

    let dataset = match &config.offline {
        Some(off) => {
            let train = offline_dataset(config, &smoother, off.data_seed, off.episodes, off.action_noise, 0)?;
            let held_out = offline_dataset(config, &smoother, off.data_seed, off.eval_episodes, off.action_noise, 1)?;
            let mut bytes = Vec::new();
            for ep in &train {
                write_episode(&mut bytes, ep).map_err(runtime("dataset log"))?;
            }
            write_atomic(&out_dir.join("dataset.jsonl"), &bytes)?;
            Some((train, held_out))
        }
        None => None,
    };

    let seeds = effective_seeds(config, opts.seed_offset);
    let work = |&seed: &u64| -> Result<SeedOutcome, HarnessError> {
        let dir = seed_dir(out_dir, seed);
        match &dataset {
            Some((train, held_out)) => run_offline_seed(config, &smoother, seed, &dir, train, held_out, opts),
            None => run_seed(config, &smoother, seed, &dir, opts),
        }
    };
    let outcomes: Vec<SeedOutcome> = if opts.parallel {
        seeds.par_iter().map(work).collect::<Result<_, _>>()?
    } else {
        seeds.iter().map(work).collect::<Result<_, _>>()?
    };
    write_metrics(out_dir, &outcomes)?;
    let summary = RunSummary { manifest, seeds: outcomes };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

struct Checkpointer<'a> {
    dir: &'a Path,
}

impl Checkpointer<'_> {
    fn state_path(&self) -> PathBuf {
        self.dir.join("state.json")
    }

    fn save(&self, model: &WorldModel, state: &mut SeedState) -> Result<(), HarnessError> {
        let mut bytes = Vec::new();
        checkpoint::save(model, &mut bytes).map_err(runtime("checkpoint"))?;
        write_atomic(&self.dir.join("checkpoint.bin"), &bytes)?;
        state.model_updates = model.updates();
        write_json(&self.state_path(), state)?;
        write_curve(&self.dir.join("curve.csv"), &state.curve)
    }

    fn load(&self) -> Result<(WorldModel, SeedState), HarnessError> {
        let state: SeedState = read_json(&self.state_path())?;
        let path = self.dir.join("checkpoint.bin");
        let mut file = BufReader::new(File::open(&path).map_err(HarnessError::io(format!("opening {}", path.display())))?);
        let model = checkpoint::load(&mut file).map_err(runtime("checkpoint"))?;
        if model.updates() != state.model_updates {
            return Err(HarnessError::Runtime(format!(
                "{}: checkpoint has {} updates but state expects {}",
                self.dir.display(),
                model.updates(),
                state.model_updates
            )));
        }
        Ok((model, state))
    }
}

fn fresh_state(seed: u64) -> SeedState {
    SeedState {
        env_steps: 0,
        episodes: 0,
        gradient_steps: 0,
        train_credit: 0,
        next_eval: 0,
        evals: 0,
        loss_sum: LossRecord::default(),
        loss_count: 0,
        last_loss: LossRecord::default(),
        curve: Vec::new(),
        first_success: None,
        finished: false,
        model_updates: 0,
        episode_rng: ChaCha8Rng::seed_from_u64(mix(seed, STREAM_EPISODES)),
        agent_rng: ChaCha8Rng::seed_from_u64(mix(seed, STREAM_AGENT)),
        buffer_rng: ChaCha8Rng::seed_from_u64(mix(seed, STREAM_BUFFER)),
    }
}

fn new_model(config: &ExperimentConfig, spec: &EnvSpec, seed: u64) -> Result<WorldModel, HarnessError> {
    WorldModel::new(config.model.clone(), spec.obs_dim, spec.action_space.encoded_dim(), mix(seed, STREAM_MODEL))
        .map_err(|e| HarnessError::Config(vec![format!("model: {e}")]))
}

fn new_buffer(config: &ExperimentConfig, seed: u64) -> Result<ReplayBuffer, HarnessError> {
    ReplayBuffer::new(config.buffer_capacity, mix(seed, STREAM_BUFFER), config.sparse_threshold).map_err(runtime("replay buffer"))
}

/// Plays one episode with the planner at exploration rate `epsilon(t)`.
fn play_episode(
    env: &mut dyn Env,
    env_seed: u64,
    agent: &mut Agent,
    model: &WorldModel,
    epsilon: &dyn Fn(usize) -> f64,
) -> Result<Episode, HarnessError> {
    let stack = model.config().history_stack;
    let obs = env.reset(env_seed);
    let mut ep = Episode::begin(&env.spec().id, env_seed, obs);
    agent.begin_episode();
    let mut hist = vec![0.0; model.input_dim()];
    loop {
        stack_history(ep.steps(), ep.len() - 1, stack, &mut hist);
        let action = agent.act(model, &hist, epsilon(ep.len() - 1)).map_err(runtime("planner"))?;
        let result = env.step(&action).map_err(runtime("environment"))?;
        let done = result.done;
        ep.record(action, result).map_err(runtime("episode"))?;
        if done {
            return Ok(ep);
        }
    }
}

struct Evaluation {
    metrics: RunMetrics,
    success: bool,
}

fn evaluate(
    config: &ExperimentConfig,
    smoother: &Smoother,
    model: &WorldModel,
    seed: u64,
    index: u64,
    env_steps: u64,
    losses: LossRecord,
) -> Result<Evaluation, HarnessError> {
    let spec = config.env_spec(mix(seed, STREAM_EVAL_ENV))?;
    let mut env = make_env(&spec).map_err(runtime("environment"))?;
    let mut episodes = Vec::with_capacity(config.eval_episodes);
    let mut completed = 0usize;
    for k in 0..config.eval_episodes as u64 {
        let mut agent = Agent::new(
            config.planner.clone(),
            spec.action_space.clone(),
            mix(mix(seed, STREAM_EVAL_AGENT), index.wrapping_mul(1 << 16) + k),
        )
        .map_err(runtime("planner"))?;
        let env_seed = mix(mix(seed, STREAM_EVAL_ENV), index.wrapping_mul(1 << 16) + k);
        let ep = play_episode(env.as_mut(), env_seed, &mut agent, model, &|_| 0.0)?;
        completed += usize::from(ep.subtasks_done() >= env.subtask_count());
        episodes.push(ep);
    }
    let n = episodes.len() as f64;
    let refs: Vec<&Episode> = episodes.iter().collect();
    let record = prediction_record(model, &refs, smoother, config.sparse_threshold).map_err(runtime("prediction rate"))?;
    Ok(Evaluation {
        metrics: RunMetrics {
            env_steps,
            episode_return_raw: episodes.iter().map(Episode::raw_return).sum::<f64>() / n,
            subtasks_done: episodes.iter().map(|e| e.subtasks_done() as f64).sum::<f64>() / n,
            prediction_rate: prediction_rate(&record).ok(),
            losses,
        },
        // a majority of the evaluation episodes must complete every subtask
        success: 2 * completed > episodes.len(),
    })
}

fn train(
    config: &ExperimentConfig,
    space: &ActionSpace,
    model: &mut WorldModel,
    buffer: &mut ReplayBuffer,
    state: &mut SeedState,
    steps: u64,
) -> Result<(), HarnessError> {
    let mc = &config.model;
    for _ in 0..steps {
        let windows = match buffer.sample_oversampled(mc.batch, mc.seq_len, config.oversample_p) {
            Ok(w) => w,
            Err(EpisodeError::InsufficientData { .. }) => return Ok(()),
            Err(e) => return Err(HarnessError::Runtime(format!("sampling: {e}"))),
        };
        let batch = TrainingBatch::from_windows(state.gradient_steps, &windows, mc.history_stack, space).map_err(runtime("batch"))?;
        let loss = model.train_step(&batch).map_err(runtime("training"))?;
        state.gradient_steps += 1;
        state.loss_sum.dyn_mse += loss.dyn_mse;
        state.loss_sum.rew_mse += loss.rew_mse;
        state.loss_count += 1;
    }
    Ok(())
}

fn take_losses(state: &mut SeedState) -> LossRecord {
    if state.loss_count > 0 {
        let n = state.loss_count as f64;
        state.last_loss = LossRecord {
            dyn_mse: state.loss_sum.dyn_mse / n,
            rew_mse: state.loss_sum.rew_mse / n,
        };
        state.loss_sum = LossRecord::default();
        state.loss_count = 0;
    }
    state.last_loss
}

fn truncate_log(path: &Path, keep: u64) -> Result<Vec<Episode>, HarnessError> {
    let episodes = match File::open(path) {
        Ok(f) => read_episodes(BufReader::new(f)).map_err(runtime(&format!("reading {}", path.display())))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(HarnessError::io(format!("opening {}", path.display()))(e)),
    };
    if (episodes.len() as u64) < keep {
        return Err(HarnessError::Runtime(format!(
            "{} holds {} episodes but the checkpoint expects {keep}",
            path.display(),
            episodes.len()
        )));
    }
    let kept: Vec<Episode> = episodes.into_iter().take(keep as usize).collect();
    let mut bytes = Vec::new();
    for ep in &kept {
        write_episode(&mut bytes, ep).map_err(runtime("episode log"))?;
    }
    write_atomic(path, &bytes)?;
    Ok(kept)
}

fn outcome(seed: u64, state: &SeedState, status: SeedStatus) -> SeedOutcome {
    SeedOutcome {
        seed,
        status,
        env_steps: state.env_steps,
        episodes: state.episodes,
        gradient_steps: state.gradient_steps,
        first_success: state.first_success,
        curve: state.curve.clone(),
    }
}

fn run_seed(config: &ExperimentConfig, smoother: &Smoother, seed: u64, dir: &Path, opts: &RunOptions) -> Result<SeedOutcome, HarnessError> {
    fs::create_dir_all(dir).map_err(HarnessError::io(format!("creating {}", dir.display())))?;
    let ckpt = Checkpointer { dir };
    let spec = config.env_spec(seed)?;
    let space = spec.action_space.clone();
    let mut env = make_env(&spec).map_err(runtime("environment"))?;
    let log_path = dir.join("episodes.jsonl");
    let mut buffer = new_buffer(config, seed)?;

    let (mut model, mut state) = if opts.resume && ckpt.state_path().exists() {
        let (model, state) = ckpt.load()?;
        for ep in truncate_log(&log_path, state.episodes)? {
            buffer.push(ep).map_err(runtime("replay buffer"))?;
        }
        buffer.set_rng_state(state.buffer_rng.clone());
        (model, state)
    } else {
        let mut state = fresh_state(seed);
        state.next_eval = config.eval_every;
        let model = new_model(config, &spec, seed)?;
        fs::write(&log_path, b"").map_err(HarnessError::io(format!("creating {}", log_path.display())))?;
        ckpt.save(&model, &mut state)?;
        buffer.set_rng_state(state.buffer_rng.clone());
        (model, state)
    };
    let mut agent = Agent::new(config.planner.clone(), space.clone(), 0).map_err(runtime("planner"))?;
    agent.set_rng(state.agent_rng.clone());
    let mut log = BufWriter::new(
        OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(HarnessError::io(format!("opening {}", log_path.display())))?,
    );

    let mut checkpoints = 0u64;
    let total = config.total_env_steps;
    while !state.finished {
        let due_final = state.env_steps >= total;
        if !due_final {
            let env_seed = state.episode_rng.next_u64();
            let start = state.env_steps;
            let ep = play_episode(env.as_mut(), env_seed, &mut agent, &model, &|t| {
                config.planner.epsilon_at(start + t as u64, total)
            })?;
            let ep = finalize_episode(ep, smoother).map_err(runtime("finalize"))?;
            let n_steps = ep.len() as u64 - 1;
            state.env_steps += n_steps;
            state.episodes += 1;
            write_episode(&mut log, &ep).map_err(runtime("episode log"))?;
            buffer.push(ep).map_err(runtime("replay buffer"))?;
            state.train_credit += config.train_ratio * n_steps;
            let steps = state.train_credit / 1000;
            state.train_credit %= 1000;
            train(config, &space, &mut model, &mut buffer, &mut state, steps)?;
        }
        let needs_final_row = due_final && state.env_steps > 0 && state.curve.last().is_none_or(|m| m.env_steps != state.env_steps);
        if state.env_steps >= state.next_eval || needs_final_row {
            let losses = take_losses(&mut state);
            let eval = evaluate(config, smoother, &model, seed, state.evals, state.env_steps, losses)?;
            state.evals += 1;
            if opts.progress {
                eprintln!(
                    "[{} seed {seed}] steps {} return {:.2} subtasks {:.2} pred_rate {} dyn {:.4} rew {:.4}",
                    config.arm_name(),
                    state.env_steps,
                    eval.metrics.episode_return_raw,
                    eval.metrics.subtasks_done,
                    eval.metrics.prediction_rate.map_or("-".to_string(), |p| format!("{p:.2}")),
                    losses.dyn_mse,
                    losses.rew_mse
                );
            }
            state.curve.push(eval.metrics);
            state.next_eval = (state.env_steps / config.eval_every + 1) * config.eval_every;
            if eval.success && state.first_success.is_none() {
                state.first_success = Some(state.env_steps);
                if config.stop_on_success {
                    state.finished = true;
                }
            }
        }
        if due_final {
            state.finished = true;
        }
        let evaluated_now = state.curve.last().is_some_and(|m| m.env_steps == state.env_steps);
        if evaluated_now || state.finished {
            log.flush().map_err(HarnessError::io(format!("writing {}", log_path.display())))?;
            state.agent_rng = agent.rng().clone();
            state.buffer_rng = buffer.rng_state().clone();
            ckpt.save(&model, &mut state)?;
            checkpoints += 1;
            if !state.finished && opts.halt_after_checkpoints == Some(checkpoints) {
                return Ok(outcome(seed, &state, SeedStatus::Halted));
            }
        }
    }
    log.flush().map_err(HarnessError::io(format!("writing {}", log_path.display())))?;
    Ok(outcome(seed, &state, SeedStatus::Complete))
}

/// Episodes of the scripted policy with a fraction of random actions,
/// finalized with `smoother`. `split` selects independent datasets.
fn offline_dataset(
    config: &ExperimentConfig,
    smoother: &Smoother,
    data_seed: u64,
    count: usize,
    noise: f64,
    split: u64,
) -> Result<Vec<Episode>, HarnessError> {
    let stream = mix(mix(data_seed, STREAM_DATA), split);
    let spec = config.env_spec(stream)?;
    let mut env = make_env(&spec).map_err(runtime("environment"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let env_seed = rng.next_u64();
        let obs = env.reset(env_seed);
        let mut ep = Episode::begin(&spec.id, env_seed, obs);
        loop {
            let action = if rng.random_bool(noise) {
                spec.action_space.sample(&mut rng)
            } else {
                env.scripted_action()
            };
            let result = env.step(&action).map_err(runtime("environment"))?;
            let done = result.done;
            ep.record(action, result).map_err(runtime("episode"))?;
            if done {
                break;
            }
        }
        out.push(finalize_episode(ep, smoother).map_err(runtime("finalize"))?);
    }
    Ok(out)
}

fn run_offline_seed(
    config: &ExperimentConfig,
    smoother: &Smoother,
    seed: u64,
    dir: &Path,
    train_set: &[Episode],
    held_out: &[Episode],
    opts: &RunOptions,
) -> Result<SeedOutcome, HarnessError> {
    let off = config.offline.as_ref().expect("offline config");
    fs::create_dir_all(dir).map_err(HarnessError::io(format!("creating {}", dir.display())))?;
    let ckpt = Checkpointer { dir };
    if opts.resume && ckpt.state_path().exists() {
        let (_, state) = ckpt.load()?;
        if state.finished {
            return Ok(outcome(seed, &state, SeedStatus::Complete));
        }
    }
    let spec = config.env_spec(seed)?;
    let mut model = new_model(config, &spec, seed)?;
    let mut buffer = new_buffer(config, seed)?;
    for ep in train_set {
        buffer.push(ep.clone()).map_err(runtime("replay buffer"))?;
    }
    fs::write(dir.join("episodes.jsonl"), b"").map_err(HarnessError::io("creating episode log"))?;
    let mut state = fresh_state(seed);
    state.env_steps = train_set.iter().map(|e| e.len() as u64 - 1).sum();
    state.episodes = train_set.len() as u64;
    let window_start = off.train_steps.saturating_sub(OFFLINE_LOSS_WINDOW);
    for k in 0..off.train_steps {
        if k == window_start {
            state.loss_sum = LossRecord::default();
            state.loss_count = 0;
        }
        train(config, &spec.action_space, &mut model, &mut buffer, &mut state, 1)?;
    }
    let losses = take_losses(&mut state);
    let refs: Vec<&Episode> = held_out.iter().collect();
    let record = prediction_record(&model, &refs, smoother, config.sparse_threshold).map_err(runtime("prediction rate"))?;
    let n = held_out.len() as f64;
    let metrics = RunMetrics {
        env_steps: state.env_steps,
        episode_return_raw: held_out.iter().map(Episode::raw_return).sum::<f64>() / n,
        subtasks_done: held_out.iter().map(|e| e.subtasks_done() as f64).sum::<f64>() / n,
        prediction_rate: prediction_rate(&record).ok(),
        losses,
    };
    if opts.progress {
        eprintln!(
            "[{} seed {seed}] offline: {} gradient steps, pred_rate {:?}",
            config.arm_name(),
            state.gradient_steps,
            metrics.prediction_rate
        );
    }
    state.curve.push(metrics);
    state.evals = 1;
    state.finished = true;
    state.buffer_rng = buffer.rng_state().clone();
    ckpt.save(&model, &mut state)?;
    Ok(outcome(seed, &state, SeedStatus::Complete))
}

/// Splits a comma-separated list; each item is read as JSON when possible
/// and as a string otherwise.
pub fn parse_sweep_values(csv: &str) -> Vec<Value> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string())))
        .collect()
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `base` with the dotted `axis` set to `value`, writing to its own
/// subdirectory of the base output directory.
pub fn sweep_config(base: &ExperimentConfig, axis: &str, value: &Value) -> Result<ExperimentConfig, HarnessError> {
    let mut doc = serde_json::to_value(base).map_err(runtime("serializing config"))?;
    let keys: Vec<&str> = axis.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Config(vec![format!("axis: `{axis}` is not a dotted key path")]));
    }
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut node = &mut doc;
    for k in parents {
        node = node
            .get_mut(*k)
            .ok_or_else(|| HarnessError::Config(vec![format!("axis: `{axis}` has no `{k}` section")]))?;
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(last.to_string(), value.clone());
        }
        None => return Err(HarnessError::Config(vec![format!("axis: `{axis}` does not name a field")])),
    }
    let mut config = ExperimentConfig::from_json(&doc.to_string())?;
    let label = format!("{axis}={}", value_label(value));
    config.out_dir = base.out_dir.join(&label);
    config.name = Some(label);
    Ok(config)
}

/// One run per value of `axis`, sharing the base seed list.
pub fn sweep(base: &ExperimentConfig, axis: &str, values: &[Value], opts: &RunOptions) -> Result<Vec<RunSummary>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config(vec!["values: at least one value is required".into()]));
    }
    let configs: Vec<ExperimentConfig> = values.iter().map(|v| sweep_config(base, axis, v)).collect::<Result<_, _>>()?;
    configs.iter().map(|c| run(c, opts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RollPolicy {
    Scripted,
    Random,
}

impl std::str::FromStr for RollPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(RollPolicy::Scripted),
            "random" => Ok(RollPolicy::Random),
            other => Err(format!("unknown policy `{other}` (expected scripted or random)")),
        }
    }
}

/// Plays `episodes` episodes with a fixed policy and writes them as JSON lines.
pub fn roll(env_id: &str, policy: RollPolicy, episodes: usize, seed: u64, out: &Path) -> Result<Vec<Episode>, HarnessError> {
    let spec = EnvSpec::new(env_id, seed).map_err(|e| HarnessError::Config(vec![format!("env: {e}")]))?;
    let mut env = make_env(&spec).map_err(|e| HarnessError::Config(vec![format!("env: {e}")]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, STREAM_ROLL));
    let mut out_eps = Vec::with_capacity(episodes);
    let mut bytes = Vec::new();
    for k in 0..episodes as u64 {
        let env_seed = mix(seed, k);
        let obs = env.reset(env_seed);
        let mut ep = Episode::begin(env_id, env_seed, obs);
        loop {
            let action: Action = match policy {
                RollPolicy::Scripted => env.scripted_action(),
                RollPolicy::Random => spec.action_space.sample(&mut rng),
            };
            let result = env.step(&action).map_err(runtime("environment"))?;
            let done = result.done;
            ep.record(action, result).map_err(runtime("episode"))?;
            if done {
                break;
            }
        }
        let ep = finalize_episode(ep, &Smoother::None).map_err(runtime("finalize"))?;
        write_episode(&mut bytes, &ep).map_err(runtime("episode log"))?;
        out_eps.push(ep);
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(HarnessError::io(format!("creating {}", parent.display())))?;
    }
    let mut f = File::create(out).map_err(HarnessError::io(format!("creating {}", out.display())))?;
    f.write_all(&bytes).map_err(HarnessError::io(format!("writing {}", out.display())))?;
    Ok(out_eps)
}

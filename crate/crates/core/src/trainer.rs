//! Actor/learner training: actors roll out ε-greedy episodes into a shared
//! replay buffer, learners turn sampled batches into gradients, and a single
//! global optimizer applies them and publishes parameter snapshots.
//!
//! Two schedules share the same state: a synchronous single-thread loop that
//! is bit-reproducible and resumable, and a threaded asynchronous mode.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender};
use parking_lot::{Mutex, RwLock};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{BlobReader, BlobWriter, CheckpointFile, TensorBlock};
use crate::config::{fmt_optional, parse_bool, parse_kv, parse_optional, parse_value};
use crate::dqn::{
    dqn_loss_and_grads, select_actions, stack_patches, sync_target, EpisodeVolume, EpsilonSchedule, Experience,
    ReplayBuffer, VolumeSource, DEFAULT_BATCH_SIZE, DEFAULT_GAMMA, DEFAULT_TARGET_SYNC,
};
use crate::error::{Error, Result};
use crate::nn::ops::BnBatchStats;
use crate::nn::{adam_step, q_forward, AdamConfig, AdamState, Gradients, NetConfig, QNetworkParams};
use crate::pose_graph::{build_fetal_graph, PoseGraph, NUM_LANDMARKS};
use crate::reward::{step_rewards, RewardConfig};
use crate::rng::{rng_from_state, rng_state, substream, substream_seed};
use crate::volume::{augment, env_step, initial_positions_with_fraction, Action, LabeledVolume, Position};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_actors: usize,
    pub m_learners: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: f64,
    pub gamma: f64,
    /// Global applications between target refreshes.
    pub target_sync_period: u64,
    pub replay_capacity: usize,
    /// Actor steps between parameter fetches.
    pub actor_snapshot_period: u64,
    pub total_learner_steps: u64,
    pub seed: u64,
    /// One actor, one learner, strictly interleaved on the calling thread.
    pub deterministic: bool,
    /// Replay size before learners start.
    pub learning_starts: usize,
    /// Actor steps per learner step in deterministic mode.
    pub actor_steps_per_update: usize,
    pub horizon: usize,
    pub step_voxels: i64,
    pub start_fraction: f64,
    pub epsilon: EpsilonSchedule,
    pub augment: bool,
    /// Gradients older than this many versions are dropped; `None` applies everything.
    pub max_staleness: Option<u64>,
    pub max_wall_secs: Option<f64>,
    pub reward: RewardConfig,
    pub net: NetConfig,
    /// Learner steps per metrics record.
    pub metrics_period: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_actors: 4,
            m_learners: 4,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: crate::nn::adam::DEFAULT_LR,
            clip: crate::nn::adam::DEFAULT_CLIP,
            gamma: DEFAULT_GAMMA,
            target_sync_period: DEFAULT_TARGET_SYNC,
            replay_capacity: 20_000,
            actor_snapshot_period: 64,
            total_learner_steps: 20_000,
            seed: 0,
            deterministic: false,
            learning_starts: 500,
            actor_steps_per_update: 4,
            horizon: 60,
            step_voxels: 1,
            start_fraction: crate::volume::DEFAULT_START_FRACTION,
            epsilon: EpsilonSchedule::default(),
            augment: true,
            max_staleness: None,
            max_wall_secs: None,
            reward: RewardConfig::default(),
            net: NetConfig::desk(),
            metrics_period: 100,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "n_actors",
    "m_learners",
    "batch_size",
    "lr",
    "clip",
    "gamma",
    "target_sync_period",
    "replay_capacity",
    "actor_snapshot_period",
    "total_learner_steps",
    "seed",
    "deterministic",
    "learning_starts",
    "actor_steps_per_update",
    "horizon",
    "step_voxels",
    "start_fraction",
    "eps_start",
    "eps_end",
    "eps_decay_steps",
    "augment",
    "max_staleness",
    "max_wall_secs",
    "beta",
    "use_structure_reward",
    "both_segments",
    "network",
    "metrics_period",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_actors", self.n_actors),
            ("m_learners", self.m_learners),
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("horizon", self.horizon),
            ("actor_steps_per_update", self.actor_steps_per_update),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.actor_snapshot_period == 0 || self.target_sync_period == 0 || self.metrics_period == 0 {
            return Err(Error::Config("periods must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.clip > 0.0) {
            return Err(Error::Config("lr and clip must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.step_voxels < 1 {
            return Err(Error::Config("step_voxels must be >= 1".into()));
        }
        if !(self.start_fraction > 0.0 && self.start_fraction <= 1.0) {
            return Err(Error::Config("start_fraction must lie in (0, 1]".into()));
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || e.end > e.start {
            return Err(Error::Config("epsilon must satisfy 0 <= eps_end <= eps_start <= 1".into()));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::Config("replay_capacity must be >= batch_size".into()));
        }
        self.reward.validate()?;
        self.net.validate()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_actors" => self.n_actors = parse_value(key, value)?,
            "m_learners" => self.m_learners = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "clip" => self.clip = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "target_sync_period" => self.target_sync_period = parse_value(key, value)?,
            "replay_capacity" => self.replay_capacity = parse_value(key, value)?,
            "actor_snapshot_period" => self.actor_snapshot_period = parse_value(key, value)?,
            "total_learner_steps" => self.total_learner_steps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "learning_starts" => self.learning_starts = parse_value(key, value)?,
            "actor_steps_per_update" => self.actor_steps_per_update = parse_value(key, value)?,
            "horizon" => self.horizon = parse_value(key, value)?,
            "step_voxels" => self.step_voxels = parse_value(key, value)?,
            "start_fraction" => self.start_fraction = parse_value(key, value)?,
            "eps_start" => self.epsilon.start = parse_value(key, value)?,
            "eps_end" => self.epsilon.end = parse_value(key, value)?,
            "eps_decay_steps" => self.epsilon.decay_steps = parse_value(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "max_staleness" => self.max_staleness = parse_optional(key, value)?,
            "max_wall_secs" => self.max_wall_secs = parse_optional(key, value)?,
            "beta" => self.reward.beta = parse_value(key, value)?,
            "use_structure_reward" => self.reward.use_structure_reward = parse_bool(key, value)?,
            "both_segments" => self.reward.both_segments = parse_bool(key, value)?,
            "network" => {
                self.net = if value.contains('=') {
                    NetConfig::parse(value)?
                } else {
                    NetConfig::preset(value)?
                }
            }
            "metrics_period" => self.metrics_period = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown training key {other:?}"))),
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let e = &self.epsilon;
        let values: Vec<String> = vec![
            self.n_actors.to_string(),
            self.m_learners.to_string(),
            self.batch_size.to_string(),
            format!("{:?}", self.lr),
            format!("{:?}", self.clip),
            format!("{:?}", self.gamma),
            self.target_sync_period.to_string(),
            self.replay_capacity.to_string(),
            self.actor_snapshot_period.to_string(),
            self.total_learner_steps.to_string(),
            self.seed.to_string(),
            self.deterministic.to_string(),
            self.learning_starts.to_string(),
            self.actor_steps_per_update.to_string(),
            self.horizon.to_string(),
            self.step_voxels.to_string(),
            format!("{:?}", self.start_fraction),
            format!("{:?}", e.start),
            format!("{:?}", e.end),
            e.decay_steps.to_string(),
            self.augment.to_string(),
            fmt_optional(&self.max_staleness),
            fmt_optional(&self.max_wall_secs.map(|v| format!("{v:?}"))),
            format!("{:?}", self.reward.beta),
            self.reward.use_structure_reward.to_string(),
            self.reward.both_segments.to_string(),
            self.net.describe(),
            self.metrics_period.to_string(),
        ];
        TRAIN_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn effective_counts(&self) -> (usize, usize) {
        if self.deterministic {
            (1, 1)
        } else {
            (self.n_actors, self.m_learners)
        }
    }

    fn warmup(&self) -> usize {
        self.learning_starts.max(self.batch_size)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip: self.clip,
            ..AdamConfig::default()
        }
    }
}

/// Training volumes; episodes draw one uniformly and optionally augment it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub volumes: Vec<Arc<LabeledVolume>>,
}

impl Dataset {
    pub fn new(volumes: Vec<LabeledVolume>) -> Result<Self> {
        if volumes.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        Ok(Dataset {
            volumes: volumes.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn episode(&self, source: VolumeSource) -> Result<Arc<EpisodeVolume>> {
        let base = self
            .volumes
            .get(source.index)
            .ok_or_else(|| Error::Format(format!("volume index {} outside a set of {}", source.index, self.len())))?;
        let volume = match source.augment_seed {
            Some(seed) => Arc::new(augment(base, seed)),
            None => base.clone(),
        };
        Ok(Arc::new(EpisodeVolume { source, volume }))
    }
}

/// Rebuilds episode volumes at most once per source.
struct EpisodeCache<'a> {
    data: &'a Dataset,
    built: HashMap<VolumeSource, Arc<EpisodeVolume>>,
}

impl<'a> EpisodeCache<'a> {
    fn get(&mut self, source: VolumeSource) -> Result<Arc<EpisodeVolume>> {
        if let Some(e) = self.built.get(&source) {
            return Ok(e.clone());
        }
        let e = self.data.episode(source)?;
        self.built.insert(source, e.clone());
        Ok(e)
    }
}

pub struct ActorState {
    pub id: usize,
    pub rng: ChaCha8Rng,
    pub snapshot: Arc<QNetworkParams>,
    pub episode: Option<Arc<EpisodeVolume>>,
    pub positions: [Position; NUM_LANDMARKS],
    pub t: usize,
    pub steps: u64,
    pub episodes: u64,
    pub since_fetch: u64,
}

impl ActorState {
    fn new(id: usize, seed: u64, snapshot: Arc<QNetworkParams>) -> Self {
        ActorState {
            id,
            rng: substream(seed, &format!("actor-{id}")),
            snapshot,
            episode: None,
            positions: [[0; 3]; NUM_LANDMARKS],
            t: 0,
            steps: 0,
            episodes: 0,
            since_fetch: 0,
        }
    }

    /// One joint environment step under the actor's current snapshot.
    pub fn step(
        &mut self,
        cfg: &TrainConfig,
        data: &Dataset,
        graph: &PoseGraph,
        fetch: impl FnOnce() -> Arc<QNetworkParams>,
    ) -> Result<Experience> {
        if self.since_fetch >= cfg.actor_snapshot_period {
            self.snapshot = fetch();
            self.since_fetch = 0;
        }
        if self.episode.is_none() || self.t >= cfg.horizon {
            let index = self.rng.gen_range(0..data.len());
            let augment_seed = cfg.augment.then(|| self.rng.gen::<u64>());
            let episode = data.episode(VolumeSource { index, augment_seed })?;
            self.positions = initial_positions_with_fraction(&episode.volume, self.rng.gen(), cfg.start_fraction);
            self.episode = Some(episode);
            self.t = 0;
            self.episodes += 1;
        }
        let episode = self.episode.clone().expect("episode started above");
        let v = &episode.volume;
        let patches = stack_patches(v, &[self.positions], self.snapshot.config.encoder.patch);
        let q = q_forward(&self.snapshot, &patches, 1, false, false)?.q;
        let actions = select_actions(&q, cfg.epsilon.value(self.steps), &mut self.rng);
        let next = env_step(&self.positions, &actions, v.dims, cfg.step_voxels);
        let rewards = step_rewards(&self.positions, &next, &v.landmarks, graph, &cfg.reward)?;
        let exp = Experience {
            volume: episode.clone(),
            positions_t: self.positions,
            actions,
            rewards,
            positions_t1: next,
            terminal: false,
        };
        self.positions = next;
        self.t += 1;
        self.steps += 1;
        self.since_fetch += 1;
        Ok(exp)
    }
}

/// The single authoritative parameter copy with its optimizer and frozen target.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    pub params: QNetworkParams,
    pub target: QNetworkParams,
    pub adam: AdamState,
    pub adam_cfg: AdamConfig,
    pub sync_period: u64,
    pub target_syncs: u64,
}

impl GlobalModel {
    pub fn new(params: QNetworkParams, adam_cfg: AdamConfig, sync_period: u64) -> Self {
        GlobalModel {
            target: sync_target(&params),
            adam: AdamState::new(&params),
            params,
            adam_cfg,
            sync_period,
            target_syncs: 0,
        }
    }

    /// Clipped Adam update plus running-statistics update; refreshes the
    /// target every `sync_period` applications. Returns the new version.
    pub fn apply(&mut self, grads: &Gradients, bn_stats: &[BnBatchStats]) -> u64 {
        adam_step(&mut self.params, grads, &mut self.adam, &self.adam_cfg);
        self.params.update_running_stats(bn_stats);
        if self.adam.step % self.sync_period == 0 {
            self.target = sync_target(&self.params);
            self.target_syncs += 1;
        }
        self.params.version
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub wall_time: f64,
    pub learner_step: u64,
    pub loss: f64,
    pub eps: f64,
    pub actor_steps: u64,
    pub replay_size: usize,
    pub version: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<serde_json::Value>,
}

pub trait MetricsSink {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()>;
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Discards records.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &MetricsRecord) -> Result<()> {
        Ok(())
    }
}

/// Appends one JSON object per line.
pub struct JsonLinesSink<W: Write> {
    pub out: W,
}

impl<W: Write> MetricsSink for JsonLinesSink<W> {
    fn record(&mut self, rec: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

pub struct ParamSnapshot {
    pub params: Arc<QNetworkParams>,
    pub target: Arc<QNetworkParams>,
    pub version: u64,
    pub checksum: u64,
}

/// Bookkeeping of an asynchronous run.
#[derive(Debug, Clone, Default)]
pub struct AsyncReport {
    pub pushed: u64,
    pub applied: u64,
    pub dropped_stale: u64,
    /// `(version, checksum)` of every published snapshot, in publication order.
    pub published: Vec<(u64, u64)>,
    /// `(learner, version, checksum of the copy it used)` for every gradient computed.
    pub observed: Vec<(usize, u64, u64)>,
    pub actor_steps: u64,
    pub max_staleness_seen: u64,
    pub wall_secs: f64,
}

impl AsyncReport {
    pub fn versions_gap_free(&self) -> bool {
        let start = self.published.first().map(|p| p.0).unwrap_or(0);
        self.published.iter().enumerate().all(|(i, p)| p.0 == start + i as u64)
    }

    pub fn observed_all_published(&self) -> bool {
        let table: HashMap<u64, u64> = self.published.iter().copied().collect();
        self.observed.iter().all(|(_, v, c)| table.get(v) == Some(c))
    }
}

struct GradMsg {
    version: u64,
    loss: f64,
    grads: Gradients,
    bn_stats: Vec<BnBatchStats>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub data: Arc<Dataset>,
    pub graph: PoseGraph,
    pub global: GlobalModel,
    pub replay: ReplayBuffer,
    pub actors: Vec<ActorState>,
    pub learner_rngs: Vec<ChaCha8Rng>,
    pub learner_steps: u64,
    pub dropped_stale: u64,
    pub metrics_emitted: u64,
    loss_sum: f64,
    loss_count: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Arc<Dataset>) -> Result<Self> {
        config.validate()?;
        let params = QNetworkParams::init(&config.net, substream_seed(config.seed, "init"))?;
        let (n, m) = config.effective_counts();
        let shared = Arc::new(params.clone());
        let actors = (0..n).map(|i| ActorState::new(i, config.seed, shared.clone())).collect();
        let learner_rngs = (0..m).map(|i| substream(config.seed, &format!("learner-{i}"))).collect();
        Ok(Trainer {
            global: GlobalModel::new(params, config.adam(), config.target_sync_period),
            replay: ReplayBuffer::new(config.replay_capacity),
            graph: build_fetal_graph(),
            data,
            actors,
            learner_rngs,
            learner_steps: 0,
            dropped_stale: 0,
            metrics_emitted: 0,
            loss_sum: 0.0,
            loss_count: 0,
            config,
        })
    }

    pub fn params(&self) -> &QNetworkParams {
        &self.global.params
    }

    pub fn actor_steps(&self) -> u64 {
        self.actors.iter().map(|a| a.steps).sum()
    }

    fn note_loss(&mut self, loss: f64, started: Instant, sink: &mut dyn MetricsSink) -> Result<()> {
        self.loss_sum += loss;
        self.loss_count += 1;
        if self.learner_steps % self.config.metrics_period == 0 {
            let rec = MetricsRecord {
                wall_time: started.elapsed().as_secs_f64(),
                learner_step: self.learner_steps,
                loss: self.loss_sum / self.loss_count as f64,
                eps: self.config.epsilon.value(self.actor_steps()),
                actor_steps: self.actor_steps(),
                replay_size: self.replay.len(),
                version: self.global.params.version,
                eval: None,
            };
            sink.record(&rec)?;
            self.metrics_emitted += 1;
            self.loss_sum = 0.0;
            self.loss_count = 0;
        }
        Ok(())
    }

    pub fn run(&mut self, sink: &mut dyn MetricsSink) -> Result<Option<AsyncReport>> {
        if self.config.deterministic {
            self.run_deterministic(sink)?;
            Ok(None)
        } else {
            self.run_async(sink).map(Some)
        }
    }

    /// Single-thread schedule: `actor_steps_per_update` actor steps, then one
    /// learner step, until `total_learner_steps` applications.
    pub fn run_deterministic(&mut self, sink: &mut dyn MetricsSink) -> Result<()> {
        if self.actors.len() != 1 || self.learner_rngs.len() != 1 {
            return Err(Error::Config("deterministic mode needs exactly one actor and one learner".into()));
        }
        let started = Instant::now();
        let deadline = self.config.max_wall_secs.map(|s| started + Duration::from_secs_f64(s));
        let warmup = self.config.warmup();
        while self.learner_steps < self.config.total_learner_steps {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                break;
            }
            for _ in 0..self.config.actor_steps_per_update {
                let global = &self.global.params;
                let exp = self.actors[0].step(&self.config, &self.data, &self.graph, || Arc::new(global.clone()))?;
                self.replay.push(exp);
            }
            if self.replay.len() < warmup {
                continue;
            }
            let batch = self.replay.sample(self.config.batch_size, &mut self.learner_rngs[0])?;
            let out = dqn_loss_and_grads(&batch, &self.global.params, &self.global.target, self.config.gamma)?;
            self.global.apply(&out.grads, &out.bn_stats);
            self.learner_steps += 1;
            self.note_loss(out.loss, started, sink)?;
        }
        Ok(())
    }

    /// Threaded schedule: `n_actors` actor threads, `m_learners` learner
    /// threads, and the calling thread as the serialized global optimizer.
    pub fn run_async(&mut self, sink: &mut dyn MetricsSink) -> Result<AsyncReport> {
        let started = Instant::now();
        let deadline = self.config.max_wall_secs.map(|s| started + Duration::from_secs_f64(s));
        let cfg = self.config.clone();
        let replay = Mutex::new(std::mem::replace(&mut self.replay, ReplayBuffer::new(1)));
        let initial = ParamSnapshot {
            params: Arc::new(self.global.params.clone()),
            target: Arc::new(self.global.target.clone()),
            version: self.global.params.version,
            checksum: self.global.params.checksum(),
        };
        let mut report = AsyncReport {
            published: vec![(initial.version, initial.checksum)],
            ..AsyncReport::default()
        };
        let latest = RwLock::new(Arc::new(initial));
        let stop = AtomicBool::new(false);
        let pushed = AtomicU64::new(0);
        let observed = Mutex::new(Vec::new());
        let actor_steps = AtomicU64::new(self.actor_steps());
        let (tx, rx): (Sender<GradMsg>, Receiver<GradMsg>) = bounded(cfg.m_learners.max(1) * 2);
        let actors = std::mem::take(&mut self.actors);
        let learner_rngs = std::mem::take(&mut self.learner_rngs);
        let data = self.data.clone();
        let graph = self.graph.clone();

        let (actor_results, learner_results, apply_result) = std::thread::scope(|scope| {
            let actor_handles: Vec<_> = actors
                .into_iter()
                .map(|mut actor| {
                    let (cfg, data, graph, replay, latest, stop, actor_steps) =
                        (&cfg, &data, &graph, &replay, &latest, &stop, &actor_steps);
                    scope.spawn(move || -> Result<ActorState> {
                        while !stop.load(Ordering::Acquire) {
                            let exp = actor.step(cfg, data, graph, || latest.read().params.clone())?;
                            replay.lock().push(exp);
                            actor_steps.fetch_add(1, Ordering::AcqRel);
                        }
                        Ok(actor)
                    })
                })
                .collect();
            let learner_handles: Vec<_> = learner_rngs
                .into_iter()
                .enumerate()
                .map(|(id, mut rng)| {
                    let tx = tx.clone();
                    let (cfg, replay, latest, stop, pushed, observed) = (&cfg, &replay, &latest, &stop, &pushed, &observed);
                    scope.spawn(move || -> Result<ChaCha8Rng> {
                        let warmup = cfg.warmup();
                        while !stop.load(Ordering::Acquire) {
                            let batch = {
                                let r = replay.lock();
                                if r.len() < warmup {
                                    None
                                } else {
                                    Some(r.sample(cfg.batch_size, &mut rng)?)
                                }
                            };
                            let Some(batch) = batch else {
                                std::thread::sleep(Duration::from_millis(2));
                                continue;
                            };
                            let snap = latest.read().clone();
                            observed.lock().push((id, snap.version, snap.params.checksum()));
                            let out = dqn_loss_and_grads(&batch, &snap.params, &snap.target, cfg.gamma)?;
                            tx.send(GradMsg {
                                version: snap.version,
                                loss: out.loss,
                                grads: out.grads,
                                bn_stats: out.bn_stats,
                            })
                            .map_err(|_| Error::ChannelClosed)?;
                            pushed.fetch_add(1, Ordering::AcqRel);
                        }
                        Ok(rng)
                    })
                })
                .collect();
            drop(tx);

            let apply_result = (|| -> Result<()> {
                let mut stopping = false;
                loop {
                    if !stopping {
                        let out_of_time = deadline.is_some_and(|d| Instant::now() >= d);
                        if out_of_time || self.learner_steps >= cfg.total_learner_steps {
                            stop.store(true, Ordering::Release);
                            stopping = true;
                        }
                    }
                    let msg = match rx.recv_timeout(Duration::from_millis(20)) {
                        Ok(m) => m,
                        Err(crossbeam_channel::RecvTimeoutError::Timeout) => continue,
                        Err(crossbeam_channel::RecvTimeoutError::Disconnected) => break,
                    };
                    let staleness = self.global.params.version.saturating_sub(msg.version);
                    report.max_staleness_seen = report.max_staleness_seen.max(staleness);
                    if cfg.max_staleness.is_some_and(|m| staleness > m) {
                        self.dropped_stale += 1;
                        report.dropped_stale += 1;
                        continue;
                    }
                    let prev_target_syncs = self.global.target_syncs;
                    let version = self.global.apply(&msg.grads, &msg.bn_stats);
                    self.learner_steps += 1;
                    report.applied += 1;
                    let target = if self.global.target_syncs != prev_target_syncs {
                        Arc::new(self.global.target.clone())
                    } else {
                        latest.read().target.clone()
                    };
                    let snap = ParamSnapshot {
                        params: Arc::new(self.global.params.clone()),
                        target,
                        version,
                        checksum: self.global.params.checksum(),
                    };
                    report.published.push((snap.version, snap.checksum));
                    *latest.write() = Arc::new(snap);
                    let replay_len = replay.lock().len();
                    self.loss_sum += msg.loss;
                    self.loss_count += 1;
                    if self.learner_steps % cfg.metrics_period == 0 {
                        let rec = MetricsRecord {
                            wall_time: started.elapsed().as_secs_f64(),
                            learner_step: self.learner_steps,
                            loss: self.loss_sum / self.loss_count as f64,
                            eps: cfg.epsilon.value(actor_steps.load(Ordering::Acquire) / cfg.n_actors as u64),
                            actor_steps: actor_steps.load(Ordering::Acquire),
                            replay_size: replay_len,
                            version,
                            eval: None,
                        };
                        sink.record(&rec)?;
                        self.metrics_emitted += 1;
                        self.loss_sum = 0.0;
                        self.loss_count = 0;
                    }
                }
                Ok(())
            })();
            if apply_result.is_err() {
                stop.store(true, Ordering::Release);
                // drain so blocked learners can exit
                while rx.recv().is_ok() {}
            }
            let actor_results: Vec<_> = actor_handles.into_iter().map(|h| h.join()).collect();
            let learner_results: Vec<_> = learner_handles.into_iter().map(|h| h.join()).collect();
            (actor_results, learner_results, apply_result)
        });

        self.replay = replay.into_inner();
        let mut first_err = apply_result.err();
        for r in actor_results {
            match r {
                Ok(Ok(a)) => self.actors.push(a),
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(Error::ChannelClosed);
                }
            }
        }
        for r in learner_results {
            match r {
                Ok(Ok(rng)) => self.learner_rngs.push(rng),
                Ok(Err(Error::ChannelClosed)) => {}
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(Error::ChannelClosed);
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        report.pushed = pushed.load(Ordering::Acquire);
        report.observed = observed.into_inner();
        report.actor_steps = self.actor_steps();
        report.wall_secs = started.elapsed().as_secs_f64();
        Ok(report)
    }

    pub fn to_checkpoint(&self) -> CheckpointFile {
        let mut params = Vec::new();
        push_params(&mut params, "online", &self.global.params);
        push_params(&mut params, "target", &self.global.target);
        for a in &self.actors {
            push_params(&mut params, &format!("actor{}", a.id), &a.snapshot);
        }
        let mut optimizer = vec![TensorBlock::new("adam/step", vec![1], vec![self.global.adam.step as f64])];
        let names = self.global.params.trainable_names();
        let shapes = self.global.params.trainable_shapes();
        for (i, (n, s)) in names.iter().zip(&shapes).enumerate() {
            optimizer.push(TensorBlock::new(format!("adam/m/{n}"), s.clone(), self.global.adam.m[i].clone()));
        }
        for (i, (n, s)) in names.iter().zip(&shapes).enumerate() {
            optimizer.push(TensorBlock::new(format!("adam/v/{n}"), s.clone(), self.global.adam.v[i].clone()));
        }
        let mut blobs = Vec::new();
        for a in &self.actors {
            blobs.push((format!("rng/actor-{}", a.id), rng_state(&a.rng)));
        }
        for (i, r) in self.learner_rngs.iter().enumerate() {
            blobs.push((format!("rng/learner-{i}"), rng_state(r)));
        }
        let mut counters = BlobWriter::default();
        counters.u64(self.data.len() as u64);
        counters.u64(self.learner_steps);
        counters.u64(self.dropped_stale);
        counters.u64(self.metrics_emitted);
        counters.f64(self.loss_sum);
        counters.u64(self.loss_count);
        counters.u64(self.global.target_syncs);
        counters.u64(self.actors.len() as u64);
        counters.u64(self.learner_rngs.len() as u64);
        blobs.push(("state/counters".into(), counters.bytes));
        for a in &self.actors {
            let mut w = BlobWriter::default();
            w.u64(a.steps);
            w.u64(a.episodes);
            w.u64(a.since_fetch);
            w.u64(a.t as u64);
            match &a.episode {
                Some(e) => {
                    w.u8(1);
                    write_source(&mut w, e.source);
                }
                None => w.u8(0),
            }
            write_positions(&mut w, &a.positions);
            blobs.push((format!("state/actor-{}", a.id), w.bytes));
        }
        let (items, next) = self.replay.raw_parts();
        let mut w = BlobWriter::default();
        w.u64(self.replay.capacity() as u64);
        w.u64(next as u64);
        w.u64(items.len() as u64);
        for e in items {
            write_source(&mut w, e.volume.source);
            write_positions(&mut w, &e.positions_t);
            for a in &e.actions {
                w.u8(a.index() as u8);
            }
            for r in &e.rewards {
                w.f64(*r);
            }
            write_positions(&mut w, &e.positions_t1);
            w.u8(e.terminal as u8);
        }
        blobs.push(("state/replay".into(), w.bytes));
        CheckpointFile {
            config_text: self.config.to_text(),
            params,
            optimizer,
            blobs,
        }
    }

    pub fn save_checkpoint(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Restores the full training state. `data` must be the set the run was started with.
    pub fn from_checkpoint(ckpt: &CheckpointFile, data: Arc<Dataset>) -> Result<Self> {
        let config = TrainConfig::from_text(&ckpt.config_text)?;
        let mut t = Trainer::new(config, data)?;
        let net = t.config.net.clone();
        let online = params_from_checkpoint(ckpt, "online", &net)?;
        let target = params_from_checkpoint(ckpt, "target", &net)?;
        let step = ckpt.optimizer_block("adam/step")?.data.first().copied().unwrap_or(0.0) as u64;
        let names = online.trainable_names();
        let lens: Vec<usize> = online.trainable().iter().map(|x| x.len()).collect();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (n, len) in names.iter().zip(&lens) {
            for (dst, kind) in [(&mut m, "m"), (&mut v, "v")] {
                let b = ckpt.optimizer_block(&format!("adam/{kind}/{n}"))?;
                if b.data.len() != *len {
                    return Err(Error::Format(format!("optimizer block adam/{kind}/{n} has wrong size")));
                }
                dst.push(b.data.clone());
            }
        }
        t.global.params = online;
        t.global.target = target;
        t.global.adam = AdamState { step, m, v };

        let mut c = BlobReader::new(ckpt.blob("state/counters")?);
        let data_len = c.u64()? as usize;
        if data_len != t.data.len() {
            return Err(Error::Format(format!(
                "checkpoint was trained on {data_len} volumes, {} supplied",
                t.data.len()
            )));
        }
        t.learner_steps = c.u64()?;
        t.dropped_stale = c.u64()?;
        t.metrics_emitted = c.u64()?;
        t.loss_sum = c.f64()?;
        t.loss_count = c.u64()?;
        t.global.target_syncs = c.u64()?;
        let n_actors = c.u64()? as usize;
        let n_learners = c.u64()? as usize;
        c.finish()?;

        let data = t.data.clone();
        let mut cache = EpisodeCache {
            data: &data,
            built: HashMap::new(),
        };
        let mut actors = Vec::with_capacity(n_actors);
        for id in 0..n_actors {
            let snapshot = Arc::new(params_from_checkpoint(ckpt, &format!("actor{id}"), &net)?);
            let mut a = ActorState::new(id, t.config.seed, snapshot);
            a.rng = rng_from_state(ckpt.blob(&format!("rng/actor-{id}"))?)?;
            let mut r = BlobReader::new(ckpt.blob(&format!("state/actor-{id}"))?);
            a.steps = r.u64()?;
            a.episodes = r.u64()?;
            a.since_fetch = r.u64()?;
            a.t = r.u64()? as usize;
            if r.u8()? == 1 {
                a.episode = Some(cache.get(read_source(&mut r)?)?);
            }
            a.positions = read_positions(&mut r)?;
            r.finish()?;
            actors.push(a);
        }
        t.actors = actors;
        t.learner_rngs = (0..n_learners)
            .map(|i| rng_from_state(ckpt.blob(&format!("rng/learner-{i}"))?))
            .collect::<Result<_>>()?;

        let mut r = BlobReader::new(ckpt.blob("state/replay")?);
        let capacity = r.u64()? as usize;
        let next = r.u64()? as usize;
        let count = r.u64()? as usize;
        let mut items = Vec::with_capacity(count.min(capacity));
        for _ in 0..count {
            let volume = cache.get(read_source(&mut r)?)?;
            let positions_t = read_positions(&mut r)?;
            let mut actions = [Action::PlusX; NUM_LANDMARKS];
            for a in &mut actions {
                *a = Action::from_index(r.u8()? as usize).ok_or_else(|| Error::Format("bad action id".into()))?;
            }
            let mut rewards = [0.0; NUM_LANDMARKS];
            for x in &mut rewards {
                *x = r.f64()?;
            }
            let positions_t1 = read_positions(&mut r)?;
            let terminal = r.u8()? == 1;
            items.push(Experience {
                volume,
                positions_t,
                actions,
                rewards,
                positions_t1,
                terminal,
            });
        }
        r.finish()?;
        t.replay = ReplayBuffer::from_raw_parts(capacity, items, next)?;
        Ok(t)
    }

    pub fn load_checkpoint(path: impl AsRef<std::path::Path>, data: Arc<Dataset>) -> Result<Self> {
        Self::from_checkpoint(&CheckpointFile::load(path)?, data)
    }
}

fn push_params(out: &mut Vec<TensorBlock>, prefix: &str, p: &QNetworkParams) {
    out.push(TensorBlock::new(format!("{prefix}/version"), vec![1], vec![p.version as f64]));
    for (name, shape, data) in p.state_tensors() {
        out.push(TensorBlock::new(format!("{prefix}/{name}"), shape, data.to_vec()));
    }
}

/// Reads the parameter set stored under `prefix`, checking every block against `net`.
pub fn params_from_checkpoint(ckpt: &CheckpointFile, prefix: &str, net: &NetConfig) -> Result<QNetworkParams> {
    let mut p = QNetworkParams::init(net, 0)?;
    let specs: Vec<(String, Vec<usize>)> = p.state_tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    let expected = specs.len() + 1;
    let present = ckpt.params.iter().filter(|b| b.name.starts_with(&format!("{prefix}/"))).count();
    if present != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {present} blocks under {prefix}/, architecture {} needs {expected}",
            net.describe()
        )));
    }
    for ((name, shape), dst) in specs.iter().zip(p.state_tensors_mut()) {
        let b = ckpt.param(&format!("{prefix}/{name}"))?;
        if &b.shape != shape {
            return Err(Error::Format(format!(
                "block {prefix}/{name} has shape {:?}, architecture {} needs {shape:?}",
                b.shape,
                net.describe()
            )));
        }
        dst.copy_from_slice(&b.data);
    }
    p.version = ckpt.param(&format!("{prefix}/version"))?.data.first().copied().unwrap_or(0.0) as u64;
    Ok(p)
}

/// Online parameters of a checkpoint, using the architecture recorded in it.
pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<QNetworkParams> {
    let ckpt = CheckpointFile::load(path)?;
    let cfg = TrainConfig::from_text(&ckpt.config_text).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    params_from_checkpoint(&ckpt, "online", &cfg.net)
}

fn write_source(w: &mut BlobWriter, s: VolumeSource) {
    w.u64(s.index as u64);
    match s.augment_seed {
        Some(seed) => {
            w.u8(1);
            w.u64(seed);
        }
        None => w.u8(0),
    }
}

fn read_source(r: &mut BlobReader) -> Result<VolumeSource> {
    let index = r.u64()? as usize;
    let augment_seed = if r.u8()? == 1 { Some(r.u64()?) } else { None };
    Ok(VolumeSource { index, augment_seed })
}

fn write_positions(w: &mut BlobWriter, p: &[Position; NUM_LANDMARKS]) {
    for q in p {
        for c in q {
            w.i64(*c);
        }
    }
}

fn read_positions(r: &mut BlobReader) -> Result<[Position; NUM_LANDMARKS]> {
    let mut out = [[0; 3]; NUM_LANDMARKS];
    for q in &mut out {
        for c in q.iter_mut() {
            *c = r.i64()?;
        }
    }
    Ok(out)
}

//! Single-process DQN machinery: experience replay, ε-greedy selection,
//! TD targets against a frozen network and the summed multi-agent loss.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{backward, q_forward, Gradients, QNetworkParams};
use crate::nn::ops::BnBatchStats;
use crate::pose_graph::NUM_LANDMARKS;
use crate::volume::{extract_patch_into, Action, LabeledVolume, Position, NUM_ACTIONS};

pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_BATCH_SIZE: usize = 3;
pub const DEFAULT_TARGET_SYNC: u64 = 2500;

/// Where an episode's volume came from, so it can be rebuilt on resume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VolumeSource {
    pub index: usize,
    pub augment_seed: Option<u64>,
}

#[derive(Debug)]
pub struct EpisodeVolume {
    pub source: VolumeSource,
    pub volume: Arc<LabeledVolume>,
}

/// One joint transition of all agents. Observation patches are crops of the
/// episode volume at the stored positions and are materialized on demand.
#[derive(Debug, Clone)]
pub struct Experience {
    pub volume: Arc<EpisodeVolume>,
    pub positions_t: [Position; NUM_LANDMARKS],
    pub actions: [Action; NUM_LANDMARKS],
    pub rewards: [f64; NUM_LANDMARKS],
    pub positions_t1: [Position; NUM_LANDMARKS],
    pub terminal: bool,
}

fn write_patches(v: &LabeledVolume, positions: &[Position; NUM_LANDMARKS], side: usize, out: &mut [f64]) {
    let len = side.pow(3);
    for (k, p) in positions.iter().enumerate() {
        extract_patch_into(v, *p, side, &mut out[k * len..(k + 1) * len]);
    }
}

/// Stacks the 15 observation patches of every position set into one buffer.
pub fn stack_patches(v: &LabeledVolume, position_sets: &[[Position; NUM_LANDMARKS]], side: usize) -> Vec<f64> {
    let per = NUM_LANDMARKS * side.pow(3);
    let mut out = vec![0.0; position_sets.len() * per];
    for (i, ps) in position_sets.iter().enumerate() {
        write_patches(v, ps, side, &mut out[i * per..(i + 1) * per]);
    }
    out
}

impl Experience {
    pub fn patches_t(&self, side: usize) -> Vec<f64> {
        stack_patches(&self.volume.volume, &[self.positions_t], side)
    }

    pub fn patches_t1(&self, side: usize) -> Vec<f64> {
        stack_patches(&self.volume.volume, &[self.positions_t1], side)
    }
}

fn batch_patches(batch: &[Experience], side: usize, next: bool) -> Vec<f64> {
    let per = NUM_LANDMARKS * side.pow(3);
    let mut out = vec![0.0; batch.len() * per];
    for (i, e) in batch.iter().enumerate() {
        let pos = if next { &e.positions_t1 } else { &e.positions_t };
        write_patches(&e.volume.volume, pos, side, &mut out[i * per..(i + 1) * per]);
    }
    out
}

/// Fixed-capacity ring; the oldest experience is overwritten when full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, exp: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(exp);
        } else {
            self.items[self.next] = exp;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Experience>> {
        if self.items.len() < batch_size || self.items.is_empty() {
            return Err(Error::BufferTooSmall {
                size: self.items.len(),
                requested: batch_size,
            });
        }
        Ok((0..batch_size).map(|_| self.items[rng.gen_range(0..self.items.len())].clone()).collect())
    }

    /// Storage order and the slot the next push writes, for exact snapshots.
    pub fn raw_parts(&self) -> (&[Experience], usize) {
        (&self.items, self.next)
    }

    pub fn from_raw_parts(capacity: usize, items: Vec<Experience>, next: usize) -> Result<Self> {
        if capacity == 0 || items.len() > capacity || next >= capacity || (items.len() < capacity && next != items.len() % capacity) {
            return Err(Error::Format(format!(
                "inconsistent replay state: capacity {capacity}, {} items, next {next}",
                items.len()
            )));
        }
        Ok(ReplayBuffer { capacity, items, next })
    }

    /// Experiences from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }
}

pub fn replay_push(buf: &mut ReplayBuffer, exp: Experience) {
    buf.push(exp);
}

pub fn replay_sample<R: Rng>(buf: &ReplayBuffer, batch_size: usize, rng: &mut R) -> Result<Vec<Experience>> {
    buf.sample(batch_size, rng)
}

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.1,
            decay_steps: 50_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-agent ε-greedy over a `15 × 6` Q matrix.
pub fn select_actions<R: Rng>(q: &[f64], eps: f64, rng: &mut R) -> [Action; NUM_LANDMARKS] {
    assert_eq!(q.len(), NUM_LANDMARKS * NUM_ACTIONS);
    let mut out = [Action::PlusX; NUM_LANDMARKS];
    for (k, a) in out.iter_mut().enumerate() {
        let explore = rng.gen::<f64>() < eps;
        let idx = if explore {
            rng.gen_range(0..NUM_ACTIONS)
        } else {
            argmax(&q[k * NUM_ACTIONS..(k + 1) * NUM_ACTIONS])
        };
        *a = Action::from_index(idx).expect("action index in range");
    }
    out
}

#[inline]
pub fn td_target(reward: f64, gamma: f64, max_next_q: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * max_next_q
    }
}

/// TD targets laid out `[agent][sample]`, evaluated with the frozen network in inference mode.
pub fn td_targets(batch: &[Experience], target_params: &QNetworkParams, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let side = target_params.config.encoder.patch;
    let patches = batch_patches(batch, side, true);
    let next_q = q_forward(target_params, &patches, batch.len(), false, false)?.q;
    Ok(targets_from_next_q(batch, &next_q, gamma))
}

fn targets_from_next_q(batch: &[Experience], next_q: &[f64], gamma: f64) -> Vec<f64> {
    let b = batch.len();
    let mut y = vec![0.0; NUM_LANDMARKS * b];
    for (s, e) in batch.iter().enumerate() {
        for k in 0..NUM_LANDMARKS {
            let row = &next_q[(s * NUM_LANDMARKS + k) * NUM_ACTIONS..(s * NUM_LANDMARKS + k + 1) * NUM_ACTIONS];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            y[k * b + s] = td_target(e.rewards[k], gamma, max, e.terminal);
        }
    }
    y
}

pub struct LossOutput {
    pub loss: f64,
    pub grads: Gradients,
    pub bn_stats: Vec<BnBatchStats>,
}

/// `Σ_k mean_b (y − Q_k(s, a_k))²` with gradients through the online network only.
pub fn dqn_loss_and_grads(
    batch: &[Experience],
    params: &QNetworkParams,
    target_params: &QNetworkParams,
    gamma: f64,
) -> Result<LossOutput> {
    let targets = td_targets(batch, target_params, gamma)?;
    loss_with_targets(batch, params, &targets)
}

pub fn loss_with_targets(batch: &[Experience], params: &QNetworkParams, targets: &[f64]) -> Result<LossOutput> {
    let b = batch.len();
    let side = params.config.encoder.patch;
    let patches = batch_patches(batch, side, false);
    let fwd = q_forward(params, &patches, b, true, true)?;
    let mut d_q = vec![0.0; fwd.q.len()];
    let mut loss = 0.0;
    for (s, e) in batch.iter().enumerate() {
        for k in 0..NUM_LANDMARKS {
            let idx = (s * NUM_LANDMARKS + k) * NUM_ACTIONS + e.actions[k].index();
            let diff = targets[k * b + s] - fwd.q[idx];
            loss += diff * diff / b as f64;
            d_q[idx] = -2.0 * diff / b as f64;
        }
    }
    let grads = backward(params, &fwd, &d_q)?;
    Ok(LossOutput {
        loss,
        grads,
        bn_stats: fwd.bn_stats,
    })
}

pub fn sync_target(params: &QNetworkParams) -> QNetworkParams {
    params.clone()
}

/// Exact table standing in for the network, used to check the update rule
/// against value iteration on small MDPs.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl TabularQ {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        TabularQ {
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Gradient step on `(y − Q(s,a))²` using a frozen table for the target.
    pub fn update(&mut self, target: &TabularQ, transition: (usize, usize, f64, usize, bool), gamma: f64, lr: f64) -> f64 {
        let (s, a, r, s1, terminal) = transition;
        let y = td_target(r, gamma, target.max(s1), terminal);
        let idx = s * self.n_actions + a;
        let diff = y - self.values[idx];
        self.values[idx] += lr * 2.0 * diff;
        diff * diff
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetConfig;
    use crate::volume::{generate_phantom, initial_positions, PhantomSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode() -> Arc<EpisodeVolume> {
        let spec = PhantomSpec::default();
        Arc::new(EpisodeVolume {
            source: VolumeSource { index: 0, augment_seed: None },
            volume: Arc::new(generate_phantom(&spec, 1).unwrap()),
        })
    }

    fn exp(ep: &Arc<EpisodeVolume>, tag: f64, seed: u64) -> Experience {
        let p = initial_positions(&ep.volume, seed);
        Experience {
            volume: ep.clone(),
            positions_t: p,
            actions: [Action::PlusY; NUM_LANDMARKS],
            rewards: [tag; NUM_LANDMARKS],
            positions_t1: crate::volume::env_step(&p, &[Action::PlusY; NUM_LANDMARKS], ep.volume.dims, 1),
            terminal: false,
        }
    }

    #[test]
    fn ring_keeps_latest() {
        let ep = episode();
        let mut buf = ReplayBuffer::new(4);
        for i in 1..=6 {
            buf.push(exp(&ep, i as f64, i));
        }
        assert_eq!(buf.len(), 4);
        let tags: Vec<f64> = buf.iter_oldest_first().map(|e| e.rewards[0]).collect();
        assert_eq!(tags, vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn premature_sample_errors() {
        let ep = episode();
        let mut buf = ReplayBuffer::new(4);
        buf.push(exp(&ep, 1.0, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(DEFAULT_BATCH_SIZE, &mut rng), Err(Error::BufferTooSmall { size: 1, requested: 3 })));
    }

    #[test]
    fn greedy_selection_and_ties() {
        let mut q = vec![0.0; 90];
        q[..6].copy_from_slice(&[1.0, 5.0, 2.0, 0.0, 0.0, 0.0]);
        q[6..12].copy_from_slice(&[3.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = select_actions(&q, 0.0, &mut rng);
        assert_eq!(a[0], Action::MinusX);
        assert_eq!(a[1], Action::PlusX);
    }

    #[test]
    fn epsilon_schedule_shape() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0), 1.0);
        assert_eq!(s.value(50_000), 0.1);
        assert_eq!(s.value(1_000_000), 0.1);
        let mut prev = 2.0;
        for step in (0..60_000).step_by(997) {
            let v = s.value(step);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn td_target_arithmetic() {
        assert!((td_target(1.0, 0.9, 2.0, false) - 2.8).abs() < 1e-12);
        assert_eq!(td_target(1.0, 0.9, 2.0, true), 1.0);
        assert_eq!(td_target(0.37, 0.0, 123.0, false), 0.37);
    }

    #[test]
    fn td_targets_gamma_zero_equal_rewards() {
        let ep = episode();
        let target = QNetworkParams::init(&NetConfig::desk(), 3).unwrap();
        let batch: Vec<_> = (0..2).map(|i| exp(&ep, 0.25 * i as f64 - 0.1, i)).collect();
        let y = td_targets(&batch, &target, 0.0).unwrap();
        for k in 0..NUM_LANDMARKS {
            for s in 0..2 {
                assert_eq!(y[k * 2 + s], batch[s].rewards[k]);
            }
        }
    }

    #[test]
    fn sync_copies_and_detaches() {
        let mut p = QNetworkParams::init(&NetConfig::tiny(), 3).unwrap();
        let t = sync_target(&p);
        assert_eq!(t, p);
        p.graph[0].weights.data[0] += 1.0;
        assert_ne!(t.graph[0].weights.data[0], p.graph[0].weights.data[0]);
    }

    #[test]
    fn self_consistent_batch_has_zero_loss() {
        let ep = episode();
        let p = QNetworkParams::init(&NetConfig::desk(), 4).unwrap();
        let mut batch: Vec<_> = (0..2).map(|i| exp(&ep, 0.0, 10 + i)).collect();
        let gamma = 0.9;
        // choose rewards so every target equals the online prediction
        let y0 = td_targets(&batch, &p, gamma).unwrap();
        let patches = batch_patches(&batch, 24, false);
        let q = q_forward(&p, &patches, 2, true, false).unwrap().q;
        for (s, e) in batch.iter_mut().enumerate() {
            for k in 0..NUM_LANDMARKS {
                let qa = q[(s * NUM_LANDMARKS + k) * NUM_ACTIONS + e.actions[k].index()];
                e.rewards[k] = qa - (y0[k * 2 + s] - e.rewards[k]);
            }
        }
        let out = dqn_loss_and_grads(&batch, &p, &p, gamma).unwrap();
        assert!(out.loss < 1e-20, "loss {}", out.loss);
        assert!(out.grads.global_norm() < 1e-9);
    }

    #[test]
    fn single_entry_loss_arithmetic() {
        let ep = episode();
        let p = QNetworkParams::init(&NetConfig::desk(), 4).unwrap();
        let batch = vec![exp(&ep, 0.0, 3)];
        let patches = batch_patches(&batch, 24, false);
        let q = q_forward(&p, &patches, 1, true, false).unwrap().q;
        // targets chosen so that agent 0 has residual 2 and all others 0
        let mut targets = vec![0.0; NUM_LANDMARKS];
        for k in 0..NUM_LANDMARKS {
            targets[k] = q[k * NUM_ACTIONS + batch[0].actions[k].index()];
        }
        targets[0] += 2.0;
        let out = loss_with_targets(&batch, &p, &targets).unwrap();
        assert!((out.loss - 4.0).abs() < 1e-12);
    }
}

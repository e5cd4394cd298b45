//! Greedy inference rollouts, PCK and mean error in millimetres, repeated
//! evaluation, the β sweep driver and search-path export.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::dqn::{argmax, stack_patches};
use crate::error::{Error, Result};
use crate::geom::{to_f64, Vec3};
use crate::nn::{q_forward, QNetworkParams};
use crate::pose_graph::{Landmark, NUM_LANDMARKS};
use crate::rng::substream_seed;
use crate::trainer::{Dataset, MetricsSink, Trainer, TrainConfig};
use crate::volume::{env_step, initial_positions_with_fraction, Action, LabeledVolume, Position, NUM_ACTIONS};

pub const DEFAULT_MAX_STEPS: usize = 100;
pub const DEFAULT_THRESHOLD_MM: f64 = 10.0;
pub const DEFAULT_REPEATS: usize = 3;
pub const DEFAULT_BETAS: [f64; 4] = [0.0, 1.0, 2.0, 5.0];

/// Anything that scores the six moves of every agent.
pub trait Policy: Sync {
    /// Returns `15 × 6` action values for the joint state at `step`.
    fn q_values(&self, v: &LabeledVolume, positions: &[Position; NUM_LANDMARKS], step: usize) -> Result<Vec<f64>>;
}

impl Policy for QNetworkParams {
    fn q_values(&self, v: &LabeledVolume, positions: &[Position; NUM_LANDMARKS], _step: usize) -> Result<Vec<f64>> {
        let patches = stack_patches(v, &[*positions], self.config.encoder.patch);
        Ok(q_forward(self, &patches, 1, false, false)?.q)
    }
}

/// Scores each move by the negative distance to the ground truth it leads to.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn q_values(&self, v: &LabeledVolume, positions: &[Position; NUM_LANDMARKS], _step: usize) -> Result<Vec<f64>> {
        let mut q = vec![0.0; NUM_LANDMARKS * NUM_ACTIONS];
        for (k, p) in positions.iter().enumerate() {
            for a in Action::ALL {
                let d = a.delta();
                let moved = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
                q[k * NUM_ACTIONS + a.index()] = -crate::geom::dist(to_f64(moved), v.landmarks[k]);
            }
        }
        Ok(q)
    }
}

/// Per-agent visited positions from initialization to stop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathTrace {
    pub paths: Vec<Vec<Position>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub finals: [Position; NUM_LANDMARKS],
    pub trace: PathTrace,
    /// Step at which each agent stopped on a 2-cycle, `None` if it ran to `max_steps`.
    pub stopped_at: [Option<usize>; NUM_LANDMARKS],
}

#[inline]
fn midpoint(a: Position, b: Position) -> Position {
    let mut out = [0; 3];
    for i in 0..3 {
        out[i] = ((a[i] + b[i]) as f64 / 2.0).round() as i64;
    }
    out
}

/// Greedy rollout from seeded start positions. An agent stops once its
/// position repeats the one held two steps earlier; it then reports the
/// rounded midpoint of the oscillating pair.
pub fn run_inference(
    v: &LabeledVolume,
    policy: &dyn Policy,
    max_steps: usize,
    seed: u64,
    start_fraction: f64,
) -> Result<InferenceResult> {
    let mut positions = initial_positions_with_fraction(v, seed, start_fraction);
    let mut paths: Vec<Vec<Position>> = positions.iter().map(|p| vec![*p]).collect();
    let mut finals = positions;
    let mut stopped_at = [None; NUM_LANDMARKS];
    for step in 0..max_steps {
        if stopped_at.iter().all(Option::is_some) {
            break;
        }
        let q = policy.q_values(v, &positions, step)?;
        if q.len() != NUM_LANDMARKS * NUM_ACTIONS {
            return Err(Error::ShapeMismatch(format!("policy returned {} values", q.len())));
        }
        let mut actions = [Action::PlusX; NUM_LANDMARKS];
        for (k, a) in actions.iter_mut().enumerate() {
            *a = Action::ALL[argmax(&q[k * NUM_ACTIONS..(k + 1) * NUM_ACTIONS])];
        }
        let next = env_step(&positions, &actions, v.dims, 1);
        for k in 0..NUM_LANDMARKS {
            if stopped_at[k].is_some() {
                continue;
            }
            positions[k] = next[k];
            let path = &mut paths[k];
            path.push(next[k]);
            let n = path.len();
            if n >= 3 && path[n - 1] == path[n - 3] {
                stopped_at[k] = Some(step + 1);
                finals[k] = midpoint(path[n - 1], path[n - 2]);
            } else {
                finals[k] = next[k];
            }
        }
    }
    Ok(InferenceResult {
        finals,
        trace: PathTrace { paths },
        stopped_at,
    })
}

fn distance_mm(p: Vec3, g: Vec3, spacing: [f64; 3]) -> f64 {
    (0..3).map(|a| ((p[a] - g[a]) * spacing[a]).powi(2)).sum::<f64>().sqrt()
}

/// Per-landmark values plus the micro (all pairs) and macro (mean of landmarks) aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub per_landmark: [f64; NUM_LANDMARKS],
    pub micro: f64,
    pub macro_avg: f64,
}

fn check_counts(preds: &[[Vec3; NUM_LANDMARKS]], gts: &[[Vec3; NUM_LANDMARKS]], spacing: &[[f64; 3]]) -> Result<()> {
    if preds.len() != gts.len() || preds.len() != spacing.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions, {} ground truths, {} spacings",
            preds.len(),
            gts.len(),
            spacing.len()
        )));
    }
    Ok(())
}

fn summarize(preds: &[[Vec3; NUM_LANDMARKS]], gts: &[[Vec3; NUM_LANDMARKS]], spacing: &[[f64; 3]], f: impl Fn(f64) -> f64) -> MetricSummary {
    let mut per = [0.0; NUM_LANDMARKS];
    let mut total = 0.0;
    for ((p, g), s) in preds.iter().zip(gts).zip(spacing) {
        for k in 0..NUM_LANDMARKS {
            let v = f(distance_mm(p[k], g[k], *s));
            per[k] += v;
            total += v;
        }
    }
    let n = preds.len() as f64;
    for v in &mut per {
        *v /= n;
    }
    MetricSummary {
        per_landmark: per,
        micro: total / (n * NUM_LANDMARKS as f64),
        macro_avg: per.iter().sum::<f64>() / NUM_LANDMARKS as f64,
    }
}

/// Percentage of predictions within `threshold_mm` (inclusive) of ground truth.
pub fn pck(
    preds: &[[Vec3; NUM_LANDMARKS]],
    gts: &[[Vec3; NUM_LANDMARKS]],
    spacing: &[[f64; 3]],
    threshold_mm: f64,
) -> Result<MetricSummary> {
    check_counts(preds, gts, spacing)?;
    Ok(summarize(preds, gts, spacing, |d| if d <= threshold_mm { 100.0 } else { 0.0 }))
}

/// Mean Euclidean distance in millimetres.
pub fn mean_error(preds: &[[Vec3; NUM_LANDMARKS]], gts: &[[Vec3; NUM_LANDMARKS]], spacing: &[[f64; 3]]) -> Result<MetricSummary> {
    check_counts(preds, gts, spacing)?;
    Ok(summarize(preds, gts, spacing, |d| d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatMetrics {
    pub pck: MetricSummary,
    pub error_mm: MetricSummary,
}

/// Mean and sample standard deviation (n − 1; zero for one repeat) across repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub threshold_mm: f64,
    pub n_volumes: usize,
    pub n_repeats: usize,
    pub pck: [f64; NUM_LANDMARKS],
    pub pck_sd: [f64; NUM_LANDMARKS],
    pub error_mm: [f64; NUM_LANDMARKS],
    pub error_mm_sd: [f64; NUM_LANDMARKS],
    pub pck_all: f64,
    pub pck_all_sd: f64,
    pub pck_all_macro: f64,
    pub error_mm_all: f64,
    pub error_mm_all_sd: f64,
    pub error_mm_all_macro: f64,
    pub repeats: Vec<RepeatMetrics>,
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates per-repeat predictions (`preds[r][i]` for repeat `r`, volume `i`).
pub fn evaluate_predictions(
    preds: &[Vec<[Vec3; NUM_LANDMARKS]>],
    gts: &[[Vec3; NUM_LANDMARKS]],
    spacing: &[[f64; 3]],
    threshold_mm: f64,
) -> Result<EvalResult> {
    if preds.is_empty() {
        return Err(Error::Config("need at least one repeat".into()));
    }
    let repeats: Vec<RepeatMetrics> = preds
        .iter()
        .map(|p| {
            Ok(RepeatMetrics {
                pck: pck(p, gts, spacing, threshold_mm)?,
                error_mm: mean_error(p, gts, spacing)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut out = EvalResult {
        threshold_mm,
        n_volumes: gts.len(),
        n_repeats: repeats.len(),
        pck: [0.0; NUM_LANDMARKS],
        pck_sd: [0.0; NUM_LANDMARKS],
        error_mm: [0.0; NUM_LANDMARKS],
        error_mm_sd: [0.0; NUM_LANDMARKS],
        pck_all: 0.0,
        pck_all_sd: 0.0,
        pck_all_macro: 0.0,
        error_mm_all: 0.0,
        error_mm_all_sd: 0.0,
        error_mm_all_macro: 0.0,
        repeats: Vec::new(),
    };
    for k in 0..NUM_LANDMARKS {
        (out.pck[k], out.pck_sd[k]) = mean_sd(repeats.iter().map(|r| r.pck.per_landmark[k]));
        (out.error_mm[k], out.error_mm_sd[k]) = mean_sd(repeats.iter().map(|r| r.error_mm.per_landmark[k]));
    }
    (out.pck_all, out.pck_all_sd) = mean_sd(repeats.iter().map(|r| r.pck.micro));
    out.pck_all_macro = mean_sd(repeats.iter().map(|r| r.pck.macro_avg)).0;
    (out.error_mm_all, out.error_mm_all_sd) = mean_sd(repeats.iter().map(|r| r.error_mm.micro));
    out.error_mm_all_macro = mean_sd(repeats.iter().map(|r| r.error_mm.macro_avg)).0;
    out.repeats = repeats;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub repeats: usize,
    pub max_steps: usize,
    pub threshold_mm: f64,
    pub start_fraction: f64,
    pub seed: u64,
    /// Worker threads; rollouts are independent so the result does not depend on it.
    pub threads: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            repeats: DEFAULT_REPEATS,
            max_steps: DEFAULT_MAX_STEPS,
            threshold_mm: DEFAULT_THRESHOLD_MM,
            start_fraction: crate::volume::DEFAULT_START_FRACTION,
            seed: 0,
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

/// Start-position seed of volume `i` in repeat `r`.
pub fn rollout_seed(root: u64, repeat: usize, volume: usize) -> u64 {
    substream_seed(root, &format!("eval-{repeat}/{volume}"))
}

/// Final positions for every repeat and volume.
pub fn rollout_all(volumes: &[Arc<LabeledVolume>], policy: &dyn Policy, s: &EvalSettings) -> Result<Vec<Vec<[Vec3; NUM_LANDMARKS]>>> {
    let jobs: Vec<(usize, usize)> = (0..s.repeats).flat_map(|r| (0..volumes.len()).map(move |i| (r, i))).collect();
    let threads = s.threads.clamp(1, jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<[Vec3; NUM_LANDMARKS]>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(r, i)| {
                            let res = run_inference(&volumes[i], policy, s.max_steps, rollout_seed(s.seed, r, i), s.start_fraction)?;
                            Ok(res.finals.map(to_f64))
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::ChannelClosed)))
            .collect()
    });
    let flat: Vec<[Vec3; NUM_LANDMARKS]> = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    Ok(flat.chunks(volumes.len().max(1)).map(|c| c.to_vec()).collect())
}

pub fn evaluate_dataset(volumes: &[Arc<LabeledVolume>], policy: &dyn Policy, s: &EvalSettings) -> Result<EvalResult> {
    if volumes.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    if s.repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let preds = rollout_all(volumes, policy, s)?;
    let gts: Vec<_> = volumes.iter().map(|v| v.landmarks).collect();
    let spacing: Vec<_> = volumes.iter().map(|v| v.spacing_mm).collect();
    evaluate_predictions(&preds, &gts, &spacing, s.threshold_mm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub learner_steps: u64,
    pub result: EvalResult,
}

/// Trains one model per β from the same seeds and budget, then evaluates each.
/// `on_trained` sees every finished trainer (e.g. to write checkpoints).
pub fn beta_sweep(
    train: Arc<Dataset>,
    eval: &[Arc<LabeledVolume>],
    base: &TrainConfig,
    betas: &[f64],
    settings: &EvalSettings,
    sink: &mut dyn FnMut(f64) -> Box<dyn MetricsSink>,
    on_trained: &mut dyn FnMut(f64, &Trainer) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &beta in betas {
        let mut cfg = base.clone();
        cfg.reward.beta = beta;
        let mut trainer = Trainer::new(cfg, train.clone())?;
        let mut s = sink(beta);
        trainer.run(s.as_mut())?;
        on_trained(beta, &trainer)?;
        let result = evaluate_dataset(eval, trainer.params(), settings)?;
        rows.push(SweepRow {
            beta,
            train_seed: base.seed,
            eval_seed: settings.seed,
            learner_steps: trainer.learner_steps,
            result,
        });
    }
    Ok(rows)
}

/// Human-readable table: one row per landmark plus the aggregates.
pub fn format_report(r: &EvalResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "volumes: {}  repeats: {}  PCK threshold: {} mm",
        r.n_volumes, r.n_repeats, r.threshold_mm
    );
    let _ = writeln!(s, "{:<14} {:>9} {:>7} {:>11} {:>8}", "landmark", "PCK(%)", "sd", "error(mm)", "sd");
    for k in Landmark::ALL {
        let i = k.index();
        let _ = writeln!(
            s,
            "{:<14} {:>9.2} {:>7.2} {:>11.3} {:>8.3}",
            k.name(),
            r.pck[i],
            r.pck_sd[i],
            r.error_mm[i],
            r.error_mm_sd[i]
        );
    }
    let _ = writeln!(
        s,
        "{:<14} {:>9.2} {:>7.2} {:>11.3} {:>8.3}",
        "all", r.pck_all, r.pck_all_sd, r.error_mm_all, r.error_mm_all_sd
    );
    let _ = writeln!(s, "{:<14} {:>9.2} {:>7} {:>11.3} {:>8}", "all (macro)", r.pck_all_macro, "", r.error_mm_all_macro, "");
    s
}

/// `landmark,pck,mean_mm,sd` with the standard deviation of the error across repeats.
pub fn format_csv(r: &EvalResult) -> String {
    let mut s = String::from("landmark,pck,mean_mm,sd\n");
    for k in Landmark::ALL {
        let i = k.index();
        let _ = writeln!(s, "{},{:?},{:?},{:?}", k.name(), r.pck[i], r.error_mm[i], r.error_mm_sd[i]);
    }
    let _ = writeln!(s, "all,{:?},{:?},{:?}", r.pck_all, r.error_mm_all, r.error_mm_all_sd);
    let _ = writeln!(s, "all_macro,{:?},{:?},", r.pck_all_macro, r.error_mm_all_macro);
    s
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::from("beta,train_seed,eval_seed,learner_steps,pck,pck_sd,mean_mm,mean_mm_sd\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:?},{},{},{},{:?},{:?},{:?},{:?}",
            r.beta,
            r.train_seed,
            r.eval_seed,
            r.learner_steps,
            r.result.pck_all,
            r.result.pck_all_sd,
            r.result.error_mm_all,
            r.result.error_mm_all_sd
        );
    }
    s
}

/// `landmark,step,x,y,z` rows for every visited position.
pub fn trace_csv(trace: &PathTrace) -> String {
    let mut s = String::from("landmark,step,x,y,z\n");
    for (k, path) in trace.paths.iter().enumerate() {
        let name = Landmark::from_index(k).map(|l| l.name()).unwrap_or("?");
        for (t, p) in path.iter().enumerate() {
            let _ = writeln!(s, "{name},{t},{},{},{}", p[0], p[1], p[2]);
        }
    }
    s
}

/// Projection onto the plane spanned by axes `u` and `v`, for 2-D plots.
pub fn trace_projection_csv(trace: &PathTrace, u: usize, v: usize) -> String {
    let mut s = String::from("landmark,step,u,v\n");
    for (k, path) in trace.paths.iter().enumerate() {
        let name = Landmark::from_index(k).map(|l| l.name()).unwrap_or("?");
        for (t, p) in path.iter().enumerate() {
            let _ = writeln!(s, "{name},{t},{},{}", p[u], p[v]);
        }
    }
    s
}

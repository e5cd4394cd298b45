//! Command-line front end: data generation, training, evaluation, β sweep
//! and path tracing, configured by `key = value` files with flag overrides.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_kv, parse_list, parse_value};
use crate::error::{Error, Result};
use crate::evaluation::{
    beta_sweep, evaluate_dataset, format_csv, format_report, format_sweep, run_inference, trace_csv,
    trace_projection_csv, EvalSettings, OraclePolicy, Policy, DEFAULT_BETAS,
};
use crate::rng::substream_seed;
use crate::trainer::{load_model, Dataset, JsonLinesSink, MetricsSink, TrainConfig, Trainer};
use crate::volume::{generate_phantom, load_volume, save_volume, LabeledVolume, PhantomSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

pub const MANIFEST: &str = "manifest.tsv";

/// Every setting of a run; defaults, then the config file, then flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub phantom: PhantomSpec,
    pub eval: EvalSettings,
    /// Learner steps between checkpoints written by `train`.
    pub checkpoint_period: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            phantom: PhantomSpec::default(),
            eval: EvalSettings::default(),
            checkpoint_period: 1000,
        }
    }
}

fn triple<T: std::str::FromStr + Copy>(key: &str, value: &str) -> Result<[T; 3]>
where
    T::Err: std::fmt::Display,
{
    let v: Vec<T> = parse_list(key, value)?;
    match v.len() {
        1 => Ok([v[0]; 3]),
        3 => Ok([v[0], v[1], v[2]]),
        n => Err(Error::Config(format!("{key}: expected 1 or 3 values, got {n}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.phantom;
        match key {
            "phantom_dims" => p.dims = triple(key, value)?,
            "phantom_spacing_mm" => p.spacing_mm = triple(key, value)?,
            "phantom_body_scale" => p.body_scale = parse_value(key, value)?,
            "phantom_torso_radii" => p.torso_radii = triple(key, value)?,
            "phantom_head_radii" => p.head_radii = triple(key, value)?,
            "phantom_limb_radius" => p.limb_radius = parse_value(key, value)?,
            "phantom_marker_radius" => p.marker_radius = parse_value(key, value)?,
            "phantom_noise_sd" => p.noise_sd = parse_value(key, value)?,
            "phantom_joint_angle_range" => p.joint_angle_range = parse_value(key, value)?,
            "phantom_rotation_range" => p.rotation_range = parse_value(key, value)?,
            "phantom_translation_range" => p.translation_range = parse_value(key, value)?,
            "eval_repeats" => self.eval.repeats = parse_value(key, value)?,
            "eval_max_steps" => self.eval.max_steps = parse_value(key, value)?,
            "eval_threshold_mm" => self.eval.threshold_mm = parse_value(key, value)?,
            "eval_threads" => self.eval.threads = parse_value(key, value)?,
            "checkpoint_period" => self.checkpoint_period = parse_value(key, value)?,
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    /// Defaults, overridden by `file_text`, overridden by `overrides`.
    pub fn resolve(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file_text {
            for (k, v) in parse_kv(text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.eval.seed = cfg.train.seed;
        cfg.eval.start_fraction = cfg.train.start_fraction;
        cfg.train.validate()?;
        cfg.phantom.validate()?;
        if cfg.eval.repeats == 0 || cfg.checkpoint_period == 0 {
            return Err(Error::Config("eval_repeats and checkpoint_period must be >= 1".into()));
        }
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(name = "landmark-rl", version, about = "Multi-agent DQN landmark search in 3D volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Root seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write phantom volumes and a manifest
    GenData {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Phantom config file (phantom_* keys)
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One actor, one learner, synchronous stepping
        #[arg(long)]
        deterministic: bool,
        /// Continue from a checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long = "threshold-mm")]
        threshold_mm: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Test hook: replace the network by a policy that walks to the ground truth
        #[arg(long, hide = true)]
        oracle: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate one model per β
    BetaSweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "eval-data")]
        eval_data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated β values
        #[arg(long)]
        betas: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Export the search paths of one rollout
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "max-steps")]
        max_steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::SpecInfeasible(_) => EXIT_CONFIG,
        Error::Format(_) => EXIT_FORMAT,
        _ => EXIT_RUNTIME,
    }
}

fn resolve(common: &Common, extra: Vec<(String, String)>) -> Result<RunConfig> {
    let text = match &common.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?),
        None => None,
    };
    let mut overrides = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    overrides.extend(extra);
    RunConfig::resolve(text.as_deref(), &overrides)
}

/// Reads `manifest.tsv` and loads every listed volume.
pub fn load_manifest(dir: &Path) -> Result<Vec<LabeledVolume>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Format(format!("bad manifest line {line:?}")));
        }
        out.push(load_volume(dir.join(cols[2]))?);
    }
    Ok(out)
}

pub fn cmd_gen_data(count: usize, spec: &PhantomSpec, seed: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut manifest = String::from("index\tseed\tpath\n");
    for i in 0..count {
        let s = substream_seed(seed, &format!("data/{i}"));
        let v = generate_phantom(spec, s)?;
        let name = format!("phantom_{i:05}.lsv");
        save_volume(&v, out.join(&name))?;
        manifest.push_str(&format!("{i}\t{s}\t{name}\n"));
    }
    fs::write(out.join(MANIFEST), manifest)?;
    Ok(())
}

fn metrics_file(path: &Path) -> Result<JsonLinesSink<fs::File>> {
    let f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    Ok(JsonLinesSink { out: f })
}

/// Runs `trainer` to `total` learner steps, checkpointing every `period` steps and at the end.
pub fn train_with_checkpoints(trainer: &mut Trainer, total: u64, period: u64, out: &Path, sink: &mut dyn MetricsSink) -> Result<()> {
    fs::create_dir_all(out)?;
    while trainer.learner_steps < total {
        let next = ((trainer.learner_steps / period) + 1) * period;
        trainer.config.total_learner_steps = next.min(total);
        let before = trainer.learner_steps;
        if let Some(report) = trainer.run(sink)? {
            let mut f = fs::File::create(out.join("async_report.txt"))?;
            writeln!(
                f,
                "pushed {}\napplied {}\ndropped_stale {}\npublished {}\nmax_staleness {}",
                report.pushed,
                report.applied,
                report.dropped_stale,
                report.published.len(),
                report.max_staleness_seen
            )?;
        }
        if trainer.learner_steps == before {
            break;
        }
        trainer.save_checkpoint(out.join(format!("checkpoint_{:08}.lsc", trainer.learner_steps)))?;
    }
    trainer.config.total_learner_steps = total;
    trainer.save_checkpoint(out.join("final.lsc"))?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { count, out, spec, common } => {
            let mut common = common;
            if let Some(s) = spec {
                if common.config.is_some() {
                    return Err(Error::Config("give either --spec or --config".into()));
                }
                common.config = Some(s);
            }
            let cfg = resolve(&common, Vec::new())?;
            cmd_gen_data(count, &cfg.phantom, cfg.train.seed, &out)
        }
        Command::Train {
            data,
            out,
            deterministic,
            resume,
            steps,
            common,
        } => {
            let mut extra = Vec::new();
            if deterministic {
                extra.push(("deterministic".into(), "true".into()));
            }
            if let Some(s) = steps {
                extra.push(("total_learner_steps".into(), s.to_string()));
            }
            let cfg = resolve(&common, extra)?;
            let dataset = Arc::new(Dataset::new(load_manifest(&data)?)?);
            let mut trainer = match resume {
                Some(p) => {
                    let mut t = Trainer::load_checkpoint(p, dataset)?;
                    if t.config.net != cfg.train.net {
                        return Err(Error::Config(format!(
                            "checkpoint network {} differs from configured {}",
                            t.config.net.describe(),
                            cfg.train.net.describe()
                        )));
                    }
                    t.config.max_wall_secs = cfg.train.max_wall_secs;
                    t
                }
                None => Trainer::new(cfg.train.clone(), dataset)?,
            };
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.txt"), cfg.train.to_text())?;
            let mut sink = metrics_file(&out.join("metrics.jsonl"))?;
            train_with_checkpoints(&mut trainer, cfg.train.total_learner_steps, cfg.checkpoint_period, &out, &mut sink)
        }
        Command::Eval {
            checkpoint,
            data,
            repeats,
            threshold_mm,
            out,
            oracle,
            common,
        } => {
            let mut extra = Vec::new();
            if let Some(r) = repeats {
                extra.push(("eval_repeats".into(), r.to_string()));
            }
            if let Some(t) = threshold_mm {
                extra.push(("eval_threshold_mm".into(), format!("{t:?}")));
            }
            let cfg = resolve(&common, extra)?;
            let model = load_model(&checkpoint)?;
            if model.config != cfg.train.net && common.config.is_some() {
                return Err(Error::Format(format!(
                    "checkpoint network {} differs from configured {}",
                    model.config.describe(),
                    cfg.train.net.describe()
                )));
            }
            let volumes: Vec<Arc<LabeledVolume>> = load_manifest(&data)?.into_iter().map(Arc::new).collect();
            let policy: &dyn Policy = if oracle { &OraclePolicy } else { &model };
            let result = evaluate_dataset(&volumes, policy, &cfg.eval)?;
            let report = format_report(&result);
            print!("{report}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("report.txt"), &report)?;
                fs::write(dir.join("metrics.csv"), format_csv(&result))?;
            }
            Ok(())
        }
        Command::BetaSweep {
            data,
            eval_data,
            out,
            betas,
            steps,
            common,
        } => {
            let mut extra = Vec::new();
            if let Some(s) = steps {
                extra.push(("total_learner_steps".into(), s.to_string()));
            }
            let cfg = resolve(&common, extra)?;
            let betas: Vec<f64> = match betas {
                Some(b) => parse_list("betas", &b)?,
                None => DEFAULT_BETAS.to_vec(),
            };
            if betas.is_empty() {
                return Err(Error::Config("no β values given".into()));
            }
            let train = Arc::new(Dataset::new(load_manifest(&data)?)?);
            let eval: Vec<Arc<LabeledVolume>> = load_manifest(&eval_data)?.into_iter().map(Arc::new).collect();
            fs::create_dir_all(&out)?;
            let dir_of = |b: f64| out.join(format!("beta_{b}"));
            let mut sinks = |b: f64| -> Box<dyn MetricsSink> {
                let dir = dir_of(b);
                match fs::create_dir_all(&dir).and_then(|_| {
                    fs::OpenOptions::new().create(true).append(true).open(dir.join("metrics.jsonl"))
                }) {
                    Ok(f) => Box::new(JsonLinesSink { out: f }),
                    Err(_) => Box::new(crate::trainer::NullSink),
                }
            };
            let mut save = |b: f64, t: &Trainer| -> Result<()> {
                let dir = dir_of(b);
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("config.txt"), t.config.to_text())?;
                t.save_checkpoint(dir.join("final.lsc"))
            };
            let rows = beta_sweep(train, &eval, &cfg.train, &betas, &cfg.eval, &mut sinks, &mut save)?;
            for r in &rows {
                let dir = dir_of(r.beta);
                fs::write(dir.join("report.txt"), format_report(&r.result))?;
                fs::write(dir.join("metrics.csv"), format_csv(&r.result))?;
            }
            let summary = format_sweep(&rows);
            print!("{summary}");
            fs::write(out.join("summary.csv"), summary)?;
            Ok(())
        }
        Command::Trace {
            checkpoint,
            volume,
            out,
            max_steps,
            common,
        } => {
            let mut extra = Vec::new();
            if let Some(m) = max_steps {
                extra.push(("eval_max_steps".into(), m.to_string()));
            }
            let cfg = resolve(&common, extra)?;
            let model = load_model(&checkpoint)?;
            let v = load_volume(&volume)?;
            let seed = substream_seed(cfg.train.seed, "trace");
            let res = run_inference(&v, &model, cfg.eval.max_steps, seed, cfg.eval.start_fraction)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("trace.csv"), trace_csv(&res.trace))?;
            // coronal view: lateral (x) against superior (z)
            fs::write(out.join("trace_xz.csv"), trace_projection_csv(&res.trace, 0, 2))?;
            let mut finals = String::from("landmark,x,y,z,gt_x,gt_y,gt_z\n");
            for k in crate::pose_graph::Landmark::ALL {
                let p = res.finals[k.index()];
                let g = v.landmarks[k.index()];
                finals.push_str(&format!("{},{},{},{},{:?},{:?},{:?}\n", k.name(), p[0], p[1], p[2], g[0], g[1], g[2]));
            }
            fs::write(out.join("finals.csv"), finals)?;
            Ok(())
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

//! End-to-end commands over a run directory.
//!
//! Layout of `output_dir`:
//!
//! ```text
//! config.json              copy of the config the run was trained with
//! checkpoints/best.json    parameters behind the best step reward
//! checkpoints/final.json   parameters after the last update
//! reward_curve.csv         iteration,mean_reward,best_reward
//! trajectories.jsonl       one line per collected episode
//! samples.jsonl            candidate records from `sample`
//! selected.jsonl           survivors of `select`, best first
//! selection.json           counts and near-miss diagnostics
//! metrics.csv / .json      summary table from `metrics`
//! oracle.json              scalar-grid optimum (synthetic env only)
//! ```
//!
//! Each file is written once; a command refuses to overwrite its outputs
//! unless forced.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{EnvSpec, RunConfig};
use crate::embedding::initial_state;
use crate::env::{exemplar_pair, grid_oracle, uniform_reward, Backend, BridgeBackend, GridOptimum, SyntheticEnv};
use crate::error::{Error, Result};
use crate::policy::{forward, Checkpoint, CheckpointMeta, PolicyParams, SamplingMode};
use crate::reward::{metrics_table, write_metrics_csv, MetricsRow, RewardBreakdown};
use crate::rng::{derive_seed, streams};
use crate::rollout::{FusionEnv, Trajectory};
use crate::selection::{select, CandidateRecord, NearMiss, SampleSeeds, SelectionConfig};
use crate::train::{train, write_reward_curve, CurvePoint, TrainFailure};

/// File names inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("best.json")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.json")
    }

    pub fn reward_curve(&self) -> PathBuf {
        self.root.join("reward_curve.csv")
    }

    pub fn trajectories(&self) -> PathBuf {
        self.root.join("trajectories.jsonl")
    }

    pub fn samples(&self) -> PathBuf {
        self.root.join("samples.jsonl")
    }

    pub fn selected(&self) -> PathBuf {
        self.root.join("selected.jsonl")
    }

    pub fn selection_report(&self) -> PathBuf {
        self.root.join("selection.json")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn metrics_json(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn oracle(&self) -> PathBuf {
        self.root.join("oracle.json")
    }
}

fn ensure_fresh(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::ArtifactExists(p.clone())),
        None => Ok(()),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::ArtifactNotFound(path.to_path_buf()))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    require(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

/// Opens the configured backend.
pub fn open_backend(cfg: &RunConfig) -> Result<Box<dyn Backend<f64>>> {
    let p = &cfg.pair;
    Ok(match &cfg.env {
        EnvSpec::Synthetic(s) => Box::new(SyntheticEnv::<f64>::generate(
            s,
            &p.label_1,
            &p.label_2,
            &p.prompt_template,
        )?),
        EnvSpec::Bridge(b) => Box::new(BridgeBackend::<f64>::connect(
            b.clone(),
            &p.label_1,
            &p.label_2,
            &p.prompt_template,
        )?),
    })
}

/// Backend plus exemplar sets, ready for rollouts.
pub fn fusion_env<'a>(cfg: &RunConfig, backend: &'a dyn Backend<f64>) -> Result<FusionEnv<'a, f64>> {
    let exemplars = exemplar_pair(backend, &cfg.exemplars.seeds)?;
    Ok(FusionEnv {
        encoding: cfg.policy.encoding(),
        similarity: cfg.exemplars.similarity,
        ..FusionEnv::new(backend, exemplars)
    })
}

/// Freshly initialised policy for the configured pair shape.
pub fn initial_policy(cfg: &RunConfig, backend: &dyn Backend<f64>) -> Result<PolicyParams<f64>> {
    let (rows, cols) = backend.pair().shape();
    PolicyParams::init(
        cfg.policy.encoding().input_dim(rows, cols),
        cols,
        &cfg.policy.hidden,
        derive_seed(cfg.train.master_seed, streams::POLICY_INIT),
    )
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Exact text to store as `config.json`; re-serialized config if absent.
    pub config_source: Option<String>,
    /// Keep fused embeddings inline in `trajectories.jsonl`.
    pub log_embeddings: bool,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub best_iteration: usize,
    pub best_reward: f64,
    pub final_mean_reward: f64,
    pub degenerate_batches: usize,
}

#[derive(Serialize)]
#[serde(bound = "")]
struct TrajectoryLine<'a> {
    iteration: usize,
    index: usize,
    #[serde(flatten)]
    trajectory: &'a Trajectory<f64>,
}

/// `train`: trains a policy and writes checkpoints, curve and trajectories.
///
/// When training stalls, whatever was produced is still written before the
/// error is returned.
pub fn run_train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    let paths = RunPaths::new(&cfg.output_dir);
    ensure_fresh(
        &[
            paths.config(),
            paths.best_checkpoint(),
            paths.final_checkpoint(),
            paths.reward_curve(),
            paths.trajectories(),
        ],
        opts.force,
    )?;
    let backend = open_backend(cfg)?;
    let env = FusionEnv {
        keep_embeddings: opts.log_embeddings,
        ..fusion_env(cfg, backend.as_ref())?
    };
    let initial = initial_policy(cfg, backend.as_ref())?;

    fs::create_dir_all(paths.checkpoints())?;
    let config_text = match &opts.config_source {
        Some(text) => text.clone(),
        None => serde_json::to_string_pretty(cfg)? + "\n",
    };
    fs::write(paths.config(), config_text)?;

    let mut traj_out = create(&paths.trajectories())?;
    let mut on_batch = |iteration: usize, batch: &[Trajectory<f64>]| -> Result<()> {
        for (index, trajectory) in batch.iter().enumerate() {
            serde_json::to_writer(
                &mut traj_out,
                &TrajectoryLine {
                    iteration,
                    index,
                    trajectory,
                },
            )?;
            traj_out.write_all(b"\n")?;
        }
        Ok(())
    };
    let result = train(&cfg.train, initial, &env, &cfg.episode, &mut on_batch);
    traj_out.flush()?;

    let (artifacts, error) = match result {
        Ok(a) => (a, None),
        Err(TrainFailure { error, partial }) => match partial {
            Some(a) => (*a, Some(error)),
            None => return Err(error),
        },
    };
    let hash = cfg.config_hash();
    let meta = |iteration: usize| CheckpointMeta {
        iteration,
        best_reward: artifacts.best_reward,
        config_hash: hash.clone(),
    };
    Checkpoint::new(&artifacts.best_params, meta(artifacts.best_iteration)).save(&paths.best_checkpoint())?;
    let last = artifacts.reward_curve.last().map_or(0, |p| p.iteration);
    Checkpoint::new(&artifacts.final_params, meta(last)).save(&paths.final_checkpoint())?;
    write_reward_curve(&paths.reward_curve(), &artifacts.reward_curve)?;
    if let Some(e) = error {
        return Err(e);
    }
    Ok(TrainSummary {
        iterations: cfg.train.iterations,
        best_iteration: artifacts.best_iteration,
        best_reward: artifacts.best_reward,
        final_mean_reward: artifacts.reward_curve.last().map_or(f64::NAN, |p: &CurvePoint| p.mean_reward),
        degenerate_batches: artifacts.degenerate_batches,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SampleOptions {
    /// Defaults to `checkpoints/best.json` of the run.
    pub checkpoint: Option<PathBuf>,
    /// Overrides `sample.n`.
    pub n: Option<usize>,
    /// Overrides `sample.deterministic`.
    pub deterministic: Option<bool>,
    pub force: bool,
}

/// Seeds of the `index`-th sample.
pub fn sample_seeds(master_seed: u64, index: u64) -> SampleSeeds {
    SampleSeeds {
        policy_seed: derive_seed(derive_seed(master_seed, streams::SAMPLE_POLICY), index),
        sample_seed: derive_seed(derive_seed(master_seed, streams::SAMPLE_BACKEND), index),
    }
}

/// `sample`: draws N one-step fusions from `s0` with a trained policy.
pub fn run_sample(cfg: &RunConfig, opts: &SampleOptions) -> Result<Vec<CandidateRecord<f64>>> {
    let paths = RunPaths::new(&cfg.output_dir);
    let ckpt_path = opts.checkpoint.clone().unwrap_or_else(|| paths.best_checkpoint());
    let params = Checkpoint::<f64>::load(&ckpt_path)?.params()?;
    ensure_fresh(&[paths.samples()], opts.force)?;

    let backend = open_backend(cfg)?;
    let env = fusion_env(cfg, backend.as_ref())?;
    let pair = backend.pair();
    let (rows, cols) = pair.shape();
    let expected = env.encoding.input_dim(rows, cols);
    if params.input_dim() != expected || params.action_dim() != cols {
        return Err(Error::InvalidInput(format!(
            "checkpoint {} expects input {} / action {}, run needs {} / {}",
            ckpt_path.display(),
            params.input_dim(),
            params.action_dim(),
            expected,
            cols
        )));
    }
    let summary = env.encoding.encode(&initial_state(pair)?, pair)?;
    let dist = forward(&params, &summary)?;
    let mode = if opts.deterministic.unwrap_or(cfg.sample.deterministic) {
        SamplingMode::Deterministic
    } else {
        SamplingMode::Stochastic
    };
    let alpha = cfg.episode.reward_alpha;
    let n = opts.n.unwrap_or(cfg.sample.n);
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be >= 1".into()));
    }
    let pair_id = pair.pair_id();
    let mut records = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let seeds = sample_seeds(cfg.train.master_seed, i);
        let (action, _) = dist.sample(seeds.policy_seed, mode)?;
        let fused = crate::embedding::fuse(&action, pair)?;
        let (breakdown, image_ref) = env.score(&fused, &[seeds.sample_seed], alpha)?;
        records.push(CandidateRecord {
            candidate_id: i,
            pair_id: pair_id.clone(),
            breakdown,
            image_ref: image_ref.unwrap_or_else(|| fused.content_ref()),
            action_used: Some(action),
            seeds,
        });
    }
    write_jsonl(&paths.samples(), &records)?;
    Ok(records)
}

#[derive(Debug, Clone, Default)]
pub struct SelectOptions {
    pub tau_presence: Option<f64>,
    pub tau_balance: Option<f64>,
    pub top_k: Option<usize>,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub config: SelectionConfig,
    pub n_selected: usize,
    pub diagnostics: NearMiss,
}

/// `select`: filters and ranks `samples.jsonl`.
///
/// An empty selection still writes (empty) `selected.jsonl` and the report;
/// callers decide how to surface it.
pub fn run_select(cfg: &RunConfig, opts: &SelectOptions) -> Result<(Vec<CandidateRecord<f64>>, SelectionReport)> {
    let paths = RunPaths::new(&cfg.output_dir);
    let records: Vec<CandidateRecord<f64>> = read_jsonl(&paths.samples())?;
    ensure_fresh(&[paths.selected(), paths.selection_report()], opts.force)?;
    let sel = SelectionConfig {
        tau_presence: opts.tau_presence.unwrap_or(cfg.selection.tau_presence),
        tau_balance: opts.tau_balance.unwrap_or(cfg.selection.tau_balance),
        top_k: opts.top_k.unwrap_or(cfg.selection.top_k),
    };
    let outcome = select(&records, &sel)?;
    let report = SelectionReport {
        config: sel,
        n_selected: outcome.selected.len(),
        diagnostics: outcome.diagnostics,
    };
    write_jsonl(&paths.selected(), &outcome.selected)?;
    write_json(&paths.selection_report(), &report)?;
    Ok((outcome.selected, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricsSource {
    /// Every generated candidate.
    #[default]
    Samples,
    /// Only the selected candidates.
    Selected,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsOptions {
    pub source: MetricsSource,
    /// Overrides `metrics.per_pair_mean`.
    pub per_pair_mean: Option<bool>,
    pub force: bool,
}

/// `metrics`: avg-sim / balance / mean-reward table.
pub fn run_metrics(cfg: &RunConfig, opts: &MetricsOptions) -> Result<Vec<MetricsRow>> {
    let paths = RunPaths::new(&cfg.output_dir);
    let input = match opts.source {
        MetricsSource::Samples => paths.samples(),
        MetricsSource::Selected => paths.selected(),
    };
    let records: Vec<CandidateRecord<f64>> = read_jsonl(&input)?;
    ensure_fresh(&[paths.metrics_csv(), paths.metrics_json()], opts.force)?;
    let rows = metrics_table(&records, opts.per_pair_mean.unwrap_or(cfg.metrics.per_pair_mean))?;
    write_metrics_csv(&paths.metrics_csv(), &rows)?;
    write_json(&paths.metrics_json(), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub alpha: f64,
    #[serde(flatten)]
    pub optimum: GridOptimum,
    /// Reward of the all-0.5 action.
    pub uniform_half: RewardBreakdown<f64>,
}

/// `grid-oracle`: best scalar-λ action on a noiseless synthetic env.
pub fn run_grid_oracle(cfg: &RunConfig, resolution: usize, force: bool) -> Result<OracleReport> {
    let EnvSpec::Synthetic(synthetic) = &cfg.env else {
        return Err(Error::config("env", "grid-oracle needs the synthetic env"));
    };
    let paths = RunPaths::new(&cfg.output_dir);
    ensure_fresh(&[paths.oracle()], force)?;
    let p = &cfg.pair;
    let env = SyntheticEnv::<f64>::generate(synthetic, &p.label_1, &p.label_2, &p.prompt_template)?;
    let exemplars = exemplar_pair(&env, &cfg.exemplars.seeds)?;
    let ex = (&exemplars.0, &exemplars.1);
    let alpha = cfg.episode.reward_alpha;
    let report = OracleReport {
        alpha,
        optimum: grid_oracle(&env, ex, alpha, resolution)?,
        uniform_half: uniform_reward(&env, ex, alpha, 0.5)?,
    };
    write_json(&paths.oracle(), &report)?;
    Ok(report)
}

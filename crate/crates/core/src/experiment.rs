//! Batch experiments: a TOML run config, episode fan-out across seeds and
//! the files a run leaves behind (JSONL traces, summary CSV, manifest).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsl::{parse_model, DslError};
use crate::envs::acc::{AccEnv, AccEnvConfig};
use crate::envs::footnote::{FootnoteEnv, FootnoteEnvConfig};
use crate::envs::hier::{HierEnv, HierEnvConfig};
use crate::envs::{actions_of, EnvError, Task};
use crate::monitors::MonitoredModel;
use crate::par::{derive_seed, map_indexed, Execution};
use crate::rl::{Binning, FirstChooser, QParams, QTable, RlError, UniformChooser};
use crate::runtime::{
    active_mu_learn, hierarchical_mu_learn, mu_learn, ActiveConfig, Environment, Halt, Learner, LearningTrace,
    RuntimeError,
};
use crate::semantics::{Discretization, Effect, SemanticsError, State};
use crate::vpmu::{ModelUpdate, VpmuError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("config syntax: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("model file {path}: {source}")]
    Model { path: PathBuf, source: DslError },
    #[error("update `{op}` on {model}: {source}")]
    Update {
        op: &'static str,
        model: String,
        source: VpmuError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learner(#[from] RlError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("trace line {line}: {msg}")]
    Trace { line: usize, msg: String },
}

impl ExperimentError {
    /// Whether this is a problem with files or configuration rather than
    /// with the models or the run itself.
    pub fn is_setup(&self) -> bool {
        matches!(
            self,
            ExperimentError::Io { .. }
                | ExperimentError::Config(_)
                | ExperimentError::Toml(_)
                | ExperimentError::Env(EnvError::Config(_))
                | ExperimentError::Learner(_)
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Mu,
    ActiveMu,
    Hierarchical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Acc(AccEnvConfig),
    Hierarchical(HierEnvConfig),
    Footnote(FootnoteEnvConfig),
}

fn default_lr() -> f64 {
    QParams::default().learning_rate
}
fn default_discount() -> f64 {
    QParams::default().discount
}
fn default_epsilon() -> f64 {
    QParams::default().epsilon
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerConfig {
    Q {
        #[serde(default = "default_lr")]
        learning_rate: f64,
        #[serde(default = "default_discount")]
        discount: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        /// Bin width per state variable.
        #[serde(default)]
        bins: BTreeMap<String, f64>,
    },
    #[default]
    Uniform,
    First,
}

impl LearnerConfig {
    pub fn build(&self) -> Result<Box<dyn Learner>, RlError> {
        Ok(match self {
            LearnerConfig::Q {
                learning_rate,
                discount,
                epsilon,
                bins,
            } => Box::new(QTable::new(
                QParams {
                    learning_rate: *learning_rate,
                    discount: *discount,
                    epsilon: *epsilon,
                },
                Binning {
                    widths: bins.iter().map(|(k, v)| (k.clone(), *v)).collect(),
                },
            )?),
            LearnerConfig::Uniform => Box::new(UniformChooser),
            LearnerConfig::First => Box::new(FirstChooser),
        })
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub er: Option<f64>,
    pub episodes: usize,
    pub step_limit: usize,
    #[serde(default)]
    pub seed: u64,
    /// Where results go; `out/<name>` next to the config when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Declares that the model set contains a model accurate for the
    /// environment, so any safety violation fails the run.
    #[serde(default = "default_true")]
    pub accurate_model_present: bool,
    /// Carry one learner across episodes. Forces sequential execution.
    #[serde(default)]
    pub shared_learner: bool,
    #[serde(default)]
    pub execution: Option<Execution>,
    /// Model files replacing the environment's own model set.
    #[serde(default)]
    pub models: Vec<PathBuf>,
    /// Updates applied in order to every model file.
    #[serde(default)]
    pub updates: Vec<ModelUpdate>,
    /// Grids for nondeterministic assignments in model files.
    #[serde(default)]
    pub discretization: BTreeMap<String, Vec<f64>>,
    pub env: EnvConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ExperimentError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<RunConfig, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut cfg.models {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        let out = cfg.output.take().unwrap_or_else(|| Path::new("out").join(&cfg.name));
        cfg.output = Some(if out.is_relative() { base.join(out) } else { out });
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        match (self.algorithm, self.er) {
            (Algorithm::Mu, Some(_)) => return bad("er is only meaningful for active algorithms".into()),
            (Algorithm::ActiveMu | Algorithm::Hierarchical, None) => {
                return bad("er is required for active algorithms".into())
            }
            (_, Some(er)) if !(er > 0.0 && er < 1.0) => return bad(format!("er must lie in (0, 1), got {er}")),
            _ => {}
        }
        let hier_env = matches!(self.env, EnvConfig::Hierarchical(_));
        if hier_env != (self.algorithm == Algorithm::Hierarchical) {
            return bad("the hierarchical algorithm goes with the hierarchical environment, and only there".into());
        }
        if hier_env && !self.models.is_empty() {
            return bad("model files cannot replace the subtask model sets".into());
        }
        if !self.updates.is_empty() && self.models.is_empty() {
            return bad("updates need model files to act on".into());
        }
        Ok(())
    }

    pub fn execution(&self) -> Execution {
        if self.shared_learner {
            Execution::Sequential
        } else {
            self.execution.unwrap_or_default()
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| Path::new("out").join(&self.name))
    }
}

/// A model file and the digest of its bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// A model used in the run and the digest of its printed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHash {
    pub name: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A config with its task built and ready to run.
pub struct Prepared {
    pub config: RunConfig,
    pub task: Task,
    pub files: Vec<FileHash>,
}

impl Prepared {
    pub fn new(config: RunConfig) -> Result<Prepared, ExperimentError> {
        config.validate()?;
        let mut task = match &config.env {
            EnvConfig::Acc(c) => c.task()?,
            EnvConfig::Hierarchical(c) => c.task()?,
            EnvConfig::Footnote(c) => c.task()?,
        };
        let mut files = Vec::new();
        if !config.models.is_empty() {
            let mut disc = Discretization::new();
            for (v, g) in &config.discretization {
                disc = disc.with_grid(v.clone(), g.clone());
            }
            let mut models = Vec::new();
            for path in &config.models {
                let bytes = fs::read(path).map_err(io_err(path))?;
                files.push(FileHash {
                    path: path.display().to_string(),
                    sha256: sha256_hex(&bytes),
                });
                let text = String::from_utf8_lossy(&bytes);
                let mut m = parse_model(&text).map_err(|source| ExperimentError::Model {
                    path: path.clone(),
                    source,
                })?;
                for u in &config.updates {
                    let name = m.name.clone();
                    m = u.apply(&m).map_err(|source| ExperimentError::Update {
                        op: u.name(),
                        model: name.clone(),
                        source,
                    })?;
                    m.name = name;
                }
                models.push(MonitoredModel::new(m).with_discretization(disc.clone()));
            }
            task.actions = actions_of(&models)?;
            task.subtasks[0].models = models;
        }
        Ok(Prepared { config, task, files })
    }

    pub fn model_hashes(&self) -> Vec<ModelHash> {
        self.task
            .subtasks
            .iter()
            .flat_map(|t| &t.models)
            .map(|m| ModelHash {
                name: m.name().to_string(),
                sha256: sha256_hex(m.model.to_string().as_bytes()),
            })
            .collect()
    }

    fn environment(&self) -> Box<dyn Environment> {
        match &self.config.env {
            EnvConfig::Acc(c) => Box::new(AccEnv::new(c.clone(), &self.task)),
            EnvConfig::Hierarchical(c) => Box::new(HierEnv::new(c.clone())),
            EnvConfig::Footnote(c) => Box::new(FootnoteEnv::new(c.clone())),
        }
    }

    fn episode(
        &self,
        index: usize,
        env: &mut dyn Environment,
        learner: &mut dyn Learner,
    ) -> Result<EpisodeRecord, ExperimentError> {
        let cfg = &self.config;
        let seed = derive_seed(cfg.seed, index as u64);
        let task = &self.task;
        let trace = match cfg.algorithm {
            Algorithm::Mu => mu_learn(task.models(), &task.actions, env, learner, cfg.step_limit, seed)?,
            Algorithm::ActiveMu => {
                let active = ActiveConfig::new(cfg.er.unwrap_or_default())?;
                active_mu_learn(task.models(), &task.actions, env, learner, active, cfg.step_limit, seed)?
            }
            Algorithm::Hierarchical => {
                let active = ActiveConfig::new(cfg.er.unwrap_or_default())?;
                hierarchical_mu_learn(
                    &task.subtasks,
                    &task.actions,
                    env,
                    learner,
                    active,
                    cfg.step_limit,
                    seed,
                )?
            }
        };
        Ok(EpisodeRecord {
            index,
            accurate: env.accurate_models(),
            trace,
        })
    }

    /// Runs every episode. Independent learners fan out across seeds; a
    /// shared learner runs the episodes in order.
    pub fn run(&self) -> Result<Vec<EpisodeRecord>, ExperimentError> {
        let n = self.config.episodes;
        if self.config.shared_learner {
            let mut learner = self.config.learner.build()?;
            let mut env = self.environment();
            return (0..n)
                .map(|i| self.episode(i, env.as_mut(), learner.as_mut()))
                .collect();
        }
        self.config.learner.build()?;
        map_indexed(n, self.config.execution(), |i| {
            let mut learner = self.config.learner.build()?;
            let mut env = self.environment();
            self.episode(i, env.as_mut(), learner.as_mut())
        })
        .into_iter()
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub index: usize,
    /// Models the environment reported as exact for this episode.
    pub accurate: Vec<String>,
    pub trace: LearningTrace,
}

impl EpisodeRecord {
    /// Whether some accurate model is feasible at every step. `None` when
    /// the environment names no accurate model.
    pub fn accurate_retained(&self) -> Option<bool> {
        if self.accurate.is_empty() {
            return None;
        }
        Some(
            self.trace
                .feasible_sets
                .iter()
                .all(|fs| fs.iter().any(|n| self.accurate.contains(n))),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub seed: u64,
    pub cumulative_reward: f64,
    pub violations: usize,
    pub steps: usize,
    pub final_feasible: usize,
    pub steps_to_singleton: Option<usize>,
    pub resets: usize,
    pub halted: Halt,
    pub degenerate: bool,
    pub accurate_retained: Option<bool>,
}

impl EpisodeSummary {
    pub fn of(r: &EpisodeRecord) -> EpisodeSummary {
        let t = &r.trace;
        EpisodeSummary {
            episode: r.index,
            seed: t.seed,
            cumulative_reward: t.total_reward(),
            violations: t.violation_count(),
            steps: t.steps(),
            final_feasible: t.final_feasible().len(),
            steps_to_singleton: t.steps_to_singleton(),
            resets: t.resets.len(),
            halted: t.halted,
            degenerate: t.degenerate,
            accurate_retained: r.accurate_retained(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Episode {
        episode: usize,
        seed: u64,
        halted: Halt,
        degenerate: bool,
        accurate: Vec<String>,
        resets: Vec<usize>,
    },
    Step {
        k: usize,
        state: State,
        feasible: Vec<String>,
        violation: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subtask: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        action: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        effect: Option<Effect>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward: Option<f64>,
    },
}

/// One header line, then one line per visited state carrying the action
/// taken there and its reward.
pub fn trace_to_jsonl(r: &EpisodeRecord) -> String {
    let t = &r.trace;
    let mut out = String::new();
    let header = Line::Episode {
        episode: r.index,
        seed: t.seed,
        halted: t.halted,
        degenerate: t.degenerate,
        accurate: r.accurate.clone(),
        resets: t.resets.clone(),
    };
    out.push_str(&serde_json::to_string(&header).expect("trace header serializes"));
    out.push('\n');
    for (k, s) in t.states.iter().enumerate() {
        let line = Line::Step {
            k,
            state: s.clone(),
            feasible: t.feasible_sets[k].clone(),
            violation: t.violations[k],
            subtask: t.subtasks.get(k).cloned(),
            action: t.actions.get(k).cloned(),
            effect: t.effects.get(k).cloned(),
            reward: t.rewards.get(k).copied(),
        };
        out.push_str(&serde_json::to_string(&line).expect("trace step serializes"));
        out.push('\n');
    }
    out
}

pub fn trace_from_jsonl(text: &str) -> Result<EpisodeRecord, ExperimentError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let parse = |i: usize, l: &str| {
        serde_json::from_str::<Line>(l).map_err(|e| ExperimentError::Trace {
            line: i + 1,
            msg: e.to_string(),
        })
    };
    let (i, first) = lines.next().ok_or(ExperimentError::Trace {
        line: 1,
        msg: "empty trace".into(),
    })?;
    let Line::Episode {
        episode,
        seed,
        halted,
        degenerate,
        accurate,
        resets,
    } = parse(i, first)?
    else {
        return Err(ExperimentError::Trace {
            line: i + 1,
            msg: "expected an episode header".into(),
        });
    };
    let mut t = LearningTrace {
        seed,
        states: Vec::new(),
        actions: Vec::new(),
        effects: Vec::new(),
        feasible_sets: Vec::new(),
        rewards: Vec::new(),
        violations: Vec::new(),
        subtasks: Vec::new(),
        resets,
        degenerate,
        halted,
    };
    for (i, l) in lines {
        match parse(i, l)? {
            Line::Step {
                state,
                feasible,
                violation,
                subtask,
                action,
                effect,
                reward,
                ..
            } => {
                t.states.push(state);
                t.feasible_sets.push(feasible);
                t.violations.push(violation);
                t.subtasks.extend(subtask);
                t.actions.extend(action);
                t.effects.extend(effect);
                t.rewards.extend(reward);
            }
            Line::Episode { .. } => {
                return Err(ExperimentError::Trace {
                    line: i + 1,
                    msg: "second episode header".into(),
                })
            }
        }
    }
    Ok(EpisodeRecord {
        index: episode,
        accurate,
        trace: t,
    })
}

pub fn summary_csv(rows: &[EpisodeSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("summary rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn read_summary_csv(text: &str) -> Result<Vec<EpisodeSummary>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub episodes: usize,
    pub violations: usize,
    pub episodes_with_violations: usize,
    pub accurate_retained: bool,
    pub halted_no_safe_action: usize,
}

impl Totals {
    pub fn of(rows: &[EpisodeSummary]) -> Totals {
        Totals {
            episodes: rows.len(),
            violations: rows.iter().map(|r| r.violations).sum(),
            episodes_with_violations: rows.iter().filter(|r| r.violations > 0).count(),
            accurate_retained: rows.iter().all(|r| r.accurate_retained != Some(false)),
            halted_no_safe_action: rows.iter().filter(|r| r.halted == Halt::NoSafeAction).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub seed: u64,
    pub version: String,
    pub execution: Execution,
    pub config: serde_json::Value,
    pub model_files: Vec<FileHash>,
    pub models: Vec<ModelHash>,
    pub totals: Totals,
}

pub struct RunOutcome {
    pub records: Vec<EpisodeRecord>,
    pub summaries: Vec<EpisodeSummary>,
    pub manifest: Manifest,
}

impl RunOutcome {
    /// False only when an accurate model was declared and safety was violated.
    pub fn meets_expectation(&self, cfg: &RunConfig) -> bool {
        !cfg.accurate_model_present || self.manifest.totals.violations == 0
    }
}

pub fn run_experiment(config: RunConfig) -> Result<RunOutcome, ExperimentError> {
    let prepared = Prepared::new(config)?;
    let records = prepared.run()?;
    let summaries: Vec<EpisodeSummary> = records.iter().map(EpisodeSummary::of).collect();
    let cfg = &prepared.config;
    let manifest = Manifest {
        name: cfg.name.clone(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        execution: cfg.execution(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        model_files: prepared.files.clone(),
        models: prepared.model_hashes(),
        totals: Totals::of(&summaries),
    };
    Ok(RunOutcome {
        records,
        summaries,
        manifest,
    })
}

pub fn trace_file_name(index: usize) -> String {
    format!("episode_{index:05}.jsonl")
}

/// Writes `traces/`, `summary.csv` and `run_manifest.json` under `dir`.
pub fn write_outcome(outcome: &RunOutcome, dir: &Path, exec: Execution) -> Result<(), ExperimentError> {
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;
    let written = map_indexed(outcome.records.len(), exec, |i| {
        let r = &outcome.records[i];
        let path = traces.join(trace_file_name(r.index));
        fs::write(&path, trace_to_jsonl(r)).map_err(io_err(&path))
    });
    written.into_iter().collect::<Result<Vec<()>, _>>()?;
    let csv_path = dir.join("summary.csv");
    fs::write(&csv_path, summary_csv(&outcome.summaries)).map_err(io_err(&csv_path))?;
    let manifest_path = dir.join("run_manifest.json");
    let json = serde_json::to_string_pretty(&outcome.manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(())
}

/// Rebuilds the summary rows from the trace files of a finished run.
pub fn summarize_dir(dir: &Path) -> Result<Vec<EpisodeSummary>, ExperimentError> {
    let traces = dir.join("traces");
    let mut paths: Vec<PathBuf> = fs::read_dir(&traces)
        .map_err(io_err(&traces))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            Ok(EpisodeSummary::of(&trace_from_jsonl(&text)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ACC: &str = r#"
name = "acc-small"
algorithm = "active_mu"
er = 0.5
episodes = 6
step_limit = 40
seed = 3

[env]
kind = "acc"

[learner]
kind = "q"
epsilon = 0.2
bins = { pos_rel = 2.0, vel_rel = 1.0 }
"#;

    #[test]
    fn parses_and_checks_configs() {
        let cfg = RunConfig::from_toml(ACC).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::ActiveMu);
        assert!(matches!(cfg.env, EnvConfig::Acc(_)));
        let zero = ACC.replace("episodes = 6", "episodes = 0");
        assert!(matches!(RunConfig::from_toml(&zero), Err(ExperimentError::Config(_))));
        let no_er = ACC.replace("er = 0.5\n", "");
        assert!(RunConfig::from_toml(&no_er).is_err());
        let passive_with_er = ACC.replace("active_mu", "mu");
        assert!(RunConfig::from_toml(&passive_with_er).is_err());
        let typo = ACC.replace("seed = 3", "sed = 3");
        assert!(matches!(RunConfig::from_toml(&typo), Err(ExperimentError::Toml(_))));
    }

    #[test]
    fn traces_round_trip_through_jsonl() {
        let out = run_experiment(RunConfig::from_toml(ACC).unwrap()).unwrap();
        for r in &out.records {
            let back = trace_from_jsonl(&trace_to_jsonl(r)).unwrap();
            assert_eq!(&back, r);
        }
        let csv = summary_csv(&out.summaries);
        assert_eq!(read_summary_csv(&csv).unwrap(), out.summaries);
        assert!(csv.starts_with("episode,seed,cumulative_reward"));
    }

    #[test]
    fn sequential_and_parallel_runs_agree() {
        let mut cfg = RunConfig::from_toml(ACC).unwrap();
        cfg.execution = Some(Execution::Sequential);
        let a = run_experiment(cfg.clone()).unwrap();
        cfg.execution = Some(Execution::Parallel);
        let b = run_experiment(cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.summaries, b.summaries);
    }

    #[test]
    fn summary_is_recomputable_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_toml(ACC).unwrap();
        let out = run_experiment(cfg.clone()).unwrap();
        write_outcome(&out, dir.path(), cfg.execution()).unwrap();
        assert_eq!(summarize_dir(dir.path()).unwrap(), out.summaries);
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("run_manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest.models.len(), 5);
        assert_eq!(manifest.totals.violations, 0);
    }

    #[test]
    fn shared_learner_runs_in_order() {
        let text = ACC.replace("seed = 3", "seed = 3\nshared_learner = true");
        let cfg = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.execution(), Execution::Sequential);
        let out = run_experiment(cfg).unwrap();
        assert_eq!(out.records.len(), 6);
        assert!(out.manifest.totals.accurate_retained);
    }
}

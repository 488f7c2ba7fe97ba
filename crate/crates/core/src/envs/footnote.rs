//! A one-dimensional system where the single experiment is only possible in
//! the first step: `x := 1` needs `t = 0` and time never resets. Two of the
//! three candidate drifts agree on every later step.

use serde::{Deserialize, Serialize};

use super::{flat, EnvError, Task};
use crate::catalog;
use crate::dsl::parse_model;
use crate::monitors::MonitoredModel;
use crate::runtime::{Environment, Step};
use crate::semantics::{apply_effect, Effect, State};

/// Candidate right-hand sides for `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drift {
    Zero,
    Five,
    Linear,
}

impl Drift {
    pub const ALL: [Drift; 3] = [Drift::Zero, Drift::Five, Drift::Linear];

    pub fn rhs(self) -> &'static str {
        match self {
            Drift::Zero => "0",
            Drift::Five => "5",
            Drift::Linear => "x",
        }
    }

    pub fn model_name(self) -> String {
        format!("footnote_{}", self.rhs())
    }

    /// Exact solution after `d` time units.
    pub fn evolve(self, x: f64, d: f64) -> f64 {
        match self {
            Drift::Zero => x,
            Drift::Five => x + 5.0 * d,
            Drift::Linear => x * d.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FootnoteEnvConfig {
    pub truth: Drift,
    pub period: f64,
}

impl Default for FootnoteEnvConfig {
    fn default() -> Self {
        FootnoteEnvConfig {
            truth: Drift::Zero,
            period: 1.0,
        }
    }
}

pub fn footnote_model(f: Drift) -> Result<MonitoredModel, EnvError> {
    let src = catalog::source("footnote").expect("bundled footnote model");
    let mut m = parse_model(&src.replace("x' = F", &format!("x' = {}", f.rhs())))?;
    m.name = f.model_name();
    Ok(MonitoredModel::new(m))
}

impl FootnoteEnvConfig {
    pub fn task(&self) -> Result<Task, EnvError> {
        if !(self.period > 0.0) {
            return Err(EnvError::Config("period must be positive".into()));
        }
        let models = Drift::ALL
            .iter()
            .map(|f| footnote_model(*f))
            .collect::<Result<Vec<_>, _>>()?;
        flat("footnote", models)
    }
}

pub struct FootnoteEnv {
    cfg: FootnoteEnvConfig,
}

impl FootnoteEnv {
    pub fn new(cfg: FootnoteEnvConfig) -> FootnoteEnv {
        FootnoteEnv { cfg }
    }
}

impl Environment for FootnoteEnv {
    fn reset(&mut self, _seed: u64) -> State {
        State::from_pairs([("x", 0.0), ("t", 0.0)])
    }

    fn step(&mut self, s: &State, effect: &Effect) -> Step {
        let mut next = apply_effect(effect, s);
        let d = self.cfg.period;
        next.set("x", self.cfg.truth.evolve(next.value("x"), d));
        next.set("t", next.value("t") + d);
        Step {
            reward: next.value("x"),
            state: next,
        }
    }

    fn done(&self, _s: &State) -> bool {
        false
    }

    fn violation(&self, s: &State) -> bool {
        s.value("x") < 0.0
    }

    fn period(&self) -> f64 {
        self.cfg.period
    }

    fn accurate_models(&self) -> Vec<String> {
        vec![self.cfg.truth.model_name()]
    }
}

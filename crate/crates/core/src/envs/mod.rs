//! Ground-truth simulators. They share the integrator with the models but
//! implement their own dynamics, so disagreements come from the physics.

pub mod acc;
pub mod footnote;
pub mod hier;
pub mod plant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsl::DslError;
use crate::monitors::MonitoredModel;
use crate::runtime::Subtask;
use crate::semantics::{action_space, eval_formula, Action, SemanticsError, State};
use crate::vpmu::VpmuError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Update(#[from] VpmuError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// Models and the action list for one experiment.
#[derive(Debug, Clone)]
pub struct Task {
    pub subtasks: Vec<Subtask>,
    pub actions: Vec<Action>,
}

impl Task {
    /// The model set of a task without subtasks.
    pub fn models(&self) -> &[MonitoredModel] {
        &self.subtasks[0].models
    }

    pub fn is_hierarchical(&self) -> bool {
        self.subtasks.len() > 1
    }
}

/// The learner's action list: every assignment of the first model's
/// controller, tests ignored.
pub fn actions_of(models: &[MonitoredModel]) -> Result<Vec<Action>, SemanticsError> {
    let m = &models[0];
    action_space(&m.model.ctrl, &m.discretization)
}

fn flat(name: &str, models: Vec<MonitoredModel>) -> Result<Task, EnvError> {
    let actions = actions_of(&models)?;
    Ok(Task {
        subtasks: vec![Subtask {
            name: name.into(),
            models,
            termination: crate::dsl::Formula::False,
            next: None,
        }],
        actions,
    })
}

/// Rejection-samples a state in the box that satisfies every model's init.
fn sample_init(
    rng: &mut ChaCha8Rng,
    boxes: &[(&str, [f64; 2])],
    fixed: &State,
    models: &[MonitoredModel],
) -> Option<State> {
    for _ in 0..100_000 {
        let mut s = fixed.clone();
        for (v, [lo, hi]) in boxes {
            s.set(*v, if lo < hi { rng.gen_range(*lo..*hi) } else { *lo });
        }
        if models
            .iter()
            .all(|m| eval_formula(&m.model.init, &m.augment(&s)).unwrap_or(false))
        {
            return Some(s);
        }
    }
    None
}

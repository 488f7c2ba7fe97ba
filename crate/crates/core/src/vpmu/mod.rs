//! Model updates: transformations that produce new models from old ones,
//! possibly informed by data, plus an empirical safety check for the result.

mod circular;
mod disturbance;
mod instantiate;
mod intervals;
mod linear;
mod relax;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{Model, StructuralError, Term};
use crate::semantics::{Discretization, SemanticsError, State};

pub use circular::static_to_circular;
pub use disturbance::{add_disturbance, DisturbanceKind, DisturbanceSpec, GuardMode};
pub use instantiate::{auto_instantiate, instantiate_parameter};
pub use linear::{learn_linear_dynamics, LinearFit};
pub use relax::{relax_worst_case, RelaxSpec};
pub use validate::{validate_update, ValidationConfig, ValidationReport, Verdict};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VpmuError {
    #[error("`{0}` is not a parameter of the model")]
    NotAParameter(String),
    #[error("binding {binding} violates {constraint} from init")]
    InitViolation { binding: String, constraint: String },
    #[error("data does not determine parameter `{0}`")]
    Underdetermined(String),
    #[error("no transitions in the trajectory data")]
    NoData,
    #[error("`{0}` has no equation in the plant")]
    UnknownOdeVar(String),
    #[error("plant right-hand side for `{var}` is not affine in `{param}`")]
    NotAffine { var: String, param: String },
    #[error("cannot decide the worst-case direction of guard `{0}`")]
    UnknownDirection(String),
    #[error("term `{0}` does not occur in any controller guard")]
    GuardTermNotFound(String),
    #[error("term `{0}` is not the plant variable's")]
    BadRelaxation(String),
    #[error("remainder bound fails on the interval: violation {max_violation} at {witness}")]
    RemainderFails { max_violation: f64, witness: State },
    #[error("learned dynamics are not nilpotent")]
    NotNilpotent,
    #[error("trajectory data does not determine the dynamics (rank {rank} < {needed})")]
    RankDeficient { rank: usize, needed: usize },
    #[error("safety margin of degree {0} in time is not supported")]
    DegreeTooHigh(usize),
    #[error("safe formula must be a conjunction of comparisons, found `{0}`")]
    UnsupportedSafe(String),
    #[error("no training state admits a safe action")]
    NoSafeAction,
    #[error("could not sample an initial state after {0} attempts")]
    InitUnsatisfiable(usize),
    #[error("invalid update: {0}")]
    Invalid(String),
    #[error(transparent)]
    Structure(#[from] StructuralError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// One observed control cycle: the state the controller saw, the values it
/// assigned and how long the plant then ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: State,
    pub action: BTreeMap<String, f64>,
    pub duration: f64,
}

/// Recorded episodes. Within an episode, each sample's state is the outcome
/// of the previous sample's action and duration; the action of the last
/// sample in an episode has no observed outcome and is ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryData {
    pub episodes: Vec<Vec<Sample>>,
}

/// A transition reconstructed from consecutive samples.
#[derive(Debug, Clone)]
pub(crate) struct Transition<'a> {
    pub pre: &'a State,
    pub action: &'a BTreeMap<String, f64>,
    pub duration: f64,
    pub post: &'a State,
}

impl TrajectoryData {
    pub(crate) fn transitions(&self) -> impl Iterator<Item = Transition<'_>> {
        self.episodes.iter().flat_map(|ep| {
            ep.windows(2).map(|w| Transition {
                pre: &w[0].state,
                action: &w[0].action,
                duration: w[0].duration,
                post: &w[1].state,
            })
        })
    }

    pub fn transition_count(&self) -> usize {
        self.episodes.iter().map(|e| e.len().saturating_sub(1)).sum()
    }
}

/// A serializable description of an update, applied with [`ModelUpdate::apply`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ModelUpdate {
    InstantiateParameter { bindings: BTreeMap<String, f64> },
    AutoInstantiate { data: TrajectoryData },
    AddDisturbance(DisturbanceSpec),
    RelaxWorstCase(RelaxSpec),
    StaticToCircular { x_var: String, y_var: String },
}

impl ModelUpdate {
    pub fn name(&self) -> &'static str {
        match self {
            ModelUpdate::InstantiateParameter { .. } => "instantiate_parameter",
            ModelUpdate::AutoInstantiate { .. } => "auto_instantiate",
            ModelUpdate::AddDisturbance(_) => "add_disturbance",
            ModelUpdate::RelaxWorstCase(_) => "relax_worst_case",
            ModelUpdate::StaticToCircular { .. } => "static_to_circular",
        }
    }

    pub fn apply(&self, m: &Model) -> Result<Model, VpmuError> {
        match self {
            ModelUpdate::InstantiateParameter { bindings } => instantiate_parameter(m, bindings),
            ModelUpdate::AutoInstantiate { data } => Ok(auto_instantiate(m, data)?.0),
            ModelUpdate::AddDisturbance(spec) => add_disturbance(m, spec),
            ModelUpdate::RelaxWorstCase(spec) => relax_worst_case(m, spec),
            ModelUpdate::StaticToCircular { x_var, y_var } => static_to_circular(m, x_var, y_var),
        }
    }
}

/// Closed-form action grid for [`learn_linear_dynamics`]: every combination
/// of the listed input values.
pub fn input_combinations(grid: &Discretization) -> Vec<BTreeMap<String, f64>> {
    let mut out = vec![BTreeMap::new()];
    for (var, values) in &grid.grids {
        out = out
            .into_iter()
            .flat_map(|partial| {
                values.iter().map(move |v| {
                    let mut next = partial.clone();
                    next.insert(var.clone(), *v);
                    next
                })
            })
            .collect();
    }
    out
}

pub(crate) fn constant_terms(values: &BTreeMap<String, f64>) -> BTreeMap<String, Term> {
    values.iter().map(|(k, v)| (k.clone(), Term::Num(*v))).collect()
}

fn rebuild(m: &Model, f: impl FnOnce(&mut Model)) -> Result<Model, VpmuError> {
    let mut out = m.clone();
    f(&mut out);
    out.validate()?;
    Ok(out)
}

//! Executable semantics: states, evaluation, controller action enumeration
//! and ODE flow.

mod flow;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::algebra::{self, EvalError};
use crate::dsl::{Formula, Program, Term};

pub use flow::{flow, flow_trajectory, is_nilpotent_linear, rk4_integrate, FlowConfig, FlowMethod};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemanticsError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("actions must assign at least one variable")]
    EmptyAction,
    #[error("no discretization grid for nondeterministic assignment to `{0}`")]
    MissingGrid(String),
    #[error("controller contains {0}")]
    Unsupported(&'static str),
    #[error("evolution domain violated at time {time}")]
    DomainViolation { time: f64 },
    #[error("closed-form flow requested for a system that is not nilpotent-linear")]
    NotNilpotent,
    #[error("negative flow duration {0}")]
    NegativeDuration(f64),
    #[error("step size must be positive, got {0}")]
    InvalidStepSize(f64),
}

/// Assignment of reals to variable names.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(BTreeMap<String, f64>);

impl State {
    pub fn new() -> State {
        State::default()
    }

    pub fn from_pairs<K: Into<String>>(pairs: impl IntoIterator<Item = (K, f64)>) -> State {
        State(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn get(&self, var: &str) -> Option<f64> {
        self.0.get(var).copied()
    }

    /// Value of `var`; panics when absent. For variables known to be bound.
    pub fn value(&self, var: &str) -> f64 {
        match self.0.get(var) {
            Some(v) => *v,
            None => panic!("variable `{var}` not bound in state"),
        }
    }

    pub fn set(&mut self, var: impl Into<String>, value: f64) {
        self.0.insert(var.into(), value);
    }

    pub fn with(mut self, var: impl Into<String>, value: f64) -> State {
        self.set(var, value);
        self
    }

    pub fn contains(&self, var: &str) -> bool {
        self.0.contains_key(var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.0.iter()
    }

    pub fn vars(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<String, f64> {
        &self.0
    }

    /// Copy of `self` where absent variables are filled from `defaults`.
    pub fn with_defaults(&self, defaults: &BTreeMap<String, f64>) -> State {
        let mut out = self.clone();
        for (k, v) in defaults {
            out.0.entry(k.clone()).or_insert(*v);
        }
        out
    }

    pub(crate) fn lookup(&self) -> impl Fn(&str) -> Option<f64> + '_ {
        move |v| self.0.get(v).copied()
    }
}

impl FromIterator<(String, f64)> for State {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        State(iter.into_iter().collect())
    }
}

impl From<BTreeMap<String, f64>> for State {
    fn from(m: BTreeMap<String, f64>) -> Self {
        State(m)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

pub fn eval_term(t: &Term, s: &State) -> Result<f64, SemanticsError> {
    Ok(algebra::eval_term(t, &s.lookup())?)
}

pub fn eval_formula(f: &Formula, s: &State) -> Result<bool, SemanticsError> {
    Ok(algebra::eval_formula(f, &s.lookup())?)
}

/// Per-variable value grids used to resolve `x := *`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub grids: Vec<(String, Vec<f64>)>,
}

impl Discretization {
    pub fn new() -> Discretization {
        Discretization::default()
    }

    pub fn with_grid(mut self, var: impl Into<String>, values: Vec<f64>) -> Discretization {
        assert!(!values.is_empty(), "discretization grids must be non-empty");
        self.grids.push((var.into(), values));
        self
    }

    pub fn grid(&self, var: &str) -> Option<&[f64]> {
        self.grids.iter().find(|(v, _)| v == var).map(|(_, g)| g.as_slice())
    }
}

/// Resolved effect of an action: assigned variable to its new value.
pub type Effect = BTreeMap<String, f64>;

/// The effect of a loop-free deterministic discrete program without tests,
/// as simultaneous assignments whose terms are read in the pre-state.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    assignments: BTreeMap<String, Term>,
}

impl Action {
    pub fn new(assignments: BTreeMap<String, Term>) -> Result<Action, SemanticsError> {
        if assignments.is_empty() {
            return Err(SemanticsError::EmptyAction);
        }
        Ok(Action { assignments })
    }

    pub fn from_pairs<K: Into<String>>(pairs: impl IntoIterator<Item = (K, Term)>) -> Result<Action, SemanticsError> {
        Action::new(pairs.into_iter().map(|(k, t)| (k.into(), t)).collect())
    }

    /// The do-nothing effect of a branch consisting only of tests.
    pub fn skip() -> Action {
        Action {
            assignments: BTreeMap::new(),
        }
    }

    pub fn assignments(&self) -> &BTreeMap<String, Term> {
        &self.assignments
    }

    pub fn resolve(&self, s: &State) -> Result<Effect, SemanticsError> {
        self.assignments
            .iter()
            .map(|(k, t)| Ok((k.clone(), eval_term(t, s)?)))
            .collect()
    }

    pub fn apply(&self, s: &State) -> Result<State, SemanticsError> {
        let effect = self.resolve(s)?;
        Ok(apply_effect(&effect, s))
    }

    pub fn label(&self) -> String {
        if self.assignments.is_empty() {
            return "?true".into();
        }
        self.assignments
            .iter()
            .map(|(k, t)| format!("{k} := {t}"))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub fn apply_effect(effect: &Effect, s: &State) -> State {
    let mut out = s.clone();
    for (k, v) in effect {
        out.set(k.clone(), *v);
    }
    out
}

/// Effects are equal when they write the same variables with values equal up
/// to floating-point noise.
pub fn same_effect(a: &Effect, b: &Effect) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|((ka, va), (kb, vb))| ka == kb && (va - vb).abs() <= 1e-9 * (1.0 + va.abs().max(vb.abs())))
}

/// All actions `u` with `(s, u(s))` in the semantics of `ctrl`, one
/// representative per distinct effect in `s`.
pub fn enumerate_actions(ctrl: &Program, s: &State, d: &Discretization) -> Result<Vec<Action>, SemanticsError> {
    Ok(enumerate_resolved(ctrl, s, d)?.into_iter().map(|(a, _)| a).collect())
}

/// As [`enumerate_actions`], paired with the resolved effect of each action.
pub fn enumerate_resolved(
    ctrl: &Program,
    s: &State,
    d: &Discretization,
) -> Result<Vec<(Action, Effect)>, SemanticsError> {
    let start = Path {
        state: s.clone(),
        effect: BTreeMap::new(),
    };
    let paths = run_paths(ctrl, vec![start], d)?;
    let mut out: Vec<(Action, Effect)> = Vec::new();
    for p in paths {
        let resolved: Effect = p.effect.keys().map(|k| (k.clone(), p.state.value(k))).collect();
        if out.iter().any(|(_, e)| same_effect(e, &resolved)) {
            continue;
        }
        out.push((Action { assignments: p.effect }, resolved));
    }
    Ok(out)
}

#[derive(Clone)]
struct Path {
    state: State,
    /// Symbolic effect over the pre-state.
    effect: BTreeMap<String, Term>,
}

fn run_paths(p: &Program, input: Vec<Path>, d: &Discretization) -> Result<Vec<Path>, SemanticsError> {
    match p {
        Program::Assign(x, t) => input
            .into_iter()
            .map(|mut path| {
                let v = eval_term(t, &path.state)?;
                let symbolic = algebra::simplify_term(&algebra::subst_term(t, &path.effect));
                path.state.set(x.clone(), v);
                path.effect.insert(x.clone(), symbolic);
                Ok(path)
            })
            .collect(),
        Program::NondetAssign(x) => {
            let grid = d.grid(x).ok_or_else(|| SemanticsError::MissingGrid(x.clone()))?;
            let mut out = Vec::with_capacity(input.len() * grid.len());
            for path in input {
                for g in grid {
                    let mut q = path.clone();
                    q.state.set(x.clone(), *g);
                    q.effect.insert(x.clone(), Term::Num(*g));
                    out.push(q);
                }
            }
            Ok(out)
        }
        Program::Test(f) => {
            let mut out = Vec::with_capacity(input.len());
            for path in input {
                if eval_formula(f, &path.state)? {
                    out.push(path);
                }
            }
            Ok(out)
        }
        Program::Seq(a, b) => run_paths(b, run_paths(a, input, d)?, d),
        Program::Choice(a, b) => {
            let mut left = run_paths(a, input.clone(), d)?;
            left.extend(run_paths(b, input, d)?);
            Ok(left)
        }
        Program::Loop(_) => Err(SemanticsError::Unsupported("a loop")),
        Program::Ode(_) => Err(SemanticsError::Unsupported("a differential equation")),
    }
}

/// Every assignment effect of `ctrl` with all tests ignored, deduplicated by
/// printed form. This is the fixed action space a learner chooses from.
pub fn action_space(ctrl: &Program, d: &Discretization) -> Result<Vec<Action>, SemanticsError> {
    fn go(
        p: &Program,
        input: Vec<BTreeMap<String, Term>>,
        d: &Discretization,
    ) -> Result<Vec<BTreeMap<String, Term>>, SemanticsError> {
        Ok(match p {
            Program::Assign(x, t) => input
                .into_iter()
                .map(|mut e| {
                    let sym = algebra::simplify_term(&algebra::subst_term(t, &e));
                    e.insert(x.clone(), sym);
                    e
                })
                .collect(),
            Program::NondetAssign(x) => {
                let grid = d.grid(x).ok_or_else(|| SemanticsError::MissingGrid(x.clone()))?;
                let mut out = Vec::new();
                for e in input {
                    for g in grid {
                        let mut q = e.clone();
                        q.insert(x.clone(), Term::Num(*g));
                        out.push(q);
                    }
                }
                out
            }
            Program::Test(_) => input,
            Program::Seq(a, b) => go(b, go(a, input, d)?, d)?,
            Program::Choice(a, b) => {
                let mut l = go(a, input.clone(), d)?;
                l.extend(go(b, input, d)?);
                l
            }
            Program::Loop(_) => return Err(SemanticsError::Unsupported("a loop")),
            Program::Ode(_) => return Err(SemanticsError::Unsupported("a differential equation")),
        })
    }
    let mut out: Vec<Action> = Vec::new();
    for e in go(ctrl, vec![BTreeMap::new()], d)? {
        let a = Action { assignments: e };
        if !out.iter().any(|b| b.label() == a.label()) {
            out.push(a);
        }
    }
    Ok(out)
}

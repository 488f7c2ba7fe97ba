use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{printer, Formula, Ode, Program, Term};

/// A model failed one of the canonical-form invariants.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{invariant}: {detail}")]
pub struct StructuralError {
    pub invariant: String,
    pub detail: String,
}

impl StructuralError {
    pub fn new(invariant: impl Into<String>, detail: impl Into<String>) -> Self {
        StructuralError {
            invariant: invariant.into(),
            detail: detail.into(),
        }
    }
}

/// A model in canonical form `init -> [{ctrl; plant}*] safe`.
///
/// `ctrl` is loop- and ODE-free; `plant` is a single ODE system. When
/// `clock` is set the model is time-aware: the plant contains `clock' = 1`
/// and every controller branch resets `clock := 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub init: Formula,
    pub ctrl: Program,
    pub plant: Ode,
    pub safe: Formula,
    /// Values for symbols kept symbolic in the formulas.
    pub constants: BTreeMap<String, f64>,
    pub clock: Option<String>,
}

impl Model {
    /// Builds a model and checks the structural invariants.
    pub fn new(
        init: Formula,
        ctrl: Program,
        plant: Ode,
        safe: Formula,
        clock: Option<String>,
    ) -> Result<Model, StructuralError> {
        let m = Model {
            name: String::new(),
            init,
            ctrl,
            plant,
            safe,
            constants: BTreeMap::new(),
            clock,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), StructuralError> {
        if !self.ctrl.is_loop_free() {
            return Err(StructuralError::new(
                "loop-free ctrl violated",
                "the controller may not contain `*`",
            ));
        }
        if !self.ctrl.is_ode_free() {
            return Err(StructuralError::new(
                "ODE-free ctrl violated",
                "the controller may not contain differential equations",
            ));
        }
        if self.plant.equations.is_empty() {
            return Err(StructuralError::new("missing canonical form", "plant has no equations"));
        }
        let mut seen = BTreeSet::new();
        for v in self.plant.vars() {
            if !seen.insert(v) {
                return Err(StructuralError::new(
                    "duplicate ODE variable",
                    format!("`{v}` has two equations"),
                ));
            }
        }
        if let Some(c) = &self.clock {
            if self.plant.rhs(c) != Some(&Term::Num(1.0)) {
                return Err(StructuralError::new(
                    "clock must evolve at rate 1",
                    format!("plant lacks `{c}' = 1`"),
                ));
            }
            if !resets_clock(&self.ctrl, c, false) {
                return Err(StructuralError::new(
                    "clock reset missing",
                    format!("some controller branch does not end with `{c} := 0`"),
                ));
            }
        }
        let mut declared = self.init.free_vars();
        declared.extend(self.ctrl.all_vars());
        declared.extend(self.plant.free_vars());
        declared.extend(self.constants.keys().cloned());
        for v in self.safe.free_vars() {
            if !declared.contains(&v) {
                return Err(StructuralError::new(
                    "safe references an undeclared variable",
                    format!("`{v}` appears only in safe"),
                ));
            }
        }
        if self.any_term(&|t| matches!(t, Term::Div(_, d) if **d == Term::Num(0.0))) {
            return Err(StructuralError::new(
                "quotient denominator is constant zero",
                "division by 0",
            ));
        }
        Ok(())
    }

    fn any_term(&self, pred: &dyn Fn(&Term) -> bool) -> bool {
        fn term(t: &Term, pred: &dyn Fn(&Term) -> bool) -> bool {
            pred(t)
                || match t {
                    Term::Num(_) | Term::Var(_) => false,
                    Term::Neg(a) | Term::Pow(a, _) => term(a, pred),
                    Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => {
                        term(a, pred) || term(b, pred)
                    }
                }
        }
        fn formula(f: &Formula, pred: &dyn Fn(&Term) -> bool) -> bool {
            match f {
                Formula::True | Formula::False => false,
                Formula::Cmp(a, _, b) => term(a, pred) || term(b, pred),
                Formula::Not(a) => formula(a, pred),
                Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => formula(a, pred) || formula(b, pred),
            }
        }
        fn ode(o: &Ode, pred: &dyn Fn(&Term) -> bool) -> bool {
            o.equations.iter().any(|(_, t)| term(t, pred)) || formula(&o.domain, pred)
        }
        fn program(p: &Program, pred: &dyn Fn(&Term) -> bool) -> bool {
            match p {
                Program::Assign(_, t) => term(t, pred),
                Program::NondetAssign(_) => false,
                Program::Test(f) => formula(f, pred),
                Program::Ode(o) => ode(o, pred),
                Program::Seq(a, b) | Program::Choice(a, b) => program(a, pred) || program(b, pred),
                Program::Loop(a) => program(a, pred),
            }
        }
        formula(&self.init, pred) || formula(&self.safe, pred) || program(&self.ctrl, pred) || ode(&self.plant, pred)
    }

    pub fn is_time_aware(&self) -> bool {
        self.clock.is_some()
    }

    /// Variables written by the controller.
    pub fn control_vars(&self) -> BTreeSet<String> {
        self.ctrl.bound_vars()
    }

    /// Variables evolved by the plant.
    pub fn ode_vars(&self) -> BTreeSet<String> {
        self.plant.vars().map(str::to_string).collect()
    }

    /// Controller and plant variables together.
    pub fn state_vars(&self) -> BTreeSet<String> {
        let mut s = self.control_vars();
        s.extend(self.ode_vars());
        s
    }

    /// Every symbol occurring anywhere in the model.
    pub fn all_vars(&self) -> BTreeSet<String> {
        let mut s = self.init.free_vars();
        s.extend(self.ctrl.all_vars());
        s.extend(self.plant.free_vars());
        s.extend(self.safe.free_vars());
        s
    }

    /// Symbols that are neither written by the controller, evolved by the
    /// plant, nor the clock. Includes symbols that have a value in
    /// `constants`.
    pub fn parameters(&self) -> BTreeSet<String> {
        let state = self.state_vars();
        self.all_vars()
            .into_iter()
            .filter(|v| !state.contains(v) && Some(v) != self.clock.as_ref())
            .collect()
    }

    /// Parameters without a value in `constants`.
    pub fn open_parameters(&self) -> BTreeSet<String> {
        self.parameters()
            .into_iter()
            .filter(|v| !self.constants.contains_key(v))
            .collect()
    }
}

/// True iff every path through `p` leaves `clock` freshly assigned 0.
fn resets_clock(p: &Program, clock: &str, before: bool) -> bool {
    match p {
        Program::Assign(v, t) if v == clock => *t == Term::Num(0.0),
        Program::NondetAssign(v) if v == clock => false,
        Program::Seq(a, b) => resets_clock(b, clock, resets_clock(a, clock, before)),
        Program::Choice(a, b) => resets_clock(a, clock, before) && resets_clock(b, clock, before),
        Program::Loop(a) => before && resets_clock(a, clock, before),
        _ => before,
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&printer::print_model(self))
    }
}

impl std::str::FromStr for Model {
    type Err = super::DslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        super::parse_model(s)
    }
}

impl Serialize for Model {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Model {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::intervals::{Interval, Ranges};
use super::{rebuild, VpmuError};
use crate::dsl::algebra::{derivative, map_tests, nnf, poly_coeffs, simplify_term, subst_formula, subst_term};
use crate::dsl::{CmpOp, Formula, Model, Program, Term};
use crate::semantics::{eval_term, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    /// `x' = f + d` with `d` in `[-bound, bound]`.
    Additive,
    /// `x' = d * f` with `d` in `[1 - bound, 1 + bound]`.
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardMode {
    /// Guards assume the least favourable disturbance in the range.
    #[default]
    WorstCase,
    /// Guards mention the disturbance symbol, to be instantiated later.
    Symbolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub ode_var: String,
    pub kind: DisturbanceKind,
    pub bound: f64,
    #[serde(default)]
    pub guard_mode: GuardMode,
    /// Name of the disturbance symbol; a fresh `d`, `d1`, ... by default.
    #[serde(default)]
    pub param: Option<String>,
}

fn fresh(m: &Model, preferred: Option<&str>) -> Result<String, VpmuError> {
    let taken = m.all_vars();
    if let Some(p) = preferred {
        if taken.contains(p) || m.constants.contains_key(p) {
            return Err(VpmuError::Invalid(format!("disturbance symbol `{p}` is already used")));
        }
        return Ok(p.to_string());
    }
    let free = |c: &String| !taken.contains(c) && !m.constants.contains_key(c);
    Ok(std::iter::once("d".to_string())
        .chain((1..).map(|i| format!("d{i}")))
        .find(free)
        .expect("some name is free"))
}

fn assignments<'a>(p: &'a Program, out: &mut Vec<(&'a str, &'a Term)>) {
    match p {
        Program::Assign(x, t) => out.push((x, t)),
        Program::Seq(a, b) | Program::Choice(a, b) => {
            assignments(a, out);
            assignments(b, out);
        }
        Program::Loop(a) => assignments(a, out),
        _ => {}
    }
}

/// How each actuator parameter is perturbed: `P -> scale * P` or
/// `P -> P + d / gain`.
struct Perturbation {
    kind: DisturbanceKind,
    /// Per parameter: gain of the assigned term in that parameter (additive only).
    gains: BTreeMap<String, f64>,
}

impl Perturbation {
    fn apply(&self, p: &str, d: Term) -> Term {
        match self.kind {
            DisturbanceKind::Multiplicative => Term::mul(d, Term::var(p)),
            DisturbanceKind::Additive => {
                let k = self.gains[p];
                match d {
                    Term::Num(x) if x / k < 0.0 => Term::sub(Term::var(p), Term::Num(-x / k)),
                    Term::Num(x) => Term::add(Term::var(p), Term::Num(x / k)),
                    d if k == 1.0 => Term::add(Term::var(p), d),
                    d => Term::add(Term::var(p), Term::div(d, Term::Num(k))),
                }
            }
        }
    }

    fn is_identity(&self, d: f64) -> bool {
        match self.kind {
            DisturbanceKind::Multiplicative => d == 1.0,
            DisturbanceKind::Additive => d == 0.0,
        }
    }
}

/// Parameters appearing in controller assignments to the variables that
/// drive `rhs`, with the gain of each assignment in that parameter.
fn actuators(m: &Model, rhs: &Term, kind: DisturbanceKind) -> Result<Perturbation, VpmuError> {
    let driven: BTreeSet<String> = rhs.free_vars().intersection(&m.control_vars()).cloned().collect();
    let params = m.parameters();
    let consts = State::from_iter(m.constants.iter().map(|(k, v)| (k.clone(), *v)));
    let mut list = Vec::new();
    assignments(&m.ctrl, &mut list);
    let mut gains: BTreeMap<String, f64> = BTreeMap::new();
    for (x, e) in list {
        if !driven.contains(x) {
            continue;
        }
        for p in e.free_vars().intersection(&params) {
            let cs = poly_coeffs(e, p)
                .filter(|c| c.len() == 2)
                .ok_or_else(|| VpmuError::Invalid(format!("assignment `{x} := {e}` is not linear in `{p}`")))?;
            if kind == DisturbanceKind::Multiplicative && simplify_term(&cs[0]) != Term::Num(0.0) {
                return Err(VpmuError::Invalid(format!(
                    "assignment `{x} := {e}` is not proportional to `{p}`"
                )));
            }
            let k = eval_term(&cs[1], &consts)
                .map_err(|_| VpmuError::Invalid(format!("gain of `{p}` in `{x} := {e}` is not a constant")))?;
            if k == 0.0 {
                continue;
            }
            if let Some(prev) = gains.insert(p.clone(), k) {
                if kind == DisturbanceKind::Additive && prev != k {
                    return Err(VpmuError::Invalid(format!(
                        "`{p}` enters the actuator with different gains"
                    )));
                }
            }
        }
    }
    Ok(Perturbation { kind, gains })
}

struct WorstCase<'a> {
    pert: &'a Perturbation,
    range: Interval,
    state: BTreeSet<String>,
}

impl WorstCase<'_> {
    /// Rewrites one comparison so that it holds only if it holds for every
    /// disturbance in range.
    fn atom(&self, a: &Term, op: CmpOp, b: &Term, facts: &Ranges, whole: &Formula) -> Result<Formula, VpmuError> {
        let touched: Vec<&String> = self
            .pert
            .gains
            .keys()
            .filter(|p| a.mentions(p) || b.mentions(p))
            .collect();
        if touched.is_empty() {
            return Ok(Formula::cmp(a.clone(), op, b.clone()));
        }
        let margin = match op {
            CmpOp::Ge | CmpOp::Gt => Term::sub(a.clone(), b.clone()),
            CmpOp::Le | CmpOp::Lt => Term::sub(b.clone(), a.clone()),
            CmpOp::Eq | CmpOp::Ne => return Err(VpmuError::UnknownDirection(whole.to_string())),
        };
        let symbol = |p: &str| format!("{p}'d");
        let perturbed: BTreeMap<String, Term> = touched
            .iter()
            .map(|p| ((*p).clone(), self.pert.apply(p, Term::var(symbol(p)))))
            .collect();
        let perturbed = subst_term(&margin, &perturbed);
        let mut ranges = facts.clone();
        for p in &touched {
            ranges.set(&symbol(p), self.range);
        }
        let mut choice = BTreeMap::new();
        for p in &touched {
            let slope = ranges.eval(&derivative(&perturbed, &symbol(p)));
            let d = if slope.nonneg() {
                self.range.lo
            } else if slope.nonpos() {
                self.range.hi
            } else {
                return Err(VpmuError::UnknownDirection(whole.to_string()));
            };
            if !self.pert.is_identity(d) {
                choice.insert((*p).clone(), self.pert.apply(p, Term::Num(d)));
            }
        }
        Ok(Formula::cmp(subst_term(a, &choice), op, subst_term(b, &choice)))
    }

    fn rewrite(&self, f: &Formula, base: &Ranges, skip_parametric: bool) -> Result<Formula, VpmuError> {
        if !self.pert.gains.keys().any(|p| f.mentions(p)) {
            return Ok(f.clone());
        }
        let normal = nnf(f);
        let conjuncts: Vec<&Formula> = normal.conjuncts();
        let is_bound = |c: &Formula| match c {
            Formula::Cmp(Term::Var(v), _, t) | Formula::Cmp(t, _, Term::Var(v)) => {
                self.state.contains(v) && !t.free_vars().iter().any(|w| self.state.contains(w))
            }
            _ => false,
        };
        let skip = |c: &Formula| skip_parametric && !c.free_vars().iter().any(|w| self.state.contains(w));
        // single-variable bounds first; their rewritten form then informs the rest
        let mut out: Vec<Option<Formula>> = vec![None; conjuncts.len()];
        let mut facts = base.clone();
        for (i, c) in conjuncts.iter().enumerate() {
            if is_bound(c) && !skip(c) {
                let r = self.formula(c, base, f)?;
                facts.absorb(&r);
                out[i] = Some(r);
            }
        }
        for (i, c) in conjuncts.iter().enumerate() {
            if out[i].is_none() {
                out[i] = Some(if skip(c) {
                    (*c).clone()
                } else {
                    self.formula(c, &facts, f)?
                });
            }
        }
        Ok(Formula::conj(out.into_iter().flatten()))
    }

    fn formula(&self, f: &Formula, facts: &Ranges, whole: &Formula) -> Result<Formula, VpmuError> {
        Ok(match f {
            Formula::Cmp(a, op, b) => self.atom(a, *op, b, facts, whole)?,
            Formula::And(a, b) => Formula::and(self.formula(a, facts, whole)?, self.formula(b, facts, whole)?),
            Formula::Or(a, b) => Formula::or(self.formula(a, facts, whole)?, self.formula(b, facts, whole)?),
            other => other.clone(),
        })
    }
}

/// Adds a bounded disturbance symbol to one plant equation, widens `init`
/// with its range and adjusts the controller guards and `init` invariants
/// that mention the actuator parameters driving that equation.
///
/// In worst-case mode each affected comparison is replaced by its least
/// favourable instance over the range, chosen from the sign of its slope in
/// the disturbance. The slope sign must be provable from the constants, the
/// parameter constraints in `init` and the single-variable bounds of the same
/// guard; otherwise the update fails naming the guard.
pub fn add_disturbance(m: &Model, spec: &DisturbanceSpec) -> Result<Model, VpmuError> {
    let rhs = m
        .plant
        .rhs(&spec.ode_var)
        .ok_or_else(|| VpmuError::UnknownOdeVar(spec.ode_var.clone()))?
        .clone();
    if !(spec.bound >= 0.0 && spec.bound.is_finite()) {
        return Err(VpmuError::Invalid(format!(
            "disturbance bound must be non-negative, got {}",
            spec.bound
        )));
    }
    let d = fresh(m, spec.param.as_deref())?;
    let (lo, hi) = match spec.kind {
        DisturbanceKind::Additive => (-spec.bound, spec.bound),
        DisturbanceKind::Multiplicative => (1.0 - spec.bound, 1.0 + spec.bound),
    };
    let new_rhs = match spec.kind {
        DisturbanceKind::Additive => Term::add(rhs.clone(), Term::var(&d)),
        DisturbanceKind::Multiplicative => Term::mul(Term::var(&d), rhs.clone()),
    };
    let pert = actuators(m, &rhs, spec.kind)?;
    let state = m.state_vars();
    let mentions_state = |f: &Formula| f.free_vars().iter().any(|v| state.contains(v));

    let (ctrl, init) = match spec.guard_mode {
        GuardMode::Symbolic => {
            let map: BTreeMap<String, Term> = pert
                .gains
                .keys()
                .map(|p| (p.clone(), pert.apply(p, Term::var(&d))))
                .collect();
            let ctrl = map_tests::<VpmuError>(&m.ctrl, &mut |f| Ok(subst_formula(f, &map)))?;
            let init = Formula::conj(m.init.conjuncts().into_iter().map(|c| {
                if mentions_state(c) {
                    subst_formula(c, &map)
                } else {
                    c.clone()
                }
            }));
            (ctrl, init)
        }
        GuardMode::WorstCase => {
            let mut base = Ranges::from_values(&m.constants);
            base.absorb(&Formula::conj(
                m.init.conjuncts().into_iter().filter(|c| !mentions_state(c)).cloned(),
            ));
            let wc = WorstCase {
                pert: &pert,
                range: Interval::new(lo, hi),
                state: state.clone(),
            };
            let ctrl = map_tests(&m.ctrl, &mut |f| wc.rewrite(f, &base, false))?;
            let init = wc.rewrite(&m.init, &base, true)?;
            (ctrl, init)
        }
    };
    let range = Formula::and(
        Formula::cmp(Term::Num(lo), CmpOp::Le, Term::var(&d)),
        Formula::cmp(Term::var(&d), CmpOp::Le, Term::Num(hi)),
    );
    rebuild(m, |out| {
        out.init = Formula::and(init, range);
        out.ctrl = ctrl;
        for (v, t) in out.plant.equations.iter_mut() {
            if *v == spec.ode_var {
                *t = new_rhs.clone();
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;

    fn ramp() -> Model {
        parse_model(
            "init: v <= 0 & x > v^2 / (2 * B) & B > 0; \
             ctrl: {?x + v * T > v^2 / (2 * B); a := 0 ++ a := B}; t := 0; \
             plant: {x' = v, v' = a, t' = 1 & t <= T}; safe: x > 0; clock: t; constants: T = 1",
        )
        .unwrap()
    }

    fn spec(kind: DisturbanceKind, bound: f64, mode: GuardMode) -> DisturbanceSpec {
        DisturbanceSpec {
            ode_var: "v".into(),
            kind,
            bound,
            guard_mode: mode,
            param: None,
        }
    }

    #[test]
    fn weak_brakes_tighten_the_guard() {
        let out = add_disturbance(
            &ramp(),
            &spec(DisturbanceKind::Multiplicative, 0.5, GuardMode::WorstCase),
        )
        .unwrap();
        assert_eq!(out.plant.rhs("v").unwrap().to_string(), "d * a");
        assert!(out.ctrl.to_string().contains("2 * (0.5 * B)"), "{}", out.ctrl);
        assert!(out.init.to_string().contains("0.5 <= d & d <= 1.5"), "{}", out.init);
    }

    #[test]
    fn zero_bound_leaves_guards() {
        let m = ramp();
        let out = add_disturbance(&m, &spec(DisturbanceKind::Multiplicative, 0.0, GuardMode::WorstCase)).unwrap();
        assert_eq!(out.ctrl, m.ctrl);
    }

    #[test]
    fn symbolic_mode_keeps_the_symbol() {
        let out = add_disturbance(
            &ramp(),
            &spec(DisturbanceKind::Multiplicative, 0.5, GuardMode::Symbolic),
        )
        .unwrap();
        assert!(out.ctrl.to_string().contains("d * B"), "{}", out.ctrl);
    }

    #[test]
    fn unknown_variable() {
        let mut s = spec(DisturbanceKind::Additive, 0.1, GuardMode::WorstCase);
        s.ode_var = "q".into();
        assert_eq!(
            add_disturbance(&ramp(), &s).unwrap_err(),
            VpmuError::UnknownOdeVar("q".into())
        );
    }

    #[test]
    fn undecidable_direction_names_the_guard() {
        let m = parse_model("init: B > 0; ctrl: ?v * B > 1; a := B; plant: {v' = a}; safe: true").unwrap();
        let err = add_disturbance(&m, &spec(DisturbanceKind::Multiplicative, 0.5, GuardMode::WorstCase)).unwrap_err();
        assert_eq!(err, VpmuError::UnknownDirection("v * B > 1".into()));
    }
}

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::intervals::{Interval, Ranges};
use super::{rebuild, VpmuError};
use crate::dsl::algebra::{derivative, lie_derivative, nnf, simplify_term, subst_term};
use crate::dsl::{parse_term, CmpOp, Formula, Model, Program, Term};
use crate::semantics::{apply_effect, eval_term, flow_trajectory, FlowConfig, SemanticsError, State};

const SAMPLES: usize = 200;
const POINTS: usize = 25;
const BOX: f64 = 10.0;

/// Replace a worst-case bound on how far `variable` moves within one control
/// cycle by its Taylor expansion along the plant plus a remainder term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxSpec {
    /// The bound as it appears in the guards, e.g. `V * T`.
    pub guard_term: String,
    /// Plant variable whose displacement the bound covers.
    pub variable: String,
    pub order: u32,
    /// End of the expansion interval, e.g. `T`.
    pub horizon: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Upper,
    Lower,
}

fn parse(src: &str) -> Result<Term, VpmuError> {
    parse_term(src).map_err(|e| VpmuError::Invalid(format!("cannot parse `{src}`: {e}")))
}

fn replace(t: &Term, pattern: &Term, with: &Term) -> (Term, bool) {
    if t == pattern {
        return (with.clone(), true);
    }
    let mut hit = false;
    let mut go = |x: &Term| {
        let (r, h) = replace(x, pattern, with);
        hit |= h;
        r
    };
    let out = match t {
        Term::Num(_) | Term::Var(_) => t.clone(),
        Term::Neg(a) => Term::Neg(Box::new(go(a))),
        Term::Add(a, b) => Term::add(go(a), go(b)),
        Term::Sub(a, b) => Term::sub(go(a), go(b)),
        Term::Mul(a, b) => Term::mul(go(a), go(b)),
        Term::Div(a, b) => Term::div(go(a), go(b)),
        Term::Pow(a, n) => Term::pow(go(a), *n),
    };
    (out, hit)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Taylor polynomial of the displacement of `x` over elapsed time `tau`,
/// with the next-order term evaluated at the start as remainder.
fn expansion(m: &Model, x: &str, order: u32, tau: &Term) -> Term {
    let mut lie = Term::var(x);
    let mut sum: Option<Term> = None;
    for j in 1..=order + 1 {
        lie = lie_derivative(&lie, &m.plant);
        let term = match j {
            1 => Term::mul(lie.clone(), tau.clone()),
            _ => Term::div(
                Term::mul(lie.clone(), Term::pow(tau.clone(), j)),
                Term::Num(factorial(j)),
            ),
        };
        sum = Some(match sum {
            None => term,
            Some(s) => Term::add(s, term),
        });
    }
    simplify_term(&sum.expect("order + 1 >= 1"))
}

/// Effect of a straight-line program as a substitution over the pre-state;
/// empty when the program branches.
fn straight_effect(p: &Program) -> Option<BTreeMap<String, Term>> {
    match p {
        Program::Assign(x, t) => Some(BTreeMap::from([(x.clone(), t.clone())])),
        Program::Test(_) => Some(BTreeMap::new()),
        Program::Seq(a, b) => Some(compose(&straight_effect(a)?, &straight_effect(b)?)),
        _ => None,
    }
}

/// `first` then `second`, as one substitution over the state before `first`.
fn compose(first: &BTreeMap<String, Term>, second: &BTreeMap<String, Term>) -> BTreeMap<String, Term> {
    let mut out = first.clone();
    for (x, t) in second {
        out.insert(x.clone(), subst_term(t, first));
    }
    out
}

struct Site {
    /// Substitution giving the post-action state in terms of the test state.
    effect: BTreeMap<String, Term>,
    role: Role,
}

struct Relaxer<'a> {
    m: &'a Model,
    pattern: Term,
    expansion: Term,
    ranges: Ranges,
    sites: Vec<Site>,
}

impl Relaxer<'_> {
    fn program(&mut self, p: &Program, after: &BTreeMap<String, Term>) -> Result<Program, VpmuError> {
        Ok(match p {
            Program::Test(f) => Program::Test(self.test(f, after)?),
            Program::Seq(a, b) => {
                let b2 = self.program(b, after)?;
                let next = straight_effect(b).map(|e| compose(&e, after)).unwrap_or_default();
                Program::seq(self.program(a, &next)?, b2)
            }
            Program::Choice(a, b) => Program::choice(self.program(a, after)?, self.program(b, after)?),
            other => other.clone(),
        })
    }

    fn test(&mut self, f: &Formula, after: &BTreeMap<String, Term>) -> Result<Formula, VpmuError> {
        let probe = Term::var("'bound");
        let mut found = false;
        let mut roles = Vec::new();
        let normal = nnf(f);
        let rewritten = crate::dsl::algebra::map_atoms::<VpmuError>(&normal, &mut |a, op, b| {
            let (a_probe, ha) = replace(a, &self.pattern, &probe);
            let (b_probe, hb) = replace(b, &self.pattern, &probe);
            if !(ha || hb) {
                return Ok(Formula::cmp(a.clone(), op, b.clone()));
            }
            let margin = match op {
                CmpOp::Ge | CmpOp::Gt => Term::sub(a_probe, b_probe),
                CmpOp::Le | CmpOp::Lt => Term::sub(b_probe, a_probe),
                _ => return Err(VpmuError::UnknownDirection(f.to_string())),
            };
            let slope = self.ranges.eval(&derivative(&margin, "'bound"));
            let role = if slope.nonpos() {
                Role::Upper
            } else if slope.nonneg() {
                Role::Lower
            } else {
                return Err(VpmuError::UnknownDirection(f.to_string()));
            };
            roles.push(role);
            found = true;
            let with = simplify_term(&subst_term(&self.expansion, after));
            Ok(Formula::cmp(
                replace(a, &self.pattern, &with).0,
                op,
                replace(b, &self.pattern, &with).0,
            ))
        })?;
        if !found {
            return Ok(f.clone());
        }
        for role in roles {
            self.sites.push(Site {
                effect: after.clone(),
                role,
            });
        }
        Ok(rewritten)
    }

    /// Samples states and checks that the expansion bounds the true
    /// displacement at every sampled time in the interval.
    fn dominance(&self, spec: &RelaxSpec, horizon: &Term, tau_expansion: &Term) -> Result<(), VpmuError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut vars: Vec<String> = self.m.all_vars().into_iter().collect();
        vars.retain(|v| !self.m.constants.contains_key(v));
        let cfg = FlowConfig::default();
        let mut worst = (0.0_f64, State::new());
        for site in &self.sites {
            for _ in 0..SAMPLES {
                let mut pre = State::new();
                for v in &vars {
                    let r = self.ranges.get(v).meet(Interval::new(-BOX, BOX));
                    let x = if r.lo < r.hi { rng.gen_range(r.lo..=r.hi) } else { r.lo };
                    pre.set(v.clone(), x);
                }
                if let Some(c) = &self.m.clock {
                    pre.set(c.clone(), 0.0);
                }
                let pre = pre.with_defaults(&self.m.constants);
                let effect: BTreeMap<String, f64> = site
                    .effect
                    .iter()
                    .map(|(k, t)| Ok((k.clone(), eval_term(t, &pre)?)))
                    .collect::<Result<_, SemanticsError>>()?;
                let post = apply_effect(&effect, &pre);
                let h = eval_term(horizon, &post)?;
                if !(h > 0.0) {
                    continue;
                }
                let traj = match flow_trajectory(&self.m.plant, &post, h, &cfg, POINTS) {
                    Ok(t) => t,
                    Err(SemanticsError::DomainViolation { .. }) => continue,
                    Err(e) => return Err(e.into()),
                };
                let x0 = post.value(&spec.variable);
                for (tau, s) in traj {
                    let actual = s.value(&spec.variable) - x0;
                    let bound = eval_term(tau_expansion, &post.clone().with("'tau", tau))?;
                    let excess = match site.role {
                        Role::Upper => actual - bound,
                        Role::Lower => bound - actual,
                    };
                    if excess > 1e-6 * (1.0 + actual.abs()) && excess > worst.0 {
                        worst = (excess, pre.clone());
                    }
                }
            }
        }
        if worst.0 > 0.0 {
            return Err(VpmuError::RemainderFails {
                max_violation: worst.0,
                witness: worst.1,
            });
        }
        Ok(())
    }
}

/// Replaces every occurrence of `spec.guard_term` in controller guards by the
/// order-`spec.order` expansion of the displacement of `spec.variable` over
/// `[0, horizon]`, read in the post-action state of the guard's branch. A
/// sampled dominance check then confirms that the expansion bounds the true
/// displacement in the same direction the original term did.
pub fn relax_worst_case(m: &Model, spec: &RelaxSpec) -> Result<Model, VpmuError> {
    let pattern = parse(&spec.guard_term)?;
    let horizon = parse(&spec.horizon)?;
    if !m.plant.has_var(&spec.variable) {
        return Err(VpmuError::UnknownOdeVar(spec.variable.clone()));
    }
    let state = m.state_vars();
    let mut ranges = Ranges::from_values(&m.constants);
    ranges.absorb(&Formula::conj(
        m.init
            .conjuncts()
            .into_iter()
            .filter(|c| !c.free_vars().iter().any(|v| state.contains(v)))
            .cloned(),
    ));
    let mut r = Relaxer {
        m,
        pattern: pattern.clone(),
        expansion: expansion(m, &spec.variable, spec.order, &horizon),
        ranges,
        sites: Vec::new(),
    };
    let ctrl = r.program(&m.ctrl, &BTreeMap::new())?;
    if r.sites.is_empty() {
        return Err(VpmuError::GuardTermNotFound(spec.guard_term.clone()));
    }
    let tau_expansion = expansion(m, &spec.variable, spec.order, &Term::var("'tau"));
    r.dominance(spec, &horizon, &tau_expansion)?;
    rebuild(m, |out| out.ctrl = ctrl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;

    fn stopline() -> Model {
        parse_model(
            "init: v <= V & p + v^2 / (2 * B) <= S; \
             ctrl: {?p + V * T + V^2 / (2 * B) <= S & v + A * T <= V; a := A \
                    ++ ?p + V * T + V^2 / (2 * B) <= S; a := 0 ++ a := -B}; t := 0; \
             plant: {p' = v, v' = a, t' = 1 & t <= T}; safe: p <= S; clock: t; \
             constants: A = 1, B = 2, S = 20, T = 0.5, V = 4",
        )
        .unwrap()
    }

    fn spec(order: u32) -> RelaxSpec {
        RelaxSpec {
            guard_term: "V * T".into(),
            variable: "p".into(),
            order,
            horizon: "T".into(),
        }
    }

    #[test]
    fn first_order_with_exact_remainder() {
        let out = relax_worst_case(&stopline(), &spec(1)).unwrap();
        let printed = out.ctrl.to_string();
        assert!(printed.contains("v * T + A * T^2 / 2"), "{printed}");
        assert!(printed.contains("p + v * T + V^2"), "{printed}");
    }

    #[test]
    fn higher_order_is_the_same_polynomial() {
        let a = relax_worst_case(&stopline(), &spec(1)).unwrap();
        let b = relax_worst_case(&stopline(), &spec(3)).unwrap();
        assert_eq!(a.ctrl, b.ctrl);
    }

    #[test]
    fn truncated_jerk_fails_with_witness() {
        let m = parse_model(
            "init: true; ctrl: ?p + V * T <= S; t := 0; \
             plant: {p' = v, v' = a, a' = j, t' = 1 & t <= T}; safe: true; clock: t; \
             constants: S = 10, T = 1, V = 3",
        )
        .unwrap();
        match relax_worst_case(&m, &spec(1)) {
            Err(VpmuError::RemainderFails { max_violation, witness }) => {
                assert!(max_violation > 0.0);
                assert!(witness.value("j") > 0.0);
            }
            other => panic!("expected remainder failure, got {other:?}"),
        }
    }

    #[test]
    fn missing_term() {
        let mut s = spec(1);
        s.guard_term = "W * T".into();
        assert_eq!(
            relax_worst_case(&stopline(), &s).unwrap_err(),
            VpmuError::GuardTermNotFound("W * T".into())
        );
    }
}

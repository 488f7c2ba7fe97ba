//! Symbolic helpers over terms and formulas: substitution, simplification,
//! differentiation, evaluation and polynomial views.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{CmpOp, Formula, Ode, Program, Term};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("division by zero")]
    DivisionByZero,
}

pub fn eval_term(t: &Term, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, EvalError> {
    Ok(match t {
        Term::Num(x) => *x,
        Term::Var(v) => lookup(v).ok_or_else(|| EvalError::Unbound(v.clone()))?,
        Term::Neg(a) => -eval_term(a, lookup)?,
        Term::Add(a, b) => eval_term(a, lookup)? + eval_term(b, lookup)?,
        Term::Sub(a, b) => eval_term(a, lookup)? - eval_term(b, lookup)?,
        Term::Mul(a, b) => eval_term(a, lookup)? * eval_term(b, lookup)?,
        Term::Div(a, b) => {
            let d = eval_term(b, lookup)?;
            if d == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            eval_term(a, lookup)? / d
        }
        Term::Pow(a, n) => eval_term(a, lookup)?.powi(*n as i32),
    })
}

pub fn eval_formula(f: &Formula, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<bool, EvalError> {
    Ok(match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Cmp(a, op, b) => op.holds(eval_term(a, lookup)?, eval_term(b, lookup)?),
        Formula::Not(a) => !eval_formula(a, lookup)?,
        Formula::And(a, b) => eval_formula(a, lookup)? && eval_formula(b, lookup)?,
        Formula::Or(a, b) => eval_formula(a, lookup)? || eval_formula(b, lookup)?,
        Formula::Implies(a, b) => !eval_formula(a, lookup)? || eval_formula(b, lookup)?,
    })
}

/// How far `f` is from being violated; positive means satisfied with room to
/// spare. Conjunction takes the minimum, disjunction the maximum.
pub fn margin(f: &Formula, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, EvalError> {
    Ok(match f {
        Formula::True => f64::INFINITY,
        Formula::False => f64::NEG_INFINITY,
        Formula::Cmp(a, op, b) => {
            let (x, y) = (eval_term(a, lookup)?, eval_term(b, lookup)?);
            match op {
                CmpOp::Ge | CmpOp::Gt => x - y,
                CmpOp::Le | CmpOp::Lt => y - x,
                CmpOp::Eq => -(x - y).abs(),
                CmpOp::Ne => (x - y).abs(),
            }
        }
        Formula::Not(a) => -margin(a, lookup)?,
        Formula::And(a, b) => margin(a, lookup)?.min(margin(b, lookup)?),
        Formula::Or(a, b) => margin(a, lookup)?.max(margin(b, lookup)?),
        Formula::Implies(a, b) => (-margin(a, lookup)?).max(margin(b, lookup)?),
    })
}

pub fn subst_term(t: &Term, map: &BTreeMap<String, Term>) -> Term {
    match t {
        Term::Num(_) => t.clone(),
        Term::Var(v) => map.get(v).cloned().unwrap_or_else(|| t.clone()),
        Term::Neg(a) => Term::neg(subst_term(a, map)),
        Term::Add(a, b) => Term::add(subst_term(a, map), subst_term(b, map)),
        Term::Sub(a, b) => Term::sub(subst_term(a, map), subst_term(b, map)),
        Term::Mul(a, b) => Term::mul(subst_term(a, map), subst_term(b, map)),
        Term::Div(a, b) => Term::div(subst_term(a, map), subst_term(b, map)),
        Term::Pow(a, n) => Term::pow(subst_term(a, map), *n),
    }
}

pub fn subst_formula(f: &Formula, map: &BTreeMap<String, Term>) -> Formula {
    match f {
        Formula::True | Formula::False => f.clone(),
        Formula::Cmp(a, op, b) => Formula::cmp(subst_term(a, map), *op, subst_term(b, map)),
        Formula::Not(a) => Formula::not(subst_formula(a, map)),
        Formula::And(a, b) => Formula::and(subst_formula(a, map), subst_formula(b, map)),
        Formula::Or(a, b) => Formula::or(subst_formula(a, map), subst_formula(b, map)),
        Formula::Implies(a, b) => Formula::implies(subst_formula(a, map), subst_formula(b, map)),
    }
}

pub fn subst_ode(o: &Ode, map: &BTreeMap<String, Term>) -> Ode {
    Ode {
        equations: o
            .equations
            .iter()
            .map(|(v, t)| (v.clone(), subst_term(t, map)))
            .collect(),
        domain: subst_formula(&o.domain, map),
    }
}

/// Substitutes free occurrences in terms and tests. Only meant for symbols
/// that the program never writes.
pub fn subst_program(p: &Program, map: &BTreeMap<String, Term>) -> Program {
    match p {
        Program::Assign(v, t) => Program::Assign(v.clone(), subst_term(t, map)),
        Program::NondetAssign(_) => p.clone(),
        Program::Test(f) => Program::Test(subst_formula(f, map)),
        Program::Ode(o) => Program::Ode(subst_ode(o, map)),
        Program::Seq(a, b) => Program::seq(subst_program(a, map), subst_program(b, map)),
        Program::Choice(a, b) => Program::choice(subst_program(a, map), subst_program(b, map)),
        Program::Loop(a) => Program::Loop(Box::new(subst_program(a, map))),
    }
}

pub fn single(var: &str, t: Term) -> BTreeMap<String, Term> {
    BTreeMap::from([(var.to_string(), t)])
}

fn as_num(t: &Term) -> Option<f64> {
    match t {
        Term::Num(x) => Some(*x),
        _ => None,
    }
}

/// Constant folding and neutral-element removal. Preserves the value of the
/// term wherever the original is defined.
pub fn simplify_term(t: &Term) -> Term {
    match t {
        Term::Num(_) | Term::Var(_) => t.clone(),
        Term::Neg(a) => match simplify_term(a) {
            Term::Num(x) => Term::Num(-x),
            Term::Neg(inner) => *inner,
            a => Term::Neg(Box::new(a)),
        },
        Term::Add(a, b) => {
            let (a, b) = (simplify_term(a), simplify_term(b));
            match (as_num(&a), as_num(&b)) {
                (Some(x), Some(y)) => Term::Num(x + y),
                (Some(0.0), _) => b,
                (_, Some(0.0)) => a,
                (_, Some(y)) if y < 0.0 => Term::sub(a, Term::Num(-y)),
                _ => match b {
                    Term::Neg(inner) => Term::sub(a, *inner),
                    b => Term::add(a, b),
                },
            }
        }
        Term::Sub(a, b) => {
            let (a, b) = (simplify_term(a), simplify_term(b));
            match (as_num(&a), as_num(&b)) {
                (Some(x), Some(y)) => Term::Num(x - y),
                (Some(0.0), _) => simplify_term(&Term::Neg(Box::new(b))),
                (_, Some(0.0)) => a,
                (_, Some(y)) if y < 0.0 => Term::add(a, Term::Num(-y)),
                _ if a == b => Term::Num(0.0),
                _ => match b {
                    Term::Neg(inner) => Term::add(a, *inner),
                    b => Term::sub(a, b),
                },
            }
        }
        Term::Mul(a, b) => {
            let (a, b) = (simplify_term(a), simplify_term(b));
            match (as_num(&a), as_num(&b)) {
                (Some(x), Some(y)) => Term::Num(x * y),
                (Some(x), _) | (_, Some(x)) if x == 0.0 => Term::Num(0.0),
                (Some(1.0), _) => b,
                (_, Some(1.0)) => a,
                (Some(-1.0), _) => simplify_term(&Term::Neg(Box::new(b))),
                (_, Some(-1.0)) => simplify_term(&Term::Neg(Box::new(a))),
                (None, Some(_)) => Term::mul(b, a),
                _ => Term::mul(a, b),
            }
        }
        Term::Div(a, b) => {
            let (a, b) = (simplify_term(a), simplify_term(b));
            match (as_num(&a), as_num(&b)) {
                (Some(x), Some(y)) if y != 0.0 => Term::Num(x / y),
                (Some(0.0), _) => Term::Num(0.0),
                (_, Some(1.0)) => a,
                _ => Term::div(a, b),
            }
        }
        Term::Pow(a, n) => {
            let a = simplify_term(a);
            match (n, as_num(&a)) {
                (0, _) => Term::Num(1.0),
                (1, _) => a,
                (_, Some(x)) => Term::Num(x.powi(*n as i32)),
                _ => Term::pow(a, *n),
            }
        }
    }
}

/// Propositional simplification; closed comparisons are decided.
pub fn simplify_formula(f: &Formula) -> Formula {
    match f {
        Formula::True | Formula::False => f.clone(),
        Formula::Cmp(a, op, b) => {
            let (a, b) = (simplify_term(a), simplify_term(b));
            match (as_num(&a), as_num(&b)) {
                (Some(x), Some(y)) => {
                    if op.holds(x, y) {
                        Formula::True
                    } else {
                        Formula::False
                    }
                }
                _ => Formula::cmp(a, *op, b),
            }
        }
        Formula::Not(a) => match simplify_formula(a) {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            Formula::Not(inner) => *inner,
            a => Formula::not(a),
        },
        Formula::And(a, b) => match (simplify_formula(a), simplify_formula(b)) {
            (Formula::False, _) | (_, Formula::False) => Formula::False,
            (Formula::True, x) | (x, Formula::True) => x,
            (x, y) => Formula::and(x, y),
        },
        Formula::Or(a, b) => match (simplify_formula(a), simplify_formula(b)) {
            (Formula::True, _) | (_, Formula::True) => Formula::True,
            (Formula::False, x) | (x, Formula::False) => x,
            (x, y) => Formula::or(x, y),
        },
        Formula::Implies(a, b) => match (simplify_formula(a), simplify_formula(b)) {
            (Formula::False, _) | (_, Formula::True) => Formula::True,
            (Formula::True, x) => x,
            (x, Formula::False) => simplify_formula(&Formula::not(x)),
            (x, y) => Formula::implies(x, y),
        },
    }
}

/// Negation normal form: negations only directly above comparisons, which
/// are then absorbed into the operator. Implications become disjunctions.
pub fn nnf(f: &Formula) -> Formula {
    fn pos(f: &Formula) -> Formula {
        match f {
            Formula::True | Formula::False | Formula::Cmp(..) => f.clone(),
            Formula::Not(a) => neg(a),
            Formula::And(a, b) => Formula::and(pos(a), pos(b)),
            Formula::Or(a, b) => Formula::or(pos(a), pos(b)),
            Formula::Implies(a, b) => Formula::or(neg(a), pos(b)),
        }
    }
    fn neg(f: &Formula) -> Formula {
        match f {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            Formula::Cmp(a, op, b) => Formula::cmp(a.clone(), op.negated(), b.clone()),
            Formula::Not(a) => pos(a),
            Formula::And(a, b) => Formula::or(neg(a), neg(b)),
            Formula::Or(a, b) => Formula::and(neg(a), neg(b)),
            Formula::Implies(a, b) => Formula::and(pos(a), neg(b)),
        }
    }
    pos(f)
}

/// Rebuilds `f` with every comparison replaced by `rewrite(comparison)`.
pub fn map_atoms<E>(
    f: &Formula,
    rewrite: &mut dyn FnMut(&Term, CmpOp, &Term) -> Result<Formula, E>,
) -> Result<Formula, E> {
    Ok(match f {
        Formula::True | Formula::False => f.clone(),
        Formula::Cmp(a, op, b) => rewrite(a, *op, b)?,
        Formula::Not(a) => Formula::not(map_atoms(a, rewrite)?),
        Formula::And(a, b) => Formula::and(map_atoms(a, rewrite)?, map_atoms(b, rewrite)?),
        Formula::Or(a, b) => Formula::or(map_atoms(a, rewrite)?, map_atoms(b, rewrite)?),
        Formula::Implies(a, b) => Formula::implies(map_atoms(a, rewrite)?, map_atoms(b, rewrite)?),
    })
}

/// Rebuilds `p` with every test formula replaced by `rewrite(formula)`.
pub fn map_tests<E>(p: &Program, rewrite: &mut dyn FnMut(&Formula) -> Result<Formula, E>) -> Result<Program, E> {
    Ok(match p {
        Program::Test(f) => Program::Test(rewrite(f)?),
        Program::Seq(a, b) => Program::seq(map_tests(a, rewrite)?, map_tests(b, rewrite)?),
        Program::Choice(a, b) => Program::choice(map_tests(a, rewrite)?, map_tests(b, rewrite)?),
        Program::Loop(a) => Program::Loop(Box::new(map_tests(a, rewrite)?)),
        other => other.clone(),
    })
}

/// Partial derivative of `t` with respect to `var`, simplified.
pub fn derivative(t: &Term, var: &str) -> Term {
    fn d(t: &Term, var: &str) -> Term {
        match t {
            Term::Num(_) => Term::Num(0.0),
            Term::Var(v) => Term::Num(if v == var { 1.0 } else { 0.0 }),
            Term::Neg(a) => Term::Neg(Box::new(d(a, var))),
            Term::Add(a, b) => Term::add(d(a, var), d(b, var)),
            Term::Sub(a, b) => Term::sub(d(a, var), d(b, var)),
            Term::Mul(a, b) => Term::add(Term::mul(d(a, var), (**b).clone()), Term::mul((**a).clone(), d(b, var))),
            Term::Div(a, b) => Term::div(
                Term::sub(Term::mul(d(a, var), (**b).clone()), Term::mul((**a).clone(), d(b, var))),
                Term::pow((**b).clone(), 2),
            ),
            Term::Pow(a, n) => match n {
                0 => Term::Num(0.0),
                n => Term::mul(
                    Term::mul(Term::Num(*n as f64), Term::pow((**a).clone(), n - 1)),
                    d(a, var),
                ),
            },
        }
    }
    if !t.mentions(var) {
        return Term::Num(0.0);
    }
    simplify_term(&d(t, var))
}

/// Time derivative of `t` along the flow of `ode`.
pub fn lie_derivative(t: &Term, ode: &Ode) -> Term {
    let sum = ode
        .equations
        .iter()
        .filter(|(v, _)| t.mentions(v))
        .map(|(v, rhs)| Term::mul(derivative(t, v), rhs.clone()))
        .reduce(Term::add)
        .unwrap_or(Term::Num(0.0));
    simplify_term(&sum)
}

/// Coefficients `[c0, c1, ...]` of `t` viewed as a polynomial in `var`, or
/// `None` if `var` occurs in a denominator.
pub fn poly_coeffs(t: &Term, var: &str) -> Option<Vec<Term>> {
    fn add(a: Vec<Term>, b: Vec<Term>, sign: f64) -> Vec<Term> {
        let n = a.len().max(b.len());
        (0..n)
            .map(|i| {
                let x = a.get(i).cloned().unwrap_or(Term::Num(0.0));
                let y = b.get(i).cloned().unwrap_or(Term::Num(0.0));
                if sign > 0.0 {
                    Term::add(x, y)
                } else {
                    Term::sub(x, y)
                }
            })
            .collect()
    }
    fn mul(a: &[Term], b: &[Term]) -> Vec<Term> {
        let mut out = vec![Term::Num(0.0); a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] = Term::add(out[i + j].clone(), Term::mul(x.clone(), y.clone()));
            }
        }
        out
    }
    fn go(t: &Term, var: &str) -> Option<Vec<Term>> {
        if !t.mentions(var) {
            return Some(vec![t.clone()]);
        }
        Some(match t {
            Term::Var(_) => vec![Term::Num(0.0), Term::Num(1.0)],
            Term::Num(_) => unreachable!(),
            Term::Neg(a) => go(a, var)?.into_iter().map(|c| Term::Neg(Box::new(c))).collect(),
            Term::Add(a, b) => add(go(a, var)?, go(b, var)?, 1.0),
            Term::Sub(a, b) => add(go(a, var)?, go(b, var)?, -1.0),
            Term::Mul(a, b) => mul(&go(a, var)?, &go(b, var)?),
            Term::Div(a, b) => {
                if b.mentions(var) {
                    return None;
                }
                go(a, var)?.into_iter().map(|c| Term::div(c, (**b).clone())).collect()
            }
            Term::Pow(a, n) => {
                let base = go(a, var)?;
                let mut acc = vec![Term::Num(1.0)];
                for _ in 0..*n {
                    acc = mul(&acc, &base);
                }
                acc
            }
        })
    }
    let mut cs: Vec<Term> = go(t, var)?.iter().map(simplify_term).collect();
    while cs.len() > 1 && cs.last() == Some(&Term::Num(0.0)) {
        cs.pop();
    }
    Some(cs)
}

/// Numeric affine decomposition `t = sum_i coeffs[i] * vars[i] + offset`,
/// with every other symbol resolved through `lookup`. `None` when `t` is not
/// affine in `vars`.
pub fn affine_numeric(
    t: &Term,
    vars: &[&str],
    lookup: &dyn Fn(&str) -> Option<f64>,
) -> Result<Option<(Vec<f64>, f64)>, EvalError> {
    fn go(t: &Term, vars: &[&str], lookup: &dyn Fn(&str) -> Option<f64>) -> Result<Option<(Vec<f64>, f64)>, EvalError> {
        let n = vars.len();
        let is_const = |c: &[f64]| c.iter().all(|x| *x == 0.0);
        Ok(match t {
            Term::Num(x) => Some((vec![0.0; n], *x)),
            Term::Var(v) => match vars.iter().position(|x| x == v) {
                Some(i) => {
                    let mut c = vec![0.0; n];
                    c[i] = 1.0;
                    Some((c, 0.0))
                }
                None => Some((vec![0.0; n], lookup(v).ok_or_else(|| EvalError::Unbound(v.clone()))?)),
            },
            Term::Neg(a) => go(a, vars, lookup)?.map(|(c, k)| (c.iter().map(|x| -x).collect(), -k)),
            Term::Add(a, b) | Term::Sub(a, b) => {
                let s = if matches!(t, Term::Add(..)) { 1.0 } else { -1.0 };
                match (go(a, vars, lookup)?, go(b, vars, lookup)?) {
                    (Some((ca, ka)), Some((cb, kb))) => {
                        Some((ca.iter().zip(&cb).map(|(x, y)| x + s * y).collect(), ka + s * kb))
                    }
                    _ => None,
                }
            }
            Term::Mul(a, b) => match (go(a, vars, lookup)?, go(b, vars, lookup)?) {
                (Some((ca, ka)), Some((cb, kb))) => {
                    if is_const(&ca) {
                        Some((cb.iter().map(|y| ka * y).collect(), ka * kb))
                    } else if is_const(&cb) {
                        Some((ca.iter().map(|x| x * kb).collect(), ka * kb))
                    } else {
                        None
                    }
                }
                _ => None,
            },
            Term::Div(a, b) => match (go(a, vars, lookup)?, go(b, vars, lookup)?) {
                (Some((ca, ka)), Some((cb, kb))) if is_const(&cb) => {
                    if kb == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    Some((ca.iter().map(|x| x / kb).collect(), ka / kb))
                }
                _ => None,
            },
            Term::Pow(a, p) => match (p, go(a, vars, lookup)?) {
                (0, _) => Some((vec![0.0; n], 1.0)),
                (1, r) => r,
                (_, Some((c, k))) if is_const(&c) => Some((c, k.powi(*p as i32))),
                _ => None,
            },
        })
    }
    go(t, vars, lookup)
}

//! Textual model language: AST, parser and printer for canonical-form
//! hybrid-program models `init -> [{ctrl; plant}*] safe`.
//!
//! The concrete syntax is a small ASCII rendering of hybrid programs:
//!
//! ```text
//! name: car;
//! init: v >= 0 & A > 0;
//! ctrl: a := A ++ a := 0;
//! plant: {p' = v, v' = a};
//! safe: v >= 0
//! ```
//!
//! See `docs/hpmodel.md` at the repository root for the full grammar.

pub mod algebra;
mod lexer;
mod model;
mod parser;
mod printer;

use std::collections::BTreeSet;
use std::fmt;

pub use model::{Model, StructuralError};
pub use parser::{parse_formula, parse_model, parse_program, parse_term, ParseError};
pub use printer::print_model;

use thiserror::Error;

/// Any failure produced while reading a model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("syntax error at {0}")]
    Syntax(#[from] ParseError),
    #[error("structural error: {0}")]
    Structure(#[from] StructuralError),
}

/// Real-valued arithmetic term.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Num(f64),
    Var(String),
    Neg(Box<Term>),
    Add(Box<Term>, Box<Term>),
    Sub(Box<Term>, Box<Term>),
    Mul(Box<Term>, Box<Term>),
    Div(Box<Term>, Box<Term>),
    /// Integer power; the exponent is non-negative by construction.
    Pow(Box<Term>, u32),
}

impl Term {
    pub fn num(x: f64) -> Term {
        Term::Num(x)
    }

    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(t: Term) -> Term {
        match t {
            Term::Num(x) => Term::Num(-x),
            t => Term::Neg(Box::new(t)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Term, b: Term) -> Term {
        Term::Add(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Term, b: Term) -> Term {
        Term::Sub(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(a: Term, b: Term) -> Term {
        Term::Mul(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(a: Term, b: Term) -> Term {
        Term::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Term, n: u32) -> Term {
        Term::Pow(Box::new(a), n)
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub(crate) fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Num(_) => {}
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::Neg(a) | Term::Pow(a, _) => a.collect_vars(out),
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn mentions(&self, var: &str) -> bool {
        match self {
            Term::Num(_) => false,
            Term::Var(v) => v == var,
            Term::Neg(a) | Term::Pow(a, _) => a.mentions(var),
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => a.mentions(var) || b.mentions(var),
        }
    }
}

/// Comparison operator of an atomic formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Ge,
    Gt,
    Le,
    Lt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Lt => "<",
        }
    }

    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Ge => a >= b,
            CmpOp::Gt => a > b,
            CmpOp::Le => a <= b,
            CmpOp::Lt => a < b,
        }
    }

    /// The operator of the negated comparison (`!(a < b)` iff `a >= b`).
    pub fn negated(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Ge => CmpOp::Lt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Lt => CmpOp::Ge,
        }
    }

    /// The operator obtained by swapping both sides (`a < b` iff `b > a`).
    pub fn flipped(self) -> CmpOp {
        match self {
            CmpOp::Ge => CmpOp::Le,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Lt => CmpOp::Gt,
            op => op,
        }
    }
}

/// Quantifier-free first-order formula over real arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    False,
    Cmp(Term, CmpOp, Term),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn cmp(a: Term, op: CmpOp, b: Term) -> Formula {
        Formula::Cmp(a, op, b)
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Formula) -> Formula {
        Formula::Not(Box::new(a))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    /// Left-nested conjunction of `parts`; `true` when empty.
    pub fn conj(parts: impl IntoIterator<Item = Formula>) -> Formula {
        parts.into_iter().reduce(Formula::and).unwrap_or(Formula::True)
    }

    /// Left-nested disjunction of `parts`; `false` when empty.
    pub fn disj(parts: impl IntoIterator<Item = Formula>) -> Formula {
        parts.into_iter().reduce(Formula::or).unwrap_or(Formula::False)
    }

    /// Top-level conjuncts, flattening nested `&`.
    pub fn conjuncts(&self) -> Vec<&Formula> {
        let mut out = Vec::new();
        fn walk<'a>(f: &'a Formula, out: &mut Vec<&'a Formula>) {
            match f {
                Formula::And(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                f => out.push(f),
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub(crate) fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Cmp(a, _, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Formula::Not(a) => a.collect_vars(out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn mentions(&self, var: &str) -> bool {
        match self {
            Formula::True | Formula::False => false,
            Formula::Cmp(a, _, b) => a.mentions(var) || b.mentions(var),
            Formula::Not(a) => a.mentions(var),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => a.mentions(var) || b.mentions(var),
        }
    }
}

/// A system of ODEs `{x1' = t1, ..., xn' = tn & domain}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ode {
    pub equations: Vec<(String, Term)>,
    pub domain: Formula,
}

impl Ode {
    pub fn new(equations: Vec<(String, Term)>, domain: Formula) -> Ode {
        Ode { equations, domain }
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.equations.iter().map(|(v, _)| v.as_str())
    }

    pub fn has_var(&self, var: &str) -> bool {
        self.equations.iter().any(|(v, _)| v == var)
    }

    pub fn rhs(&self, var: &str) -> Option<&Term> {
        self.equations.iter().find(|(v, _)| v == var).map(|(_, t)| t)
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for (v, t) in &self.equations {
            out.insert(v.clone());
            t.collect_vars(&mut out);
        }
        self.domain.collect_vars(&mut out);
        out
    }
}

/// Hybrid program.
#[derive(Debug, Clone, PartialEq)]
pub enum Program {
    Assign(String, Term),
    NondetAssign(String),
    Test(Formula),
    Seq(Box<Program>, Box<Program>),
    Choice(Box<Program>, Box<Program>),
    Loop(Box<Program>),
    Ode(Ode),
}

impl Program {
    pub fn assign(var: impl Into<String>, t: Term) -> Program {
        Program::Assign(var.into(), t)
    }

    pub fn seq(a: Program, b: Program) -> Program {
        Program::Seq(Box::new(a), Box::new(b))
    }

    pub fn choice(a: Program, b: Program) -> Program {
        Program::Choice(Box::new(a), Box::new(b))
    }

    /// Left-nested sequential composition; `?true` when empty.
    pub fn seq_all(parts: impl IntoIterator<Item = Program>) -> Program {
        parts
            .into_iter()
            .reduce(Program::seq)
            .unwrap_or(Program::Test(Formula::True))
    }

    /// Left-nested nondeterministic choice; `?false` when empty.
    pub fn choice_all(parts: impl IntoIterator<Item = Program>) -> Program {
        parts
            .into_iter()
            .reduce(Program::choice)
            .unwrap_or(Program::Test(Formula::False))
    }

    pub fn is_loop_free(&self) -> bool {
        match self {
            Program::Loop(_) => false,
            Program::Seq(a, b) | Program::Choice(a, b) => a.is_loop_free() && b.is_loop_free(),
            _ => true,
        }
    }

    pub fn is_ode_free(&self) -> bool {
        match self {
            Program::Ode(_) => false,
            Program::Seq(a, b) | Program::Choice(a, b) => a.is_ode_free() && b.is_ode_free(),
            Program::Loop(a) => a.is_ode_free(),
            _ => true,
        }
    }

    /// Variables written by assignments (deterministic or not) or ODEs.
    pub fn bound_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        fn walk(p: &Program, out: &mut BTreeSet<String>) {
            match p {
                Program::Assign(v, _) | Program::NondetAssign(v) => {
                    out.insert(v.clone());
                }
                Program::Ode(ode) => out.extend(ode.vars().map(str::to_string)),
                Program::Seq(a, b) | Program::Choice(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Program::Loop(a) => walk(a, out),
                Program::Test(_) => {}
            }
        }
        walk(self, &mut out);
        out
    }

    /// Every variable mentioned anywhere in the program.
    pub fn all_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        fn walk(p: &Program, out: &mut BTreeSet<String>) {
            match p {
                Program::Assign(v, t) => {
                    out.insert(v.clone());
                    t.collect_vars(out);
                }
                Program::NondetAssign(v) => {
                    out.insert(v.clone());
                }
                Program::Test(f) => f.collect_vars(out),
                Program::Ode(ode) => out.extend(ode.free_vars()),
                Program::Seq(a, b) | Program::Choice(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Program::Loop(a) => walk(a, out),
            }
        }
        walk(self, &mut out);
        out
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&printer::term_to_string(self))
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&printer::formula_to_string(self))
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&printer::program_to_string(self))
    }
}

impl fmt::Display for Ode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&printer::ode_to_string(self))
    }
}

use std::collections::BTreeMap;
use std::fmt;

use super::lexer::{lex, Spanned, Tok};
use super::{CmpOp, DslError, Formula, Model, Ode, Program, Term};

/// Position-annotated syntax diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub expected: Vec<String>,
    pub found: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, col: usize, expected: Vec<String>, found: String) -> Self {
        ParseError {
            line,
            col,
            expected,
            found,
        }
    }

    fn later_than(&self, other: &ParseError) -> bool {
        (self.line, self.col) > (other.line, other.col)
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: expected ", self.line, self.col)?;
        match self.expected.as_slice() {
            [] => write!(f, "something else")?,
            [one] => write!(f, "{one}")?,
            many => write!(f, "one of {}", many.join(", "))?,
        }
        write!(f, "; found {}", self.found)
    }
}

impl std::error::Error for ParseError {}

type PResult<T> = Result<T, ParseError>;

const SECTIONS: &[&str] = &["name", "init", "ctrl", "plant", "safe", "clock", "constants"];

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> PResult<Parser> {
        Ok(Parser {
            toks: lex(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let idx = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[idx].tok
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let s = &self.toks[self.pos];
        ParseError::new(
            s.line,
            s.col,
            expected.iter().map(|e| e.to_string()).collect(),
            s.tok.describe(),
        )
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.error(&[&format!("`{}`", tok.text())]))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if s != "true" && s != "false" => {
                self.advance();
                Ok(s)
            }
            _ => Err(self.error(&["an identifier"])),
        }
    }

    fn expect_eof(&mut self) -> PResult<()> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.error(&["end of input"]))
        }
    }

    // ---- terms ----

    fn term(&mut self) -> PResult<Term> {
        let mut lhs = self.product()?;
        loop {
            if self.eat(&Tok::Plus) {
                lhs = Term::add(lhs, self.product()?);
            } else if self.eat(&Tok::Minus) {
                lhs = Term::sub(lhs, self.product()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn product(&mut self) -> PResult<Term> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(&Tok::Star) {
                lhs = Term::mul(lhs, self.unary()?);
            } else if *self.peek() == Tok::Slash {
                let s = &self.toks[self.pos];
                let (line, col) = (s.line, s.col);
                self.advance();
                let rhs = self.unary()?;
                if matches!(rhs, Term::Num(x) if x == 0.0) {
                    return Err(ParseError::new(
                        line,
                        col,
                        vec!["a denominator that is not constant zero".into()],
                        "division by 0".into(),
                    ));
                }
                lhs = Term::div(lhs, rhs);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> PResult<Term> {
        if self.eat(&Tok::Minus) {
            // negative literals are folded into the constant
            Ok(Term::neg(self.unary()?))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> PResult<Term> {
        let base = self.primary()?;
        if self.eat(&Tok::Caret) {
            match *self.peek() {
                Tok::Num(x) if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 => {
                    self.advance();
                    Ok(Term::pow(base, x as u32))
                }
                _ => Err(self.error(&["a non-negative integer exponent"])),
            }
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> PResult<Term> {
        match self.peek().clone() {
            Tok::Num(x) => {
                self.advance();
                Ok(Term::Num(x))
            }
            Tok::Ident(s) if s != "true" && s != "false" => {
                if *self.peek_at(1) == Tok::Prime {
                    self.advance();
                    return Err(self.error(&["a term (primed variables only appear in ODEs)"]));
                }
                self.advance();
                Ok(Term::Var(s))
            }
            Tok::LParen => {
                self.advance();
                let t = self.term()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            _ => Err(self.error(&["a number", "an identifier", "`(`", "`-`"])),
        }
    }

    // ---- formulas ----

    fn formula(&mut self) -> PResult<Formula> {
        let lhs = self.disjunction()?;
        if self.eat(&Tok::Arrow) {
            Ok(Formula::implies(lhs, self.formula()?))
        } else {
            Ok(lhs)
        }
    }

    fn disjunction(&mut self) -> PResult<Formula> {
        let mut lhs = self.conjunction()?;
        while self.eat(&Tok::Bar) {
            lhs = Formula::or(lhs, self.conjunction()?);
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> PResult<Formula> {
        let mut lhs = self.negation()?;
        while self.eat(&Tok::Amp) {
            lhs = Formula::and(lhs, self.negation()?);
        }
        Ok(lhs)
    }

    fn negation(&mut self) -> PResult<Formula> {
        if self.eat(&Tok::Bang) {
            Ok(Formula::not(self.negation()?))
        } else {
            self.atom()
        }
    }

    fn atom(&mut self) -> PResult<Formula> {
        match self.peek() {
            Tok::Ident(s) if s == "true" => {
                self.advance();
                return Ok(Formula::True);
            }
            Tok::Ident(s) if s == "false" => {
                self.advance();
                return Ok(Formula::False);
            }
            _ => {}
        }
        let start = self.pos;
        let cmp_err = match self.comparison() {
            Ok(f) => return Ok(f),
            Err(e) => e,
        };
        if self.toks[start].tok != Tok::LParen {
            return Err(cmp_err);
        }
        self.pos = start;
        self.advance();
        let inner = self.formula().and_then(|f| {
            self.expect(Tok::RParen)?;
            Ok(f)
        });
        match inner {
            Ok(f) => Ok(f),
            Err(e) if e.later_than(&cmp_err) => Err(e),
            Err(_) => Err(cmp_err),
        }
    }

    fn comparison(&mut self) -> PResult<Formula> {
        let lhs = self.term()?;
        let op = match self.peek() {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Ge => CmpOp::Ge,
            Tok::Gt => CmpOp::Gt,
            Tok::Le => CmpOp::Le,
            Tok::Lt => CmpOp::Lt,
            _ => return Err(self.error(&["`=`", "`!=`", "`>=`", "`>`", "`<=`", "`<`", "an operator"])),
        };
        self.advance();
        let rhs = self.term()?;
        Ok(Formula::cmp(lhs, op, rhs))
    }

    // ---- programs ----

    fn program(&mut self) -> PResult<Program> {
        let mut lhs = self.sequence()?;
        while self.eat(&Tok::Choice) {
            lhs = Program::choice(lhs, self.sequence()?);
        }
        Ok(lhs)
    }

    /// `;` ends the enclosing model section when followed by `label:` or EOF.
    fn section_ends_here(&self) -> bool {
        matches!(self.peek_at(1), Tok::Eof)
            || matches!((self.peek_at(1), self.peek_at(2)),
                (Tok::Ident(s), Tok::Colon) if SECTIONS.contains(&s.as_str()))
    }

    fn sequence(&mut self) -> PResult<Program> {
        let mut lhs = self.postfix()?;
        while *self.peek() == Tok::Semi && !self.section_ends_here() {
            self.advance();
            lhs = Program::seq(lhs, self.postfix()?);
        }
        Ok(lhs)
    }

    fn postfix(&mut self) -> PResult<Program> {
        let mut p = self.program_atom()?;
        while self.eat(&Tok::Star) {
            p = Program::Loop(Box::new(p));
        }
        Ok(p)
    }

    fn program_atom(&mut self) -> PResult<Program> {
        match self.peek().clone() {
            Tok::Quest => {
                self.advance();
                Ok(Program::Test(self.formula()?))
            }
            Tok::Ident(_) if *self.peek_at(1) == Tok::Assign => {
                let v = self.ident()?;
                self.advance();
                if self.eat(&Tok::Star) {
                    Ok(Program::NondetAssign(v))
                } else {
                    Ok(Program::Assign(v, self.term()?))
                }
            }
            Tok::LBrace => {
                self.advance();
                let p = if matches!(self.peek(), Tok::Ident(_)) && *self.peek_at(1) == Tok::Prime {
                    Program::Ode(self.ode_body()?)
                } else {
                    self.program()?
                };
                self.expect(Tok::RBrace)?;
                Ok(p)
            }
            Tok::LParen => {
                self.advance();
                let p = self.program()?;
                self.expect(Tok::RParen)?;
                Ok(p)
            }
            _ => Err(self.error(&["`?`", "an assignment", "`{`", "`(`"])),
        }
    }

    fn ode_body(&mut self) -> PResult<Ode> {
        let mut equations = Vec::new();
        loop {
            let v = self.ident()?;
            self.expect(Tok::Prime)?;
            self.expect(Tok::Eq)?;
            equations.push((v, self.term()?));
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        let domain = if self.eat(&Tok::Amp) {
            self.formula()?
        } else {
            Formula::True
        };
        Ok(Ode { equations, domain })
    }

    // ---- models ----

    fn signed_number(&mut self) -> PResult<f64> {
        let neg = self.eat(&Tok::Minus);
        match *self.peek() {
            Tok::Num(x) => {
                self.advance();
                Ok(if neg { -x } else { x })
            }
            _ => Err(self.error(&["a number"])),
        }
    }
}

#[derive(Default)]
struct Sections {
    name: Option<String>,
    init: Option<Formula>,
    ctrl: Option<Program>,
    plant: Option<(Program, usize, usize)>,
    safe: Option<Formula>,
    clock: Option<String>,
    constants: Option<BTreeMap<String, f64>>,
}

/// Parses a `.hpmodel` document and checks every structural invariant of [`Model`].
pub fn parse_model(text: &str) -> Result<Model, DslError> {
    let mut p = Parser::new(text)?;
    let mut sec = Sections::default();
    while *p.peek() != Tok::Eof {
        let (line, col) = (p.toks[p.pos].line, p.toks[p.pos].col);
        let label = match p.peek().clone() {
            Tok::Ident(s) if SECTIONS.contains(&s.as_str()) => s,
            _ => return Err(p.error(SECTIONS).into()),
        };
        p.advance();
        p.expect(Tok::Colon)?;
        let dup = || {
            ParseError::new(
                line,
                col,
                vec!["each section at most once".into()],
                format!("second `{label}` section"),
            )
        };
        match label.as_str() {
            "name" => {
                if sec.name.replace(p.ident()?).is_some() {
                    return Err(dup().into());
                }
            }
            "init" => {
                if sec.init.replace(p.formula()?).is_some() {
                    return Err(dup().into());
                }
            }
            "ctrl" => {
                if sec.ctrl.replace(p.program()?).is_some() {
                    return Err(dup().into());
                }
            }
            "plant" => {
                let (l, c) = (p.toks[p.pos].line, p.toks[p.pos].col);
                if sec.plant.replace((p.program()?, l, c)).is_some() {
                    return Err(dup().into());
                }
            }
            "safe" => {
                if sec.safe.replace(p.formula()?).is_some() {
                    return Err(dup().into());
                }
            }
            "clock" => {
                if sec.clock.replace(p.ident()?).is_some() {
                    return Err(dup().into());
                }
            }
            "constants" => {
                let mut map = BTreeMap::new();
                loop {
                    let k = p.ident()?;
                    p.expect(Tok::Eq)?;
                    map.insert(k, p.signed_number()?);
                    if !p.eat(&Tok::Comma) {
                        break;
                    }
                }
                if sec.constants.replace(map).is_some() {
                    return Err(dup().into());
                }
            }
            _ => unreachable!(),
        }
        if !p.eat(&Tok::Semi) {
            p.expect_eof().map_err(|_| p.error(&["`;`", "end of input"]))?;
        }
    }
    let missing = |what: &str| super::StructuralError::new("missing canonical form", format!("no `{what}` section"));
    let init = sec.init.ok_or_else(|| missing("init"))?;
    let ctrl = sec.ctrl.ok_or_else(|| missing("ctrl"))?;
    let (plant, _, _) = sec.plant.ok_or_else(|| missing("plant"))?;
    let safe = sec.safe.ok_or_else(|| missing("safe"))?;
    let plant = match plant {
        Program::Ode(ode) => ode,
        _ => {
            return Err(super::StructuralError::new(
                "missing canonical form",
                "plant must be a single ODE `{x' = ...}`",
            )
            .into())
        }
    };
    let model = Model {
        name: sec.name.unwrap_or_default(),
        init,
        ctrl,
        plant,
        safe,
        constants: sec.constants.unwrap_or_default(),
        clock: sec.clock,
    };
    model.validate()?;
    Ok(model)
}

pub fn parse_term(text: &str) -> Result<Term, ParseError> {
    let mut p = Parser::new(text)?;
    let t = p.term()?;
    p.expect_eof()?;
    Ok(t)
}

pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let mut p = Parser::new(text)?;
    let f = p.formula()?;
    p.expect_eof()?;
    Ok(f)
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut p = Parser::new(text)?;
    let f = p.program()?;
    p.expect_eof()?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_of_terms() {
        let t = parse_term("a + b * c ^ 2 - -d").unwrap();
        assert_eq!(
            t,
            Term::sub(
                Term::add(Term::var("a"), Term::mul(Term::var("b"), Term::pow(Term::var("c"), 2))),
                Term::Neg(Box::new(Term::var("d")))
            )
        );
        assert_eq!(parse_term("-2").unwrap(), Term::Num(-2.0));
        assert_eq!(
            parse_term("-x^2").unwrap(),
            Term::Neg(Box::new(Term::pow(Term::var("x"), 2)))
        );
    }

    #[test]
    fn parenthesised_term_versus_formula() {
        let f = parse_formula("(x + 1) > 0").unwrap();
        assert!(matches!(f, Formula::Cmp(_, CmpOp::Gt, _)));
        let g = parse_formula("(x > 0 & y > 0) -> z >= 1").unwrap();
        assert!(matches!(g, Formula::Implies(_, _)));
    }

    #[test]
    fn quantifiers_and_modalities_rejected() {
        assert!(parse_formula("forall x x > 0").is_err());
        assert!(parse_formula("[x := 1] x > 0").is_err());
    }

    #[test]
    fn exponent_must_be_natural() {
        let e = parse_term("x ^ 1.5").unwrap_err();
        assert!(e.to_string().contains("non-negative integer exponent"));
        assert!(parse_term("x / 0").is_err());
        assert!(parse_term("x / (0 + y)").is_ok());
    }

    #[test]
    fn program_structure() {
        let p = parse_program("(?x > 0; a := 1) ++ a := *; {x' = a & x >= 0}").unwrap();
        match p {
            Program::Choice(_, rhs) => assert!(matches!(*rhs, Program::Seq(_, _))),
            other => panic!("unexpected {other:?}"),
        }
        let l = parse_program("{a := a + 1}*").unwrap();
        assert!(matches!(l, Program::Loop(_)));
    }

    #[test]
    fn error_positions() {
        let err = parse_model("init: v >= 0;\nctrl: a := ;\nplant: {p'=v}; safe: true").unwrap_err();
        match err {
            DslError::Syntax(e) => {
                assert_eq!((e.line, e.col), (2, 12));
            }
            other => panic!("{other:?}"),
        }
    }
}

use super::{Formula, Model, Ode, Program, Term};

fn wrap(s: String, needed: u8, actual: u8, open: &str, close: &str) -> String {
    if actual < needed {
        format!("{open}{s}{close}")
    } else {
        s
    }
}

fn term_prec(t: &Term) -> (String, u8) {
    match t {
        Term::Num(x) => {
            if x.is_sign_negative() {
                (format!("(-{})", -x), 5)
            } else {
                (format!("{x}"), 5)
            }
        }
        Term::Var(v) => (v.clone(), 5),
        Term::Add(a, b) => (format!("{} + {}", term_at(a, 1), term_at(b, 2)), 1),
        Term::Sub(a, b) => (format!("{} - {}", term_at(a, 1), term_at(b, 2)), 1),
        Term::Mul(a, b) => (format!("{} * {}", term_at(a, 2), term_at(b, 3)), 2),
        Term::Div(a, b) => (format!("{} / {}", term_at(a, 2), term_at(b, 3)), 2),
        Term::Neg(a) => (format!("-{}", term_at(a, 3)), 3),
        Term::Pow(a, n) => (format!("{}^{}", term_at(a, 5), n), 4),
    }
}

fn term_at(t: &Term, needed: u8) -> String {
    let (s, p) = term_prec(t);
    wrap(s, needed, p, "(", ")")
}

pub(crate) fn term_to_string(t: &Term) -> String {
    term_prec(t).0
}

fn formula_prec(f: &Formula) -> (String, u8) {
    match f {
        Formula::True => ("true".into(), 5),
        Formula::False => ("false".into(), 5),
        Formula::Cmp(a, op, b) => (
            format!("{} {} {}", term_to_string(a), op.symbol(), term_to_string(b)),
            5,
        ),
        Formula::Implies(a, b) => (format!("{} -> {}", formula_at(a, 2), formula_at(b, 1)), 1),
        Formula::Or(a, b) => (format!("{} | {}", formula_at(a, 2), formula_at(b, 3)), 2),
        Formula::And(a, b) => (format!("{} & {}", formula_at(a, 3), formula_at(b, 4)), 3),
        Formula::Not(a) => (format!("!{}", formula_at(a, 4)), 4),
    }
}

fn formula_at(f: &Formula, needed: u8) -> String {
    let (s, p) = formula_prec(f);
    wrap(s, needed, p, "(", ")")
}

pub(crate) fn formula_to_string(f: &Formula) -> String {
    formula_prec(f).0
}

pub(crate) fn ode_to_string(ode: &Ode) -> String {
    let eqs: Vec<String> = ode
        .equations
        .iter()
        .map(|(v, t)| format!("{v}' = {}", term_to_string(t)))
        .collect();
    match &ode.domain {
        Formula::True => format!("{{{}}}", eqs.join(", ")),
        d => format!("{{{} & {}}}", eqs.join(", "), formula_to_string(d)),
    }
}

fn program_prec(p: &Program) -> (String, u8) {
    match p {
        Program::Assign(v, t) => (format!("{v} := {}", term_to_string(t)), 5),
        Program::NondetAssign(v) => (format!("{v} := *"), 5),
        // a test's formula extends to the next program operator, never past it
        Program::Test(f) => (format!("?{}", formula_to_string(f)), 5),
        Program::Ode(ode) => (ode_to_string(ode), 5),
        Program::Loop(a) => (format!("{{{}}}*", program_to_string(a)), 5),
        Program::Choice(a, b) => (format!("{} ++ {}", program_at(a, 1), program_at(b, 2)), 1),
        Program::Seq(a, b) => (format!("{}; {}", program_at(a, 2), program_at(b, 3)), 2),
    }
}

fn program_at(p: &Program, needed: u8) -> String {
    let (s, prec) = program_prec(p);
    wrap(s, needed, prec, "{", "}")
}

pub(crate) fn program_to_string(p: &Program) -> String {
    program_prec(p).0
}

/// Renders a model in the canonical section order accepted by [`super::parse_model`].
pub fn print_model(m: &Model) -> String {
    let mut sections = Vec::new();
    if !m.name.is_empty() {
        sections.push(format!("name: {}", m.name));
    }
    sections.push(format!("init: {}", m.init));
    sections.push(format!("ctrl: {}", m.ctrl));
    sections.push(format!("plant: {}", m.plant));
    sections.push(format!("safe: {}", m.safe));
    if let Some(c) = &m.clock {
        sections.push(format!("clock: {c}"));
    }
    if !m.constants.is_empty() {
        let list: Vec<String> = m.constants.iter().map(|(k, v)| format!("{k} = {v}")).collect();
        sections.push(format!("constants: {}", list.join(", ")));
    }
    sections.join(";\n")
}

#[cfg(test)]
mod tests {
    use super::super::{parse_formula, parse_program, parse_term};

    #[test]
    fn minimal_parentheses() {
        let t = parse_term("(a + b) * c - (d - e)").unwrap();
        assert_eq!(t.to_string(), "(a + b) * c - (d - e)");
        let t = parse_term("a - b - c").unwrap();
        assert_eq!(t.to_string(), "a - b - c");
        assert_eq!(parse_term("-3 * x").unwrap().to_string(), "(-3) * x");
    }

    #[test]
    fn loops_are_braced() {
        let p = parse_program("a := 1 ++ b := 2; c := *").unwrap();
        assert_eq!(p.to_string(), "a := 1 ++ b := 2; c := *");
        let p = parse_program("{a := 1 ++ b := 2}; c := *").unwrap();
        assert_eq!(p.to_string(), "{a := 1 ++ b := 2}; c := *");
        let p = parse_program("{a := a + 1}*").unwrap();
        assert_eq!(p.to_string(), "{a := a + 1}*");
    }

    #[test]
    fn implication_is_right_associative() {
        let f = parse_formula("(a > 0 -> b > 0) -> c > 0").unwrap();
        assert_eq!(f.to_string(), "(a > 0 -> b > 0) -> c > 0");
        let g = parse_formula("a > 0 -> b > 0 -> c > 0").unwrap();
        assert_eq!(g.to_string(), "a > 0 -> b > 0 -> c > 0");
    }
}

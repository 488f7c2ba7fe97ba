use serde::{Deserialize, Serialize};

use super::{SemanticsError, State};
use crate::dsl::algebra::{affine_numeric, EvalError};
use crate::dsl::{CmpOp, Formula, Ode, Term};

/// Endpoint drift allowed when checking the evolution domain.
const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMethod {
    Rk4,
    ClosedForm,
    /// Closed form when the system is nilpotent-linear in the start state,
    /// otherwise RK4.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub method: FlowMethod,
    pub step_size: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            method: FlowMethod::Auto,
            step_size: 1e-3,
        }
    }
}

impl FlowConfig {
    pub fn rk4(step_size: f64) -> FlowConfig {
        FlowConfig {
            method: FlowMethod::Rk4,
            step_size,
        }
    }

    pub fn closed_form() -> FlowConfig {
        FlowConfig {
            method: FlowMethod::ClosedForm,
            ..FlowConfig::default()
        }
    }
}

enum Node {
    Const(f64),
    Slot(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Slot(i) => x[*i],
            Node::Neg(a) => -a.eval(x),
            Node::Add(a, b) => a.eval(x) + b.eval(x),
            Node::Sub(a, b) => a.eval(x) - b.eval(x),
            Node::Mul(a, b) => a.eval(x) * b.eval(x),
            Node::Div(a, b) => a.eval(x) / b.eval(x),
            Node::Pow(a, n) => a.eval(x).powi(*n),
        }
    }
}

enum CForm {
    Const(bool),
    Cmp(Node, CmpOp, Node),
    Not(Box<CForm>),
    And(Box<CForm>, Box<CForm>),
    Or(Box<CForm>, Box<CForm>),
    Implies(Box<CForm>, Box<CForm>),
}

impl CForm {
    fn margin(&self, x: &[f64]) -> f64 {
        match self {
            CForm::Const(true) => f64::INFINITY,
            CForm::Const(false) => f64::NEG_INFINITY,
            CForm::Cmp(a, op, b) => {
                let (l, r) = (a.eval(x), b.eval(x));
                match op {
                    CmpOp::Ge | CmpOp::Gt => l - r,
                    CmpOp::Le | CmpOp::Lt => r - l,
                    CmpOp::Eq => -(l - r).abs(),
                    CmpOp::Ne => (l - r).abs(),
                }
            }
            CForm::Not(a) => -a.margin(x),
            CForm::And(a, b) => a.margin(x).min(b.margin(x)),
            CForm::Or(a, b) => a.margin(x).max(b.margin(x)),
            CForm::Implies(a, b) => (-a.margin(x)).max(b.margin(x)),
        }
    }
}

/// Variable layout shared by compiled terms: ODE variables first, then
/// every other symbol with its value frozen from the start state.
struct Layout {
    names: Vec<String>,
    n_ode: usize,
    values: Vec<f64>,
}

impl Layout {
    fn new(ode: &Ode, s: &State) -> Result<Layout, SemanticsError> {
        let mut names: Vec<String> = ode.vars().map(str::to_string).collect();
        let n_ode = names.len();
        for v in ode.free_vars() {
            if !names.contains(&v) {
                names.push(v);
            }
        }
        let values = names
            .iter()
            .map(|n| s.get(n).ok_or_else(|| EvalError::Unbound(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Layout { names, n_ode, values })
    }

    fn slot(&self, v: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == v)
            .expect("layout covers every free variable")
    }

    fn term(&self, t: &Term) -> Node {
        match t {
            Term::Num(c) => Node::Const(*c),
            Term::Var(v) => Node::Slot(self.slot(v)),
            Term::Neg(a) => Node::Neg(Box::new(self.term(a))),
            Term::Add(a, b) => Node::Add(Box::new(self.term(a)), Box::new(self.term(b))),
            Term::Sub(a, b) => Node::Sub(Box::new(self.term(a)), Box::new(self.term(b))),
            Term::Mul(a, b) => Node::Mul(Box::new(self.term(a)), Box::new(self.term(b))),
            Term::Div(a, b) => Node::Div(Box::new(self.term(a)), Box::new(self.term(b))),
            Term::Pow(a, n) => Node::Pow(Box::new(self.term(a)), *n as i32),
        }
    }

    fn formula(&self, f: &Formula) -> CForm {
        match f {
            Formula::True => CForm::Const(true),
            Formula::False => CForm::Const(false),
            Formula::Cmp(a, op, b) => CForm::Cmp(self.term(a), *op, self.term(b)),
            Formula::Not(a) => CForm::Not(Box::new(self.formula(a))),
            Formula::And(a, b) => CForm::And(Box::new(self.formula(a)), Box::new(self.formula(b))),
            Formula::Or(a, b) => CForm::Or(Box::new(self.formula(a)), Box::new(self.formula(b))),
            Formula::Implies(a, b) => CForm::Implies(Box::new(self.formula(a)), Box::new(self.formula(b))),
        }
    }

    fn write_back(&self, s: &State, x: &[f64]) -> Result<State, SemanticsError> {
        let mut out = s.clone();
        for (name, v) in self.names.iter().zip(x).take(self.n_ode) {
            if !v.is_finite() {
                return Err(EvalError::DivisionByZero.into());
            }
            out.set(name.clone(), *v);
        }
        Ok(out)
    }
}

/// Classic fourth-order Runge-Kutta on `x' = f(x)` with `n` equal steps.
pub fn rk4_integrate(f: &impl Fn(&[f64], &mut [f64]), x: &mut [f64], duration: f64, n: usize) {
    let dim = x.len();
    let h = duration / n as f64;
    let mut k = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    let mut tmp = vec![0.0; dim];
    for _ in 0..n {
        f(x, &mut k[0]);
        for (stage, c) in [(1, 0.5 * h), (2, 0.5 * h), (3, h)] {
            for i in 0..dim {
                tmp[i] = x[i] + c * k[stage - 1][i];
            }
            f(&tmp, &mut k[stage]);
        }
        for i in 0..dim {
            x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
    }
}

struct Rk4Solver {
    layout: Layout,
    rhs: Vec<Node>,
}

impl Rk4Solver {
    fn new(ode: &Ode, layout: Layout) -> Rk4Solver {
        let rhs = ode.equations.iter().map(|(_, t)| layout.term(t)).collect();
        Rk4Solver { layout, rhs }
    }

    /// Advances the ODE prefix of the slot vector `x` by `h`.
    fn step(&self, x: &mut [f64], h: f64, scratch: &mut Scratch) {
        let n = self.layout.n_ode;
        let Scratch { k, tmp } = scratch;
        let eval = |y: &[f64], out: &mut [f64]| {
            for (o, r) in out.iter_mut().zip(&self.rhs) {
                *o = r.eval(y);
            }
        };
        tmp.copy_from_slice(x);
        eval(tmp, &mut k[0]);
        for (stage, c) in [(1, 0.5 * h), (2, 0.5 * h), (3, h)] {
            for i in 0..n {
                tmp[i] = x[i] + c * k[stage - 1][i];
            }
            eval(tmp, &mut k[stage]);
        }
        for i in 0..n {
            x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
    }
}

struct Scratch {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(n_ode: usize, n_all: usize) -> Scratch {
        Scratch {
            k: [vec![0.0; n_ode], vec![0.0; n_ode], vec![0.0; n_ode], vec![0.0; n_ode]],
            tmp: vec![0.0; n_all],
        }
    }
}

struct ClosedForm {
    /// Polynomial coefficients per ODE variable, lowest power first.
    coeffs: Vec<Vec<f64>>,
    /// Whether every domain atom is affine in time along this solution.
    linear_domain: bool,
}

impl ClosedForm {
    fn at(&self, tau: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in self.coeffs.iter().rev() {
                acc = acc * tau + c[i];
            }
            *o = acc;
        }
    }
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| x.abs() <= 1e-12)
}

type Affine = (Vec<Vec<f64>>, Vec<f64>);

/// Affine decomposition `x' = A x + b` in the start state, if the right-hand
/// sides are affine in the ODE variables.
fn decompose(ode: &Ode, s: &State) -> Result<Option<Affine>, SemanticsError> {
    let vars: Vec<&str> = ode.vars().collect();
    let lookup = |v: &str| s.get(v);
    let mut a = Vec::with_capacity(vars.len());
    let mut b = Vec::with_capacity(vars.len());
    for (_, rhs) in &ode.equations {
        match affine_numeric(rhs, &vars, &lookup)? {
            Some((row, c)) => {
                a.push(row);
                b.push(c);
            }
            None => return Ok(None),
        }
    }
    Ok(Some((a, b)))
}

fn nilpotent(a: &[Vec<f64>]) -> bool {
    let n = a.len();
    // A^n = 0 iff A^n e_j = 0 for every basis vector
    (0..n).all(|j| {
        let mut v: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
        for _ in 0..n {
            v = mat_vec(a, &v);
        }
        is_zero(&v)
    })
}

/// Whether `ode` is linear in its own variables with a nilpotent coefficient
/// matrix once the other symbols take their values from `s`.
pub fn is_nilpotent_linear(ode: &Ode, s: &State) -> Result<bool, SemanticsError> {
    Ok(match decompose(ode, s)? {
        Some((a, _)) => nilpotent(&a),
        None => false,
    })
}

fn closed_form(ode: &Ode, s: &State, layout: &Layout) -> Result<Option<ClosedForm>, SemanticsError> {
    let Some((a, b)) = decompose(ode, s)? else {
        return Ok(None);
    };
    if !nilpotent(&a) {
        return Ok(None);
    }
    let n = a.len();
    let x0: Vec<f64> = layout.values[..n].to_vec();
    let mut coeffs = vec![x0.clone()];
    let mut ax = x0;
    let mut ab = b;
    let mut fact = 1.0;
    // tau^k carries (A^k x0 + A^(k-1) b) / k!; A^n = 0 ends the series
    for k in 1..=n {
        fact *= k as f64;
        ax = mat_vec(&a, &ax);
        coeffs.push(ax.iter().zip(&ab).map(|(x, y)| (x + y) / fact).collect());
        ab = mat_vec(&a, &ab);
    }
    while coeffs.len() > 1 && is_zero(coeffs.last().expect("non-empty")) {
        coeffs.pop();
    }
    let linear_domain = domain_is_time_linear(ode, &coeffs, s)?;
    Ok(Some(ClosedForm { coeffs, linear_domain }))
}

/// True when every atom of the domain is affine in ODE variables that
/// themselves move affinely in time, so endpoint checks are exact.
fn domain_is_time_linear(ode: &Ode, coeffs: &[Vec<f64>], s: &State) -> Result<bool, SemanticsError> {
    let vars: Vec<&str> = ode.vars().collect();
    let lookup = |v: &str| s.get(v);
    fn atoms<'a>(f: &'a Formula, out: &mut Vec<(&'a Term, &'a Term)>) {
        match f {
            Formula::True | Formula::False => {}
            Formula::Cmp(a, _, b) => out.push((a, b)),
            Formula::Not(a) => atoms(a, out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                atoms(a, out);
                atoms(b, out);
            }
        }
    }
    let mut list = Vec::new();
    atoms(&ode.domain, &mut list);
    for (l, r) in list {
        let diff = Term::sub(l.clone(), r.clone());
        let Some((row, _)) = affine_numeric(&diff, &vars, &lookup)? else {
            return Ok(false);
        };
        for (i, c) in row.iter().enumerate() {
            let degree_ok = coeffs.iter().skip(2).all(|k| k[i].abs() <= 1e-12);
            if *c != 0.0 && !degree_ok {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn steps_for(duration: f64, h: f64) -> usize {
    ((duration / h) - 1e-9).ceil().max(1.0) as usize
}

enum Solver {
    Rk4(Rk4Solver),
    Closed(ClosedForm, Layout),
}

fn prepare(ode: &Ode, s: &State, duration: f64, cfg: &FlowConfig) -> Result<(Solver, CForm), SemanticsError> {
    if duration < 0.0 {
        return Err(SemanticsError::NegativeDuration(duration));
    }
    if cfg.step_size.is_nan() || cfg.step_size <= 0.0 {
        return Err(SemanticsError::InvalidStepSize(cfg.step_size));
    }
    let layout = Layout::new(ode, s)?;
    let domain = layout.formula(&ode.domain);
    let solver = match cfg.method {
        FlowMethod::Rk4 => Solver::Rk4(Rk4Solver::new(ode, layout)),
        FlowMethod::ClosedForm => match closed_form(ode, s, &layout)? {
            Some(cf) => Solver::Closed(cf, layout),
            None => return Err(SemanticsError::NotNilpotent),
        },
        FlowMethod::Auto => match closed_form(ode, s, &layout)? {
            Some(cf) => Solver::Closed(cf, layout),
            None => Solver::Rk4(Rk4Solver::new(ode, layout)),
        },
    };
    Ok((solver, domain))
}

fn check_domain(domain: &CForm, x: &[f64], time: f64) -> Result<(), SemanticsError> {
    if domain.margin(x) >= -DOMAIN_SLACK {
        Ok(())
    } else {
        Err(SemanticsError::DomainViolation { time })
    }
}

/// State after following `ode` from `s` for `duration`, checking the
/// evolution domain at every step and both endpoints.
pub fn flow(ode: &Ode, s: &State, duration: f64, cfg: &FlowConfig) -> Result<State, SemanticsError> {
    let mut traj = run(ode, s, duration, cfg, None)?;
    Ok(traj.pop().expect("trajectory has an endpoint").1)
}

/// States at `points + 1` equally spaced times in `[0, duration]`.
pub fn flow_trajectory(
    ode: &Ode,
    s: &State,
    duration: f64,
    cfg: &FlowConfig,
    points: usize,
) -> Result<Vec<(f64, State)>, SemanticsError> {
    run(ode, s, duration, cfg, Some(points.max(1)))
}

fn run(
    ode: &Ode,
    s: &State,
    duration: f64,
    cfg: &FlowConfig,
    points: Option<usize>,
) -> Result<Vec<(f64, State)>, SemanticsError> {
    let (solver, domain) = prepare(ode, s, duration, cfg)?;
    match solver {
        Solver::Closed(cf, layout) => {
            let mut x = layout.values.clone();
            check_domain(&domain, &x, 0.0)?;
            let n_ode = layout.n_ode;
            let mut out = Vec::new();
            let record = |x: &[f64], t: f64, out: &mut Vec<(f64, State)>| -> Result<(), SemanticsError> {
                out.push((t, layout.write_back(s, x)?));
                Ok(())
            };
            if points.is_some() {
                record(&x, 0.0, &mut out)?;
            }
            if duration == 0.0 {
                if out.is_empty() {
                    record(&x, 0.0, &mut out)?;
                }
                return Ok(out);
            }
            let n_check = if cf.linear_domain || matches!(ode.domain, Formula::True) {
                1
            } else {
                steps_for(duration, cfg.step_size)
            };
            for i in 1..=n_check {
                let t = duration * i as f64 / n_check as f64;
                cf.at(t, &mut x[..n_ode]);
                check_domain(&domain, &x, t)?;
            }
            if let Some(p) = points {
                for i in 1..=p {
                    let t = duration * i as f64 / p as f64;
                    cf.at(t, &mut x[..n_ode]);
                    record(&x, t, &mut out)?;
                }
            } else {
                cf.at(duration, &mut x[..n_ode]);
                record(&x, duration, &mut out)?;
            }
            Ok(out)
        }
        Solver::Rk4(rk) => {
            let mut x = rk.layout.values.clone();
            check_domain(&domain, &x, 0.0)?;
            let mut out = vec![(0.0, rk.layout.write_back(s, &x)?)];
            if duration == 0.0 {
                return Ok(out);
            }
            let n = steps_for(duration, cfg.step_size);
            let h = duration / n as f64;
            let mut scratch = Scratch::new(rk.layout.n_ode, x.len());
            let p = points.unwrap_or(1);
            // record whenever the step index crosses the next sample boundary
            let mut next_sample = 1usize;
            for i in 1..=n {
                rk.step(&mut x, h, &mut scratch);
                let t = h * i as f64;
                check_domain(&domain, &x, t)?;
                while next_sample <= p && i * p >= next_sample * n {
                    out.push((t, rk.layout.write_back(s, &x)?));
                    next_sample += 1;
                }
            }
            if points.is_none() {
                out.remove(0);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;
    use crate::dsl::Program;

    fn ode(src: &str) -> Ode {
        match parse_program(src).unwrap() {
            Program::Ode(o) => o,
            _ => panic!("not an ODE"),
        }
    }

    #[test]
    fn double_integrator_closed_form() {
        let o = ode("{p' = v, v' = a}");
        let s = State::from_pairs([("p", 0.0), ("v", 0.0), ("a", 1.0)]);
        let end = flow(&o, &s, 2.0, &FlowConfig::closed_form()).unwrap();
        assert_eq!(end.get("p"), Some(2.0));
        assert_eq!(end.get("v"), Some(2.0));
        assert_eq!(end.get("a"), Some(1.0));
    }

    #[test]
    fn rotation_needs_rk4() {
        let o = ode("{x' = -y, y' = x}");
        let s = State::from_pairs([("x", 1.0), ("y", 0.0)]);
        assert_eq!(
            flow(&o, &s, 1.0, &FlowConfig::closed_form()).unwrap_err(),
            SemanticsError::NotNilpotent
        );
        let end = flow(&o, &s, std::f64::consts::FRAC_PI_2, &FlowConfig::rk4(1e-3)).unwrap();
        assert!(end.value("x").abs() < 1e-6);
        assert!((end.value("y") - 1.0).abs() < 1e-6);
    }

    #[test]
    fn domain_violation_reports_time() {
        let o = ode("{x' = 1 & x <= 1}");
        let s = State::from_pairs([("x", 0.0)]);
        match flow(&o, &s, 2.0, &FlowConfig::rk4(0.01)).unwrap_err() {
            SemanticsError::DomainViolation { time } => assert!((time - 1.01).abs() < 1e-9),
            e => panic!("{e:?}"),
        }
        assert!(flow(&o, &s, 1.0, &FlowConfig::closed_form()).is_ok());
        assert!(flow(&o, &s, 1.5, &FlowConfig::closed_form()).is_err());
    }

    #[test]
    fn quadratic_domain_checked_between_endpoints() {
        // x dips below zero in the middle of the interval only
        let o = ode("{x' = v, v' = 2 & x >= 0}");
        let s = State::from_pairs([("x", 0.1), ("v", -1.0)]);
        assert!(matches!(
            flow(&o, &s, 1.0, &FlowConfig::closed_form()),
            Err(SemanticsError::DomainViolation { .. })
        ));
    }

    #[test]
    fn trajectory_samples() {
        let o = ode("{x' = 1}");
        let s = State::from_pairs([("x", 0.0)]);
        for cfg in [FlowConfig::rk4(0.01), FlowConfig::closed_form()] {
            let tr = flow_trajectory(&o, &s, 1.0, &cfg, 4).unwrap();
            let xs: Vec<f64> = tr.iter().map(|(_, st)| st.value("x")).collect();
            assert_eq!(xs.len(), 5);
            for (i, x) in xs.iter().enumerate() {
                assert!((x - i as f64 / 4.0).abs() < 1e-12);
            }
        }
    }
}

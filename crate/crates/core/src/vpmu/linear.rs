use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{input_combinations, TrajectoryData, VpmuError};
use crate::dsl::algebra::{poly_coeffs, simplify_formula, simplify_term, subst_term};
use crate::dsl::{CmpOp, Formula, Model, Ode, Program, Term};
use crate::semantics::{apply_effect, eval_formula, Discretization};

const TAU: &str = "'tau";

/// Fitted system `x' = A x + B u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

fn snap(c: f64) -> f64 {
    let r = c.round();
    if (c - r).abs() < 1e-9 {
        r
    } else {
        c
    }
}

fn linear_combination(coeffs: &[f64], vars: &[String], offset: f64) -> Term {
    let mut acc: Option<Term> = None;
    for (c, v) in coeffs.iter().zip(vars) {
        if *c == 0.0 {
            continue;
        }
        let mag = c.abs();
        let part = if mag == 1.0 {
            Term::var(v)
        } else {
            Term::mul(Term::Num(mag), Term::var(v))
        };
        acc = Some(match (acc, *c < 0.0) {
            (None, false) => part,
            (None, true) => Term::neg(part),
            (Some(a), false) => Term::add(a, part),
            (Some(a), true) => Term::sub(a, part),
        });
    }
    match (acc, offset) {
        (None, k) => Term::Num(k),
        (Some(a), 0.0) => a,
        (Some(a), k) if k < 0.0 => Term::sub(a, Term::Num(-k)),
        (Some(a), k) => Term::add(a, Term::Num(k)),
    }
}

impl LinearFit {
    fn mat_a(&self) -> DMatrix<f64> {
        let n = self.states.len();
        DMatrix::from_fn(n, n, |i, j| self.a[i][j])
    }

    /// Each state as a polynomial in elapsed time from symbolic start values
    /// under constant input `u`.
    fn solution(&self, u: &BTreeMap<String, f64>) -> BTreeMap<String, Term> {
        let n = self.states.len();
        let a = self.mat_a();
        let bu = DVector::from_fn(n, |i, _| {
            self.inputs
                .iter()
                .enumerate()
                .map(|(k, name)| self.b[i][k] * u[name])
                .sum::<f64>()
        });
        let mut power = DMatrix::<f64>::identity(n, n);
        // A^(k-1) B u while handling power k
        let mut forced = bu;
        let mut fact = 1.0;
        let mut polys: Vec<Option<Term>> = vec![None; n];
        for k in 0..=n {
            if k > 0 {
                fact *= k as f64;
            }
            for i in 0..n {
                let coeffs: Vec<f64> = (0..n).map(|j| power[(i, j)] / fact).collect();
                let offset = if k == 0 { 0.0 } else { forced[i] / fact };
                let c = linear_combination(&coeffs, &self.states, offset);
                if c == Term::Num(0.0) {
                    continue;
                }
                let term = match k {
                    0 => c,
                    1 => Term::mul(c, Term::var(TAU)),
                    _ => Term::mul(c, Term::pow(Term::var(TAU), k as u32)),
                };
                polys[i] = Some(match polys[i].take() {
                    None => term,
                    Some(p) => Term::add(p, term),
                });
            }
            power = &a * power;
            if k > 0 {
                forced = &a * forced;
            }
        }
        self.states
            .iter()
            .cloned()
            .zip(polys.into_iter().map(|p| p.unwrap_or(Term::Num(0.0))))
            .collect()
    }
}

/// `g(tau) op 0` for all `tau` in `[0, h]`, exact for degree at most two.
fn holds_throughout(g: &Term, op: CmpOp, h: f64) -> Result<Formula, VpmuError> {
    let cs = poly_coeffs(g, TAU).ok_or(VpmuError::DegreeTooHigh(usize::MAX))?;
    let at = |tau: f64| {
        let mut acc = cs[0].clone();
        for (k, c) in cs.iter().enumerate().skip(1) {
            acc = Term::add(acc, Term::mul(c.clone(), Term::Num(tau.powi(k as i32))));
        }
        simplify_term(&acc)
    };
    let zero = || Term::Num(0.0);
    let ends = Formula::and(Formula::cmp(at(0.0), op, zero()), Formula::cmp(at(h), op, zero()));
    let f = match cs.len() {
        1 => Formula::cmp(cs[0].clone(), op, zero()),
        2 => ends,
        3 => {
            let (c0, c1, c2) = (cs[0].clone(), cs[1].clone(), cs[2].clone());
            let vertex_ok = Formula::disj([
                Formula::cmp(c2.clone(), CmpOp::Le, zero()),
                Formula::cmp(c1.clone(), CmpOp::Ge, zero()),
                Formula::cmp(
                    Term::neg(c1.clone()),
                    CmpOp::Ge,
                    Term::mul(Term::Num(2.0 * h), c2.clone()),
                ),
                Formula::cmp(
                    Term::sub(Term::mul(Term::Num(4.0), Term::mul(c2, c0)), Term::pow(c1, 2)),
                    op,
                    zero(),
                ),
            ]);
            Formula::and(ends, vertex_ok)
        }
        n => return Err(VpmuError::DegreeTooHigh(n - 1)),
    };
    Ok(simplify_formula(&f))
}

fn fresh_clock(taken: &BTreeSet<String>) -> String {
    std::iter::once("t".to_string())
        .chain((1..).map(|i| format!("t{i}")))
        .find(|c| !taken.contains(c))
        .expect("some name is free")
}

/// Fits linear dynamics to the data and synthesises a time-triggered
/// controller over the input grid whose guards keep `safe` true for the
/// whole of each cycle of length `horizon`.
///
/// The input variables are the ones named in `inputs`; every other variable
/// that changes in the data is a state. The fitted matrix must be nilpotent
/// so that solutions are polynomial in time.
pub fn learn_linear_dynamics(
    data: &TrajectoryData,
    safe: &Formula,
    inputs: &Discretization,
    horizon: f64,
) -> Result<(Model, LinearFit), VpmuError> {
    if !(horizon > 0.0) {
        return Err(VpmuError::Invalid(format!("horizon must be positive, got {horizon}")));
    }
    let input_names: Vec<String> = inputs.grids.iter().map(|(v, _)| v.clone()).collect();
    let mut states = BTreeSet::new();
    for tr in data.transitions() {
        for (k, v) in tr.post.iter() {
            if input_names.contains(k) {
                continue;
            }
            if tr.pre.get(k).is_some_and(|p| (p - v).abs() > 1e-12) {
                states.insert(k.clone());
            }
        }
    }
    let states: Vec<String> = states.into_iter().collect();
    let vars: Vec<String> = states.iter().chain(&input_names).cloned().collect();
    let (n, k) = (states.len(), vars.len());
    if n == 0 {
        return Err(VpmuError::NoData);
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<Vec<f64>> = Vec::new();
    for tr in data.transitions() {
        if tr.duration <= 0.0 {
            continue;
        }
        let start = apply_effect(tr.action, tr.pre);
        let mut end = tr.post.clone();
        for (name, v) in tr.action {
            end.set(name.clone(), *v);
        }
        let (Some(row), Some(target)) = (
            vars.iter()
                .map(|v| Some(0.5 * (start.get(v)? + end.get(v)?)))
                .collect::<Option<Vec<f64>>>(),
            states
                .iter()
                .map(|v| Some((end.get(v)? - start.get(v)?) / tr.duration))
                .collect::<Option<Vec<f64>>>(),
        ) else {
            continue;
        };
        rows.push(row);
        targets.push(target);
    }
    if rows.is_empty() {
        return Err(VpmuError::NoData);
    }
    let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.rank(1e-10 * smax.max(f64::MIN_POSITIVE));
    if rank < k {
        return Err(VpmuError::RankDeficient { rank, needed: k });
    }
    let y = DMatrix::from_fn(rows.len(), n, |i, j| targets[i][j]);
    let sol = svd
        .solve(&y, 1e-12 * smax)
        .map_err(|e| VpmuError::Invalid(e.to_string()))?;
    // sol is k x n: column i holds the coefficients of state i
    let fit = LinearFit {
        states: states.clone(),
        inputs: input_names.clone(),
        a: (0..n).map(|i| (0..n).map(|j| snap(sol[(j, i)])).collect()).collect(),
        b: (0..n)
            .map(|i| (0..input_names.len()).map(|j| snap(sol[(n + j, i)])).collect())
            .collect(),
    };
    log::debug!("learned linear dynamics {fit:?}");

    let mut power = DMatrix::<f64>::identity(n, n);
    let a = fit.mat_a();
    for _ in 0..n {
        power = &a * power;
    }
    if power.amax() > 1e-9 {
        return Err(VpmuError::NotNilpotent);
    }

    let atoms: Vec<(Term, CmpOp)> = safe
        .conjuncts()
        .into_iter()
        .filter(|c| **c != Formula::True)
        .map(|c| match c {
            Formula::Cmp(l, op @ (CmpOp::Ge | CmpOp::Gt), r) => Ok((Term::sub(l.clone(), r.clone()), *op)),
            Formula::Cmp(l, op @ (CmpOp::Le | CmpOp::Lt), r) => Ok((Term::sub(r.clone(), l.clone()), op.flipped())),
            other => Err(VpmuError::UnsupportedSafe(other.to_string())),
        })
        .collect::<Result<_, _>>()?;

    let mut taken: BTreeSet<String> = vars.iter().cloned().collect();
    taken.extend(safe.free_vars());
    let clock = fresh_clock(&taken);
    let combos = input_combinations(inputs);
    let mut branches = Vec::new();
    let mut guards = Vec::new();
    for u in &combos {
        let mut map = fit.solution(u);
        for (name, v) in u {
            map.insert(name.clone(), Term::Num(*v));
        }
        let guard = Formula::conj(
            atoms
                .iter()
                .map(|(g, op)| holds_throughout(&simplify_term(&subst_term(g, &map)), *op, horizon))
                .collect::<Result<Vec<_>, _>>()?,
        );
        let guard = simplify_formula(&guard);
        if guard == Formula::False {
            continue;
        }
        let mut steps = Vec::new();
        if guard != Formula::True {
            steps.push(Program::Test(guard.clone()));
        }
        steps.extend(u.iter().map(|(name, v)| Program::assign(name.clone(), Term::Num(*v))));
        branches.push(Program::seq_all(steps));
        guards.push(guard);
    }
    if branches.is_empty() {
        return Err(VpmuError::NoSafeAction);
    }
    let ctrl = Program::seq(
        Program::choice_all(branches),
        Program::assign(clock.clone(), Term::Num(0.0)),
    );
    let mut equations: Vec<(String, Term)> = states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut coeffs = fit.a[i].clone();
            coeffs.extend(fit.b[i].iter().copied());
            (s.clone(), linear_combination(&coeffs, &vars, 0.0))
        })
        .collect();
    equations.push((clock.clone(), Term::Num(1.0)));
    let plant = Ode::new(
        equations,
        Formula::cmp(Term::var(&clock), CmpOp::Le, Term::Num(horizon)),
    );
    let init = simplify_formula(&Formula::and(safe.clone(), Formula::disj(guards)));
    let mut model = Model::new(init, ctrl, plant, safe.clone(), Some(clock))?;
    model.name = "learned".into();

    let admitted = data
        .episodes
        .iter()
        .flatten()
        .any(|s| eval_formula(&model.init, &s.state).unwrap_or(false));
    if !admitted {
        return Err(VpmuError::NoSafeAction);
    }
    Ok((model, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_formula;
    use crate::semantics::State;
    use crate::vpmu::Sample;

    pub(crate) fn double_integrator_data() -> TrajectoryData {
        let mut episodes = Vec::new();
        for e in 0..3 {
            let (mut p, mut v) = (e as f64, 0.5 - 0.25 * e as f64);
            let mut ep = Vec::new();
            for i in 0..8 {
                let u = [1.0, -1.0, 0.0][(i + e) % 3];
                ep.push(Sample {
                    state: State::from_pairs([("p", p), ("v", v), ("u", 0.0)]),
                    action: BTreeMap::from([("u".to_string(), u)]),
                    duration: 0.5,
                });
                p += v * 0.5 + 0.5 * u * 0.25;
                v += u * 0.5;
            }
            episodes.push(ep);
        }
        TrajectoryData { episodes }
    }

    fn grid() -> Discretization {
        Discretization::new().with_grid("u", vec![-1.0, 0.0, 1.0])
    }

    #[test]
    fn recovers_double_integrator() {
        let safe = parse_formula("v >= -2 & v <= 2").unwrap();
        let (m, fit) = learn_linear_dynamics(&double_integrator_data(), &safe, &grid(), 0.5).unwrap();
        assert_eq!(fit.states, vec!["p", "v"]);
        assert_eq!(fit.a, vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(fit.b, vec![vec![0.0], vec![1.0]]);
        assert_eq!(m.plant.rhs("p").unwrap().to_string(), "v");
        assert_eq!(m.plant.rhs("v").unwrap().to_string(), "u");
    }

    #[test]
    fn quadratic_margin_checks_the_vertex() {
        // p(tau) = p + v tau - tau^2 / 2 peaks inside the cycle when v > 0
        let g = Term::sub(
            Term::Num(3.0),
            Term::add(
                Term::add(Term::var("p"), Term::mul(Term::var("v"), Term::var(TAU))),
                Term::mul(Term::Num(-0.5), Term::pow(Term::var(TAU), 2)),
            ),
        );
        let f = holds_throughout(&g, CmpOp::Ge, 2.0).unwrap();
        // ends: p <= 3 and p + 2 v - 2 <= 3; peak p + v^2/2 at tau = v
        let s = |p: f64, v: f64| State::from_pairs([("p", p), ("v", v)]);
        assert!(eval_formula(&f, &s(2.0, 1.0)).unwrap());
        assert!(!eval_formula(&f, &s(2.0, 1.5)).unwrap());
        assert!(eval_formula(&f, &s(2.0, -1.0)).unwrap());
    }

    #[test]
    fn constant_data_is_rank_deficient() {
        let s = Sample {
            state: State::from_pairs([("p", 0.0), ("v", 1.0)]),
            action: BTreeMap::from([("u".to_string(), 0.0)]),
            duration: 1.0,
        };
        let mut s2 = s.clone();
        s2.state.set("p", 1.0);
        let data = TrajectoryData {
            episodes: vec![vec![s, s2]],
        };
        let safe = parse_formula("true").unwrap();
        assert!(matches!(
            learn_linear_dynamics(&data, &safe, &grid(), 1.0),
            Err(VpmuError::RankDeficient { .. })
        ));
    }
}

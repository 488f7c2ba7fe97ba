use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{constant_terms, rebuild, TrajectoryData, VpmuError};
use crate::dsl::algebra::{poly_coeffs, simplify_term, subst_formula, subst_ode, subst_program, subst_term};
use crate::dsl::{Model, Term};
use crate::semantics::{apply_effect, eval_formula, eval_term, State};

/// Replaces each bound parameter by its value everywhere and records the
/// binding in the model's constants.
///
/// Fails when a binding names something that is not a parameter, or when an
/// `init` conjunct that only mentions bound parameters and constants is false
/// under the binding.
pub fn instantiate_parameter(m: &Model, bindings: &BTreeMap<String, f64>) -> Result<Model, VpmuError> {
    let params = m.parameters();
    if let Some(k) = bindings.keys().find(|k| !params.contains(*k)) {
        return Err(VpmuError::NotAParameter(k.clone()));
    }
    let known = State::from_iter(m.constants.iter().chain(bindings.iter()).map(|(k, v)| (k.clone(), *v)));
    for c in m.init.conjuncts() {
        let fv = c.free_vars();
        let closed = fv.iter().all(|v| known.contains(v));
        let touched: Vec<&String> = fv.iter().filter(|v| bindings.contains_key(*v)).collect();
        if !closed || touched.is_empty() {
            continue;
        }
        if !eval_formula(c, &known).unwrap_or(false) {
            let binding = touched
                .iter()
                .map(|k| format!("{k} = {}", bindings[*k]))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(VpmuError::InitViolation {
                binding,
                constraint: c.to_string(),
            });
        }
    }
    let map = constant_terms(bindings);
    rebuild(m, |out| {
        out.init = subst_formula(&m.init, &map);
        out.ctrl = subst_program(&m.ctrl, &map);
        out.plant = subst_ode(&m.plant, &map);
        out.safe = subst_formula(&m.safe, &map);
        out.constants.extend(bindings.iter().map(|(k, v)| (k.clone(), *v)));
    })
}

/// Affine view of one plant equation in the fitted parameters.
struct Regression {
    var: String,
    base: Term,
    coeffs: Vec<Term>,
}

/// Fits every open parameter that occurs in the plant by least squares on
/// the recorded transitions, then instantiates the model with the fit.
///
/// Each equation `x' = base + sum_j c_j * p_j` contributes one row per
/// transition: the forward difference of `x` against the trapezoid average
/// of `base` and `c_j` at the two ends of the cycle. Returns the model
/// unchanged when the plant has no open parameters.
pub fn auto_instantiate(m: &Model, data: &TrajectoryData) -> Result<(Model, BTreeMap<String, f64>), VpmuError> {
    let targets: Vec<String> = m
        .open_parameters()
        .into_iter()
        .filter(|p| m.plant.equations.iter().any(|(_, rhs)| rhs.mentions(p)))
        .collect();
    if targets.is_empty() {
        return Ok((m.clone(), BTreeMap::new()));
    }
    if data.transition_count() == 0 {
        return Err(VpmuError::NoData);
    }

    let zero: BTreeMap<String, Term> = targets.iter().map(|p| (p.clone(), Term::Num(0.0))).collect();
    let mut regressions = Vec::new();
    for (var, rhs) in &m.plant.equations {
        if !targets.iter().any(|p| rhs.mentions(p)) {
            continue;
        }
        let mut coeffs = Vec::with_capacity(targets.len());
        for p in &targets {
            let not_affine = || VpmuError::NotAffine {
                var: var.clone(),
                param: p.clone(),
            };
            let cs = poly_coeffs(rhs, p).ok_or_else(not_affine)?;
            let c = match cs.len() {
                1 => Term::Num(0.0),
                2 => cs[1].clone(),
                _ => return Err(not_affine()),
            };
            if targets.iter().any(|q| c.mentions(q)) {
                return Err(not_affine());
            }
            coeffs.push(c);
        }
        regressions.push(Regression {
            var: var.clone(),
            base: simplify_term(&subst_term(rhs, &zero)),
            coeffs,
        });
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for tr in data.transitions() {
        if tr.duration <= 0.0 {
            continue;
        }
        let start = apply_effect(tr.action, &tr.pre.with_defaults(&m.constants));
        let mut end = tr.post.with_defaults(&m.constants);
        // controls hold their assigned value for the whole cycle
        for (k, v) in tr.action {
            end.set(k.clone(), *v);
        }
        for r in &regressions {
            let (Some(x0), Some(x1)) = (start.get(&r.var), end.get(&r.var)) else {
                continue;
            };
            let avg = |t: &Term| -> Result<f64, VpmuError> { Ok(0.5 * (eval_term(t, &start)? + eval_term(t, &end)?)) };
            rhs.push((x1 - x0) / tr.duration - avg(&r.base)?);
            rows.push(r.coeffs.iter().map(avg).collect::<Result<_, _>>()?);
        }
    }
    if rows.is_empty() {
        return Err(VpmuError::NoData);
    }

    let k = targets.len();
    let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let y = DVector::from_vec(rhs);
    for (j, p) in targets.iter().enumerate() {
        if x.column(j).norm() <= 1e-12 {
            return Err(VpmuError::Underdetermined(p.clone()));
        }
    }
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.rank(1e-10 * smax) < k {
        return Err(VpmuError::Underdetermined(targets.join(", ")));
    }
    let sol = svd
        .solve(&y, 1e-12 * smax)
        .map_err(|e| VpmuError::Invalid(e.to_string()))?;
    let fit: BTreeMap<String, f64> = targets.iter().cloned().zip(sol.iter().copied()).collect();
    log::debug!("fitted plant parameters {fit:?}");
    Ok((instantiate_parameter(m, &fit)?, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;
    use crate::vpmu::Sample;

    fn example1() -> Model {
        parse_model("init: v >= 0 & A > 0; ctrl: a := A ++ a := 0; plant: {p' = v, v' = a}; safe: v >= 0").unwrap()
    }

    #[test]
    fn binding_replaces_and_records() {
        let m = instantiate_parameter(&example1(), &BTreeMap::from([("A".into(), 2.0)])).unwrap();
        assert_eq!(m.ctrl.to_string(), "a := 2 ++ a := 0");
        assert_eq!(m.constants["A"], 2.0);
        assert!(m.open_parameters().is_empty());
    }

    #[test]
    fn binding_against_init_is_rejected() {
        let err = instantiate_parameter(&example1(), &BTreeMap::from([("A".into(), -1.0)])).unwrap_err();
        assert!(err.to_string().contains("violates A > 0 from init"), "{err}");
        let err = instantiate_parameter(&example1(), &BTreeMap::from([("v".into(), 1.0)])).unwrap_err();
        assert_eq!(err, VpmuError::NotAParameter("v".into()));
    }

    #[test]
    fn gain_is_recovered_exactly() {
        let m = parse_model("init: k > 0; ctrl: a := 1 ++ a := -1; plant: {p' = v, v' = k * a}; safe: true").unwrap();
        // closed-form samples with k = 1.5
        let mut ep = Vec::new();
        let (mut p, mut v) = (0.0, 0.0);
        for i in 0..6 {
            let a = if i % 2 == 0 { 1.0 } else { -1.0 };
            ep.push(Sample {
                state: State::from_pairs([("p", p), ("v", v), ("a", 0.0)]),
                action: BTreeMap::from([("a".into(), a)]),
                duration: 0.25,
            });
            p += v * 0.25 + 0.5 * 1.5 * a * 0.0625;
            v += 1.5 * a * 0.25;
        }
        let data = TrajectoryData { episodes: vec![ep] };
        let (_, fit) = auto_instantiate(&m, &data).unwrap();
        assert!((fit["k"] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn unexcited_parameter_is_reported() {
        let m = parse_model("init: k > 0; ctrl: a := 0; plant: {v' = k * a}; safe: true").unwrap();
        let s = |v| Sample {
            state: State::from_pairs([("v", v), ("a", 0.0)]),
            action: BTreeMap::from([("a".into(), 0.0)]),
            duration: 1.0,
        };
        let data = TrajectoryData {
            episodes: vec![vec![s(0.0), s(0.0)]],
        };
        assert_eq!(
            auto_instantiate(&m, &data).unwrap_err(),
            VpmuError::Underdetermined("k".into())
        );
    }
}

use super::{rebuild, VpmuError};
use crate::dsl::algebra::{map_atoms, map_tests, nnf};
use crate::dsl::{CmpOp, Formula, Model, Term};

/// `(a - x)` or `(x - a)` with `a` free of both coordinates.
fn offset(t: &Term, coord: &str, other: &str) -> Option<Term> {
    let Term::Sub(l, r) = t else { return None };
    let clean = |u: &Term| !u.mentions(coord) && !u.mentions(other);
    match (&**l, &**r) {
        (Term::Var(v), a) | (a, Term::Var(v)) if v == coord && clean(a) => Some(a.clone()),
        _ => None,
    }
}

/// Matches `(a - x)^2 + (b - y)^2` in either summand order and returns `(a, b)`.
fn squared_distance(t: &Term, x: &str, y: &str) -> Option<(Term, Term)> {
    let Term::Add(p, q) = t else { return None };
    let (Term::Pow(d1, 2), Term::Pow(d2, 2)) = (&**p, &**q) else {
        return None;
    };
    if let (Some(a), Some(b)) = (offset(d1, x, y), offset(d2, y, x)) {
        return Some((a, b));
    }
    if let (Some(b), Some(a)) = (offset(d1, y, x), offset(d2, x, y)) {
        return Some((a, b));
    }
    None
}

/// Squared distance from the point `(a, b)` to the circle through `(x, y)`
/// about the origin is at least `q`, without square roots.
fn separation(a: Term, b: Term, x: &str, y: &str, op: CmpOp, q: Term) -> Formula {
    let rho2 = Term::add(Term::pow(a, 2), Term::pow(b, 2));
    let r2 = Term::add(Term::pow(Term::var(x), 2), Term::pow(Term::var(y), 2));
    let l = Term::sub(Term::add(rho2.clone(), r2.clone()), q);
    Formula::and(
        Formula::cmp(l.clone(), op, Term::Num(0.0)),
        Formula::cmp(Term::pow(l, 2), op, Term::mul(Term::Num(4.0), Term::mul(rho2, r2))),
    )
}

/// Turns a static point `(x_var, y_var)` into one rotating about the origin
/// and rewrites every controller separation guard against it into separation
/// from the point's whole orbit.
///
/// A guard is recognised in the form `(a - x)^2 + (b - y)^2 > q` (or `>=`,
/// or mirrored). Any other guard mentioning the coordinates is rejected.
pub fn static_to_circular(m: &Model, x_var: &str, y_var: &str) -> Result<Model, VpmuError> {
    for v in [x_var, y_var] {
        if !m.all_vars().contains(v) {
            return Err(VpmuError::Invalid(format!("`{v}` does not occur in the model")));
        }
        if m.plant.has_var(v) || m.control_vars().contains(v) {
            return Err(VpmuError::Invalid(format!("`{v}` is not static")));
        }
    }
    let mut rewritten = 0usize;
    let ctrl = map_tests(&m.ctrl, &mut |f| {
        if !f.mentions(x_var) && !f.mentions(y_var) {
            return Ok(f.clone());
        }
        map_atoms(&nnf(f), &mut |l, op, r| {
            let shaped = match op {
                CmpOp::Gt | CmpOp::Ge => squared_distance(l, x_var, y_var).map(|ab| (ab, op, r)),
                CmpOp::Lt | CmpOp::Le => squared_distance(r, x_var, y_var).map(|ab| (ab, op.flipped(), l)),
                _ => None,
            };
            match shaped {
                Some(((a, b), op, q)) if !q.mentions(x_var) && !q.mentions(y_var) => {
                    rewritten += 1;
                    Ok(separation(a, b, x_var, y_var, op, q.clone()))
                }
                _ if l.mentions(x_var) || l.mentions(y_var) || r.mentions(x_var) || r.mentions(y_var) => {
                    Err(VpmuError::Invalid(format!(
                        "guard `{f}` uses `{x_var}`/`{y_var}` outside a separation constraint"
                    )))
                }
                _ => Ok(Formula::cmp(l.clone(), op, r.clone())),
            }
        })
    })?;
    if rewritten == 0 {
        log::warn!("no separation guard against ({x_var}, {y_var}) found");
    }
    rebuild(m, |out| {
        out.ctrl = ctrl;
        out.plant
            .equations
            .push((x_var.to_string(), Term::neg(Term::var(y_var))));
        out.plant.equations.push((y_var.to_string(), Term::var(x_var)));
    })
}

//! Interval bounds on terms, used to decide which way a guard moves as a
//! disturbance parameter varies.

use std::collections::BTreeMap;

use crate::dsl::{CmpOp, Formula, Term};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn prod(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl Interval {
    pub const ALL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Interval {
        Interval { lo: x, hi: x }
    }

    fn add(self, o: Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }

    fn mul(self, o: Interval) -> Interval {
        let c = [
            prod(self.lo, o.lo),
            prod(self.lo, o.hi),
            prod(self.hi, o.lo),
            prod(self.hi, o.hi),
        ];
        Interval::new(
            c.iter().copied().fold(f64::INFINITY, f64::min),
            c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Reciprocal over the nonzero part: a term is only defined where its
    /// denominators are, so a range touching zero at one end stays one-signed.
    fn recip(self) -> Interval {
        if self.lo >= 0.0 && self.hi > 0.0 {
            Interval::new(
                1.0 / self.hi,
                if self.lo == 0.0 { f64::INFINITY } else { 1.0 / self.lo },
            )
        } else if self.hi <= 0.0 && self.lo < 0.0 {
            Interval::new(
                if self.hi == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    1.0 / self.hi
                },
                1.0 / self.lo,
            )
        } else {
            Interval::ALL
        }
    }

    fn powi(self, n: u32) -> Interval {
        if n == 0 {
            return Interval::point(1.0);
        }
        let (a, b) = (self.lo.powi(n as i32), self.hi.powi(n as i32));
        if n % 2 == 1 || self.lo >= 0.0 {
            Interval::new(a, b)
        } else if self.hi <= 0.0 {
            Interval::new(b, a)
        } else {
            Interval::new(0.0, a.max(b))
        }
    }

    pub fn meet(self, o: Interval) -> Interval {
        Interval::new(self.lo.max(o.lo), self.hi.min(o.hi))
    }

    pub fn nonneg(self) -> bool {
        self.lo >= 0.0
    }

    pub fn nonpos(self) -> bool {
        self.hi <= 0.0
    }
}

/// Known ranges of symbols. Unlisted symbols range over the whole line.
#[derive(Debug, Clone, Default)]
pub(crate) struct Ranges(BTreeMap<String, Interval>);

impl Ranges {
    pub fn from_values(values: &BTreeMap<String, f64>) -> Ranges {
        Ranges(values.iter().map(|(k, v)| (k.clone(), Interval::point(*v))).collect())
    }

    pub fn set(&mut self, var: &str, i: Interval) {
        self.0.insert(var.to_string(), i);
    }

    pub fn get(&self, var: &str) -> Interval {
        self.0.get(var).copied().unwrap_or(Interval::ALL)
    }

    pub fn eval(&self, t: &Term) -> Interval {
        match t {
            Term::Num(x) => Interval::point(*x),
            Term::Var(v) => self.get(v),
            Term::Neg(a) => self.eval(a).neg(),
            Term::Add(a, b) => self.eval(a).add(self.eval(b)),
            Term::Sub(a, b) => self.eval(a).add(self.eval(b).neg()),
            Term::Mul(a, b) => self.eval(a).mul(self.eval(b)),
            Term::Div(a, b) => self.eval(a).mul(self.eval(b).recip()),
            Term::Pow(a, n) => self.eval(a).powi(*n),
        }
    }

    /// Tightens ranges with the top-level conjuncts of `f` that bound a
    /// single symbol, such as `x <= 0` or `A > 0`.
    pub fn absorb(&mut self, f: &Formula) {
        // two passes let bounds that refer to other bounded symbols settle
        for _ in 0..2 {
            for c in f.conjuncts() {
                let Formula::Cmp(a, op, b) = c else { continue };
                let (var, op, other) = match (a, b) {
                    (Term::Var(v), t) if !t.mentions(v) => (v, *op, t),
                    (t, Term::Var(v)) if !t.mentions(v) => (v, op.flipped(), t),
                    _ => continue,
                };
                let bound = self.eval(other);
                let cur = self.get(var);
                let next = match op {
                    CmpOp::Le | CmpOp::Lt => cur.meet(Interval::new(f64::NEG_INFINITY, bound.hi)),
                    CmpOp::Ge | CmpOp::Gt => cur.meet(Interval::new(bound.lo, f64::INFINITY)),
                    CmpOp::Eq => cur.meet(bound),
                    CmpOp::Ne => cur,
                };
                self.set(var, next);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_formula, parse_term};

    #[test]
    fn square_of_signed_range() {
        let mut r = Ranges::default();
        r.set("x", Interval::new(-2.0, 1.0));
        assert_eq!(r.eval(&parse_term("x^2").unwrap()), Interval::new(0.0, 4.0));
        assert_eq!(r.eval(&parse_term("-x * 3").unwrap()), Interval::new(-3.0, 6.0));
    }

    #[test]
    fn absorb_reads_single_symbol_bounds() {
        let mut r = Ranges::default();
        r.absorb(&parse_formula("v <= 0 & 0 < B & v * w > 1").unwrap());
        assert!(r.get("v").nonpos());
        assert!(r.get("B").nonneg());
        assert_eq!(r.get("w"), Interval::ALL);
    }

    #[test]
    fn unbounded_times_zero_is_zero() {
        let mut r = Ranges::default();
        r.set("z", Interval::point(0.0));
        assert_eq!(r.eval(&parse_term("z * q").unwrap()), Interval::point(0.0));
    }
}

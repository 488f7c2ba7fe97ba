use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::intervals::{Interval, Ranges};
use super::VpmuError;
use crate::dsl::{CmpOp, Formula, Model, Term};
use crate::monitors::MonitoredModel;
use crate::par::{derive_seed, map_indexed, Execution};
use crate::semantics::{
    apply_effect, enumerate_resolved, eval_formula, eval_term, flow_trajectory, Discretization, FlowConfig,
    SemanticsError, State,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    /// Control cycles per sampled episode.
    pub steps: usize,
    /// Safety is checked at this many evenly spaced points per cycle.
    pub points: usize,
    /// Sampling box per variable; others use `[-default_bound, default_bound]`
    /// narrowed by single-variable bounds in `init`.
    pub bounds: BTreeMap<String, [f64; 2]>,
    pub default_bound: f64,
    /// Cycle length for models without a clock bound in the plant domain.
    pub cycle: f64,
    /// Rejection-sampling budget per initial state.
    pub max_attempts: usize,
    pub flow: FlowConfig,
    pub discretization: Discretization,
    pub execution: Execution,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            steps: 20,
            points: 10,
            bounds: BTreeMap::new(),
            default_bound: 10.0,
            cycle: 1.0,
            max_attempts: 100_000,
            flow: FlowConfig::default(),
            discretization: Discretization::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub seed: u64,
    pub samples: usize,
    pub transitions: usize,
    /// Episodes that ended early because no controller action was enabled.
    pub blocked: usize,
    pub safety_violations: usize,
    /// Transitions the model's own monitor failed to explain. Nonzero means
    /// the monitor and the simulation disagree, not that the model is unsafe.
    pub monitor_rejections: usize,
    /// Initial state of the first episode that reached an unsafe state.
    pub counterexample: Option<State>,
    pub verdict: Verdict,
}

#[derive(Default)]
struct Outcome {
    transitions: usize,
    blocked: bool,
    violation: Option<State>,
    rejections: usize,
}

fn sampling_box(m: &Model, cfg: &ValidationConfig) -> Vec<(String, Interval)> {
    let mut ranges = Ranges::default();
    ranges.absorb(&m.init);
    m.all_vars()
        .into_iter()
        .filter(|v| !m.constants.contains_key(v) && Some(v) != m.clock.as_ref())
        .map(|v| {
            let r = match cfg.bounds.get(&v) {
                Some([lo, hi]) => Interval::new(*lo, *hi),
                None => ranges
                    .get(&v)
                    .meet(Interval::new(-cfg.default_bound, cfg.default_bound)),
            };
            (v, r)
        })
        .collect()
}

/// Upper bound on the clock in the plant domain, read in `s`.
fn cycle_length(m: &Model, s: &State, cfg: &ValidationConfig) -> Result<f64, SemanticsError> {
    if let Some(c) = &m.clock {
        for conj in m.plant.domain.conjuncts() {
            if let Formula::Cmp(Term::Var(v), CmpOp::Le | CmpOp::Lt, bound) = conj {
                if v == c {
                    return eval_term(bound, s);
                }
            }
        }
    }
    Ok(cfg.cycle)
}

fn episode(
    mon: &MonitoredModel,
    boxes: &[(String, Interval)],
    cfg: &ValidationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome, VpmuError> {
    let m = &mon.model;
    let mut s = None;
    for _ in 0..cfg.max_attempts {
        let mut cand = State::new();
        for (v, r) in boxes {
            let x = if r.lo < r.hi { rng.gen_range(r.lo..r.hi) } else { r.lo };
            cand.set(v.clone(), x);
        }
        if let Some(c) = &m.clock {
            cand.set(c.clone(), 0.0);
        }
        let full = cand.with_defaults(&m.constants);
        if eval_formula(&m.init, &full).unwrap_or(false) {
            s = Some(full);
            break;
        }
    }
    let Some(mut s) = s else {
        return Err(VpmuError::InitUnsatisfiable(cfg.max_attempts));
    };
    let start = s.clone();
    let mut out = Outcome::default();
    if !eval_formula(&m.safe, &s)? {
        out.violation = Some(start);
        return Ok(out);
    }
    for _ in 0..cfg.steps {
        let actions = enumerate_resolved(&m.ctrl, &s, &cfg.discretization)?;
        if actions.is_empty() {
            out.blocked = true;
            break;
        }
        let (action, effect) = &actions[rng.gen_range(0..actions.len())];
        let after = apply_effect(effect, &s);
        let mut d = cycle_length(m, &after, cfg)?;
        let traj = match flow_trajectory(&m.plant, &after, d, &cfg.flow, cfg.points) {
            Err(SemanticsError::DomainViolation { time }) if time > 0.0 => {
                d = time;
                flow_trajectory(&m.plant, &after, d, &cfg.flow, cfg.points)
            }
            other => other,
        };
        let traj = match traj {
            Ok(t) => t,
            Err(SemanticsError::DomainViolation { .. }) => {
                out.blocked = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        out.transitions += 1;
        for (_, p) in &traj {
            if !eval_formula(&m.safe, p)? {
                out.violation = Some(start);
                return Ok(out);
            }
        }
        let next = traj.last().expect("trajectory has an endpoint").1.clone();
        if !mon.model_monitor(&s, action, &next, Some(d)).unwrap_or(false) {
            out.rejections += 1;
        }
        s = next;
    }
    Ok(out)
}

/// Runs `n` randomly initialised episodes of the model's own control loop
/// and counts unsafe states. Initial states are drawn by rejection sampling
/// from `init`; controller choices are uniform among enabled actions. The
/// verdict is a pass iff no episode reached an unsafe state; monitor
/// rejections are reported separately.
pub fn validate_update(m: &Model, n: usize, seed: u64, cfg: &ValidationConfig) -> Result<ValidationReport, VpmuError> {
    let boxes = sampling_box(m, cfg);
    let mon = MonitoredModel::new(m.clone())
        .with_discretization(cfg.discretization.clone())
        .with_flow(cfg.flow);
    let outcomes = map_indexed(n, cfg.execution, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        episode(&mon, &boxes, cfg, &mut rng)
    });
    let mut report = ValidationReport {
        model: m.name.clone(),
        seed,
        samples: n,
        transitions: 0,
        blocked: 0,
        safety_violations: 0,
        monitor_rejections: 0,
        counterexample: None,
        verdict: Verdict::Pass,
    };
    for o in outcomes {
        let o = o?;
        report.transitions += o.transitions;
        report.blocked += usize::from(o.blocked);
        report.monitor_rejections += o.rejections;
        if let Some(v) = o.violation {
            report.safety_violations += 1;
            report.counterexample.get_or_insert(v);
        }
    }
    if report.safety_violations > 0 {
        report.verdict = Verdict::Fail;
    }
    Ok(report)
}

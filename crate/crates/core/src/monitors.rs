//! Semantic controller and model monitors built by executing a model's
//! controller and plant, plus prediction and the distinguishing-action test.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::Model;
use crate::semantics::{
    apply_effect, enumerate_resolved, flow, same_effect, Action, Discretization, Effect, FlowConfig, SemanticsError,
    State,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("model `{0}` has no clock; the transition duration must be given")]
    DurationUnrecoverable(String),
}

/// Per-variable acceptance band `abs + rel * max(|a|, |b|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-6, rel: 1e-9 }
    }
}

impl Tolerance {
    /// Band for comparing a model against a system integrated differently.
    pub fn cross_integrator() -> Tolerance {
        Tolerance { abs: 1e-2, rel: 1e-9 }
    }

    pub fn band(&self, a: f64, b: f64) -> f64 {
        self.abs + self.rel * a.abs().max(b.abs())
    }

    pub fn within(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.band(a, b)
    }
}

/// A model with everything needed to execute its monitors.
#[derive(Debug, Clone)]
pub struct MonitoredModel {
    pub model: Model,
    pub discretization: Discretization,
    pub flow_cfg: FlowConfig,
    pub tol: Tolerance,
}

impl MonitoredModel {
    pub fn new(model: Model) -> MonitoredModel {
        MonitoredModel {
            model,
            discretization: Discretization::default(),
            flow_cfg: FlowConfig::default(),
            tol: Tolerance::default(),
        }
    }

    pub fn with_discretization(mut self, d: Discretization) -> Self {
        self.discretization = d;
        self
    }

    pub fn with_flow(mut self, cfg: FlowConfig) -> Self {
        self.flow_cfg = cfg;
        self
    }

    pub fn with_tolerance(mut self, tol: Tolerance) -> Self {
        self.tol = tol;
        self
    }

    pub fn name(&self) -> &str {
        &self.model.name
    }

    /// `s` with the model's constants filled in.
    pub fn augment(&self, s: &State) -> State {
        s.with_defaults(&self.model.constants)
    }

    /// Every controller action permitted in `s`, with its resolved effect.
    pub fn actions(&self, s: &State) -> Result<Vec<(Action, Effect)>, MonitorError> {
        let s = self.augment(s);
        Ok(enumerate_resolved(&self.model.ctrl, &s, &self.discretization)?)
    }

    /// Whether `u` is among the controller's choices in `s`.
    pub fn controller_monitor(&self, s: &State, u: &Action) -> Result<bool, MonitorError> {
        let effect = u.resolve(&self.augment(s))?;
        self.permits(s, &effect)
    }

    /// Whether an already-resolved effect is among the controller's choices.
    pub fn permits(&self, s: &State, effect: &Effect) -> Result<bool, MonitorError> {
        Ok(self.actions(s)?.iter().any(|(_, e)| same_effect(e, effect)))
    }

    /// Duration of a transition: explicit, or read off the clock.
    fn duration(&self, post_action: &State, s_post: &State, given: Option<f64>) -> Result<f64, MonitorError> {
        if let Some(d) = given {
            return Ok(d);
        }
        match &self.model.clock {
            Some(c) => {
                let start = post_action.get(c).unwrap_or(0.0);
                let end = s_post
                    .get(c)
                    .ok_or_else(|| SemanticsError::Eval(crate::dsl::algebra::EvalError::Unbound(c.clone())))?;
                Ok(end - start)
            }
            None => Err(MonitorError::DurationUnrecoverable(self.model.name.clone())),
        }
    }

    /// Whether the transition `s_pre --u--> s_post` is explained by the
    /// controller and the plant. Implies [`Self::controller_monitor`].
    pub fn model_monitor(
        &self,
        s_pre: &State,
        u: &Action,
        s_post: &State,
        duration: Option<f64>,
    ) -> Result<bool, MonitorError> {
        let pre = self.augment(s_pre);
        let effect = u.resolve(&pre)?;
        if !self.permits(s_pre, &effect)? {
            return Ok(false);
        }
        let after = apply_effect(&effect, &pre);
        let d = self.duration(&after, s_post, duration)?;
        if d < 0.0 {
            return Ok(false);
        }
        let predicted = match flow(&self.model.plant, &after, d, &self.flow_cfg) {
            Ok(p) => p,
            Err(SemanticsError::DomainViolation { .. }) => return Ok(false),
            Err(e) => return Err(e.into()),
        };
        Ok(self
            .model
            .state_vars()
            .iter()
            .all(|v| match (predicted.get(v), s_post.get(v)) {
                (Some(a), Some(b)) => self.tol.within(a, b),
                (_, None) => true,
                (None, Some(_)) => false,
            }))
    }

    /// Next state according to this model after `u` and `duration` of flow.
    pub fn predict(&self, s: &State, u: &Action, duration: f64) -> Result<State, MonitorError> {
        let pre = self.augment(s);
        let after = u.apply(&pre)?;
        let out = flow(&self.model.plant, &after, duration, &self.flow_cfg)?;
        // constants filled in by `augment` are not part of the prediction
        let keep = self.model.state_vars();
        Ok(out
            .iter()
            .filter(|(k, _)| s.contains(k) || keep.contains(*k))
            .map(|(k, v)| (k.clone(), *v))
            .collect())
    }
}

/// Largest disagreement between any two models' predictions for `u`,
/// measured in units of the combined tolerance band. A model whose
/// prediction fails while another succeeds counts as infinitely far.
pub fn prediction_gap(u: &Action, feasible: &[&MonitoredModel], s: &State, duration: f64) -> f64 {
    let preds: Vec<Option<State>> = feasible.iter().map(|m| m.predict(s, u, duration).ok()).collect();
    let mut gap: f64 = 0.0;
    for i in 0..preds.len() {
        for j in i + 1..preds.len() {
            match (&preds[i], &preds[j]) {
                (Some(a), Some(b)) => {
                    let (ti, tj) = (feasible[i].tol, feasible[j].tol);
                    for (k, x) in a.iter() {
                        if let Some(y) = b.get(k) {
                            let band = ti.band(*x, y) + tj.band(*x, y);
                            gap = gap.max((x - y).abs() / band);
                        }
                    }
                }
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
    }
    gap
}

/// Whether taking `u` for `duration` from `s` must falsify at least one of
/// `feasible`. Always false for fewer than two models.
pub fn is_distinguishing(u: &Action, feasible: &[&MonitoredModel], s: &State, duration: f64) -> bool {
    feasible.len() >= 2 && prediction_gap(u, feasible, s, duration) > 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_model, Term};

    fn example1() -> MonitoredModel {
        MonitoredModel::new(
            parse_model("init: v >= 0 & A > 0; ctrl: a := A ++ a := 0; plant: {p' = v, v' = a}; safe: v >= 0").unwrap(),
        )
    }

    #[test]
    fn controller_monitor_matches_branches() {
        let m = example1();
        let s = State::from_pairs([("p", 0.0), ("v", 1.0), ("a", 0.0), ("A", 2.0)]);
        let full = Action::from_pairs([("a", Term::var("A"))]).unwrap();
        let half = Action::from_pairs([("a", Term::div(Term::var("A"), Term::num(2.0)))]).unwrap();
        assert!(m.controller_monitor(&s, &full).unwrap());
        assert!(!m.controller_monitor(&s, &half).unwrap());
    }

    #[test]
    fn model_monitor_against_closed_form() {
        let m = example1();
        let pre = State::from_pairs([("p", 0.0), ("v", 0.0), ("A", 1.0), ("a", 0.0)]);
        let u = Action::from_pairs([("a", Term::num(1.0))]).unwrap();
        let good = State::from_pairs([("p", 0.5), ("v", 1.0), ("A", 1.0), ("a", 1.0)]);
        let bad = good.clone().with("v", 2.0);
        assert!(m.model_monitor(&pre, &u, &good, Some(1.0)).unwrap());
        assert!(!m.model_monitor(&pre, &u, &bad, Some(1.0)).unwrap());
        assert!(matches!(
            m.model_monitor(&pre, &u, &good, None),
            Err(MonitorError::DurationUnrecoverable(_))
        ));
    }

    #[test]
    fn predictions_are_bit_identical() {
        let m = example1().with_flow(FlowConfig::rk4(1e-3));
        let s = State::from_pairs([("p", 0.3), ("v", 0.7), ("A", 1.0), ("a", 0.0)]);
        let u = Action::from_pairs([("a", Term::var("A"))]).unwrap();
        let a = m.predict(&s, &u, 1.3).unwrap();
        let b = m.predict(&s, &u, 1.3).unwrap();
        assert_eq!(a, b);
    }
}

//! The learning loop: act only on actions every feasible model deems safe,
//! and drop models that fail to explain an observed transition.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::algebra::margin;
use crate::dsl::Formula;
use crate::monitors::{prediction_gap, MonitoredModel};
use crate::semantics::{eval_formula, Action, Effect, SemanticsError, State};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("no models given")]
    NoModels,
    #[error("no actions given")]
    NoActions,
    #[error("elimination rate must lie in (0, 1), got {0}")]
    InvalidRate(f64),
    #[error("subtask `{0}` is not defined")]
    UnknownSubtask(String),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// Outcome of one control cycle in the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: State,
    pub reward: f64,
}

/// The system being controlled. Implementations own their randomness and
/// are reseeded per episode through [`Environment::reset`].
pub trait Environment {
    /// Starts a new episode and returns its initial state.
    fn reset(&mut self, seed: u64) -> State;
    /// Applies a resolved action and runs the plant for one control period.
    fn step(&mut self, s: &State, effect: &Effect) -> Step;
    fn done(&self, s: &State) -> bool;
    /// Ground-truth unsafe predicate, independent of any model.
    fn violation(&self, s: &State) -> bool;
    /// Length of a control period, used for predictions.
    fn period(&self) -> f64;
    /// Names of the models that describe this episode's dynamics exactly,
    /// when the environment knows them.
    fn accurate_models(&self) -> Vec<String> {
        Vec::new()
    }
}

/// The reinforcement learner behind the safety layer. Actions are indices
/// into the fixed action list of the run.
pub trait Learner {
    fn choose(&mut self, avail: &[usize], s: &State, rng: &mut ChaCha8Rng) -> usize;
    /// `next_avail` are the actions safe in `s_next` under the feasible set
    /// that remains after observing the transition.
    fn update(&mut self, s: &State, u: usize, s_next: &State, reward: f64, next_avail: &[usize]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Halt {
    Done,
    NoSafeAction,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningTrace {
    pub seed: u64,
    pub states: Vec<State>,
    /// Labels of the executed actions, one per transition.
    pub actions: Vec<String>,
    /// Resolved values of the executed actions.
    pub effects: Vec<Effect>,
    /// Feasible model names in force when each state was reached; entry 0 is
    /// the full initial set.
    pub feasible_sets: Vec<Vec<String>>,
    pub rewards: Vec<f64>,
    pub violations: Vec<bool>,
    /// Active subtask at each state (hierarchical runs only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subtasks: Vec<String>,
    /// State indices at which the feasible set was re-initialised.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resets: Vec<usize>,
    /// Set when some step ran with no feasible model left.
    pub degenerate: bool,
    pub halted: Halt,
}

impl LearningTrace {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn violation_count(&self) -> usize {
        self.violations.iter().filter(|v| **v).count()
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// Index of the first transition after which only one model remains.
    pub fn steps_to_singleton(&self) -> Option<usize> {
        self.feasible_sets.iter().position(|f| f.len() == 1)
    }

    pub fn final_feasible(&self) -> &[String] {
        self.feasible_sets.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Models whose model monitor accepts `s_pre --u--> s_curr`. Monitor errors
/// count as rejection.
pub fn update_feasible<'a>(
    models: &[&'a MonitoredModel],
    s_pre: &State,
    u: &Action,
    s_curr: &State,
    period: f64,
) -> Vec<&'a MonitoredModel> {
    models
        .iter()
        .copied()
        .filter(|m| {
            let d = (!m.model.is_time_aware()).then_some(period);
            m.model_monitor(s_pre, u, s_curr, d).unwrap_or(false)
        })
        .collect()
}

/// Indices of the actions every model's controller monitor permits in `s`.
/// With no models left every action is returned.
pub fn available_actions(models: &[&MonitoredModel], s: &State, actions: &[Action]) -> Vec<usize> {
    let effects: Vec<Option<Effect>> = match models.first() {
        Some(m) => actions.iter().map(|u| u.resolve(&m.augment(s)).ok()).collect(),
        None => return (0..actions.len()).collect(),
    };
    let permitted: Vec<Vec<Effect>> = models
        .iter()
        .map(|m| {
            m.actions(s)
                .map(|v| v.into_iter().map(|(_, e)| e).collect())
                .unwrap_or_default()
        })
        .collect();
    (0..actions.len())
        .filter(|&i| {
            let Some(e) = &effects[i] else { return false };
            permitted
                .iter()
                .all(|list| list.iter().any(|p| crate::semantics::same_effect(p, e)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    /// Probability of insisting on a distinguishing action when one exists.
    pub er: f64,
}

impl ActiveConfig {
    pub fn new(er: f64) -> Result<ActiveConfig, RuntimeError> {
        if er > 0.0 && er < 1.0 {
            Ok(ActiveConfig { er })
        } else {
            Err(RuntimeError::InvalidRate(er))
        }
    }
}

/// One stage of a hierarchical task.
#[derive(Debug, Clone)]
pub struct Subtask {
    pub name: String,
    pub models: Vec<MonitoredModel>,
    /// Reaching a state satisfying this ends the subtask.
    pub termination: Formula,
    /// Subtask entered on termination; `None` ends the episode.
    pub next: Option<String>,
}

struct Segment<'a> {
    name: &'a str,
    models: Vec<&'a MonitoredModel>,
}

fn enter(t: &Subtask) -> Segment<'_> {
    Segment {
        name: &t.name,
        models: t.models.iter().collect(),
    }
}

/// Roundoff in the environment can leave a state a hair outside `init`
/// (a stopped car at `v = -1e-16`), so the model's tolerance is allowed.
fn warn_outside_init(models: &[&MonitoredModel], s: &State) {
    for m in models {
        let s = m.augment(s);
        let room = margin(&m.model.init, &|v| s.get(v)).unwrap_or(f64::NEG_INFINITY);
        if room < -m.tol.abs {
            log::warn!("state {s} violates init of `{}`", m.name());
        }
    }
}

fn names(ms: &[&MonitoredModel]) -> Vec<String> {
    ms.iter().map(|m| m.name().to_string()).collect()
}

fn choose_distinguishing(
    feasible: &[&MonitoredModel],
    avail: &[usize],
    actions: &[Action],
    s: &State,
    period: f64,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    let gaps: Vec<(usize, f64)> = avail
        .iter()
        .map(|&i| (i, prediction_gap(&actions[i], feasible, s, period)))
        .filter(|(_, g)| *g > 1.0)
        .collect();
    let best = gaps.iter().map(|(_, g)| *g).fold(f64::NEG_INFINITY, f64::max);
    let top: Vec<usize> = gaps
        .iter()
        .filter(|(_, g)| *g == best || (best.is_finite() && *g >= best * (1.0 - 1e-9)))
        .map(|(i, _)| *i)
        .collect();
    if top.is_empty() {
        None
    } else {
        Some(top[rng.gen_range(0..top.len())])
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    subtasks: &[Subtask],
    actions: &[Action],
    env: &mut dyn Environment,
    learner: &mut dyn Learner,
    active: Option<ActiveConfig>,
    step_limit: usize,
    seed: u64,
) -> Result<LearningTrace, RuntimeError> {
    if subtasks.iter().any(|t| t.models.is_empty()) {
        return Err(RuntimeError::NoModels);
    }
    if actions.is_empty() {
        return Err(RuntimeError::NoActions);
    }
    let by_name: BTreeMap<&str, &Subtask> = subtasks.iter().map(|t| (t.name.as_str(), t)).collect();
    let hierarchical = subtasks.len() > 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = enter(&subtasks[0]);
    let mut task = &subtasks[0];
    let period = env.period();

    let mut s = env.reset(seed);
    warn_outside_init(&current.models, &s);
    let mut trace = LearningTrace {
        seed,
        states: vec![s.clone()],
        actions: Vec::new(),
        effects: Vec::new(),
        feasible_sets: vec![names(&current.models)],
        rewards: Vec::new(),
        violations: vec![env.violation(&s)],
        subtasks: if hierarchical {
            vec![current.name.to_string()]
        } else {
            Vec::new()
        },
        resets: Vec::new(),
        degenerate: false,
        halted: Halt::StepLimit,
    };
    let mut avail = available_actions(&current.models, &s, actions);
    for _ in 0..step_limit {
        if env.done(&s) {
            trace.halted = Halt::Done;
            return Ok(trace);
        }
        if current.models.is_empty() {
            trace.degenerate = true;
        }
        if avail.is_empty() {
            trace.halted = Halt::NoSafeAction;
            return Ok(trace);
        }
        // the coin is only drawn when experiments are possible, so a single
        // model run consumes randomness exactly like the passive loop
        let experiment = match active {
            Some(cfg) if current.models.len() > 1 => rng.gen_bool(cfg.er),
            _ => false,
        };
        let pick = if experiment {
            choose_distinguishing(&current.models, &avail, actions, &s, period, &mut rng)
        } else {
            None
        };
        let pick = pick.unwrap_or_else(|| learner.choose(&avail, &s, &mut rng));
        debug_assert!(avail.contains(&pick), "learner chose an unavailable action");
        let u = &actions[pick];
        let reference = current.models.first().copied().unwrap_or(&task.models[0]);
        let effect = u.resolve(&reference.augment(&s))?;
        let step = env.step(&s, &effect);
        let s_next = step.state;
        current.models = update_feasible(&current.models, &s, u, &s_next, period);

        if eval_formula(&task.termination, &reference.augment(&s_next)).unwrap_or(false) {
            if let Some(next) = &task.next {
                let t = *by_name
                    .get(next.as_str())
                    .ok_or_else(|| RuntimeError::UnknownSubtask(next.clone()))?;
                task = t;
                current = enter(t);
                warn_outside_init(&current.models, &s_next);
                trace.resets.push(trace.states.len());
            }
        }
        avail = available_actions(&current.models, &s_next, actions);
        learner.update(&s, pick, &s_next, step.reward, &avail);

        trace.actions.push(u.label());
        trace.effects.push(effect);
        trace.rewards.push(step.reward);
        trace.violations.push(env.violation(&s_next));
        trace.feasible_sets.push(names(&current.models));
        if hierarchical {
            trace.subtasks.push(current.name.to_string());
        }
        trace.states.push(s_next.clone());
        s = s_next;
    }
    if env.done(&s) {
        trace.halted = Halt::Done;
    }
    Ok(trace)
}

fn single(models: &[MonitoredModel]) -> Vec<Subtask> {
    vec![Subtask {
        name: "main".into(),
        models: models.to_vec(),
        termination: Formula::False,
        next: None,
    }]
}

/// Basic loop: restrict to actions safe under every feasible model, let the
/// learner pick, observe, and drop falsified models.
pub fn mu_learn(
    models: &[MonitoredModel],
    actions: &[Action],
    env: &mut dyn Environment,
    learner: &mut dyn Learner,
    step_limit: usize,
    seed: u64,
) -> Result<LearningTrace, RuntimeError> {
    run(&single(models), actions, env, learner, None, step_limit, seed)
}

/// As [`mu_learn`], but while several models remain, with probability `er`
/// take a safe action whose predicted outcomes separate the models.
pub fn active_mu_learn(
    models: &[MonitoredModel],
    actions: &[Action],
    env: &mut dyn Environment,
    learner: &mut dyn Learner,
    cfg: ActiveConfig,
    step_limit: usize,
    seed: u64,
) -> Result<LearningTrace, RuntimeError> {
    run(&single(models), actions, env, learner, Some(cfg), step_limit, seed)
}

/// Active learning over a chain of subtasks. When the current subtask's
/// termination condition holds, the next subtask starts with its full model
/// set.
pub fn hierarchical_mu_learn(
    subtasks: &[Subtask],
    actions: &[Action],
    env: &mut dyn Environment,
    learner: &mut dyn Learner,
    cfg: ActiveConfig,
    step_limit: usize,
    seed: u64,
) -> Result<LearningTrace, RuntimeError> {
    if subtasks.is_empty() {
        return Err(RuntimeError::NoModels);
    }
    run(subtasks, actions, env, learner, Some(cfg), step_limit, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_model;
    use crate::envs::acc::{acc_model, AccEnv, AccEnvConfig};
    use crate::envs::footnote::{FootnoteEnv, FootnoteEnvConfig};
    use crate::envs::hier::{HierEnv, HierEnvConfig};
    use crate::rl::{FirstChooser, UniformChooser};
    use crate::semantics::apply_effect;

    /// `x' = v, v' = k*a` with exact updates and period 1.
    struct Toy {
        k: f64,
    }

    impl Environment for Toy {
        fn reset(&mut self, _seed: u64) -> State {
            State::from_pairs([("x", 0.0), ("v", 0.0), ("a", 0.0)])
        }
        fn step(&mut self, s: &State, effect: &Effect) -> Step {
            let mut n = apply_effect(effect, s);
            let (x, v, a) = (n.value("x"), n.value("v"), n.value("a"));
            n.set("x", x + v + self.k * a / 2.0);
            n.set("v", v + self.k * a);
            Step { state: n, reward: 0.0 }
        }
        fn done(&self, _: &State) -> bool {
            false
        }
        fn violation(&self, _: &State) -> bool {
            false
        }
        fn period(&self) -> f64 {
            1.0
        }
    }

    fn toy(k: f64) -> MonitoredModel {
        let mut m = parse_model(&format!(
            "init: true; ctrl: a := 0 ++ a := 1; plant: {{x' = v, v' = {k} * a}}; safe: true"
        ))
        .unwrap();
        m.name = format!("k{k}");
        MonitoredModel::new(m)
    }

    fn acc_pair() -> (Vec<MonitoredModel>, Vec<Action>) {
        let models = vec![acc_model(1.0).unwrap(), acc_model(0.5).unwrap()];
        let actions = crate::envs::actions_of(&models).unwrap();
        (models, actions)
    }

    fn acc_state(pos: f64, vel: f64) -> State {
        State::from_pairs([("pos_rel", pos), ("vel_rel", vel), ("acc_rel", 0.0), ("t", 0.0)])
    }

    fn check_invariants(trace: &LearningTrace, models: &[MonitoredModel], actions: &[Action], truth: &str) {
        assert_eq!(trace.actions.len() + 1, trace.states.len());
        assert_eq!(trace.feasible_sets.len(), trace.states.len());
        for w in trace.feasible_sets.windows(2) {
            assert!(w[1].iter().all(|n| w[0].contains(n)), "{w:?}");
        }
        for (i, fs) in trace.feasible_sets.iter().enumerate() {
            assert!(fs.iter().any(|n| n == truth), "step {i}: {fs:?}");
        }
        // every executed action was safe under all models feasible at the time
        for (i, label) in trace.actions.iter().enumerate() {
            let u = actions.iter().find(|a| &a.label() == label).unwrap();
            for name in &trace.feasible_sets[i] {
                let m = models.iter().find(|m| m.name() == name).unwrap();
                assert!(m.controller_monitor(&trace.states[i], u).unwrap());
            }
        }
        let m = models.iter().find(|m| m.name() == truth).unwrap();
        for s in &trace.states {
            assert!(eval_formula(&m.model.safe, &m.augment(s)).unwrap(), "{s}");
        }
        assert!(trace.violations.iter().all(|v| !v));
    }

    #[test]
    fn accelerating_step_removes_the_wrong_scale() {
        let (models, actions) = acc_pair();
        let refs: Vec<&MonitoredModel> = models.iter().collect();
        let s = acc_state(20.0, 0.0);
        let brake = actions.iter().find(|a| a.label().starts_with("acc_rel := B")).unwrap();
        let cfg = AccEnvConfig::default();
        let mut env = AccEnv::new(cfg.clone(), &cfg.task().unwrap());
        env.set_p_true(1.0);
        let eff = brake.resolve(&models[0].augment(&s)).unwrap();
        let next = env.step(&s, &eff).state;
        let kept = update_feasible(&refs, &s, brake, &next, 0.1);
        assert_eq!(names(&kept), vec!["acc_p100".to_string()]);

        let coast = actions.iter().find(|a| a.label().starts_with("acc_rel := 0")).unwrap();
        let eff = coast.resolve(&models[0].augment(&s)).unwrap();
        let next = env.step(&s, &eff).state;
        assert_eq!(update_feasible(&refs, &s, coast, &next, 0.1).len(), 2);
    }

    #[test]
    fn availability_is_the_intersection() {
        let (models, actions) = acc_pair();
        let refs: Vec<&MonitoredModel> = models.iter().collect();
        assert_eq!(
            available_actions(&refs, &acc_state(100.0, 0.0), &actions).len(),
            actions.len()
        );
        assert_eq!(
            available_actions(&[], &acc_state(0.1, -5.0), &actions).len(),
            actions.len()
        );
        // closing fast: coasting is fine for the strong brakes only
        let s = acc_state(6.5, -5.0);
        let strong = available_actions(&refs[..1], &s, &actions);
        let both = available_actions(&refs, &s, &actions);
        assert!(both.len() < strong.len(), "{strong:?} {both:?}");
        assert!(both.iter().all(|i| strong.contains(i)));
        assert_eq!(both.len(), 1);
        assert!(actions[both[0]].label().starts_with("acc_rel := B"));
    }

    #[test]
    fn zero_step_limit_gives_a_lone_state() {
        let (models, actions) = acc_pair();
        let cfg = AccEnvConfig::default();
        let mut env = AccEnv::new(cfg.clone(), &cfg.task().unwrap());
        let t = mu_learn(&models, &actions, &mut env, &mut UniformChooser, 0, 1).unwrap();
        assert_eq!(t.states.len(), 1);
        assert!(t.actions.is_empty());
        assert_eq!(t.halted, Halt::StepLimit);
    }

    #[test]
    fn acc_runs_keep_every_invariant() {
        let cfg = AccEnvConfig::default();
        let task = cfg.task().unwrap();
        let mut env = AccEnv::new(cfg, &task);
        for seed in 0..20 {
            let t = mu_learn(task.models(), &task.actions, &mut env, &mut UniformChooser, 100, seed).unwrap();
            let truth = env.accurate_models().remove(0);
            check_invariants(&t, task.models(), &task.actions, &truth);
            assert_eq!(t.feasible_sets[0].len(), 5);
            assert!(!t.degenerate);
        }
    }

    #[test]
    fn falsifying_every_model_is_flagged() {
        let cfg = AccEnvConfig::default();
        let task = cfg.task().unwrap();
        let mut env = AccEnv::new(cfg, &task);
        let wrong = vec![acc_model(0.5).unwrap()];
        // pick a seed whose hidden scale is not 0.5
        let seed = (0..).find(|s| {
            env.reset(*s);
            env.p_true() != 0.5
        });
        let t = mu_learn(&wrong, &task.actions, &mut env, &mut UniformChooser, 100, seed.unwrap()).unwrap();
        assert!(t.degenerate || t.halted == Halt::NoSafeAction);
        assert!(t.final_feasible().is_empty());
    }

    #[test]
    fn single_model_active_matches_passive() {
        let models = vec![acc_model(1.0).unwrap()];
        let actions = crate::envs::actions_of(&models).unwrap();
        let cfg = AccEnvConfig {
            p_grid: vec![1.0],
            ..AccEnvConfig::default()
        };
        let task = cfg.task().unwrap();
        let mut env = AccEnv::new(cfg, &task);
        let a = mu_learn(&models, &actions, &mut env, &mut UniformChooser, 50, 9).unwrap();
        let cfg = ActiveConfig::new(0.7).unwrap();
        let b = active_mu_learn(&models, &actions, &mut env, &mut UniformChooser, cfg, 50, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn experiment_rate_drives_first_step_elimination() {
        let models = vec![toy(1.0), toy(2.0)];
        let actions = crate::envs::actions_of(&models).unwrap();
        assert_eq!(actions[0].label(), "a := 0");
        let er = 0.3;
        let cfg = ActiveConfig::new(er).unwrap();
        let n = 1000;
        let mut eliminated = 0;
        for seed in 0..n {
            let mut env = Toy { k: 1.0 };
            let t = active_mu_learn(&models, &actions, &mut env, &mut FirstChooser, cfg, 1, seed).unwrap();
            if t.feasible_sets[1].len() == 1 {
                eliminated += 1;
            }
        }
        let freq = eliminated as f64 / n as f64;
        assert!((freq - er).abs() < 0.05, "{freq}");
    }

    #[test]
    fn invalid_rates_are_rejected() {
        assert!(ActiveConfig::new(0.0).is_err());
        assert!(ActiveConfig::new(1.0).is_err());
        assert_eq!(ActiveConfig::new(1.5).unwrap_err(), RuntimeError::InvalidRate(1.5));
    }

    #[test]
    fn single_subtask_matches_active() {
        let cfg = FootnoteEnvConfig::default();
        let task = cfg.task().unwrap();
        let er = ActiveConfig::new(0.5).unwrap();
        let mut env = FootnoteEnv::new(cfg);
        let a = active_mu_learn(task.models(), &task.actions, &mut env, &mut UniformChooser, er, 10, 4).unwrap();
        let b = hierarchical_mu_learn(&task.subtasks, &task.actions, &mut env, &mut UniformChooser, er, 10, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subtask_boundary_restores_the_full_set() {
        let cfg = HierEnvConfig::default();
        let task = cfg.task().unwrap();
        let mut env = HierEnv::new(cfg);
        let er = ActiveConfig::new(0.5).unwrap();
        let t =
            hierarchical_mu_learn(&task.subtasks, &task.actions, &mut env, &mut UniformChooser, er, 300, 2).unwrap();
        assert_eq!(t.halted, Halt::Done, "{:?}", t.states.last());
        assert_eq!(t.resets.len(), 1);
        let at = t.resets[0];
        assert_eq!(t.subtasks[at - 1], "intersection");
        assert_eq!(t.subtasks[at], "crosswalk");
        assert_eq!(t.feasible_sets[at].len(), 2);
        assert_eq!(t.feasible_sets[at - 1].len(), 1);
        assert_eq!(t.violation_count(), 0);
    }

    #[test]
    fn unknown_next_subtask_is_an_error() {
        let cfg = HierEnvConfig::default();
        let mut task = cfg.task().unwrap();
        task.subtasks[0].next = Some("nowhere".into());
        let mut env = HierEnv::new(cfg);
        let er = ActiveConfig::new(0.5).unwrap();
        let err = hierarchical_mu_learn(&task.subtasks, &task.actions, &mut env, &mut UniformChooser, er, 300, 2);
        assert_eq!(err.unwrap_err(), RuntimeError::UnknownSubtask("nowhere".into()));
    }
}

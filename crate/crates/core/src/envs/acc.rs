//! Relative longitudinal dynamics of a follower behind a leader, where the
//! commanded acceleration is scaled by an unknown per-episode factor.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{flat, sample_init, EnvError, Task};
use crate::catalog;
use crate::monitors::MonitoredModel;
use crate::runtime::{Environment, Step};
use crate::semantics::{apply_effect, rk4_integrate, Effect, State};
use crate::vpmu::{add_disturbance, instantiate_parameter, DisturbanceKind, DisturbanceSpec, GuardMode};

/// Which part of the actuation the hidden factor scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccVariant {
    /// Every commanded acceleration.
    #[default]
    Scaled,
    /// Only the brake; throttle and coasting are exact.
    Brake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccEnvConfig {
    pub variant: AccVariant,
    /// Nominal brake deceleration of the brake variant.
    pub brake_decel: f64,
    /// Scale factors the hidden one is drawn from each episode.
    pub p_grid: Vec<f64>,
    /// Scale factors the model set is built for; `p_grid` when absent.
    pub model_grid: Option<Vec<f64>>,
    pub dt: f64,
    pub substeps: usize,
    /// Crash when the gap is at or below this.
    pub crash_gap: f64,
    pub target_gap: f64,
    pub crash_penalty: f64,
    pub pos_range: [f64; 2],
    pub vel_range: [f64; 2],
}

impl Default for AccEnvConfig {
    fn default() -> Self {
        AccEnvConfig {
            variant: AccVariant::Scaled,
            brake_decel: 3.0,
            p_grid: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            model_grid: None,
            dt: 0.1,
            substeps: 10,
            crash_gap: 0.0,
            target_gap: 10.0,
            crash_penalty: 100.0,
            pos_range: [5.0, 40.0],
            vel_range: [-4.0, 4.0],
        }
    }
}

pub fn model_name(variant: AccVariant, p: f64) -> String {
    let stem = match variant {
        AccVariant::Scaled => "acc",
        AccVariant::Brake => "acc_brake",
    };
    format!("{stem}_p{:03}", (p * 100.0).round() as i64)
}

/// The bundled ACC model with the plant acceleration scaled by `p` and the
/// guards following the scaling.
pub fn acc_model(p: f64) -> Result<MonitoredModel, EnvError> {
    let base = catalog::load("acc").expect("bundled acc model");
    let spec = DisturbanceSpec {
        ode_var: "vel_rel".into(),
        kind: DisturbanceKind::Multiplicative,
        bound: 0.5,
        guard_mode: GuardMode::Symbolic,
        param: Some("p".into()),
    };
    let scaled = add_disturbance(&base, &spec)?;
    let mut m = instantiate_parameter(&scaled, &BTreeMap::from([("p".to_string(), p)]))?;
    m.name = model_name(AccVariant::Scaled, p);
    Ok(MonitoredModel::new(m))
}

/// The brake-uncertainty model with brake effectiveness `p`.
pub fn acc_brake_model(p: f64) -> Result<MonitoredModel, EnvError> {
    let base = catalog::load("acc_brake").expect("bundled acc_brake model");
    let mut m = instantiate_parameter(&base, &BTreeMap::from([("p".to_string(), p)]))?;
    m.name = model_name(AccVariant::Brake, p);
    Ok(MonitoredModel::new(m))
}

impl AccEnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.into()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps must be positive");
        }
        if self.p_grid.is_empty() {
            return bad("p_grid is empty");
        }
        if self.pos_range[0] > self.pos_range[1] || self.vel_range[0] > self.vel_range[1] {
            return bad("empty sampling range");
        }
        Ok(())
    }

    pub fn model_grid(&self) -> &[f64] {
        self.model_grid.as_deref().unwrap_or(&self.p_grid)
    }

    pub fn task(&self) -> Result<Task, EnvError> {
        self.validate()?;
        let models = self
            .model_grid()
            .iter()
            .map(|p| match self.variant {
                AccVariant::Scaled => acc_model(*p),
                AccVariant::Brake => acc_brake_model(*p),
            })
            .collect::<Result<Vec<_>, _>>()?;
        flat("acc", models)
    }
}

pub struct AccEnv {
    cfg: AccEnvConfig,
    models: Vec<MonitoredModel>,
    p_true: f64,
}

impl AccEnv {
    pub fn new(cfg: AccEnvConfig, task: &Task) -> AccEnv {
        AccEnv {
            p_true: cfg.p_grid[0],
            cfg,
            models: task.models().to_vec(),
        }
    }

    pub fn p_true(&self) -> f64 {
        self.p_true
    }

    pub fn set_p_true(&mut self, p: f64) {
        self.p_true = p;
    }

    /// Ground-truth relative dynamics for one control period.
    pub fn advance(&self, s: &State, effect: &Effect) -> State {
        let mut out = apply_effect(effect, s);
        let p = self.p_true;
        let acc = match self.cfg.variant {
            AccVariant::Scaled => p * out.get("acc_rel").unwrap_or(0.0),
            AccVariant::Brake => {
                out.get("acc_rel").unwrap_or(0.0) + p * self.cfg.brake_decel * out.get("brk").unwrap_or(0.0)
            }
        };
        let mut x = [out.value("pos_rel"), out.value("vel_rel")];
        rk4_integrate(
            &|x: &[f64], dx: &mut [f64]| {
                dx[0] = x[1];
                dx[1] = acc;
            },
            &mut x,
            self.cfg.dt,
            self.cfg.substeps,
        );
        out.set("pos_rel", x[0]);
        out.set("vel_rel", x[1]);
        out.set("t", out.get("t").unwrap_or(0.0) + self.cfg.dt);
        out
    }
}

impl Environment for AccEnv {
    fn reset(&mut self, seed: u64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.p_true = self.cfg.p_grid[rng.gen_range(0..self.cfg.p_grid.len())];
        let mut fixed = State::from_pairs([("acc_rel", 0.0), ("t", 0.0)]);
        if self.cfg.variant == AccVariant::Brake {
            fixed.set("brk", 0.0);
        }
        let boxes = [("pos_rel", self.cfg.pos_range), ("vel_rel", self.cfg.vel_range)];
        sample_init(&mut rng, &boxes, &fixed, &self.models).unwrap_or_else(|| {
            log::warn!("no initial state satisfies every model; starting far behind at rest");
            fixed.with("pos_rel", self.cfg.pos_range[1]).with("vel_rel", 0.0)
        })
    }

    fn step(&mut self, s: &State, effect: &Effect) -> Step {
        let next = self.advance(s, effect);
        let gap = next.value("pos_rel");
        let mut reward = -(gap - self.cfg.target_gap).abs() * self.cfg.dt;
        if self.violation(&next) {
            reward -= self.cfg.crash_penalty;
        }
        Step { state: next, reward }
    }

    fn done(&self, s: &State) -> bool {
        self.violation(s)
    }

    fn violation(&self, s: &State) -> bool {
        s.value("pos_rel") <= self.cfg.crash_gap
    }

    fn period(&self) -> f64 {
        self.cfg.dt
    }

    fn accurate_models(&self) -> Vec<String> {
        vec![model_name(self.cfg.variant, self.p_true)]
    }
}

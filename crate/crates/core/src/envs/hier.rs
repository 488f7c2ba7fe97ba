//! A car that first crosses an intersection with cross traffic and then
//! passes a crosswalk where a pedestrian may step onto the road.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{actions_of, EnvError, Task};
use crate::catalog;
use crate::dsl::{CmpOp, Formula, Term};
use crate::monitors::MonitoredModel;
use crate::runtime::{Environment, Step, Subtask};
use crate::semantics::{apply_effect, rk4_integrate, Effect, State};
use crate::vpmu::instantiate_parameter;

pub const INTERSECTION: &str = "intersection";
pub const CROSSWALK: &str = "crosswalk";

/// When the pedestrian leaves the sidewalk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryPolicy {
    Never,
    /// On reaching this position along the sidewalk.
    At {
        ped_y: f64,
    },
    /// At a point drawn uniformly from the crosswalk span each episode.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierEnvConfig {
    pub dt: f64,
    pub substeps: usize,
    pub intersection_start: f64,
    pub intersection_end: f64,
    /// Width of the cross traffic's conflict zone.
    pub cross_zone: f64,
    pub cross_start: f64,
    /// Cross-traffic speeds; one model per entry, the true one drawn per episode.
    pub cross_speeds: Vec<f64>,
    pub c_min: f64,
    pub c_max: f64,
    pub road_width: f64,
    pub ped_start_x: f64,
    pub ped_start_y: f64,
    pub ped_speed_x: f64,
    pub ped_speed_y: f64,
    pub entry: EntryPolicy,
    pub goal: f64,
    pub intersection_progress: f64,
    pub crosswalk_progress: f64,
    pub step_cost: f64,
    pub crash_penalty: f64,
}

impl Default for HierEnvConfig {
    fn default() -> Self {
        HierEnvConfig {
            dt: 0.5,
            substeps: 10,
            intersection_start: 20.0,
            intersection_end: 24.0,
            cross_zone: 4.0,
            cross_start: -4.0,
            cross_speeds: vec![1.0, 2.0],
            c_min: 40.0,
            c_max: 44.0,
            road_width: 4.0,
            ped_start_x: -1.0,
            ped_start_y: 30.0,
            ped_speed_x: 1.0,
            ped_speed_y: 1.0,
            entry: EntryPolicy::Sampled,
            goal: 50.0,
            intersection_progress: 1.0,
            crosswalk_progress: 1.0,
            step_cost: 0.1,
            crash_penalty: 100.0,
        }
    }
}

pub fn cross_model_name(speed: f64) -> String {
    format!("intersection_cv{:03}", (speed * 100.0).round() as i64)
}

impl HierEnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.into()));
        if !(self.dt > 0.0) || self.substeps == 0 {
            return bad("dt and substeps must be positive");
        }
        if self.c_min > self.c_max {
            return bad("c_min exceeds c_max");
        }
        if self.intersection_start > self.intersection_end {
            return bad("intersection_start exceeds intersection_end");
        }
        if self.intersection_end >= self.c_min {
            return bad("the crosswalk must lie beyond the intersection");
        }
        if self.cross_speeds.is_empty() || self.cross_speeds.iter().any(|v| !(*v > 0.0)) {
            return bad("cross_speeds must be non-empty and positive");
        }
        if let EntryPolicy::At { ped_y } = self.entry {
            if ped_y < self.c_min || ped_y > self.c_max {
                return bad("scripted entry lies outside the crosswalk");
            }
        }
        Ok(())
    }

    fn geometry(&self, m: &mut MonitoredModel) {
        let c = &mut m.model.constants;
        let mut put = |k: &str, v: f64| {
            if c.contains_key(k) {
                c.insert(k.into(), v);
            }
        };
        put("T", self.dt);
        put("I0", self.intersection_start);
        put("I1", self.intersection_end);
        put("L", self.cross_zone);
        put("C0", self.c_min);
        put("C1", self.c_max);
        put("R", self.road_width);
        put("W", self.ped_speed_x);
    }

    pub fn task(&self) -> Result<Task, EnvError> {
        self.validate()?;
        let base = catalog::load("intersection").expect("bundled intersection model");
        let mut crossing = Vec::new();
        for v in &self.cross_speeds {
            let mut m = instantiate_parameter(&base, &BTreeMap::from([("CV".to_string(), *v)]))?;
            m.name = cross_model_name(*v);
            let mut mm = MonitoredModel::new(m);
            self.geometry(&mut mm);
            crossing.push(mm);
        }
        let mut walking = Vec::new();
        for name in ["crosswalk_enters", "crosswalk_stays"] {
            let mut mm = MonitoredModel::new(catalog::load(name).expect("bundled crosswalk model"));
            self.geometry(&mut mm);
            walking.push(mm);
        }
        let actions = actions_of(&crossing)?;
        let past = |x: f64| Formula::Cmp(Term::var("y"), CmpOp::Ge, Term::num(x));
        Ok(Task {
            subtasks: vec![
                Subtask {
                    name: INTERSECTION.into(),
                    models: crossing,
                    termination: past(self.intersection_end),
                    next: Some(CROSSWALK.into()),
                },
                Subtask {
                    name: CROSSWALK.into(),
                    models: walking,
                    termination: past(self.c_max),
                    next: None,
                },
            ],
            actions,
        })
    }
}

pub struct HierEnv {
    cfg: HierEnvConfig,
    cross_speed: f64,
    entry_at: Option<f64>,
}

impl HierEnv {
    pub fn new(cfg: HierEnvConfig) -> HierEnv {
        HierEnv {
            cross_speed: cfg.cross_speeds[0],
            entry_at: None,
            cfg,
        }
    }

    pub fn cross_speed(&self) -> f64 {
        self.cross_speed
    }

    /// Sidewalk position at which the pedestrian turns onto the road.
    pub fn entry_point(&self) -> Option<f64> {
        self.entry_at
    }

    pub fn subtask(&self, s: &State) -> &'static str {
        if s.value("y") < self.cfg.intersection_end {
            INTERSECTION
        } else {
            CROSSWALK
        }
    }

    /// One control period of car, cross traffic and pedestrian. The
    /// pedestrian decides to cross at the end of a period and starts
    /// walking in the next one.
    pub fn advance(&self, s: &State, effect: &Effect) -> State {
        let c = &self.cfg;
        let mut out = apply_effect(effect, s);
        let a = out.get("a").unwrap_or(0.0);
        let mut x = [out.value("y"), out.value("v")];
        rk4_integrate(
            &|x: &[f64], dx: &mut [f64]| {
                dx[0] = x[1];
                dx[1] = a;
            },
            &mut x,
            c.dt,
            c.substeps,
        );
        out.set("y", x[0]);
        out.set("v", x[1]);
        out.set("t", out.get("t").unwrap_or(0.0) + c.dt);
        out.set("cx", out.value("cx") + self.cross_speed * c.dt);
        let go = out.value("go");
        if go > 0.0 {
            out.set("px", out.value("px") + c.ped_speed_x * go * c.dt);
        } else {
            let py = out.value("ped_y") + c.ped_speed_y * c.dt;
            out.set("ped_y", py);
            if self.entry_at.is_some_and(|e| py >= e) {
                out.set("go", 1.0);
            }
        }
        out
    }
}

impl Environment for HierEnv {
    fn reset(&mut self, seed: u64) -> State {
        let c = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.cross_speed = c.cross_speeds[rng.gen_range(0..c.cross_speeds.len())];
        self.entry_at = match c.entry {
            EntryPolicy::Never => None,
            EntryPolicy::At { ped_y } => Some(ped_y),
            EntryPolicy::Sampled if c.c_min < c.c_max => Some(rng.gen_range(c.c_min..=c.c_max)),
            EntryPolicy::Sampled => Some(c.c_min),
        };
        State::from_pairs([
            ("y", 0.0),
            ("v", 0.0),
            ("a", 0.0),
            ("t", 0.0),
            ("cx", c.cross_start),
            ("px", c.ped_start_x),
            ("ped_y", c.ped_start_y),
            ("go", 0.0),
        ])
    }

    fn step(&mut self, s: &State, effect: &Effect) -> Step {
        let next = self.advance(s, effect);
        let weight = match self.subtask(s) {
            INTERSECTION => self.cfg.intersection_progress,
            _ => self.cfg.crosswalk_progress,
        };
        let mut reward = weight * (next.value("y") - s.value("y")) - self.cfg.step_cost;
        if self.violation(&next) {
            reward -= self.cfg.crash_penalty;
        }
        Step { state: next, reward }
    }

    fn done(&self, s: &State) -> bool {
        s.value("y") >= self.cfg.goal
    }

    fn violation(&self, s: &State) -> bool {
        let c = &self.cfg;
        let y = s.value("y");
        let (cx, px) = (s.value("cx"), s.value("px"));
        let crossing = y > c.intersection_start && y < c.intersection_end && (0.0..=c.cross_zone).contains(&cx);
        let walking = y > c.c_min && y < c.c_max && (0.0..=c.road_width).contains(&px);
        crossing || walking
    }

    fn period(&self) -> f64 {
        self.cfg.dt
    }

    fn accurate_models(&self) -> Vec<String> {
        let ped = if self.entry_at.is_some() {
            "crosswalk_enters"
        } else {
            "crosswalk_stays"
        };
        vec![cross_model_name(self.cross_speed), ped.into()]
    }
}

//! An environment given directly by an ODE, for checking controllers
//! synthesised from data against the system that produced the data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsl::{Formula, Ode};
use crate::runtime::{Environment, Step};
use crate::semantics::{apply_effect, eval_formula, flow, Effect, FlowConfig, State};

pub struct PlantEnv {
    plant: Ode,
    period: f64,
    flow_cfg: FlowConfig,
    safe: Formula,
    /// Fixed part of every initial state.
    start: State,
    /// Variables drawn uniformly per episode, kept only if `admit` holds.
    boxes: Vec<(String, [f64; 2])>,
    admit: Formula,
}

impl PlantEnv {
    pub fn new(plant: Ode, period: f64, safe: Formula, start: State) -> PlantEnv {
        PlantEnv {
            plant,
            period,
            flow_cfg: FlowConfig::rk4(period / 50.0),
            safe,
            start,
            boxes: Vec::new(),
            admit: Formula::True,
        }
    }

    pub fn with_flow(mut self, cfg: FlowConfig) -> Self {
        self.flow_cfg = cfg;
        self
    }

    /// Randomises initial states within the box, subject to `admit`.
    pub fn with_random_start(mut self, boxes: Vec<(String, [f64; 2])>, admit: Formula) -> Self {
        self.boxes = boxes;
        self.admit = admit;
        self
    }
}

impl Environment for PlantEnv {
    fn reset(&mut self, seed: u64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10_000 {
            let mut s = self.start.clone();
            for (v, [lo, hi]) in &self.boxes {
                s.set(v.clone(), if lo < hi { rng.gen_range(*lo..*hi) } else { *lo });
            }
            if eval_formula(&self.admit, &s).unwrap_or(false) {
                return s;
            }
        }
        log::warn!("no admissible random start found; using the fixed start");
        self.start.clone()
    }

    fn step(&mut self, s: &State, effect: &Effect) -> Step {
        let after = apply_effect(effect, s);
        // the plant has no domain, so integration can only fail on overflow
        let state = flow(&self.plant, &after, self.period, &self.flow_cfg).unwrap_or(after);
        Step { state, reward: 0.0 }
    }

    fn done(&self, _: &State) -> bool {
        false
    }

    fn violation(&self, s: &State) -> bool {
        !eval_formula(&self.safe, s).unwrap_or(false)
    }

    fn period(&self) -> f64 {
        self.period
    }
}

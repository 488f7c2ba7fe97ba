//! Learners plugged into the runtime: tabular Q-learning and two trivial
//! choosers used as baselines.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::Learner;
use crate::semantics::State;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlError {
    #[error("discount must lie in [0, 1), got {0}")]
    Discount(f64),
    #[error("learning rate must lie in (0, 1], got {0}")]
    LearningRate(f64),
    #[error("exploration rate must lie in [0, 1], got {0}")]
    Epsilon(f64),
    #[error("bin width for `{0}` must be positive")]
    BinWidth(String),
}

/// Uniform binning of selected state variables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Binning {
    pub widths: Vec<(String, f64)>,
}

impl Binning {
    pub fn key(&self, s: &State) -> Vec<i64> {
        self.widths
            .iter()
            .map(|(v, w)| (s.get(v).unwrap_or(0.0) / w).floor() as i64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon: f64,
}

impl Default for QParams {
    fn default() -> Self {
        QParams {
            learning_rate: 0.1,
            discount: 0.95,
            epsilon: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QTable {
    params: QParams,
    binning: Binning,
    values: HashMap<(Vec<i64>, usize), f64>,
}

impl QTable {
    pub fn new(params: QParams, binning: Binning) -> Result<QTable, RlError> {
        if !(0.0..1.0).contains(&params.discount) {
            return Err(RlError::Discount(params.discount));
        }
        if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
            return Err(RlError::LearningRate(params.learning_rate));
        }
        if !(0.0..=1.0).contains(&params.epsilon) {
            return Err(RlError::Epsilon(params.epsilon));
        }
        if let Some((v, _)) = binning.widths.iter().find(|(_, w)| !(*w > 0.0)) {
            return Err(RlError::BinWidth(v.clone()));
        }
        Ok(QTable {
            params,
            binning,
            values: HashMap::new(),
        })
    }

    pub fn get(&self, s: &State, u: usize) -> f64 {
        self.value(&self.binning.key(s), u)
    }

    pub fn set(&mut self, s: &State, u: usize, q: f64) {
        self.values.insert((self.binning.key(s), u), q);
    }

    fn value(&self, key: &[i64], u: usize) -> f64 {
        self.values.get(&(key.to_vec(), u)).copied().unwrap_or(0.0)
    }

    /// First action of `avail` with the largest value.
    pub fn greedy(&self, avail: &[usize], s: &State) -> usize {
        let key = self.binning.key(s);
        let mut best = avail[0];
        let mut best_q = self.value(&key, best);
        for &u in &avail[1..] {
            let q = self.value(&key, u);
            if q > best_q {
                best = u;
                best_q = q;
            }
        }
        best
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Learner for QTable {
    fn choose(&mut self, avail: &[usize], s: &State, rng: &mut ChaCha8Rng) -> usize {
        assert!(!avail.is_empty(), "choose called without available actions");
        if self.params.epsilon > 0.0 && rng.gen_bool(self.params.epsilon) {
            avail[rng.gen_range(0..avail.len())]
        } else {
            self.greedy(avail, s)
        }
    }

    /// One-step TD update; the bootstrap maximum ranges over the actions
    /// still safe in the successor.
    fn update(&mut self, s: &State, u: usize, s_next: &State, reward: f64, next_avail: &[usize]) {
        let next_key = self.binning.key(s_next);
        let future = next_avail
            .iter()
            .map(|&a| self.value(&next_key, a))
            .fold(None, |m: Option<f64>, q| Some(m.map_or(q, |m| m.max(q))))
            .unwrap_or(0.0);
        let key = self.binning.key(s);
        let q = self.value(&key, u);
        let target = reward + self.params.discount * future;
        self.values
            .insert((key, u), q + self.params.learning_rate * (target - q));
    }
}

/// Picks uniformly among the available actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformChooser;

impl Learner for UniformChooser {
    fn choose(&mut self, avail: &[usize], _s: &State, rng: &mut ChaCha8Rng) -> usize {
        avail[rng.gen_range(0..avail.len())]
    }

    fn update(&mut self, _: &State, _: usize, _: &State, _: f64, _: &[usize]) {}
}

/// Always the lowest-indexed available action.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstChooser;

impl Learner for FirstChooser {
    fn choose(&mut self, avail: &[usize], _s: &State, _rng: &mut ChaCha8Rng) -> usize {
        avail[0]
    }

    fn update(&mut self, _: &State, _: usize, _: &State, _: f64, _: &[usize]) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn table(eps: f64) -> QTable {
        QTable::new(
            QParams {
                learning_rate: 0.5,
                discount: 0.9,
                epsilon: eps,
            },
            Binning {
                widths: vec![("x".into(), 1.0)],
            },
        )
        .unwrap()
    }

    #[test]
    fn ties_go_to_the_first_action() {
        let mut q = table(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = State::from_pairs([("x", 0.5)]);
        assert_eq!(q.choose(&[2, 0, 1], &s, &mut rng), 2);
        q.set(&s, 1, 1.0);
        assert_eq!(q.choose(&[2, 0, 1], &s, &mut rng), 1);
    }

    #[test]
    fn self_loop_converges_to_discounted_sum() {
        let mut q = table(0.0);
        let s = State::from_pairs([("x", 0.0)]);
        let fixed = 1.0 / (1.0 - 0.9);
        let mut last = 0.0;
        for _ in 0..400 {
            q.update(&s, 0, &s, 1.0, &[0]);
            let now = q.get(&s, 0);
            assert!(now >= last);
            last = now;
        }
        assert!((last - fixed).abs() < 1e-6, "{last}");
    }

    #[test]
    fn bootstrap_uses_only_safe_successor_actions() {
        let mut q = table(0.0);
        let s = State::from_pairs([("x", 0.0)]);
        let t = State::from_pairs([("x", 3.0)]);
        q.set(&t, 0, 10.0);
        q.set(&t, 1, -1.0);
        q.update(&s, 0, &t, 0.0, &[1]);
        assert_eq!(q.get(&s, 0), -(0.5 * 0.9));
    }

    #[test]
    fn rejects_bad_parameters() {
        let b = Binning::default();
        let p = QParams {
            discount: 1.0,
            ..QParams::default()
        };
        assert_eq!(QTable::new(p, b.clone()).unwrap_err(), RlError::Discount(1.0));
        let p = QParams {
            learning_rate: 0.0,
            ..QParams::default()
        };
        assert!(QTable::new(p, b).is_err());
    }
}

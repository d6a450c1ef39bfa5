use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An N-step experience record.
///
/// `reward` is `sum_{n<k} gamma^n r_{i+n}` and `discount` is `gamma^k`, or 0
/// when the episode terminated inside the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Transition<T> {
    pub obs: Vec<T>,
    pub action: Vec<T>,
    pub reward: T,
    pub next_obs: Vec<T>,
    pub discount: T,
}

/// How an environment step ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepEnd {
    Continue,
    /// True termination: no bootstrap from the final state.
    Terminal,
    /// Time limit: pending windows bootstrap from the final state.
    Truncated,
}

impl StepEnd {
    pub fn is_end(self) -> bool {
        self != StepEnd::Continue
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct PendingStep<T> {
    obs: Vec<T>,
    action: Vec<T>,
    reward: T,
}

/// Per-episode sliding window that turns raw steps into N-step transitions.
///
/// Rewards are accumulated in time order with the discount built by repeated
/// multiplication, `acc = r_0; g = gamma; acc += g * r_n; g *= gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NStepAccumulator<T> {
    horizon: usize,
    gamma: T,
    pending: VecDeque<PendingStep<T>>,
    finished: bool,
}

impl<T: Scalar> NStepAccumulator<T> {
    pub fn new(horizon: usize, gamma: T) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("trajectory length N must be at least 1".into()));
        }
        if !(gamma >= T::zero() && gamma <= T::one()) {
            return Err(Error::Config(format!("discount must lie in [0, 1], got {gamma}")));
        }
        Ok(Self {
            horizon,
            gamma,
            pending: VecDeque::with_capacity(horizon),
            finished: false,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Clear the window at an episode boundary.
    pub fn reset(&mut self) {
        self.pending.clear();
        self.finished = false;
    }

    pub fn push(
        &mut self,
        obs: Vec<T>,
        action: Vec<T>,
        reward: T,
        next_obs: &[T],
        end: StepEnd,
    ) -> Result<Vec<Transition<T>>> {
        if self.finished {
            return Err(Error::Contract(
                "step pushed after the episode ended; call reset() first".into(),
            ));
        }
        self.pending.push_back(PendingStep { obs, action, reward });
        let mut out = Vec::new();
        match end {
            StepEnd::Continue => {
                if self.pending.len() == self.horizon {
                    out.push(self.emit_front(next_obs, false));
                }
            }
            StepEnd::Terminal | StepEnd::Truncated => {
                while !self.pending.is_empty() {
                    out.push(self.emit_front(next_obs, end == StepEnd::Terminal));
                }
                self.finished = true;
            }
        }
        Ok(out)
    }

    fn emit_front(&mut self, bootstrap: &[T], terminal: bool) -> Transition<T> {
        let mut rewards = self.pending.iter().map(|s| s.reward);
        let mut acc = rewards.next().expect("window is non-empty");
        let mut g = self.gamma;
        for r in rewards {
            acc += g * r;
            g *= self.gamma;
        }
        let first = self.pending.pop_front().unwrap();
        Transition {
            obs: first.obs,
            action: first.action,
            reward: acc,
            next_obs: bootstrap.to_vec(),
            discount: if terminal { T::zero() } else { g },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn push(acc: &mut NStepAccumulator<f64>, t: usize, r: f64, end: StepEnd) -> Vec<Transition<f64>> {
        acc.push(vec![t as f64], vec![-(t as f64)], r, &[t as f64 + 1.0], end).unwrap()
    }

    #[test]
    fn one_step_emits_raw_transitions() {
        let mut acc = NStepAccumulator::new(1, 0.9).unwrap();
        for t in 0..5 {
            let out = push(&mut acc, t, t as f64 * 0.5, StepEnd::Continue);
            assert_eq!(
                out,
                vec![Transition {
                    obs: vec![t as f64],
                    action: vec![-(t as f64)],
                    reward: t as f64 * 0.5,
                    next_obs: vec![t as f64 + 1.0],
                    discount: 0.9,
                }]
            );
        }
    }

    #[test]
    fn three_step_geometric_sum() {
        let mut acc = NStepAccumulator::new(3, 0.5).unwrap();
        assert!(push(&mut acc, 0, 1.0, StepEnd::Continue).is_empty());
        assert!(push(&mut acc, 1, 2.0, StepEnd::Continue).is_empty());
        let out = push(&mut acc, 2, 3.0, StepEnd::Continue);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].reward, 2.75);
        assert_eq!(out[0].discount, 0.125);
        assert_eq!(out[0].obs, vec![0.0]);
        assert_eq!(out[0].next_obs, vec![3.0]);
    }

    #[test]
    fn terminal_flushes_with_zero_discount() {
        let mut acc = NStepAccumulator::new(3, 0.5).unwrap();
        assert!(push(&mut acc, 0, 1.0, StepEnd::Continue).is_empty());
        let out = push(&mut acc, 1, 2.0, StepEnd::Terminal);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|t| t.discount == 0.0));
        assert_eq!(out[0].reward, 2.0);
        assert_eq!(out[1].reward, 2.0);
    }

    #[test]
    fn truncation_bootstraps_with_shortened_horizons() {
        let mut acc = NStepAccumulator::new(3, 0.5).unwrap();
        push(&mut acc, 0, 1.0, StepEnd::Continue);
        let out = push(&mut acc, 1, 2.0, StepEnd::Truncated);
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].reward, out[0].discount), (2.0, 0.25));
        assert_eq!((out[1].reward, out[1].discount), (2.0, 0.5));
        assert!(out.iter().all(|t| t.next_obs == vec![2.0]));
    }

    #[test]
    fn pushing_past_episode_end_requires_reset() {
        let mut acc = NStepAccumulator::new(2, 0.9).unwrap();
        push(&mut acc, 0, 1.0, StepEnd::Terminal);
        let err = acc.push(vec![0.0], vec![0.0], 0.0, &[0.0], StepEnd::Continue);
        assert!(matches!(err, Err(Error::Contract(_))));
        acc.reset();
        assert!(push(&mut acc, 0, 1.0, StepEnd::Continue).is_empty());
    }

    #[test]
    fn invalid_configuration() {
        assert!(NStepAccumulator::<f64>::new(0, 0.9).is_err());
        assert!(NStepAccumulator::<f64>::new(3, 1.5).is_err());
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, soft_indicator, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

const DT: f64 = 0.05;
const EPISODE_LIMIT: usize = 200;
const TOLERANCE: f64 = 0.05;
const MARGIN: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqState {
    pub pos: f64,
    pub vel: f64,
}

/// Deterministic scalar double integrator rewarded for staying near the
/// origin. Serves as a ground-truth task for critic evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqEnv {
    state: LqState,
    steps: usize,
    clipped: u64,
    rng: ChaCha8Rng,
}

impl LqEnv {
    pub fn new(seed: u64) -> Self {
        let mut env = Self {
            state: LqState { pos: 0.0, vel: 0.0 },
            steps: 0,
            clipped: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        env
    }

    pub fn state(&self) -> LqState {
        self.state
    }

    pub fn set_state(&mut self, state: LqState) {
        self.state = state;
    }

    pub fn observe(state: LqState) -> Vec<f64> {
        vec![state.pos, state.vel]
    }

    /// Pure dynamics: next state and the reward earned on arrival.
    pub fn transition(state: LqState, action: f64) -> (LqState, f64) {
        let a = action.clamp(-1.0, 1.0);
        let vel = state.vel + a * DT;
        let pos = state.pos + vel * DT;
        let reward = soft_indicator(pos.abs(), TOLERANCE, MARGIN).expect("positive margin");
        (LqState { pos, vel }, reward)
    }

    /// Draw a start state from the reset distribution without touching the episode.
    pub fn sample_state<R: Rng + ?Sized>(rng: &mut R) -> LqState {
        LqState {
            pos: rng.random_range(-1.0..=1.0),
            vel: rng.random_range(-0.5..=0.5),
        }
    }
}

impl Environment for LqEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: 2,
            action_dim: 1,
            action_bounds: vec![(-1.0, 1.0)],
            episode_limit: EPISODE_LIMIT,
            max_reward: 1.0,
        }
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = Self::sample_state(&mut self.rng);
        self.steps = 0;
        self.observation()
    }

    fn observation(&self) -> Vec<f64> {
        Self::observe(self.state)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.steps >= EPISODE_LIMIT {
            return Err(Error::Env("lq task stepped past its episode limit".into()));
        }
        let a = check_action(action, &[(-1.0, 1.0)], &mut self.clipped)?[0];
        let (next, reward) = Self::transition(self.state, a);
        self.state = next;
        self.steps += 1;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminal: false,
            truncated: self.steps >= EPISODE_LIMIT,
        })
    }

    fn clipped_actions(&self) -> u64 {
        self.clipped
    }
}

/// Empirical discounted return of taking `action` in `state` and then
/// following `policy` for the rest of `horizon` steps, averaged over
/// `episodes` rollouts. The episode limit is ignored: this estimates the
/// infinite-horizon value up to `gamma^horizon`.
pub fn monte_carlo_q<P>(policy: P, state: LqState, action: f64, gamma: f64, horizon: usize, episodes: usize) -> f64
where
    P: Fn(&[f64]) -> f64,
{
    let episodes = episodes.max(1);
    let mut total = 0.0;
    for _ in 0..episodes {
        let (mut s, r) = LqEnv::transition(state, action);
        let mut ret = r;
        let mut discount = gamma;
        for _ in 1..horizon {
            let (next, r) = LqEnv::transition(s, policy(&LqEnv::observe(s)));
            ret += discount * r;
            discount *= gamma;
            s = next;
        }
        total += ret;
    }
    total / episodes as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_discount_is_the_immediate_reward() {
        let s = LqState { pos: 0.3, vel: -0.2 };
        let (_, r) = LqEnv::transition(s, 0.7);
        assert_eq!(monte_carlo_q(|_| 0.0, s, 0.7, 0.0, 50, 1), r);
    }

    #[test]
    fn resting_at_origin_earns_geometric_series() {
        let origin = LqState { pos: 0.0, vel: 0.0 };
        let (gamma, h) = (0.95, 300);
        let q = monte_carlo_q(|_| 0.0, origin, 0.0, gamma, h, 3);
        let want = (1.0 - gamma.powi(h as i32)) / (1.0 - gamma);
        assert!((q - want).abs() < 1e-10);
    }

    #[test]
    fn estimates_are_deterministic() {
        let s = LqState { pos: -0.6, vel: 0.4 };
        let policy = |o: &[f64]| -o[0] - o[1];
        assert_eq!(
            monte_carlo_q(policy, s, 0.2, 0.9, 100, 2),
            monte_carlo_q(policy, s, 0.2, 0.9, 100, 2)
        );
    }

    #[test]
    fn episode_limit_and_reset_distribution() {
        let mut env = LqEnv::new(4);
        let s = env.state();
        assert!(s.pos.abs() <= 1.0 && s.vel.abs() <= 0.5);
        let n = (0..).take_while(|_| !env.step(&[0.0]).unwrap().truncated).count() + 1;
        assert_eq!(n, 200);
    }
}

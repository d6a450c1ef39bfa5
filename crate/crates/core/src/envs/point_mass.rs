use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, soft_indicator, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

const DT: f64 = 0.05;
const DAMPING: f64 = 0.1;
const EPISODE_LIMIT: usize = 500;
const TOLERANCE: f64 = 0.05;
const MARGIN: f64 = 0.2;

/// Damped 2-D double integrator in the box `[-1, 1]^2` that must reach a
/// random target. Observation: `(pos, vel, target)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pos: [f64; 2],
    vel: [f64; 2],
    target: [f64; 2],
    steps: usize,
    clipped: u64,
    rng: ChaCha8Rng,
}

impl PointMass {
    pub fn new(seed: u64) -> Self {
        let mut env = Self {
            pos: [0.0; 2],
            vel: [0.0; 2],
            target: [0.0; 2],
            steps: 0,
            clipped: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        env
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2], target: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.target = target;
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    fn distance(&self) -> f64 {
        ((self.pos[0] - self.target[0]).powi(2) + (self.pos[1] - self.target[1]).powi(2)).sqrt()
    }
}

impl Environment for PointMass {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: 6,
            action_dim: 2,
            action_bounds: vec![(-1.0, 1.0); 2],
            episode_limit: EPISODE_LIMIT,
            max_reward: 1.0,
        }
    }

    fn reset(&mut self) -> Vec<f64> {
        for d in 0..2 {
            self.pos[d] = self.rng.random_range(-1.0..=1.0);
            self.target[d] = self.rng.random_range(-1.0..=1.0);
        }
        self.vel = [0.0; 2];
        self.steps = 0;
        self.observation()
    }

    fn observation(&self) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0],
            self.vel[1],
            self.target[0],
            self.target[1],
        ]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.steps >= EPISODE_LIMIT {
            return Err(Error::Env("point mass stepped past its episode limit".into()));
        }
        let a = check_action(action, &[(-1.0, 1.0); 2], &mut self.clipped)?;
        for d in 0..2 {
            self.vel[d] += a[d] * DT - DAMPING * self.vel[d] * DT;
            let next = self.pos[d] + self.vel[d] * DT;
            if next.abs() > 1.0 {
                self.pos[d] = next.clamp(-1.0, 1.0);
                self.vel[d] = 0.0;
            } else {
                self.pos[d] = next;
            }
        }
        self.steps += 1;
        Ok(StepResult {
            observation: self.observation(),
            reward: soft_indicator(self.distance(), TOLERANCE, MARGIN)?,
            terminal: false,
            truncated: self.steps >= EPISODE_LIMIT,
        })
    }

    fn clipped_actions(&self) -> u64 {
        self.clipped
    }
}

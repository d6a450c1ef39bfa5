use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};

const GRAVITY: f64 = 10.0;
const LENGTH: f64 = 1.0;
const MASS: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const EPISODE_LIMIT: usize = 1000;

/// Torque-limited swing-up. The angle is measured from upright, so an episode
/// starts hanging near `pi` and the reward `(1 + cos angle) / 2` peaks at the top.
///
/// Observation: `(cos angle, sin angle, velocity / 8)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pendulum {
    angle: f64,
    velocity: f64,
    steps: usize,
    clipped: u64,
    rng: ChaCha8Rng,
}

fn wrap(angle: f64) -> f64 {
    if angle > PI {
        angle - 2.0 * PI
    } else if angle <= -PI {
        angle + 2.0 * PI
    } else {
        angle
    }
}

impl Pendulum {
    pub fn new(seed: u64) -> Self {
        let mut env = Self {
            angle: PI,
            velocity: 0.0,
            steps: 0,
            clipped: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        env
    }

    pub fn state(&self) -> (f64, f64) {
        (self.angle, self.velocity)
    }

    pub fn set_state(&mut self, angle: f64, velocity: f64) {
        self.angle = angle;
        self.velocity = velocity;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Energy of the swinging rod with its minimum (hanging at rest) at zero.
    pub fn energy(angle: f64, velocity: f64) -> f64 {
        let inertia = MASS * LENGTH * LENGTH / 3.0;
        0.5 * inertia * velocity * velocity + MASS * GRAVITY * 0.5 * LENGTH * (1.0 + angle.cos())
    }

    pub fn reward_at(angle: f64) -> f64 {
        0.5 * (1.0 + angle.cos())
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: 3,
            action_dim: 1,
            action_bounds: vec![(-MAX_TORQUE, MAX_TORQUE)],
            episode_limit: EPISODE_LIMIT,
            max_reward: 1.0,
        }
    }

    fn reset(&mut self) -> Vec<f64> {
        self.angle = self.rng.random_range(PI - 0.1..=PI + 0.1);
        self.velocity = 0.0;
        self.steps = 0;
        self.observation()
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.angle.cos(), self.angle.sin(), self.velocity / MAX_SPEED]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.steps >= EPISODE_LIMIT {
            return Err(Error::Env("pendulum stepped past its episode limit".into()));
        }
        let torque = check_action(action, &[(-MAX_TORQUE, MAX_TORQUE)], &mut self.clipped)?[0];
        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * self.angle.sin() + 3.0 * torque / (MASS * LENGTH * LENGTH);
        // semi-implicit Euler: velocity first, then position with the new velocity
        self.velocity = (self.velocity + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.angle = wrap(self.angle + self.velocity * DT);
        self.steps += 1;
        Ok(StepResult {
            observation: self.observation(),
            reward: Self::reward_at(self.angle),
            terminal: false,
            truncated: self.steps >= EPISODE_LIMIT,
        })
    }

    fn clipped_actions(&self) -> u64 {
        self.clipped
    }
}

/// Scripted reference policy: bang-bang energy pumping until the pendulum is
/// near the top, then a saturated PD balance law.
#[derive(Clone, Copy, Debug)]
pub struct SwingUpController {
    pub kp: f64,
    pub kd: f64,
    pub capture_angle: f64,
}

impl Default for SwingUpController {
    fn default() -> Self {
        Self {
            kp: 10.0,
            kd: 2.0,
            capture_angle: 0.35,
        }
    }
}

impl SwingUpController {
    pub fn act(&self, obs: &[f64]) -> f64 {
        let angle = obs[1].atan2(obs[0]);
        let velocity = obs[2] * MAX_SPEED;
        if angle.abs() < self.capture_angle {
            return (-(self.kp * angle + self.kd * velocity)).clamp(-MAX_TORQUE, MAX_TORQUE);
        }
        let target = Pendulum::energy(0.0, 0.0);
        let deficit = target - Pendulum::energy(angle, velocity);
        // d(energy)/dt = velocity * torque
        let direction = if velocity == 0.0 { 1.0 } else { velocity.signum() };
        if deficit > 0.0 {
            MAX_TORQUE * direction
        } else {
            -0.5 * MAX_TORQUE * direction
        }
    }

    /// Undiscounted return of one full episode.
    pub fn episode_return(&self, env: &mut Pendulum) -> f64 {
        let mut obs = env.reset();
        let mut total = 0.0;
        loop {
            let r = env.step(&[self.act(&obs)]).expect("controller emits valid torques");
            total += r.reward;
            if r.is_last() {
                return total;
            }
            obs = r.observation;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_extremes() {
        let mut env = Pendulum::new(0);
        env.set_state(0.0, 0.0);
        assert_eq!(env.step(&[0.0]).unwrap().reward, 1.0);
        env.set_state(PI, 0.0);
        assert_eq!(Pendulum::reward_at(PI), 0.0);
        assert!(env.step(&[0.0]).unwrap().reward < 1e-15);
    }

    #[test]
    fn hanging_at_rest_stays_put() {
        let mut env = Pendulum::new(0);
        env.set_state(PI, 0.0);
        for _ in 0..999 {
            env.step(&[0.0]).unwrap();
        }
        let (a, v) = env.state();
        assert!((a.cos() + 1.0).abs() < 1e-12 && a.sin().abs() < 1e-12, "{a}");
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn reset_hangs_down_at_rest() {
        let mut env = Pendulum::new(5);
        for _ in 0..50 {
            env.reset();
            let (a, v) = env.state();
            assert!((PI - 0.1..=PI + 0.1).contains(&a));
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn episode_is_exactly_one_thousand_steps() {
        let mut env = Pendulum::new(1);
        env.reset();
        let mut count = 0;
        loop {
            let r = env.step(&[1.0]).unwrap();
            count += 1;
            assert!(!r.terminal);
            if r.truncated {
                break;
            }
        }
        assert_eq!(count, 1000);
        assert!(env.step(&[0.0]).is_err());
    }

    #[test]
    fn unforced_energy_drift_is_small() {
        let mut env = Pendulum::new(0);
        env.set_state(PI / 2.0, 0.0);
        let e0 = Pendulum::energy(PI / 2.0, 0.0);
        let mut energies = Vec::with_capacity(1000);
        for _ in 0..1000 {
            env.step(&[0.0]).unwrap();
            let (a, v) = env.state();
            energies.push(Pendulum::energy(a, v));
        }
        // The symplectic integrator oscillates around a conserved level;
        // compare averages over several swing periods at both ends.
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let drift = (mean(&energies[800..]) - mean(&energies[..200])).abs() / e0;
        assert!(drift < 0.05, "energy drift {drift}");
        let worst = energies.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max);
        assert!(worst < 0.15, "energy excursion {worst}");
    }

    #[test]
    fn out_of_bounds_torque_is_clipped() {
        let mut env = Pendulum::new(0);
        env.set_state(PI, 0.0);
        let mut twin = env.clone();
        env.step(&[50.0]).unwrap();
        twin.step(&[2.0]).unwrap();
        assert_eq!(env.state(), twin.state());
        assert_eq!(env.clipped_actions(), 1);
    }

    #[test]
    fn scripted_controller_swings_up_and_balances() {
        let ctrl = SwingUpController::default();
        let mut env = Pendulum::new(123);
        for _ in 0..5 {
            let ret = ctrl.episode_return(&mut env);
            assert!(ret >= 850.0, "controller return {ret}");
        }
    }
}

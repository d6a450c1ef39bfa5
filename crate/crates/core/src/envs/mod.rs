//! Small continuous-control tasks with rewards in `[0, 1]`.

mod lq;
mod pendulum;
mod point_mass;

pub use lq::{monte_carlo_q, LqEnv, LqState};
pub use pendulum::{Pendulum, SwingUpController};
pub use point_mass::PointMass;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub observation_dim: usize,
    pub action_dim: usize,
    /// Per-dimension `(low, high)`.
    pub action_bounds: Vec<(f64, f64)>,
    pub episode_limit: usize,
    /// Upper bound of the per-step reward.
    pub max_reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn is_last(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment {
    fn spec(&self) -> EnvSpec;

    /// Start a new episode and return its first observation.
    fn reset(&mut self) -> Vec<f64>;

    fn observation(&self) -> Vec<f64>;

    /// Advance one step. Out-of-range actions are clipped and counted; a wrong
    /// length, a non-finite component, or stepping a finished episode is a fault.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    /// Number of actions that had to be clipped into bounds.
    fn clipped_actions(&self) -> u64;
}

/// `1` for `eps <= c`, then `1 - tanh(w (eps - c) / m)^2` with
/// `w = atanh(sqrt(0.95))`, so the value is 0.05 at one margin past `c`.
pub fn soft_indicator(eps: f64, c: f64, m: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::Config(format!("soft indicator margin must be positive, got {m}")));
    }
    if eps <= c {
        return Ok(1.0);
    }
    let w = 0.95f64.sqrt().atanh();
    // 1 - tanh(x)^2 written as sech(x)^2 keeps precision in the tail
    let sech = 1.0 / (w * (eps - c) / m).cosh();
    Ok(sech * sech)
}

pub(crate) fn check_action(action: &[f64], bounds: &[(f64, f64)], clipped: &mut u64) -> Result<Vec<f64>> {
    if action.len() != bounds.len() {
        return Err(Error::Env(format!(
            "action has {} components, expected {}",
            action.len(),
            bounds.len()
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Env(format!("non-finite action {action:?}")));
    }
    let mut any = false;
    let out = action
        .iter()
        .zip(bounds)
        .map(|(&a, &(lo, hi))| {
            let c = a.clamp(lo, hi);
            any |= c != a;
            c
        })
        .collect();
    if any {
        *clipped += 1;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    Pendulum,
    PointMass,
    Lq,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "point_mass",
            EnvKind::Lq => "lq",
        }
    }

    pub fn make(self, seed: u64) -> AnyEnv {
        match self {
            EnvKind::Pendulum => AnyEnv::Pendulum(Pendulum::new(seed)),
            EnvKind::PointMass => AnyEnv::PointMass(PointMass::new(seed)),
            EnvKind::Lq => AnyEnv::Lq(LqEnv::new(seed)),
        }
    }

    pub fn spec(self) -> EnvSpec {
        self.make(0).spec()
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "point_mass" | "point-mass" => Ok(EnvKind::PointMass),
            "lq" => Ok(EnvKind::Lq),
            other => Err(format!("unknown environment `{other}` (pendulum|point_mass|lq)")),
        }
    }
}

/// Closed set of environments; serializable so actors can be checkpointed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AnyEnv {
    Pendulum(Pendulum),
    PointMass(PointMass),
    Lq(LqEnv),
}

macro_rules! delegate {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::Pendulum($e) => $body,
            AnyEnv::PointMass($e) => $body,
            AnyEnv::Lq($e) => $body,
        }
    };
}

impl Environment for AnyEnv {
    fn spec(&self) -> EnvSpec {
        delegate!(self, e => e.spec())
    }

    fn reset(&mut self) -> Vec<f64> {
        delegate!(self, e => e.reset())
    }

    fn observation(&self) -> Vec<f64> {
        delegate!(self, e => e.observation())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        delegate!(self, e => e.step(action))
    }

    fn clipped_actions(&self) -> u64 {
        delegate!(self, e => e.clipped_actions())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn soft_indicator_examples() {
        assert_eq!(soft_indicator(-3.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(soft_indicator(0.04, 0.05, 0.2).unwrap(), 1.0);
        assert!((soft_indicator(0.2, 0.0, 0.2).unwrap() - 0.05).abs() < 1e-12);
        // direct evaluation: 1 - tanh(atanh(sqrt(0.95)) / 2)^2
        let w = 0.95f64.sqrt().atanh();
        let want = 1.0 - (w / 2.0).tanh().powi(2);
        assert!((soft_indicator(0.1, 0.0, 0.2).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.365_488).abs() < 1e-6);
        assert!(soft_indicator(0.1, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn soft_indicator_is_continuous_and_non_increasing(
            c in -1.0f64..1.0,
            m in 0.01f64..2.0,
            a in 0.0f64..3.0,
            b in 0.0f64..3.0,
        ) {
            let at_c = soft_indicator(c, c, m).unwrap();
            let just_past = soft_indicator(c + 1e-9, c, m).unwrap();
            prop_assert!((at_c - just_past).abs() < 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let f_lo = soft_indicator(c + lo, c, m).unwrap();
            let f_hi = soft_indicator(c + hi, c, m).unwrap();
            prop_assert!(f_hi <= f_lo);
            prop_assert!(f_lo <= 1.0 && f_hi >= 0.0);
            // strictly positive wherever sech^2 is representable
            if 2.2 * hi / m < 300.0 {
                prop_assert!(f_hi > 0.0);
            }
        }
    }

    #[test]
    fn rewards_stay_in_unit_interval_under_random_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for kind in [EnvKind::Pendulum, EnvKind::PointMass, EnvKind::Lq] {
            let mut env = kind.make(3);
            let spec = env.spec();
            env.reset();
            for _ in 0..100_000 {
                let a: Vec<f64> = spec
                    .action_bounds
                    .iter()
                    .map(|&(lo, hi)| rng.random_range(lo * 1.5..hi * 1.5))
                    .collect();
                let r = env.step(&a).unwrap();
                assert!((0.0..=1.0).contains(&r.reward), "{kind:?} reward {}", r.reward);
                if r.is_last() {
                    env.reset();
                }
            }
            assert!(env.clipped_actions() > 0);
        }
    }

    #[test]
    fn bad_actions_are_faults() {
        let mut env = EnvKind::PointMass.make(0);
        env.reset();
        assert!(matches!(env.step(&[0.0]), Err(Error::Env(_))));
        assert!(matches!(env.step(&[f64::NAN, 0.0]), Err(Error::Env(_))));
    }

    #[test]
    fn env_names_parse() {
        for k in [EnvKind::Pendulum, EnvKind::PointMass, EnvKind::Lq] {
            assert_eq!(k.name().parse::<EnvKind>().unwrap(), k);
        }
        assert!("cheetah".parse::<EnvKind>().is_err());
    }
}

use crate::envs::{EnvKind, Environment};
use crate::error::Result;
use crate::learner::ActionScale;
use crate::runtime::select_action;
use crate::seeds;
use crate::Net;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (0 for a single episode).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl EvalReport {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: returns.iter().copied().fold(f64::INFINITY, f64::min),
            max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            returns,
        }
    }
}

/// Run `episodes` noise-free episodes of `policy`. Episode `e` always uses
/// the environment seed stream `("eval", e)` of `seed`, independent of the
/// training streams.
pub fn evaluate(policy: &Net, env: EnvKind, seed: u64, episodes: usize) -> Result<EvalReport> {
    let scale = ActionScale::from_bounds(&env.spec().action_bounds)?;
    let mut unused = seeds::stream(seed, "eval-noise", 0);
    let mut returns = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut env = env.make(seeds::derive_seed(seed, "eval", e as u64));
        let mut x = env.reset();
        let mut total = 0.0;
        loop {
            let a = select_action(policy, &x, &mut unused, 0.0, &scale)?;
            let r = env.step(&a)?;
            total += r.reward;
            if r.is_last() {
                break;
            }
            x = r.observation;
        }
        returns.push(total);
    }
    Ok(EvalReport::from_returns(returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::actor_spec;

    #[test]
    fn single_episode_has_zero_std() {
        let r = EvalReport::from_returns(vec![12.5]);
        assert_eq!((r.mean, r.std, r.min, r.max), (12.5, 0.0, 12.5, 12.5));
    }

    #[test]
    fn noise_free_evaluation_repeats() {
        let spec = actor_spec(3, 1, &[8]).unwrap();
        let net = Net::new(spec, 4).unwrap();
        let a = evaluate(&net, EnvKind::Pendulum, 1, 2).unwrap();
        let b = evaluate(&net, EnvKind::Pendulum, 1, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.returns.len(), 2);
    }
}

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::snapshot::{ParameterSnapshot, SnapshotStore};
use crate::envs::{AnyEnv, Environment};
use crate::error::{Error, Result};
use crate::learner::ActionScale;
use crate::nn::{DenseNet, NetSpec};
use crate::replay::{NStepAccumulator, PrioritizedReplay, StepEnd};
use crate::scalar::Scalar;

/// `clip(pi(x) + epsilon * g, bounds)` with `g` standard normal per dimension.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(
    policy: &DenseNet<T>,
    observation: &[f64],
    rng: &mut R,
    epsilon: f64,
    scale: &ActionScale,
) -> Result<Vec<f64>> {
    let x: Vec<T> = observation.iter().map(|&v| T::of(v)).collect();
    let mean = scale.apply(&policy.predict(&x)?);
    Ok(mean
        .iter()
        .zip(scale.bounds())
        .map(|(&m, (lo, hi))| {
            let a = if epsilon > 0.0 {
                m.as_f64() + epsilon * rng.sample::<f64, _>(StandardNormal)
            } else {
                m.as_f64()
            };
            a.clamp(lo, hi)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorConfig {
    /// Standard deviation of the exploration noise, in action units.
    pub epsilon: f64,
    pub nstep: usize,
    pub gamma: f64,
    /// Poll for a newer snapshot every this many env steps (and at episode start).
    pub fetch_interval: u64,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            nstep: 5,
            gamma: 0.99,
            fetch_interval: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorStats {
    pub steps: u64,
    pub episodes: u64,
    pub transitions: u64,
    pub faults: u64,
    /// Version of the snapshot currently acted on (0 before the first fetch).
    pub version: u64,
    pub last_episode_return: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ActorStep {
    /// One environment step was taken and `transitions` items were inserted.
    Stepped { transitions: usize, episode_end: bool },
    /// The environment rejected the action; the episode was restarted.
    Fault(String),
    /// No snapshot has been published yet.
    Waiting,
}

/// Serializable actor state, used for checkpoint/resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ActorState<T> {
    pub env: AnyEnv,
    pub accumulator: NStepAccumulator<T>,
    pub rng: ChaCha8Rng,
    pub observation: Vec<f64>,
    pub episode_return: f64,
    pub episode_start: bool,
    pub since_fetch: u64,
    pub stats: ActorStats,
    /// Encoded frame of the snapshot being acted on.
    pub policy: Option<Vec<u8>>,
}

/// One experience-gathering worker with its own environment and rng stream.
pub struct Actor<T> {
    cfg: ActorConfig,
    scale: ActionScale,
    spec: NetSpec,
    env: AnyEnv,
    accumulator: NStepAccumulator<T>,
    rng: ChaCha8Rng,
    observation: Vec<f64>,
    episode_return: f64,
    episode_start: bool,
    since_fetch: u64,
    stats: ActorStats,
    policy: Option<Arc<ParameterSnapshot<T>>>,
}

impl<T: Scalar> Actor<T> {
    pub fn new(cfg: ActorConfig, scale: ActionScale, spec: NetSpec, mut env: AnyEnv, rng: ChaCha8Rng) -> Result<Self> {
        if !(cfg.epsilon >= 0.0 && cfg.epsilon.is_finite()) {
            return Err(Error::Config(format!("exploration noise must be >= 0, got {}", cfg.epsilon)));
        }
        if cfg.fetch_interval == 0 {
            return Err(Error::Config("snapshot fetch interval must be positive".into()));
        }
        let accumulator = NStepAccumulator::new(cfg.nstep, T::of(cfg.gamma))?;
        let observation = env.reset();
        Ok(Self {
            cfg,
            scale,
            spec,
            env,
            accumulator,
            rng,
            observation,
            episode_return: 0.0,
            episode_start: true,
            since_fetch: 0,
            stats: ActorStats::default(),
            policy: None,
        })
    }

    pub fn stats(&self) -> &ActorStats {
        &self.stats
    }

    pub fn env(&self) -> &AnyEnv {
        &self.env
    }

    fn refresh(&mut self, store: &SnapshotStore<T>) {
        let due = self.episode_start || self.since_fetch >= self.cfg.fetch_interval || self.policy.is_none();
        if !due {
            return;
        }
        if let Some(snap) = store.fetch() {
            if snap.version() >= self.stats.version {
                self.stats.version = snap.version();
                self.policy = Some(snap);
            }
        }
        self.since_fetch = 0;
    }

    fn restart(&mut self) {
        self.observation = self.env.reset();
        self.accumulator.reset();
        self.episode_return = 0.0;
        self.episode_start = true;
    }

    /// Take one environment step and insert any completed N-step transitions.
    pub fn step(&mut self, store: &SnapshotStore<T>, replay: &Mutex<PrioritizedReplay<T>>) -> ActorStep {
        self.refresh(store);
        let Some(policy) = self.policy.clone() else {
            return ActorStep::Waiting;
        };
        self.episode_start = false;
        let outcome = select_action(policy.params(), &self.observation, &mut self.rng, self.cfg.epsilon, &self.scale)
            .and_then(|a| self.env.step(&a).map(|r| (a, r)));
        let (action, result) = match outcome {
            Ok(v) => v,
            Err(e) => {
                self.stats.faults += 1;
                self.restart();
                return ActorStep::Fault(e.to_string());
            }
        };
        self.stats.steps += 1;
        self.since_fetch += 1;
        self.episode_return += result.reward;
        let end = if result.terminal {
            StepEnd::Terminal
        } else if result.truncated {
            StepEnd::Truncated
        } else {
            StepEnd::Continue
        };
        let conv = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        let next: Vec<T> = conv(&result.observation);
        let transitions = match self.accumulator.push(
            conv(&self.observation),
            conv(&action),
            T::of(result.reward),
            &next,
            end,
        ) {
            Ok(t) => t,
            Err(e) => {
                self.stats.faults += 1;
                self.restart();
                return ActorStep::Fault(e.to_string());
            }
        };
        let count = transitions.len();
        if count > 0 {
            let mut r = replay.lock();
            for t in transitions {
                r.insert(t);
            }
        }
        self.stats.transitions += count as u64;
        self.observation = result.observation;
        if end.is_end() {
            self.stats.episodes += 1;
            self.stats.last_episode_return = Some(self.episode_return);
            self.restart();
        }
        ActorStep::Stepped { transitions: count, episode_end: end.is_end() }
    }

    pub fn state(&self) -> ActorState<T> {
        ActorState {
            env: self.env.clone(),
            accumulator: self.accumulator.clone(),
            rng: self.rng.clone(),
            observation: self.observation.clone(),
            episode_return: self.episode_return,
            episode_start: self.episode_start,
            since_fetch: self.since_fetch,
            stats: self.stats.clone(),
            policy: self
                .policy
                .as_ref()
                .map(|p| Frame::from_net(p.version(), p.params()).encode()),
        }
    }

    pub fn from_state(cfg: ActorConfig, scale: ActionScale, spec: NetSpec, state: ActorState<T>) -> Result<Self> {
        let policy = match state.policy {
            Some(bytes) => {
                let (frame, _) = Frame::decode(&bytes)?;
                let version = frame.version;
                Some(Arc::new(ParameterSnapshot::new(version, frame.into_net(&spec)?)))
            }
            None => None,
        };
        Ok(Self {
            cfg,
            scale,
            spec,
            env: state.env,
            accumulator: state.accumulator,
            rng: state.rng,
            observation: state.observation,
            episode_return: state.episode_return,
            episode_start: state.episode_start,
            since_fetch: state.since_fetch,
            stats: state.stats,
            policy,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }
}

/// Shared stop flag and actor/learner step counters for threaded runs.
#[derive(Debug, Default)]
pub struct RunControl {
    stop: AtomicBool,
    actor_steps: AtomicU64,
    learner_steps: AtomicU64,
    /// Actor steps allowed per learner step; 0 disables the limit.
    ratio: f64,
    /// Budget offset fixed when the learner starts; actors are unlimited until then.
    offset: AtomicU64,
}

impl RunControl {
    pub fn new(ratio: f64) -> Self {
        Self {
            ratio,
            offset: AtomicU64::new(u64::MAX),
            ..Self::default()
        }
    }

    /// Start rate limiting: from now on actors may run `ratio` steps per
    /// learner step beyond the current counts.
    pub fn start_learner(&self) {
        let allowed = self.ratio * self.learner_steps() as f64;
        let offset = (self.actor_steps() as f64 - allowed).max(0.0) as u64;
        self.offset.store(offset, Ordering::SeqCst);
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    pub fn actor_steps(&self) -> u64 {
        self.actor_steps.load(Ordering::SeqCst)
    }

    pub fn learner_steps(&self) -> u64 {
        self.learner_steps.load(Ordering::SeqCst)
    }

    pub fn record_learner_step(&self) {
        self.learner_steps.fetch_add(1, Ordering::SeqCst);
    }

    pub fn set_counts(&self, actor_steps: u64, learner_steps: u64) {
        self.actor_steps.store(actor_steps, Ordering::SeqCst);
        self.learner_steps.store(learner_steps, Ordering::SeqCst);
    }

    fn may_act(&self) -> bool {
        let offset = self.offset.load(Ordering::SeqCst);
        if self.ratio <= 0.0 || offset == u64::MAX {
            return true;
        }
        let budget = offset as f64 + self.ratio * self.learner_steps() as f64;
        (self.actor_steps() as f64) < budget
    }
}

/// Run an actor until the control flag is raised; returns the actor for
/// inspection.
pub fn actor_loop<T: Scalar>(
    mut actor: Actor<T>,
    store: &SnapshotStore<T>,
    replay: &Mutex<PrioritizedReplay<T>>,
    control: &RunControl,
) -> Actor<T> {
    while !control.stopped() {
        if !control.may_act() {
            std::thread::sleep(Duration::from_micros(200));
            continue;
        }
        match actor.step(store, replay) {
            ActorStep::Stepped { .. } => {
                control.actor_steps.fetch_add(1, Ordering::SeqCst);
            }
            ActorStep::Fault(_) => {}
            ActorStep::Waiting => std::thread::sleep(Duration::from_millis(1)),
        }
    }
    actor
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvKind, LqEnv};
    use crate::nn::{Activation, Layer};
    use crate::replay::{SamplingMode, Transition};
    use crate::seeds;
    use rand::SeedableRng;

    fn constant_policy(value: f64, obs_dim: usize) -> DenseNet<f64> {
        let spec = NetSpec::new(vec![obs_dim, 1], Activation::Relu, Activation::Tanh).unwrap();
        let layer = Layer::from_parts(obs_dim, 1, vec![0.0; obs_dim], vec![value.atanh()]).unwrap();
        DenseNet::from_layers(spec, vec![layer]).unwrap()
    }

    #[test]
    fn zero_noise_is_the_policy() {
        let scale = ActionScale::from_bounds(&[(-2.0, 2.0)]).unwrap();
        let net = constant_policy(0.25, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = select_action(&net, &[0.1, 0.2, 0.3], &mut rng, 0.0, &scale).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noise_std_matches_epsilon() {
        let scale = ActionScale::from_bounds(&[(-100.0, 100.0)]).unwrap();
        let net = constant_policy(0.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| select_action(&net, &[0.0], &mut rng, 0.3, &scale).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var.sqrt() - 0.3).abs() < 0.003, "std {}", var.sqrt());
    }

    #[test]
    fn noisy_actions_are_clipped() {
        let scale = ActionScale::from_bounds(&[(-1.0, 1.0)]).unwrap();
        let net = constant_policy(0.99, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a = select_action(&net, &[0.0], &mut rng, 5.0, &scale).unwrap()[0];
            assert!((-1.0..=1.0).contains(&a));
        }
    }

    fn lq_actor(seed: u64, nstep: usize) -> Actor<f64> {
        let cfg = ActorConfig { epsilon: 0.2, nstep, gamma: 0.9, fetch_interval: 50 };
        let scale = ActionScale::from_bounds(&EnvKind::Lq.spec().action_bounds).unwrap();
        let spec = NetSpec::mlp(2, &[4], 1, Activation::Tanh).unwrap();
        Actor::new(cfg, scale, spec, EnvKind::Lq.make(seed), seeds::stream(seed, "actor", 0)).unwrap()
    }

    #[test]
    fn waits_for_the_first_snapshot() {
        let mut actor = lq_actor(0, 1);
        let store = SnapshotStore::new();
        let replay = Mutex::new(PrioritizedReplay::new(16, SamplingMode::Uniform).unwrap());
        assert_eq!(actor.step(&store, &replay), ActorStep::Waiting);
        assert_eq!(actor.stats().steps, 0);
    }

    #[test]
    fn matches_a_hand_rolled_loop() {
        let net = DenseNet::<f64>::new(NetSpec::mlp(2, &[4], 1, Activation::Tanh).unwrap(), 9).unwrap();
        let store = SnapshotStore::new();
        store.publish(net.clone());
        let replay = Mutex::new(PrioritizedReplay::new(64, SamplingMode::Uniform).unwrap());
        let mut actor = lq_actor(4, 1);
        for _ in 0..10 {
            actor.step(&store, &replay);
        }

        let scale = ActionScale::from_bounds(&EnvKind::Lq.spec().action_bounds).unwrap();
        let mut env: LqEnv = match EnvKind::Lq.make(4) {
            AnyEnv::Lq(e) => e,
            _ => unreachable!(),
        };
        let mut rng = seeds::stream(4, "actor", 0);
        let mut x = env.reset();
        let mut want = Vec::new();
        for _ in 0..10 {
            let a = select_action(&net, &x, &mut rng, 0.2, &scale).unwrap();
            let r = env.step(&a).unwrap();
            want.push(Transition {
                obs: x.clone(),
                action: a,
                reward: r.reward,
                next_obs: r.observation.clone(),
                discount: 0.9,
            });
            x = r.observation;
        }
        let replay = replay.lock();
        let got: Vec<_> = (0..10).map(|i| replay.get(i).unwrap().clone()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn faults_restart_the_episode() {
        let spec = NetSpec::mlp(2, &[4], 1, Activation::Tanh).unwrap();
        let mut bad = DenseNet::<f64>::new(spec, 0).unwrap();
        let last = bad.num_params() - 1;
        bad.set_param(last, f64::NAN);
        let store = SnapshotStore::new();
        store.publish(bad);
        let replay = Mutex::new(PrioritizedReplay::new(16, SamplingMode::Uniform).unwrap());
        let mut actor = lq_actor(0, 1);
        assert!(matches!(actor.step(&store, &replay), ActorStep::Fault(_)));
        assert_eq!(actor.stats().faults, 1);
        assert!(replay.lock().is_empty());
    }

    #[test]
    fn state_round_trip_continues_identically() {
        let net = DenseNet::<f64>::new(NetSpec::mlp(2, &[4], 1, Activation::Tanh).unwrap(), 2).unwrap();
        let store = SnapshotStore::new();
        store.publish(net);
        let replay = Mutex::new(PrioritizedReplay::new(512, SamplingMode::Uniform).unwrap());
        let mut a = lq_actor(1, 3);
        for _ in 0..37 {
            a.step(&store, &replay);
        }
        let mut b = Actor::from_state(a.cfg.clone(), a.scale.clone(), a.spec.clone(), a.state()).unwrap();
        let ra = Mutex::new(PrioritizedReplay::new(512, SamplingMode::Uniform).unwrap());
        let rb = Mutex::new(PrioritizedReplay::new(512, SamplingMode::Uniform).unwrap());
        for _ in 0..300 {
            a.step(&store, &ra);
            b.step(&store, &rb);
        }
        assert_eq!(*ra.lock(), *rb.lock());
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn loop_stops_on_signal() {
        let net = DenseNet::<f64>::new(NetSpec::mlp(2, &[4], 1, Activation::Tanh).unwrap(), 2).unwrap();
        let store = SnapshotStore::new();
        store.publish(net);
        let replay = Mutex::new(PrioritizedReplay::new(4096, SamplingMode::Uniform).unwrap());
        let control = RunControl::new(0.0);
        std::thread::scope(|s| {
            let h = s.spawn(|| actor_loop(lq_actor(0, 1), &store, &replay, &control));
            while control.actor_steps() < 100 {
                std::thread::yield_now();
            }
            control.stop();
            let actor = h.join().unwrap();
            assert!(actor.stats().steps >= 100);
        });
    }

    #[test]
    fn rate_limit_holds_actors_back() {
        let control = RunControl::new(2.0);
        control.set_counts(10, 0);
        assert!(control.may_act());
        control.start_learner();
        assert!(!control.may_act());
        control.record_learner_step();
        assert!(control.may_act());
    }
}

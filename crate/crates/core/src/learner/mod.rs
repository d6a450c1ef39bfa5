//! The learner: target construction, importance-weighted critic updates,
//! deterministic policy-gradient actor updates, hard target sync and weight
//! publication.

mod head;

pub use head::{Head, HeadConfig, Targets};

use parking_lot::Mutex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::dist::priority_of;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, NetSpec, ParamGrads};
use crate::replay::{PrioritizedReplay, SampledBatch, Transition};
use crate::runtime::SnapshotStore;
use crate::scalar::Scalar;
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub batch: usize,
    pub nstep: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Hard target copy every `target_period` learner steps.
    pub target_period: u64,
    /// Actor weights published every `publish_period` learner steps.
    pub publish_period: u64,
    pub head: HeadConfig,
    pub prioritized: bool,
    /// Optional per-network gradient max-norm clip; off by default.
    pub max_grad_norm: Option<f64>,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            batch: 64,
            nstep: 5,
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            target_period: 100,
            publish_period: 10,
            head: HeadConfig::Categorical { atoms: 51, v_min: 0.0, v_max: 100.0 },
            prioritized: true,
            max_grad_norm: None,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch == 0 {
            return bad("batch size M must be at least 1".into());
        }
        if self.nstep == 0 {
            return bad("trajectory length N must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("discount must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.actor_lr > 0.0 && self.actor_lr.is_finite()) {
            return bad(format!("actor learning rate must be positive, got {}", self.actor_lr));
        }
        if !(self.critic_lr > 0.0 && self.critic_lr.is_finite()) {
            return bad(format!("critic learning rate must be positive, got {}", self.critic_lr));
        }
        if self.target_period == 0 || self.publish_period == 0 {
            return bad("target and publish periods must be positive".into());
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return bad(format!("max gradient norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Affine map from the actor's `[-1, 1]` tanh output to environment units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionScale {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
}

impl ActionScale {
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Config("action space has no dimensions".into()));
        }
        for &(lo, hi) in bounds {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("invalid action bounds ({lo}, {hi})")));
            }
        }
        Ok(Self {
            center: bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect(),
            half_width: bounds.iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.center
            .iter()
            .zip(&self.half_width)
            .map(|(&c, &h)| (c - h, c + h))
            .collect()
    }

    /// Map rows of raw policy output (any batch size) to environment units.
    pub fn apply<T: Scalar>(&self, raw: &[T]) -> Vec<T> {
        let d = self.dim();
        raw.iter()
            .enumerate()
            .map(|(i, &u)| T::of(self.center[i % d]) + T::of(self.half_width[i % d]) * u)
            .collect()
    }
}

pub fn actor_spec(obs_dim: usize, action_dim: usize, hidden: &[usize]) -> Result<NetSpec> {
    NetSpec::mlp(obs_dim, hidden, action_dim, Activation::Tanh)
}

/// The critic sees the observation and action concatenated.
pub fn critic_spec(obs_dim: usize, action_dim: usize, hidden: &[usize], output: usize) -> Result<NetSpec> {
    NetSpec::mlp(obs_dim + action_dim, hidden, output, Activation::Identity)
}

/// Online and target actor/critic networks.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkQuad<T> {
    pub actor: DenseNet<T>,
    pub critic: DenseNet<T>,
    pub target_actor: DenseNet<T>,
    pub target_critic: DenseNet<T>,
}

impl<T: Scalar> NetworkQuad<T> {
    pub fn new(actor: DenseNet<T>, critic: DenseNet<T>) -> Self {
        Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        }
    }

    pub fn sync_targets(&mut self) -> Result<()> {
        self.target_actor.copy_from(&self.actor)?;
        self.target_critic.copy_from(&self.critic)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepMetrics {
    /// Importance-weighted mean critic loss.
    pub critic_loss: f64,
    /// Mean expected return of the critic at the current policy's actions.
    pub actor_objective: f64,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
    pub priorities: Vec<f64>,
    /// Mixture-loss target samples whose density was clamped.
    pub clamped: usize,
}

fn rows<T: Scalar>(transitions: &[Transition<T>], f: impl Fn(&Transition<T>) -> [&[T]; 2]) -> Vec<T> {
    let mut out = Vec::new();
    for t in transitions {
        for part in f(t) {
            out.extend_from_slice(part);
        }
    }
    out
}

/// Per-sample targets from the target networks at each bootstrap state.
pub fn build_targets<T: Scalar, R: Rng + ?Sized>(
    transitions: &[Transition<T>],
    target_actor: &DenseNet<T>,
    target_critic: &DenseNet<T>,
    head: &Head<T>,
    scale: &ActionScale,
    rng: &mut R,
) -> Result<Targets<T>> {
    let m = transitions.len();
    if m == 0 {
        return Err(Error::Contract("cannot build targets for an empty batch".into()));
    }
    let next_obs = rows(transitions, |t| [&t.next_obs, &[]]);
    let next_actions = scale.apply(&target_actor.predict_batch(&next_obs, m)?);
    let a_dim = scale.dim();
    let mut critic_in = Vec::with_capacity(m * target_critic.input_dim());
    for (i, t) in transitions.iter().enumerate() {
        critic_in.extend_from_slice(&t.next_obs);
        critic_in.extend_from_slice(&next_actions[i * a_dim..(i + 1) * a_dim]);
    }
    let out = target_critic.predict_batch(&critic_in, m)?;
    let width = head.output_dim();
    let items = transitions
        .iter()
        .zip(out.chunks_exact(width))
        .map(|(t, row)| head.target(t, row, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(head::collect_targets(head.kind(), items))
}

#[derive(Clone, Debug)]
pub struct CriticEval<T> {
    /// `(1/M) sum_i w_i loss_i`.
    pub loss: T,
    pub per_sample: Vec<T>,
    /// Error signal per sample, fed to the priority rule.
    pub errors: Vec<f64>,
    pub grads: ParamGrads<T>,
    pub clamped: usize,
}

/// Importance-weighted critic loss and its parameter gradient; the targets
/// are constants.
pub fn critic_eval<T: Scalar>(
    critic: &DenseNet<T>,
    head: &Head<T>,
    transitions: &[Transition<T>],
    targets: &Targets<T>,
    weights: &[T],
) -> Result<CriticEval<T>> {
    let m = transitions.len();
    if m == 0 || targets.len() != m || weights.len() != m {
        return Err(Error::Contract(format!(
            "critic batch of {m} with {} targets and {} weights",
            targets.len(),
            weights.len()
        )));
    }
    let input = rows(transitions, |t| [&t.obs, &t.action]);
    let cache = critic.forward_batch(&input, m)?;
    let width = head.output_dim();
    let inv_m = T::one() / T::of(m as f64);
    let mut loss = T::zero();
    let mut per_sample = Vec::with_capacity(m);
    let mut errors = Vec::with_capacity(m);
    let mut out_grad = Vec::with_capacity(m * width);
    let mut clamped = 0;
    for (i, row) in cache.output().chunks_exact(width).enumerate() {
        let s = head.sample_loss(targets, i, row)?;
        let scale = weights[i] * inv_m;
        loss += scale * s.loss;
        out_grad.extend(s.grad.iter().map(|&g| g * scale));
        per_sample.push(s.loss);
        errors.push(s.error);
        clamped += s.clamped;
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite critic loss {loss}")));
    }
    let grads = critic.backward(&cache, &out_grad)?.params;
    Ok(CriticEval { loss, per_sample, errors, grads, clamped })
}

#[derive(Clone, Debug)]
pub struct ActorEval<T> {
    /// `(1/M) sum_i E[Z(x_i, pi(x_i))]`.
    pub objective: T,
    /// Gradient of the objective with respect to the actor parameters.
    pub grads: ParamGrads<T>,
}

/// Deterministic policy gradient: the critic's expected value is
/// differentiated at the policy action and chained through the actor.
pub fn actor_eval<T: Scalar>(
    actor: &DenseNet<T>,
    critic: &DenseNet<T>,
    head: &Head<T>,
    scale: &ActionScale,
    observations: &[T],
    batch: usize,
) -> Result<ActorEval<T>> {
    let obs_dim = actor.input_dim();
    let a_dim = scale.dim();
    let actor_cache = actor.forward_batch(observations, batch)?;
    let actions = scale.apply(actor_cache.output());
    let mut critic_in = Vec::with_capacity(batch * critic.input_dim());
    for i in 0..batch {
        critic_in.extend_from_slice(&observations[i * obs_dim..(i + 1) * obs_dim]);
        critic_in.extend_from_slice(&actions[i * a_dim..(i + 1) * a_dim]);
    }
    let critic_cache = critic.forward_batch(&critic_in, batch)?;
    let inv_m = T::one() / T::of(batch as f64);
    let width = head.output_dim();
    let mut objective = T::zero();
    let mut out_grad = Vec::with_capacity(batch * width);
    for row in critic_cache.output().chunks_exact(width) {
        objective += head.expectation(row) * inv_m;
        out_grad.extend(head.expectation_grad(row).into_iter().map(|g| g * inv_m));
    }
    let input_grad = critic.input_gradient(&critic_cache, &out_grad)?;
    let in_dim = critic.input_dim();
    let mut action_grad = Vec::with_capacity(batch * a_dim);
    for i in 0..batch {
        for j in 0..a_dim {
            action_grad.push(input_grad[i * in_dim + obs_dim + j] * T::of(scale.half_width[j]));
        }
    }
    let grads = actor.backward(&actor_cache, &action_grad)?.params;
    if !objective.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical("non-finite actor objective or gradient".into()));
    }
    Ok(ActorEval { objective, grads })
}

fn clip<T: Scalar>(grads: &mut ParamGrads<T>, max_norm: Option<f64>) -> f64 {
    let norm = grads.norm().as_f64();
    if let Some(c) = max_norm {
        if norm > c {
            grads.scale(T::of(c / norm));
        }
    }
    norm
}

/// Learner state: networks, optimizers, sampling rng and step counter.
#[derive(Clone, Debug)]
pub struct Learner<T> {
    cfg: LearnerConfig,
    head: Head<T>,
    scale: ActionScale,
    nets: NetworkQuad<T>,
    actor_opt: AdamState<T>,
    critic_opt: AdamState<T>,
    rng: ChaCha8Rng,
    steps: u64,
}

impl<T: Scalar> Learner<T> {
    pub fn new(cfg: LearnerConfig, obs_dim: usize, scale: ActionScale, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let head = Head::new(&cfg.head)?;
        let actor = DenseNet::new(
            actor_spec(obs_dim, scale.dim(), &cfg.actor_hidden)?,
            seeds::derive_seed(seed, "actor-init", 0),
        )?;
        let critic = DenseNet::new(
            critic_spec(obs_dim, scale.dim(), &cfg.critic_hidden, head.output_dim())?,
            seeds::derive_seed(seed, "critic-init", 0),
        )?;
        Ok(Self {
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            nets: NetworkQuad::new(actor, critic),
            rng: seeds::stream(seed, "learner", 0),
            cfg,
            head,
            scale,
            steps: 0,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn head(&self) -> &Head<T> {
        &self.head
    }

    pub fn action_scale(&self) -> &ActionScale {
        &self.scale
    }

    pub fn nets(&self) -> &NetworkQuad<T> {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut NetworkQuad<T> {
        &mut self.nets
    }

    pub fn optimizers(&self) -> (&AdamState<T>, &AdamState<T>) {
        (&self.actor_opt, &self.critic_opt)
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Learner steps completed.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Replace the mutable training state, e.g. when resuming from a checkpoint.
    pub fn restore(
        &mut self,
        nets: NetworkQuad<T>,
        actor_opt: AdamState<T>,
        critic_opt: AdamState<T>,
        rng: ChaCha8Rng,
        steps: u64,
    ) -> Result<()> {
        for (a, b) in [
            (nets.actor.spec(), self.nets.actor.spec()),
            (nets.target_actor.spec(), self.nets.actor.spec()),
            (nets.critic.spec(), self.nets.critic.spec()),
            (nets.target_critic.spec(), self.nets.critic.spec()),
        ] {
            if a != b {
                return Err(Error::Load("restored network architecture differs from configuration".into()));
            }
        }
        self.nets = nets;
        self.actor_opt = actor_opt;
        self.critic_opt = critic_opt;
        self.rng = rng;
        self.steps = steps;
        Ok(())
    }

    pub fn build_targets(&mut self, transitions: &[Transition<T>]) -> Result<Targets<T>> {
        build_targets(
            transitions,
            &self.nets.target_actor,
            &self.nets.target_critic,
            &self.head,
            &self.scale,
            &mut self.rng,
        )
    }

    /// One Adam step on the critic; returns the metrics with priorities filled.
    pub fn critic_step(
        &mut self,
        transitions: &[Transition<T>],
        targets: &Targets<T>,
        weights: &[f64],
    ) -> Result<StepMetrics> {
        let w: Vec<T> = weights.iter().map(|&w| T::of(w)).collect();
        let mut eval = critic_eval(&self.nets.critic, &self.head, transitions, targets, &w)?;
        let norm = clip(&mut eval.grads, self.cfg.max_grad_norm);
        self.critic_opt
            .update(&mut self.nets.critic, &eval.grads, T::of(self.cfg.critic_lr))?;
        let kind = self.head.kind();
        Ok(StepMetrics {
            critic_loss: eval.loss.as_f64(),
            critic_grad_norm: norm,
            priorities: eval.errors.iter().map(|&e| priority_of(e, kind)).collect(),
            clamped: eval.clamped,
            ..StepMetrics::default()
        })
    }

    /// One Adam ascent step on the actor; returns `(objective, grad norm)`.
    pub fn actor_step(&mut self, transitions: &[Transition<T>]) -> Result<(f64, f64)> {
        let obs = rows(transitions, |t| [&t.obs, &[]]);
        let mut eval = actor_eval(
            &self.nets.actor,
            &self.nets.critic,
            &self.head,
            &self.scale,
            &obs,
            transitions.len(),
        )?;
        let norm = clip(&mut eval.grads, self.cfg.max_grad_norm);
        eval.grads.scale(-T::one());
        self.actor_opt
            .update(&mut self.nets.actor, &eval.grads, T::of(self.cfg.actor_lr))?;
        Ok((eval.objective.as_f64(), norm))
    }

    /// Hard-copy online into target networks when `t` is a multiple of the period.
    pub fn maybe_sync(&mut self, t: u64) -> Result<bool> {
        if t % self.cfg.target_period == 0 {
            self.nets.sync_targets()?;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn publish(&self, store: &SnapshotStore<T>) -> u64 {
        store.publish(self.nets.actor.clone())
    }

    fn sample(&mut self, replay: &Mutex<PrioritizedReplay<T>>) -> Result<SampledBatch<T>> {
        replay.lock().sample(self.cfg.batch, &mut self.rng)
    }

    /// One iteration of the learner loop. Both updates use the pre-step
    /// networks: the actor is differentiated through the critic before the
    /// critic moves.
    pub fn train_step(
        &mut self,
        replay: &Mutex<PrioritizedReplay<T>>,
        store: Option<&SnapshotStore<T>>,
    ) -> Result<StepMetrics> {
        let batch = self.sample(replay)?;
        let targets = self.build_targets(&batch.transitions)?;
        let (objective, actor_norm) = self.actor_step(&batch.transitions)?;
        let mut metrics = self.critic_step(&batch.transitions, &targets, &batch.weights)?;
        metrics.actor_objective = objective;
        metrics.actor_grad_norm = actor_norm;
        self.finish_step(replay, store, &batch, &metrics)?;
        Ok(metrics)
    }

    /// Critic-only iteration: the actor and its target stay fixed.
    pub fn train_critic_only(&mut self, replay: &Mutex<PrioritizedReplay<T>>) -> Result<StepMetrics> {
        let batch = self.sample(replay)?;
        let targets = self.build_targets(&batch.transitions)?;
        let metrics = self.critic_step(&batch.transitions, &targets, &batch.weights)?;
        self.finish_step(replay, None, &batch, &metrics)?;
        Ok(metrics)
    }

    fn finish_step(
        &mut self,
        replay: &Mutex<PrioritizedReplay<T>>,
        store: Option<&SnapshotStore<T>>,
        batch: &SampledBatch<T>,
        metrics: &StepMetrics,
    ) -> Result<()> {
        if self.cfg.prioritized {
            replay.lock().update_priorities(&batch.slots, &metrics.priorities)?;
        }
        self.steps += 1;
        self.maybe_sync(self.steps)?;
        if let Some(store) = store {
            if self.steps % self.cfg.publish_period == 0 {
                self.publish(store);
            }
        }
        Ok(())
    }
}

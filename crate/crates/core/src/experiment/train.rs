use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::checkpoint::{Checkpoint, TrainState};
use super::config::ExperimentConfig;
use super::csv::{CsvLog, EvalRecord};
use super::eval::{evaluate, EvalReport};
use crate::error::{Error, Result};
use crate::learner::{actor_spec, critic_spec, ActionScale, Head, Learner, StepMetrics};
use crate::nn::NetSpec;
use crate::replay::{PrioritizedReplay, SharedReplay};
use crate::runtime::{actor_loop, Actor, ActorStep, Frame, ParameterSnapshot, RunControl, SnapshotStore};
use crate::{seeds, Real};

/// Ticks without a single successful actor step before a deterministic run
/// gives up.
const STALL_LIMIT: u64 = 100_000;

#[derive(Clone, Debug)]
pub struct ResumeOptions {
    pub checkpoint: PathBuf,
    /// Resume even if the checkpoint was written under a different configuration.
    pub force: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub learner_steps: u64,
    pub actor_steps: u64,
    pub records: Vec<EvalRecord>,
    pub actor_faults: u64,
    pub clamped_samples: u64,
    pub warnings: Vec<String>,
}

/// All state of one training run.
pub struct Trainer {
    cfg: ExperimentConfig,
    actor_spec: NetSpec,
    scale: ActionScale,
    learner: Learner<Real>,
    replay: SharedReplay<Real>,
    store: Arc<SnapshotStore<Real>>,
    actors: Vec<Actor<Real>>,
    actor_steps: u64,
    loss_sum: f64,
    objective_sum: f64,
    metric_count: u64,
    clamped: u64,
    faults_seen: u64,
    records: Vec<EvalRecord>,
    warnings: Vec<String>,
    start: Instant,
    csv: Option<CsvLog>,
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.env.spec();
        let scale = ActionScale::from_bounds(&spec.action_bounds)?;
        let learner = Learner::new(
            cfg.learner_config(),
            spec.observation_dim,
            scale.clone(),
            seeds::derive_seed(cfg.seed, "learner", 0),
        )?;
        let actor_spec = actor_spec(spec.observation_dim, spec.action_dim, &cfg.actor_hidden)?;
        let replay = PrioritizedReplay::new(cfg.replay, cfg.sampling_mode())?.into_shared();
        let store = Arc::new(SnapshotStore::new());
        learner.publish(&store);
        let actors = (0..cfg.actors)
            .map(|k| fresh_actor(&cfg, &scale, &actor_spec, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            actor_spec,
            scale,
            learner,
            replay,
            store,
            actors,
            actor_steps: 0,
            loss_sum: 0.0,
            objective_sum: 0.0,
            metric_count: 0,
            clamped: 0,
            faults_seen: 0,
            records: Vec::new(),
            warnings: Vec::new(),
            start: Instant::now(),
            csv: None,
        })
    }

    /// Rebuild a trainer from a checkpoint written by a run with `cfg`
    /// (up to the resumable keys).
    pub fn resume(cfg: ExperimentConfig, checkpoint: &Checkpoint, force: bool) -> Result<Self> {
        let mut t = Self::new(cfg)?;
        let state = &checkpoint.state;
        if state.config_hash != t.cfg.training_hash() {
            let msg = "checkpoint was written under a different training configuration".to_string();
            if !force {
                return Err(Error::Config(format!("{msg}; pass --force to resume anyway")));
            }
            eprintln!("warning: {msg}; resuming because --force was given");
            t.warnings.push(msg);
        }
        let env_spec = t.cfg.env.spec();
        let critic = critic_spec(
            env_spec.observation_dim,
            env_spec.action_dim,
            &t.cfg.critic_hidden,
            Head::<Real>::new(&t.cfg.head_config())?.output_dim(),
        )?;
        let nets = checkpoint.networks(&t.actor_spec, &critic)?;
        let (actor_opt, critic_opt) = checkpoint.optimizers(&t.actor_spec, &critic)?;
        t.learner
            .restore(nets, actor_opt, critic_opt, state.learner_rng.clone(), state.learner_steps)?;
        let mut replay = state.replay.clone();
        if replay.capacity() < t.cfg.replay {
            return Err(Error::Load("checkpoint replay capacity differs from configuration".into()));
        }
        replay.set_mode(t.cfg.sampling_mode());
        *t.replay.lock() = replay;
        if let Some(bytes) = &state.snapshot {
            let (frame, _) = Frame::decode(bytes)?;
            let version = frame.version;
            t.store
                .restore(ParameterSnapshot::new(version, frame.into_net(&t.actor_spec)?));
        }
        if !state.actors.is_empty() {
            if state.actors.len() != t.cfg.actors {
                return Err(Error::Load(format!(
                    "checkpoint holds {} actors, configuration asks for {}",
                    state.actors.len(),
                    t.cfg.actors
                )));
            }
            t.actors = state
                .actors
                .iter()
                .map(|s| Actor::from_state(t.cfg.actor_config(), t.scale.clone(), t.actor_spec.clone(), s.clone()))
                .collect::<Result<Vec<_>>>()?;
        }
        t.actor_steps = state.actor_steps;
        t.loss_sum = state.loss_sum;
        t.objective_sum = state.objective_sum;
        t.metric_count = state.metric_count;
        t.faults_seen = t.actors.iter().map(|a| a.stats().faults).sum();
        Ok(t)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn learner(&self) -> &Learner<Real> {
        &self.learner
    }

    pub fn replay(&self) -> &SharedReplay<Real> {
        &self.replay
    }

    pub fn store(&self) -> &SnapshotStore<Real> {
        &self.store
    }

    pub fn actor_steps(&self) -> u64 {
        self.actor_steps
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn csv_path(&self) -> Option<PathBuf> {
        self.cfg.out.as_ref().map(|d| d.join("metrics.csv"))
    }

    pub fn checkpoint_path(&self) -> Option<PathBuf> {
        self.cfg.out.as_ref().map(|d| d.join("checkpoint.bin"))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (actor_opt, critic_opt) = self.learner.optimizers();
        let state = TrainState {
            config_hash: self.cfg.training_hash(),
            config_text: self.cfg.to_text(),
            learner_steps: self.learner.steps(),
            actor_steps: self.actor_steps,
            actor_adam: (0, actor_opt.hyper()),
            critic_adam: (0, critic_opt.hyper()),
            learner_rng: self.learner.rng().clone(),
            replay: self.replay.lock().clone(),
            actors: self.actors.iter().map(Actor::state).collect(),
            snapshot: self
                .store
                .fetch()
                .map(|s| Frame::from_net(s.version(), s.params()).encode()),
            loss_sum: self.loss_sum,
            objective_sum: self.objective_sum,
            metric_count: self.metric_count,
        };
        Checkpoint::new(self.learner.nets(), actor_opt, critic_opt, state)
    }

    fn save_checkpoint(&self) -> Result<()> {
        if let Some(path) = self.checkpoint_path() {
            self.checkpoint().save(&path)?;
        }
        Ok(())
    }

    /// Noise-free evaluation of the current online actor.
    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate(&self.learner.nets().actor, self.cfg.env, self.cfg.seed, self.cfg.eval_episodes)
    }

    fn open_outputs(&mut self, resumed: bool) -> Result<()> {
        let Some(dir) = self.cfg.out.clone() else {
            return Ok(());
        };
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("config.txt"), self.cfg.to_text())?;
        let csv = dir.join("metrics.csv");
        self.csv = Some(if resumed {
            CsvLog::resume(&csv, self.learner.steps())?
        } else {
            CsvLog::create(&csv)?
        });
        Ok(())
    }

    fn record(&mut self, metrics: &StepMetrics) -> Result<()> {
        self.loss_sum += metrics.critic_loss;
        self.objective_sum += metrics.actor_objective;
        self.metric_count += 1;
        self.clamped += metrics.clamped as u64;
        if self.learner.steps() % self.cfg.eval_every != 0 {
            return Ok(());
        }
        let report = self.evaluate()?;
        let n = self.metric_count.max(1) as f64;
        let row = EvalRecord {
            wall_time_s: if self.cfg.deterministic {
                0.0
            } else {
                self.start.elapsed().as_secs_f64()
            },
            learner_steps: self.learner.steps(),
            actor_steps: self.actor_steps,
            eval_return_mean: report.mean,
            eval_return_std: report.std,
            critic_loss_mean: self.loss_sum / n,
            actor_objective_mean: self.objective_sum / n,
            snapshot_version: self.store.latest_version(),
        };
        self.loss_sum = 0.0;
        self.objective_sum = 0.0;
        self.metric_count = 0;
        if let Some(csv) = &mut self.csv {
            csv.append(&row)?;
        }
        self.records.push(row);
        self.save_checkpoint()
    }

    /// One scheduler tick of deterministic mode: every actor takes one env
    /// step in index order, then the learner trains once if replay is warm.
    /// Returns whether a learner step happened.
    pub fn tick(&mut self) -> Result<bool> {
        let mut stepped = false;
        for actor in &mut self.actors {
            match actor.step(&self.store, &self.replay) {
                ActorStep::Stepped { .. } => {
                    self.actor_steps += 1;
                    stepped = true;
                }
                ActorStep::Fault(_) | ActorStep::Waiting => {}
            }
        }
        self.faults_seen = self.actors.iter().map(|a| a.stats().faults).sum();
        if !stepped && self.replay.lock().len() < self.cfg.min_replay {
            return Err(Error::Env("no actor could take a step".into()));
        }
        if self.replay.lock().len() < self.cfg.min_replay {
            return Ok(false);
        }
        let metrics = self.learner.train_step(&self.replay, Some(&self.store))?;
        self.record(&metrics)?;
        Ok(true)
    }

    fn run_deterministic(&mut self) -> Result<()> {
        let mut stalled = 0u64;
        while self.learner.steps() < self.cfg.steps {
            match self.tick() {
                Ok(_) => stalled = 0,
                Err(Error::Env(_)) if stalled < STALL_LIMIT => stalled += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn run_threaded(&mut self) -> Result<()> {
        let control = RunControl::new(self.cfg.actor_steps_per_update);
        control.set_counts(self.actor_steps, self.learner.steps());
        let actors = std::mem::take(&mut self.actors);
        let replay = Arc::clone(&self.replay);
        let store = Arc::clone(&self.store);
        let (result, actors) = std::thread::scope(|s| {
            let handles: Vec<_> = actors
                .into_iter()
                .map(|a| {
                    let (store, replay, control) = (&store, &replay, &control);
                    s.spawn(move || actor_loop(a, store, replay, control))
                })
                .collect();
            let result = (|| -> Result<()> {
                let mut started = false;
                while self.learner.steps() < self.cfg.steps {
                    if self.replay.lock().len() < self.cfg.min_replay {
                        if handles.iter().all(|h| h.is_finished()) {
                            return Err(Error::Env("all actor threads exited".into()));
                        }
                        std::thread::sleep(Duration::from_millis(1));
                        continue;
                    }
                    if !started {
                        control.start_learner();
                        started = true;
                    }
                    let metrics = self.learner.train_step(&self.replay, Some(&self.store))?;
                    control.record_learner_step();
                    self.actor_steps = control.actor_steps();
                    self.record(&metrics)?;
                }
                Ok(())
            })();
            control.stop();
            let actors: Vec<_> = handles.into_iter().filter_map(|h| h.join().ok()).collect();
            (result, actors)
        });
        self.actor_steps = control.actor_steps();
        if actors.len() != self.cfg.actors {
            result?;
            return Err(Error::Env("an actor thread panicked".into()));
        }
        self.actors = actors;
        self.faults_seen = self.actors.iter().map(|a| a.stats().faults).sum();
        result
    }

    /// Train to `steps` learner steps, writing CSV rows and checkpoints.
    pub fn run(&mut self, resumed: bool) -> Result<TrainSummary> {
        self.open_outputs(resumed)?;
        self.start = Instant::now();
        if !resumed {
            self.save_checkpoint()?;
        }
        if self.cfg.deterministic {
            self.run_deterministic()?;
        } else {
            self.run_threaded()?;
        }
        self.save_checkpoint()?;
        Ok(self.summary())
    }

    pub fn summary(&self) -> TrainSummary {
        TrainSummary {
            learner_steps: self.learner.steps(),
            actor_steps: self.actor_steps,
            records: self.records.clone(),
            actor_faults: self.faults_seen,
            clamped_samples: self.clamped,
            warnings: self.warnings.clone(),
        }
    }
}

fn fresh_actor(cfg: &ExperimentConfig, scale: &ActionScale, spec: &NetSpec, k: usize) -> Result<Actor<Real>> {
    Actor::new(
        cfg.actor_config(),
        scale.clone(),
        spec.clone(),
        cfg.env.make(seeds::derive_seed(cfg.seed, "env", k as u64)),
        seeds::stream(cfg.seed, "exploration", k as u64),
    )
}

/// Train from scratch, or continue from a checkpoint.
pub fn run_train(cfg: ExperimentConfig, resume: Option<&ResumeOptions>) -> Result<TrainSummary> {
    match resume {
        None => Trainer::new(cfg)?.run(false),
        Some(opts) => {
            let ck = Checkpoint::load(&opts.checkpoint)?;
            Trainer::resume(cfg, &ck, opts.force)?.run(true)
        }
    }
}

/// Evaluate the actor stored in a checkpoint; no training state is touched.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let spec = cfg.env.spec();
    let actor = ck.actor(&actor_spec(spec.observation_dim, spec.action_dim, &cfg.actor_hidden)?)?;
    evaluate(&actor, cfg.env, cfg.seed, cfg.eval_episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::RawConfig;

    fn small(extra: &str) -> ExperimentConfig {
        let text = format!(
            "env = lq\nactors = 2\nbatch = 8\nreplay = 256\nactor_hidden = 8\ncritic_hidden = 8\n\
             atoms = 11\nvmin = 0\nvmax = 20\nsteps = 30\neval_every = 10\neval_episodes = 1\n\
             deterministic = true\ntarget_period = 5\npublish_period = 2\n"
        );
        let raw = RawConfig::parse(&text).unwrap().merge(&RawConfig::parse(extra).unwrap());
        ExperimentConfig::from_raw(&raw).unwrap()
    }

    #[test]
    fn deterministic_runs_repeat() {
        let a = Trainer::new(small("")).unwrap().run(false).unwrap();
        let b = Trainer::new(small("")).unwrap().run(false).unwrap();
        assert_eq!(a.records.len(), 3);
        assert_eq!(a, b);
        assert_eq!(a.actor_steps, 2 * (30 + 7));
    }

    #[test]
    fn zero_steps_is_an_empty_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(&format!("steps = 0\nout = {}", dir.path().display()));
        let s = run_train(cfg, None).unwrap();
        assert_eq!(s.learner_steps, 0);
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(dir.path().join("checkpoint.bin").exists());
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let mut t = Trainer::new(small("")).unwrap();
        for _ in 0..20 {
            t.tick().unwrap();
        }
        let bytes = t.checkpoint().encode().unwrap();
        let ck = Checkpoint::decode(&bytes).unwrap();
        let t2 = Trainer::resume(small(""), &ck, false).unwrap();
        assert_eq!(t2.checkpoint().encode().unwrap(), bytes);
    }

    #[test]
    fn resume_refuses_a_different_configuration() {
        let t = Trainer::new(small("")).unwrap();
        let ck = t.checkpoint();
        let other = small("seed = 9");
        assert!(matches!(Trainer::resume(other.clone(), &ck, false), Err(Error::Config(_))));
        let t = Trainer::resume(other, &ck, true).unwrap();
        assert_eq!(t.summary().warnings.len(), 1);
    }

    #[test]
    fn threaded_run_finishes() {
        let s = Trainer::new(small("deterministic = false")).unwrap().run(false).unwrap();
        assert_eq!(s.learner_steps, 30);
        assert_eq!(s.records.len(), 3);
        assert!(s.actor_steps >= 8);
    }

    #[test]
    fn evaluation_is_pure() {
        let mut t = Trainer::new(small("")).unwrap();
        for _ in 0..15 {
            t.tick().unwrap();
        }
        let (len, steps) = (t.replay().lock().len(), t.learner().steps());
        let a = t.evaluate().unwrap();
        assert_eq!(a, t.evaluate().unwrap());
        assert_eq!((t.replay().lock().len(), t.learner().steps()), (len, steps));
    }
}

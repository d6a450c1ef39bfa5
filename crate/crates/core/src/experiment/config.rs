use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dist::HeadKind;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::learner::{HeadConfig, LearnerConfig};
use crate::replay::SamplingMode;
use crate::runtime::ActorConfig;
use crate::runtime::frame::fnv1a;

/// Every key accepted in a config file or as an override.
pub const KEYS: &[&str] = &[
    "env",
    "head",
    "prioritized",
    "sampling",
    "nstep",
    "actors",
    "atoms",
    "vmin",
    "vmax",
    "mixture_size",
    "mixture_samples",
    "gamma",
    "actor_lr",
    "critic_lr",
    "batch",
    "replay",
    "min_replay",
    "epsilon",
    "target_period",
    "publish_period",
    "fetch_interval",
    "actor_steps_per_update",
    "actor_hidden",
    "critic_hidden",
    "max_grad_norm",
    "seed",
    "steps",
    "eval_every",
    "eval_episodes",
    "deterministic",
    "out",
];

/// Keys that may change between a run and its resumption.
const RESUMABLE: &[&str] = &["steps", "eval_every", "eval_episodes", "out"];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub head: HeadKind,
    pub prioritized: bool,
    pub sampling: SamplingMode,
    pub nstep: usize,
    pub actors: usize,
    pub atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub mixture_size: usize,
    pub mixture_samples: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch: usize,
    pub replay: usize,
    pub min_replay: usize,
    pub epsilon: f64,
    pub target_period: u64,
    pub publish_period: u64,
    pub fetch_interval: u64,
    /// Threaded mode: actor env steps allowed per learner step (0 = unlimited).
    pub actor_steps_per_update: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
    /// Total learner steps.
    pub steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub deterministic: bool,
    pub out: Option<PathBuf>,
}

/// Raw `key = value` pairs before validation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parse flat `key = value` text; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if raw.entries.contains_key(key) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            raw.set(key, value.trim())?;
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Set or override one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Overlay `other` on top of `self` (other wins).
    pub fn merge(mut self, other: &RawConfig) -> Self {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
        self
    }

    fn value<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    fn list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{v}`: {e}")))
                })
                .collect(),
        }
    }
}

fn parse_sampling(s: &str) -> std::result::Result<SamplingMode, String> {
    match s {
        "stratified" => Ok(SamplingMode::Stratified),
        "multinomial" => Ok(SamplingMode::Multinomial),
        other => Err(format!("unknown sampling `{other}` (stratified|multinomial)")),
    }
}

fn sampling_name(m: SamplingMode) -> &'static str {
    match m {
        SamplingMode::Stratified => "stratified",
        SamplingMode::Multinomial => "multinomial",
        SamplingMode::Uniform => "uniform",
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let env: EnvKind = raw.value("env", EnvKind::Pendulum)?;
        let head: HeadKind = raw.value("head", HeadKind::Categorical)?;
        let categorical_keys = ["atoms", "vmin", "vmax"];
        let mixture_keys = ["mixture_size", "mixture_samples"];
        if head != HeadKind::MixtureOfGaussians {
            if let Some(k) = mixture_keys.iter().find(|k| raw.get(k).is_some()) {
                return Err(Error::Config(format!("`{k}` is inconsistent with head = {}", head.name())));
            }
        }
        if head != HeadKind::Categorical {
            if let Some(k) = categorical_keys.iter().find(|k| raw.get(k).is_some()) {
                return Err(Error::Config(format!("`{k}` is inconsistent with head = {}", head.name())));
            }
        }
        let gamma = raw.value("gamma", 0.99)?;
        let spec = env.spec();
        let horizon_bound = spec.max_reward * spec.episode_limit as f64;
        let default_vmax = if gamma < 1.0 {
            // rounded so that e.g. gamma = 0.99 gives exactly 100
            ((spec.max_reward / (1.0 - gamma) * 1e6).round() / 1e6).min(horizon_bound)
        } else {
            horizon_bound
        };
        let actors = raw.value("actors", 4usize)?;
        let batch = raw.value("batch", 64usize)?;
        let sampling = match raw.get("sampling") {
            None => SamplingMode::Stratified,
            Some(v) => parse_sampling(v).map_err(|e| Error::Config(format!("key `sampling`: {e}")))?,
        };
        let cfg = Self {
            env,
            head,
            prioritized: raw.value("prioritized", true)?,
            sampling,
            nstep: raw.value("nstep", 5)?,
            actors,
            atoms: raw.value("atoms", 51)?,
            v_min: raw.value("vmin", 0.0)?,
            v_max: raw.value("vmax", default_vmax)?,
            mixture_size: raw.value("mixture_size", 5)?,
            mixture_samples: raw.value("mixture_samples", 16)?,
            gamma,
            actor_lr: raw.value("actor_lr", 1e-4)?,
            critic_lr: raw.value("critic_lr", 1e-4)?,
            batch,
            replay: raw.value("replay", 100_000)?,
            min_replay: raw.value("min_replay", batch)?,
            epsilon: raw.value("epsilon", 0.3)?,
            target_period: raw.value("target_period", 100)?,
            publish_period: raw.value("publish_period", 10)?,
            fetch_interval: raw.value("fetch_interval", 50)?,
            actor_steps_per_update: raw.value("actor_steps_per_update", actors as f64)?,
            actor_hidden: raw.list("actor_hidden", &[256, 256])?,
            critic_hidden: raw.list("critic_hidden", &[256, 256])?,
            max_grad_norm: raw.optional("max_grad_norm")?,
            seed: raw.value("seed", 0)?,
            steps: raw.value("steps", 10_000)?,
            eval_every: raw.value("eval_every", 500)?,
            eval_episodes: raw.value("eval_episodes", 10)?,
            deterministic: raw.value("deterministic", false)?,
            out: raw.optional("out")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.actors == 0 {
            return bad("actors K must be at least 1".into());
        }
        if self.replay < self.batch {
            return bad(format!("replay capacity {} is smaller than batch {}", self.replay, self.batch));
        }
        if self.min_replay < self.batch {
            return bad(format!("min_replay {} is smaller than batch {}", self.min_replay, self.batch));
        }
        if self.min_replay > self.replay {
            return bad(format!("min_replay {} exceeds replay capacity {}", self.min_replay, self.replay));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive".into());
        }
        if !(self.actor_steps_per_update >= 0.0 && self.actor_steps_per_update.is_finite()) {
            return bad("actor_steps_per_update must be >= 0".into());
        }
        if self.sampling == SamplingMode::Uniform {
            return bad("sampling must be stratified or multinomial; use prioritized = false for uniform".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.fetch_interval == 0 {
            return bad("fetch_interval must be positive".into());
        }
        self.learner_config().validate()?;
        crate::learner::Head::<f64>::new(&self.head_config())?;
        Ok(())
    }

    pub fn head_config(&self) -> HeadConfig {
        match self.head {
            HeadKind::Categorical => HeadConfig::Categorical {
                atoms: self.atoms,
                v_min: self.v_min,
                v_max: self.v_max,
            },
            HeadKind::MixtureOfGaussians => HeadConfig::MixtureOfGaussians {
                components: self.mixture_size,
                samples: self.mixture_samples,
            },
            HeadKind::Scalar => HeadConfig::Scalar,
        }
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            batch: self.batch,
            nstep: self.nstep,
            gamma: self.gamma,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            target_period: self.target_period,
            publish_period: self.publish_period,
            head: self.head_config(),
            prioritized: self.prioritized,
            max_grad_norm: self.max_grad_norm,
            actor_hidden: self.actor_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
        }
    }

    pub fn actor_config(&self) -> ActorConfig {
        ActorConfig {
            epsilon: self.epsilon,
            nstep: self.nstep,
            gamma: self.gamma,
            fetch_interval: self.fetch_interval,
        }
    }

    pub fn sampling_mode(&self) -> SamplingMode {
        if self.prioritized {
            self.sampling
        } else {
            SamplingMode::Uniform
        }
    }

    /// Fully resolved configuration as sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("env", self.env.name().into());
        put("head", self.head.name().into());
        put("prioritized", self.prioritized.to_string());
        put("sampling", sampling_name(self.sampling).into());
        put("nstep", self.nstep.to_string());
        put("actors", self.actors.to_string());
        match self.head {
            HeadKind::Categorical => {
                put("atoms", self.atoms.to_string());
                put("vmin", format!("{:?}", self.v_min));
                put("vmax", format!("{:?}", self.v_max));
            }
            HeadKind::MixtureOfGaussians => {
                put("mixture_size", self.mixture_size.to_string());
                put("mixture_samples", self.mixture_samples.to_string());
            }
            HeadKind::Scalar => {}
        }
        put("gamma", format!("{:?}", self.gamma));
        put("actor_lr", format!("{:?}", self.actor_lr));
        put("critic_lr", format!("{:?}", self.critic_lr));
        put("batch", self.batch.to_string());
        put("replay", self.replay.to_string());
        put("min_replay", self.min_replay.to_string());
        put("epsilon", format!("{:?}", self.epsilon));
        put("target_period", self.target_period.to_string());
        put("publish_period", self.publish_period.to_string());
        put("fetch_interval", self.fetch_interval.to_string());
        put("actor_steps_per_update", format!("{:?}", self.actor_steps_per_update));
        put("actor_hidden", join(&self.actor_hidden));
        put("critic_hidden", join(&self.critic_hidden));
        if let Some(c) = self.max_grad_norm {
            put("max_grad_norm", format!("{c:?}"));
        }
        put("seed", self.seed.to_string());
        put("steps", self.steps.to_string());
        put("eval_every", self.eval_every.to_string());
        put("eval_episodes", self.eval_episodes.to_string());
        put("deterministic", self.deterministic.to_string());
        if let Some(out) = &self.out {
            put("out", out.display().to_string());
        }
        m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hash of every setting that affects training, so a checkpoint can
    /// refuse to resume under a different configuration.
    pub fn training_hash(&self) -> u64 {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !RESUMABLE.iter().any(|k| l.starts_with(&format!("{k} = "))))
            .map(|l| format!("{l}\n"))
            .collect();
        fnv1a(text.as_bytes())
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_raw(&RawConfig::new()).expect("defaults are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_raw(&RawConfig::parse("").unwrap()).unwrap();
        assert_eq!(cfg.env, EnvKind::Pendulum);
        assert_eq!(cfg.head, HeadKind::Categorical);
        assert_eq!((cfg.actors, cfg.nstep, cfg.atoms, cfg.batch, cfg.replay), (4, 5, 51, 64, 100_000));
        assert_eq!((cfg.gamma, cfg.epsilon), (0.99, 0.3));
        assert_eq!((cfg.eval_every, cfg.eval_episodes), (500, 10));
        assert_eq!((cfg.v_min, cfg.v_max), (0.0, 100.0));
        assert!(cfg.prioritized);
    }

    #[test]
    fn flags_override_file() {
        let file = RawConfig::parse("nstep = 5\n# comment\nseed = 3  # trailing\n").unwrap();
        let mut flags = RawConfig::new();
        flags.set("nstep", "1").unwrap();
        let cfg = ExperimentConfig::from_raw(&file.merge(&flags)).unwrap();
        assert_eq!(cfg.nstep, 1);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn rejects_bad_input() {
        let err = RawConfig::parse("nsteps = 5").unwrap_err().to_string();
        assert!(err.contains("nsteps"), "{err}");
        let err = RawConfig::parse("nstep 5").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        assert!(RawConfig::parse("seed = 1\nseed = 2").is_err());
        let err = ExperimentConfig::from_raw(&RawConfig::parse("nstep = five").unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains("nstep"), "{err}");
        let err = ExperimentConfig::from_raw(&RawConfig::parse("head = categorical\nmixture_size = 4").unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains("mixture_size"), "{err}");
        assert!(ExperimentConfig::from_raw(&RawConfig::parse("head = mog\natoms = 4").unwrap()).is_err());
        assert!(ExperimentConfig::from_raw(&RawConfig::parse("batch = 0").unwrap()).is_err());
        assert!(ExperimentConfig::from_raw(&RawConfig::parse("gamma = 1.5").unwrap()).is_err());
        assert!(ExperimentConfig::from_raw(&RawConfig::parse("actors = 0").unwrap()).is_err());
        assert!(ExperimentConfig::from_raw(&RawConfig::parse("vmin = 5\nvmax = 1").unwrap()).is_err());
    }

    #[test]
    fn text_round_trips() {
        let raw = RawConfig::parse("head = mog\nmixture_size = 3\nactor_hidden = 32,16\nmax_grad_norm = 40\nout = /tmp/x").unwrap();
        let cfg = ExperimentConfig::from_raw(&raw).unwrap();
        let again = ExperimentConfig::from_raw(&RawConfig::parse(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn hash_ignores_resumable_keys() {
        let a = ExperimentConfig::from_raw(&RawConfig::parse("steps = 10").unwrap()).unwrap();
        let b = ExperimentConfig::from_raw(&RawConfig::parse("steps = 20\nout = /tmp/y\neval_every = 7").unwrap()).unwrap();
        let c = ExperimentConfig::from_raw(&RawConfig::parse("seed = 1").unwrap()).unwrap();
        assert_eq!(a.training_hash(), b.training_hash());
        assert_ne!(a.training_hash(), c.training_hash());
    }
}

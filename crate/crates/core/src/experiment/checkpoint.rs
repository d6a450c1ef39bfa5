//! Checkpoint file: eight parameter frames (actor, critic, target actor,
//! target critic, then first and second Adam moments of actor and critic)
//! followed by a state section
//! `[u32 magic][u64 length][bincode payload][u64 FNV-1a over the section]`.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamHyper, AdamState};
use crate::error::{Error, Result};
use crate::learner::NetworkQuad;
use crate::nn::{NetSpec, ParamGrads};
use crate::replay::PrioritizedReplay;
use crate::runtime::frame::{fnv1a, Cursor};
use crate::runtime::{ActorState, Frame};
use crate::Real;

pub const STATE_MAGIC: u32 = 0xD450_5354;

/// Everything besides network weights needed to continue a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config_hash: u64,
    pub config_text: String,
    pub learner_steps: u64,
    pub actor_steps: u64,
    pub actor_adam: (u64, AdamHyper),
    pub critic_adam: (u64, AdamHyper),
    pub learner_rng: ChaCha8Rng,
    pub replay: PrioritizedReplay<Real>,
    /// Empty for threaded runs saved mid-flight; actors then restart fresh.
    pub actors: Vec<ActorState<Real>>,
    /// Latest published snapshot as an encoded frame.
    pub snapshot: Option<Vec<u8>>,
    /// Metric sums since the last evaluation row.
    pub loss_sum: f64,
    pub objective_sum: f64,
    pub metric_count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// actor, critic, target actor, target critic, actor m, actor v, critic m, critic v.
    pub frames: Vec<Frame>,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(
        nets: &NetworkQuad<Real>,
        actor_opt: &AdamState<Real>,
        critic_opt: &AdamState<Real>,
        mut state: TrainState,
    ) -> Self {
        let v = state.learner_steps;
        let frames = vec![
            Frame::from_net(v, &nets.actor),
            Frame::from_net(v, &nets.critic),
            Frame::from_net(v, &nets.target_actor),
            Frame::from_net(v, &nets.target_critic),
            Frame::from_layers(actor_opt.step_count(), actor_opt.first_moment().layers()),
            Frame::from_layers(actor_opt.step_count(), actor_opt.second_moment().layers()),
            Frame::from_layers(critic_opt.step_count(), critic_opt.first_moment().layers()),
            Frame::from_layers(critic_opt.step_count(), critic_opt.second_moment().layers()),
        ];
        state.actor_adam = (actor_opt.step_count(), actor_opt.hyper());
        state.critic_adam = (critic_opt.step_count(), critic_opt.hyper());
        Self { frames, state }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for f in &self.frames {
            out.extend(f.encode());
        }
        let payload = bincode::serialize(&self.state)
            .map_err(|e| Error::Load(format!("cannot serialize training state: {e}")))?;
        let start = out.len();
        out.extend_from_slice(&STATE_MAGIC.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend(payload);
        let sum = fnv1a(&out[start..]);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut frames = Vec::with_capacity(8);
        for i in 0..8 {
            let (f, used) = Frame::decode(&bytes[pos..])
                .map_err(|e| Error::Load(format!("checkpoint frame {i}: {e}")))?;
            frames.push(f);
            pos += used;
        }
        let mut cur = Cursor { bytes, pos };
        let magic = cur.u32()?;
        if magic != STATE_MAGIC {
            return Err(Error::Load(format!("bad state section magic {magic:#010x}")));
        }
        let len = cur.u64()? as usize;
        let payload = cur.take(len)?.to_vec();
        let end = cur.pos;
        let sum = cur.u64()?;
        if fnv1a(&bytes[pos..end]) != sum {
            return Err(Error::Load("state section checksum mismatch".into()));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Load("trailing bytes after checkpoint".into()));
        }
        let state = bincode::deserialize(&payload)
            .map_err(|e| Error::Load(format!("cannot decode training state: {e}")))?;
        Ok(Self { frames, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Load(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::decode(&bytes)
    }

    /// Online actor bound to `spec`.
    pub fn actor(&self, spec: &NetSpec) -> Result<crate::Net> {
        self.frames[0].clone().into_net(spec).map_err(|e| Error::Load(format!("actor {e}")))
    }

    pub fn networks(&self, actor: &NetSpec, critic: &NetSpec) -> Result<NetworkQuad<Real>> {
        let bind = |i: usize, spec: &NetSpec, name: &str| {
            self.frames[i].clone().into_net(spec).map_err(|e| Error::Load(format!("{name} {e}")))
        };
        Ok(NetworkQuad {
            actor: bind(0, actor, "actor")?,
            critic: bind(1, critic, "critic")?,
            target_actor: bind(2, actor, "target actor")?,
            target_critic: bind(3, critic, "target critic")?,
        })
    }

    pub fn optimizers(&self, actor: &NetSpec, critic: &NetSpec) -> Result<(AdamState<Real>, AdamState<Real>)> {
        let moments = |i: usize, spec: &NetSpec, name: &str| -> Result<ParamGrads<Real>> {
            let layers = self.frames[i]
                .clone()
                .into_layers(spec.layer_sizes())
                .map_err(|e| Error::Load(format!("{name} optimizer {e}")))?;
            Ok(ParamGrads::from_layers(layers))
        };
        let (a_steps, a_hyper) = self.state.actor_adam;
        let (c_steps, c_hyper) = self.state.critic_adam;
        Ok((
            AdamState::from_parts(moments(4, actor, "actor")?, moments(5, actor, "actor")?, a_steps, a_hyper)?,
            AdamState::from_parts(moments(6, critic, "critic")?, moments(7, critic, "critic")?, c_steps, c_hyper)?,
        ))
    }
}

//! Actor side of the actor/learner split: versioned weight replication and
//! experience-gathering actors.

mod actor;
pub mod frame;
mod snapshot;

pub use actor::{actor_loop, select_action, Actor, ActorConfig, ActorState, ActorStats, ActorStep, RunControl};
pub use frame::{read_frame, write_frame, Frame, FRAME_MAGIC};
pub use snapshot::{params_checksum, ParameterSnapshot, SnapshotStore};

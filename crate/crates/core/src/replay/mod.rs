//! Experience replay: N-step transition assembly and a prioritized ring
//! buffer backed by a sum-tree.

mod buffer;
mod nstep;
mod sum_tree;

pub use buffer::{PrioritizedReplay, SampledBatch, SamplingMode, SharedReplay, SlotRef};
pub use nstep::{NStepAccumulator, StepEnd, Transition};
pub use sum_tree::SumTree;

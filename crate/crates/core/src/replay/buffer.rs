use std::sync::Arc;

use parking_lot::Mutex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nstep::Transition;
use super::sum_tree::SumTree;
use crate::dist::PRIORITY_FLOOR;
use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

/// Replay handle shared between actor threads (inserting) and the learner.
pub type SharedReplay<T> = Arc<Mutex<PrioritizedReplay<T>>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingMode {
    /// Priority-proportional, one draw from each of M equal-mass strata.
    Stratified,
    /// Priority-proportional, M independent draws.
    Multinomial,
    /// Uniform over stored items; all importance weights are 1.
    Uniform,
}

/// A buffer slot together with the insertion stamp it held when sampled, so
/// priority write-backs to overwritten slots can be detected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRef {
    pub slot: usize,
    pub stamp: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledBatch<T> {
    pub transitions: Vec<Transition<T>>,
    pub slots: Vec<SlotRef>,
    /// Sampling probability `leaf / root` of each draw.
    pub probabilities: Vec<f64>,
    /// Importance weights `(size * p_i)^-1`.
    pub weights: Vec<f64>,
}

impl<T> SampledBatch<T> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Capacity-bounded ring buffer with sum-tree priorities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PrioritizedReplay<T> {
    capacity: usize,
    slots: Vec<Option<Transition<T>>>,
    stamps: Vec<u64>,
    next_stamp: u64,
    tree: SumTree,
    max_priority: f64,
    cursor: usize,
    size: usize,
    mode: SamplingMode,
    stale_updates: u64,
}

impl<T: Scalar> PrioritizedReplay<T> {
    pub fn new(capacity: usize, mode: SamplingMode) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            slots: vec![None; capacity],
            stamps: vec![0; capacity],
            next_stamp: 1,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
            cursor: 0,
            size: 0,
            mode,
            stale_updates: 0,
        })
    }

    pub fn into_shared(self) -> SharedReplay<T> {
        Arc::new(Mutex::new(self))
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: SamplingMode) {
        self.mode = mode;
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn total_priority(&self) -> f64 {
        self.tree.total()
    }

    pub fn priority(&self, slot: usize) -> f64 {
        self.tree.get(slot)
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Priority write-backs skipped because their slot had been overwritten.
    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    pub fn get(&self, slot: usize) -> Option<&Transition<T>> {
        self.slots.get(slot).and_then(Option::as_ref)
    }

    /// Store at the cursor, evicting the oldest item once full. New items get
    /// the largest priority seen so far.
    pub fn insert(&mut self, transition: Transition<T>) -> SlotRef {
        let slot = self.cursor;
        self.slots[slot] = Some(transition);
        self.stamps[slot] = self.next_stamp;
        self.next_stamp += 1;
        self.tree.set(slot, self.max_priority);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.size = (self.size + 1).min(self.capacity);
        SlotRef {
            slot,
            stamp: self.stamps[slot],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<SampledBatch<T>> {
        if count == 0 || self.size < count {
            return Err(Error::NotEnoughData {
                needed: count.max(1),
                available: self.size,
            });
        }
        let mut batch = SampledBatch {
            transitions: Vec::with_capacity(count),
            slots: Vec::with_capacity(count),
            probabilities: Vec::with_capacity(count),
            weights: Vec::with_capacity(count),
        };
        let size = self.size as f64;
        let total = self.tree.total();
        for j in 0..count {
            let (slot, prob, weight) = match self.mode {
                SamplingMode::Uniform => (rng.random_range(0..self.size), 1.0 / size, 1.0),
                SamplingMode::Stratified | SamplingMode::Multinomial => {
                    let u: f64 = rng.random();
                    let mass = if self.mode == SamplingMode::Stratified {
                        (j as f64 + u) * (total / count as f64)
                    } else {
                        u * total
                    };
                    let slot = self.tree.find(mass.min(total));
                    let leaf = self.tree.get(slot);
                    (slot, leaf / total, total / (size * leaf))
                }
            };
            batch.transitions.push(self.slots[slot].clone().expect("sampled a live slot"));
            batch.slots.push(SlotRef {
                slot,
                stamp: self.stamps[slot],
            });
            batch.probabilities.push(prob);
            batch.weights.push(weight);
        }
        Ok(batch)
    }

    /// Write back priorities for previously sampled slots. Each value is
    /// floored at [`PRIORITY_FLOOR`]; overwritten slots are skipped and counted.
    pub fn update_priorities(&mut self, slots: &[SlotRef], priorities: &[f64]) -> Result<()> {
        check_len("priority update", slots.len(), priorities.len())?;
        for (r, &p) in slots.iter().zip(priorities) {
            if r.slot >= self.size || self.stamps[r.slot] != r.stamp {
                self.stale_updates += 1;
                continue;
            }
            let p = if p.is_finite() { p.max(PRIORITY_FLOOR) } else { PRIORITY_FLOOR };
            self.tree.set(r.slot, p);
            self.max_priority = self.max_priority.max(p);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(v: f64) -> Transition<f64> {
        Transition {
            obs: vec![v],
            action: vec![0.0],
            reward: v,
            next_obs: vec![v + 1.0],
            discount: 0.99,
        }
    }

    #[test]
    fn first_insert_has_unit_priority() {
        let mut buf = PrioritizedReplay::new(10, SamplingMode::Stratified).unwrap();
        buf.insert(t(0.0));
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.total_priority(), 1.0);
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = PrioritizedReplay::new(3, SamplingMode::Stratified).unwrap();
        for i in 0..4 {
            buf.insert(t(i as f64));
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.get(0).unwrap().reward, 3.0);
        assert_eq!(buf.get(1).unwrap().reward, 1.0);
        let direct: f64 = buf.tree().leaves().iter().sum();
        assert!((buf.total_priority() - direct).abs() < 1e-9);
    }

    #[test]
    fn equal_priorities_give_unit_weights() {
        let mut buf = PrioritizedReplay::new(49, SamplingMode::Stratified).unwrap();
        for i in 0..49 {
            buf.insert(t(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample(16, &mut rng).unwrap();
        assert!(batch.weights.iter().all(|&w| w == 1.0));
        let slots: Vec<_> = batch.slots.iter().map(|s| s.slot).collect();
        buf.update_priorities(&batch.slots, &vec![0.37; 16]).unwrap();
        let others: Vec<_> = (0..49).filter(|s| !slots.contains(s)).map(|s| SlotRef { slot: s, stamp: buf.stamps[s] }).collect();
        buf.update_priorities(&others, &vec![0.37; others.len()]).unwrap();
        let batch = buf.sample(16, &mut rng).unwrap();
        for w in &batch.weights {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_for_a_seed() {
        let mut buf = PrioritizedReplay::new(20, SamplingMode::Stratified).unwrap();
        for i in 0..20 {
            buf.insert(t(i as f64));
        }
        let slots: Vec<_> = (0..20).map(|s| SlotRef { slot: s, stamp: s as u64 + 1 }).collect();
        let prios: Vec<f64> = (0..20).map(|i| 0.1 + i as f64).collect();
        buf.update_priorities(&slots, &prios).unwrap();
        let a = buf.sample(8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = buf.sample(8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_items_is_an_error() {
        let mut buf = PrioritizedReplay::new(20, SamplingMode::Uniform).unwrap();
        buf.insert(t(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            buf.sample(2, &mut rng),
            Err(Error::NotEnoughData { needed: 2, available: 1 })
        ));
    }

    #[test]
    fn floored_item_stays_sampleable() {
        let mut buf = PrioritizedReplay::new(2, SamplingMode::Multinomial).unwrap();
        let a = buf.insert(t(0.0));
        buf.insert(t(1.0));
        buf.update_priorities(&[a], &[0.0]).unwrap();
        assert_eq!(buf.priority(0), PRIORITY_FLOOR);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hits = (0..20_000)
            .filter(|_| buf.sample(1, &mut rng).unwrap().slots[0].slot == 0)
            .count();
        assert!(hits > 0);
    }

    #[test]
    fn stale_updates_are_skipped_and_counted() {
        let mut buf = PrioritizedReplay::new(2, SamplingMode::Stratified).unwrap();
        let old = buf.insert(t(0.0));
        buf.insert(t(1.0));
        buf.insert(t(2.0)); // overwrites slot 0
        buf.update_priorities(&[old], &[50.0]).unwrap();
        assert_eq!(buf.stale_updates(), 1);
        assert_eq!(buf.priority(0), 1.0);
        assert_eq!(buf.max_priority(), 1.0);
    }

    #[test]
    fn max_priority_seeds_new_items() {
        let mut buf = PrioritizedReplay::new(4, SamplingMode::Stratified).unwrap();
        let a = buf.insert(t(0.0));
        buf.update_priorities(&[a], &[7.5]).unwrap();
        let b = buf.insert(t(1.0));
        assert_eq!(buf.priority(b.slot), 7.5);
    }

    #[test]
    fn uniform_mode_ignores_priorities() {
        let mut buf = PrioritizedReplay::new(4, SamplingMode::Uniform).unwrap();
        for i in 0..4 {
            let r = buf.insert(t(i as f64));
            buf.update_priorities(&[r], &[10.0f64.powi(i)]).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut saw_first = false;
        for _ in 0..16 {
            let batch = buf.sample(4, &mut rng).unwrap();
            assert!(batch.weights.iter().all(|&w| w == 1.0));
            assert!(batch.probabilities.iter().all(|&p| p == 0.25));
            saw_first |= batch.slots.iter().any(|s| s.slot == 0);
        }
        assert!(saw_first);
    }
}

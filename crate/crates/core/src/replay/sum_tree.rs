use serde::{Deserialize, Serialize};

/// Complete binary tree over `capacity` leaves (a power of two). Node 1 is
/// the root, node `i` has children `2i` and `2i + 1`, leaves start at
/// `capacity`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    /// Smallest power-of-two tree holding at least `min_leaves` leaves.
    pub fn new(min_leaves: usize) -> Self {
        let capacity = min_leaves.max(1).next_power_of_two();
        Self {
            capacity,
            nodes: vec![0.0; 2 * capacity],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.capacity + leaf]
    }

    pub fn leaves(&self) -> &[f64] {
        &self.nodes[self.capacity..]
    }

    /// Set a leaf and recompute its ancestors from their children, so rounding
    /// errors never accumulate across updates.
    pub fn set(&mut self, leaf: usize, priority: f64) {
        assert!(leaf < self.capacity, "leaf {leaf} outside tree of {}", self.capacity);
        assert!(priority >= 0.0 && priority.is_finite(), "invalid priority {priority}");
        let mut i = self.capacity + leaf;
        self.nodes[i] = priority;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative-mass interval contains `mass` (`0 <= mass < total`).
    /// Never returns a zero-priority leaf while the total is positive.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.capacity {
            let left = 2 * i;
            if mass < self.nodes[left] || self.nodes[left + 1] <= 0.0 {
                i = left;
            } else {
                mass -= self.nodes[left];
                i = left + 1;
            }
        }
        i - self.capacity
    }
}

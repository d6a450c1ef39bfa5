use std::sync::Arc;

use parking_lot::RwLock;

use super::frame::fnv1a;
use crate::nn::DenseNet;
use crate::scalar::Scalar;

/// Immutable, versioned copy of the actor network.
#[derive(Debug)]
pub struct ParameterSnapshot<T> {
    version: u64,
    params: DenseNet<T>,
    checksum: u64,
}

pub fn params_checksum<T: Scalar>(net: &DenseNet<T>) -> u64 {
    let bytes: Vec<u8> = net.params().flat_map(|p| p.as_f64().to_le_bytes()).collect();
    fnv1a(&bytes)
}

impl<T: Scalar> ParameterSnapshot<T> {
    pub fn new(version: u64, params: DenseNet<T>) -> Self {
        let checksum = params_checksum(&params);
        Self {
            version,
            params,
            checksum,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> &DenseNet<T> {
        &self.params
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// Recompute the parameter checksum and compare it with the one taken at publication.
    pub fn verify(&self) -> bool {
        params_checksum(&self.params) == self.checksum
    }
}

/// Single-writer, many-reader holder of the latest snapshot. Publication
/// swaps an `Arc` under a short write lock, so readers always see a whole
/// snapshot.
#[derive(Debug)]
pub struct SnapshotStore<T> {
    latest: RwLock<Option<Arc<ParameterSnapshot<T>>>>,
}

impl<T> Default for SnapshotStore<T> {
    fn default() -> Self {
        Self {
            latest: RwLock::new(None),
        }
    }
}

impl<T: Scalar> SnapshotStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Publish a copy of `params` under the next version number.
    pub fn publish(&self, params: DenseNet<T>) -> u64 {
        let mut slot = self.latest.write();
        let version = slot.as_ref().map_or(1, |s| s.version + 1);
        *slot = Some(Arc::new(ParameterSnapshot::new(version, params)));
        version
    }

    /// Re-install a snapshot with a given version (used when resuming).
    pub fn restore(&self, snapshot: ParameterSnapshot<T>) {
        *self.latest.write() = Some(Arc::new(snapshot));
    }

    /// The newest snapshot, or `None` before the first publication.
    pub fn fetch(&self) -> Option<Arc<ParameterSnapshot<T>>> {
        self.latest.read().clone()
    }

    pub fn latest_version(&self) -> u64 {
        self.latest.read().as_ref().map_or(0, |s| s.version)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetSpec};

    fn net(seed: u64) -> DenseNet<f64> {
        DenseNet::new(NetSpec::mlp(2, &[3], 1, Activation::Tanh).unwrap(), seed).unwrap()
    }

    #[test]
    fn fetch_before_publish_is_empty() {
        let store = SnapshotStore::<f64>::new();
        assert!(store.fetch().is_none());
        assert_eq!(store.latest_version(), 0);
    }

    #[test]
    fn latest_publication_wins() {
        let store = SnapshotStore::new();
        assert_eq!(store.publish(net(1)), 1);
        assert_eq!(store.publish(net(2)), 2);
        let snap = store.fetch().unwrap();
        assert_eq!(snap.version(), 2);
        assert_eq!(snap.params(), &net(2));
        assert!(snap.verify());
    }

    #[test]
    fn republishing_identical_params_bumps_version() {
        let store = SnapshotStore::new();
        store.publish(net(1));
        assert_eq!(store.publish(net(1)), 2);
    }
}

//! Structural checks over cluster snapshots.

use std::collections::{BTreeMap, BTreeSet};

use crate::cluster::{eligible, NodeId};
use crate::protocols::{ClusterSnapshot, Protocol};
use crate::world::World;

/// Cluster state of every vehicle that reports one, by node id.
pub fn snapshots<P: Protocol>(world: &World<P>) -> BTreeMap<NodeId, ClusterSnapshot> {
    world
        .agents()
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.cluster_snapshot().map(|s| (i as NodeId, s)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckFailure {
    /// A cluster id whose node is not (or not the only) head of it.
    HeadMismatch { cluster: NodeId, heads: Vec<NodeId> },
    /// A member whose cluster head is unreachable through eligible members.
    Disconnected { node: NodeId, cluster: NodeId },
}

/// Every cluster has exactly one head, and that head's id is the cluster id.
pub fn ch_uniqueness(snaps: &BTreeMap<NodeId, ClusterSnapshot>) -> Result<(), CheckFailure> {
    let mut heads: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (&id, s) in snaps {
        if let Some(c) = s.cluster_id {
            let entry = heads.entry(c).or_default();
            if s.is_ch {
                entry.push(id);
            }
        }
    }
    for (&id, s) in snaps {
        if s.is_ch && s.cluster_id != Some(id) {
            return Err(CheckFailure::HeadMismatch { cluster: s.cluster_id.unwrap_or(id), heads: vec![id] });
        }
    }
    for (cluster, hs) in heads {
        if hs != [cluster] {
            return Err(CheckFailure::HeadMismatch { cluster, heads: hs });
        }
    }
    Ok(())
}

/// Every member reaches its head through a chain of pairwise-eligible
/// members of the same cluster.
pub fn membership_sound(snaps: &BTreeMap<NodeId, ClusterSnapshot>, mad_m: f64) -> Result<(), CheckFailure> {
    let mut clusters: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (&id, s) in snaps {
        if let Some(c) = s.cluster_id {
            clusters.entry(c).or_default().push(id);
        }
    }
    for (cluster, members) in clusters {
        let Some(head) = snaps.get(&cluster) else {
            return Err(CheckFailure::HeadMismatch { cluster, heads: vec![] });
        };
        let mut seen = BTreeSet::from([cluster]);
        let mut frontier = vec![head.loco];
        while let Some(loco) = frontier.pop() {
            for &m in &members {
                if !seen.contains(&m) && eligible(&loco, &snaps[&m].loco, mad_m) {
                    seen.insert(m);
                    frontier.push(snaps[&m].loco);
                }
            }
        }
        if let Some(&node) = members.iter().find(|m| !seen.contains(m)) {
            return Err(CheckFailure::Disconnected { node, cluster });
        }
    }
    Ok(())
}

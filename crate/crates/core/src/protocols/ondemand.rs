//! Route table for on-demand distance-vector discovery, shared by AODV and
//! ACR's inter-cluster backbone.

use std::collections::{BTreeMap, BTreeSet};

use crate::cluster::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct OnDemandEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hop_count: u32,
    pub dest_seq: u32,
    pub valid: bool,
    pub expires_at: f64,
    /// Upstream neighbors that route through this entry.
    pub precursors: BTreeSet<NodeId>,
}

impl OnDemandEntry {
    pub fn is_active(&self, now: f64) -> bool {
        self.valid && self.expires_at > now
    }
}

#[derive(Debug, Clone, Default)]
pub struct OnDemandTable {
    entries: BTreeMap<NodeId, OnDemandEntry>,
}

impl OnDemandTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, dest: NodeId) -> Option<&OnDemandEntry> {
        self.entries.get(&dest)
    }

    pub fn active(&self, dest: NodeId, now: f64) -> Option<&OnDemandEntry> {
        self.entries.get(&dest).filter(|e| e.is_active(now))
    }

    pub fn entries(&self) -> impl Iterator<Item = &OnDemandEntry> {
        self.entries.values()
    }

    /// Offers a route. It is installed when it is new, carries a newer
    /// sequence number, or has the same number and either replaces an
    /// inactive entry or needs fewer hops. Sequence numbers never decrease.
    pub fn update(&mut self, dest: NodeId, next_hop: NodeId, hop_count: u32, dest_seq: u32, now: f64, lifetime: f64) -> bool {
        let expires_at = now + lifetime;
        match self.entries.get_mut(&dest) {
            None => {
                self.entries.insert(
                    dest,
                    OnDemandEntry { dest, next_hop, hop_count, dest_seq, valid: true, expires_at, precursors: BTreeSet::new() },
                );
                true
            }
            Some(e) => {
                let accept = dest_seq > e.dest_seq
                    || (dest_seq == e.dest_seq && (!e.is_active(now) || hop_count < e.hop_count));
                if accept {
                    e.next_hop = next_hop;
                    e.hop_count = hop_count;
                    e.dest_seq = dest_seq;
                    e.valid = true;
                    e.expires_at = expires_at;
                } else if e.is_active(now) && e.next_hop == next_hop && e.hop_count == hop_count {
                    e.expires_at = e.expires_at.max(expires_at);
                }
                accept
            }
        }
    }

    /// A one-hop route to a neighbor just heard from; keeps its sequence number.
    pub fn touch_neighbor(&mut self, neighbor: NodeId, now: f64, lifetime: f64) {
        let e = self.entries.entry(neighbor).or_insert(OnDemandEntry {
            dest: neighbor,
            next_hop: neighbor,
            hop_count: 1,
            dest_seq: 0,
            valid: true,
            expires_at: now,
            precursors: BTreeSet::new(),
        });
        e.next_hop = neighbor;
        e.hop_count = 1;
        e.valid = true;
        e.expires_at = e.expires_at.max(now + lifetime);
    }

    /// Extends the lifetime of an active route that just carried traffic.
    pub fn refresh(&mut self, dest: NodeId, now: f64, lifetime: f64) {
        if let Some(e) = self.entries.get_mut(&dest) {
            if e.is_active(now) {
                e.expires_at = e.expires_at.max(now + lifetime);
            }
        }
    }

    pub fn add_precursor(&mut self, dest: NodeId, precursor: NodeId) {
        if let Some(e) = self.entries.get_mut(&dest) {
            e.precursors.insert(precursor);
        }
    }

    /// Invalidates every valid route through `next_hop`, bumping each
    /// destination sequence number. Returns the (dest, seq) pairs to report.
    pub fn invalidate_via(&mut self, next_hop: NodeId) -> Vec<(NodeId, u32)> {
        let mut out = Vec::new();
        for e in self.entries.values_mut() {
            if e.valid && e.next_hop == next_hop {
                e.valid = false;
                e.dest_seq = e.dest_seq.wrapping_add(1);
                out.push((e.dest, e.dest_seq));
            }
        }
        out
    }

    /// Applies a route error from `from`: routes that use `from` as next hop
    /// for a listed destination become invalid. Returns what changed.
    pub fn invalidate_reported(&mut self, from: NodeId, unreachable: &[(NodeId, u32)]) -> Vec<(NodeId, u32)> {
        let mut out = Vec::new();
        for &(dest, seq) in unreachable {
            if let Some(e) = self.entries.get_mut(&dest) {
                if e.valid && e.next_hop == from {
                    e.valid = false;
                    e.dest_seq = e.dest_seq.max(seq);
                    out.push((dest, e.dest_seq));
                }
            }
        }
        out
    }

    /// Drops every entry; used when a node loses the role that owned the table.
    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

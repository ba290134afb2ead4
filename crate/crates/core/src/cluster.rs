//! Per-node clustering state machine.
//!
//! Every node keeps a routing table of LOCO broadcasts it heard. A sender is
//! marked [`ClusterFlag::Clustered`] when it travels on the same road and lane
//! (zero Hamming distance over `road_id ‖ lane`) and is within the maximum
//! allowed distance (MAD). A node is cluster head when no clustered neighbor
//! is strictly in front of it along the lane. Cluster identity is the CH's
//! node id; non-heads adopt the cluster advertised by their front-most
//! clustered neighbor, so the id flows backwards along the chain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::loco::{mobility_distance, LaneDirection, LocoAddress};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClusterFlag {
    Candidate,
    Clustered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTableEntry {
    pub node_id: NodeId,
    pub loco: LocoAddress,
    pub flag: ClusterFlag,
    pub last_heard: f64,
    /// Cluster the sender claimed in its most recent broadcast.
    pub advertised_cluster: Option<NodeId>,
    pub advertised_ch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterView {
    pub cluster_id: Option<NodeId>,
    pub is_ch: bool,
    pub members: BTreeSet<NodeId>,
    pub mad_m: f64,
}

/// A reply to a join request or link-failure enquiry.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinReply {
    pub node_id: NodeId,
    pub loco: LocoAddress,
    pub cluster_id: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkFailureAction {
    JoinedExisting(NodeId),
    FormedNew,
    StillWaiting,
}

#[derive(Debug, Clone, PartialEq)]
struct Enquiry {
    deadline: f64,
    replies: Vec<JoinReply>,
}

/// `true` when (pl_a, id_a) is strictly in front of (pl_b, id_b) on `lane`.
/// Equal locations are ordered by node id, lower id in front.
pub fn is_ahead(pl_a: u32, id_a: NodeId, pl_b: u32, id_b: NodeId, lane: LaneDirection) -> bool {
    match pl_a.cmp(&pl_b) {
        std::cmp::Ordering::Equal => id_a < id_b,
        std::cmp::Ordering::Greater => lane == LaneDirection::Increasing,
        std::cmp::Ordering::Less => lane == LaneDirection::Decreasing,
    }
}

/// The clustering predicate: same road and lane, and within MAD.
pub fn eligible(a: &LocoAddress, b: &LocoAddress, mad_m: f64) -> bool {
    match mobility_distance(a, b) {
        Ok(d) => d.hd == 0 && d.pl_delta as f64 <= mad_m,
        Err(_) => false,
    }
}

/// Picks the replacement head when a CH leaves: the replying member closest
/// to the leaving CH, lower id on ties. `None` dissolves the cluster.
pub fn handle_ch_leave(ch_loco: &LocoAddress, replies: &[(NodeId, LocoAddress)]) -> Option<NodeId> {
    replies
        .iter()
        .min_by_key(|(id, loco)| (loco.physical_location.abs_diff(ch_loco.physical_location), *id))
        .map(|(id, _)| *id)
}

/// Chooses which cluster a joining node attaches to: the cluster of the
/// closest eligible sender, lower sender id on ties.
pub fn handle_join_request(own: &LocoAddress, mad_m: f64, replies: &[JoinReply]) -> Option<NodeId> {
    select_join_reply(own, mad_m, replies).map(|r| r.cluster_id)
}

fn select_join_reply<'a>(own: &LocoAddress, mad_m: f64, replies: &'a [JoinReply]) -> Option<&'a JoinReply> {
    replies
        .iter()
        .filter(|r| eligible(own, &r.loco, mad_m))
        .min_by_key(|r| (r.loco.physical_location.abs_diff(own.physical_location), r.node_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterEventKind {
    BecameHead,
    Demoted,
    ClusterChanged,
    Joined,
    FormedNew,
    Left,
}

impl fmt::Display for ClusterEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClusterEventKind::BecameHead => "became_head",
            ClusterEventKind::Demoted => "demoted",
            ClusterEventKind::ClusterChanged => "cluster_changed",
            ClusterEventKind::Joined => "joined",
            ClusterEventKind::FormedNew => "formed_new",
            ClusterEventKind::Left => "left",
        };
        f.write_str(s)
    }
}

/// One row of the cluster transition log.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLogRecord {
    pub time: f64,
    pub node: NodeId,
    pub event: ClusterEventKind,
    pub cluster_id: Option<NodeId>,
    pub is_ch: bool,
}

impl ClusterLogRecord {
    pub const CSV_HEADER: &'static str = "time,node,event,cluster_id,is_ch";

    pub fn csv_row(&self) -> String {
        let cid = self.cluster_id.map(|c| c.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", self.time, self.node, self.event, cid, self.is_ch)
    }
}

#[derive(Debug, Clone)]
pub struct ClusterNode {
    id: NodeId,
    loco: LocoAddress,
    table: BTreeMap<NodeId, RoutingTableEntry>,
    view: ClusterView,
    malformed: u64,
    enquiry: Option<Enquiry>,
}

impl ClusterNode {
    /// A node that has not yet evaluated its cluster (no cluster id).
    pub fn new(id: NodeId, loco: LocoAddress, mad_m: f64) -> Self {
        Self {
            id,
            loco,
            table: BTreeMap::new(),
            view: ClusterView { cluster_id: None, is_ch: false, members: BTreeSet::new(), mad_m },
            malformed: 0,
            enquiry: None,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn loco(&self) -> &LocoAddress {
        &self.loco
    }

    pub fn set_loco(&mut self, loco: LocoAddress) {
        self.loco = loco;
    }

    pub fn view(&self) -> &ClusterView {
        &self.view
    }

    pub fn table(&self) -> &BTreeMap<NodeId, RoutingTableEntry> {
        &self.table
    }

    pub fn entry(&self, id: NodeId) -> Option<&RoutingTableEntry> {
        self.table.get(&id)
    }

    pub fn malformed_count(&self) -> u64 {
        self.malformed
    }

    pub fn is_clustered(&self) -> bool {
        self.view.cluster_id.is_some()
    }

    pub fn cluster_id(&self) -> Option<NodeId> {
        self.view.cluster_id
    }

    pub fn is_ch(&self) -> bool {
        self.view.is_ch
    }

    /// Upserts the sender's entry. Returns the flag assigned, or `None` when
    /// the LOCO could not be compared with ours (dropped and counted).
    pub fn process_loco_broadcast(&mut self, sender: NodeId, loco: LocoAddress, now: f64) -> Option<ClusterFlag> {
        if sender == self.id {
            return None;
        }
        let distance = match mobility_distance(&self.loco, &loco) {
            Ok(d) => d,
            Err(_) => {
                self.malformed += 1;
                return None;
            }
        };
        let flag = if distance.hd == 0 && distance.pl_delta as f64 <= self.view.mad_m {
            ClusterFlag::Clustered
        } else {
            ClusterFlag::Candidate
        };
        let entry = self.table.entry(sender).or_insert(RoutingTableEntry {
            node_id: sender,
            loco,
            flag,
            last_heard: now,
            advertised_cluster: None,
            advertised_ch: false,
        });
        entry.loco = loco;
        entry.flag = flag;
        entry.last_heard = now;
        Some(flag)
    }

    /// Stores the cluster state the sender announced alongside its LOCO.
    pub fn record_advertisement(&mut self, sender: NodeId, cluster_id: Option<NodeId>, is_ch: bool) {
        if let Some(e) = self.table.get_mut(&sender) {
            e.advertised_cluster = cluster_id;
            e.advertised_ch = is_ch;
        }
    }

    fn clustered(&self) -> impl Iterator<Item = &RoutingTableEntry> {
        self.table.values().filter(|e| e.flag == ClusterFlag::Clustered)
    }

    fn front_most_member(&self) -> Option<&RoutingTableEntry> {
        let lane = self.loco.lane_direction;
        self.clustered().fold(None, |best: Option<&RoutingTableEntry>, e| match best {
            Some(b) if !is_ahead(e.loco.physical_location, e.node_id, b.loco.physical_location, b.node_id, lane) => {
                Some(b)
            }
            _ => Some(e),
        })
    }

    /// Scans clustered entries; this node heads its cluster iff none of them
    /// is strictly in front of it.
    pub fn select_cluster_head(&mut self) -> bool {
        let lane = self.loco.lane_direction;
        let pl = self.loco.physical_location;
        let is_ch = !self
            .clustered()
            .any(|e| is_ahead(e.loco.physical_location, e.node_id, pl, self.id, lane));
        self.view.is_ch = is_ch;
        is_ch
    }

    /// Re-derives members, head flag and cluster id from the table.
    /// Returns the transition, if the cluster state changed.
    pub fn refresh(&mut self) -> Option<ClusterEventKind> {
        let was_ch = self.view.is_ch;
        let old_cluster = self.view.cluster_id;
        self.view.members = self.clustered().map(|e| e.node_id).collect();
        let is_ch = self.select_cluster_head();
        self.view.cluster_id = if is_ch {
            Some(self.id)
        } else {
            self.front_most_member().map(|e| e.advertised_cluster.unwrap_or(e.node_id))
        };
        if is_ch && !was_ch {
            Some(ClusterEventKind::BecameHead)
        } else if was_ch && !is_ch {
            Some(ClusterEventKind::Demoted)
        } else if old_cluster != self.view.cluster_id {
            Some(ClusterEventKind::ClusterChanged)
        } else {
            None
        }
    }

    /// Drops entries not heard for more than `ttl` seconds and re-evaluates
    /// the cluster. Returns the removed node ids.
    pub fn expire_stale_entries(&mut self, now: f64, ttl: f64) -> Vec<NodeId> {
        let stale: Vec<NodeId> = self
            .table
            .values()
            .filter(|e| now - e.last_heard > ttl)
            .map(|e| e.node_id)
            .collect();
        for id in &stale {
            self.table.remove(id);
        }
        if !stale.is_empty() {
            self.refresh();
        }
        stale
    }

    pub fn remove_entry(&mut self, id: NodeId) -> bool {
        self.table.remove(&id).is_some()
    }

    /// Attaches to the cluster of the best reply, if any is eligible.
    pub fn join_from_replies(&mut self, replies: &[JoinReply], now: f64) -> Option<NodeId> {
        let chosen = select_join_reply(&self.loco, self.view.mad_m, replies)?.clone();
        self.table.insert(
            chosen.node_id,
            RoutingTableEntry {
                node_id: chosen.node_id,
                loco: chosen.loco,
                flag: ClusterFlag::Clustered,
                last_heard: now,
                advertised_cluster: Some(chosen.cluster_id),
                advertised_ch: chosen.node_id == chosen.cluster_id,
            },
        );
        self.view.members.insert(chosen.node_id);
        self.view.is_ch = false;
        self.view.cluster_id = Some(chosen.cluster_id);
        Some(chosen.cluster_id)
    }

    /// Forgets every neighbor and heads a singleton cluster.
    pub fn form_new_cluster(&mut self) {
        self.table.clear();
        self.view.members.clear();
        self.view.is_ch = true;
        self.view.cluster_id = Some(self.id);
    }

    /// Leaves the current cluster without forming a new one.
    pub fn reset(&mut self) {
        self.table.clear();
        self.view.members.clear();
        self.view.is_ch = false;
        self.view.cluster_id = None;
        self.enquiry = None;
    }

    /// Starts the disconnection procedure: replies are collected until `now + timeout`.
    pub fn begin_enquiry(&mut self, now: f64, timeout: f64) {
        self.enquiry = Some(Enquiry { deadline: now + timeout, replies: Vec::new() });
    }

    pub fn enquiry_pending(&self) -> bool {
        self.enquiry.is_some()
    }

    pub fn record_enquiry_reply(&mut self, reply: JoinReply) {
        if let Some(q) = self.enquiry.as_mut() {
            q.replies.push(reply);
        }
    }

    /// Resolves a pending enquiry once its window has closed: join the
    /// closest replying CH, or rebuild a cluster from scratch.
    pub fn handle_link_failure(&mut self, now: f64) -> LinkFailureAction {
        let Some(q) = self.enquiry.as_ref() else {
            return LinkFailureAction::StillWaiting;
        };
        if now < q.deadline {
            return LinkFailureAction::StillWaiting;
        }
        let replies = self.enquiry.take().map(|q| q.replies).unwrap_or_default();
        match self.join_from_replies(&replies, now) {
            Some(cluster) => LinkFailureAction::JoinedExisting(cluster),
            None => {
                self.form_new_cluster();
                LinkFailureAction::FormedNew
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loco::{BitString, LocoFormat};

    fn loco(road: u64, lane: LaneDirection, pl: f64) -> LocoAddress {
        LocoFormat::default()
            .encode(BitString::new(road, 8).unwrap(), lane, pl, 10_000.0)
            .unwrap()
    }

    fn inc(pl: f64) -> LocoAddress {
        loco(1, LaneDirection::Increasing, pl)
    }

    #[test]
    fn broadcast_membership_predicate() {
        let mut n = ClusterNode::new(0, inc(100.0), 100.0);
        assert_eq!(n.process_loco_broadcast(1, inc(160.0), 1.0), Some(ClusterFlag::Clustered));
        assert_eq!(
            n.process_loco_broadcast(2, loco(1, LaneDirection::Decreasing, 110.0), 1.0),
            Some(ClusterFlag::Candidate)
        );
        assert_eq!(n.process_loco_broadcast(3, inc(250.0), 1.0), Some(ClusterFlag::Candidate));
        assert_eq!(n.entry(1).unwrap().last_heard, 1.0);
        assert_eq!(n.table().len(), 3);
    }

    #[test]
    fn boundary_distance_equal_to_mad_is_clustered() {
        let mut n = ClusterNode::new(0, inc(100.0), 100.0);
        assert_eq!(n.process_loco_broadcast(1, inc(200.0), 0.0), Some(ClusterFlag::Clustered));
    }

    #[test]
    fn upsert_keeps_one_entry_per_sender() {
        let mut n = ClusterNode::new(0, inc(100.0), 100.0);
        n.process_loco_broadcast(1, inc(150.0), 1.0);
        assert_eq!(n.process_loco_broadcast(1, inc(300.0), 2.0), Some(ClusterFlag::Candidate));
        assert_eq!(n.table().len(), 1);
        assert_eq!(n.entry(1).unwrap().flag, ClusterFlag::Candidate);
    }

    #[test]
    fn malformed_loco_is_counted() {
        let mut n = ClusterNode::new(0, inc(0.0), 100.0);
        let odd = LocoFormat::new(4)
            .unwrap()
            .encode(BitString::new(1, 4).unwrap(), LaneDirection::Increasing, 0.0, 10.0)
            .unwrap();
        assert_eq!(n.process_loco_broadcast(1, odd, 0.0), None);
        assert_eq!(n.malformed_count(), 1);
        assert!(n.table().is_empty());
    }

    #[test]
    fn head_selection_examples() {
        let mut alone = ClusterNode::new(0, inc(50.0), 100.0);
        assert!(alone.select_cluster_head());

        let mut front = ClusterNode::new(0, inc(200.0), 100.0);
        front.process_loco_broadcast(1, inc(150.0), 0.0);
        assert!(front.select_cluster_head());

        let mut rear = ClusterNode::new(1, inc(150.0), 100.0);
        rear.process_loco_broadcast(0, inc(200.0), 0.0);
        assert!(!rear.select_cluster_head());
    }

    #[test]
    fn head_selection_is_direction_aware() {
        let dec = |pl| loco(1, LaneDirection::Decreasing, pl);
        let mut n = ClusterNode::new(0, dec(150.0), 100.0);
        n.process_loco_broadcast(1, dec(200.0), 0.0);
        assert!(n.select_cluster_head(), "smaller PL is in front on a decreasing lane");
        n.process_loco_broadcast(2, dec(120.0), 0.0);
        assert!(!n.select_cluster_head());
    }

    #[test]
    fn equal_location_tie_goes_to_lower_id() {
        let mut low = ClusterNode::new(3, inc(150.0), 100.0);
        low.process_loco_broadcast(7, inc(150.0), 0.0);
        let mut high = ClusterNode::new(7, inc(150.0), 100.0);
        high.process_loco_broadcast(3, inc(150.0), 0.0);
        assert!(low.select_cluster_head());
        assert!(!high.select_cluster_head());
    }

    #[test]
    fn candidates_do_not_affect_head_selection() {
        let mut n = ClusterNode::new(0, inc(100.0), 100.0);
        n.process_loco_broadcast(1, inc(250.0), 0.0);
        n.process_loco_broadcast(2, loco(2, LaneDirection::Increasing, 120.0), 0.0);
        assert!(n.select_cluster_head());
    }

    #[test]
    fn refresh_adopts_front_cluster_id() {
        let mut n = ClusterNode::new(5, inc(100.0), 100.0);
        n.process_loco_broadcast(9, inc(150.0), 0.0);
        n.record_advertisement(9, Some(2), false);
        n.process_loco_broadcast(4, inc(50.0), 0.0);
        n.record_advertisement(4, Some(5), false);
        assert_eq!(n.refresh(), Some(ClusterEventKind::ClusterChanged));
        assert_eq!(n.cluster_id(), Some(2));
        assert!(!n.is_ch());
        assert_eq!(n.view().members, BTreeSet::from([4, 9]));
    }

    #[test]
    fn ch_leave_examples() {
        let ch = inc(500.0);
        let replies = vec![(1, inc(470.0)), (2, inc(490.0)), (3, inc(445.0))];
        assert_eq!(handle_ch_leave(&ch, &replies), Some(2));
        assert_eq!(handle_ch_leave(&ch, &[(4, inc(400.0))]), Some(4));
        assert_eq!(handle_ch_leave(&ch, &[(8, inc(480.0)), (6, inc(480.0))]), Some(6));
        assert_eq!(handle_ch_leave(&ch, &[(8, inc(480.0)), (6, inc(520.0))]), Some(6));
        assert_eq!(handle_ch_leave(&ch, &[]), None);
    }

    #[test]
    fn join_examples() {
        let me = inc(300.0);
        let a = JoinReply { node_id: 1, loco: inc(380.0), cluster_id: 10 };
        let b = JoinReply { node_id: 2, loco: inc(260.0), cluster_id: 20 };
        assert_eq!(handle_join_request(&me, 100.0, &[a.clone(), b.clone()]), Some(20));
        assert_eq!(handle_join_request(&me, 100.0, std::slice::from_ref(&a)), Some(10));
        let other_lane = JoinReply { node_id: 3, loco: loco(1, LaneDirection::Decreasing, 300.0), cluster_id: 30 };
        let other_road = JoinReply { node_id: 4, loco: loco(2, LaneDirection::Increasing, 300.0), cluster_id: 40 };
        assert_eq!(handle_join_request(&me, 100.0, &[other_lane, other_road]), None);
        let far = JoinReply { node_id: 5, loco: inc(450.0), cluster_id: 50 };
        assert_eq!(handle_join_request(&me, 100.0, &[far]), None);
    }

    #[test]
    fn join_installs_sender_as_member() {
        let mut n = ClusterNode::new(0, inc(300.0), 100.0);
        let r = JoinReply { node_id: 1, loco: inc(350.0), cluster_id: 7 };
        assert_eq!(n.join_from_replies(&[r], 4.0), Some(7));
        assert_eq!(n.cluster_id(), Some(7));
        assert_eq!(n.entry(1).unwrap().flag, ClusterFlag::Clustered);
        assert!(!n.is_ch());
    }

    #[test]
    fn link_failure_examples() {
        let mut one = ClusterNode::new(0, inc(300.0), 100.0);
        one.begin_enquiry(10.0, 0.5);
        one.record_enquiry_reply(JoinReply { node_id: 4, loco: inc(340.0), cluster_id: 4 });
        assert_eq!(one.handle_link_failure(10.2), LinkFailureAction::StillWaiting);
        assert_eq!(one.handle_link_failure(10.5), LinkFailureAction::JoinedExisting(4));

        let mut two = ClusterNode::new(0, inc(300.0), 100.0);
        two.begin_enquiry(0.0, 0.5);
        two.record_enquiry_reply(JoinReply { node_id: 4, loco: inc(370.0), cluster_id: 4 });
        two.record_enquiry_reply(JoinReply { node_id: 9, loco: inc(280.0), cluster_id: 9 });
        assert_eq!(two.handle_link_failure(1.0), LinkFailureAction::JoinedExisting(9));

        let mut none = ClusterNode::new(0, inc(300.0), 100.0);
        none.process_loco_broadcast(3, inc(900.0), 0.0);
        none.begin_enquiry(0.0, 0.5);
        assert_eq!(none.handle_link_failure(0.6), LinkFailureAction::FormedNew);
        assert!(none.is_ch());
        assert_eq!(none.cluster_id(), Some(0));
        assert!(none.table().is_empty());
    }

    #[test]
    fn link_failure_without_enquiry_waits() {
        let mut n = ClusterNode::new(0, inc(0.0), 100.0);
        assert_eq!(n.handle_link_failure(100.0), LinkFailureAction::StillWaiting);
    }

    #[test]
    fn expiry_examples() {
        let mut empty = ClusterNode::new(0, inc(0.0), 100.0);
        assert!(empty.expire_stale_entries(10.0, 3.0).is_empty());

        let mut n = ClusterNode::new(0, inc(100.0), 100.0);
        n.process_loco_broadcast(1, inc(150.0), 0.0);
        n.process_loco_broadcast(2, inc(50.0), 8.0);
        n.refresh();
        assert!(!n.is_ch());
        assert_eq!(n.expire_stale_entries(9.0, 3.0), vec![1]);
        assert!(n.is_ch(), "losing the front member triggers re-election");
        assert_eq!(n.cluster_id(), Some(0));

        let before = n.table().clone();
        assert!(n.expire_stale_entries(10.0, 3.0).is_empty());
        assert_eq!(n.table(), &before);
    }

    #[test]
    fn log_row_format() {
        let r = ClusterLogRecord { time: 1.5, node: 3, event: ClusterEventKind::BecameHead, cluster_id: Some(3), is_ch: true };
        assert_eq!(r.csv_row(), "1.5,3,became_head,3,true");
        let r = ClusterLogRecord { time: 2.0, node: 4, event: ClusterEventKind::Left, cluster_id: None, is_ch: false };
        assert_eq!(r.csv_row(), "2,4,left,,false");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn head_rule_is_translation_invariant(
                pls in proptest::collection::vec(0u32..2000, 1..8),
                shift in 0u32..5000,
                dec in any::<bool>(),
            ) {
                let lane = if dec { LaneDirection::Decreasing } else { LaneDirection::Increasing };
                let eval = |offset: u32| {
                    let mut n = ClusterNode::new(0, loco(1, lane, (pls[0] + offset) as f64), 3000.0);
                    for (i, pl) in pls.iter().enumerate().skip(1) {
                        n.process_loco_broadcast(i as NodeId, loco(1, lane, (pl + offset) as f64), 0.0);
                    }
                    n.select_cluster_head()
                };
                prop_assert_eq!(eval(0), eval(shift));
            }
        }
    }
}

//! ACR: clustering on LOCO addresses with proactive intra-cluster routing
//! and reactive discovery among cluster heads.
//!
//! Every vehicle broadcasts a hello carrying its LOCO, its cluster state and
//! an intra-cluster distance vector. Data for a destination inside the
//! sender's cluster follows that vector. Anything else goes to the CH, which
//! floods a route request among CHs only; the reply sets up a CH chain. A
//! data frame carries its cluster scope and is dropped by any receiver
//! outside it.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::aodv::{RouteReply, RouteRequest};
use super::rsu::{Advisory, ReportOutcome, RoadReport, RsuStore};
use super::{
    split_token, timer_token, ClusterSnapshot, Counter, Ctx, DataPacket, MobilityUpdate, OnDemandTable, Protocol,
    ProtocolKind, ProtocolParams, RsuSite,
};
use crate::cluster::{
    eligible, handle_ch_leave, ClusterEventKind, ClusterLogRecord, ClusterNode, JoinReply, LinkFailureAction, NodeId,
};
use crate::loco::LocoAddress;
use crate::netsim::{Message, MessageKind};

const TIMER_HELLO: u8 = 1;
const TIMER_JOIN: u8 = 2;
const TIMER_ENQUIRY: u8 = 3;
const TIMER_LEAVE: u8 = 4;
const TIMER_DISCOVERY: u8 = 5;

const MAX_INTRA_HOPS: u8 = 8;
const MAX_DATA_HOPS: u8 = 32;
const QUEUE_LIMIT: usize = 64;
const SEEN_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Hello {
    pub loco: LocoAddress,
    pub cluster_id: Option<NodeId>,
    pub is_ch: bool,
    /// Time of the freshest cluster-head update the sender knows of.
    pub ch_stamp: f64,
    /// Intra-cluster distance vector: (member, hops, next hop).
    pub routes: Vec<(NodeId, u8, NodeId)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Intra-cluster leg; only members of this cluster may relay it.
    Cluster(NodeId),
    /// CH-to-CH leg; only cluster heads (and bridging RSUs) may relay it.
    Backbone,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcrData {
    pub packet: DataPacket,
    pub scope: Scope,
    /// Where the current intra-cluster leg ends: the destination or the CH.
    pub target: NodeId,
    pub hops: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AcrMsg {
    Hello(Hello),
    JoinReq { loco: LocoAddress },
    JoinReply(JoinReply),
    Enquiry { loco: LocoAddress },
    EnquiryReply(JoinReply),
    ChLeave { loco: LocoAddress },
    LeaveReply { loco: LocoAddress },
    ChAssign { old_ch: NodeId, new_ch: NodeId },
    Rreq(RouteRequest),
    Rrep(RouteReply),
    Rerr(Vec<(NodeId, u32)>),
    Data(AcrData),
    Report(RoadReport),
    Advisory(Advisory),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntraRoute {
    pub next_hop: NodeId,
    pub hops: u8,
    pub heard_at: f64,
}

#[derive(Debug, Clone)]
struct Discovery {
    generation: u32,
    retries_left: u32,
    queue: Vec<DataPacket>,
}

/// Reactive CH-level routing state.
#[derive(Debug, Clone, Default)]
pub struct Backbone {
    seq: u32,
    rreq_id: u32,
    generation: u32,
    table: OnDemandTable,
    seen: BTreeMap<(NodeId, u32), f64>,
    pending: BTreeMap<NodeId, Discovery>,
}

impl Backbone {
    pub fn table(&self) -> &OnDemandTable {
        &self.table
    }

    fn remember(&mut self, origin: NodeId, rreq_id: u32, now: f64, horizon: f64) -> bool {
        if self.seen.contains_key(&(origin, rreq_id)) {
            return false;
        }
        if self.seen.len() >= SEEN_LIMIT {
            self.seen.retain(|_, t| *t >= now - horizon);
        }
        self.seen.insert((origin, rreq_id), now);
        true
    }

    /// Forgets routes and pending discoveries; returns how many queued packets were lost.
    fn clear(&mut self) -> usize {
        self.table.clear();
        let lost = self.pending.values().map(|d| d.queue.len()).sum();
        self.pending.clear();
        lost
    }
}

/// A node that takes part in CH-level discovery and forwarding.
trait BackboneNode {
    fn node_id(&self) -> NodeId;
    fn params(&self) -> &ProtocolParams;
    fn backbone(&mut self) -> &mut Backbone;
    /// Whether this node currently relays backbone traffic.
    fn relays(&self) -> bool;
    /// Whether `dst` is reachable inside this node's own cluster.
    fn owns(&self, dst: NodeId) -> bool;
    fn transmit(&mut self, ctx: &mut Ctx<'_, AcrMsg>, next: NodeId, kind: MessageKind, msg: AcrMsg) -> bool;
    fn flood(&mut self, ctx: &mut Ctx<'_, AcrMsg>, kind: MessageKind, msg: AcrMsg);
    /// Hands a packet that reached its destination cluster to intra-cluster routing.
    fn deliver_local(&mut self, ctx: &mut Ctx<'_, AcrMsg>, packet: DataPacket, hops: u8);

    fn discovery_horizon(&self) -> f64 {
        self.params().discovery_timeout * f64::from(self.params().discovery_retries + 1)
    }

    fn backbone_link_break(&mut self, ctx: &mut Ctx<'_, AcrMsg>, next: NodeId) {
        ctx.count(Counter::LinkBreak);
        let lost = self.backbone().table.invalidate_via(next);
        if !lost.is_empty() {
            self.flood(ctx, MessageKind::RouteError, AcrMsg::Rerr(lost));
        }
    }

    fn broadcast_rreq(&mut self, ctx: &mut Ctx<'_, AcrMsg>, dest: NodeId) {
        let id = self.node_id();
        let now = ctx.now();
        let horizon = self.discovery_horizon();
        let bb = self.backbone();
        bb.seq += 1;
        bb.rreq_id += 1;
        let rreq_id = bb.rreq_id;
        bb.remember(id, rreq_id, now, horizon);
        let rreq = RouteRequest {
            origin: id,
            rreq_id,
            origin_seq: bb.seq,
            dest,
            dest_seq: bb.table.get(dest).map(|e| e.dest_seq),
            hop_count: 0,
        };
        self.flood(ctx, MessageKind::RouteRequest, AcrMsg::Rreq(rreq));
    }

    fn start_discovery(&mut self, ctx: &mut Ctx<'_, AcrMsg>, packet: DataPacket) {
        let retries = self.params().discovery_retries;
        let timeout = self.params().discovery_timeout;
        let bb = self.backbone();
        if let Some(d) = bb.pending.get_mut(&packet.dst) {
            if d.queue.len() >= QUEUE_LIMIT {
                ctx.count(Counter::QueueOverflow);
            } else {
                d.queue.push(packet);
            }
            return;
        }
        ctx.route_attempt(&packet);
        bb.generation += 1;
        let generation = bb.generation;
        bb.pending.insert(packet.dst, Discovery { generation, retries_left: retries, queue: vec![packet] });
        self.broadcast_rreq(ctx, packet.dst);
        ctx.set_timer(timeout, timer_token(TIMER_DISCOVERY, generation, packet.dst));
    }

    /// Sends a packet along the CH chain. `originating` marks the CH of
    /// the source cluster, which may start a discovery.
    fn backbone_send(&mut self, ctx: &mut Ctx<'_, AcrMsg>, packet: DataPacket, hops: u8, originating: bool) {
        let now = ctx.now();
        let lifetime = self.params().route_lifetime;
        let next = self.backbone().table.active(packet.dst, now).map(|e| e.next_hop);
        let Some(next) = next else {
            if originating {
                self.start_discovery(ctx, packet);
            } else {
                ctx.count(Counter::NoRoute);
                let seq = self.backbone().table.get(packet.dst).map_or(0, |e| e.dest_seq);
                self.flood(ctx, MessageKind::RouteError, AcrMsg::Rerr(vec![(packet.dst, seq)]));
            }
            return;
        };
        if hops >= MAX_DATA_HOPS {
            ctx.count(Counter::NoRoute);
            return;
        }
        let data = AcrData { packet, scope: Scope::Backbone, target: next, hops: hops + 1 };
        if self.transmit(ctx, next, MessageKind::Data, AcrMsg::Data(data)) {
            let bb = self.backbone();
            bb.table.refresh(packet.dst, now, lifetime);
            bb.table.refresh(next, now, lifetime);
        } else {
            self.backbone_link_break(ctx, next);
            if originating {
                self.start_discovery(ctx, packet);
            }
        }
    }

    /// A data frame on a CH-to-CH leg reached this node.
    fn backbone_receive(&mut self, ctx: &mut Ctx<'_, AcrMsg>, data: &AcrData) {
        let packet = data.packet;
        if packet.dst == self.node_id() {
            ctx.deliver_data(&packet);
        } else if self.owns(packet.dst) {
            self.deliver_local(ctx, packet, data.hops);
        } else {
            self.backbone_send(ctx, packet, data.hops, false);
        }
    }

    fn backbone_rreq(&mut self, ctx: &mut Ctx<'_, AcrMsg>, from: NodeId, rreq: &RouteRequest) {
        let id = self.node_id();
        if !self.relays() || rreq.origin == id {
            return;
        }
        let now = ctx.now();
        let horizon = self.discovery_horizon();
        let lifetime = self.params().route_lifetime;
        if !self.backbone().remember(rreq.origin, rreq.rreq_id, now, horizon) {
            ctx.count(Counter::DuplicateRequest);
            return;
        }
        let bb = self.backbone();
        bb.table.touch_neighbor(from, now, lifetime);
        bb.table.update(rreq.origin, from, rreq.hop_count + 1, rreq.origin_seq, now, lifetime);
        if self.owns(rreq.dest) || rreq.dest == id {
            let bb = self.backbone();
            bb.seq = bb.seq.max(rreq.dest_seq.unwrap_or(0)) + 1;
            let rrep = RouteReply { origin: rreq.origin, dest: rreq.dest, dest_seq: bb.seq, hop_count: 0 };
            if !self.transmit(ctx, from, MessageKind::RouteReply, AcrMsg::Rrep(rrep)) {
                self.backbone_link_break(ctx, from);
            }
            return;
        }
        let cached = self
            .backbone()
            .table
            .active(rreq.dest, now)
            .filter(|e| e.next_hop != from && rreq.dest_seq.is_none_or(|ds| e.dest_seq >= ds))
            .map(|e| (e.next_hop, e.hop_count, e.dest_seq));
        if let Some((next, hops, seq)) = cached {
            let bb = self.backbone();
            bb.table.add_precursor(rreq.dest, from);
            bb.table.add_precursor(rreq.origin, next);
            let rrep = RouteReply { origin: rreq.origin, dest: rreq.dest, dest_seq: seq, hop_count: hops };
            if !self.transmit(ctx, from, MessageKind::RouteReply, AcrMsg::Rrep(rrep)) {
                self.backbone_link_break(ctx, from);
            }
            return;
        }
        let known = self.backbone().table.get(rreq.dest).map(|e| e.dest_seq);
        let relay = RouteRequest { hop_count: rreq.hop_count + 1, dest_seq: rreq.dest_seq.max(known), ..rreq.clone() };
        self.flood(ctx, MessageKind::RouteRequest, AcrMsg::Rreq(relay));
    }

    fn backbone_rrep(&mut self, ctx: &mut Ctx<'_, AcrMsg>, from: NodeId, rrep: &RouteReply) {
        if !self.relays() {
            return;
        }
        let id = self.node_id();
        let now = ctx.now();
        let lifetime = self.params().route_lifetime;
        let bb = self.backbone();
        bb.table.touch_neighbor(from, now, lifetime);
        bb.table.update(rrep.dest, from, rrep.hop_count + 1, rrep.dest_seq, now, lifetime);
        if rrep.origin == id {
            if let Some(d) = self.backbone().pending.remove(&rrep.dest) {
                for p in d.queue {
                    self.backbone_send(ctx, p, 0, true);
                }
            }
            return;
        }
        let Some(back) = self.backbone().table.active(rrep.origin, now).map(|e| e.next_hop) else {
            ctx.count(Counter::NoRoute);
            return;
        };
        self.backbone().table.add_precursor(rrep.dest, back);
        let relay = RouteReply { hop_count: rrep.hop_count + 1, ..rrep.clone() };
        if !self.transmit(ctx, back, MessageKind::RouteReply, AcrMsg::Rrep(relay)) {
            self.backbone_link_break(ctx, back);
        }
    }

    fn backbone_rerr(&mut self, ctx: &mut Ctx<'_, AcrMsg>, from: NodeId, list: &[(NodeId, u32)]) {
        if !self.relays() {
            return;
        }
        let lost = self.backbone().table.invalidate_reported(from, list);
        if !lost.is_empty() {
            self.flood(ctx, MessageKind::RouteError, AcrMsg::Rerr(lost));
        }
    }

    fn backbone_timeout(&mut self, ctx: &mut Ctx<'_, AcrMsg>, generation: u32, dest: NodeId) {
        let timeout = self.params().discovery_timeout;
        let bb = self.backbone();
        let Some(d) = bb.pending.get_mut(&dest) else { return };
        if d.generation != generation {
            return;
        }
        if d.retries_left > 0 {
            d.retries_left -= 1;
            bb.generation += 1;
            d.generation = bb.generation;
            let g = bb.generation;
            self.broadcast_rreq(ctx, dest);
            ctx.set_timer(timeout, timer_token(TIMER_DISCOVERY, g, dest));
        } else {
            bb.pending.remove(&dest);
            ctx.count(Counter::DiscoveryFailure);
        }
    }
}

#[derive(Debug, Clone)]
struct PendingReplies<T> {
    generation: u32,
    replies: Vec<T>,
}

/// ACR state of one vehicle.
#[derive(Debug, Clone)]
pub struct AcrVehicle {
    id: NodeId,
    params: ProtocolParams,
    cluster: ClusterNode,
    intra: BTreeMap<NodeId, IntraRoute>,
    ch_stamp: f64,
    log: Vec<ClusterLogRecord>,
    /// Destinations with a recent intra-cluster first delivery attempt.
    flows: BTreeMap<NodeId, f64>,
    /// Packets generated while unclustered, with their give-up time.
    waiting: Vec<(DataPacket, f64)>,
    join: Option<PendingReplies<JoinReply>>,
    leave: Option<PendingReplies<(NodeId, LocoAddress)>>,
    enquiry_generation: u32,
    generation: u32,
    departing: bool,
    backbone: Backbone,
}

impl AcrVehicle {
    pub fn cluster(&self) -> &ClusterNode {
        &self.cluster
    }

    pub fn intra_routes(&self) -> &BTreeMap<NodeId, IntraRoute> {
        &self.intra
    }

    pub fn cluster_log(&self) -> &[ClusterLogRecord] {
        &self.log
    }

    pub fn backbone_table(&self) -> &OnDemandTable {
        &self.backbone.table
    }

    fn next_generation(&mut self) -> u32 {
        self.generation += 1;
        self.generation
    }

    fn record(&mut self, now: f64, event: ClusterEventKind) {
        self.log.push(ClusterLogRecord {
            time: now,
            node: self.id,
            event,
            cluster_id: self.cluster.cluster_id(),
            is_ch: self.cluster.is_ch(),
        });
    }

    /// Bookkeeping after any change of cluster state.
    fn after_transition(&mut self, ctx: &mut Ctx<'_, AcrMsg>, before: (Option<NodeId>, bool), event: Option<ClusterEventKind>) {
        let now = ctx.now();
        let after = (self.cluster.cluster_id(), self.cluster.is_ch());
        if before.0 != after.0 {
            self.intra.clear();
            self.flows.clear();
            self.ch_stamp = now;
        }
        if before.1 && !after.1 {
            for _ in 0..self.backbone.clear() {
                ctx.count(Counter::NoRoute);
            }
        }
        if after.1 {
            self.ch_stamp = now;
        }
        if let Some(ev) = event {
            self.record(now, ev);
        }
    }

    fn refresh(&mut self, ctx: &mut Ctx<'_, AcrMsg>) {
        let before = (self.cluster.cluster_id(), self.cluster.is_ch());
        let ev = self.cluster.refresh();
        self.after_transition(ctx, before, ev);
    }

    fn hops_to_ch(&self) -> f64 {
        self.cluster
            .cluster_id()
            .and_then(|c| self.intra.get(&c))
            .map_or(0.0, |r| f64::from(r.hops))
    }

    fn ch_silent_for(&self, now: f64, window: f64) -> bool {
        self.cluster.is_clustered()
            && !self.cluster.is_ch()
            && !self.cluster.enquiry_pending()
            && now - self.ch_stamp > window + self.hops_to_ch() * self.params.hello_interval
    }

    fn hello(&self) -> Hello {
        let routes = self.intra.iter().map(|(m, r)| (*m, r.hops, r.next_hop)).collect();
        Hello {
            loco: *self.cluster.loco(),
            cluster_id: self.cluster.cluster_id(),
            is_ch: self.cluster.is_ch(),
            ch_stamp: self.ch_stamp,
            routes,
        }
    }

    fn on_hello_timer(&mut self, ctx: &mut Ctx<'_, AcrMsg>) {
        let now = ctx.now();
        ctx.set_timer(self.params.hello_interval, timer_token(TIMER_HELLO, 0, self.id));
        if self.departing {
            return;
        }
        let ttl = self.params.entry_ttl;
        self.intra.retain(|_, r| now - r.heard_at <= ttl);
        self.cluster.expire_stale_entries(now, ttl);
        self.refresh(ctx);
        if self.cluster.is_ch() {
            self.ch_stamp = now;
        }
        if self.params.use_ttl_fallback && self.ch_silent_for(now, ttl) {
            self.start_enquiry(ctx);
        }
        self.flush_waiting(ctx);
        ctx.broadcast(MessageKind::Hello, AcrMsg::Hello(self.hello()));
    }

    fn on_hello(&mut self, ctx: &mut Ctx<'_, AcrMsg>, from: NodeId, hello: &Hello) {
        if self.departing {
            return;
        }
        let now = ctx.now();
        if self.cluster.process_loco_broadcast(from, hello.loco, now).is_none() {
            ctx.count(Counter::MalformedLoco);
            return;
        }
        self.cluster.record_advertisement(from, hello.cluster_id, hello.is_ch);
        self.refresh(ctx);
        let mine = self.cluster.cluster_id();
        if mine.is_none() || hello.cluster_id != mine {
            self.intra.retain(|m, r| *m != from && r.next_hop != from);
            return;
        }
        self.intra.insert(from, IntraRoute { next_hop: from, hops: 1, heard_at: now });
        for &(member, hops, next) in &hello.routes {
            if member == self.id || next == self.id || hops >= MAX_INTRA_HOPS {
                continue;
            }
            let offered = IntraRoute { next_hop: from, hops: hops + 1, heard_at: now };
            match self.intra.get(&member) {
                Some(r) if r.next_hop != from && r.hops <= offered.hops => {}
                _ => {
                    self.intra.insert(member, offered);
                }
            }
        }
        self.ch_stamp = self.ch_stamp.max(hello.ch_stamp);
        self.flush_waiting(ctx);
    }

    fn start_enquiry(&mut self, ctx: &mut Ctx<'_, AcrMsg>) {
        let now = ctx.now();
        ctx.count(Counter::Enquiry);
        self.cluster.begin_enquiry(now, self.params.enquiry_timeout);
        self.enquiry_generation = self.next_generation();
        ctx.broadcast(MessageKind::Enquiry, AcrMsg::Enquiry { loco: *self.cluster.loco() });
        ctx.set_timer(self.params.enquiry_timeout, timer_token(TIMER_ENQUIRY, self.enquiry_generation, self.id));
    }

    fn on_enquiry_timer(&mut self, ctx: &mut Ctx<'_, AcrMsg>, generation: u32) {
        if generation != self.enquiry_generation {
            return;
        }
        let before = (self.cluster.cluster_id(), self.cluster.is_ch());
        let action = self.cluster.handle_link_failure(ctx.now());
        let ev = match action {
            LinkFailureAction::JoinedExisting(_) => Some(ClusterEventKind::Joined),
            LinkFailureAction::FormedNew => Some(ClusterEventKind::FormedNew),
            LinkFailureAction::StillWaiting => None,
        };
        if ev.is_some() {
            self.intra.clear();
            self.after_transition(ctx, before, ev);
            self.ch_stamp = ctx.now();
        }
    }

    fn start_join(&mut self, ctx: &mut Ctx<'_, AcrMsg>) {
        let generation = self.next_generation();
        self.join = Some(PendingReplies { generation, replies: Vec::new() });
        ctx.broadcast(MessageKind::JoinReq, AcrMsg::JoinReq { loco: *self.cluster.loco() });
        ctx.set_timer(self.params.join_timeout, timer_token(TIMER_JOIN, generation, self.id));
    }

    fn on_join_timer(&mut self, ctx: &mut Ctx<'_, AcrMsg>, generation: u32) {
        let Some(join) = self.join.take_if(|j| j.generation == generation) else { return };
        if self.cluster.is_clustered() || self.departing {
            return;
        }
        let before = (self.cluster.cluster_id(), self.cluster.is_ch());
        if self.cluster.join_from_replies(&join.replies, ctx.now()).is_some() {
            ctx.count(Counter::Join);
            self.after_transition(ctx, before, Some(ClusterEventKind::Joined));
        }
    }

    fn start_leave(&mut self, ctx: &mut Ctx<'_, AcrMsg>) {
        self.departing = true;
        if !self.cluster.is_ch() || self.cluster.view().members.is_empty() {
            self.leave_cluster(ctx);
            return;
        }
        let generation = self.next_generation();
        self.leave = Some(PendingReplies { generation, replies: Vec::new() });
        ctx.broadcast(MessageKind::ChLeave, AcrMsg::ChLeave { loco: *self.cluster.loco() });
        ctx.set_timer(self.params.leave_timeout, timer_token(TIMER_LEAVE, generation, self.id));
    }

    fn on_leave_timer(&mut self, ctx: &mut Ctx<'_, AcrMsg>, generation: u32) {
        let Some(leave) = self.leave.take_if(|l| l.generation == generation) else { return };
        if let Some(new_ch) = handle_ch_leave(self.cluster.loco(), &leave.replies) {
            ctx.count(Counter::ChLeave);
            ctx.broadcast(MessageKind::ChAssign, AcrMsg::ChAssign { old_ch: self.id, new_ch });
        }
        self.leave_cluster(ctx);
    }

    fn leave_cluster(&mut self, ctx: &mut Ctx<'_, AcrMsg>) {
        let before = (self.cluster.cluster_id(), self.cluster.is_ch());
        self.cluster.reset();
        let ev = before.0.is_some().then_some(ClusterEventKind::Left);
        self.after_transition(ctx, before, ev);
    }

    fn on_ch_assign(&mut self, ctx: &mut Ctx<'_, AcrMsg>, old_ch: NodeId, new_ch: NodeId) {
        if self.cluster.cluster_id() != Some(old_ch) || self.departing {
            return;
        }
        self.cluster.remove_entry(old_ch);
        self.intra.retain(|m, r| *m != old_ch && r.next_hop != old_ch);
        if self.id == new_ch {
            self.cluster.select_cluster_head();
        }
        self.refresh(ctx);
        self.ch_stamp = ctx.now();
    }

    fn on_mobility_update(&mut self, ctx: &mut Ctx<'_, AcrMsg>, update: &MobilityUpdate) {
        self.cluster.set_loco(update.loco);
        let now = ctx.now();
        if update.wrapped {
            self.departing = false;
            self.leave = None;
            self.leave_cluster(ctx);
            self.start_join(ctx);
            return;
        }
        if self.departing {
            return;
        }
        if self.cluster.is_ch() && update.time_to_road_end <= self.params.ch_leave_horizon {
            self.start_leave(ctx);
            return;
        }
        if update.passed_rsus.is_empty() {
            return;
        }
        if self.cluster.is_ch() {
            let report = RoadReport {
                reporter: self.id,
                is_ch: true,
                road_id: update.loco.road_id,
                lane: update.loco.lane_direction,
                time: now,
                cluster_size: self.cluster.view().members.len() + 1,
            };
            for &rsu in &update.passed_rsus {
                ctx.unicast(rsu, MessageKind::RsuReport, AcrMsg::Report(report.clone()));
            }
        } else if self.params.use_rsu_pass_rule && self.ch_silent_for(now, self.params.rsu_silence_window) {
            self.start_enquiry(ctx);
        }
    }

    fn flush_waiting(&mut self, ctx: &mut Ctx<'_, AcrMsg>) {
        if self.waiting.is_empty() {
            return;
        }
        let now = ctx.now();
        let waiting = std::mem::take(&mut self.waiting);
        for (p, deadline) in waiting {
            if self.cluster.is_clustered() {
                self.route_from_source(ctx, p);
            } else if now > deadline {
                ctx.count(Counter::DiscoveryFailure);
            } else {
                self.waiting.push((p, deadline));
            }
        }
    }

    fn route_from_source(&mut self, ctx: &mut Ctx<'_, AcrMsg>, packet: DataPacket) {
        let Some(cluster) = self.cluster.cluster_id() else {
            let deadline = ctx.now() + self.params.discovery_timeout * f64::from(self.params.discovery_retries + 1);
            ctx.route_attempt(&packet);
            if self.waiting.len() >= QUEUE_LIMIT {
                ctx.count(Counter::QueueOverflow);
            } else {
                self.waiting.push((packet, deadline));
            }
            return;
        };
        let now = ctx.now();
        if self.intra.contains_key(&packet.dst) {
            if self.flows.get(&packet.dst).is_none_or(|t| *t <= now) {
                ctx.route_attempt(&packet);
                self.flows.insert(packet.dst, now + self.params.route_lifetime);
            }
            self.intra_send(ctx, packet, cluster, packet.dst, 0);
        } else if self.cluster.is_ch() {
            self.backbone_send(ctx, packet, 0, true);
        } else {
            self.intra_send(ctx, packet, cluster, cluster, 0);
        }
    }

    fn intra_send(&mut self, ctx: &mut Ctx<'_, AcrMsg>, packet: DataPacket, cluster: NodeId, target: NodeId, hops: u8) {
        if self.cluster.cluster_id() != Some(cluster) {
            ctx.count(Counter::DropRuleViolation);
            return;
        }
        let Some(next) = self.intra.get(&target).map(|r| r.next_hop) else {
            ctx.count(Counter::NoRoute);
            return;
        };
        if hops >= MAX_DATA_HOPS {
            ctx.count(Counter::NoRoute);
            return;
        }
        let data = AcrData { packet, scope: Scope::Cluster(cluster), target, hops: hops + 1 };
        if !ctx.unicast_with_retries(next, MessageKind::Data, AcrMsg::Data(data), self.params.link_attempts) {
            ctx.count(Counter::LinkBreak);
            self.intra.retain(|m, r| *m != next && r.next_hop != next);
        }
    }

    fn on_data(&mut self, ctx: &mut Ctx<'_, AcrMsg>, data: &AcrData) {
        let packet = data.packet;
        match data.scope {
            Scope::Cluster(c) => {
                if self.cluster.cluster_id() != Some(c) {
                    ctx.count(Counter::DropRule);
                    return;
                }
                if packet.dst == self.id {
                    ctx.deliver_data(&packet);
                } else if data.target == self.id {
                    if self.intra.contains_key(&packet.dst) {
                        self.intra_send(ctx, packet, c, packet.dst, data.hops);
                    } else if self.cluster.is_ch() {
                        self.backbone_send(ctx, packet, data.hops, true);
                    } else {
                        ctx.count(Counter::NoRoute);
                    }
                } else {
                    self.intra_send(ctx, packet, c, data.target, data.hops);
                }
            }
            Scope::Backbone => {
                if !self.cluster.is_ch() {
                    ctx.count(Counter::DropRule);
                    return;
                }
                self.backbone_receive(ctx, data);
            }
        }
    }

    fn reply_info(&self) -> Option<JoinReply> {
        Some(JoinReply { node_id: self.id, loco: *self.cluster.loco(), cluster_id: self.cluster.cluster_id()? })
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, AcrMsg>, msg: &Message<AcrMsg>) {
        let from = msg.src;
        match msg.payload.as_ref() {
            AcrMsg::Hello(h) => self.on_hello(ctx, from, h),
            AcrMsg::JoinReq { loco } => {
                if self.departing || !eligible(self.cluster.loco(), loco, self.params.mad_m) {
                    return;
                }
                if let Some(r) = self.reply_info() {
                    ctx.unicast(from, MessageKind::JoinReply, AcrMsg::JoinReply(r));
                }
            }
            AcrMsg::JoinReply(r) => {
                if let Some(j) = self.join.as_mut() {
                    j.replies.push(r.clone());
                }
            }
            AcrMsg::Enquiry { loco } => {
                if self.cluster.is_ch() && !self.departing && eligible(self.cluster.loco(), loco, self.params.mad_m) {
                    if let Some(r) = self.reply_info() {
                        ctx.unicast(from, MessageKind::JoinReply, AcrMsg::EnquiryReply(r));
                    }
                }
            }
            AcrMsg::EnquiryReply(r) => self.cluster.record_enquiry_reply(r.clone()),
            AcrMsg::ChLeave { .. } => {
                if self.cluster.cluster_id() == Some(from) && !self.departing {
                    let loco = *self.cluster.loco();
                    ctx.unicast(from, MessageKind::JoinReply, AcrMsg::LeaveReply { loco });
                }
            }
            AcrMsg::LeaveReply { loco } => {
                if let Some(l) = self.leave.as_mut() {
                    l.replies.push((from, *loco));
                }
            }
            AcrMsg::ChAssign { old_ch, new_ch } => self.on_ch_assign(ctx, *old_ch, *new_ch),
            AcrMsg::Rreq(r) => self.backbone_rreq(ctx, from, r),
            AcrMsg::Rrep(r) => self.backbone_rrep(ctx, from, r),
            AcrMsg::Rerr(list) => self.backbone_rerr(ctx, from, list),
            AcrMsg::Data(d) => self.on_data(ctx, d),
            AcrMsg::Report(_) => {}
            AcrMsg::Advisory(_) => ctx.count(Counter::AdvisoryReceived),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, AcrMsg>, token: u64) {
        let (tag, generation, node) = split_token(token);
        match tag {
            TIMER_HELLO => self.on_hello_timer(ctx),
            TIMER_JOIN => self.on_join_timer(ctx, generation),
            TIMER_ENQUIRY => self.on_enquiry_timer(ctx, generation),
            TIMER_LEAVE => self.on_leave_timer(ctx, generation),
            TIMER_DISCOVERY => self.backbone_timeout(ctx, generation, node),
            _ => {}
        }
    }
}

impl BackboneNode for AcrVehicle {
    fn node_id(&self) -> NodeId {
        self.id
    }

    fn params(&self) -> &ProtocolParams {
        &self.params
    }

    fn backbone(&mut self) -> &mut Backbone {
        &mut self.backbone
    }

    fn relays(&self) -> bool {
        self.cluster.is_ch() && !self.departing
    }

    fn owns(&self, dst: NodeId) -> bool {
        self.intra.contains_key(&dst)
    }

    fn transmit(&mut self, ctx: &mut Ctx<'_, AcrMsg>, next: NodeId, kind: MessageKind, msg: AcrMsg) -> bool {
        ctx.unicast_with_retries(next, kind, msg, self.params.link_attempts)
    }

    fn flood(&mut self, ctx: &mut Ctx<'_, AcrMsg>, kind: MessageKind, msg: AcrMsg) {
        ctx.broadcast(kind, msg);
    }

    fn deliver_local(&mut self, ctx: &mut Ctx<'_, AcrMsg>, packet: DataPacket, hops: u8) {
        match self.cluster.cluster_id() {
            Some(c) => self.intra_send(ctx, packet, c, packet.dst, hops),
            None => ctx.count(Counter::NoRoute),
        }
    }
}

/// ACR state of one roadside unit.
#[derive(Debug, Clone)]
pub struct AcrRsu {
    id: NodeId,
    params: ProtocolParams,
    store: RsuStore,
    seen: BTreeMap<NodeId, f64>,
    peers: BTreeSet<NodeId>,
    backbone: Backbone,
}

impl AcrRsu {
    pub fn store(&self) -> &RsuStore {
        &self.store
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, AcrMsg>, msg: &Message<AcrMsg>) {
        let now = ctx.now();
        match msg.payload.as_ref() {
            AcrMsg::Hello(_) => {
                let entering = self.seen.get(&msg.src).is_none_or(|t| now - *t > self.params.entry_ttl);
                self.seen.insert(msg.src, now);
                if entering {
                    if let Some(adv) = self.store.advisory(now) {
                        ctx.unicast(msg.src, MessageKind::RsuAdvisory, AcrMsg::Advisory(adv));
                    }
                }
            }
            AcrMsg::Report(r) => match self.store.accept(r.clone()) {
                ReportOutcome::Accepted => ctx.count(Counter::ReportAccepted),
                ReportOutcome::NotClusterHead => ctx.count(Counter::NonChReport),
            },
            AcrMsg::Rreq(r) => self.backbone_rreq(ctx, msg.src, r),
            AcrMsg::Rrep(r) => self.backbone_rrep(ctx, msg.src, r),
            AcrMsg::Rerr(list) => self.backbone_rerr(ctx, msg.src, list),
            AcrMsg::Data(d) if d.scope == Scope::Backbone && self.relays() => self.backbone_receive(ctx, d),
            AcrMsg::Data(_) => ctx.count(Counter::DropRule),
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, AcrMsg>, token: u64) {
        let (tag, generation, node) = split_token(token);
        if tag == TIMER_DISCOVERY {
            self.backbone_timeout(ctx, generation, node);
        }
    }
}

impl BackboneNode for AcrRsu {
    fn node_id(&self) -> NodeId {
        self.id
    }

    fn params(&self) -> &ProtocolParams {
        &self.params
    }

    fn backbone(&mut self) -> &mut Backbone {
        &mut self.backbone
    }

    fn relays(&self) -> bool {
        self.params.rsu_bridge
    }

    fn owns(&self, _dst: NodeId) -> bool {
        false
    }

    fn transmit(&mut self, ctx: &mut Ctx<'_, AcrMsg>, next: NodeId, kind: MessageKind, msg: AcrMsg) -> bool {
        if self.peers.contains(&next) {
            ctx.wired(next, kind, msg);
            true
        } else {
            ctx.unicast_with_retries(next, kind, msg, self.params.link_attempts)
        }
    }

    fn flood(&mut self, ctx: &mut Ctx<'_, AcrMsg>, kind: MessageKind, msg: AcrMsg) {
        for &peer in &self.peers {
            ctx.wired(peer, kind, msg.clone());
        }
        ctx.broadcast(kind, msg);
    }

    fn deliver_local(&mut self, ctx: &mut Ctx<'_, AcrMsg>, _packet: DataPacket, _hops: u8) {
        ctx.count(Counter::NoRoute);
    }
}

/// An ACR agent: a vehicle or a roadside unit.
#[derive(Debug, Clone)]
pub enum Acr {
    Vehicle(Box<AcrVehicle>),
    Rsu(Box<AcrRsu>),
}

impl Acr {
    pub fn vehicle(&self) -> Option<&AcrVehicle> {
        match self {
            Acr::Vehicle(v) => Some(v),
            Acr::Rsu(_) => None,
        }
    }

    pub fn rsu(&self) -> Option<&AcrRsu> {
        match self {
            Acr::Rsu(r) => Some(r),
            Acr::Vehicle(_) => None,
        }
    }
}

impl Protocol for Acr {
    type Payload = AcrMsg;

    fn kind() -> ProtocolKind {
        ProtocolKind::Acr
    }

    fn new_vehicle(id: NodeId, loco: LocoAddress, params: &ProtocolParams, _rsus: &[RsuSite]) -> Self {
        Acr::Vehicle(Box::new(AcrVehicle {
            id,
            params: params.clone(),
            cluster: ClusterNode::new(id, loco, params.mad_m),
            intra: BTreeMap::new(),
            ch_stamp: 0.0,
            log: Vec::new(),
            flows: BTreeMap::new(),
            waiting: Vec::new(),
            join: None,
            leave: None,
            enquiry_generation: 0,
            generation: 0,
            departing: false,
            backbone: Backbone::default(),
        }))
    }

    fn new_rsu(id: NodeId, site: &RsuSite, params: &ProtocolParams, rsus: &[RsuSite]) -> Option<Self> {
        Some(Acr::Rsu(Box::new(AcrRsu {
            id,
            params: params.clone(),
            store: RsuStore::new(site.clone(), params.rsu_report_ttl),
            seen: BTreeMap::new(),
            peers: rsus.iter().map(|s| s.node_id).filter(|n| *n != id).collect(),
            backbone: Backbone::default(),
        })))
    }

    fn start(&mut self, ctx: &mut Ctx<'_, AcrMsg>) {
        if let Acr::Vehicle(v) = self {
            let offset = ctx.rng().gen_range(0.0..v.params.hello_interval);
            ctx.set_timer(offset, timer_token(TIMER_HELLO, 0, v.id));
            v.start_join(ctx);
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, AcrMsg>, msg: &Message<AcrMsg>) {
        match self {
            Acr::Vehicle(v) => v.on_message(ctx, msg),
            Acr::Rsu(r) => r.on_message(ctx, msg),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, AcrMsg>, token: u64) {
        match self {
            Acr::Vehicle(v) => v.on_timer(ctx, token),
            Acr::Rsu(r) => r.on_timer(ctx, token),
        }
    }

    fn send_data(&mut self, ctx: &mut Ctx<'_, AcrMsg>, packet: DataPacket) {
        if let Acr::Vehicle(v) = self {
            v.route_from_source(ctx, packet);
        }
    }

    fn on_mobility(&mut self, ctx: &mut Ctx<'_, AcrMsg>, update: &MobilityUpdate) {
        if let Acr::Vehicle(v) = self {
            v.on_mobility_update(ctx, update);
        }
    }

    fn cluster_snapshot(&self) -> Option<ClusterSnapshot> {
        let v = self.vehicle()?;
        Some(ClusterSnapshot { cluster_id: v.cluster.cluster_id(), is_ch: v.cluster.is_ch(), loco: *v.cluster.loco() })
    }
}

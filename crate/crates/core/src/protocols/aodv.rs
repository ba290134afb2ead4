//! Simplified AODV: flooded route requests with duplicate suppression,
//! reverse-path replies, destination sequence numbers and route errors.
//! Link breaks are detected by failed unicast delivery.

use std::collections::BTreeMap;

use super::{split_token, timer_token, Counter, Ctx, DataPacket, OnDemandTable, Protocol, ProtocolKind, ProtocolParams, RsuSite};
use crate::cluster::NodeId;
use crate::loco::LocoAddress;
use crate::netsim::{Message, MessageKind};

const TIMER_DISCOVERY: u8 = 1;
const QUEUE_LIMIT: usize = 64;
const SEEN_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct RouteRequest {
    pub origin: NodeId,
    pub rreq_id: u32,
    pub origin_seq: u32,
    pub dest: NodeId,
    /// Last sequence number the origin knew for `dest`, if any.
    pub dest_seq: Option<u32>,
    pub hop_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteReply {
    pub origin: NodeId,
    pub dest: NodeId,
    pub dest_seq: u32,
    pub hop_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AodvMsg {
    Rreq(RouteRequest),
    Rrep(RouteReply),
    Rerr(Vec<(NodeId, u32)>),
    Data(DataPacket),
}

#[derive(Debug, Clone)]
struct Discovery {
    generation: u32,
    retries_left: u32,
    queue: Vec<DataPacket>,
}

#[derive(Debug, Clone)]
pub struct Aodv {
    id: NodeId,
    params: ProtocolParams,
    seq: u32,
    rreq_id: u32,
    generation: u32,
    table: OnDemandTable,
    seen: BTreeMap<(NodeId, u32), f64>,
    pending: BTreeMap<NodeId, Discovery>,
}

impl Aodv {
    pub fn table(&self) -> &OnDemandTable {
        &self.table
    }

    pub fn sequence_number(&self) -> u32 {
        self.seq
    }

    pub fn discovery_pending(&self, dest: NodeId) -> bool {
        self.pending.contains_key(&dest)
    }

    fn lifetime(&self) -> f64 {
        self.params.route_lifetime
    }

    fn remember(&mut self, origin: NodeId, rreq_id: u32, now: f64) -> bool {
        if self.seen.contains_key(&(origin, rreq_id)) {
            return false;
        }
        if self.seen.len() >= SEEN_LIMIT {
            let horizon = now - self.params.discovery_timeout * f64::from(self.params.discovery_retries + 1);
            self.seen.retain(|_, t| *t >= horizon);
        }
        self.seen.insert((origin, rreq_id), now);
        true
    }

    fn broadcast_rreq(&mut self, ctx: &mut Ctx<'_, AodvMsg>, dest: NodeId) {
        self.seq += 1;
        self.rreq_id += 1;
        let now = ctx.now();
        self.remember(self.id, self.rreq_id, now);
        let rreq = RouteRequest {
            origin: self.id,
            rreq_id: self.rreq_id,
            origin_seq: self.seq,
            dest,
            dest_seq: self.table.get(dest).map(|e| e.dest_seq),
            hop_count: 0,
        };
        ctx.broadcast(MessageKind::RouteRequest, AodvMsg::Rreq(rreq));
    }

    fn start_discovery(&mut self, ctx: &mut Ctx<'_, AodvMsg>, packet: DataPacket) {
        if let Some(d) = self.pending.get_mut(&packet.dst) {
            if d.queue.len() >= QUEUE_LIMIT {
                ctx.count(Counter::QueueOverflow);
            } else {
                d.queue.push(packet);
            }
            return;
        }
        ctx.route_attempt(&packet);
        self.generation += 1;
        let d = Discovery { generation: self.generation, retries_left: self.params.discovery_retries, queue: vec![packet] };
        self.pending.insert(packet.dst, d);
        self.broadcast_rreq(ctx, packet.dst);
        ctx.set_timer(self.params.discovery_timeout, timer_token(TIMER_DISCOVERY, self.generation, packet.dst));
    }

    fn link_break(&mut self, ctx: &mut Ctx<'_, AodvMsg>, next_hop: NodeId) {
        ctx.count(Counter::LinkBreak);
        let lost = self.table.invalidate_via(next_hop);
        if !lost.is_empty() {
            ctx.broadcast(MessageKind::RouteError, AodvMsg::Rerr(lost));
        }
    }

    fn forward(&mut self, ctx: &mut Ctx<'_, AodvMsg>, packet: DataPacket, prev_hop: Option<NodeId>) {
        if packet.dst == self.id {
            ctx.deliver_data(&packet);
            return;
        }
        let now = ctx.now();
        let Some(next) = self.table.active(packet.dst, now).map(|e| e.next_hop) else {
            if packet.src == self.id {
                self.start_discovery(ctx, packet);
            } else {
                ctx.count(Counter::NoRoute);
                let seq = self.table.get(packet.dst).map_or(0, |e| e.dest_seq);
                ctx.broadcast(MessageKind::RouteError, AodvMsg::Rerr(vec![(packet.dst, seq)]));
            }
            return;
        };
        if ctx.unicast_with_retries(next, MessageKind::Data, AodvMsg::Data(packet), self.params.link_attempts) {
            let lifetime = self.lifetime();
            self.table.refresh(packet.dst, now, lifetime);
            self.table.refresh(next, now, lifetime);
            if let Some(p) = prev_hop {
                self.table.refresh(packet.src, now, lifetime);
                self.table.refresh(p, now, lifetime);
            }
        } else {
            self.link_break(ctx, next);
            if packet.src == self.id {
                self.start_discovery(ctx, packet);
            }
        }
    }

    fn on_rreq(&mut self, ctx: &mut Ctx<'_, AodvMsg>, from: NodeId, rreq: &RouteRequest) {
        if rreq.origin == self.id {
            return;
        }
        let now = ctx.now();
        if !self.remember(rreq.origin, rreq.rreq_id, now) {
            ctx.count(Counter::DuplicateRequest);
            return;
        }
        let lifetime = self.lifetime();
        self.table.touch_neighbor(from, now, lifetime);
        self.table.update(rreq.origin, from, rreq.hop_count + 1, rreq.origin_seq, now, lifetime);
        if rreq.dest == self.id {
            if let Some(ds) = rreq.dest_seq {
                self.seq = self.seq.max(ds);
            }
            let rrep = RouteReply { origin: rreq.origin, dest: self.id, dest_seq: self.seq, hop_count: 0 };
            if !ctx.unicast_with_retries(from, MessageKind::RouteReply, AodvMsg::Rrep(rrep), self.params.link_attempts) {
                self.link_break(ctx, from);
            }
            return;
        }
        let cached = self
            .table
            .active(rreq.dest, now)
            .filter(|e| e.next_hop != from && rreq.dest_seq.is_none_or(|ds| e.dest_seq >= ds))
            .map(|e| (e.next_hop, e.hop_count, e.dest_seq));
        if let Some((next, hops, seq)) = cached {
            self.table.add_precursor(rreq.dest, from);
            self.table.add_precursor(rreq.origin, next);
            let rrep = RouteReply { origin: rreq.origin, dest: rreq.dest, dest_seq: seq, hop_count: hops };
            if !ctx.unicast_with_retries(from, MessageKind::RouteReply, AodvMsg::Rrep(rrep), self.params.link_attempts) {
                self.link_break(ctx, from);
            }
            return;
        }
        let known = self.table.get(rreq.dest).map(|e| e.dest_seq);
        let relay = RouteRequest {
            hop_count: rreq.hop_count + 1,
            dest_seq: rreq.dest_seq.max(known),
            ..rreq.clone()
        };
        ctx.broadcast(MessageKind::RouteRequest, AodvMsg::Rreq(relay));
    }

    fn on_rrep(&mut self, ctx: &mut Ctx<'_, AodvMsg>, from: NodeId, rrep: &RouteReply) {
        let now = ctx.now();
        let lifetime = self.lifetime();
        self.table.touch_neighbor(from, now, lifetime);
        self.table.update(rrep.dest, from, rrep.hop_count + 1, rrep.dest_seq, now, lifetime);
        if rrep.origin == self.id {
            if let Some(d) = self.pending.remove(&rrep.dest) {
                for p in d.queue {
                    self.forward(ctx, p, None);
                }
            }
            return;
        }
        let Some(back) = self.table.active(rrep.origin, now).map(|e| e.next_hop) else {
            ctx.count(Counter::NoRoute);
            return;
        };
        self.table.add_precursor(rrep.dest, back);
        let relay = RouteReply { hop_count: rrep.hop_count + 1, ..rrep.clone() };
        if !ctx.unicast_with_retries(back, MessageKind::RouteReply, AodvMsg::Rrep(relay), self.params.link_attempts) {
            self.link_break(ctx, back);
        }
    }

    fn on_discovery_timeout(&mut self, ctx: &mut Ctx<'_, AodvMsg>, generation: u32, dest: NodeId) {
        let Some(d) = self.pending.get_mut(&dest) else { return };
        if d.generation != generation {
            return;
        }
        if d.retries_left > 0 {
            d.retries_left -= 1;
            self.generation += 1;
            d.generation = self.generation;
            self.broadcast_rreq(ctx, dest);
            ctx.set_timer(self.params.discovery_timeout, timer_token(TIMER_DISCOVERY, self.generation, dest));
        } else {
            self.pending.remove(&dest);
            ctx.count(Counter::DiscoveryFailure);
        }
    }
}

impl Protocol for Aodv {
    type Payload = AodvMsg;

    fn kind() -> ProtocolKind {
        ProtocolKind::Aodv
    }

    fn new_vehicle(id: NodeId, _loco: LocoAddress, params: &ProtocolParams, _rsus: &[RsuSite]) -> Self {
        Self {
            id,
            params: params.clone(),
            seq: 0,
            rreq_id: 0,
            generation: 0,
            table: OnDemandTable::new(),
            seen: BTreeMap::new(),
            pending: BTreeMap::new(),
        }
    }

    fn start(&mut self, _ctx: &mut Ctx<'_, AodvMsg>) {}

    fn on_message(&mut self, ctx: &mut Ctx<'_, AodvMsg>, msg: &Message<AodvMsg>) {
        match msg.payload.as_ref() {
            AodvMsg::Rreq(r) => self.on_rreq(ctx, msg.src, r),
            AodvMsg::Rrep(r) => self.on_rrep(ctx, msg.src, r),
            AodvMsg::Rerr(list) => {
                let lost = self.table.invalidate_reported(msg.src, list);
                if !lost.is_empty() {
                    ctx.broadcast(MessageKind::RouteError, AodvMsg::Rerr(lost));
                }
            }
            AodvMsg::Data(p) => {
                let now = ctx.now();
                self.table.touch_neighbor(msg.src, now, self.lifetime());
                self.forward(ctx, *p, Some(msg.src));
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, AodvMsg>, token: u64) {
        let (tag, generation, dest) = split_token(token);
        if tag == TIMER_DISCOVERY {
            self.on_discovery_timeout(ctx, generation, dest);
        }
    }

    fn send_data(&mut self, ctx: &mut Ctx<'_, AodvMsg>, packet: DataPacket) {
        self.forward(ctx, packet, None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::static_world;
    use crate::loco::LaneDirection;
    use crate::mobility::{MapConfig, MapSpec};
    use crate::netsim::RadioConfig;
    use crate::world::World;

    const LOSSLESS: RadioConfig = RadioConfig { range_m: 100.0, p_loss: 0.0, bitrate_bps: 6.0e6 };

    fn one_road() -> MapConfig {
        MapConfig { spec: MapSpec::Grid { rows: 1, cols: 0 }, rsu_anchors_per_road: 1, ..MapConfig::default() }
    }

    fn line(xs: &[f64]) -> World<Aodv> {
        let spots: Vec<_> = xs.iter().map(|&x| (0, LaneDirection::Increasing, x)).collect();
        static_world(&one_road(), &spots, LOSSLESS, ProtocolParams::default(), 100.0).unwrap()
    }

    #[test]
    fn three_node_chain() {
        let mut w = line(&[0.0, 80.0, 160.0]);
        let p = w.inject_data(0, 2).unwrap();
        w.run_until(1.0).unwrap();
        assert!(w.ledger().was_delivered(p.uid));
        let at_src = w.agent(0).unwrap().table().get(2).unwrap();
        assert_eq!((at_src.next_hop, at_src.hop_count), (1, 2));
        let at_relay = w.agent(1).unwrap().table().get(2).unwrap();
        assert_eq!((at_relay.next_hop, at_relay.hop_count), (2, 1));
        assert!(at_relay.dest_seq >= at_src.dest_seq);
        assert_eq!(w.ledger().attempts(), 1);
    }

    #[test]
    fn direct_neighbor_and_duplicates() {
        let mut w = line(&[0.0, 50.0, 90.0]);
        let p = w.inject_data(0, 2).unwrap();
        w.run_until(1.0).unwrap();
        assert!(w.ledger().was_delivered(p.uid));
        assert_eq!(w.agent(0).unwrap().table().get(2).unwrap().hop_count, 1);
        // Node 2 hears the request from the origin and again from node 1.
        assert_eq!(w.ledger().counter(Counter::DuplicateRequest), 1);
        assert_eq!(w.radio().stats().delivered_by_kind[MessageKind::RouteReply.index()], 1);
    }

    #[test]
    fn unreachable_destination_fails_after_retries() {
        let mut w = line(&[0.0, 500.0]);
        let p = w.inject_data(0, 1).unwrap();
        let budget = 2.0 * 3.0;
        w.run_until(budget - 0.1).unwrap();
        assert!(w.agent(0).unwrap().discovery_pending(1));
        w.run_until(budget + 0.1).unwrap();
        assert!(!w.agent(0).unwrap().discovery_pending(1));
        assert_eq!(w.ledger().counter(Counter::DiscoveryFailure), 1);
        assert!(!w.ledger().was_delivered(p.uid));
        assert_eq!(w.agent(0).unwrap().sequence_number(), 3);
    }

    #[test]
    fn broken_next_hop_raises_route_error() {
        // 0 at 100, 1 at 180 and about to drive away, 2 at 260, 3 at 50 listening.
        let mut w = line(&[100.0, 180.0, 260.0, 50.0]);
        let first = w.inject_data(0, 2).unwrap();
        w.run_until(0.05).unwrap();
        assert!(w.ledger().was_delivered(first.uid));
        assert_eq!(w.agent(0).unwrap().table().get(2).unwrap().next_hop, 1);
        w.set_speed(1, 30.0).unwrap();
        w.run_until(3.0).unwrap();
        w.set_speed(1, 0.0).unwrap();
        let second = w.inject_data(0, 2).unwrap();
        w.run_until(3.05).unwrap();
        assert!(!w.ledger().was_delivered(second.uid));
        assert_eq!(w.ledger().counter(Counter::LinkBreak), 1);
        assert!(w.radio().stats().delivered_by_kind[MessageKind::RouteError.index()] >= 1);
        assert!(!w.agent(0).unwrap().table().get(2).unwrap().valid);
        assert!(w.agent(0).unwrap().discovery_pending(2));
    }
}

//! Simplified DSDV: periodic full dumps, incremental updates on every table
//! change, sequence-numbered distance vectors. No settling-time damping.

use std::collections::{BTreeMap, BTreeSet};

use super::{split_token, timer_token, Counter, Ctx, DataPacket, Protocol, ProtocolKind, ProtocolParams, RsuSite};
use crate::cluster::NodeId;
use crate::loco::LocoAddress;
use crate::netsim::{Message, MessageKind};

pub const INFINITY: u32 = u32::MAX;

const TIMER_FULL_DUMP: u8 = 1;
const TIMER_INCREMENTAL: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Advert {
    pub dest: NodeId,
    pub metric: u32,
    pub seq: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DsdvMsg {
    Update { full: bool, entries: Vec<Advert> },
    Data(DataPacket),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsdvEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    /// Hop count; [`INFINITY`] marks a broken route.
    pub metric: u32,
    /// Even while the destination is reachable, odd once a break is advertised.
    pub seq: u32,
    pub install_time: f64,
}

impl DsdvEntry {
    pub fn reachable(&self) -> bool {
        self.metric != INFINITY
    }
}

/// The merge rule: a higher sequence number always wins; at equal sequence
/// the lower metric wins. Updates from the current next hop are taken at
/// equal sequence even when they lengthen the route.
pub fn supersedes(current: Option<&DsdvEntry>, from: NodeId, metric: u32, seq: u32) -> bool {
    match current {
        None => metric != INFINITY,
        Some(e) => seq > e.seq || (seq == e.seq && (metric < e.metric || (e.next_hop == from && metric != e.metric))),
    }
}

fn plus_one(metric: u32) -> u32 {
    if metric == INFINITY {
        INFINITY
    } else {
        metric + 1
    }
}

#[derive(Debug, Clone)]
pub struct Dsdv {
    id: NodeId,
    params: ProtocolParams,
    seq: u32,
    table: BTreeMap<NodeId, DsdvEntry>,
    neighbors: BTreeMap<NodeId, f64>,
    changed: BTreeSet<NodeId>,
    incremental_scheduled: bool,
}

impl Dsdv {
    pub fn table(&self) -> &BTreeMap<NodeId, DsdvEntry> {
        &self.table
    }

    pub fn sequence_number(&self) -> u32 {
        self.seq
    }

    /// Reachable destinations and their hop counts, excluding self.
    pub fn distances(&self) -> BTreeMap<NodeId, u32> {
        self.table
            .values()
            .filter(|e| e.reachable() && e.dest != self.id)
            .map(|e| (e.dest, e.metric))
            .collect()
    }

    fn own_entry(&self, now: f64) -> DsdvEntry {
        DsdvEntry { dest: self.id, next_hop: self.id, metric: 0, seq: self.seq, install_time: now }
    }

    fn advert(e: &DsdvEntry) -> Advert {
        Advert { dest: e.dest, metric: e.metric, seq: e.seq }
    }

    fn schedule_incremental(&mut self, ctx: &mut Ctx<'_, DsdvMsg>) {
        if !self.incremental_scheduled && !self.changed.is_empty() {
            self.incremental_scheduled = true;
            ctx.set_timer(0.0, timer_token(TIMER_INCREMENTAL, 0, self.id));
        }
    }

    fn full_dump(&mut self, ctx: &mut Ctx<'_, DsdvMsg>) {
        let now = ctx.now();
        self.expire_neighbors(now);
        self.seq += 2;
        self.table.insert(self.id, self.own_entry(now));
        let entries = self.table.values().map(Self::advert).collect();
        self.changed.clear();
        ctx.broadcast(MessageKind::RoutingUpdate, DsdvMsg::Update { full: true, entries });
        ctx.set_timer(self.params.dsdv_full_dump_period, timer_token(TIMER_FULL_DUMP, 0, self.id));
    }

    fn incremental(&mut self, ctx: &mut Ctx<'_, DsdvMsg>) {
        self.incremental_scheduled = false;
        let entries: Vec<Advert> = self.changed.iter().filter_map(|d| self.table.get(d)).map(Self::advert).collect();
        self.changed.clear();
        if !entries.is_empty() {
            ctx.broadcast(MessageKind::RoutingUpdate, DsdvMsg::Update { full: false, entries });
        }
    }

    /// Marks every route through `neighbor` broken with an odd sequence number.
    fn lose_neighbor(&mut self, neighbor: NodeId) {
        self.neighbors.remove(&neighbor);
        for e in self.table.values_mut() {
            if e.next_hop == neighbor && e.reachable() && e.dest != self.id {
                e.metric = INFINITY;
                e.seq |= 1;
                self.changed.insert(e.dest);
            }
        }
    }

    fn expire_neighbors(&mut self, now: f64) {
        let timeout = self.params.dsdv_neighbor_timeout;
        let stale: Vec<NodeId> = self.neighbors.iter().filter(|(_, t)| now - **t > timeout).map(|(n, _)| *n).collect();
        for n in stale {
            self.lose_neighbor(n);
        }
    }

    fn merge(&mut self, from: NodeId, entries: &[Advert], now: f64) {
        self.neighbors.insert(from, now);
        for a in entries {
            if a.dest == self.id {
                continue;
            }
            let metric = plus_one(a.metric);
            if supersedes(self.table.get(&a.dest), from, metric, a.seq) {
                self.table.insert(a.dest, DsdvEntry { dest: a.dest, next_hop: from, metric, seq: a.seq, install_time: now });
                self.changed.insert(a.dest);
            }
        }
    }

    fn forward(&mut self, ctx: &mut Ctx<'_, DsdvMsg>, packet: DataPacket) {
        if packet.dst == self.id {
            ctx.deliver_data(&packet);
            return;
        }
        let Some(next) = self.table.get(&packet.dst).filter(|e| e.reachable()).map(|e| e.next_hop) else {
            ctx.count(Counter::NoRoute);
            return;
        };
        if !ctx.unicast_with_retries(next, MessageKind::Data, DsdvMsg::Data(packet), self.params.link_attempts) {
            ctx.count(Counter::LinkBreak);
            self.lose_neighbor(next);
            self.schedule_incremental(ctx);
        }
    }
}

impl Protocol for Dsdv {
    type Payload = DsdvMsg;

    fn kind() -> ProtocolKind {
        ProtocolKind::Dsdv
    }

    fn new_vehicle(id: NodeId, _loco: LocoAddress, params: &ProtocolParams, _rsus: &[RsuSite]) -> Self {
        Self {
            id,
            params: params.clone(),
            seq: 0,
            table: BTreeMap::new(),
            neighbors: BTreeMap::new(),
            changed: BTreeSet::new(),
            incremental_scheduled: false,
        }
    }

    fn start(&mut self, ctx: &mut Ctx<'_, DsdvMsg>) {
        use rand::Rng;
        self.table.insert(self.id, self.own_entry(ctx.now()));
        let offset = ctx.rng().gen_range(0.0..self.params.dsdv_full_dump_period);
        ctx.set_timer(offset, timer_token(TIMER_FULL_DUMP, 0, self.id));
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, DsdvMsg>, msg: &Message<DsdvMsg>) {
        match msg.payload.as_ref() {
            DsdvMsg::Update { entries, .. } => {
                self.merge(msg.src, entries, ctx.now());
                self.schedule_incremental(ctx);
            }
            DsdvMsg::Data(p) => self.forward(ctx, *p),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, DsdvMsg>, token: u64) {
        match split_token(token).0 {
            TIMER_FULL_DUMP => self.full_dump(ctx),
            TIMER_INCREMENTAL => self.incremental(ctx),
            _ => {}
        }
    }

    fn send_data(&mut self, ctx: &mut Ctx<'_, DsdvMsg>, packet: DataPacket) {
        ctx.route_attempt(&packet);
        self.forward(ctx, packet);
    }
}

//! One simulation run: vehicles, roadside units, their protocol agents, the
//! radio and the traffic generator, all driven by a single event queue.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cluster::NodeId;
use crate::loco::LocoError;
use crate::mobility::{advance, MobilityError, Point, RoadMap, Vehicle};
use crate::netsim::{Destination, Message, MessageKind, MessageSizes, Radio, RadioConfig, Scheduler, SimError};
use crate::protocols::{Counter, Counters, Ctx, DataPacket, MobilityUpdate, Protocol, ProtocolParams, RsuSite};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    Address(#[from] LocoError),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug)]
pub enum WorldEvent<P> {
    TimerFire { node: NodeId, token: u64 },
    MessageArrival { to: NodeId, msg: Message<P> },
    MobilityTick,
    TrafficArrival { node: NodeId },
    ExperimentEnd,
}

/// Everything needed to run one repetition apart from the map and vehicles.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSetup {
    pub seed: u64,
    pub duration: f64,
    pub warmup: f64,
    pub mobility_step: f64,
    /// Data packets per second per vehicle; zero disables the generator.
    pub traffic_rate: f64,
    /// No new data is generated during the final `drain` seconds.
    pub drain: f64,
    pub radio: RadioConfig,
    pub params: ProtocolParams,
    pub keep_log: bool,
}

impl Default for SimSetup {
    fn default() -> Self {
        Self {
            seed: 1,
            duration: 300.0,
            warmup: 100.0,
            mobility_step: 0.1,
            traffic_rate: 0.2,
            drain: 10.0,
            radio: RadioConfig::default(),
            params: ProtocolParams::default(),
            keep_log: false,
        }
    }
}

/// Per-run bookkeeping of data packets and protocol counters.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    window_start: f64,
    window_end: f64,
    created: BTreeMap<u64, DataPacket>,
    attempts: BTreeSet<u64>,
    delivered: BTreeMap<u64, f64>,
    counters: Counters,
}

impl Ledger {
    pub fn new(window_start: f64, window_end: f64) -> Self {
        Self { window_start, window_end, ..Default::default() }
    }

    fn in_window(&self, p: &DataPacket) -> bool {
        p.created_at >= self.window_start && p.created_at < self.window_end
    }

    pub fn register(&mut self, p: &DataPacket) {
        if self.in_window(p) {
            self.created.insert(p.uid, *p);
        }
    }

    pub fn attempt(&mut self, p: &DataPacket) {
        if self.in_window(p) {
            self.attempts.insert(p.uid);
        }
    }

    pub fn delivered(&mut self, p: &DataPacket, now: f64) {
        if self.in_window(p) {
            self.delivered.entry(p.uid).or_insert(now);
        }
    }

    pub fn count(&mut self, c: Counter) {
        *self.counters.entry(c).or_default() += 1;
    }

    pub fn counter(&self, c: Counter) -> u64 {
        self.counters.get(&c).copied().unwrap_or(0)
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn generated(&self) -> usize {
        self.created.len()
    }

    pub fn attempts(&self) -> usize {
        self.attempts.len()
    }

    pub fn successes(&self) -> usize {
        self.attempts.iter().filter(|u| self.delivered.contains_key(u)).count()
    }

    pub fn was_delivered(&self, uid: u64) -> bool {
        self.delivered.contains_key(&uid)
    }

    /// (send, receive) times of delivered packets, in packet order.
    pub fn delivery_pairs(&self) -> Vec<(f64, f64)> {
        self.delivered
            .iter()
            .filter_map(|(uid, rx)| self.created.get(uid).map(|p| (p.created_at, *rx)))
            .collect()
    }
}

/// The shared half of the world that protocol callbacks may touch.
pub struct Net<P> {
    queue: Scheduler<WorldEvent<P>>,
    radio: Radio,
    positions: Vec<Option<Point>>,
    next_msg_id: u64,
    protocol_rng: ChaCha8Rng,
    sizes: MessageSizes,
    backbone_delay: f64,
    ledger: Ledger,
}

impl<P> Net<P> {
    pub(crate) fn now(&self) -> f64 {
        self.queue.now()
    }

    pub(crate) fn sizes(&self) -> MessageSizes {
        self.sizes
    }

    pub(crate) fn protocol_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.protocol_rng
    }

    pub(crate) fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    fn message(&mut self, src: NodeId, dst: Destination, kind: MessageKind, payload: Rc<P>, size: u32) -> Message<P> {
        self.next_msg_id += 1;
        Message { id: self.next_msg_id, kind, src, dst, payload, size_bytes: size, created_at: self.queue.now() }
    }

    fn push(&mut self, time: f64, to: NodeId, msg: Message<P>) {
        self.queue
            .schedule(time, WorldEvent::MessageArrival { to, msg })
            .expect("arrivals are never in the past");
    }

    pub(crate) fn broadcast(&mut self, src: NodeId, kind: MessageKind, payload: Rc<P>, size: u32) -> usize {
        let msg = self.message(src, Destination::Broadcast, kind, payload, size);
        let now = self.queue.now();
        let rx = self.radio.broadcast(now, msg.id, kind, size, src, &self.positions);
        for r in &rx {
            self.push(r.arrival, r.receiver, msg.clone());
        }
        rx.len()
    }

    pub(crate) fn unicast(
        &mut self,
        src: NodeId,
        target: NodeId,
        kind: MessageKind,
        payload: Rc<P>,
        size: u32,
        dst: Destination,
    ) -> bool {
        let msg = self.message(src, dst, kind, payload, size);
        let now = self.queue.now();
        match self.radio.unicast(now, msg.id, kind, size, src, target, &self.positions) {
            Some(r) => {
                self.push(r.arrival, r.receiver, msg);
                true
            }
            None => false,
        }
    }

    pub(crate) fn wired(&mut self, src: NodeId, target: NodeId, kind: MessageKind, payload: Rc<P>) {
        let size = self.sizes.for_kind(kind);
        let msg = self.message(src, Destination::Rsu(target), kind, payload, size);
        let at = self.queue.now() + self.backbone_delay;
        self.push(at, target, msg);
    }

    pub(crate) fn set_timer(&mut self, node: NodeId, delay: f64, token: u64) {
        self.queue
            .schedule_in(delay.max(0.0), WorldEvent::TimerFire { node, token })
            .expect("non-negative delay");
    }
}

pub struct World<P: Protocol> {
    setup: SimSetup,
    map: RoadMap,
    vehicles: Vec<Vehicle>,
    rsus: Vec<RsuSite>,
    agents: Vec<P>,
    net: Net<P::Payload>,
    traffic: ChaCha8Rng,
    next_uid: u64,
}

impl<P: Protocol> World<P> {
    pub fn new(setup: SimSetup, map: RoadMap, vehicles: Vec<Vehicle>) -> Result<Self, WorldError> {
        let n = vehicles.len();
        let sites = RsuSite::layout(&map, n as NodeId);
        let mut agents = Vec::with_capacity(n + sites.len());
        let mut positions = Vec::with_capacity(n + sites.len());
        for v in &vehicles {
            let loco = map.loco(v)?;
            agents.push(P::new_vehicle(v.node_id, loco, &setup.params, &sites));
            positions.push(Some(map.point(v)));
        }
        let mut rsus = Vec::new();
        for site in &sites {
            if let Some(agent) = P::new_rsu(site.node_id, site, &setup.params, &sites) {
                agents.push(agent);
                positions.push(Some(site.point(&map)));
                rsus.push(site.clone());
            }
        }
        let radio = Radio::new(setup.radio, stream(setup.seed, Stream::Loss), setup.warmup, setup.keep_log);
        let ledger = Ledger::new(setup.warmup, setup.duration - setup.drain);
        let net = Net {
            queue: Scheduler::new(),
            radio,
            positions,
            next_msg_id: 0,
            protocol_rng: stream(setup.seed, Stream::Protocol),
            sizes: setup.params.sizes,
            backbone_delay: setup.params.backbone_delay,
            ledger,
        };
        let traffic = stream(setup.seed, Stream::Traffic);
        let mut world = Self { setup, map, vehicles, rsus, agents, net, traffic, next_uid: 0 };
        world.bootstrap()?;
        Ok(world)
    }

    fn bootstrap(&mut self) -> Result<(), WorldError> {
        for id in 0..self.agents.len() {
            let mut ctx = Ctx::new(id as NodeId, &mut self.net);
            self.agents[id].start(&mut ctx);
        }
        let q = &mut self.net.queue;
        q.schedule(self.setup.mobility_step, WorldEvent::MobilityTick)?;
        if self.setup.traffic_rate > 0.0 && self.vehicles.len() > 1 {
            for v in 0..self.vehicles.len() {
                let gap = exp_sample(&mut self.traffic, self.setup.traffic_rate);
                q.schedule(gap, WorldEvent::TrafficArrival { node: v as NodeId })?;
            }
        }
        q.schedule(self.setup.duration, WorldEvent::ExperimentEnd)?;
        Ok(())
    }

    pub fn setup(&self) -> &SimSetup {
        &self.setup
    }

    pub fn now(&self) -> f64 {
        self.net.queue.now()
    }

    pub fn map(&self) -> &RoadMap {
        &self.map
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn rsus(&self) -> &[RsuSite] {
        &self.rsus
    }

    pub fn agents(&self) -> &[P] {
        &self.agents
    }

    pub fn agent(&self, id: NodeId) -> Option<&P> {
        self.agents.get(id as usize)
    }

    pub fn positions(&self) -> &[Option<Point>] {
        &self.net.positions
    }

    pub fn radio(&self) -> &Radio {
        &self.net.radio
    }

    pub fn ledger(&self) -> &Ledger {
        &self.net.ledger
    }

    pub fn events_executed(&self) -> u64 {
        self.net.queue.executed()
    }

    /// Stops all vehicles and optionally disables radio loss, so the
    /// topology is frozen from now on.
    pub fn freeze(&mut self, lossless: bool) {
        for v in &mut self.vehicles {
            v.speed_mps = 0.0;
        }
        if lossless {
            self.net.radio.set_loss(0.0);
        }
    }

    pub fn set_speed(&mut self, id: NodeId, speed_mps: f64) -> Result<(), WorldError> {
        let v = self.vehicles.get_mut(id as usize).ok_or(WorldError::UnknownNode(id))?;
        v.speed_mps = speed_mps;
        Ok(())
    }

    /// Hands a data packet to `src`'s routing agent right now.
    pub fn inject_data(&mut self, src: NodeId, dst: NodeId) -> Result<DataPacket, WorldError> {
        if src as usize >= self.vehicles.len() {
            return Err(WorldError::UnknownNode(src));
        }
        if dst as usize >= self.vehicles.len() {
            return Err(WorldError::UnknownNode(dst));
        }
        Ok(self.emit_packet(src, dst))
    }

    fn emit_packet(&mut self, src: NodeId, dst: NodeId) -> DataPacket {
        self.next_uid += 1;
        let packet = DataPacket { uid: self.next_uid, src, dst, created_at: self.now() };
        self.net.ledger.register(&packet);
        let mut ctx = Ctx::new(src, &mut self.net);
        self.agents[src as usize].send_data(&mut ctx, packet);
        packet
    }

    /// Puts a crafted frame from `src` to `target` on the air right now.
    /// Returns whether the radio delivered it.
    pub fn transmit_raw(&mut self, src: NodeId, target: NodeId, kind: MessageKind, payload: P::Payload) -> Result<bool, WorldError> {
        if src as usize >= self.agents.len() {
            return Err(WorldError::UnknownNode(src));
        }
        if target as usize >= self.agents.len() {
            return Err(WorldError::UnknownNode(target));
        }
        let size = self.net.sizes.for_kind(kind);
        Ok(self.net.unicast(src, target, kind, Rc::new(payload), size, Destination::Node(target)))
    }

    /// Processes every event up to `t_end`. Returns the number executed.
    pub fn run_until(&mut self, t_end: f64) -> Result<u64, WorldError> {
        if t_end < self.now() {
            return Err(SimError::PastEvent { time: t_end, now: self.now() }.into());
        }
        let mut count = 0;
        while let Some(ev) = self.net.queue.pop_until(t_end) {
            self.dispatch(ev.kind)?;
            count += 1;
        }
        Ok(count)
    }

    pub fn run(&mut self) -> Result<u64, WorldError> {
        self.run_until(self.setup.duration)
    }

    fn dispatch(&mut self, ev: WorldEvent<P::Payload>) -> Result<(), WorldError> {
        match ev {
            WorldEvent::TimerFire { node, token } => {
                let mut ctx = Ctx::new(node, &mut self.net);
                self.agents[node as usize].on_timer(&mut ctx, token);
            }
            WorldEvent::MessageArrival { to, msg } => {
                let mut ctx = Ctx::new(to, &mut self.net);
                self.agents[to as usize].on_message(&mut ctx, &msg);
            }
            WorldEvent::MobilityTick => self.mobility_tick()?,
            WorldEvent::TrafficArrival { node } => {
                let now = self.now();
                if now < self.setup.duration - self.setup.drain {
                    let n = self.vehicles.len() as NodeId;
                    let mut dst = self.traffic.gen_range(0..n - 1);
                    if dst >= node {
                        dst += 1;
                    }
                    self.emit_packet(node, dst);
                    let gap = exp_sample(&mut self.traffic, self.setup.traffic_rate);
                    self.net.queue.schedule_in(gap, WorldEvent::TrafficArrival { node })?;
                }
            }
            WorldEvent::ExperimentEnd => {}
        }
        Ok(())
    }

    fn mobility_tick(&mut self) -> Result<(), WorldError> {
        let dt = self.setup.mobility_step;
        let moves = advance(&mut self.vehicles, &self.map, dt)?;
        for m in moves {
            let v = &self.vehicles[m.node_id as usize];
            let road = &self.map.roads[v.road];
            self.net.positions[m.node_id as usize] = Some(road.point(v.position_m));
            let loco = self.map.loco(v)?;
            let passed_rsus = self
                .rsus
                .iter()
                .filter(|s| s.road == v.road && s.lane == v.lane && m.crossed(s.position_m, v.lane, road.length_m))
                .map(|s| s.node_id)
                .collect();
            let remaining = match v.lane {
                crate::loco::LaneDirection::Increasing => road.length_m - v.position_m,
                crate::loco::LaneDirection::Decreasing => v.position_m,
            };
            let time_to_road_end = if v.speed_mps > 0.0 { remaining / v.speed_mps } else { f64::INFINITY };
            let update = MobilityUpdate { loco, wrapped: m.wrapped, passed_rsus, time_to_road_end };
            let mut ctx = Ctx::new(m.node_id, &mut self.net);
            self.agents[m.node_id as usize].on_mobility(&mut ctx, &update);
        }
        let next = self.now() + dt;
        if next <= self.setup.duration {
            self.net.queue.schedule(next, WorldEvent::MobilityTick)?;
        }
        Ok(())
    }
}

fn exp_sample(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

//! Routing protocols behind a common event-driven interface.
//!
//! A protocol instance lives on one node and only sees the world through
//! [`Ctx`]: its own LOCO, the clock, the radio and its timers.

pub mod acr;
pub mod aodv;
pub mod dsdv;
pub mod rsu;

mod ondemand;

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::cluster::NodeId;
use crate::loco::{LocoAddress, LocoFormat};
use crate::netsim::{Destination, Message, MessageKind, MessageSizes};
use crate::world::Net;

pub use ondemand::{OnDemandEntry, OnDemandTable};
pub use rsu::{RsuAddress, RsuSite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProtocolKind {
    Acr,
    Aodv,
    Dsdv,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 3] = [ProtocolKind::Acr, ProtocolKind::Aodv, ProtocolKind::Dsdv];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Acr => "acr",
            ProtocolKind::Aodv => "aodv",
            ProtocolKind::Dsdv => "dsdv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s.trim().to_ascii_lowercase())
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An application packet handed to the routing layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPacket {
    pub uid: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub created_at: f64,
}

/// Timer and sizing knobs shared by all protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    pub format: LocoFormat,
    pub sizes: MessageSizes,
    pub hello_interval: f64,
    /// Neighbor entry lifetime, also the CH-silence threshold.
    pub entry_ttl: f64,
    pub mad_m: f64,
    pub discovery_timeout: f64,
    pub discovery_retries: u32,
    pub route_lifetime: f64,
    /// Transmissions per hop before a link is declared broken.
    pub link_attempts: u32,
    pub dsdv_full_dump_period: f64,
    pub dsdv_neighbor_timeout: f64,
    pub join_timeout: f64,
    pub enquiry_timeout: f64,
    pub leave_timeout: f64,
    /// A cluster head hands over its role this many seconds before it
    /// reaches the end of its road.
    pub ch_leave_horizon: f64,
    pub rsu_silence_window: f64,
    pub rsu_advisory_period: f64,
    pub rsu_report_ttl: f64,
    pub rsu_bridge: bool,
    pub use_ttl_fallback: bool,
    pub use_rsu_pass_rule: bool,
    pub backbone_delay: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            format: LocoFormat::default(),
            sizes: MessageSizes::default(),
            hello_interval: 1.0,
            entry_ttl: 3.0,
            mad_m: 100.0,
            discovery_timeout: 2.0,
            discovery_retries: 2,
            route_lifetime: 10.0,
            link_attempts: 3,
            dsdv_full_dump_period: 15.0,
            dsdv_neighbor_timeout: 30.0,
            join_timeout: 0.5,
            enquiry_timeout: 0.5,
            leave_timeout: 0.3,
            ch_leave_horizon: 1.0,
            rsu_silence_window: 2.0,
            rsu_advisory_period: 5.0,
            rsu_report_ttl: 30.0,
            rsu_bridge: false,
            use_ttl_fallback: true,
            use_rsu_pass_rule: true,
            backbone_delay: 0.001,
        }
    }
}

/// What a vehicle learns from its GPS after a mobility step.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityUpdate {
    pub loco: LocoAddress,
    pub wrapped: bool,
    /// Node ids of roadside units whose anchor the vehicle drove past.
    pub passed_rsus: Vec<NodeId>,
    /// Seconds until the vehicle reaches the end of its road.
    pub time_to_road_end: f64,
}

/// A node's cluster state as seen by the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSnapshot {
    pub cluster_id: Option<NodeId>,
    pub is_ch: bool,
    pub loco: LocoAddress,
}

pub trait Protocol: Sized {
    type Payload: fmt::Debug;

    fn kind() -> ProtocolKind;

    fn new_vehicle(id: NodeId, loco: LocoAddress, params: &ProtocolParams, rsus: &[RsuSite]) -> Self;

    /// Roadside units only take part in protocols that use them.
    fn new_rsu(_id: NodeId, _site: &RsuSite, _params: &ProtocolParams, _rsus: &[RsuSite]) -> Option<Self> {
        None
    }

    fn start(&mut self, ctx: &mut Ctx<'_, Self::Payload>);

    fn on_message(&mut self, ctx: &mut Ctx<'_, Self::Payload>, msg: &Message<Self::Payload>);

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self::Payload>, token: u64);

    fn send_data(&mut self, ctx: &mut Ctx<'_, Self::Payload>, packet: DataPacket);

    fn on_mobility(&mut self, _ctx: &mut Ctx<'_, Self::Payload>, _update: &MobilityUpdate) {}

    fn cluster_snapshot(&self) -> Option<ClusterSnapshot> {
        None
    }
}

/// Counters a protocol can bump through its context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Counter {
    /// Packet received by a node outside the packet's cluster scope.
    DropRule,
    /// A node relayed data outside its cluster scope. Must stay zero.
    DropRuleViolation,
    NoRoute,
    LinkBreak,
    DiscoveryFailure,
    QueueOverflow,
    DuplicateRequest,
    NonChReport,
    ReportAccepted,
    AdvisoryReceived,
    MalformedLoco,
    Enquiry,
    Join,
    ChLeave,
}

impl Counter {
    pub fn name(self) -> &'static str {
        match self {
            Counter::DropRule => "drop_rule",
            Counter::DropRuleViolation => "drop_rule_violation",
            Counter::NoRoute => "no_route",
            Counter::LinkBreak => "link_break",
            Counter::DiscoveryFailure => "discovery_failure",
            Counter::QueueOverflow => "queue_overflow",
            Counter::DuplicateRequest => "duplicate_request",
            Counter::NonChReport => "non_ch_report",
            Counter::ReportAccepted => "report_accepted",
            Counter::AdvisoryReceived => "advisory_received",
            Counter::MalformedLoco => "malformed_loco",
            Counter::Enquiry => "enquiry",
            Counter::Join => "join",
            Counter::ChLeave => "ch_leave",
        }
    }
}

pub type Counters = BTreeMap<Counter, u64>;

/// Packs a timer tag, a generation counter and a node id into one token.
pub(crate) fn timer_token(tag: u8, generation: u32, node: NodeId) -> u64 {
    (u64::from(tag) << 56) | (u64::from(generation & 0x00FF_FFFF) << 32) | u64::from(node)
}

pub(crate) fn split_token(token: u64) -> (u8, u32, NodeId) {
    ((token >> 56) as u8, ((token >> 32) & 0x00FF_FFFF) as u32, token as NodeId)
}

/// A node's handle on the simulated world during one callback.
pub struct Ctx<'a, P> {
    node: NodeId,
    net: &'a mut Net<P>,
}

impl<'a, P> Ctx<'a, P> {
    pub(crate) fn new(node: NodeId, net: &'a mut Net<P>) -> Self {
        Self { node, net }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn now(&self) -> f64 {
        self.net.now()
    }

    pub fn sizes(&self) -> MessageSizes {
        self.net.sizes()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.net.protocol_rng()
    }

    /// Broadcast with the default size for `kind`; returns the number of receivers.
    pub fn broadcast(&mut self, kind: MessageKind, payload: P) -> usize {
        let size = self.sizes().for_kind(kind);
        self.broadcast_sized(kind, payload, size)
    }

    pub fn broadcast_sized(&mut self, kind: MessageKind, payload: P, size_bytes: u32) -> usize {
        self.net.broadcast(self.node, kind, Rc::new(payload), size_bytes)
    }

    pub fn unicast(&mut self, target: NodeId, kind: MessageKind, payload: P) -> bool {
        self.unicast_with_retries(target, kind, payload, 1)
    }

    /// Up to `attempts` transmissions of the same frame; `false` means the
    /// link is considered broken.
    pub fn unicast_with_retries(&mut self, target: NodeId, kind: MessageKind, payload: P, attempts: u32) -> bool {
        let size = self.sizes().for_kind(kind);
        let payload = Rc::new(payload);
        for _ in 0..attempts.max(1) {
            if self.net.unicast(self.node, target, kind, Rc::clone(&payload), size, Destination::Node(target)) {
                return true;
            }
        }
        false
    }

    /// Infrastructure backbone between roadside units; not a radio hop.
    pub fn wired(&mut self, target: NodeId, kind: MessageKind, payload: P) {
        self.net.wired(self.node, target, kind, Rc::new(payload));
    }

    pub fn set_timer(&mut self, delay: f64, token: u64) {
        self.net.set_timer(self.node, delay, token);
    }

    /// The packet reached its destination application.
    pub fn deliver_data(&mut self, packet: &DataPacket) {
        let now = self.net.now();
        self.net.ledger_mut().delivered(packet, now);
    }

    /// Marks `packet` as the trigger of a route discovery attempt.
    pub fn route_attempt(&mut self, packet: &DataPacket) {
        self.net.ledger_mut().attempt(packet);
    }

    pub fn count(&mut self, counter: Counter) {
        self.net.ledger_mut().count(counter);
    }
}

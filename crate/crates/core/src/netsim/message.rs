use std::fmt;
use std::rc::Rc;

use crate::cluster::NodeId;

pub type MsgId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    Hello,
    JoinReq,
    JoinReply,
    ChLeave,
    ChAssign,
    RouteRequest,
    RouteReply,
    RouteError,
    RoutingUpdate,
    Data,
    RsuReport,
    RsuAdvisory,
    Enquiry,
}

impl MessageKind {
    pub const COUNT: usize = 13;

    pub const ALL: [MessageKind; Self::COUNT] = [
        MessageKind::Hello,
        MessageKind::JoinReq,
        MessageKind::JoinReply,
        MessageKind::ChLeave,
        MessageKind::ChAssign,
        MessageKind::RouteRequest,
        MessageKind::RouteReply,
        MessageKind::RouteError,
        MessageKind::RoutingUpdate,
        MessageKind::Data,
        MessageKind::RsuReport,
        MessageKind::RsuAdvisory,
        MessageKind::Enquiry,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Hello => "hello",
            MessageKind::JoinReq => "join_req",
            MessageKind::JoinReply => "join_reply",
            MessageKind::ChLeave => "ch_leave",
            MessageKind::ChAssign => "ch_assign",
            MessageKind::RouteRequest => "rreq",
            MessageKind::RouteReply => "rrep",
            MessageKind::RouteError => "rerr",
            MessageKind::RoutingUpdate => "routing_update",
            MessageKind::Data => "data",
            MessageKind::RsuReport => "rsu_report",
            MessageKind::RsuAdvisory => "rsu_advisory",
            MessageKind::Enquiry => "enquiry",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_control(self) -> bool {
        self != MessageKind::Data
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Destination {
    Node(NodeId),
    Broadcast,
    Rsu(NodeId),
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Destination::Node(n) => write!(f, "{n}"),
            Destination::Broadcast => f.write_str("*"),
            Destination::Rsu(n) => write!(f, "rsu{n}"),
        }
    }
}

/// Wire sizes used to derive transmission delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageSizes {
    pub hello: u32,
    pub control: u32,
    pub data: u32,
}

impl Default for MessageSizes {
    fn default() -> Self {
        Self { hello: 32, control: 64, data: 512 }
    }
}

impl MessageSizes {
    pub fn for_kind(&self, kind: MessageKind) -> u32 {
        match kind {
            MessageKind::Hello => self.hello,
            MessageKind::Data => self.data,
            _ => self.control,
        }
    }
}

/// A frame on the air. The payload is shared between all receivers of a
/// broadcast.
#[derive(Debug)]
pub struct Message<P> {
    pub id: MsgId,
    pub kind: MessageKind,
    pub src: NodeId,
    pub dst: Destination,
    pub payload: Rc<P>,
    pub size_bytes: u32,
    pub created_at: f64,
}

impl<P> Clone for Message<P> {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            kind: self.kind,
            src: self.src,
            dst: self.dst,
            payload: Rc::clone(&self.payload),
            size_bytes: self.size_bytes,
            created_at: self.created_at,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in MessageKind::ALL {
            assert_eq!(MessageKind::from_name(k.name()), Some(k));
            assert_eq!(MessageKind::ALL[k.index()], k);
        }
        assert!(!MessageKind::Data.is_control());
        assert!(MessageKind::Hello.is_control());
    }

    #[test]
    fn sizes_are_positive() {
        let s = MessageSizes::default();
        assert!(MessageKind::ALL.iter().all(|k| s.for_kind(*k) > 0));
        assert_eq!(s.for_kind(MessageKind::Data), 512);
    }
}

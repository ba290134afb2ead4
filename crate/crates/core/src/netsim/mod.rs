//! Discrete-event engine, wire messages and the unit-disk radio.

mod engine;
mod message;
mod radio;

use thiserror::Error;

pub use engine::{Scheduler, SimEvent};
pub use message::{Destination, Message, MessageKind, MessageSizes, MsgId};
pub use radio::{DeliveryRecord, Outcome, Radio, RadioConfig, RadioStats, Reception};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("event scheduled at t={time} but the clock is already at t={now}")]
    PastEvent { time: f64, now: f64 },
}

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::message::{MessageKind, MsgId};
use crate::cluster::NodeId;
use crate::mobility::Point;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    pub range_m: f64,
    pub p_loss: f64,
    pub bitrate_bps: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self { range_m: 100.0, p_loss: 0.05, bitrate_bps: 6.0e6 }
    }
}

impl RadioConfig {
    pub fn transmission_delay(&self, size_bytes: u32) -> f64 {
        size_bytes as f64 * 8.0 / self.bitrate_bps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Delivered,
    Lost,
    OutOfRange,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Delivered => "delivered",
            Outcome::Lost => "lost",
            Outcome::OutOfRange => "out_of_range",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryRecord {
    pub time: f64,
    pub msg_id: MsgId,
    pub kind: MessageKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub outcome: Outcome,
}

impl DeliveryRecord {
    pub const CSV_HEADER: &'static str = "time,msg_id,kind,src,dst,outcome";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.time,
            self.msg_id,
            self.kind,
            self.src,
            self.dst,
            self.outcome.name()
        )
    }
}

/// Per-run radio accounting. One "send" is one (transmission, intended
/// receiver) pair: every in-range neighbor of a broadcast, or the target of
/// a unicast.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RadioStats {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub out_of_range: u64,
    pub delivered_by_kind: [u64; MessageKind::COUNT],
    /// Deliveries transmitted at or after the metrics window start.
    pub counted_by_kind: [u64; MessageKind::COUNT],
    pub max_delivery_distance: f64,
}

impl RadioStats {
    pub fn conserved(&self) -> bool {
        self.sent == self.delivered + self.lost + self.out_of_range
    }

    pub fn counted_total(&self) -> u64 {
        self.counted_by_kind.iter().sum()
    }
}

/// Unit-disk radio with independent Bernoulli loss.
#[derive(Debug)]
pub struct Radio {
    config: RadioConfig,
    loss: ChaCha8Rng,
    stats: RadioStats,
    count_from: f64,
    log: Option<Vec<DeliveryRecord>>,
    digest: Sha256,
}

/// A scheduled reception.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reception {
    pub receiver: NodeId,
    pub arrival: f64,
}

fn distance(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

impl Radio {
    /// `count_from` is the start of the metrics window (end of warm-up).
    pub fn new(config: RadioConfig, loss: ChaCha8Rng, count_from: f64, keep_log: bool) -> Self {
        Self {
            config,
            loss,
            stats: RadioStats::default(),
            count_from,
            log: keep_log.then(Vec::new),
            digest: Sha256::new(),
        }
    }

    pub fn config(&self) -> &RadioConfig {
        &self.config
    }

    pub fn set_loss(&mut self, p_loss: f64) {
        self.config.p_loss = p_loss;
    }

    pub fn stats(&self) -> &RadioStats {
        &self.stats
    }

    pub fn log(&self) -> Option<&[DeliveryRecord]> {
        self.log.as_deref()
    }

    /// SHA-256 over every delivery record of the run so far.
    pub fn trace_digest(&self) -> String {
        hex::encode(self.digest.clone().finalize())
    }

    pub fn in_range(&self, a: Point, b: Point) -> bool {
        distance(a, b) <= self.config.range_m
    }

    fn record(&mut self, time: f64, msg_id: MsgId, kind: MessageKind, src: NodeId, dst: NodeId, outcome: Outcome) {
        self.stats.sent += 1;
        match outcome {
            Outcome::Delivered => {
                self.stats.delivered += 1;
                self.stats.delivered_by_kind[kind.index()] += 1;
                if time >= self.count_from {
                    self.stats.counted_by_kind[kind.index()] += 1;
                }
            }
            Outcome::Lost => self.stats.lost += 1,
            Outcome::OutOfRange => self.stats.out_of_range += 1,
        }
        self.digest.update(time.to_le_bytes());
        self.digest.update(msg_id.to_le_bytes());
        self.digest.update([kind.index() as u8, outcome as u8]);
        self.digest.update(src.to_le_bytes());
        self.digest.update(dst.to_le_bytes());
        if let Some(log) = self.log.as_mut() {
            log.push(DeliveryRecord { time, msg_id, kind, src, dst, outcome });
        }
    }

    fn survives(&mut self) -> bool {
        self.config.p_loss <= 0.0 || self.loss.gen::<f64>() >= self.config.p_loss
    }

    fn arrival(&mut self, now: f64, d: f64, size_bytes: u32) -> f64 {
        assert!(d <= self.config.range_m, "delivery beyond radio range: {d} m");
        if d > self.stats.max_delivery_distance {
            self.stats.max_delivery_distance = d;
        }
        now + self.config.transmission_delay(size_bytes) + d / SPEED_OF_LIGHT
    }

    /// Delivers to every node within range that survives the loss draw.
    /// `positions` is indexed by node id; `None` marks nodes without a radio.
    pub fn broadcast(
        &mut self,
        now: f64,
        msg_id: MsgId,
        kind: MessageKind,
        size_bytes: u32,
        sender: NodeId,
        positions: &[Option<Point>],
    ) -> Vec<Reception> {
        let Some(origin) = positions.get(sender as usize).copied().flatten() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (id, pos) in positions.iter().enumerate() {
            let id = id as NodeId;
            let Some(pos) = pos else { continue };
            if id == sender {
                continue;
            }
            let d = distance(origin, *pos);
            if d > self.config.range_m {
                continue;
            }
            if self.survives() {
                let arrival = self.arrival(now, d, size_bytes);
                self.record(now, msg_id, kind, sender, id, Outcome::Delivered);
                out.push(Reception { receiver: id, arrival });
            } else {
                self.record(now, msg_id, kind, sender, id, Outcome::Lost);
            }
        }
        out
    }

    /// Single-target transmission. Retrying is left to the caller.
    #[allow(clippy::too_many_arguments)]
    pub fn unicast(
        &mut self,
        now: f64,
        msg_id: MsgId,
        kind: MessageKind,
        size_bytes: u32,
        sender: NodeId,
        target: NodeId,
        positions: &[Option<Point>],
    ) -> Option<Reception> {
        let from = positions.get(sender as usize).copied().flatten();
        let to = positions.get(target as usize).copied().flatten();
        let (Some(from), Some(to)) = (from, to) else {
            self.record(now, msg_id, kind, sender, target, Outcome::OutOfRange);
            return None;
        };
        let d = distance(from, to);
        if target == sender || d > self.config.range_m {
            self.record(now, msg_id, kind, sender, target, Outcome::OutOfRange);
            return None;
        }
        if self.survives() {
            let arrival = self.arrival(now, d, size_bytes);
            self.record(now, msg_id, kind, sender, target, Outcome::Delivered);
            Some(Reception { receiver: target, arrival })
        } else {
            self.record(now, msg_id, kind, sender, target, Outcome::Lost);
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn radio(p_loss: f64) -> Radio {
        Radio::new(RadioConfig { p_loss, ..Default::default() }, stream(1, Stream::Loss), 0.0, true)
    }

    fn line(xs: &[f64]) -> Vec<Option<Point>> {
        xs.iter().map(|x| Some((*x, 0.0))).collect()
    }

    #[test]
    fn range_boundary() {
        let mut r = radio(0.0);
        let pos = line(&[0.0, 99.0, 101.0]);
        let got = r.broadcast(0.0, 1, MessageKind::Hello, 32, 0, &pos);
        assert_eq!(got.iter().map(|x| x.receiver).collect::<Vec<_>>(), vec![1]);
        assert!(r.unicast(0.0, 2, MessageKind::Data, 512, 0, 1, &pos).is_some());
        assert!(r.unicast(0.0, 3, MessageKind::Data, 512, 0, 2, &pos).is_none());
        assert!(r.stats().conserved());
        assert_eq!(r.stats().out_of_range, 1);
    }

    #[test]
    fn total_loss() {
        let mut r = radio(1.0);
        let pos = line(&[0.0, 10.0, 20.0, 30.0, 500.0]);
        assert!(r.broadcast(0.0, 1, MessageKind::Hello, 32, 0, &pos).is_empty());
        assert_eq!(r.stats().lost, 3);
        assert_eq!(r.stats().delivered, 0);
        assert!(r.stats().conserved());
    }

    #[test]
    fn seeded_loss_is_reproducible() {
        let pos = line(&[0.0, 50.0]);
        let draw = || {
            let mut r = radio(0.5);
            (0..64).map(|i| r.unicast(0.0, i, MessageKind::Data, 512, 0, 1, &pos).is_some()).collect::<Vec<_>>()
        };
        let a = draw();
        assert_eq!(a, draw());
        assert!(a.iter().any(|x| *x) && a.iter().any(|x| !*x));
    }

    #[test]
    fn arrival_includes_transmission_delay() {
        let mut r = radio(0.0);
        let pos = line(&[0.0, 30.0]);
        let rx = r.unicast(1.0, 1, MessageKind::Data, 750, 0, 1, &pos).unwrap();
        let expected = 1.0 + 750.0 * 8.0 / 6.0e6 + 30.0 / SPEED_OF_LIGHT;
        assert!((rx.arrival - expected).abs() < 1e-12);
    }

    #[test]
    fn counted_window_excludes_warmup() {
        let mut r = Radio::new(RadioConfig { p_loss: 0.0, ..Default::default() }, stream(1, Stream::Loss), 10.0, false);
        let pos = line(&[0.0, 30.0]);
        r.unicast(5.0, 1, MessageKind::Hello, 32, 0, 1, &pos);
        r.unicast(10.0, 2, MessageKind::Hello, 32, 0, 1, &pos);
        assert_eq!(r.stats().delivered, 2);
        assert_eq!(r.stats().counted_total(), 1);
    }

    #[test]
    fn digest_tracks_trace() {
        let pos = line(&[0.0, 30.0]);
        let mut a = radio(0.0);
        let mut b = radio(0.0);
        a.unicast(0.0, 1, MessageKind::Data, 512, 0, 1, &pos);
        b.unicast(0.0, 1, MessageKind::Data, 512, 0, 1, &pos);
        assert_eq!(a.trace_digest(), b.trace_digest());
        b.unicast(0.0, 2, MessageKind::Data, 512, 0, 1, &pos);
        assert_ne!(a.trace_digest(), b.trace_digest());
    }
}

//! Per-run performance metrics.

use crate::mobility::SpeedClass;
use crate::protocols::{Counter, ProtocolKind};
use crate::world::Ledger;
use crate::netsim::RadioStats;

/// Delivered route attempts over all attempts; NaN when nothing was attempted.
pub fn reachability(ledger: &Ledger) -> f64 {
    let attempts = ledger.attempts();
    if attempts == 0 {
        f64::NAN
    } else {
        ledger.successes() as f64 / attempts as f64
    }
}

/// Mean end-to-end delay of delivered packets in seconds; NaN when none arrived.
pub fn average_ete(ledger: &Ledger) -> f64 {
    let pairs = ledger.delivery_pairs();
    if pairs.is_empty() {
        f64::NAN
    } else {
        pairs.iter().map(|(tx, rx)| rx - tx).sum::<f64>() / pairs.len() as f64
    }
}

/// Frames received by any node inside the metrics window, all kinds.
pub fn total_traffic_received(stats: &RadioStats) -> u64 {
    stats.counted_total()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub protocol: ProtocolKind,
    pub class: SpeedClass,
    pub seed: u64,
    pub reachability: f64,
    pub ete: f64,
    pub traffic: u64,
    pub generated: usize,
    pub attempts: usize,
    pub successes: usize,
    pub drop_rule_violations: u64,
    pub radio_conserved: bool,
    pub trace_digest: String,
}

impl MetricsReport {
    pub fn from_run(protocol: ProtocolKind, class: SpeedClass, seed: u64, ledger: &Ledger, stats: &RadioStats, trace_digest: String) -> Self {
        Self {
            protocol,
            class,
            seed,
            reachability: reachability(ledger),
            ete: average_ete(ledger),
            traffic: total_traffic_received(stats),
            generated: ledger.generated(),
            attempts: ledger.attempts(),
            successes: ledger.successes(),
            drop_rule_violations: ledger.counter(Counter::DropRuleViolation),
            radio_conserved: stats.conserved(),
            trace_digest,
        }
    }
}

//! Scenario configuration, repeated runs, metrics and CSV output.

pub mod checks;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod output;
pub mod stats;

pub use config::{ConfigError, ScenarioConfig};
pub use experiment::{build_world, run_experiment, run_replication, static_world, ExperimentError};
pub use metrics::{average_ete, reachability, total_traffic_received, MetricsReport};
pub use output::{emit_csv, parse_csv, summarize_reports, CsvMeta, ParseCsvError, SummaryRow};
pub use stats::{summarize, Summary};
pub use checks::{ch_uniqueness, membership_sound, snapshots, CheckFailure};

//! Scenario configuration: presets, a flat `key = value` file format and
//! validation.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::loco::LocoFormat;
use crate::mobility::{MapConfig, MapSpec, SpeedClass};
use crate::netsim::RadioConfig;
use crate::protocols::{ProtocolKind, ProtocolParams};
use crate::world::SimSetup;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("unknown preset {0:?} (expected paper or small)")]
    UnknownPreset(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub preset: String,
    pub width_m: f64,
    pub height_m: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub rsu_anchors_per_road: usize,
    pub nodes: usize,
    pub classes: Vec<SpeedClass>,
    pub protocols: Vec<ProtocolKind>,
    pub range_m: f64,
    pub p_loss: f64,
    pub bitrate_bps: f64,
    pub duration: f64,
    pub warmup: f64,
    pub drain: f64,
    pub mobility_step: f64,
    pub traffic_rate: f64,
    pub repetitions: usize,
    pub base_seed: u64,
    pub params: ProtocolParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::small()
    }
}

fn bad(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| bad(key, value, e))
}

fn flag(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn pair<T: std::str::FromStr>(key: &str, value: &str) -> Result<(T, T), ConfigError>
where
    T::Err: std::fmt::Display,
{
    let (a, b) = value
        .split_once(['x', 'X'])
        .ok_or_else(|| bad(key, value, "expected AxB"))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

impl ScenarioConfig {
    /// Table-scale setup: 100 vehicles on a 1000 m square for 2000 s, 200 repetitions.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            width_m: 1000.0,
            height_m: 1000.0,
            grid_rows: 2,
            grid_cols: 2,
            rsu_anchors_per_road: 2,
            nodes: 100,
            classes: SpeedClass::ALL.to_vec(),
            protocols: ProtocolKind::ALL.to_vec(),
            range_m: 100.0,
            p_loss: 0.05,
            bitrate_bps: 6.0e6,
            duration: 2000.0,
            warmup: 100.0,
            drain: 10.0,
            mobility_step: 0.1,
            traffic_rate: 0.2,
            repetitions: 200,
            base_seed: 1,
            params: ProtocolParams::default(),
        }
    }

    /// Desk-scale setup: 30 vehicles on a 500 m square for 300 s, 30 repetitions.
    pub fn small() -> Self {
        Self {
            preset: "small".into(),
            width_m: 500.0,
            height_m: 500.0,
            grid_rows: 1,
            grid_cols: 1,
            nodes: 30,
            duration: 300.0,
            repetitions: 30,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Self::paper()),
            "small" => Ok(Self::small()),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    /// Parses a scenario file on top of `base`. A `preset` key, wherever it
    /// appears, is applied before every other key.
    pub fn parse(text: &str, base: ScenarioConfig) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            pairs.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
        let mut config = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, v)) => Self::preset(v)?,
            None => base,
        };
        for (k, v) in &pairs {
            if k != "preset" {
                config.set(k, v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let p = &mut self.params;
        match key {
            "area" => (self.width_m, self.height_m) = pair(key, value)?,
            "width" => self.width_m = num(key, value)?,
            "height" => self.height_m = num(key, value)?,
            "grid" => (self.grid_rows, self.grid_cols) = pair(key, value)?,
            "rsu_anchors" => self.rsu_anchors_per_road = num(key, value)?,
            "nodes" => self.nodes = num(key, value)?,
            "speed_classes" => {
                self.classes = value
                    .split(',')
                    .map(|s| SpeedClass::parse(s.trim()).ok_or_else(|| bad(key, value, "expected slow, med or fast")))
                    .collect::<Result<_, _>>()?
            }
            "protocols" | "protocol" => {
                self.protocols = value
                    .split(',')
                    .map(|s| ProtocolKind::parse(s).ok_or_else(|| bad(key, value, "expected acr, aodv or dsdv")))
                    .collect::<Result<_, _>>()?
            }
            "mad" => p.mad_m = num(key, value)?,
            "range" => self.range_m = num(key, value)?,
            "p_loss" => self.p_loss = num(key, value)?,
            "bitrate" => self.bitrate_bps = num(key, value)?,
            "duration" => self.duration = num(key, value)?,
            "warmup" => self.warmup = num(key, value)?,
            "drain" => self.drain = num(key, value)?,
            "mobility_step" => self.mobility_step = num(key, value)?,
            "traffic_rate" => self.traffic_rate = num(key, value)?,
            "repetitions" | "reps" => self.repetitions = num(key, value)?,
            "seed" => self.base_seed = num(key, value)?,
            "road_bits" => p.format = LocoFormat::new(num(key, value)?).map_err(|e| bad(key, value, e))?,
            "hello_bytes" => p.sizes.hello = num(key, value)?,
            "control_bytes" => p.sizes.control = num(key, value)?,
            "data_bytes" => p.sizes.data = num(key, value)?,
            "hello_interval" => p.hello_interval = num(key, value)?,
            "entry_ttl" => p.entry_ttl = num(key, value)?,
            "discovery_timeout" => p.discovery_timeout = num(key, value)?,
            "discovery_retries" => p.discovery_retries = num(key, value)?,
            "route_lifetime" => p.route_lifetime = num(key, value)?,
            "link_attempts" => p.link_attempts = num(key, value)?,
            "dsdv_full_dump" => p.dsdv_full_dump_period = num(key, value)?,
            "dsdv_neighbor_timeout" => p.dsdv_neighbor_timeout = num(key, value)?,
            "join_timeout" => p.join_timeout = num(key, value)?,
            "enquiry_timeout" => p.enquiry_timeout = num(key, value)?,
            "leave_timeout" => p.leave_timeout = num(key, value)?,
            "ch_leave_horizon" => p.ch_leave_horizon = num(key, value)?,
            "rsu_silence_window" => p.rsu_silence_window = num(key, value)?,
            "rsu_advisory_period" => p.rsu_advisory_period = num(key, value)?,
            "rsu_report_ttl" => p.rsu_report_ttl = num(key, value)?,
            "rsu_bridge" => p.rsu_bridge = flag(key, value)?,
            "ttl_fallback" => p.use_ttl_fallback = flag(key, value)?,
            "rsu_pass_rule" => p.use_rsu_pass_rule = flag(key, value)?,
            "backbone_delay" => p.backbone_delay = num(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let p = &self.params;
        let positive = [
            self.width_m,
            self.height_m,
            self.range_m,
            self.bitrate_bps,
            self.duration,
            self.mobility_step,
            p.hello_interval,
            p.entry_ttl,
            p.mad_m,
            p.discovery_timeout,
            p.route_lifetime,
            p.dsdv_full_dump_period,
            p.dsdv_neighbor_timeout,
            p.join_timeout,
            p.enquiry_timeout,
            p.leave_timeout,
        ];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return fail("areas, ranges, durations, timers and MAD must be positive and finite");
        }
        if !(self.warmup >= 0.0 && self.warmup < self.duration) {
            return fail("warm-up must be non-negative and shorter than the duration");
        }
        if !(self.drain >= 0.0 && self.warmup < self.duration - self.drain) {
            return fail("the drain period leaves no measurement window");
        }
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1");
        }
        if self.nodes < 2 {
            return fail("at least two vehicles are needed");
        }
        if p.mad_m > self.range_m {
            return fail("MAD must not exceed the radio range");
        }
        if !(0.0..=1.0).contains(&self.p_loss) {
            return fail("p_loss must lie in [0, 1]");
        }
        if !(self.traffic_rate >= 0.0 && self.traffic_rate.is_finite()) {
            return fail("traffic rate must be non-negative");
        }
        if self.grid_rows + self.grid_cols == 0 {
            return fail("the grid needs at least one road");
        }
        if self.classes.is_empty() || self.protocols.is_empty() {
            return fail("at least one speed class and one protocol are required");
        }
        if p.link_attempts == 0 {
            return fail("link_attempts must be at least 1");
        }
        if p.sizes.hello == 0 || p.sizes.control == 0 || p.sizes.data == 0 {
            return fail("message sizes must be positive");
        }
        Ok(())
    }

    /// Canonical `key = value` listing; parsing it back yields the same config.
    pub fn to_kv(&self) -> String {
        let p = &self.params;
        let classes: Vec<&str> = self.classes.iter().map(|c| c.name()).collect();
        let protocols: Vec<&str> = self.protocols.iter().map(|p| p.name()).collect();
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("preset", self.preset.clone());
        put("area", format!("{}x{}", self.width_m, self.height_m));
        put("grid", format!("{}x{}", self.grid_rows, self.grid_cols));
        put("rsu_anchors", self.rsu_anchors_per_road.to_string());
        put("nodes", self.nodes.to_string());
        put("speed_classes", classes.join(","));
        put("protocols", protocols.join(","));
        put("mad", p.mad_m.to_string());
        put("range", self.range_m.to_string());
        put("p_loss", self.p_loss.to_string());
        put("bitrate", self.bitrate_bps.to_string());
        put("duration", self.duration.to_string());
        put("warmup", self.warmup.to_string());
        put("drain", self.drain.to_string());
        put("mobility_step", self.mobility_step.to_string());
        put("traffic_rate", self.traffic_rate.to_string());
        put("repetitions", self.repetitions.to_string());
        put("seed", self.base_seed.to_string());
        put("road_bits", p.format.road_bits().to_string());
        put("hello_bytes", p.sizes.hello.to_string());
        put("control_bytes", p.sizes.control.to_string());
        put("data_bytes", p.sizes.data.to_string());
        put("hello_interval", p.hello_interval.to_string());
        put("entry_ttl", p.entry_ttl.to_string());
        put("discovery_timeout", p.discovery_timeout.to_string());
        put("discovery_retries", p.discovery_retries.to_string());
        put("route_lifetime", p.route_lifetime.to_string());
        put("link_attempts", p.link_attempts.to_string());
        put("dsdv_full_dump", p.dsdv_full_dump_period.to_string());
        put("dsdv_neighbor_timeout", p.dsdv_neighbor_timeout.to_string());
        put("join_timeout", p.join_timeout.to_string());
        put("enquiry_timeout", p.enquiry_timeout.to_string());
        put("leave_timeout", p.leave_timeout.to_string());
        put("ch_leave_horizon", p.ch_leave_horizon.to_string());
        put("rsu_silence_window", p.rsu_silence_window.to_string());
        put("rsu_advisory_period", p.rsu_advisory_period.to_string());
        put("rsu_report_ttl", p.rsu_report_ttl.to_string());
        put("rsu_bridge", p.rsu_bridge.to_string());
        put("ttl_fallback", p.use_ttl_fallback.to_string());
        put("rsu_pass_rule", p.use_rsu_pass_rule.to_string());
        put("backbone_delay", p.backbone_delay.to_string());
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical listing.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn map_config(&self) -> MapConfig {
        MapConfig {
            width_m: self.width_m,
            height_m: self.height_m,
            spec: MapSpec::Grid { rows: self.grid_rows, cols: self.grid_cols },
            format: self.params.format,
            rsu_anchors_per_road: self.rsu_anchors_per_road,
        }
    }

    /// The seed of repetition `rep`.
    pub fn seed_for(&self, rep: usize) -> u64 {
        self.base_seed.wrapping_add(rep as u64)
    }

    pub fn sim_setup(&self, seed: u64) -> SimSetup {
        SimSetup {
            seed,
            duration: self.duration,
            warmup: self.warmup,
            mobility_step: self.mobility_step,
            traffic_rate: self.traffic_rate,
            drain: self.drain,
            radio: RadioConfig { range_m: self.range_m, p_loss: self.p_loss, bitrate_bps: self.bitrate_bps },
            params: self.params.clone(),
            keep_log: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_their_definitions() {
        let p = ScenarioConfig::paper();
        assert_eq!((p.duration, p.repetitions, p.nodes, p.range_m, p.warmup), (2000.0, 200, 100, 100.0, 100.0));
        assert_eq!((p.width_m, p.height_m), (1000.0, 1000.0));
        let s = ScenarioConfig::small();
        assert_eq!((s.nodes, s.width_m, s.duration, s.warmup, s.repetitions), (30, 500.0, 300.0, 100.0, 30));
        assert!(p.validate().is_ok() && s.validate().is_ok());
    }

    #[test]
    fn parse_overrides_and_preset_first() {
        let text = "# scenario\nnodes = 12\npreset = paper\nspeed_classes = slow, fast\nrsu_bridge = on\n";
        let c = ScenarioConfig::parse(text, ScenarioConfig::small()).unwrap();
        assert_eq!(c.preset, "paper");
        assert_eq!(c.nodes, 12);
        assert_eq!(c.classes, vec![SpeedClass::Slow, SpeedClass::Fast]);
        assert!(c.params.rsu_bridge);
        assert_eq!(c.duration, 2000.0);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let base = ScenarioConfig::small;
        assert!(matches!(ScenarioConfig::parse("warmup = 300", base()), Err(ConfigError::Invalid(_))));
        assert!(matches!(ScenarioConfig::parse("mad = 150", base()), Err(ConfigError::Invalid(_))));
        assert!(matches!(ScenarioConfig::parse("repetitions = 0", base()), Err(ConfigError::Invalid(_))));
        assert!(matches!(ScenarioConfig::parse("colour = red", base()), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(ScenarioConfig::parse("nodes", base()), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(ScenarioConfig::parse("nodes = many", base()), Err(ConfigError::BadValue { .. })));
        assert!(matches!(ScenarioConfig::parse("preset = huge", base()), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn canonical_listing_round_trips() {
        let mut c = ScenarioConfig::paper();
        c.params.mad_m = 60.0;
        c.protocols = vec![ProtocolKind::Dsdv];
        c.params.rsu_bridge = true;
        let back = ScenarioConfig::parse(&c.to_kv(), ScenarioConfig::small()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_tracks_every_parameter() {
        let base = ScenarioConfig::small();
        let h = base.hash();
        assert_eq!(h, ScenarioConfig::small().hash());
        for (k, v) in [("nodes", "31"), ("p_loss", "0.06"), ("route_lifetime", "11"), ("seed", "2"), ("rsu_bridge", "true")] {
            let mut c = base.clone();
            c.set(k, v).unwrap();
            assert_ne!(c.hash(), h, "{k}");
        }
    }
}

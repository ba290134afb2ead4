//! Synthetic road maps and constant-speed lane kinematics.
//!
//! Roads are straight two-lane segments laid on a grid. Vehicles keep their
//! road, lane and speed for the whole run; a vehicle reaching a road end
//! re-enters at the opposite end of the same lane.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::cluster::NodeId;
use crate::loco::{BitString, LaneDirection, LocoAddress, LocoError, LocoFormat};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MobilityError {
    #[error("map has no roads")]
    NoRoads,
    #[error("duplicate road id {0}")]
    DuplicateRoad(u64),
    #[error("road {0} has non-positive length")]
    BadLength(u64),
    #[error("road {road} does not fit inside the {width}x{height} m area")]
    OutsideArea { road: u64, width: f64, height: f64 },
    #[error("speed class weights must be non-negative and sum to 1, got {0:?}")]
    BadClassMix([f64; 3]),
    #[error("vehicle count must be at least 1")]
    NoVehicles,
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error(transparent)]
    Address(#[from] LocoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpeedClass {
    Slow,
    Medium,
    Fast,
}

impl SpeedClass {
    pub const ALL: [SpeedClass; 3] = [SpeedClass::Slow, SpeedClass::Medium, SpeedClass::Fast];

    /// Speed interval in m/s.
    pub fn range(self) -> (f64, f64) {
        match self {
            SpeedClass::Slow => (0.0, 4.0),
            SpeedClass::Medium => (6.0, 10.0),
            SpeedClass::Fast => (12.0, 16.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpeedClass::Slow => "slow",
            SpeedClass::Medium => "med",
            SpeedClass::Fast => "fast",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slow" => Some(SpeedClass::Slow),
            "med" | "medium" => Some(SpeedClass::Medium),
            "fast" => Some(SpeedClass::Fast),
            _ => None,
        }
    }

    /// Weight vector selecting only this class.
    pub fn one_hot(self) -> [f64; 3] {
        let mut w = [0.0; 3];
        w[self as usize] = 1.0;
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

pub type Point = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub road_id: BitString,
    pub orientation: Orientation,
    /// Fixed coordinate of the road axis (y for horizontal, x for vertical).
    pub offset_m: f64,
    pub length_m: f64,
    /// Positions along the road where roadside units are installed.
    pub rsu_anchors: Vec<f64>,
}

impl Road {
    pub fn point(&self, position_m: f64) -> Point {
        match self.orientation {
            Orientation::Horizontal => (position_m, self.offset_m),
            Orientation::Vertical => (self.offset_m, position_m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSpec {
    pub road_id: u64,
    pub orientation: Orientation,
    pub offset_m: f64,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapSpec {
    /// `rows` horizontal and `cols` vertical roads spanning the area.
    Grid { rows: usize, cols: usize },
    Roads(Vec<RoadSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub spec: MapSpec,
    pub format: LocoFormat,
    pub rsu_anchors_per_road: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            width_m: 1000.0,
            height_m: 1000.0,
            spec: MapSpec::Grid { rows: 2, cols: 2 },
            format: LocoFormat::default(),
            rsu_anchors_per_road: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadMap {
    pub roads: Vec<Road>,
    pub width_m: f64,
    pub height_m: f64,
    pub format: LocoFormat,
}

impl RoadMap {
    pub fn total_length(&self) -> f64 {
        self.roads.iter().map(|r| r.length_m).sum()
    }

    pub fn point(&self, v: &Vehicle) -> Point {
        self.roads[v.road].point(v.position_m)
    }

    pub fn loco(&self, v: &Vehicle) -> Result<LocoAddress, LocoError> {
        let road = &self.roads[v.road];
        self.format.encode(road.road_id, v.lane, v.position_m, road.length_m)
    }
}

pub fn build_map(config: &MapConfig) -> Result<RoadMap, MobilityError> {
    let specs = match &config.spec {
        MapSpec::Grid { rows, cols } => {
            let mut specs = Vec::with_capacity(rows + cols);
            for i in 0..*rows {
                specs.push(RoadSpec {
                    road_id: (i + 1) as u64,
                    orientation: Orientation::Horizontal,
                    offset_m: (i as f64 + 0.5) * config.height_m / *rows as f64,
                    length_m: config.width_m,
                });
            }
            for j in 0..*cols {
                specs.push(RoadSpec {
                    road_id: (rows + j + 1) as u64,
                    orientation: Orientation::Vertical,
                    offset_m: (j as f64 + 0.5) * config.width_m / *cols as f64,
                    length_m: config.height_m,
                });
            }
            specs
        }
        MapSpec::Roads(specs) => specs.clone(),
    };
    if specs.is_empty() {
        return Err(MobilityError::NoRoads);
    }
    let mut seen = BTreeSet::new();
    let mut roads = Vec::with_capacity(specs.len());
    for s in specs {
        if !seen.insert(s.road_id) {
            return Err(MobilityError::DuplicateRoad(s.road_id));
        }
        if !(s.length_m > 0.0) {
            return Err(MobilityError::BadLength(s.road_id));
        }
        let (span, cross) = match s.orientation {
            Orientation::Horizontal => (config.width_m, config.height_m),
            Orientation::Vertical => (config.height_m, config.width_m),
        };
        if s.length_m > span || s.offset_m < 0.0 || s.offset_m > cross {
            return Err(MobilityError::OutsideArea {
                road: s.road_id,
                width: config.width_m,
                height: config.height_m,
            });
        }
        let k = config.rsu_anchors_per_road;
        let rsu_anchors = (0..k).map(|i| (i as f64 + 0.5) * s.length_m / k as f64).collect();
        roads.push(Road {
            road_id: config.format.road_id(s.road_id)?,
            orientation: s.orientation,
            offset_m: s.offset_m,
            length_m: s.length_m,
            rsu_anchors,
        });
    }
    Ok(RoadMap { roads, width_m: config.width_m, height_m: config.height_m, format: config.format })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub node_id: NodeId,
    /// Index into [`RoadMap::roads`].
    pub road: usize,
    pub lane: LaneDirection,
    pub position_m: f64,
    pub speed_mps: f64,
    pub class: SpeedClass,
}

impl Vehicle {
    pub fn trajectory_row(&self, time: f64, map: &RoadMap) -> String {
        format!(
            "{},{},{},{},{}",
            time,
            self.node_id,
            map.roads[self.road].road_id,
            self.lane.bit(),
            self.position_m
        )
    }
}

/// Stationary vehicles at the given (road index, lane, position) spots, ids in order.
pub fn parked(spots: &[(usize, LaneDirection, f64)]) -> Vec<Vehicle> {
    spots
        .iter()
        .enumerate()
        .map(|(i, &(road, lane, position_m))| Vehicle {
            node_id: i as NodeId,
            road,
            lane,
            position_m,
            speed_mps: 0.0,
            class: SpeedClass::Slow,
        })
        .collect()
}

fn validate_mix(mix: [f64; 3]) -> Result<(), MobilityError> {
    let sum: f64 = mix.iter().sum();
    if mix.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(MobilityError::BadClassMix(mix));
    }
    Ok(())
}

/// Places `n` vehicles uniformly over all lanes and draws each one a constant
/// speed from its class interval. Placement and speeds use separate streams,
/// so the same seed places vehicles identically whatever the class mix.
pub fn spawn_vehicles(map: &RoadMap, n: usize, seed: u64, class_mix: [f64; 3]) -> Result<Vec<Vehicle>, MobilityError> {
    if n == 0 {
        return Err(MobilityError::NoVehicles);
    }
    validate_mix(class_mix)?;
    let mut placement = stream(seed, Stream::Placement);
    let mut speeds = stream(seed, Stream::Speeds);
    let total = map.total_length();
    let mut vehicles = Vec::with_capacity(n);
    for id in 0..n {
        let mut pick = placement.gen::<f64>() * total;
        let mut road = map.roads.len() - 1;
        for (i, r) in map.roads.iter().enumerate() {
            if pick < r.length_m {
                road = i;
                break;
            }
            pick -= r.length_m;
        }
        let lane = if placement.gen::<bool>() { LaneDirection::Decreasing } else { LaneDirection::Increasing };
        let position_m = placement.gen::<f64>() * map.roads[road].length_m;

        let u = speeds.gen::<f64>();
        let class = if u < class_mix[0] {
            SpeedClass::Slow
        } else if u < class_mix[0] + class_mix[1] {
            SpeedClass::Medium
        } else {
            SpeedClass::Fast
        };
        // guard against a zero-weight class being selected by rounding
        let class = if class_mix[class as usize] == 0.0 {
            SpeedClass::ALL.into_iter().rev().find(|c| class_mix[*c as usize] > 0.0).unwrap_or(class)
        } else {
            class
        };
        let (lo, hi) = class.range();
        let speed_mps = lo + speeds.gen::<f64>() * (hi - lo);
        vehicles.push(Vehicle { node_id: id as NodeId, road, lane, position_m, speed_mps, class });
    }
    Ok(vehicles)
}

/// Outcome of one kinematic step for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Movement {
    pub node_id: NodeId,
    pub from_m: f64,
    pub to_m: f64,
    pub wrapped: bool,
}

impl Movement {
    /// Whether the vehicle drove over `anchor` during this step.
    pub fn crossed(&self, anchor: f64, lane: LaneDirection, length_m: f64) -> bool {
        let (from, to) = (self.from_m, self.to_m);
        match (lane, self.wrapped) {
            (LaneDirection::Increasing, false) => from < anchor && anchor <= to,
            (LaneDirection::Increasing, true) => from < anchor || anchor <= to,
            (LaneDirection::Decreasing, false) => to <= anchor && anchor < from,
            (LaneDirection::Decreasing, true) => anchor < from || (to <= anchor && anchor <= length_m),
        }
    }
}

pub fn advance(vehicles: &mut [Vehicle], map: &RoadMap, dt: f64) -> Result<Vec<Movement>, MobilityError> {
    if !(dt > 0.0) {
        return Err(MobilityError::BadTimeStep(dt));
    }
    Ok(vehicles
        .iter_mut()
        .map(|v| {
            let len = map.roads[v.road].length_m;
            let from = v.position_m;
            let raw = from + v.lane.sign() * v.speed_mps * dt;
            let wrapped = !(0.0..len).contains(&raw);
            let mut to = raw.rem_euclid(len);
            if to >= len {
                // rem_euclid can round up to len for tiny negative inputs
                to = 0.0;
            }
            v.position_m = to;
            Movement { node_id: v.node_id, from_m: from, to_m: to, wrapped }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_road(len: f64) -> RoadMap {
        build_map(&MapConfig {
            width_m: len,
            height_m: len,
            spec: MapSpec::Roads(vec![RoadSpec {
                road_id: 1,
                orientation: Orientation::Horizontal,
                offset_m: 0.0,
                length_m: len,
            }]),
            format: LocoFormat::default(),
            rsu_anchors_per_road: 1,
        })
        .unwrap()
    }

    fn car(lane: LaneDirection, pos: f64, speed: f64) -> Vehicle {
        Vehicle { node_id: 0, road: 0, lane, position_m: pos, speed_mps: speed, class: SpeedClass::Fast }
    }

    #[test]
    fn map_examples() {
        let one = single_road(1000.0);
        assert_eq!(one.roads.len(), 1);
        assert_eq!(one.roads[0].length_m, 1000.0);

        let grid = build_map(&MapConfig { spec: MapSpec::Grid { rows: 2, cols: 2 }, ..Default::default() }).unwrap();
        assert_eq!(grid.roads.len(), 4);
        let ids: BTreeSet<_> = grid.roads.iter().map(|r| r.road_id).collect();
        assert_eq!(ids.len(), 4);

        let dup = MapConfig {
            spec: MapSpec::Roads(vec![
                RoadSpec { road_id: 3, orientation: Orientation::Horizontal, offset_m: 10.0, length_m: 100.0 },
                RoadSpec { road_id: 3, orientation: Orientation::Vertical, offset_m: 10.0, length_m: 100.0 },
            ]),
            ..Default::default()
        };
        assert_eq!(build_map(&dup), Err(MobilityError::DuplicateRoad(3)));

        let empty = MapConfig { spec: MapSpec::Grid { rows: 0, cols: 0 }, ..Default::default() };
        assert_eq!(build_map(&empty), Err(MobilityError::NoRoads));
    }

    #[test]
    fn grid_roads_fill_the_area() {
        let m = build_map(&MapConfig {
            width_m: 500.0,
            height_m: 500.0,
            spec: MapSpec::Grid { rows: 1, cols: 1 },
            ..Default::default()
        })
        .unwrap();
        assert_eq!(m.roads[0].point(0.0), (0.0, 250.0));
        assert_eq!(m.roads[1].point(100.0), (250.0, 100.0));
        assert_eq!(m.roads[0].rsu_anchors, vec![125.0, 375.0]);
    }

    #[test]
    fn spawn_examples() {
        let map = build_map(&MapConfig::default()).unwrap();
        let a = spawn_vehicles(&map, 100, 42, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let b = spawn_vehicles(&map, 100, 42, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);

        let slow = spawn_vehicles(&map, 100, 42, [1.0, 0.0, 0.0]).unwrap();
        assert!(slow.iter().all(|v| (0.0..=4.0).contains(&v.speed_mps) && v.class == SpeedClass::Slow));

        let one = spawn_vehicles(&map, 1, 1, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].position_m >= 0.0 && one[0].position_m <= map.roads[one[0].road].length_m);
        assert!((12.0..=16.0).contains(&one[0].speed_mps));
    }

    #[test]
    fn placement_does_not_depend_on_class_mix() {
        let map = build_map(&MapConfig::default()).unwrap();
        let slow = spawn_vehicles(&map, 30, 9, SpeedClass::Slow.one_hot()).unwrap();
        let fast = spawn_vehicles(&map, 30, 9, SpeedClass::Fast.one_hot()).unwrap();
        for (s, f) in slow.iter().zip(&fast) {
            assert_eq!((s.road, s.lane, s.position_m), (f.road, f.lane, f.position_m));
        }
    }

    #[test]
    fn spawn_rejects_bad_mix() {
        let map = single_road(100.0);
        assert!(matches!(spawn_vehicles(&map, 3, 0, [0.5, 0.6, 0.0]), Err(MobilityError::BadClassMix(_))));
        assert_eq!(spawn_vehicles(&map, 0, 0, [1.0, 0.0, 0.0]), Err(MobilityError::NoVehicles));
    }

    #[test]
    fn advance_examples() {
        let map = single_road(1000.0);
        let mut v = vec![car(LaneDirection::Increasing, 0.0, 10.0)];
        advance(&mut v, &map, 1.0).unwrap();
        assert_eq!(v[0].position_m, 10.0);

        let mut v = vec![car(LaneDirection::Decreasing, 5.0, 10.0)];
        let m = advance(&mut v, &map, 1.0).unwrap();
        assert_eq!(v[0].position_m, 995.0);
        assert!(m[0].wrapped);

        assert_eq!(advance(&mut v, &map, 0.0), Err(MobilityError::BadTimeStep(0.0)));
    }

    #[test]
    fn crossing_detection() {
        let inc = Movement { node_id: 0, from_m: 90.0, to_m: 110.0, wrapped: false };
        assert!(inc.crossed(100.0, LaneDirection::Increasing, 1000.0));
        assert!(!inc.crossed(120.0, LaneDirection::Increasing, 1000.0));
        let dec = Movement { node_id: 0, from_m: 110.0, to_m: 90.0, wrapped: false };
        assert!(dec.crossed(100.0, LaneDirection::Decreasing, 1000.0));
        let wrap = Movement { node_id: 0, from_m: 995.0, to_m: 5.0, wrapped: true };
        assert!(wrap.crossed(2.0, LaneDirection::Increasing, 1000.0));
        assert!(!wrap.crossed(500.0, LaneDirection::Increasing, 1000.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn positions_stay_on_the_road(
                steps in proptest::collection::vec(0.001f64..50.0, 1..40),
                speed in 0.0f64..16.0,
                start in 0.0f64..1.0,
                dec in any::<bool>(),
            ) {
                let map = single_road(500.0);
                let lane = if dec { LaneDirection::Decreasing } else { LaneDirection::Increasing };
                let mut v = vec![car(lane, start * 500.0, speed)];
                for dt in steps {
                    advance(&mut v, &map, dt).unwrap();
                    prop_assert!(v[0].position_m >= 0.0 && v[0].position_m <= 500.0);
                    prop_assert!(map.loco(&v[0]).is_ok());
                }
            }
        }
    }

    #[test]
    fn mean_displacement_matches_speed() {
        let map = build_map(&MapConfig::default()).unwrap();
        let mut vs = spawn_vehicles(&map, 50, 3, [0.2, 0.3, 0.5]).unwrap();
        let mean_speed: f64 = vs.iter().map(|v| v.speed_mps).sum::<f64>() / vs.len() as f64;
        let mut travelled = 0.0;
        for _ in 0..10_000 {
            for m in advance(&mut vs, &map, 0.1).unwrap() {
                let len = map.roads[vs[m.node_id as usize].road].length_m;
                let mut d = (m.to_m - m.from_m).abs();
                if m.wrapped {
                    d = len - d;
                }
                travelled += d;
            }
        }
        let expected = mean_speed * vs.len() as f64 * 1000.0;
        assert!((travelled - expected).abs() / expected < 0.01);
    }
}

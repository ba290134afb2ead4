//! Roadside units: hierarchical addressing, CH report storage and advisories.

use std::collections::BTreeMap;
use std::fmt;

use crate::cluster::NodeId;
use crate::loco::{BitString, LaneDirection};
use crate::mobility::{Point, RoadMap};

/// Dotted RSU address such as `11`, `12` or `11.1`: road number followed by
/// the lane digit (1 = increasing lane, 2 = decreasing lane), then an
/// optional sub-road index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RsuAddress {
    pub road_number: u32,
    pub lane: LaneDirection,
    pub sub: Option<u32>,
}

impl RsuAddress {
    pub fn lane_digit(&self) -> u8 {
        match self.lane {
            LaneDirection::Increasing => 1,
            LaneDirection::Decreasing => 2,
        }
    }

    /// Whether `other` manages a sub-road of the segment this unit covers.
    pub fn covers(&self, other: &RsuAddress) -> bool {
        self.sub.is_none() && other.sub.is_some() && self.road_number == other.road_number && self.lane == other.lane
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (head, sub) = match s.split_once('.') {
            Some((h, t)) => (h, Some(t.parse().ok()?)),
            None => (s, None),
        };
        if head.len() < 2 || !head.is_ascii() {
            return None;
        }
        let (road, lane) = head.split_at(head.len() - 1);
        let lane = match lane {
            "1" => LaneDirection::Increasing,
            "2" => LaneDirection::Decreasing,
            _ => return None,
        };
        Some(Self { road_number: road.parse().ok()?, lane, sub })
    }
}

impl fmt::Display for RsuAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.road_number, self.lane_digit())?;
        if let Some(s) = self.sub {
            write!(f, ".{s}")?;
        }
        Ok(())
    }
}

/// A roadside unit installed at an anchor on one road, covering one lane.
#[derive(Debug, Clone, PartialEq)]
pub struct RsuSite {
    pub node_id: NodeId,
    pub address: RsuAddress,
    /// Index into the map's road list.
    pub road: usize,
    pub road_id: BitString,
    pub lane: LaneDirection,
    pub position_m: f64,
}

impl RsuSite {
    /// Two units per anchor, one per lane. The first anchor of a road hosts
    /// the top-level pair; later anchors host sub-road units.
    pub fn layout(map: &RoadMap, first_id: NodeId) -> Vec<RsuSite> {
        let mut out = Vec::new();
        let mut id = first_id;
        for (ri, road) in map.roads.iter().enumerate() {
            for (k, anchor) in road.rsu_anchors.iter().enumerate() {
                for lane in [LaneDirection::Increasing, LaneDirection::Decreasing] {
                    out.push(RsuSite {
                        node_id: id,
                        address: RsuAddress {
                            road_number: ri as u32 + 1,
                            lane,
                            sub: (k > 0).then_some(k as u32),
                        },
                        road: ri,
                        road_id: road.road_id,
                        lane,
                        position_m: *anchor,
                    });
                    id += 1;
                }
            }
        }
        out
    }

    pub fn point(&self, map: &RoadMap) -> Point {
        map.roads[self.road].point(self.position_m)
    }
}

/// Road status a CH reports while passing a unit.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadReport {
    pub reporter: NodeId,
    pub is_ch: bool,
    pub road_id: BitString,
    pub lane: LaneDirection,
    pub time: f64,
    pub cluster_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advisory {
    pub rsu: RsuAddress,
    pub road_id: BitString,
    pub lane: LaneDirection,
    pub reported_at: f64,
    pub cluster_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportOutcome {
    Accepted,
    NotClusterHead,
}

/// State kept by one roadside unit.
#[derive(Debug, Clone)]
pub struct RsuStore {
    site: RsuSite,
    reports: BTreeMap<(BitString, LaneDirection, u64), RoadReport>,
    report_ttl: f64,
}

impl RsuStore {
    pub fn new(site: RsuSite, report_ttl: f64) -> Self {
        Self { site, reports: BTreeMap::new(), report_ttl }
    }

    pub fn site(&self) -> &RsuSite {
        &self.site
    }

    pub fn reports(&self) -> impl Iterator<Item = &RoadReport> {
        self.reports.values()
    }

    /// Stores a report keyed by (road, lane, time). Only cluster heads may report.
    pub fn accept(&mut self, report: RoadReport) -> ReportOutcome {
        if !report.is_ch {
            return ReportOutcome::NotClusterHead;
        }
        self.reports.insert((report.road_id, report.lane, report.time.to_bits()), report);
        ReportOutcome::Accepted
    }

    /// The advisory for vehicles entering coverage, built from the newest
    /// report still within its lifetime.
    pub fn advisory(&mut self, now: f64) -> Option<Advisory> {
        let ttl = self.report_ttl;
        self.reports.retain(|_, r| now - r.time <= ttl);
        let latest = self.reports.values().max_by(|a, b| a.time.total_cmp(&b.time))?;
        Some(Advisory {
            rsu: self.site.address.clone(),
            road_id: latest.road_id,
            lane: latest.lane,
            reported_at: latest.time,
            cluster_size: latest.cluster_size,
        })
    }
}

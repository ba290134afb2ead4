//! Topology generators and independent oracles shared by the integration
//! tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use acr_core::harness::{snapshots, static_world};
use acr_core::loco::LaneDirection;
use acr_core::mobility::{MapConfig, MapSpec};
use acr_core::netsim::RadioConfig;
use acr_core::protocols::acr::Acr;
use acr_core::protocols::aodv::Aodv;
use acr_core::protocols::dsdv::Dsdv;
use acr_core::protocols::ProtocolParams;
use acr_core::NodeId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: f64 = 300.0;
pub const RANGE: f64 = 100.0;
pub const MAD: f64 = 60.0;

pub type Spot = (usize, LaneDirection, f64);

pub fn lossless() -> RadioConfig {
    RadioConfig { range_m: RANGE, p_loss: 0.0, bitrate_bps: 6.0e6 }
}

/// Two horizontal roads at y = 75, 225 and two vertical ones at x = 75, 225.
pub fn grid() -> MapConfig {
    MapConfig { width_m: SIDE, height_m: SIDE, spec: MapSpec::Grid { rows: 2, cols: 2 }, rsu_anchors_per_road: 1, ..MapConfig::default() }
}

/// Coordinates of a spot on [`grid`], computed from the layout above.
pub fn point(spot: &Spot) -> (f64, f64) {
    let (road, _, pos) = *spot;
    let offset = if road % 2 == 0 { 75.0 } else { 225.0 };
    if road < 2 {
        (pos, offset)
    } else {
        (offset, pos)
    }
}

fn lane(rng: &mut ChaCha8Rng) -> LaneDirection {
    if rng.gen_bool(0.5) {
        LaneDirection::Increasing
    } else {
        LaneDirection::Decreasing
    }
}

/// `n` spots anywhere on the grid at whole-meter positions.
pub fn random_spots(seed: u64, n: usize) -> Vec<Spot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.gen_range(0..4), lane(&mut rng), f64::from(rng.gen_range(0..300u32)))).collect()
}

/// Spots packed on one or two road lanes so that chains and gaps both occur.
pub fn clustered_spots(seed: u64, n: usize) -> Vec<Spot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lanes: Vec<(usize, LaneDirection)> = (0..rng.gen_range(1..=2)).map(|_| (rng.gen_range(0..4), lane(&mut rng))).collect();
    (0..n)
        .map(|_| {
            let (road, l) = lanes[rng.gen_range(0..lanes.len())];
            (road, l, f64::from(rng.gen_range(10..290u32)))
        })
        .collect()
}

/// Hop distances from `src` in the unit-disk graph; `None` when unreachable.
pub fn bfs(spots: &[Spot], src: usize) -> Vec<Option<u32>> {
    let pts: Vec<_> = spots.iter().map(point).collect();
    let mut dist = vec![None; pts.len()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for v in 0..pts.len() {
            let d = ((pts[u].0 - pts[v].0).powi(2) + (pts[u].1 - pts[v].1).powi(2)).sqrt();
            if dist[v].is_none() && d <= RANGE {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Expected cluster id per node: on each road lane, walk from the front of
/// travel backwards and start a new cluster whenever the gap exceeds MAD.
/// The front-most node heads its cluster; equal positions put the lower id first.
pub fn expected_clusters(spots: &[Spot]) -> Vec<NodeId> {
    let mut lanes: BTreeMap<(usize, bool), Vec<(u32, usize)>> = BTreeMap::new();
    for (i, &(road, l, pos)) in spots.iter().enumerate() {
        lanes.entry((road, l == LaneDirection::Increasing)).or_default().push((pos as u32, i));
    }
    let mut head = vec![0; spots.len()];
    for ((_, increasing), mut nodes) in lanes {
        nodes.sort_by(|a, b| if increasing { b.0.cmp(&a.0) } else { a.0.cmp(&b.0) }.then(a.1.cmp(&b.1)));
        let mut current = nodes[0];
        let mut prev = nodes[0].0;
        for &(pos, id) in &nodes {
            if pos.abs_diff(prev) > MAD as u32 {
                current = (pos, id);
            }
            head[id] = current.1 as NodeId;
            prev = pos;
        }
    }
    head
}

pub fn acr_params() -> ProtocolParams {
    ProtocolParams { mad_m: MAD, ..ProtocolParams::default() }
}

/// Clusters formed after 10 s on a parked lossless topology, checked against
/// [`expected_clusters`].
pub fn clustering_case(seed: u64) -> Result<(), String> {
    let n = 2 + (seed as usize % 9);
    let spots = clustered_spots(seed, n);
    let mut w = static_world::<Acr>(&grid(), &spots, lossless(), acr_params(), 20.0).map_err(|e| e.to_string())?;
    w.run_until(10.0).map_err(|e| e.to_string())?;
    let snaps = snapshots(&w);
    let want = expected_clusters(&spots);
    for (i, &expected) in want.iter().enumerate() {
        let s = &snaps[&(i as NodeId)];
        if s.cluster_id != Some(expected) || s.is_ch != (expected == i as NodeId) {
            return Err(format!("seed {seed}: node {i} at {:?} in {:?} (head {}), expected {expected}", spots[i], s.cluster_id, s.is_ch));
        }
    }
    Ok(())
}

/// One on-demand discovery per (graph, pair): delivery iff a path exists,
/// and the source's hop count equals the BFS distance.
pub fn aodv_case(seed: u64) -> Result<bool, String> {
    let n = 2 + (seed as usize % 11);
    let spots = random_spots(seed, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa0d7);
    let src = rng.gen_range(0..n);
    let dst = (src + rng.gen_range(1..n)) % n;
    let want = bfs(&spots, src)[dst];
    let mut w = static_world::<Aodv>(&grid(), &spots, lossless(), ProtocolParams::default(), 20.0).map_err(|e| e.to_string())?;
    let p = w.inject_data(src as NodeId, dst as NodeId).map_err(|e| e.to_string())?;
    w.run_until(10.0).map_err(|e| e.to_string())?;
    let delivered = w.ledger().was_delivered(p.uid);
    let hops = w.agent(src as NodeId).unwrap().table().get(dst as NodeId).filter(|e| e.valid).map(|e| e.hop_count);
    match want {
        Some(d) if delivered && hops == Some(d) => Ok(true),
        None if !delivered => Ok(false),
        _ => Err(format!("seed {seed}: {src}->{dst} bfs {want:?}, delivered {delivered}, hops {hops:?}")),
    }
}

/// Every node's DSDV distances equal the all-pairs BFS after `at` seconds.
pub fn dsdv_case(seed: u64, at: f64) -> Result<(), String> {
    let n = 2 + (seed as usize % 9);
    let spots = random_spots(seed, n);
    let mut w = static_world::<Dsdv>(&grid(), &spots, lossless(), ProtocolParams::default(), at + 1.0).map_err(|e| e.to_string())?;
    w.run_until(at).map_err(|e| e.to_string())?;
    for src in 0..n {
        let want: BTreeMap<NodeId, u32> =
            bfs(&spots, src).iter().enumerate().filter(|(v, d)| *v != src && d.is_some()).map(|(v, d)| (v as NodeId, d.unwrap())).collect();
        let got = w.agent(src as NodeId).unwrap().distances();
        if got != want {
            return Err(format!("seed {seed}: node {src} has {got:?}, expected {want:?}"));
        }
    }
    Ok(())
}

/// Differing bit positions, counted one bit at a time.
pub fn naive_hamming(a: u64, b: u64, width: u8) -> u32 {
    (0..width).filter(|i| (a >> i) & 1 != (b >> i) & 1).count() as u32
}

/// Runs an ACR world of `config` to `at`, stops every vehicle, lets the
/// clusters settle for `settle` seconds and checks head uniqueness and
/// membership connectivity.
pub fn frozen_snapshot_case(config: &acr_core::harness::ScenarioConfig, class: acr_core::mobility::SpeedClass, seed: u64, at: f64, settle: f64) -> Result<(), String> {
    use acr_core::harness::{build_world, ch_uniqueness, membership_sound};
    let mut w = build_world::<Acr>(config, class, seed).map_err(|e| e.to_string())?;
    w.run_until(at).map_err(|e| e.to_string())?;
    w.freeze(true);
    w.run_until(at + settle).map_err(|e| e.to_string())?;
    let snaps = snapshots(&w);
    ch_uniqueness(&snaps).map_err(|e| format!("seed {seed} t {at}: {e:?}"))?;
    membership_sound(&snaps, config.params.mad_m).map_err(|e| format!("seed {seed} t {at}: {e:?}"))
}

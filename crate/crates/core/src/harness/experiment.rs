//! Repetitions of one scenario across protocols and speed classes.

use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig};
use super::metrics::MetricsReport;
use crate::loco::LaneDirection;
use crate::mobility::{build_map, parked, spawn_vehicles, MapConfig, MobilityError, SpeedClass};
use crate::netsim::RadioConfig;
use crate::protocols::acr::Acr;
use crate::protocols::aodv::Aodv;
use crate::protocols::dsdv::Dsdv;
use crate::protocols::{Protocol, ProtocolKind, ProtocolParams};
use crate::world::{SimSetup, World, WorldError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// A world for `P` with every vehicle drawn from `class`, not yet run.
pub fn build_world<P: Protocol>(config: &ScenarioConfig, class: SpeedClass, seed: u64) -> Result<World<P>, ExperimentError> {
    config.validate()?;
    let map = build_map(&config.map_config())?;
    let vehicles = spawn_vehicles(&map, config.nodes, seed, class.one_hot())?;
    Ok(World::new(config.sim_setup(seed), map, vehicles)?)
}

/// Parked vehicles at (road index, lane, position) spots with the traffic
/// generator off. Data is injected by hand.
pub fn static_world<P: Protocol>(
    map: &MapConfig,
    spots: &[(usize, LaneDirection, f64)],
    radio: RadioConfig,
    params: ProtocolParams,
    duration: f64,
) -> Result<World<P>, ExperimentError> {
    let map = build_map(map)?;
    let setup = SimSetup { seed: 1, duration, warmup: 0.0, drain: 0.0, traffic_rate: 0.0, radio, params, ..SimSetup::default() };
    Ok(World::new(setup, map, parked(spots))?)
}

fn run_with<P: Protocol>(config: &ScenarioConfig, class: SpeedClass, seed: u64) -> Result<MetricsReport, ExperimentError> {
    let mut world = build_world::<P>(config, class, seed)?;
    world.run()?;
    let radio = world.radio();
    Ok(MetricsReport::from_run(P::kind(), class, seed, world.ledger(), radio.stats(), radio.trace_digest()))
}

/// Runs repetition `rep` of `protocol` at `class`.
pub fn run_replication(config: &ScenarioConfig, protocol: ProtocolKind, class: SpeedClass, rep: usize) -> Result<MetricsReport, ExperimentError> {
    let seed = config.seed_for(rep);
    match protocol {
        ProtocolKind::Acr => run_with::<Acr>(config, class, seed),
        ProtocolKind::Aodv => run_with::<Aodv>(config, class, seed),
        ProtocolKind::Dsdv => run_with::<Dsdv>(config, class, seed),
    }
}

/// Every configured protocol, class and repetition, in parallel. The result
/// order is protocol, class, repetition regardless of scheduling.
pub fn run_experiment(config: &ScenarioConfig) -> Result<Vec<MetricsReport>, ExperimentError> {
    config.validate()?;
    let jobs: Vec<(ProtocolKind, SpeedClass, usize)> = config
        .protocols
        .iter()
        .flat_map(|&p| config.classes.iter().flat_map(move |&c| (0..config.repetitions).map(move |r| (p, c, r))))
        .collect();
    jobs.par_iter().map(|&(p, c, r)| run_replication(config, p, c, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScenarioConfig {
        let mut c = ScenarioConfig::small();
        c.nodes = 8;
        c.duration = 40.0;
        c.warmup = 10.0;
        c.repetitions = 2;
        c.classes = vec![SpeedClass::Slow];
        c
    }

    #[test]
    fn results_come_back_in_job_order() {
        let c = tiny();
        let out = run_experiment(&c).unwrap();
        let order: Vec<_> = out.iter().map(|r| (r.protocol, r.seed)).collect();
        let expected: Vec<_> = ProtocolKind::ALL.iter().flat_map(|&p| [(p, 1), (p, 2)]).collect();
        assert_eq!(order, expected);
        assert!(out.iter().all(|r| r.radio_conserved));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = tiny();
        c.repetitions = 0;
        assert!(matches!(run_experiment(&c), Err(ExperimentError::Config(_))));
    }
}

//! Shared fixtures for the solver benchmarks.

use huberloc_core::*;

/// Reference-scale instance: 50 sensors, 4 corner anchors, full
/// connectivity, moderate contamination.
pub fn reference_instance() -> (Network, MeasurementSet, EstimateState) {
    let scenario = ScenarioConfig {
        mc_runs: 1,
        ..ScenarioConfig::default()
    };
    eval::realize_run(&scenario, 7, 0).expect("fixture builds")
}

pub fn reference_scenario() -> ScenarioConfig {
    ScenarioConfig {
        mc_runs: 1,
        ..ScenarioConfig::default()
    }
}

//! Overtaking case study for the robust OCO controller: a car on a two-lane
//! road cruises, follows a slower vehicle at a safe distance, then overtakes.

pub mod model;
pub mod scenario;

pub use model::{build_vehicle_model, phase_cost, Phase, VehicleParams};
pub use scenario::{run_scenario, run_scenario_with, ScenarioConfig, ScenarioMetrics, ScenarioOutcome, VehicleSetup};

//! Synthetic closed-loop driving world: scenario generation, rule-based
//! demonstrations and non-reactive rollouts.

mod expert;
mod generate;
mod rollout;
mod scenario;

use serde::{Deserialize, Serialize};

pub use expert::{reference_progress, reference_trajectory, synthesize_expert, Corruption};
pub use generate::{generate_scenario, straight_test_scenario};
pub use rollout::{check_collision, min_ttc, rollout, ttc_profile, SimulationTrace};
pub use scenario::{
    Agent, DrivableGrid, EgoState, Polyline, Projection, Route, Scenario, ScenarioFamily, TrafficLight,
    SCENARIO_SCHEMA,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Planning steps `T`.
    pub horizon: usize,
    pub dt: f64,
    pub grid_cell: f64,
    /// Raster extent along x and y, meters.
    pub grid_size: f64,
    /// How far the raster reaches behind the ego, meters.
    pub grid_rear: f64,
    /// Kinematic bound used to validate demonstrations.
    pub v_max: f64,
    /// Relative speeds below this never produce a finite time-to-collision.
    pub ttc_speed_floor: f64,
    pub ego_half_extents: [f64; 2],
    pub lane_width: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 8,
            dt: 0.5,
            grid_cell: 0.5,
            grid_size: 64.0,
            grid_rear: 8.0,
            v_max: 20.0,
            ttc_speed_floor: 0.1,
            ego_half_extents: [1.5, 0.75],
            lane_width: 4.0,
        }
    }
}

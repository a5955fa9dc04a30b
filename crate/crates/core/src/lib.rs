//! Desk-scale parallel imitation and reinforcement planning.

pub mod error;
pub mod features;
pub mod grpo;
pub mod il;
pub mod sampler;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod rwm;
pub mod sim;
pub mod tree;
pub mod types;

pub use error::{Error, Result};
pub use features::SceneFeatures;
pub use il::IlPolicy;
pub use metrics::{ExtendedSubScores, HumanMask, ScenarioScorer, SubScores};
pub use rwm::{RwmModel, RwmOutput, SelectionPolicy};
pub use sampler::{GroupMember, SamplerModel};
pub use sim::{Corruption, Scenario, ScenarioFamily};
pub use tree::TrajectoryTree;
pub use types::{DrivingCommand, Intention, OffsetStep, Trajectory, Waypoint};

//! Desk-scale partially observable navigation: grid worlds, a raycast
//! camera with a near-field blind spot, four scripted tasks with a
//! privileged expert, and trial/demonstration runners.

pub mod baseline;
pub mod map;
pub mod render;
pub mod rollout;
pub mod task;
pub mod tasks;
pub mod world;

pub use map::{wrap_angle, Cell, GridMap, RayHit};
pub use render::{render, Observation, RenderConfig};
pub use rollout::{
    collect_demos, collect_interventions, derive_seed, rollout, run_task, ConstantPolicy, DemoConfig,
    InterventionConfig, Layout, NoisyOracle, OraclePolicy, Policy, PolicyInput, Recording, Rollout,
};
pub use task::{FailureKind, StepFailure, TaskKind, TaskSpec, TrialResult};
pub use tasks::{Script, StepOutcome};
pub use world::{step_dynamics, Contact, Disc, DiscKind, DoorPhase, Elevator, Pose, RobotLimits, WorldState};

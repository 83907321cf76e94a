mod blindspot;
mod elevator;
mod loop_task;
mod pedestrian;

pub use blindspot::Blindspot;
pub use elevator::ElevatorRide;
pub use loop_task::{Decision, LoopRun, Route};
pub use pedestrian::{blocking_position, Pedestrian};

use super::map::wrap_angle;
use super::task::{FailureKind, TaskKind, TaskSpec};
use super::world::{Pose, WorldState};
use crate::model::{Action, Mode};

/// Resolution of a scored step reported by a task script.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub step: usize,
    pub failure: Option<FailureKind>,
}

/// Task logic: commands, privileged expert, and step bookkeeping.
#[derive(Debug, Clone)]
pub enum Script {
    Blindspot(Blindspot),
    Pedestrian(Pedestrian),
    Elevator(ElevatorRide),
    Loop(LoopRun),
}

impl Script {
    /// Builds the world and script for `spec` with seeded randomization.
    pub fn build(spec: &TaskSpec, seed: u64) -> (WorldState, Script) {
        match spec.kind {
            TaskKind::Blindspot => {
                let (w, s) = Blindspot::build(spec, seed);
                (w, Script::Blindspot(s))
            }
            TaskKind::Pedestrian => {
                let (w, s) = Pedestrian::build(spec, seed);
                (w, Script::Pedestrian(s))
            }
            TaskKind::Elevator => {
                let (w, s) = ElevatorRide::build(spec, seed);
                (w, Script::Elevator(s))
            }
            TaskKind::Loop => {
                let (w, s) = LoopRun::build_loop(spec, seed);
                (w, Script::Loop(s))
            }
        }
    }

    /// Mode command for the current state.
    pub fn mode(&self, w: &WorldState) -> Mode {
        match self {
            Script::Blindspot(_) | Script::Pedestrian(_) => Mode::GoForward,
            Script::Elevator(_) => Mode::TakeElevator,
            Script::Loop(s) => s.mode(w),
        }
    }

    /// Expert action from full world state.
    pub fn oracle(&self, w: &WorldState) -> Action {
        match self {
            Script::Blindspot(s) => s.oracle(w),
            Script::Pedestrian(s) => s.oracle(w),
            Script::Elevator(s) => s.oracle(w),
            Script::Loop(s) => s.oracle(w),
        }
    }

    /// Resolves steps after a tick, applying operator resets on failure.
    pub fn update(&mut self, w: &mut WorldState) -> Option<StepOutcome> {
        match self {
            Script::Blindspot(s) => s.update(w),
            Script::Pedestrian(s) => s.update(w),
            Script::Elevator(s) => s.update(w),
            Script::Loop(s) => s.update(w),
        }
    }

    /// Records a failure of the current step from outside the script.
    pub fn abort(&mut self, kind: FailureKind) -> StepOutcome {
        let step = self.current_step();
        match self {
            Script::Blindspot(s) => s.finished = true,
            Script::Pedestrian(s) => s.finished = true,
            Script::Elevator(s) => s.finished = true,
            Script::Loop(s) => s.finished = true,
        }
        StepOutcome {
            step,
            failure: Some(kind),
        }
    }

    pub fn current_step(&self) -> usize {
        match self {
            Script::Blindspot(s) => s.step,
            Script::Pedestrian(s) => s.step,
            Script::Elevator(s) => s.step,
            Script::Loop(s) => s.step,
        }
    }

    pub fn finished(&self) -> bool {
        match self {
            Script::Blindspot(s) => s.finished,
            Script::Pedestrian(s) => s.finished,
            Script::Elevator(s) => s.finished,
            Script::Loop(s) => s.finished,
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            Script::Blindspot(s) => s.n,
            Script::Pedestrian(s) => s.n,
            Script::Elevator(_) => 4,
            Script::Loop(s) => s.route.decisions.len(),
        }
    }
}

/// Turn rate that drives `theta` towards `desired`.
pub(crate) fn steer_towards(theta: f64, desired: f64, gain: f64, max_rate: f64) -> f64 {
    (gain * wrap_angle(desired - theta)).clamp(-max_rate, max_rate)
}

/// Heading that converges onto the line through `(px, py)` with direction
/// `dir`, offset sideways by `offset` (positive to the left of `dir`).
pub(crate) fn line_heading(pose: &Pose, px: f64, py: f64, dir: f64, offset: f64, gain: f64, max_cut: f64) -> f64 {
    let (nx, ny) = (-dir.sin(), dir.cos());
    let lateral = (pose.x - px) * nx + (pose.y - py) * ny - offset;
    dir - (gain * lateral).clamp(-max_cut, max_cut)
}

/// Steering and speed for moving along a line.
pub(crate) fn follow_line(pose: &Pose, px: f64, py: f64, dir: f64, offset: f64, speed: f64) -> Action {
    let desired = line_heading(pose, px, py, dir, offset, 3.0, 1.0);
    Action::new(steer_towards(pose.theta, desired, 3.0, 1.5), speed)
}

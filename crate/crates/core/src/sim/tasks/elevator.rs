use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{follow_line, steer_towards, StepOutcome};
use crate::model::Action;
use crate::sim::map::{wrap_angle, Cell, GridMap};
use crate::sim::task::{FailureKind, TaskSpec};
use crate::sim::world::{DoorPhase, Elevator, Pose, WorldState};

const DOOR_X: f64 = 4.0;
const HALL_HALF: f64 = 1.25;
const DOOR_HALF: f64 = 0.6;
const WALL_DEPTH: f64 = 0.25;
const CABIN_HALF: f64 = 0.9;
const CABIN_DEPTH: f64 = 1.8;
/// Where the robot waits for the door in the hallway.
const WAIT_Y: f64 = 0.6;

/// Hallway with an elevator: enter when the door opens, turn around, ride
/// through one closed period and leave when the door opens again.
#[derive(Debug, Clone)]
pub struct ElevatorRide {
    pub(crate) step: usize,
    pub(crate) finished: bool,
    step_start: f64,
    entry_floor: u8,
    spec: TaskSpec,
}

fn cabin_floor_y() -> f64 {
    HALL_HALF + WALL_DEPTH
}

impl ElevatorRide {
    pub fn build(spec: &TaskSpec, seed: u64) -> (WorldState, ElevatorRide) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y_in = cabin_floor_y();
        let mut map = GridMap::solid(-1.0, -HALL_HALF - 1.0, 9.0, y_in + CABIN_DEPTH + 1.0, 0.25);
        map.fill_rect(0.0, -HALL_HALF, 8.0, HALL_HALF, Cell::Free);
        map.fill_rect(
            DOOR_X - CABIN_HALF - WALL_DEPTH,
            HALL_HALF,
            DOOR_X + CABIN_HALF + WALL_DEPTH,
            y_in + CABIN_DEPTH + WALL_DEPTH,
            Cell::CabinWall,
        );
        map.fill_rect(DOOR_X - CABIN_HALF, y_in, DOOR_X + CABIN_HALF, y_in + CABIN_DEPTH, Cell::Free);
        map.fill_rect(DOOR_X - DOOR_HALF, HALL_HALF, DOOR_X + DOOR_HALF, y_in, Cell::Door);
        let pose = Pose::new(
            DOOR_X + rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.6..-0.2),
            FRAC_PI_2 + rng.gen_range(-0.2..0.2),
        );
        let mut w = WorldState::new(map, pose);
        w.limits.safety_distance = spec.safety_distance;
        let mut e = Elevator::new(
            (DOOR_X - CABIN_HALF, y_in, DOOR_X + CABIN_HALF, y_in + CABIN_DEPTH),
            (spec.door_closed_min, spec.door_closed_max),
            (spec.door_open_min, spec.door_open_max),
            spec.door_transit,
            ChaCha8Rng::seed_from_u64(rng.gen()),
        );
        e.timer = rng.gen_range(1.0..e.duration.max(1.0 + 1e-9));
        w.elevator = Some(e);
        let script = ElevatorRide {
            step: 0,
            finished: false,
            step_start: 0.0,
            entry_floor: 0,
            spec: spec.clone(),
        };
        (w, script)
    }

    /// Centre of the robot must be this far inside the cabin to count as in.
    fn inside_y(w: &WorldState) -> f64 {
        cabin_floor_y() + w.limits.radius + 0.1
    }

    fn stand_y() -> f64 {
        cabin_floor_y() + CABIN_DEPTH / 2.0
    }

    pub fn oracle(&self, w: &WorldState) -> Action {
        let e = w.elevator.as_ref().expect("elevator world");
        let pose = w.pose;
        let speed = self.spec.cruise_speed;
        match self.step {
            0 => {
                let needed = (Self::inside_y(w) - pose.y).max(0.0) / speed + 0.5;
                let committed = pose.y > WAIT_Y + 0.1;
                let go = e.phase == DoorPhase::Open && (committed || e.timer > needed);
                if pose.y >= Self::stand_y() {
                    Action::new(steer_towards(pose.theta, FRAC_PI_2, 3.0, 1.5), 0.0)
                } else if go || pose.y < WAIT_Y - 0.05 {
                    follow_line(&pose, DOOR_X, 0.0, FRAC_PI_2, 0.0, speed)
                } else {
                    Action::new(steer_towards(pose.theta, FRAC_PI_2, 3.0, 1.5), 0.0)
                }
            }
            1 if pose.y < Self::stand_y() - 0.1 => follow_line(&pose, DOOR_X, 0.0, FRAC_PI_2, 0.0, speed),
            1 | 2 => {
                let err = wrap_angle(-FRAC_PI_2 - pose.theta);
                let rate = if err.abs() > 0.3 { 1.5 * err.signum() } else { 3.0 * err };
                Action::new(rate, 0.0)
            }
            _ => {
                if e.phase == DoorPhase::Open || pose.y < HALL_HALF - w.limits.radius {
                    follow_line(&pose, DOOR_X, 0.0, -FRAC_PI_2, 0.0, speed)
                } else {
                    Action::new(steer_towards(pose.theta, -FRAC_PI_2, 3.0, 1.5), 0.0)
                }
            }
        }
    }

    fn resolve(&mut self, w: &WorldState, failure: Option<FailureKind>) -> StepOutcome {
        let out = StepOutcome {
            step: self.step,
            failure,
        };
        if failure.is_some() {
            self.finished = true;
        } else {
            if self.step == 0 {
                self.entry_floor = w.elevator.as_ref().expect("elevator world").floor;
            }
            self.step += 1;
            self.step_start = w.time;
            self.finished = self.step >= 4;
        }
        out
    }

    pub fn update(&mut self, w: &mut WorldState) -> Option<StepOutcome> {
        if self.finished {
            return None;
        }
        if w.contact.is_some() {
            return Some(self.resolve(w, Some(FailureKind::Collision)));
        }
        let e = w.elevator.as_ref().expect("elevator world");
        let elapsed = w.time - self.step_start;
        let inside = w.pose.y > Self::inside_y(w);
        match self.step {
            0 => {
                if inside {
                    return Some(self.resolve(w, None));
                }
                if elapsed > 3.0 * (self.spec.door_closed_max + self.spec.door_open_max) {
                    return Some(self.resolve(w, Some(FailureKind::Timeout)));
                }
            }
            1 => {
                if !inside {
                    return Some(self.resolve(w, Some(FailureKind::WrongExit)));
                }
                if wrap_angle(w.pose.theta + FRAC_PI_2).abs() < 30f64.to_radians() {
                    return Some(self.resolve(w, None));
                }
                if elapsed > self.spec.step_time_limit {
                    return Some(self.resolve(w, Some(FailureKind::Timeout)));
                }
            }
            2 => {
                if !inside {
                    return Some(self.resolve(w, Some(FailureKind::WrongExit)));
                }
                if e.phase == DoorPhase::Open && e.floor != self.entry_floor {
                    return Some(self.resolve(w, None));
                }
                if elapsed > 3.0 * (self.spec.door_closed_max + self.spec.door_open_max) {
                    return Some(self.resolve(w, Some(FailureKind::Timeout)));
                }
            }
            _ => {
                if w.pose.y < 0.5 {
                    return Some(self.resolve(w, None));
                }
                if elapsed > self.spec.step_time_limit {
                    return Some(self.resolve(w, Some(FailureKind::Timeout)));
                }
            }
        }
        None
    }

    /// Whether the world currently has the robot inside the cabin.
    pub fn robot_inside(w: &WorldState) -> bool {
        w.elevator.as_ref().is_some_and(|e: &Elevator| e.inside(w.pose.x, w.pose.y))
    }
}

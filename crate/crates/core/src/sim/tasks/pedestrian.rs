use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blindspot::corridor_map;
use super::{follow_line, StepOutcome};
use crate::model::Action;
use crate::sim::map::{wrap_angle, Cell};
use crate::sim::task::{FailureKind, TaskSpec};
use crate::sim::world::{Contact, Disc, DiscKind, Pose, WorldState};

/// Point `distance` ahead of the robot along its heading.
pub fn blocking_position(pose: &Pose, distance: f64) -> (f64, f64) {
    (
        pose.x + distance * pose.theta.cos(),
        pose.y + distance * pose.theta.sin(),
    )
}

/// Corridor with an adversary that keeps stepping into the robot's path.
#[derive(Debug, Clone)]
pub struct Pedestrian {
    pub(crate) step: usize,
    pub(crate) n: usize,
    pub(crate) finished: bool,
    step_start: f64,
    /// Robot heading when the current block was placed.
    reference_heading: f64,
    /// +1 to evade to the left, -1 to the right.
    evade_side: f64,
    spec: TaskSpec,
    rng: ChaCha8Rng,
}

impl Pedestrian {
    pub fn build(spec: &TaskSpec, seed: u64) -> (WorldState, Pedestrian) {
        let map = corridor_map(spec.corridor_length, spec.corridor_width);
        let mut w = WorldState::new(map, Pose::new(1.0, 0.0, 0.0));
        w.limits.safety_distance = spec.safety_distance;
        w.discs.push(Disc {
            x: 0.0,
            y: 0.0,
            radius: spec.adversary_radius,
            height: 1.7,
            kind: DiscKind::Adversary,
        });
        let mut s = Pedestrian {
            step: 0,
            n: spec.n,
            finished: false,
            step_start: 0.0,
            reference_heading: 0.0,
            evade_side: 1.0,
            spec: spec.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.block(&mut w);
        (w, s)
    }

    /// Moves the adversary to its next blocking position.
    pub fn block(&mut self, w: &mut WorldState) {
        let d = self.rng.gen_range(self.spec.adversary_near..=self.spec.adversary_far);
        let (x, y) = blocking_position(&w.pose, d);
        let half = self.spec.corridor_width / 2.0 - self.spec.adversary_radius - 0.05;
        let adv = &mut w.discs[0];
        adv.x = x.clamp(0.5, self.spec.corridor_length - 0.5);
        adv.y = y.clamp(-half, half);
        self.reference_heading = w.pose.theta;
        let free = |a: f64| {
            w.map
                .raycast(w.pose.x, w.pose.y, w.pose.theta + a, 10.0, |c| c != Cell::Free)
                .map_or(10.0, |h| h.distance)
        };
        let turn = 60f64.to_radians();
        self.evade_side = if free(turn) >= free(-turn) { 1.0 } else { -1.0 };
    }

    pub fn oracle(&self, w: &WorldState) -> Action {
        let adv = w.discs[0];
        let dist = w.pose.distance_to(adv.x, adv.y);
        let bearing = w.pose.bearing_to(adv.x, adv.y);
        if dist < 1.8 && bearing.abs() < 50f64.to_radians() {
            return Action::new(self.evade_side * w.limits.max_turn_rate, 0.3);
        }
        follow_line(&w.pose, 0.0, 0.0, 0.0, 0.0, self.spec.cruise_speed)
    }

    fn advance(&mut self, w: &mut WorldState, failure: Option<FailureKind>) -> StepOutcome {
        let out = StepOutcome {
            step: self.step,
            failure,
        };
        if failure.is_some() {
            let x = w.pose.x.clamp(1.0, self.spec.corridor_length - 2.0);
            w.teleport(Pose::new(x, 0.0, 0.0));
        }
        self.step += 1;
        self.step_start = w.time;
        self.finished = self.step >= self.n;
        if !self.finished {
            self.block(w);
        }
        out
    }

    pub fn update(&mut self, w: &mut WorldState) -> Option<StepOutcome> {
        if self.finished {
            return None;
        }
        if matches!(w.contact, Some(Contact::Wall | Contact::Disc(_))) {
            return Some(self.advance(w, Some(FailureKind::Collision)));
        }
        if w.time - self.step_start > self.spec.step_time_limit {
            return Some(self.advance(w, Some(FailureKind::Timeout)));
        }
        let turned = wrap_angle(w.pose.theta - self.reference_heading).abs();
        let adv = w.discs[0];
        let behind = (adv.x - w.pose.x) * w.pose.theta.cos() + (adv.y - w.pose.y) * w.pose.theta.sin() < 0.0;
        if turned >= self.spec.avoid_angle_deg.to_radians() || behind {
            return Some(self.advance(w, None));
        }
        None
    }
}

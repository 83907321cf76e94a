use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{follow_line, StepOutcome};
use crate::model::Action;
use crate::sim::map::{Cell, GridMap};
use crate::sim::task::{FailureKind, TaskSpec};
use crate::sim::world::{Contact, Disc, DiscKind, Pose, WorldState};

/// Corridor with baskets placed slightly left or right of the centreline.
///
/// The expert crawls up to each basket along the centre and only swerves
/// once the basket has dropped out of view, so the side must be remembered.
#[derive(Debug, Clone)]
pub struct Blindspot {
    pub(crate) step: usize,
    pub(crate) n: usize,
    pub(crate) finished: bool,
    step_start: f64,
    spec: TaskSpec,
    /// Forward distance to a basket at which the expert commits to a swerve.
    commit_ahead: f64,
    pass_margin: f64,
}

pub(crate) fn corridor_map(length: f64, width: f64) -> GridMap {
    let half = width / 2.0;
    let mut m = GridMap::solid(-1.0, -half - 1.0, length + 1.0, half + 1.0, 0.25);
    m.fill_rect(0.0, -half, length, half, Cell::Free);
    m
}

impl Blindspot {
    pub fn build(spec: &TaskSpec, seed: u64) -> (WorldState, Blindspot) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = corridor_map(spec.corridor_length, spec.corridor_width);
        let mut w = WorldState::new(map, Pose::new(0.5, 0.0, 0.0));
        w.limits.safety_distance = spec.safety_distance;
        for i in 0..spec.n {
            let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            w.discs.push(Disc {
                x: spec.basket_first + i as f64 * spec.basket_spacing,
                y: side * spec.basket_offset,
                radius: spec.basket_radius,
                height: spec.basket_height,
                kind: DiscKind::Basket,
            });
        }
        let r = spec.render.blind_radius - spec.basket_radius;
        let commit_ahead = (r * r - spec.basket_offset * spec.basket_offset).sqrt();
        let script = Blindspot {
            step: 0,
            n: spec.n,
            finished: false,
            step_start: 0.0,
            spec: spec.clone(),
            commit_ahead,
            pass_margin: spec.basket_radius + spec.safety_distance + 0.05,
        };
        (w, script)
    }

    pub fn oracle(&self, w: &WorldState) -> Action {
        let pose = w.pose;
        let Some(b) = w.discs.get(self.step).filter(|_| !self.finished) else {
            return follow_line(&pose, 0.0, 0.0, 0.0, 0.0, self.spec.cruise_speed);
        };
        let ahead = b.x - pose.x;
        let committed = ahead <= self.commit_ahead + 1e-9 && ahead > -self.pass_margin;
        let target = if committed {
            b.y - b.y.signum() * self.spec.swerve_clearance
        } else {
            0.0
        };
        let speed = if ahead < self.spec.crawl_distance && ahead > -self.pass_margin {
            self.spec.crawl_speed
        } else {
            self.spec.cruise_speed
        };
        follow_line(&pose, 0.0, 0.0, 0.0, target, speed)
    }

    fn advance(&mut self, w: &mut WorldState, failure: Option<FailureKind>) -> StepOutcome {
        let out = StepOutcome {
            step: self.step,
            failure,
        };
        if failure.is_some() {
            let b = w.discs[self.step];
            w.teleport(Pose::new(b.x + 2.0 * self.pass_margin, 0.0, 0.0));
        }
        self.step += 1;
        self.step_start = w.time;
        self.finished = self.step >= self.n;
        out
    }

    pub fn update(&mut self, w: &mut WorldState) -> Option<StepOutcome> {
        if self.finished {
            return None;
        }
        if matches!(w.contact, Some(Contact::Wall)) || w.contact == Some(Contact::Disc(self.step)) {
            return Some(self.advance(w, Some(FailureKind::Collision)));
        }
        if w.time - self.step_start > self.spec.step_time_limit {
            return Some(self.advance(w, Some(FailureKind::Timeout)));
        }
        if w.pose.x > w.discs[self.step].x + self.pass_margin {
            return Some(self.advance(w, None));
        }
        None
    }
}

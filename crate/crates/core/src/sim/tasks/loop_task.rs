use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{steer_towards, StepOutcome};
use crate::model::{Action, Mode};
use crate::sim::map::{Cell, GridMap};
use crate::sim::task::{FailureKind, TaskSpec};
use crate::sim::world::{Pose, WorldState};

const GRID: i32 = 3;
const EXIT_DISTANCE: f64 = 1.8;
const RESET_DISTANCE: f64 = 2.0;
const LOOKAHEAD: f64 = 1.2;

/// What to do at a junction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Forward,
    Left,
    Right,
}

impl Decision {
    pub fn mode(self) -> Mode {
        match self {
            Decision::Forward => Mode::GoForward,
            Decision::Left => Mode::TurnLeft,
            Decision::Right => Mode::TurnRight,
        }
    }

    fn turn(self, dir: u8) -> u8 {
        match self {
            Decision::Forward => dir,
            Decision::Left => (dir + 1) % 4,
            Decision::Right => (dir + 3) % 4,
        }
    }
}

fn unit(dir: u8) -> (f64, f64) {
    match dir % 4 {
        0 => (1.0, 0.0),
        1 => (0.0, 1.0),
        2 => (-1.0, 0.0),
        _ => (0.0, -1.0),
    }
}

fn step_cell(j: (i32, i32), dir: u8) -> (i32, i32) {
    let (dx, dy) = unit(dir);
    (j.0 + dx as i32, j.1 + dy as i32)
}

fn in_grid(j: (i32, i32)) -> bool {
    (0..GRID).contains(&j.0) && (0..GRID).contains(&j.1)
}

/// Start pose plus one decision per junction reached along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub start: Pose,
    /// Grid index of each junction met, in order.
    pub junctions: Vec<(i32, i32)>,
    pub decisions: Vec<Decision>,
    /// Travel direction (0 = +x, counter-clockwise) arriving at each junction.
    pub arrive: Vec<u8>,
}

impl Route {
    /// Four turns in the same direction around one block of the grid.
    pub fn loop_around(pitch: f64, rng: &mut impl Rng) -> Route {
        let block = (rng.gen_range(0..GRID - 1), rng.gen_range(0..GRID - 1));
        let left = rng.gen::<bool>();
        // Corners counter-clockwise from the lower-left one.
        let corners = [block, (block.0 + 1, block.1), (block.0 + 1, block.1 + 1), (block.0, block.1 + 1)];
        let edge = rng.gen_range(0..4usize);
        let decision = if left { Decision::Left } else { Decision::Right };
        let (from, to, dir) = if left {
            (corners[edge], corners[(edge + 1) % 4], edge as u8)
        } else {
            (corners[(edge + 1) % 4], corners[edge], ((edge + 2) % 4) as u8)
        };
        let mut junctions = vec![to];
        let mut arrive = vec![dir];
        let mut d = dir;
        for _ in 1..4 {
            d = decision.turn(d);
            let next = step_cell(*junctions.last().expect("non-empty"), d);
            junctions.push(next);
            arrive.push(d);
        }
        Route {
            start: Self::start_pose(from, dir, pitch, rng),
            junctions,
            decisions: vec![decision; 4],
            arrive,
        }
    }

    /// Random feasible route of `length` decisions for demonstrations.
    pub fn random(length: usize, pitch: f64, rng: &mut impl Rng) -> Route {
        loop {
            let from = (rng.gen_range(0..GRID), rng.gen_range(0..GRID));
            let dir = rng.gen_range(0..4u8);
            let mut j = step_cell(from, dir);
            if !in_grid(j) {
                continue;
            }
            let start = Self::start_pose(from, dir, pitch, rng);
            let mut route = Route {
                start,
                junctions: Vec::new(),
                decisions: Vec::new(),
                arrive: Vec::new(),
            };
            let mut d = dir;
            for _ in 0..length {
                let options: Vec<Decision> = [Decision::Forward, Decision::Left, Decision::Right]
                    .into_iter()
                    .filter(|c| in_grid(step_cell(j, c.turn(d))))
                    .collect();
                let choice = options[rng.gen_range(0..options.len())];
                route.junctions.push(j);
                route.decisions.push(choice);
                route.arrive.push(d);
                d = choice.turn(d);
                j = step_cell(j, d);
            }
            return route;
        }
    }

    fn start_pose(from: (i32, i32), dir: u8, pitch: f64, rng: &mut impl Rng) -> Pose {
        let (ux, uy) = unit(dir);
        let half = pitch / 2.0;
        let along = half + rng.gen_range(-0.5..0.5);
        let side = rng.gen_range(-0.3..0.3);
        let p = Pose::new(
            from.0 as f64 * pitch + ux * along - uy * side,
            from.1 as f64 * pitch + uy * along + ux * side,
            dir as f64 * FRAC_PI_2 + rng.gen_range(-0.1..0.1),
        );
        Pose::new(p.x, p.y, crate::sim::map::wrap_angle(p.theta))
    }

    /// Direction of travel after the decision at junction `k`.
    pub fn leave(&self, k: usize) -> u8 {
        self.decisions[k].turn(self.arrive[k])
    }
}

/// Grid of corridors with a junction every `pitch` metres.
pub(crate) fn grid_map(pitch: f64, width: f64) -> GridMap {
    let half = width / 2.0;
    let far = (GRID - 1) as f64 * pitch;
    let mut m = GridMap::solid(-half - 1.0, -half - 1.0, far + half + 1.0, far + half + 1.0, 0.25);
    for i in 0..GRID {
        let c = i as f64 * pitch;
        m.fill_rect(-half, c - half, far + half, c + half, Cell::Free);
        m.fill_rect(c - half, -half, c + half, far + half, Cell::Free);
    }
    m
}

/// Follows a route of junction decisions through the corridor grid.
#[derive(Debug, Clone)]
pub struct LoopRun {
    pub route: Route,
    pub(crate) step: usize,
    pub(crate) finished: bool,
    entered: bool,
    step_start: f64,
    spec: TaskSpec,
}

impl LoopRun {
    pub fn new(spec: &TaskSpec, route: Route) -> (WorldState, LoopRun) {
        let mut w = WorldState::new(grid_map(spec.junction_pitch, spec.corridor_width), route.start);
        w.limits.safety_distance = spec.safety_distance;
        let run = LoopRun {
            route,
            step: 0,
            finished: false,
            entered: false,
            step_start: 0.0,
            spec: spec.clone(),
        };
        (w, run)
    }

    /// Evaluation trial: one loop around a random block.
    pub fn build_loop(spec: &TaskSpec, seed: u64) -> (WorldState, LoopRun) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(spec, Route::loop_around(spec.junction_pitch, &mut rng))
    }

    /// Demonstration run along a random route.
    pub fn build_route(spec: &TaskSpec, seed: u64) -> (WorldState, LoopRun) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(spec, Route::random(spec.route_length, spec.junction_pitch, &mut rng))
    }

    fn centre(&self, k: usize) -> (f64, f64) {
        let j = self.route.junctions[k];
        (j.0 as f64 * self.spec.junction_pitch, j.1 as f64 * self.spec.junction_pitch)
    }

    pub fn mode(&self, w: &WorldState) -> Mode {
        if self.finished {
            return Mode::GoForward;
        }
        let (cx, cy) = self.centre(self.step);
        let near = self.entered || w.pose.distance_to(cx, cy) < self.spec.turn_trigger;
        if near {
            self.route.decisions[self.step].mode()
        } else {
            Mode::GoForward
        }
    }

    /// Pure pursuit on the polyline through the current junction.
    pub fn oracle(&self, w: &WorldState) -> Action {
        let pose = w.pose;
        let k = self.step.min(self.route.junctions.len() - 1);
        let (cx, cy) = self.centre(k);
        let (ax, ay) = unit(self.route.arrive[k]);
        let (bx, by) = unit(self.route.leave(k));
        let pitch = self.spec.junction_pitch;
        let pts = [(cx - ax * pitch, cy - ay * pitch), (cx, cy), (cx + bx * pitch, cy + by * pitch)];
        let (tx, ty) = pursuit_target(&pts, (pose.x, pose.y), LOOKAHEAD);
        let heading = (ty - pose.y).atan2(tx - pose.x);
        let turning = !self.finished && self.route.decisions[k] != Decision::Forward;
        let speed = if turning && pose.distance_to(cx, cy) < 3.0 {
            self.spec.crawl_speed
        } else {
            self.spec.cruise_speed
        };
        Action::new(steer_towards(pose.theta, heading, 3.0, 1.5), speed)
    }

    fn resolve(&mut self, w: &mut WorldState, failure: Option<FailureKind>) -> StepOutcome {
        let out = StepOutcome {
            step: self.step,
            failure,
        };
        if failure.is_some() {
            let (cx, cy) = self.centre(self.step);
            let dir = self.route.leave(self.step);
            let (ux, uy) = unit(dir);
            w.teleport(Pose::new(
                cx + RESET_DISTANCE * ux,
                cy + RESET_DISTANCE * uy,
                crate::sim::map::wrap_angle(dir as f64 * FRAC_PI_2),
            ));
        }
        self.step += 1;
        self.entered = false;
        self.step_start = w.time;
        self.finished = self.step >= self.route.decisions.len();
        out
    }

    pub fn update(&mut self, w: &mut WorldState) -> Option<StepOutcome> {
        if self.finished {
            return None;
        }
        if w.contact.is_some() {
            return Some(self.resolve(w, Some(FailureKind::Collision)));
        }
        if w.time - self.step_start > self.spec.step_time_limit {
            return Some(self.resolve(w, Some(FailureKind::Timeout)));
        }
        let (cx, cy) = self.centre(self.step);
        let (dx, dy) = (w.pose.x - cx, w.pose.y - cy);
        let half = self.spec.corridor_width / 2.0;
        if dx.abs() < half && dy.abs() < half {
            self.entered = true;
        }
        if !self.entered {
            return None;
        }
        let expected = self.route.leave(self.step);
        for dir in 0..4u8 {
            let (ux, uy) = unit(dir);
            let along = dx * ux + dy * uy;
            let lateral = (-dx * uy + dy * ux).abs();
            if along > EXIT_DISTANCE && lateral < half + 0.3 {
                let failure = (dir != expected).then_some(FailureKind::WrongExit);
                return Some(self.resolve(w, failure));
            }
        }
        None
    }
}

/// Point `lookahead` further along the polyline than the projection of `p`.
fn pursuit_target(pts: &[(f64, f64)], p: (f64, f64), lookahead: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0usize, 0.0);
    for i in 0..pts.len() - 1 {
        let (a, b) = (pts[i], pts[i + 1]);
        let (sx, sy) = (b.0 - a.0, b.1 - a.1);
        let len2 = sx * sx + sy * sy;
        let t = (((p.0 - a.0) * sx + (p.1 - a.1) * sy) / len2).clamp(0.0, 1.0);
        let (qx, qy) = (a.0 + t * sx, a.1 + t * sy);
        let d = (p.0 - qx).hypot(p.1 - qy);
        if d < best.0 {
            best = (d, i, t);
        }
    }
    let (_, mut i, t) = best;
    let mut remaining = lookahead;
    let mut from = {
        let (a, b) = (pts[i], pts[i + 1]);
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    };
    loop {
        let b = pts[i + 1];
        let seg = (b.0 - from.0).hypot(b.1 - from.1);
        if seg >= remaining || i + 2 == pts.len() {
            let f = if seg > 0.0 { (remaining / seg).min(1.0) } else { 0.0 };
            return (from.0 + f * (b.0 - from.0), from.1 + f * (b.1 - from.1));
        }
        remaining -= seg;
        from = b;
        i += 1;
    }
}

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::map::{wrap_angle, Cell, GridMap};
use crate::model::Action;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }

    /// Bearing of `(x, y)` relative to the heading, positive to the left.
    pub fn bearing_to(&self, x: f64, y: f64) -> f64 {
        wrap_angle((y - self.y).atan2(x - self.x) - self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscKind {
    Basket,
    Adversary,
}

/// Upright cylinder obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
    pub kind: DiscKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoorPhase {
    Closed,
    Opening,
    Open,
    Closing,
}

impl DoorPhase {
    pub fn next(self) -> DoorPhase {
        match self {
            DoorPhase::Closed => DoorPhase::Opening,
            DoorPhase::Opening => DoorPhase::Open,
            DoorPhase::Open => DoorPhase::Closing,
            DoorPhase::Closing => DoorPhase::Closed,
        }
    }
}

/// Elevator door state machine and cabin.
#[derive(Debug, Clone)]
pub struct Elevator {
    pub phase: DoorPhase,
    /// Seconds left in the current phase.
    pub timer: f64,
    /// Length of the current phase.
    pub duration: f64,
    pub floor: u8,
    toggled: bool,
    /// Cabin interior `(x0, y0, x1, y1)`.
    pub cabin: (f64, f64, f64, f64),
    pub closed_range: (f64, f64),
    pub open_range: (f64, f64),
    pub transit: f64,
    rng: ChaCha8Rng,
}

impl Elevator {
    pub fn new(
        cabin: (f64, f64, f64, f64),
        closed_range: (f64, f64),
        open_range: (f64, f64),
        transit: f64,
        mut rng: ChaCha8Rng,
    ) -> Self {
        let duration = rng.gen_range(closed_range.0..=closed_range.1);
        Elevator {
            phase: DoorPhase::Closed,
            timer: duration,
            duration,
            floor: 0,
            toggled: false,
            cabin,
            closed_range,
            open_range,
            transit,
            rng,
        }
    }

    pub fn door_solid(&self) -> bool {
        self.phase != DoorPhase::Open
    }

    pub fn inside(&self, x: f64, y: f64) -> bool {
        let (x0, y0, x1, y1) = self.cabin;
        x > x0 && x < x1 && y > y0 && y < y1
    }

    fn advance(&mut self, dt: f64, robot_inside: bool) {
        self.timer -= dt;
        if self.phase == DoorPhase::Closed && !self.toggled && robot_inside && self.timer <= self.duration / 2.0 {
            self.floor ^= 1;
            self.toggled = true;
        }
        if self.timer <= 0.0 {
            self.phase = self.phase.next();
            self.duration = match self.phase {
                DoorPhase::Closed => self.rng.gen_range(self.closed_range.0..=self.closed_range.1),
                DoorPhase::Open => self.rng.gen_range(self.open_range.0..=self.open_range.1),
                DoorPhase::Opening | DoorPhase::Closing => self.transit,
            };
            if self.phase == DoorPhase::Closed {
                self.toggled = false;
            }
            self.timer += self.duration;
            self.timer = self.timer.max(0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contact {
    Wall,
    Disc(usize),
}

/// Actuation limits and body size of the robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotLimits {
    pub max_speed: f64,
    pub max_turn_rate: f64,
    /// Body radius used against walls and doors.
    pub radius: f64,
    /// Required clearance between the robot's reference point and a
    /// disc obstacle's edge.
    pub safety_distance: f64,
}

impl Default for RobotLimits {
    fn default() -> Self {
        RobotLimits {
            max_speed: 1.2,
            max_turn_rate: 1.5,
            radius: 0.25,
            safety_distance: 0.2,
        }
    }
}

impl RobotLimits {
    pub fn clamp(&self, a: Action) -> Action {
        let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
        Action {
            steering: finite(a.steering).clamp(-self.max_turn_rate, self.max_turn_rate),
            velocity: finite(a.velocity).clamp(0.0, self.max_speed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub map: Arc<GridMap>,
    pub pose: Pose,
    pub command: Action,
    pub discs: Vec<Disc>,
    pub elevator: Option<Elevator>,
    pub time: f64,
    /// Contact registered during the most recent step, if any.
    pub contact: Option<Contact>,
    pub limits: RobotLimits,
}

impl WorldState {
    pub fn new(map: GridMap, pose: Pose) -> Self {
        WorldState {
            map: Arc::new(map),
            pose,
            command: Action::ZERO,
            discs: Vec::new(),
            elevator: None,
            time: 0.0,
            contact: None,
            limits: RobotLimits::default(),
        }
    }

    /// Whether a map cell currently blocks motion and sight.
    pub fn solid(&self, c: Cell) -> bool {
        match c {
            Cell::Free => false,
            Cell::Door => self.elevator.as_ref().map_or(true, Elevator::door_solid),
            _ => true,
        }
    }

    pub fn body_blocked(&self, x: f64, y: f64) -> bool {
        self.map.disc_hits(x, y, self.limits.radius, |c| self.solid(c))
    }

    pub fn disc_contact(&self) -> Option<usize> {
        self.discs.iter().position(|d| {
            self.pose.distance_to(d.x, d.y) < d.radius + self.limits.safety_distance
        })
    }

    /// Moves the robot without dynamics (operator reset).
    pub fn teleport(&mut self, pose: Pose) {
        self.pose = pose;
        self.command = Action::ZERO;
    }
}

/// Advances the world by `dt` seconds under a unicycle model: heading first,
/// then translation along the new heading. Motion into a wall is blocked
/// and flagged; disc obstacles are flagged but not blocking.
pub fn step_dynamics(world: &mut WorldState, action: Action, dt: f64) {
    let a = world.limits.clamp(action);
    world.command = a;
    world.contact = None;
    let theta = wrap_angle(world.pose.theta + a.steering * dt);
    world.pose.theta = theta;
    let nx = world.pose.x + a.velocity * theta.cos() * dt;
    let ny = world.pose.y + a.velocity * theta.sin() * dt;
    if a.velocity > 0.0 {
        // A door closing onto the robot may leave it overlapping; it can
        // still back out.
        if world.body_blocked(nx, ny) && !world.body_blocked(world.pose.x, world.pose.y) {
            world.contact = Some(Contact::Wall);
        } else {
            world.pose.x = nx;
            world.pose.y = ny;
        }
    }
    if let Some(e) = world.elevator.as_mut() {
        let inside = e.inside(world.pose.x, world.pose.y);
        let was_solid = e.door_solid();
        e.advance(dt, inside);
        if !was_solid && e.door_solid() && world.contact.is_none() && world.body_blocked(world.pose.x, world.pose.y) {
            world.contact = Some(Contact::Wall);
        }
    }
    if world.contact.is_none() {
        world.contact = world.disc_contact().map(Contact::Disc);
    }
    world.time += dt;
}

use std::fmt;
use std::str::FromStr;

use super::render::RenderConfig;
use crate::error::{config_err, Error, Result};
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Pedestrian,
    Blindspot,
    Elevator,
    Loop,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Pedestrian, TaskKind::Blindspot, TaskKind::Elevator, TaskKind::Loop];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Pedestrian => "pedestrian",
            TaskKind::Blindspot => "blindspot",
            TaskKind::Elevator => "elevator",
            TaskKind::Loop => "loop",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<TaskKind> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err(format!("unknown task {s:?}")))
    }
}

/// Geometry, timing and camera parameters of one benchmark task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Number of scored steps.
    pub n: usize,
    pub dt: f64,
    /// Ticks between decisions of a learned policy (actions are held).
    pub control_stride: usize,
    pub step_time_limit: f64,
    pub corridor_length: f64,
    pub corridor_width: f64,
    pub safety_distance: f64,
    pub cruise_speed: f64,
    pub crawl_speed: f64,

    pub basket_first: f64,
    pub basket_spacing: f64,
    pub basket_offset: f64,
    pub basket_radius: f64,
    pub basket_height: f64,
    /// Distance ahead of a basket at which the oracle slows down.
    pub crawl_distance: f64,
    /// Lateral clearance the oracle keeps from a basket centre.
    pub swerve_clearance: f64,

    pub adversary_near: f64,
    pub adversary_far: f64,
    pub adversary_radius: f64,
    /// Heading change that counts as evading the adversary, in degrees.
    pub avoid_angle_deg: f64,

    pub door_closed_min: f64,
    pub door_closed_max: f64,
    pub door_open_min: f64,
    pub door_open_max: f64,
    pub door_transit: f64,

    pub junction_pitch: f64,
    /// Distance to a junction at which a turn command is issued.
    pub turn_trigger: f64,
    /// Junctions visited by a randomly generated route.
    pub route_length: usize,

    pub render: RenderConfig,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> TaskSpec {
        let base = TaskSpec {
            kind,
            n: 5,
            dt: 0.1,
            control_stride: 3,
            step_time_limit: 25.0,
            corridor_length: 20.0,
            corridor_width: 2.5,
            safety_distance: 0.2,
            cruise_speed: 1.0,
            crawl_speed: 0.3,
            basket_first: 3.0,
            basket_spacing: 4.0,
            basket_offset: 0.15,
            basket_radius: 0.1,
            basket_height: 0.3,
            crawl_distance: 1.2,
            swerve_clearance: 0.5,
            adversary_near: 1.0,
            adversary_far: 1.2,
            adversary_radius: 0.25,
            avoid_angle_deg: 30.0,
            door_closed_min: 5.0,
            door_closed_max: 10.0,
            door_open_min: 5.0,
            door_open_max: 10.0,
            door_transit: 1.0,
            junction_pitch: 7.0,
            turn_trigger: 2.5,
            route_length: 4,
            render: RenderConfig::default(),
        };
        match kind {
            TaskKind::Blindspot => TaskSpec {
                basket_offset: 0.25,
                render: RenderConfig {
                    blind_radius: 0.9,
                    ..base.render
                },
                ..base
            },
            TaskKind::Pedestrian => TaskSpec {
                n: 15,
                step_time_limit: 10.0,
                cruise_speed: 0.5,
                ..base
            },
            TaskKind::Elevator => TaskSpec {
                n: 4,
                step_time_limit: 10.0,
                cruise_speed: 0.6,
                ..base
            },
            TaskKind::Loop => TaskSpec {
                n: 4,
                cruise_speed: 0.8,
                crawl_speed: 0.5,
                ..base
            },
        }
    }

    /// Same task rendered at a different image size.
    pub fn with_image_size(mut self, size: usize) -> TaskSpec {
        self.render.size = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config_err("task needs at least one step"));
        }
        if !(self.dt > 0.0) || self.control_stride == 0 || !(self.step_time_limit > 0.0) {
            return Err(config_err("dt, control_stride and step_time_limit must be positive"));
        }
        if self.render.size < 4 || !(self.render.fov > 0.0 && self.render.fov < std::f64::consts::PI) {
            return Err(config_err("camera needs a size of at least 4 and a field of view in (0, π)"));
        }
        if !(self.adversary_near > 0.0 && self.adversary_near <= self.adversary_far) {
            return Err(config_err("adversary range must be positive and ordered"));
        }
        if self.door_closed_min > self.door_closed_max || self.door_open_min > self.door_open_max {
            return Err(config_err("door timer ranges must be ordered"));
        }
        let half = self.corridor_width / 2.0;
        if self.kind == TaskKind::Blindspot {
            let last = self.basket_first + (self.n - 1) as f64 * self.basket_spacing;
            if last + 0.5 > self.corridor_length || self.basket_offset + self.basket_radius >= half {
                return Err(config_err("corridor does not contain every basket"));
            }
            let commit = self.render.blind_radius - self.basket_radius;
            if commit <= self.basket_offset {
                return Err(config_err("baskets must be able to enter the blind zone while ahead"));
            }
        }
        if self.kind == TaskKind::Loop && self.junction_pitch < self.corridor_width + 2.0 {
            return Err(config_err("junction pitch too small for the corridor width"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("kind", self.kind);
        m.set("n", self.n);
        m.set("dt", self.dt);
        m.set("control_stride", self.control_stride);
        m.set("step_time_limit", self.step_time_limit);
        m.set("corridor_length", self.corridor_length);
        m.set("corridor_width", self.corridor_width);
        m.set("safety_distance", self.safety_distance);
        m.set("cruise_speed", self.cruise_speed);
        m.set("crawl_speed", self.crawl_speed);
        m.set("basket_first", self.basket_first);
        m.set("basket_spacing", self.basket_spacing);
        m.set("basket_offset", self.basket_offset);
        m.set("basket_radius", self.basket_radius);
        m.set("basket_height", self.basket_height);
        m.set("crawl_distance", self.crawl_distance);
        m.set("swerve_clearance", self.swerve_clearance);
        m.set("adversary_near", self.adversary_near);
        m.set("adversary_far", self.adversary_far);
        m.set("adversary_radius", self.adversary_radius);
        m.set("avoid_angle_deg", self.avoid_angle_deg);
        m.set("door_closed_min", self.door_closed_min);
        m.set("door_closed_max", self.door_closed_max);
        m.set("door_open_min", self.door_open_min);
        m.set("door_open_max", self.door_open_max);
        m.set("door_transit", self.door_transit);
        m.set("junction_pitch", self.junction_pitch);
        m.set("turn_trigger", self.turn_trigger);
        m.set("route_length", self.route_length);
        m.set("image_size", self.render.size);
        m.set("fov_deg", self.render.fov.to_degrees());
        m.set("view_range", self.render.range);
        m.set("blind_radius", self.render.blind_radius);
        m.set("camera_height", self.render.camera_height);
        m.set("wall_height", self.render.wall_height);
        m
    }

    /// Parses a scenario; keys not given take the kind's defaults.
    pub fn from_kv(m: &KvMap) -> Result<TaskSpec> {
        let kind: TaskKind = m.require("kind")?;
        let d = TaskSpec::new(kind);
        let r = d.render;
        let spec = TaskSpec {
            kind,
            n: m.get_or("n", d.n)?,
            dt: m.get_or("dt", d.dt)?,
            control_stride: m.get_or("control_stride", d.control_stride)?,
            step_time_limit: m.get_or("step_time_limit", d.step_time_limit)?,
            corridor_length: m.get_or("corridor_length", d.corridor_length)?,
            corridor_width: m.get_or("corridor_width", d.corridor_width)?,
            safety_distance: m.get_or("safety_distance", d.safety_distance)?,
            cruise_speed: m.get_or("cruise_speed", d.cruise_speed)?,
            crawl_speed: m.get_or("crawl_speed", d.crawl_speed)?,
            basket_first: m.get_or("basket_first", d.basket_first)?,
            basket_spacing: m.get_or("basket_spacing", d.basket_spacing)?,
            basket_offset: m.get_or("basket_offset", d.basket_offset)?,
            basket_radius: m.get_or("basket_radius", d.basket_radius)?,
            basket_height: m.get_or("basket_height", d.basket_height)?,
            crawl_distance: m.get_or("crawl_distance", d.crawl_distance)?,
            swerve_clearance: m.get_or("swerve_clearance", d.swerve_clearance)?,
            adversary_near: m.get_or("adversary_near", d.adversary_near)?,
            adversary_far: m.get_or("adversary_far", d.adversary_far)?,
            adversary_radius: m.get_or("adversary_radius", d.adversary_radius)?,
            avoid_angle_deg: m.get_or("avoid_angle_deg", d.avoid_angle_deg)?,
            door_closed_min: m.get_or("door_closed_min", d.door_closed_min)?,
            door_closed_max: m.get_or("door_closed_max", d.door_closed_max)?,
            door_open_min: m.get_or("door_open_min", d.door_open_min)?,
            door_open_max: m.get_or("door_open_max", d.door_open_max)?,
            door_transit: m.get_or("door_transit", d.door_transit)?,
            junction_pitch: m.get_or("junction_pitch", d.junction_pitch)?,
            turn_trigger: m.get_or("turn_trigger", d.turn_trigger)?,
            route_length: m.get_or("route_length", d.route_length)?,
            render: RenderConfig {
                size: m.get_or("image_size", r.size)?,
                fov: m.get_or("fov_deg", r.fov.to_degrees())?.to_radians(),
                range: m.get_or("view_range", r.range)?,
                blind_radius: m.get_or("blind_radius", r.blind_radius)?,
                camera_height: m.get_or("camera_height", r.camera_height)?,
                wall_height: m.get_or("wall_height", r.wall_height)?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureKind {
    Collision,
    Timeout,
    WrongExit,
    /// The policy produced a non-finite action.
    InvalidAction,
}

impl FailureKind {
    pub fn name(self) -> &'static str {
        match self {
            FailureKind::Collision => "collision",
            FailureKind::Timeout => "timeout",
            FailureKind::WrongExit => "wrong-exit",
            FailureKind::InvalidAction => "invalid-action",
        }
    }
}

impl FromStr for FailureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<FailureKind> {
        [
            FailureKind::Collision,
            FailureKind::Timeout,
            FailureKind::WrongExit,
            FailureKind::InvalidAction,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Data(format!("unknown failure kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepFailure {
    /// 0-based step index.
    pub step: usize,
    pub kind: FailureKind,
}

/// Outcome of one trial: `completed` successful steps out of `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialResult {
    pub completed: usize,
    pub n: usize,
    pub failures: Vec<StepFailure>,
}

impl TrialResult {
    pub fn new(completed: usize, n: usize) -> Result<TrialResult> {
        if completed > n {
            return Err(Error::Data(format!("{completed} completed steps exceed n = {n}")));
        }
        Ok(TrialResult {
            completed,
            n,
            failures: Vec::new(),
        })
    }

    pub fn is_success(&self) -> bool {
        self.completed == self.n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        for kind in TaskKind::ALL {
            let spec = TaskSpec::new(kind);
            spec.validate().unwrap();
            let back = TaskSpec::from_kv(&spec.to_kv()).unwrap();
            assert_eq!(back.kind, spec.kind);
            assert_eq!(back.n, spec.n);
            assert!((back.render.fov - spec.render.fov).abs() < 1e-12);
        }
        assert_eq!(TaskSpec::new(TaskKind::Blindspot).n, 5);
        assert_eq!(TaskSpec::new(TaskKind::Elevator).n, 4);
    }

    #[test]
    fn inconsistent_geometry_is_rejected() {
        let mut s = TaskSpec::new(TaskKind::Blindspot);
        s.basket_spacing = 6.0;
        assert!(s.validate().is_err());
        let mut s = TaskSpec::new(TaskKind::Blindspot);
        s.n = 0;
        assert!(s.validate().is_err());
        assert!(TaskSpec::from_kv(&KvMap::parse("kind = corridor").unwrap()).is_err());
    }

    #[test]
    fn trial_result_bounds() {
        assert!(TrialResult::new(6, 5).is_err());
        assert!(TrialResult::new(5, 5).unwrap().is_success());
    }
}

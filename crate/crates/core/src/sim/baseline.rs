//! Best memoryless controller on the blind-spot task, found by brute force.
//!
//! Both mirrored worlds (basket left or right of the centreline) are driven
//! by the expert along the centreline until the basket drops out of view.
//! From then on the two views are identical, so any function of the current
//! frame issues the same commands in both. The search tries every constant
//! action on a grid, plus the demonstrated swerve towards either side, and
//! keeps the controller with the best step success.
//!
//! The bound covers these controller families only. A disc in a 2.5 m
//! corridor can be bypassed on both sides by a wide enough detour.

use super::render::render;
use super::task::{TaskKind, TaskSpec};
use super::tasks::{follow_line, Blindspot, StepOutcome};
use super::world::{step_dynamics, Pose, WorldState};
use crate::error::{Error, Result};
use crate::model::Action;

#[derive(Debug, Clone, PartialEq)]
pub struct MemorylessCeiling {
    /// Best constant action.
    pub best: Action,
    /// Step success of the best constant action.
    pub constant_success: f64,
    /// Step success of the demonstrated swerve with a fixed side.
    pub swerve_success: f64,
    /// Best fraction of the two mirrored worlds passed by any candidate.
    pub step_success: f64,
    pub candidates: usize,
    /// Whether the two views at handover were byte-identical.
    pub views_identical: bool,
}

fn approach(spec: &TaskSpec, side: f64) -> (WorldState, Blindspot) {
    let (mut w, mut script) = Blindspot::build(spec, 0);
    w.discs[0].y = side * spec.basket_offset;
    let b = w.discs[0];
    w.teleport(Pose::new(b.x - 2.0, 0.0, 0.0));
    let mut empty = w.clone();
    loop {
        empty.pose = w.pose;
        empty.discs.clear();
        if render(&w, &spec.render) == render(&empty, &spec.render) && w.pose.x < b.x {
            return (w, script);
        }
        let a = script.oracle(&w);
        step_dynamics(&mut w, a, spec.dt);
        script.update(&mut w);
    }
}

fn passes(mut w: WorldState, mut script: Blindspot, spec: &TaskSpec, policy: impl Fn(&WorldState) -> Action) -> bool {
    loop {
        let a = policy(&w);
        step_dynamics(&mut w, a, spec.dt);
        if let Some(StepOutcome { failure, .. }) = script.update(&mut w) {
            return failure.is_none();
        }
    }
}

/// Searches all `(steering, velocity)` pairs from the given grids.
pub fn memoryless_ceiling(spec: &TaskSpec, steering: &[f64], velocity: &[f64]) -> Result<MemorylessCeiling> {
    if spec.kind != TaskKind::Blindspot {
        return Err(Error::Config("memoryless ceiling is defined for the blind-spot task".into()));
    }
    if steering.is_empty() || velocity.is_empty() {
        return Err(Error::Config("empty action grid".into()));
    }
    let single = TaskSpec {
        n: 1,
        ..spec.clone()
    };
    let (left, ls) = approach(&single, 1.0);
    let (right, rs) = approach(&single, -1.0);
    let views_identical = render(&left, &spec.render) == render(&right, &spec.render);
    let mut best = (Action::ZERO, -1.0);
    for &s in steering {
        for &v in velocity {
            let a = Action::new(s, v);
            let wins = [
                passes(left.clone(), ls.clone(), &single, |_| a),
                passes(right.clone(), rs.clone(), &single, |_| a),
            ];
            let rate = wins.iter().filter(|&&p| p).count() as f64 / 2.0;
            if rate > best.1 {
                best = (a, rate);
            }
        }
    }
    let lateral = spec.swerve_clearance - spec.basket_offset;
    let mut swerve: f64 = 0.0;
    for side in [1.0, -1.0] {
        let swerve_to = move |w: &WorldState| follow_line(&w.pose, 0.0, 0.0, 0.0, side * lateral, spec.crawl_speed);
        let wins = [
            passes(left.clone(), ls.clone(), &single, swerve_to),
            passes(right.clone(), rs.clone(), &single, swerve_to),
        ];
        swerve = swerve.max(wins.iter().filter(|&&p| p).count() as f64 / 2.0);
    }
    Ok(MemorylessCeiling {
        best: best.0,
        constant_success: best.1,
        swerve_success: swerve,
        step_success: best.1.max(swerve),
        candidates: steering.len() * velocity.len(),
        views_identical,
    })
}

/// Evenly spaced grid including both ends.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

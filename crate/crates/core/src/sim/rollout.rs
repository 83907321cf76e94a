use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::map::wrap_angle;
use super::render::{render, Observation};
use super::task::{FailureKind, StepFailure, TaskKind, TaskSpec, TrialResult};
use super::tasks::{LoopRun, Script};
use super::world::{step_dynamics, WorldState};
use crate::data::{Episode, EpisodeMeta, Phase, StepRecord};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::model::{Action, Mode};
use crate::par::Execution;

/// What a policy gets to see at a decision tick.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    /// Rendered view, present when [`Policy::needs_observation`] is true.
    pub obs: Option<&'a Observation>,
    pub mode: Mode,
    /// Privileged expert action for the current state.
    pub expert: Action,
    pub time: f64,
}

/// Stateful controller driven by [`run_task`].
pub trait Policy {
    /// Called once at the start of every trial.
    fn reset(&mut self, seed: u64) -> Result<()>;

    fn act(&mut self, input: &PolicyInput) -> Result<Action>;

    fn needs_observation(&self) -> bool {
        true
    }

    /// Scripted policies act every simulator tick; learned ones act every
    /// `control_stride` ticks and hold their action in between.
    fn acts_every_tick(&self) -> bool {
        false
    }
}

/// The privileged expert.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn reset(&mut self, _seed: u64) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, input: &PolicyInput) -> Result<Action> {
        Ok(input.expert)
    }

    fn needs_observation(&self) -> bool {
        false
    }

    fn acts_every_tick(&self) -> bool {
        true
    }
}

/// Always outputs the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub Action);

impl Policy for ConstantPolicy {
    fn reset(&mut self, _seed: u64) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _input: &PolicyInput) -> Result<Action> {
        Ok(self.0)
    }

    fn needs_observation(&self) -> bool {
        false
    }

    fn acts_every_tick(&self) -> bool {
        true
    }
}

/// Expert with held Gaussian perturbations, used to visit off-path states
/// during demonstrations. Recorded labels stay the clean expert action.
#[derive(Debug, Clone)]
pub struct NoisyOracle {
    pub steering_sigma: f64,
    pub velocity_sigma: f64,
    /// Ticks each noise sample is held.
    pub hold: usize,
    rng: ChaCha8Rng,
    noise: Action,
    age: usize,
}

impl NoisyOracle {
    pub fn new(steering_sigma: f64, velocity_sigma: f64, hold: usize) -> Self {
        NoisyOracle {
            steering_sigma,
            velocity_sigma,
            hold: hold.max(1),
            rng: ChaCha8Rng::seed_from_u64(0),
            noise: Action::ZERO,
            age: 0,
        }
    }
}

impl Policy for NoisyOracle {
    fn reset(&mut self, seed: u64) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_79);
        self.noise = Action::ZERO;
        self.age = 0;
        Ok(())
    }

    fn act(&mut self, input: &PolicyInput) -> Result<Action> {
        if self.age % self.hold == 0 {
            self.noise = Action::new(
                self.steering_sigma * self.rng.sample::<f64, _>(StandardNormal),
                self.velocity_sigma * self.rng.sample::<f64, _>(StandardNormal),
            );
        }
        self.age += 1;
        // Velocity noise is relative so that a stopped expert stays stopped.
        Ok(Action::new(
            input.expert.steering + self.noise.steering,
            input.expert.velocity * (1.0 + self.noise.velocity),
        ))
    }

    fn needs_observation(&self) -> bool {
        false
    }

    fn acts_every_tick(&self) -> bool {
        true
    }
}

/// Which world layout a trial uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// The evaluation layout of the task.
    Evaluation,
    /// Demonstration layout; differs only for the loop task, which then
    /// follows a random route instead of a closed loop.
    Demonstration,
}

pub fn build(spec: &TaskSpec, seed: u64, layout: Layout) -> (WorldState, Script) {
    match (spec.kind, layout) {
        (TaskKind::Loop, Layout::Demonstration) => {
            let (w, s) = LoopRun::build_route(spec, seed);
            (w, Script::Loop(s))
        }
        _ => Script::build(spec, seed),
    }
}

/// Recording options for [`rollout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recording {
    pub enabled: bool,
    /// Record every this many ticks.
    pub every: usize,
}

impl Recording {
    pub const OFF: Recording = Recording { enabled: false, every: 1 };
    pub const ALL: Recording = Recording { enabled: true, every: 1 };
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub result: TrialResult,
    /// Oracle-labelled records, if recording was enabled.
    pub records: Vec<StepRecord>,
    pub ticks: u64,
}

fn tick_budget(spec: &TaskSpec, steps: usize) -> u64 {
    let per_step = 4.0 * (spec.step_time_limit + spec.door_closed_max + spec.door_open_max + 2.0 * spec.door_transit);
    ((steps as f64 * per_step) / spec.dt).ceil() as u64 + 10
}

/// Runs one trial of `spec` with `policy` and returns its step count.
pub fn run_task(policy: &mut dyn Policy, spec: &TaskSpec, seed: u64) -> Result<TrialResult> {
    Ok(rollout(policy, spec, seed, Layout::Evaluation, Recording::OFF)?.result)
}

/// Runs one trial, optionally recording oracle-labelled frames.
///
/// A non-finite action aborts the trial with [`FailureKind::InvalidAction`]
/// at the current step.
pub fn rollout(
    policy: &mut dyn Policy,
    spec: &TaskSpec,
    seed: u64,
    layout: Layout,
    recording: Recording,
) -> Result<Rollout> {
    spec.validate()?;
    let (mut w, mut script) = build(spec, seed, layout);
    policy.reset(seed)?;
    let n = script.steps();
    let budget = tick_budget(spec, n);
    let mut failures = Vec::new();
    let mut completed = 0;
    let mut records = Vec::new();
    let mut held = Action::ZERO;
    let mut tick = 0u64;
    let every_tick = policy.acts_every_tick();
    let stride = spec.control_stride as u64;
    while !script.finished() {
        let mode = script.mode(&w);
        let expert = script.oracle(&w);
        let record = recording.enabled && tick % recording.every as u64 == 0;
        let decide = every_tick || tick % stride == 0;
        let obs = ((decide && policy.needs_observation()) || record).then(|| render(&w, &spec.render));
        if decide {
            let input = PolicyInput {
                obs: obs.as_ref(),
                mode,
                expert,
                time: w.time,
            };
            let action = match policy.act(&input) {
                Ok(a) if a.is_finite() => Some(a),
                Ok(_) | Err(Error::NonFinite(_)) => None,
                Err(e) => return Err(e),
            };
            match action {
                Some(a) => held = a,
                None => {
                    let out = script.abort(FailureKind::InvalidAction);
                    failures.push(StepFailure {
                        step: out.step,
                        kind: FailureKind::InvalidAction,
                    });
                    break;
                }
            }
        }
        if let (true, Some(obs)) = (record, obs) {
            records.push(StepRecord {
                obs,
                mode,
                action: w.limits.clamp(expert),
                intervention: false,
                time: tick,
            });
        }
        step_dynamics(&mut w, held, spec.dt);
        tick += 1;
        if let Some(out) = script.update(&mut w) {
            match out.failure {
                None => completed += 1,
                Some(kind) => failures.push(StepFailure { step: out.step, kind }),
            }
        }
        if tick >= budget && !script.finished() {
            let out = script.abort(FailureKind::Timeout);
            failures.push(StepFailure {
                step: out.step,
                kind: FailureKind::Timeout,
            });
        }
    }
    let mut result = TrialResult::new(completed, n)?;
    result.failures = failures;
    Ok(Rollout {
        result,
        records,
        ticks: tick,
    })
}

/// Seed of the `i`-th trial or episode derived from a base seed.
pub fn derive_seed(base: u64, i: u64) -> u64 {
    let mut z = base.wrapping_add(i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Settings for oracle demonstrations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoConfig {
    pub steering_noise: f64,
    pub velocity_noise: f64,
    pub noise_hold: usize,
    pub record_every: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            steering_noise: 0.15,
            velocity_noise: 0.1,
            noise_hold: 3,
            record_every: 1,
        }
    }
}

impl DemoConfig {
    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("steering_noise", self.steering_noise);
        m.set("velocity_noise", self.velocity_noise);
        m.set("noise_hold", self.noise_hold);
        m.set("record_every", self.record_every);
        m
    }

    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let d = DemoConfig::default();
        Ok(DemoConfig {
            steering_noise: m.get_or("steering_noise", d.steering_noise)?,
            velocity_noise: m.get_or("velocity_noise", d.velocity_noise)?,
            noise_hold: m.get_or("noise_hold", d.noise_hold)?,
            record_every: m.get_or("record_every", d.record_every)?,
        })
    }
}

/// Oracle-driven episodes cycling through `specs`. Episode `i` uses
/// `specs[i % specs.len()]` and seed `derive_seed(seed, i)`.
pub fn collect_demos(
    specs: &[TaskSpec],
    episode_count: usize,
    seed: u64,
    cfg: &DemoConfig,
    exec: Execution,
) -> Result<Vec<Episode>> {
    if specs.is_empty() {
        return Err(Error::Config("no task specs for demonstrations".into()));
    }
    if cfg.record_every == 0 {
        return Err(Error::Config("record_every must be positive".into()));
    }
    let episodes = exec.map_range(episode_count, |i| {
        let spec = &specs[i % specs.len()];
        let s = derive_seed(seed, i as u64);
        let mut policy = NoisyOracle::new(cfg.steering_noise, cfg.velocity_noise, cfg.noise_hold);
        let rec = Recording {
            enabled: true,
            every: cfg.record_every,
        };
        let r = rollout(&mut policy, spec, s, Layout::Demonstration, rec)?;
        Episode::new(
            EpisodeMeta {
                task: spec.kind,
                seed: s,
                phase: Phase::Demonstration,
            },
            r.records,
        )
    });
    episodes.into_iter().collect()
}

/// When the expert takes over from the learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionConfig {
    /// Position gap to the expert's reference run, metres.
    pub distance: f64,
    /// Heading gap to the reference run, radians.
    pub heading: f64,
    /// Ticks the expert keeps control once it intervenes.
    pub hold: usize,
    /// Ticks between re-syncing the reference run to the real robot.
    pub resync: usize,
    pub record_every: usize,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        InterventionConfig {
            distance: 0.5,
            heading: 45f64.to_radians(),
            hold: 60,
            resync: 20,
            record_every: 1,
        }
    }
}

impl InterventionConfig {
    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        m.set("distance", self.distance);
        m.set("heading_deg", self.heading.to_degrees());
        m.set("hold", self.hold);
        m.set("resync", self.resync);
        m.set("record_every", self.record_every);
        m
    }

    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let d = InterventionConfig::default();
        Ok(InterventionConfig {
            distance: m.get_or("distance", d.distance)?,
            heading: m.get_or("heading_deg", d.heading.to_degrees())?.to_radians(),
            hold: m.get_or("hold", d.hold)?,
            resync: m.get_or("resync", d.resync)?,
            record_every: m.get_or("record_every", d.record_every)?,
        })
    }
}

/// Learner-driven trial where the expert takes over whenever the robot
/// strays from where the expert would be. Only expert-controlled ticks are
/// recorded; each contiguous takeover becomes one episode.
pub fn collect_interventions(
    policy: &mut dyn Policy,
    spec: &TaskSpec,
    seed: u64,
    cfg: &InterventionConfig,
) -> Result<Vec<Episode>> {
    spec.validate()?;
    if cfg.record_every == 0 || cfg.resync == 0 {
        return Err(Error::Config("record_every and resync must be positive".into()));
    }
    let (mut w, mut script) = build(spec, seed, Layout::Evaluation);
    let (mut gw, mut gs) = (w.clone(), script.clone());
    policy.reset(seed)?;
    let meta = EpisodeMeta {
        task: spec.kind,
        seed,
        phase: Phase::Intervention,
    };
    let budget = tick_budget(spec, script.steps());
    let stride = spec.control_stride as u64;
    let every_tick = policy.acts_every_tick();
    let mut fragments = Vec::new();
    let mut current: Vec<StepRecord> = Vec::new();
    let mut expert_left = 0usize;
    let mut since_sync = 0usize;
    let mut held = Action::ZERO;
    let mut tick = 0u64;
    while !script.finished() && tick < budget {
        let mode = script.mode(&w);
        let expert = script.oracle(&w);
        if expert_left == 0 {
            let gap = w.pose.distance_to(gw.pose.x, gw.pose.y);
            let turn = wrap_angle(w.pose.theta - gw.pose.theta).abs();
            if gap > cfg.distance || turn > cfg.heading {
                expert_left = cfg.hold;
            }
        }
        let action = if expert_left > 0 {
            if tick % cfg.record_every as u64 == 0 {
                current.push(StepRecord {
                    obs: render(&w, &spec.render),
                    mode,
                    action: w.limits.clamp(expert),
                    intervention: true,
                    time: tick,
                });
            }
            expert_left -= 1;
            if expert_left == 0 {
                fragments.push(Episode::new(meta, std::mem::take(&mut current))?);
                since_sync = cfg.resync;
            }
            expert
        } else {
            if every_tick || tick % stride == 0 {
                let obs = policy.needs_observation().then(|| render(&w, &spec.render));
                let input = PolicyInput {
                    obs: obs.as_ref(),
                    mode,
                    expert,
                    time: w.time,
                };
                held = match policy.act(&input) {
                    Ok(a) if a.is_finite() => a,
                    Ok(_) | Err(Error::NonFinite(_)) => Action::ZERO,
                    Err(e) => return Err(e),
                };
            }
            held
        };
        if since_sync >= cfg.resync {
            gw = w.clone();
            gs = script.clone();
            since_sync = 0;
        }
        let ghost_action = gs.oracle(&gw);
        step_dynamics(&mut gw, ghost_action, spec.dt);
        gs.update(&mut gw);
        step_dynamics(&mut w, action, spec.dt);
        script.update(&mut w);
        since_sync += 1;
        tick += 1;
    }
    if !current.is_empty() {
        fragments.push(Episode::new(meta, current)?);
    }
    Ok(fragments)
}

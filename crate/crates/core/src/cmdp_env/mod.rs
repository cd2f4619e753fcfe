//! Episode lifecycle for the river-following CMDP.
//!
//! One scalar cost stream: tight violations cost 1.0, loose ones 0.2, and a
//! nonzero cost is only ever emitted on the terminal step.

mod pilot;
mod trace;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::river_world::{
    render_frame, wrap_angle, Containment, Frame, Pose, Vec3, World,
};

pub use pilot::ScriptedPilot;
pub use trace::{read_trace, write_trace, TraceRecord};

pub const TIGHT_COST: f64 = 1.0;
pub const LOOSE_COST: f64 = 0.2;
/// Maximum episodic return.
pub const MAX_RETURN: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode is finished; call reset first")]
    EpisodeDone,
    #[error("environment has not been reset")]
    NotReset,
    #[error("action branch {branch} has value {value}, expected 0, 1 or 2")]
    InvalidAction { branch: usize, value: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub longitudinal_step: f64,
    pub lateral_step: f64,
    pub vertical_step: f64,
    pub yaw_step_deg: f64,
    /// Horizontal distance at which a segment center counts as visited.
    pub visit_radius: f64,
    pub yaw_limit_deg: f64,
    pub yaw_patience: usize,
    pub idle_patience: usize,
    pub max_steps: usize,
    pub reset_altitude: (f64, f64),
    pub reset_yaw_jitter_deg: f64,
    /// Reset lateral offset as a fraction of the river half-width.
    pub reset_lateral_fraction: f64,
    pub resolution: usize,
    pub cost_budget: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            longitudinal_step: 1.0,
            lateral_step: 1.0,
            vertical_step: 0.5,
            yaw_step_deg: 6.0,
            visit_radius: 6.0,
            yaw_limit_deg: 60.0,
            yaw_patience: 20,
            idle_patience: 100,
            max_steps: 500,
            reset_altitude: (3.0, 6.0),
            reset_yaw_jitter_deg: 30.0,
            reset_lateral_fraction: 0.5,
            resolution: 32,
            cost_budget: 0.1,
        }
    }
}

/// Four-branch discrete action; each branch value is in `{0, 1, 2}` and maps to `{-1, 0, +1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub vertical: u8,
    pub yaw: u8,
    pub longitudinal: u8,
    pub lateral: u8,
}

impl Action {
    pub const BRANCHES: usize = 4;
    pub const CHOICES: usize = 3;
    pub const NEUTRAL: Action = Action {
        vertical: 1,
        yaw: 1,
        longitudinal: 1,
        lateral: 1,
    };

    pub fn from_branches(b: &[usize]) -> Result<Self, EnvError> {
        assert_eq!(b.len(), Self::BRANCHES, "action needs four branches");
        for (branch, &value) in b.iter().enumerate() {
            if value > 2 {
                return Err(EnvError::InvalidAction { branch, value });
            }
        }
        Ok(Self {
            vertical: b[0] as u8,
            yaw: b[1] as u8,
            longitudinal: b[2] as u8,
            lateral: b[3] as u8,
        })
    }

    pub fn branches(&self) -> [usize; 4] {
        [
            self.vertical as usize,
            self.yaw as usize,
            self.longitudinal as usize,
            self.lateral as usize,
        ]
    }
}

fn signed(v: u8) -> f64 {
    v as f64 - 1.0
}

/// Moves in the yaw-aligned body frame, then turns. Positive lateral is to the left,
/// positive yaw is counter-clockwise.
pub fn apply_action(pose: &Pose, action: Action, cfg: &EnvConfig) -> Pose {
    let (s, c) = pose.yaw.sin_cos();
    let fwd = signed(action.longitudinal) * cfg.longitudinal_step;
    let left = signed(action.lateral) * cfg.lateral_step;
    Pose::new(
        pose.x + fwd * c - left * s,
        pose.y + fwd * s + left * c,
        pose.z + signed(action.vertical) * cfg.vertical_step,
        pose.yaw + signed(action.yaw) * cfg.yaw_step_deg.to_radians(),
    )
}

/// Reward for covering segments: `10 * |new| / M`. Marks the new ones visited.
pub fn compute_reward(visited: &mut [bool], covered: &[usize]) -> f64 {
    let m = visited.len();
    let mut fresh = 0;
    for &k in covered {
        if !visited[k] {
            visited[k] = true;
            fresh += 1;
        }
    }
    MAX_RETURN * fresh as f64 / m as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Collision,
    OutOfVolumeHorizontally,
    OutOfVolumeVertically,
    YawOverDeviation,
    Idle,
    MaxStepReached,
    Running,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutcomeClass {
    Tight,
    Loose,
    Success,
    Running,
}

impl Outcome {
    /// Terminal outcomes in reporting order.
    pub const TERMINAL: [Outcome; 7] = [
        Outcome::Success,
        Outcome::Collision,
        Outcome::OutOfVolumeHorizontally,
        Outcome::OutOfVolumeVertically,
        Outcome::YawOverDeviation,
        Outcome::Idle,
        Outcome::MaxStepReached,
    ];

    pub fn class(self) -> OutcomeClass {
        match self {
            Outcome::Collision | Outcome::OutOfVolumeHorizontally | Outcome::OutOfVolumeVertically => {
                OutcomeClass::Tight
            }
            Outcome::YawOverDeviation | Outcome::Idle | Outcome::MaxStepReached => OutcomeClass::Loose,
            Outcome::Success => OutcomeClass::Success,
            Outcome::Running => OutcomeClass::Running,
        }
    }

    pub fn cost(self) -> f64 {
        match self.class() {
            OutcomeClass::Tight => TIGHT_COST,
            OutcomeClass::Loose => LOOSE_COST,
            _ => 0.0,
        }
    }

    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "Success",
            Outcome::Collision => "Collision",
            Outcome::OutOfVolumeHorizontally => "OutOfVolumeHorizontally",
            Outcome::OutOfVolumeVertically => "OutOfVolumeVertically",
            Outcome::YawOverDeviation => "YawOverDeviation",
            Outcome::Idle => "Idle",
            Outcome::MaxStepReached => "MaxStepReached",
            Outcome::Running => "Running",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of a step without the rendered observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub frame: Frame,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
    pub outcome: Outcome,
}

#[derive(Clone, Debug)]
pub struct EpisodeState {
    pub pose: Pose,
    pub visited: Vec<bool>,
    pub visited_count: usize,
    pub step_count: usize,
    pub idle_counter: usize,
    pub yaw_counter: usize,
    pub outcome: Outcome,
}

#[derive(Clone, Debug)]
pub struct RiverEnv {
    world: Arc<World>,
    config: EnvConfig,
    state: Option<EpisodeState>,
}

impl RiverEnv {
    pub fn new(world: Arc<World>, config: EnvConfig) -> Self {
        Self {
            world,
            config,
            state: None,
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_arc(&self) -> Arc<World> {
        Arc::clone(&self.world)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&EpisodeState> {
        self.state.as_ref()
    }

    pub fn pose(&self) -> Option<Pose> {
        self.state.as_ref().map(|s| s.pose)
    }

    /// Rejection-samples a safe pose over the river.
    pub fn sample_safe_pose(world: &World, cfg: &EnvConfig, rng: &mut impl Rng) -> Pose {
        let arc = world.spline.arc_length();
        loop {
            let s = rng.gen_range(0.0..arc);
            let (p, t) = world.sample_spline(s);
            let lateral = rng.gen_range(-1.0..=1.0) * cfg.reset_lateral_fraction * world.width_at(s) / 2.0;
            let z = rng.gen_range(cfg.reset_altitude.0..=cfg.reset_altitude.1);
            let jitter = rng.gen_range(-1.0..=1.0) * cfg.reset_yaw_jitter_deg.to_radians();
            let pose = Pose::new(
                p.x - t.y * lateral,
                p.y + t.x * lateral,
                z,
                t.y.atan2(t.x) + jitter,
            );
            if Self::is_safe(world, cfg, &pose) {
                return pose;
            }
        }
    }

    /// Inside the volume, clear of obstacles, and heading within the yaw limit.
    pub fn is_safe(world: &World, cfg: &EnvConfig, pose: &Pose) -> bool {
        if world.inside_volume(pose) != Containment::Inside || world.check_collision(pose) {
            return false;
        }
        let arc = world.spline.project(pose.position()).arc;
        wrap_angle(pose.yaw - world.spline.heading(arc)).abs() <= cfg.yaw_limit_deg.to_radians()
    }

    pub fn reset(&mut self, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = Self::sample_safe_pose(&self.world, &self.config, &mut rng);
        self.reset_to(pose)
    }

    /// Starts an episode from an explicit pose.
    pub fn reset_to(&mut self, pose: Pose) -> Frame {
        self.state = Some(EpisodeState {
            pose,
            visited: vec![false; self.world.spline.segment_count()],
            visited_count: 0,
            step_count: 0,
            idle_counter: 0,
            yaw_counter: 0,
            outcome: Outcome::Running,
        });
        self.render()
    }

    pub fn render(&self) -> Frame {
        let pose = self.pose().expect("reset before rendering");
        render_frame(&self.world, &pose, self.config.resolution)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        let t = self.advance(action)?;
        Ok(StepResult {
            frame: self.render(),
            reward: t.reward,
            cost: t.cost,
            done: t.done,
            outcome: t.outcome,
        })
    }

    /// Same as [`RiverEnv::step`] without rendering.
    pub fn advance(&mut self, action: Action) -> Result<Transition, EnvError> {
        let world = Arc::clone(&self.world);
        let cfg = &self.config;
        let st = self.state.as_mut().ok_or(EnvError::NotReset)?;
        if st.outcome.is_terminal() {
            return Err(EnvError::EpisodeDone);
        }
        st.pose = apply_action(&st.pose, action, cfg);
        st.step_count += 1;

        let proj = world.spline.project(st.pose.position());
        let covered = covered_segments(&world, st.pose.position(), proj.arc, cfg.visit_radius);
        let reward = compute_reward(&mut st.visited, &covered);
        st.visited_count = st.visited.iter().filter(|&&v| v).count();

        st.idle_counter = if reward > 0.0 { 0 } else { st.idle_counter + 1 };
        let deviation = wrap_angle(st.pose.yaw - world.spline.heading(proj.arc)).abs();
        st.yaw_counter = if deviation > cfg.yaw_limit_deg.to_radians() {
            st.yaw_counter + 1
        } else {
            0
        };

        let outcome = classify(&world, cfg, st);
        st.outcome = outcome;
        Ok(Transition {
            reward,
            cost: outcome.cost(),
            done: outcome.is_terminal(),
            outcome,
        })
    }
}

/// Segment indices whose centers lie within `radius` horizontally of `p`.
fn covered_segments(world: &World, p: Vec3, arc: f64, radius: f64) -> Vec<usize> {
    let sp = &world.spline;
    let m = sp.segment_count() as i64;
    let reach = (radius / sp.segment_length()).ceil() as i64 + 1;
    let k0 = sp.segment_of(arc) as i64;
    let mut out = Vec::new();
    for d in -reach..=reach {
        let k = (k0 + d).rem_euclid(m) as usize;
        if sp.segment_center(k).horizontal_dist(p) <= radius && !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

fn classify(world: &World, cfg: &EnvConfig, st: &EpisodeState) -> Outcome {
    if world.check_collision(&st.pose) {
        return Outcome::Collision;
    }
    match world.inside_volume(&st.pose) {
        Containment::OutVertical => return Outcome::OutOfVolumeVertically,
        Containment::OutHorizontal => return Outcome::OutOfVolumeHorizontally,
        Containment::Inside => {}
    }
    if st.yaw_counter >= cfg.yaw_patience {
        Outcome::YawOverDeviation
    } else if st.idle_counter >= cfg.idle_patience {
        Outcome::Idle
    } else if st.step_count >= cfg.max_steps {
        Outcome::MaxStepReached
    } else if st.visited_count == st.visited.len() {
        Outcome::Success
    } else {
        Outcome::Running
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::river_world::{generate_world, Level, RiverSpline, WidthProfile, WorldSpec};

    fn env(level: Level, seed: u64) -> RiverEnv {
        RiverEnv::new(Arc::new(generate_world(level, seed)), EnvConfig::default())
    }

    fn circle_env() -> RiverEnv {
        let spec = WorldSpec {
            level: Level::Easy,
            seed: 0,
            bridge_count: 0,
            island_count: 0,
            turn_count: 0,
            width_profile: WidthProfile::constant(12.0),
            volume_margin: 2.0,
            volume_floor: 2.0,
            volume_ceiling: 12.0,
        };
        let spline = RiverSpline::circle(Vec3::default(), 60.0, 200);
        RiverEnv::new(
            Arc::new(World::from_parts(spec, spline, vec![], vec![])),
            EnvConfig::default(),
        )
    }

    #[test]
    fn neutral_action_keeps_pose() {
        let p = Pose::new(1.0, 2.0, 3.0, 0.7);
        assert_eq!(apply_action(&p, Action::NEUTRAL, &EnvConfig::default()), p);
    }

    #[test]
    fn forward_moves_along_x_at_zero_yaw() {
        let p = Pose::new(1.0, 2.0, 3.0, 0.0);
        let a = Action::from_branches(&[1, 1, 2, 1]).unwrap();
        let q = apply_action(&p, a, &EnvConfig::default());
        assert_eq!((q.x, q.y, q.z), (2.0, 2.0, 3.0));
    }

    #[test]
    fn yaw_actions_invert() {
        let cfg = EnvConfig::default();
        let p = Pose::new(0.0, 0.0, 4.0, 3.1);
        let left = Action::from_branches(&[1, 2, 1, 1]).unwrap();
        let right = Action::from_branches(&[1, 0, 1, 1]).unwrap();
        let q = apply_action(&apply_action(&p, left, &cfg), right, &cfg);
        assert!(wrap_angle(q.yaw - p.yaw).abs() < 1e-12);
        assert!(q.yaw > -std::f64::consts::PI && q.yaw <= std::f64::consts::PI);
    }

    #[test]
    fn invalid_branch_value_rejected() {
        assert_eq!(
            Action::from_branches(&[0, 3, 1, 1]),
            Err(EnvError::InvalidAction { branch: 1, value: 3 })
        );
    }

    #[test]
    fn reward_counts_only_new_segments() {
        let mut visited = vec![false; 200];
        assert!((compute_reward(&mut visited, &[0, 1, 2, 3, 4]) - 0.25).abs() < 1e-15);
        assert_eq!(compute_reward(&mut visited, &[1, 2]), 0.0);
    }

    #[test]
    fn outcome_costs() {
        assert_eq!(Outcome::Collision.cost(), 1.0);
        assert_eq!(Outcome::OutOfVolumeHorizontally.cost(), 1.0);
        assert_eq!(Outcome::OutOfVolumeVertically.cost(), 1.0);
        assert_eq!(Outcome::YawOverDeviation.cost(), 0.2);
        assert_eq!(Outcome::Idle.cost(), 0.2);
        assert_eq!(Outcome::MaxStepReached.cost(), 0.2);
        assert_eq!(Outcome::Success.cost(), 0.0);
        assert_eq!(Outcome::Running.cost(), 0.0);
    }

    #[test]
    fn reset_is_safe_and_deterministic() {
        for level in Level::ALL {
            let mut e = env(level, 3);
            for seed in 0..20 {
                let f1 = e.reset(seed);
                let st = e.state().unwrap();
                assert_eq!(st.step_count, 0);
                assert_eq!(st.visited_count, 0);
                assert!(RiverEnv::is_safe(e.world(), e.config(), &st.pose));
                let p1 = st.pose;
                let f2 = e.reset(seed);
                assert_eq!(e.pose().unwrap(), p1);
                assert_eq!(f1, f2);
            }
        }
    }

    #[test]
    fn stepping_requires_reset_and_rejects_done() {
        let mut e = circle_env();
        assert_eq!(e.advance(Action::NEUTRAL), Err(EnvError::NotReset));
        e.reset_to(Pose::new(60.0, 0.0, 4.0, 0.0));
        let up = Action::from_branches(&[2, 1, 1, 1]).unwrap();
        let mut last = e.advance(up).unwrap();
        while !last.done {
            last = e.advance(up).unwrap();
        }
        assert_eq!(last.outcome, Outcome::OutOfVolumeVertically);
        assert_eq!(last.cost, 1.0);
        assert_eq!(e.advance(Action::NEUTRAL), Err(EnvError::EpisodeDone));
    }

    #[test]
    fn hovering_goes_idle() {
        let mut e = circle_env();
        e.reset_to(Pose::new(60.0, 0.0, 4.0, std::f64::consts::FRAC_PI_2));
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let t = e.advance(Action::NEUTRAL).unwrap();
            total += t.reward;
            steps += 1;
            if t.done {
                assert_eq!(t.outcome, Outcome::Idle);
                assert_eq!(t.cost, 0.2);
                break;
            }
            assert_eq!(t.cost, 0.0);
        }
        // First step covers the nearby segments, then 100 idle steps follow.
        assert!(total > 0.0);
        assert_eq!(steps, 101);
    }

    #[test]
    fn sustained_yaw_deviation_terminates() {
        let mut e = circle_env();
        // Facing against the flow, inside the volume, moving sideways keeps earning reward.
        e.reset_to(Pose::new(60.0, 0.0, 4.0, -std::f64::consts::FRAC_PI_2));
        let mut n = 0;
        loop {
            let t = e.advance(Action::NEUTRAL).unwrap();
            n += 1;
            if t.done {
                assert_eq!(t.outcome, Outcome::YawOverDeviation);
                break;
            }
        }
        assert_eq!(n, 20);
    }

    #[test]
    fn step_limit_terminates() {
        let mut e = circle_env();
        e.config.max_steps = 5;
        e.reset_to(Pose::new(60.0, 0.0, 4.0, std::f64::consts::FRAC_PI_2));
        let mut last = e.advance(Action::NEUTRAL).unwrap();
        while !last.done {
            last = e.advance(Action::NEUTRAL).unwrap();
        }
        assert_eq!(last.outcome, Outcome::MaxStepReached);
        assert_eq!(e.state().unwrap().step_count, 5);
    }

    #[test]
    fn step_renders_configured_resolution() {
        let mut e = env(Level::Easy, 1);
        e.reset(0);
        let r = e.step(Action::NEUTRAL).unwrap();
        assert_eq!(r.frame.extents(), [32, 32, 4]);
        assert_eq!(r.cost, 0.0);
        assert!(r.reward >= 0.0);
    }
}

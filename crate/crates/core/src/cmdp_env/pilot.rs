use crate::river_world::{wrap_angle, Pose, World};

use super::{Action, EnvError, Outcome, RiverEnv};

/// Hand-written controller that chases a point ahead on the centerline.
#[derive(Clone, Copy, Debug)]
pub struct ScriptedPilot {
    pub lookahead: f64,
    pub deadband_deg: f64,
    pub lateral_deadband: f64,
    pub altitude: f64,
}

impl Default for ScriptedPilot {
    fn default() -> Self {
        Self {
            lookahead: 4.0,
            deadband_deg: 3.0,
            lateral_deadband: 0.5,
            altitude: 4.0,
        }
    }
}

/// Summary of one scripted episode.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotRun {
    pub episode_return: f64,
    pub episode_cost: f64,
    pub steps: usize,
    pub outcome: Outcome,
}

impl ScriptedPilot {
    pub fn act(&self, world: &World, pose: &Pose) -> Action {
        let pr = world.spline.project(pose.position());
        let (target, _) = world.sample_spline(pr.arc + self.lookahead);
        let want = (target.y - pose.y).atan2(target.x - pose.x);
        let err = wrap_angle(want - pose.yaw).to_degrees();
        let band = |v: f64, dead: f64| -> u8 {
            if v > dead {
                2
            } else if v < -dead {
                0
            } else {
                1
            }
        };
        Action {
            vertical: band(self.altitude - pose.z, 0.25),
            yaw: band(err, self.deadband_deg),
            longitudinal: 2,
            lateral: band(-pr.signed_offset, self.lateral_deadband),
        }
    }

    /// Runs one episode without rendering.
    pub fn run(&self, env: &mut RiverEnv, seed: u64) -> Result<PilotRun, EnvError> {
        env.reset(seed);
        self.run_from_current(env)
    }

    pub fn run_from_current(&self, env: &mut RiverEnv) -> Result<PilotRun, EnvError> {
        let (mut ret, mut cost, mut steps) = (0.0, 0.0, 0);
        loop {
            let pose = env.pose().ok_or(EnvError::NotReset)?;
            let a = self.act(env.world(), &pose);
            let t = env.advance(a)?;
            ret += t.reward;
            cost += t.cost;
            steps += 1;
            if t.done {
                return Ok(PilotRun {
                    episode_return: ret,
                    episode_cost: cost,
                    steps,
                    outcome: t.outcome,
                });
            }
        }
    }
}

use std::sync::Arc;

use crate::cmdp_env::{Action, EnvConfig, RiverEnv};
use crate::river_world::{Frame, World};
use crate::safe_algos::{EnvStep, Environment};
use crate::vision_codec::Vae;

/// River environment whose observation is the VAE latent mean of the rendered frame.
#[derive(Clone)]
pub struct EncodedRiverEnv {
    pub env: RiverEnv,
    pub vae: Arc<Vae>,
}

impl EncodedRiverEnv {
    /// Panics if the encoder resolution differs from the environment's.
    pub fn new(world: Arc<World>, config: EnvConfig, vae: Arc<Vae>) -> Self {
        assert_eq!(
            vae.resolution, config.resolution,
            "encoder resolution must match the rendered frame"
        );
        Self {
            env: RiverEnv::new(world, config),
            vae,
        }
    }

    fn encode(&self, frame: &Frame) -> Vec<f64> {
        self.vae
            .encode(&frame.channels(self.vae.channels))
            .expect("frame shape matches encoder")
    }
}

impl Environment for EncodedRiverEnv {
    fn obs_dim(&self) -> usize {
        self.vae.latent_dim
    }

    fn action_layout(&self) -> (usize, usize) {
        (Action::BRANCHES, Action::CHOICES)
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let frame = self.env.reset(seed);
        self.encode(&frame)
    }

    fn step(&mut self, action: &[usize]) -> EnvStep {
        let action = Action::from_branches(action).expect("policy emits valid branch values");
        let st = self.env.step(action).expect("runner resets after terminal steps");
        EnvStep {
            obs: self.encode(&st.frame),
            reward: st.reward,
            cost: st.cost,
            done: st.done,
            outcome: st.outcome,
        }
    }
}

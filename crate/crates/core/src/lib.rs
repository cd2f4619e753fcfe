//! Safe reinforcement learning benchmark for vision-driven river following.

pub mod bench_harness;
pub mod ndmath;
pub mod cmdp_env;
pub mod river_world;
pub mod safe_algos;
pub mod vision_codec;

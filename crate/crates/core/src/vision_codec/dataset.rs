use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmdp_env::{EnvConfig, RiverEnv};
use crate::river_world::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, render_frame, ChannelConfig, Frame, Pose, World,
};

use super::CodecError;

/// Rendered frames with the poses they were taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDataset {
    pub resolution: usize,
    pub frames: Vec<Frame>,
    pub poses: Vec<Pose>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexEntry {
    pub rgb: String,
    pub mask: String,
    pub pose: Pose,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub resolution: usize,
    pub count: usize,
    /// Free-form provenance, e.g. level and seeds.
    pub source: serde_json::Value,
    pub entries: Vec<IndexEntry>,
}

impl FrameDataset {
    pub fn new(resolution: usize, frames: Vec<Frame>, poses: Vec<Pose>) -> Self {
        assert_eq!(frames.len(), poses.len());
        Self {
            resolution,
            frames,
            poses,
        }
    }

    /// Renders `count` frames from independently sampled safe poses.
    pub fn collect(world: &World, env_cfg: &EnvConfig, count: usize, resolution: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses: Vec<Pose> = (0..count)
            .map(|_| RiverEnv::sample_safe_pose(world, env_cfg, &mut rng))
            .collect();
        let frames = poses
            .iter()
            .map(|p| render_frame(world, p, resolution))
            .collect();
        Self::new(resolution, frames, poses)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Concatenated channel values of every frame, NHWC order.
    pub fn channel_values(&self, cfg: ChannelConfig) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.channels(cfg)).collect()
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        Self::new(
            self.resolution,
            self.frames[range.clone()].to_vec(),
            self.poses[range].to_vec(),
        )
    }

    /// Writes `frame_NNNNN.ppm`, `mask_NNNNN.pgm` and `index.json` into `dir`.
    pub fn save(&self, dir: &Path, source: serde_json::Value) -> Result<(), CodecError> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.len());
        for (i, (f, p)) in self.frames.iter().zip(&self.poses).enumerate() {
            let rgb = format!("frame_{i:05}.ppm");
            let mask = format!("mask_{i:05}.pgm");
            fs::write(dir.join(&rgb), encode_ppm(f.width, f.height, &f.rgb_bytes()))?;
            fs::write(dir.join(&mask), encode_pgm(f.width, f.height, &f.mask_bytes()))?;
            entries.push(IndexEntry { rgb, mask, pose: *p });
        }
        let index = DatasetIndex {
            resolution: self.resolution,
            count: self.len(),
            source,
            entries,
        };
        fs::write(
            dir.join("index.json"),
            serde_json::to_string_pretty(&index).map_err(|e| CodecError::Format(e.to_string()))?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, CodecError> {
        let text = fs::read_to_string(dir.join("index.json"))?;
        let index: DatasetIndex =
            serde_json::from_str(&text).map_err(|e| CodecError::Format(e.to_string()))?;
        let mut frames = Vec::with_capacity(index.entries.len());
        let mut poses = Vec::with_capacity(index.entries.len());
        for e in &index.entries {
            let (w, h, rgb) = decode_ppm(&fs::read(dir.join(&e.rgb))?).map_err(CodecError::Format)?;
            let (mw, mh, mask) = decode_pgm(&fs::read(dir.join(&e.mask))?).map_err(CodecError::Format)?;
            if (w, h) != (mw, mh) || w != index.resolution || h != index.resolution {
                return Err(CodecError::Format(format!("{}: unexpected image size", e.rgb)));
            }
            frames.push(Frame::from_bytes(w, h, &rgb, &mask));
            poses.push(e.pose);
        }
        Ok(Self::new(index.resolution, frames, poses))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::river_world::{generate_world, Level};

    #[test]
    fn collected_poses_are_safe() {
        let w = generate_world(Level::Medium, 1);
        let cfg = EnvConfig::default();
        let d = FrameDataset::collect(&w, &cfg, 12, 32, 5);
        assert_eq!(d.len(), 12);
        assert!(d.poses.iter().all(|p| RiverEnv::is_safe(&w, &cfg, p)));
        assert_eq!(d, FrameDataset::collect(&w, &cfg, 12, 32, 5));
    }

    #[test]
    fn disk_roundtrip_quantizes_to_bytes() {
        let w = generate_world(Level::Easy, 1);
        let d = FrameDataset::collect(&w, &EnvConfig::default(), 3, 32, 2);
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path(), serde_json::json!({"level": "easy"})).unwrap();
        let back = FrameDataset::load(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.poses, d.poses);
        for (a, b) in d.frames.iter().zip(&back.frames) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}

//! Pinhole ray-cast rendering of classed, flat-shaded scenes.
//!
//! Each pixel ray is intersected with the bridge boxes and the water plane;
//! ground hits are classified through a precomputed top-down class map.

use serde::{Deserialize, Serialize};

use super::geom::Vec3;
use super::spline::RiverSpline;
use super::{Island, Pose, World, WorldSpec};

/// Frame sizes the renderer accepts.
pub const RESOLUTIONS: [usize; 3] = [32, 64, 128];

const MAP_CELL: f64 = 0.25;
const MAP_PADDING: f64 = 40.0;
const MAX_VIEW: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelClass {
    Sky,
    Terrain,
    Water,
    Bridge,
    Island,
}

/// Which frame channels feed an encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelConfig {
    Rgb,
    Mask,
    RgbMask,
}

impl ChannelConfig {
    pub const ALL: [ChannelConfig; 3] = [ChannelConfig::Rgb, ChannelConfig::Mask, ChannelConfig::RgbMask];

    pub fn count(self) -> usize {
        match self {
            ChannelConfig::Rgb => 3,
            ChannelConfig::Mask => 1,
            ChannelConfig::RgbMask => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelConfig::Rgb => "rgb",
            ChannelConfig::Mask => "mask",
            ChannelConfig::RgbMask => "rgbmask",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Some(ChannelConfig::Rgb),
            "mask" => Some(ChannelConfig::Mask),
            "rgbmask" | "rgb+mask" => Some(ChannelConfig::RgbMask),
            _ => None,
        }
    }

    fn channel_range(self) -> std::ops::Range<usize> {
        match self {
            ChannelConfig::Rgb => 0..3,
            ChannelConfig::Mask => 3..4,
            ChannelConfig::RgbMask => 0..4,
        }
    }
}

/// Rendered observation: interleaved `R, G, B, mask` per pixel, row-major from the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub const CHANNELS: usize = 4;

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * Self::CHANNELS);
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds a frame from 8-bit RGB and mask planes.
    pub fn from_bytes(width: usize, height: usize, rgb: &[u8], mask: &[u8]) -> Self {
        assert_eq!(rgb.len(), width * height * 3);
        assert_eq!(mask.len(), width * height);
        let mut data = Vec::with_capacity(width * height * 4);
        for i in 0..width * height {
            for c in 0..3 {
                data.push(rgb[3 * i + c] as f64 / 255.0);
            }
            data.push(if mask[i] >= 128 { 1.0 } else { 0.0 });
        }
        Self::from_data(width, height, data)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn extents(&self) -> [usize; 3] {
        [self.height, self.width, Self::CHANNELS]
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * 4;
        &self.data[i..i + 4]
    }

    /// Interleaved values of the selected channels.
    pub fn channels(&self, cfg: ChannelConfig) -> Vec<f64> {
        let r = cfg.channel_range();
        self.data
            .chunks(4)
            .flat_map(|px| px[r.clone()].iter().copied())
            .collect()
    }

    pub fn mask_fraction(&self) -> f64 {
        let n = self.width * self.height;
        self.data.chunks(4).filter(|px| px[3] > 0.5).count() as f64 / n as f64
    }

    pub fn rgb_bytes(&self) -> Vec<u8> {
        self.data
            .chunks(4)
            .flat_map(|px| px[..3].iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn mask_bytes(&self) -> Vec<u8> {
        self.data
            .chunks(4)
            .map(|px| if px[3] > 0.5 { 255 } else { 0 })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fov_deg: f64,
    /// Negative pitches look down.
    pub pitch_deg: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            fov_deg: 70.0,
            pitch_deg: -20.0,
        }
    }
}

/// Top-down raster of ground classes around the river.
#[derive(Clone, Debug)]
pub(crate) struct ClassMap {
    origin: (f64, f64),
    nx: usize,
    ny: usize,
    cells: Vec<PixelClass>,
    noise_seed: u64,
}

impl ClassMap {
    pub(crate) fn build(spec: &WorldSpec, spline: &RiverSpline, islands: &[Island]) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (_, p) in spline.polyline() {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let pad = spec.width_profile.max / 2.0 + spec.volume_margin + MAP_PADDING;
        let origin = (x0 - pad, y0 - pad);
        let nx = ((x1 - x0 + 2.0 * pad) / MAP_CELL).ceil() as usize;
        let ny = ((y1 - y0 + 2.0 * pad) / MAP_CELL).ceil() as usize;
        let mut map = Self {
            origin,
            nx,
            ny,
            cells: vec![PixelClass::Terrain; nx * ny],
            noise_seed: spec.seed,
        };
        let arc = spline.arc_length();
        for (s, p) in spline.polyline().step_by(2) {
            let r = spec.width_profile.at(s, arc) / 2.0;
            map.stamp_disc(p, r, PixelClass::Water);
        }
        for isl in islands {
            map.stamp_disc(isl.center, isl.radius, PixelClass::Island);
        }
        map
    }

    fn stamp_disc(&mut self, c: Vec3, r: f64, class: PixelClass) {
        let i0 = ((c.x - r - self.origin.0) / MAP_CELL).floor().max(0.0) as usize;
        let i1 = (((c.x + r - self.origin.0) / MAP_CELL).ceil() as usize).min(self.nx - 1);
        let j0 = ((c.y - r - self.origin.1) / MAP_CELL).floor().max(0.0) as usize;
        let j1 = (((c.y + r - self.origin.1) / MAP_CELL).ceil() as usize).min(self.ny - 1);
        for j in j0..=j1 {
            let cy = self.origin.1 + (j as f64 + 0.5) * MAP_CELL;
            for i in i0..=i1 {
                let cx = self.origin.0 + (i as f64 + 0.5) * MAP_CELL;
                if (cx - c.x).powi(2) + (cy - c.y).powi(2) <= r * r {
                    self.cells[j * self.nx + i] = class;
                }
            }
        }
    }

    pub(crate) fn class_at(&self, x: f64, y: f64) -> PixelClass {
        let fi = (x - self.origin.0) / MAP_CELL;
        let fj = (y - self.origin.1) / MAP_CELL;
        if fi < 0.0 || fj < 0.0 {
            return PixelClass::Terrain;
        }
        let (i, j) = (fi as usize, fj as usize);
        if i >= self.nx || j >= self.ny {
            return PixelClass::Terrain;
        }
        self.cells[j * self.nx + i]
    }

    pub(crate) fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0,
            self.origin.1,
            self.origin.0 + self.nx as f64 * MAP_CELL,
            self.origin.1 + self.ny as f64 * MAP_CELL,
        )
    }

    /// Brightness multiplier for terrain at a ground point, in `[0.75, 1.2]`.
    fn terrain_shade(&self, x: f64, y: f64) -> f64 {
        0.75 + 0.45 * value_noise(x / 6.0, y / 6.0, self.noise_seed)
    }
}

fn hash2(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ seed.wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (ix, iy) = (fx as i64, fy as i64);
    let sx = tx * tx * (3.0 - 2.0 * tx);
    let sy = ty * ty * (3.0 - 2.0 * ty);
    let a = hash2(ix, iy, seed);
    let b = hash2(ix + 1, iy, seed);
    let c = hash2(ix, iy + 1, seed);
    let d = hash2(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

pub fn render_frame(world: &World, pose: &Pose, resolution: usize) -> Frame {
    render_frame_with(world, pose, resolution, Camera::default())
}

pub fn render_frame_with(world: &World, pose: &Pose, resolution: usize, camera: Camera) -> Frame {
    let (w, h) = (resolution, resolution);
    let pitch = camera.pitch_deg.to_radians();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = pose.yaw.sin_cos();
    let forward = Vec3::new(cp * cy, cp * sy, sp);
    let right = Vec3::new(sy, -cy, 0.0);
    let up = right.cross(forward);
    let half = (camera.fov_deg.to_radians() / 2.0).tan();
    let origin = pose.position();
    let map = world.class_map();
    let pal = &world.palette;

    let mut data = Vec::with_capacity(w * h * 4);
    for row in 0..h {
        let v = (1.0 - 2.0 * (row as f64 + 0.5) / h as f64) * half;
        for col in 0..w {
            let u = (2.0 * (col as f64 + 0.5) / w as f64 - 1.0) * half;
            let dir = forward + right * u + up * v;
            let (class, hit) = trace(world, map, origin, dir);
            let (rgb, mask) = match class {
                PixelClass::Sky => (pal.sky, 0.0),
                PixelClass::Water => (pal.water, 1.0),
                PixelClass::Bridge => (pal.bridge, 0.0),
                PixelClass::Island => (pal.island, 0.0),
                PixelClass::Terrain => {
                    let k = map.terrain_shade(hit.x, hit.y);
                    (pal.terrain.map(|c| c * k), 0.0)
                }
            };
            data.extend_from_slice(&rgb);
            data.push(mask);
        }
    }
    Frame::from_data(w, h, data)
}

fn trace(world: &World, map: &ClassMap, origin: Vec3, dir: Vec3) -> (PixelClass, Vec3) {
    let t_ground = if dir.z < -1e-12 && origin.z > 0.0 {
        -origin.z / dir.z
    } else {
        f64::INFINITY
    };
    let t_bridge = world
        .bridges
        .iter()
        .filter_map(|b| b.bounds.ray_hit(origin, dir))
        .fold(f64::INFINITY, f64::min);
    if t_bridge < t_ground && t_bridge < MAX_VIEW * dir.norm() {
        return (PixelClass::Bridge, origin + dir * t_bridge);
    }
    if t_ground.is_finite() {
        let hit = origin + dir * t_ground;
        return (map.class_at(hit.x, hit.y), hit);
    }
    (PixelClass::Sky, origin)
}

/// Orthographic top-down preview as `(width, height, rgb bytes)`.
pub fn render_preview(world: &World, width: usize) -> (usize, usize, Vec<u8>) {
    let map = world.class_map();
    let (x0, y0, x1, y1) = map.extent();
    let scale = (x1 - x0) / width as f64;
    let height = ((y1 - y0) / scale).ceil() as usize;
    let pal = &world.palette;
    let mut out = Vec::with_capacity(width * height * 3);
    for row in 0..height {
        let y = y1 - (row as f64 + 0.5) * scale;
        for col in 0..width {
            let x = x0 + (col as f64 + 0.5) * scale;
            let p = Vec3::new(x, y, 0.0);
            let on_bridge = world.bridges.iter().any(|b| {
                p.x >= b.bounds.min.x
                    && p.x <= b.bounds.max.x
                    && p.y >= b.bounds.min.y
                    && p.y <= b.bounds.max.y
            });
            let rgb = if on_bridge {
                pal.bridge
            } else {
                match map.class_at(x, y) {
                    PixelClass::Water => pal.water,
                    PixelClass::Island => pal.island,
                    _ => pal.terrain.map(|c| c * map.terrain_shade(x, y)),
                }
            };
            out.extend(rgb.iter().map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    (width, height, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::river_world::{generate_world, Level};

    fn centered_pose(world: &World, s: f64, z: f64) -> Pose {
        let (p, t) = world.sample_spline(s);
        Pose::new(p.x, p.y, z, t.y.atan2(t.x))
    }

    #[test]
    fn frame_extents() {
        let w = generate_world(Level::Easy, 1);
        for res in RESOLUTIONS {
            let f = render_frame(&w, &centered_pose(&w, 0.0, 5.0), res);
            assert_eq!(f.extents(), [res, res, 4]);
        }
    }

    #[test]
    fn centered_view_sees_water() {
        for level in Level::ALL {
            let w = generate_world(level, 2);
            for s in [0.0, 100.0, 250.0] {
                let f = render_frame(&w, &centered_pose(&w, s, 5.0), 64);
                assert!(f.mask_fraction() >= 0.15, "{level} {s}: {}", f.mask_fraction());
            }
        }
    }

    #[test]
    fn sky_view_has_no_water() {
        let w = generate_world(Level::Medium, 2);
        let mut pose = centered_pose(&w, 30.0, 14.0);
        pose.z = w.spec.volume_ceiling + 2.0;
        let cam = Camera {
            pitch_deg: 60.0,
            ..Camera::default()
        };
        let f = render_frame_with(&w, &pose, 32, cam);
        assert_eq!(f.mask_fraction(), 0.0);
        assert!(f.data().chunks(4).all(|px| px[..3] == w.palette.sky));
    }

    #[test]
    fn mask_matches_water_palette() {
        let w = generate_world(Level::Hard, 5);
        for s in [10.0, 90.0, 200.0, 333.0] {
            let f = render_frame(&w, &centered_pose(&w, s, 4.0), 64);
            for px in f.data().chunks(4) {
                let is_water_color = px[..3] == w.palette.water;
                assert_eq!(is_water_color, px[3] == 1.0);
                assert!(px[3] == 0.0 || px[3] == 1.0);
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let w = generate_world(Level::Hard, 9);
        let p = centered_pose(&w, 123.0, 6.0);
        assert_eq!(render_frame(&w, &p, 32), render_frame(&w, &p, 32));
    }

    #[test]
    fn channel_views() {
        let w = generate_world(Level::Easy, 1);
        let f = render_frame(&w, &centered_pose(&w, 0.0, 5.0), 32);
        assert_eq!(f.channels(ChannelConfig::Rgb).len(), 32 * 32 * 3);
        assert_eq!(f.channels(ChannelConfig::Mask).len(), 32 * 32);
        assert_eq!(f.channels(ChannelConfig::RgbMask), f.data());
    }
}

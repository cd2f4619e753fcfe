//! Procedural closed-loop river worlds, geometry queries and rendering.
//!
//! A world is a pure function of `(level, seed)`. The river centerline is a
//! closed Catmull-Rom spline on the water plane `z = 0`; the safe flight
//! region is the ribbon of half-width `width/2 + margin` lifted between the
//! floor and ceiling altitudes.

mod export;
mod geom;
mod render;
mod spline;

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use export::{decode_pgm, decode_ppm, encode_pgm, encode_ppm};
pub use geom::{wrap_angle, Aabb, Vec3};
pub use render::{
    render_frame, render_frame_with, render_preview, Camera, ChannelConfig, Frame, PixelClass,
    RESOLUTIONS,
};
pub use spline::{Projection, RiverSpline};

/// Agent collision radius in meters.
pub const AGENT_RADIUS: f64 = 0.5;
/// Reward segments per river.
pub const SEGMENT_COUNT: usize = 200;
/// Upper bound on river length so a perfect loop fits in the step budget.
pub const MAX_ARC_LENGTH: f64 = 450.0;
const BASE_RADIUS: f64 = 64.0;
const MIN_CURVATURE_RADIUS: f64 = 16.0;
const BRIDGE_DECK: (f64, f64) = (7.0, 8.5);
const BRIDGE_THICKNESS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Easy,
    Medium,
    Hard,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Easy, Level::Medium, Level::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Level::Easy => "easy",
            Level::Medium => "medium",
            Level::Hard => "hard",
        }
    }

    fn table(self) -> Difficulty {
        match self {
            Level::Easy => Difficulty {
                control_points: 8,
                bridges: 0,
                islands: 0,
                width: (12.0, 12.0),
                radial_jitter: 0.05,
                angular_jitter: 0.10,
                width_cycles: (0, 0),
            },
            Level::Medium => Difficulty {
                control_points: 12,
                bridges: 2,
                islands: 1,
                width: (8.0, 14.0),
                radial_jitter: 0.12,
                angular_jitter: 0.20,
                width_cycles: (2, 3),
            },
            Level::Hard => Difficulty {
                control_points: 16,
                bridges: 4,
                islands: 3,
                width: (6.0, 16.0),
                radial_jitter: 0.18,
                angular_jitter: 0.25,
                width_cycles: (3, 4),
            },
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Level::Easy),
            "medium" => Ok(Level::Medium),
            "hard" => Ok(Level::Hard),
            other => Err(format!("unknown level `{other}` (easy|medium|hard)")),
        }
    }
}

struct Difficulty {
    control_points: usize,
    bridges: usize,
    islands: usize,
    width: (f64, f64),
    radial_jitter: f64,
    angular_jitter: f64,
    width_cycles: (u32, u32),
}

/// River width along the arc: `min + (max - min) * (1 + sin(2*pi*cycles*s/L + phase)) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthProfile {
    pub min: f64,
    pub max: f64,
    pub cycles: u32,
    pub phase: f64,
}

impl WidthProfile {
    pub fn constant(w: f64) -> Self {
        Self {
            min: w,
            max: w,
            cycles: 0,
            phase: 0.0,
        }
    }

    pub fn at(&self, s: f64, arc_length: f64) -> f64 {
        if self.cycles == 0 || self.max == self.min {
            return self.min;
        }
        let x = TAU * self.cycles as f64 * s / arc_length + self.phase;
        self.min + (self.max - self.min) * 0.5 * (1.0 + x.sin())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub level: Level,
    pub seed: u64,
    pub bridge_count: usize,
    pub island_count: usize,
    pub turn_count: usize,
    pub width_profile: WidthProfile,
    pub volume_margin: f64,
    pub volume_floor: f64,
    pub volume_ceiling: f64,
}

impl WorldSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world spec serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub arc: f64,
    pub bounds: Aabb,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Island {
    pub arc: f64,
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Palette {
    pub water: [f64; 3],
    pub terrain: [f64; 3],
    pub sky: [f64; 3],
    pub bridge: [f64; 3],
    pub island: [f64; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            water: [0.16, 0.36, 0.62],
            terrain: [0.33, 0.52, 0.22],
            sky: [0.62, 0.78, 0.93],
            bridge: [0.42, 0.38, 0.36],
            island: [0.82, 0.74, 0.52],
        }
    }
}

/// Agent position and heading. Pitch is fixed by the camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Containment {
    Inside,
    OutHorizontal,
    OutVertical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NearestSegment {
    pub index: usize,
    /// Signed horizontal offset from the centerline, positive to the left.
    pub lateral_offset: f64,
    pub arc: f64,
}

#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub spline: RiverSpline,
    pub bridges: Vec<Bridge>,
    pub islands: Vec<Island>,
    pub palette: Palette,
    class_map: render::ClassMap,
}

impl World {
    /// Assembles a world from explicit parts.
    pub fn from_parts(
        spec: WorldSpec,
        spline: RiverSpline,
        bridges: Vec<Bridge>,
        islands: Vec<Island>,
    ) -> Self {
        let class_map = render::ClassMap::build(&spec, &spline, &islands);
        Self {
            spec,
            spline,
            bridges,
            islands,
            palette: Palette::default(),
            class_map,
        }
    }

    pub fn width_at(&self, s: f64) -> f64 {
        self.spec.width_profile.at(s, self.spline.arc_length())
    }

    /// Half-width of the safe region at arc `s`.
    pub fn volume_half_width(&self, s: f64) -> f64 {
        self.width_at(s) / 2.0 + self.spec.volume_margin
    }

    pub fn sample_spline(&self, s: f64) -> (Vec3, Vec3) {
        self.spline.sample(s)
    }

    pub fn inside_volume(&self, pose: &Pose) -> Containment {
        if pose.z < self.spec.volume_floor || pose.z > self.spec.volume_ceiling {
            return Containment::OutVertical;
        }
        let pr = self.spline.project(pose.position());
        if pr.distance() > self.volume_half_width(pr.arc) {
            Containment::OutHorizontal
        } else {
            Containment::Inside
        }
    }

    pub fn check_collision(&self, pose: &Pose) -> bool {
        let p = pose.position();
        self.bridges
            .iter()
            .any(|b| b.bounds.distance(p) <= AGENT_RADIUS)
    }

    pub fn nearest_segment(&self, position: Vec3) -> NearestSegment {
        let pr = self.spline.project(position);
        NearestSegment {
            index: self.spline.segment_of(pr.arc),
            lateral_offset: pr.signed_offset,
            arc: pr.arc,
        }
    }

    pub fn pixel_class_at(&self, x: f64, y: f64) -> PixelClass {
        self.class_map.class_at(x, y)
    }

    pub(crate) fn class_map(&self) -> &render::ClassMap {
        &self.class_map
    }
}

/// Deterministically generates the world for `(level, seed)`.
pub fn generate_world(level: Level, seed: u64) -> World {
    let table = level.table();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5eed_0000 + level as u64));
    let cycles = rng.gen_range(table.width_cycles.0..=table.width_cycles.1);
    let phase = rng.gen_range(0.0..TAU);
    let spec = WorldSpec {
        level,
        seed,
        bridge_count: table.bridges,
        island_count: table.islands,
        turn_count: table.control_points,
        width_profile: WidthProfile {
            min: table.width.0,
            max: table.width.1,
            cycles: if table.width.0 == table.width.1 { 0 } else { cycles },
            phase: if table.width.0 == table.width.1 { 0.0 } else { phase },
        },
        volume_margin: 2.0,
        volume_floor: 2.0,
        volume_ceiling: 12.0,
    };

    let spline = loop {
        let pts = control_points(&table, &mut rng);
        let mut sp = RiverSpline::catmull_rom(pts.clone(), SEGMENT_COUNT);
        if sp.arc_length() > MAX_ARC_LENGTH {
            let k = MAX_ARC_LENGTH / sp.arc_length() * 0.98;
            let scaled = pts.iter().map(|p| *p * k).collect();
            sp = RiverSpline::catmull_rom(scaled, SEGMENT_COUNT);
        }
        if ribbon_is_valid(&sp, &spec) {
            break sp;
        }
    };

    let arc = spline.arc_length();
    let half_w = |s: f64| spec.width_profile.at(s, arc) / 2.0 + spec.volume_margin;
    let offset = rng.gen_range(0.0..arc);
    let bridges = (0..spec.bridge_count)
        .map(|b| {
            let frac = (b as f64 + 0.5 + rng.gen_range(-0.15..0.15)) / spec.bridge_count as f64;
            let s = spline.wrap(offset + frac * arc);
            let (c, t) = spline.sample(s);
            let reach = half_w(s) + 3.0;
            let (hx, hy) = if t.x.abs() >= t.y.abs() {
                (BRIDGE_THICKNESS / 2.0, reach / t.x.abs())
            } else {
                (reach / t.y.abs(), BRIDGE_THICKNESS / 2.0)
            };
            Bridge {
                arc: s,
                bounds: Aabb {
                    min: Vec3::new(c.x - hx, c.y - hy, BRIDGE_DECK.0),
                    max: Vec3::new(c.x + hx, c.y + hy, BRIDGE_DECK.1),
                },
            }
        })
        .collect();
    let islands = (0..spec.island_count)
        .map(|i| {
            let frac = (i as f64 + rng.gen_range(0.2..0.8)) / spec.island_count as f64;
            let s = spline.wrap(offset + frac * arc);
            let (c, t) = spline.sample(s);
            let w = spec.width_profile.at(s, arc);
            let radius = 0.18 * w;
            let lateral = rng.gen_range(-1.0..1.0) * 0.25 * w;
            let normal = Vec3::new(-t.y, t.x, 0.0);
            Island {
                arc: s,
                center: c + normal * lateral,
                radius,
            }
        })
        .collect();
    World::from_parts(spec, spline, bridges, islands)
}

fn control_points(table: &Difficulty, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let n = table.control_points;
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Neighbour-averaged radial noise keeps adjacent bends from folding.
    let radial = |i: usize| 0.5 * raw[i] + 0.25 * (raw[(i + n - 1) % n] + raw[(i + 1) % n]);
    (0..n)
        .map(|i| {
            let da = rng.gen_range(-0.5..0.5) * table.angular_jitter * TAU / n as f64;
            let a = TAU * i as f64 / n as f64 + da;
            let r = BASE_RADIUS * (1.0 + radial(i) * table.radial_jitter);
            Vec3::new(r * a.cos(), r * a.sin(), 0.0)
        })
        .collect()
}

/// Rejects centerlines whose safe ribbon would fold or touch itself.
fn ribbon_is_valid(sp: &RiverSpline, spec: &WorldSpec) -> bool {
    let arc = sp.arc_length();
    let hw = |s: f64| spec.width_profile.at(s, arc) / 2.0 + spec.volume_margin;
    let n = (arc / 2.0).ceil() as usize;
    let samples: Vec<(f64, Vec3, Vec3)> = (0..n)
        .map(|i| {
            let s = i as f64 * arc / n as f64;
            let (p, t) = sp.sample(s);
            (s, p, t)
        })
        .collect();
    // curvature from tangent turn over 2 m
    for i in 0..n {
        let (s, _, t0) = samples[i];
        let (_, _, t1) = samples[(i + 1) % n];
        let ds = arc / n as f64;
        let turn = t0.cross(t1).z.atan2(t0.dot(t1)).abs();
        if turn > 0.0 && ds / turn < MIN_CURVATURE_RADIUS.max(hw(s) + 4.0) {
            return false;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (si, pi, _) = samples[i];
            let (sj, pj, _) = samples[j];
            let sep = (sj - si).min(arc - (sj - si));
            if sep < 60.0 {
                continue;
            }
            if pi.horizontal_dist(pj) < hw(si) + hw(sj) + 4.0 {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_world() -> World {
        let spline = RiverSpline::circle(Vec3::default(), 60.0, SEGMENT_COUNT);
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
        World::from_parts(spec, spline, vec![], vec![])
    }

    #[test]
    fn easy_has_no_obstacles() {
        for seed in 0..5 {
            let w = generate_world(Level::Easy, seed);
            assert_eq!(w.spec.bridge_count, 0);
            assert_eq!(w.spec.island_count, 0);
            assert!(w.bridges.is_empty() && w.islands.is_empty());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(Level::Hard, 42);
        let b = generate_world(Level::Hard, 42);
        assert_eq!(a.spec, b.spec);
        assert_eq!(a.bridges, b.bridges);
        assert_eq!(a.islands, b.islands);
        assert_eq!(a.spline.control_points(), b.spline.control_points());
        assert_eq!(a.spline.arc_length().to_bits(), b.spline.arc_length().to_bits());
    }

    #[test]
    fn medium_spline_closes() {
        let w = generate_world(Level::Medium, 7);
        let (a, _) = w.sample_spline(0.0);
        let (b, _) = w.sample_spline(w.spline.arc_length());
        assert!((a - b).norm() <= 1e-9);
        assert!(w.spline.arc_length() <= MAX_ARC_LENGTH);
        assert!(w.spline.segment_count() >= 8);
    }

    #[test]
    fn difficulty_is_monotone() {
        for seed in 0..4 {
            let specs: Vec<WorldSpec> =
                Level::ALL.iter().map(|&l| generate_world(l, seed).spec).collect();
            for pair in specs.windows(2) {
                assert!(pair[0].bridge_count <= pair[1].bridge_count);
                assert!(pair[0].island_count <= pair[1].island_count);
                assert!(pair[0].turn_count <= pair[1].turn_count);
                let v0 = pair[0].width_profile.max - pair[0].width_profile.min;
                let v1 = pair[1].width_profile.max - pair[1].width_profile.min;
                assert!(v0 <= v1);
            }
        }
    }

    #[test]
    fn obstacles_sit_on_the_river() {
        for seed in 0..4 {
            let w = generate_world(Level::Hard, seed);
            for b in &w.bridges {
                let c = b.bounds.center();
                let pr = w.spline.project(c);
                assert!(pr.distance() < w.width_at(pr.arc) / 2.0);
            }
            for isl in &w.islands {
                let pr = w.spline.project(isl.center);
                assert!(pr.distance() + isl.radius < w.width_at(pr.arc) / 2.0);
            }
            for k in 0..1000 {
                assert!(w.width_at(k as f64 * 0.45) > 0.0);
            }
        }
    }

    #[test]
    fn containment_examples() {
        let w = circle_world();
        let (p, t) = w.sample_spline(10.0);
        let yaw = t.y.atan2(t.x);
        assert_eq!(w.inside_volume(&Pose::new(p.x, p.y, 7.0, yaw)), Containment::Inside);
        assert_eq!(
            w.inside_volume(&Pose::new(p.x, p.y, 13.0, yaw)),
            Containment::OutVertical
        );
        let normal = Vec3::new(-t.y, t.x, 0.0);
        let q = p + normal * (6.0 + 2.0 + 0.1);
        assert_eq!(
            w.inside_volume(&Pose::new(q.x, q.y, 7.0, yaw)),
            Containment::OutHorizontal
        );
        // vertical wins when both fail
        assert_eq!(
            w.inside_volume(&Pose::new(q.x, q.y, 0.5, yaw)),
            Containment::OutVertical
        );
    }

    #[test]
    fn collision_examples() {
        let mut w = circle_world();
        assert!(!w.check_collision(&Pose::new(60.0, 0.0, 7.5, 0.0)));
        let bounds = Aabb {
            min: Vec3::new(55.0, -1.5, 7.0),
            max: Vec3::new(65.0, 1.5, 8.5),
        };
        w.bridges.push(Bridge { arc: 0.0, bounds });
        let c = bounds.center();
        assert!(w.check_collision(&Pose::new(c.x, c.y, c.z, 0.0)));
        let below = 7.0 - AGENT_RADIUS - 0.01;
        assert!(!w.check_collision(&Pose::new(c.x, c.y, below, 0.0)));
        let side = 1.5 + AGENT_RADIUS + 0.01;
        assert!(!w.check_collision(&Pose::new(c.x, side, c.z, 0.0)));
        assert!(w.check_collision(&Pose::new(c.x, 1.5 + AGENT_RADIUS - 0.01, c.z, 0.0)));
    }

    #[test]
    fn nearest_segment_on_circle() {
        let w = circle_world();
        let m = SEGMENT_COUNT as f64;
        for k in [0usize, 17, 99, 150, 199] {
            let (c, _) = w.sample_spline((k as f64 + 0.5) * w.spline.segment_length());
            let ns = w.nearest_segment(c);
            assert_eq!(ns.index, k);
            assert!(ns.lateral_offset.abs() < 1e-9);
        }
        for i in 0..50 {
            let theta = 0.123 + i as f64 * 0.12;
            let p = Vec3::new(55.0 * theta.cos(), 55.0 * theta.sin(), 4.0);
            let ns = w.nearest_segment(p);
            assert_eq!(ns.index, (theta / TAU * m).floor() as usize);
            assert!((ns.lateral_offset - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn level_parsing() {
        assert_eq!("Medium".parse::<Level>().unwrap(), Level::Medium);
        assert!("extreme".parse::<Level>().is_err());
    }

    #[test]
    fn spec_json_fields() {
        let w = generate_world(Level::Medium, 3);
        let v: serde_json::Value = serde_json::from_str(&w.spec.to_json()).unwrap();
        for key in [
            "level",
            "seed",
            "bridge_count",
            "island_count",
            "turn_count",
            "width_profile",
            "volume_margin",
            "volume_floor",
            "volume_ceiling",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: WorldSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, w.spec);
    }
}

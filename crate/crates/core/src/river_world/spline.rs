//! Closed river centerline parameterized by arc length.

use std::collections::HashMap;

use super::geom::Vec3;

/// Spacing of the dense polyline used for projections.
const POLY_SPACING: f64 = 0.1;
const GRID_CELL: f64 = 8.0;
const TABLE_STEPS: usize = 32;

// 5-point Gauss-Legendre nodes/weights on [-1, 1].
const GL_X: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_W: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

#[derive(Clone, Debug)]
enum Centerline {
    CatmullRom {
        points: Vec<Vec3>,
        table_s: Vec<f64>,
    },
    Circle {
        center: Vec3,
        radius: f64,
    },
}

/// Closest centerline point to a query position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc coordinate of the closest point.
    pub arc: f64,
    /// Horizontal distance to the centerline, positive to the left of the tangent.
    pub signed_offset: f64,
    pub point: Vec3,
}

impl Projection {
    pub fn distance(&self) -> f64 {
        self.signed_offset.abs()
    }
}

#[derive(Clone, Debug)]
pub struct RiverSpline {
    centerline: Centerline,
    arc_length: f64,
    segment_count: usize,
    poly: Vec<Vec3>,
    poly_s: Vec<f64>,
    grid: HashMap<(i64, i64), Vec<usize>>,
}

impl RiverSpline {
    /// Closed uniform Catmull-Rom spline through `points` (at least 4).
    pub fn catmull_rom(points: Vec<Vec3>, segment_count: usize) -> Self {
        assert!(points.len() >= 4, "closed Catmull-Rom needs 4+ points");
        assert!(segment_count >= 8, "at least 8 reward segments");
        let n = points.len();
        let mut table_s = Vec::with_capacity(n * TABLE_STEPS + 1);
        table_s.push(0.0);
        let du = 1.0 / TABLE_STEPS as f64;
        let mut acc = 0.0;
        for j in 0..n * TABLE_STEPS {
            let u0 = j as f64 * du;
            acc += speed_integral(&points, u0, u0 + du);
            table_s.push(acc);
        }
        let arc_length = acc;
        Self::finish(
            Centerline::CatmullRom { points, table_s },
            arc_length,
            segment_count,
        )
    }

    /// Exact circle traversed counter-clockwise starting at angle zero.
    pub fn circle(center: Vec3, radius: f64, segment_count: usize) -> Self {
        assert!(radius > 0.0 && segment_count >= 8);
        Self::finish(
            Centerline::Circle { center, radius },
            std::f64::consts::TAU * radius,
            segment_count,
        )
    }

    fn finish(centerline: Centerline, arc_length: f64, segment_count: usize) -> Self {
        let mut s = Self {
            centerline,
            arc_length,
            segment_count,
            poly: Vec::new(),
            poly_s: Vec::new(),
            grid: HashMap::new(),
        };
        let count = (arc_length / POLY_SPACING).ceil() as usize;
        for i in 0..count {
            let si = i as f64 * arc_length / count as f64;
            s.poly_s.push(si);
            s.poly.push(s.sample(si).0);
        }
        for i in 0..count {
            let a = s.poly[i];
            let b = s.poly[(i + 1) % count];
            let (x0, x1) = (cell(a.x.min(b.x)), cell(a.x.max(b.x)));
            let (y0, y1) = (cell(a.y.min(b.y)), cell(a.y.max(b.y)));
            for cx in x0..=x1 {
                for cy in y0..=y1 {
                    s.grid.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        s
    }

    pub fn arc_length(&self) -> f64 {
        self.arc_length
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    pub fn control_points(&self) -> &[Vec3] {
        match &self.centerline {
            Centerline::CatmullRom { points, .. } => points,
            Centerline::Circle { .. } => &[],
        }
    }

    /// Wraps any arc coordinate into `[0, arc_length)`.
    pub fn wrap(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.arc_length);
        if w >= self.arc_length {
            0.0
        } else {
            w
        }
    }

    pub fn segment_length(&self) -> f64 {
        self.arc_length / self.segment_count as f64
    }

    /// `[start, end)` arc interval of segment `k`.
    pub fn segment_bounds(&self, k: usize) -> (f64, f64) {
        let len = self.segment_length();
        (k as f64 * len, (k + 1) as f64 * len)
    }

    pub fn segment_of(&self, s: f64) -> usize {
        let s = self.wrap(s);
        ((s / self.segment_length()) as usize).min(self.segment_count - 1)
    }

    pub fn segment_center(&self, k: usize) -> Vec3 {
        self.sample((k as f64 + 0.5) * self.segment_length()).0
    }

    /// Position and unit tangent at arc coordinate `s` (wrapped).
    pub fn sample(&self, s: f64) -> (Vec3, Vec3) {
        let s = self.wrap(s);
        match &self.centerline {
            Centerline::Circle { center, radius } => {
                let a = s / radius;
                let p = *center + Vec3::new(radius * a.cos(), radius * a.sin(), 0.0);
                (p, Vec3::new(-a.sin(), a.cos(), 0.0))
            }
            Centerline::CatmullRom { points, table_s } => {
                let u = arc_to_param(points, table_s, s);
                let (p, d) = eval_cr(points, u);
                (p, d.normalized())
            }
        }
    }

    /// Horizontal heading of the tangent at `s`.
    pub fn heading(&self, s: f64) -> f64 {
        let (_, t) = self.sample(s);
        t.y.atan2(t.x)
    }

    /// Closest centerline point in the horizontal plane. Ties go to the lower arc coordinate.
    pub fn project(&self, q: Vec3) -> Projection {
        if let Centerline::Circle { center, radius } = &self.centerline {
            let dx = q.x - center.x;
            let dy = q.y - center.y;
            let r = (dx * dx + dy * dy).sqrt();
            let ang = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
            let arc = self.wrap(ang * radius);
            let (point, _) = self.sample(arc);
            return Projection {
                arc,
                signed_offset: radius - r,
                point,
            };
        }
        let mut best = (f64::INFINITY, f64::INFINITY, 0usize, 0.0);
        let (cx, cy) = (cell(q.x), cell(q.y));
        let max_ring = 64;
        let mut found = false;
        for ring in 0i64..=max_ring {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    if let Some(list) = self.grid.get(&(cx + dx, cy + dy)) {
                        for &i in list {
                            self.consider(i, q, &mut best);
                        }
                    }
                }
            }
            if best.0 <= ring as f64 * GRID_CELL {
                found = true;
                break;
            }
        }
        if !found {
            for i in 0..self.poly.len() {
                self.consider(i, q, &mut best);
            }
        }
        let (dist, arc, i, tau) = best;
        let a = self.poly[i];
        let b = self.poly[(i + 1) % self.poly.len()];
        let point = a + (b - a) * tau;
        let tx = b.x - a.x;
        let ty = b.y - a.y;
        let side = tx * (q.y - point.y) - ty * (q.x - point.x);
        Projection {
            arc,
            signed_offset: if side >= 0.0 { dist } else { -dist },
            point,
        }
    }

    fn consider(&self, i: usize, q: Vec3, best: &mut (f64, f64, usize, f64)) {
        let n = self.poly.len();
        let a = self.poly[i];
        let b = self.poly[(i + 1) % n];
        let (ex, ey) = (b.x - a.x, b.y - a.y);
        let len2 = ex * ex + ey * ey;
        let tau = if len2 > 0.0 {
            (((q.x - a.x) * ex + (q.y - a.y) * ey) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let px = a.x + ex * tau;
        let py = a.y + ey * tau;
        let d = ((q.x - px).powi(2) + (q.y - py).powi(2)).sqrt();
        let s_end = if i + 1 == n {
            self.arc_length
        } else {
            self.poly_s[i + 1]
        };
        let arc = self.wrap(self.poly_s[i] + tau * (s_end - self.poly_s[i]));
        if d < best.0 || (d == best.0 && arc < best.1) {
            *best = (d, arc, i, tau);
        }
    }

    /// Dense centerline samples `(arc, position)`, spaced about 0.1 m apart.
    pub fn polyline(&self) -> impl Iterator<Item = (f64, Vec3)> + '_ {
        self.poly_s.iter().copied().zip(self.poly.iter().copied())
    }
}

fn cell(v: f64) -> i64 {
    (v / GRID_CELL).floor() as i64
}

fn eval_cr(points: &[Vec3], u: f64) -> (Vec3, Vec3) {
    let n = points.len();
    let i = (u.floor() as usize).min(n * 2) % n;
    let t = u - u.floor();
    let p0 = points[(i + n - 1) % n];
    let p1 = points[i];
    let p2 = points[(i + 1) % n];
    let p3 = points[(i + 2) % n];
    let a = p1 * 2.0;
    let b = p2 - p0;
    let c = p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3;
    let d = p1 * 3.0 - p0 - p2 * 3.0 + p3;
    let pos = (a + b * t + c * (t * t) + d * (t * t * t)) * 0.5;
    let der = (b + c * (2.0 * t) + d * (3.0 * t * t)) * 0.5;
    (pos, der)
}

fn speed(points: &[Vec3], u: f64) -> f64 {
    eval_cr(points, u).1.norm()
}

fn speed_integral(points: &[Vec3], u0: f64, u1: f64) -> f64 {
    let half = 0.5 * (u1 - u0);
    let mid = 0.5 * (u1 + u0);
    GL_X.iter()
        .zip(GL_W)
        .map(|(&x, w)| w * speed(points, mid + half * x))
        .sum::<f64>()
        * half
}

fn arc_to_param(points: &[Vec3], table_s: &[f64], s: f64) -> f64 {
    let j = table_s.partition_point(|&v| v <= s).saturating_sub(1);
    let j = j.min(table_s.len() - 2);
    let du = 1.0 / TABLE_STEPS as f64;
    let u0 = j as f64 * du;
    let (s0, s1) = (table_s[j], table_s[j + 1]);
    let mut u = u0 + du * (s - s0) / (s1 - s0);
    for _ in 0..2 {
        let err = s0 + speed_integral(points, u0, u) - s;
        u -= err / speed(points, u);
    }
    u.clamp(u0, u0 + du)
}

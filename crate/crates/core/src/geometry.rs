//! Small geometric kernels shared by voxelization, the BVH and the metrics.

use crate::rig::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        points.into_iter().fold(Self::empty(), |b, p| b.grow(p))
    }

    pub fn grow(self, p: &Vec3) -> Self {
        Self {
            min: self.min.inf(p),
            max: self.max.sup(p),
        }
    }

    pub fn union(&self, other: &Aabb) -> Self {
        Self {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] <= other.min[a] && other.max[a] <= self.max[a])
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn longest_axis(&self) -> usize {
        self.extent().imax()
    }

    /// Squared distance from `p` to the box; 0 inside.
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = if p[a] < self.min[a] {
                self.min[a] - p[a]
            } else if p[a] > self.max[a] {
                p[a] - self.max[a]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

/// Closest point on triangle `abc` to `p`, returned as barycentric weights
/// `(u, v, w)` for `(a, b, c)`. Uses the Voronoi-region classification, so
/// vertex and edge regions produce exact zeros.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    // Interior: u, v, w are nonnegative in exact arithmetic; clamp rounding.
    let u = (1.0 - v - w).max(0.0);
    let s = u + v + w;
    [u / s, v / s, w / s]
}

pub fn barycentric_point(bary: &[f64; 3], a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    a * bary[0] + b * bary[1] + c * bary[2]
}

/// Parameter in `[0, 1]` of the point on segment `ab` closest to `p`.
pub fn closest_parameter_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return 0.0;
    }
    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
}

pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let t = closest_parameter_on_segment(p, a, b);
    (p - (a + (b - a) * t)).norm()
}

/// Triangle/box overlap by the separating axis theorem. Boxes are closed,
/// so touching counts as overlap.
pub fn triangle_box_overlap(center: &Vec3, half: &Vec3, tri: &[Vec3; 3]) -> bool {
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];
    for a in 0..3 {
        let lo = v[0][a].min(v[1][a]).min(v[2][a]);
        let hi = v[0][a].max(v[1][a]).max(v[2][a]);
        if lo > half[a] || hi < -half[a] {
            return false;
        }
    }
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let normal = e[0].cross(&e[1]);
    if !separated_on(&normal, &v, half) {
        for edge in &e {
            for a in 0..3 {
                let mut unit = Vec3::zeros();
                unit[a] = 1.0;
                let axis = edge.cross(&unit);
                if separated_on(&axis, &v, half) {
                    return false;
                }
            }
        }
        true
    } else {
        false
    }
}

fn separated_on(axis: &Vec3, v: &[Vec3; 3], half: &Vec3) -> bool {
    if axis.norm_squared() == 0.0 {
        return false;
    }
    let p = [axis.dot(&v[0]), axis.dot(&v[1]), axis.dot(&v[2])];
    let lo = p[0].min(p[1]).min(p[2]);
    let hi = p[0].max(p[1]).max(p[2]);
    let r = half.x * axis.x.abs() + half.y * axis.y.abs() + half.z * axis.z.abs();
    lo > r || hi < -r
}

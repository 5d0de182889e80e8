//! Procedural rigs with closed-form skin, and controlled corruptions.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::point_segment_distance;
use crate::rig::{normalize_rig, Mesh, Rig, Skeleton, SkinWeights, Vec3};

pub const CAPSULE_SEGMENTS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Chain,
    Star,
    Tree,
    Quadruped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshStyle {
    Capsule,
    Sphere,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub family: Family,
    /// Ignored by the quadruped family, which has a fixed layout.
    pub joint_count: usize,
    pub bone_length: (f64, f64),
    pub mesh_style: MeshStyle,
    /// Distance scale of the skin softmax, relative to the mean bone length.
    pub falloff: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            family: Family::Chain,
            joint_count: 5,
            bone_length: (0.8, 1.2),
            mesh_style: MeshStyle::Capsule,
            falloff: 0.15,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bone_length;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::precondition("bone length range must satisfy 0 < min <= max"));
        }
        if !(self.falloff > 0.0 && self.falloff.is_finite()) {
            return Err(Error::precondition("falloff must be positive"));
        }
        let min_joints = match self.family {
            Family::Chain => 1,
            Family::Star => 2,
            Family::Tree => 1,
            Family::Quadruped => 0,
        };
        if self.family != Family::Quadruped && !(min_joints..=256).contains(&self.joint_count) {
            return Err(Error::precondition(format!(
                "joint count {} is outside [{min_joints}, 256] for this family",
                self.joint_count
            )));
        }
        Ok(())
    }
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let g = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = g.norm();
        if n > 1e-9 {
            return g / n;
        }
    }
}

/// Unit vector within `max_angle` of `axis`.
fn random_near(rng: &mut impl Rng, axis: &Vec3, max_angle: f64) -> Vec3 {
    loop {
        let d = random_unit(rng);
        if d.dot(axis) >= max_angle.cos() {
            return d;
        }
    }
}

fn chain(spec: &SynthSpec, rng: &mut impl Rng) -> Skeleton {
    let mut joints = vec![Vec3::zeros()];
    let mut dir = Vec3::y();
    for _ in 1..spec.joint_count {
        dir = random_near(rng, &dir, PI / 4.0);
        let len = rng.random_range(spec.bone_length.0..=spec.bone_length.1);
        joints.push(joints.last().unwrap() + dir * len);
    }
    let parents = (0..joints.len()).map(|i| i.checked_sub(1)).collect();
    Skeleton { joints, parents }
}

fn star(spec: &SynthSpec, rng: &mut impl Rng) -> Skeleton {
    let arms = spec.joint_count - 1;
    let mut joints = vec![Vec3::zeros()];
    let golden = PI * (3.0 - 5f64.sqrt());
    for k in 0..arms {
        // Fibonacci directions keep arms apart; a little jitter varies them.
        let y = 1.0 - 2.0 * (k as f64 + 0.5) / arms as f64;
        let r = (1.0 - y * y).sqrt();
        let base = Vec3::new(r * (golden * k as f64).cos(), y, r * (golden * k as f64).sin());
        let dir = random_near(rng, &base, 0.1);
        let len = rng.random_range(spec.bone_length.0..=spec.bone_length.1);
        joints.push(dir * len);
    }
    let parents = (0..joints.len()).map(|i| (i > 0).then_some(0)).collect();
    Skeleton { joints, parents }
}

fn tree(spec: &SynthSpec, rng: &mut impl Rng) -> Skeleton {
    let mut joints = vec![Vec3::zeros()];
    let mut parents = vec![None];
    let mut children = vec![0usize];
    let min_gap = 0.6 * spec.bone_length.0;
    while joints.len() < spec.joint_count {
        let p = rng.random_range(0..joints.len());
        if children[p] >= 3 {
            continue;
        }
        let incoming = parents[p].map_or(Vec3::y(), |q: usize| (joints[p] - joints[q]).normalize());
        let dir = random_near(rng, &incoming, PI / 2.5);
        let len = rng.random_range(spec.bone_length.0..=spec.bone_length.1);
        let candidate = joints[p] + dir * len;
        let clear = joints.iter().enumerate().all(|(i, j)| {
            let seg_gap = point_segment_distance(j, &joints[p], &candidate);
            (j - candidate).norm() >= min_gap && (i == p || seg_gap >= 0.5 * min_gap)
        });
        if !clear {
            continue;
        }
        joints.push(candidate);
        parents.push(Some(p));
        children.push(0);
        children[p] += 1;
    }
    Skeleton { joints, parents }
}

fn quadruped(spec: &SynthSpec, rng: &mut impl Rng) -> Skeleton {
    let mut jitter = |p: [f64; 3]| {
        let s = 0.05 * (spec.bone_length.1 - spec.bone_length.0 + 0.2);
        Vec3::from(p) + s * random_unit(rng)
    };
    let mut joints = Vec::new();
    let mut parents = Vec::new();
    let mut add = |p: Vec3, parent: Option<usize>| {
        joints.push(p);
        parents.push(parent);
        joints.len() - 1
    };
    let hip = add(jitter([0.0, 1.0, 0.0]), None);
    let spine1 = add(jitter([0.4, 1.02, 0.0]), Some(hip));
    let spine2 = add(jitter([0.8, 1.04, 0.0]), Some(spine1));
    let chest = add(jitter([1.2, 1.05, 0.0]), Some(spine2));
    let neck = add(jitter([1.5, 1.3, 0.0]), Some(chest));
    add(jitter([1.75, 1.5, 0.0]), Some(neck));
    add(jitter([-0.45, 1.15, 0.0]), Some(hip));
    for (x, attach) in [(0.0, hip), (1.2, chest)] {
        for z in [-0.25, 0.25] {
            let top = add(jitter([x, 0.9, z]), Some(attach));
            let knee = add(jitter([x + 0.05, 0.5, z]), Some(top));
            add(jitter([x, 0.05, z]), Some(knee));
        }
    }
    Skeleton { joints, parents }
}

/// Surface of a capsule around segment `a -> b`, appended to the buffers.
fn push_capsule(a: &Vec3, b: &Vec3, radius: f64, vertices: &mut Vec<Vec3>, tris: &mut Vec<[usize; 3]>) {
    let axis = b - a;
    let w = if axis.norm() > 1e-12 { axis.normalize() } else { Vec3::y() };
    let helper = if w.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
    let u = w.cross(&helper).normalize();
    let v = w.cross(&u);
    let base = vertices.len();
    vertices.push(a - radius * w);
    let latitudes = [
        (-PI / 3.0, a),
        (-PI / 6.0, a),
        (0.0, a),
        (0.0, b),
        (PI / 6.0, b),
        (PI / 3.0, b),
    ];
    for (phi, center) in latitudes {
        for s in 0..CAPSULE_SEGMENTS {
            let theta = TAU * s as f64 / CAPSULE_SEGMENTS as f64;
            let radial = u * theta.cos() + v * theta.sin();
            vertices.push(center + radius * (phi.cos() * radial + phi.sin() * w));
        }
    }
    vertices.push(b + radius * w);
    let ring = |r: usize, s: usize| base + 1 + r * CAPSULE_SEGMENTS + s % CAPSULE_SEGMENTS;
    let top = base + 1 + latitudes.len() * CAPSULE_SEGMENTS;
    for s in 0..CAPSULE_SEGMENTS {
        tris.push([base, ring(0, s + 1), ring(0, s)]);
        for r in 0..latitudes.len() - 1 {
            tris.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
            tris.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
        }
        let last = latitudes.len() - 1;
        tris.push([ring(last, s), ring(last, s + 1), top]);
    }
}

/// Latitude-longitude sphere with `segments` columns and `rings` rows of
/// quads.
pub fn uv_sphere(center: &Vec3, radius: f64, segments: usize, rings: usize) -> Mesh {
    let segments = segments.max(3);
    let rings = rings.max(2);
    let mut vertices = vec![center - radius * Vec3::y()];
    for r in 1..rings {
        let phi = -PI / 2.0 + PI * r as f64 / rings as f64;
        for s in 0..segments {
            let theta = TAU * s as f64 / segments as f64;
            vertices.push(
                center
                    + radius * Vec3::new(phi.cos() * theta.cos(), phi.sin(), phi.cos() * theta.sin()),
            );
        }
    }
    vertices.push(center + radius * Vec3::y());
    let ring = |r: usize, s: usize| 1 + r * segments + s % segments;
    let top = vertices.len() - 1;
    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, ring(0, s + 1), ring(0, s)]);
        for r in 0..rings - 2 {
            triangles.push([ring(r, s), ring(r, s + 1), ring(r + 1, s + 1)]);
            triangles.push([ring(r, s), ring(r + 1, s + 1), ring(r + 1, s)]);
        }
        triangles.push([ring(rings - 2, s), ring(rings - 2, s + 1), top]);
    }
    Mesh { vertices, triangles }
}

fn mean_bone_length(s: &Skeleton) -> f64 {
    let lengths: Vec<f64> = s.bones().map(|(p, c)| (s.joints[c] - s.joints[p]).norm()).collect();
    if lengths.is_empty() {
        1.0
    } else {
        lengths.iter().sum::<f64>() / lengths.len() as f64
    }
}

fn build_mesh(s: &Skeleton, style: MeshStyle) -> Mesh {
    let scale = mean_bone_length(s);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    match style {
        MeshStyle::Capsule if s.len() > 1 || s.bones().next().is_some() => {
            for (p, c) in s.bones() {
                let len = (s.joints[c] - s.joints[p]).norm();
                let radius = (0.2 * len).min(0.2 * scale).max(1e-3 * scale);
                push_capsule(&s.joints[p], &s.joints[c], radius, &mut vertices, &mut triangles);
            }
            // Isolated roots get a small ball so every joint is covered.
            let children = s.children();
            for r in s.roots().filter(|&r| children[r].is_empty()) {
                let j = s.joints[r];
                push_capsule(&j, &j, 0.2 * scale, &mut vertices, &mut triangles);
            }
        }
        _ => {
            for j in &s.joints {
                let ball = uv_sphere(j, 0.25 * scale, CAPSULE_SEGMENTS, 6);
                let base = vertices.len();
                vertices.extend(ball.vertices);
                triangles.extend(ball.triangles.iter().map(|t| t.map(|i| i + base)));
            }
        }
    }
    Mesh { vertices, triangles }
}

/// Segments through which a joint influences the skin: from the joint to
/// each child, or the joint itself when it is a leaf.
fn influence_segments(s: &Skeleton) -> Vec<Vec<(Vec3, Vec3)>> {
    let children = s.children();
    (0..s.len())
        .map(|j| {
            if children[j].is_empty() {
                vec![(s.joints[j], s.joints[j])]
            } else {
                children[j].iter().map(|&c| (s.joints[j], s.joints[c])).collect()
            }
        })
        .collect()
}

/// Softmax over joints of `-(distance to the joint's bones) / falloff`,
/// evaluated at arbitrary points.
pub fn analytic_skin(s: &Skeleton, points: &[Vec3], falloff: f64) -> Vec<Vec<f64>> {
    let segments = influence_segments(s);
    points
        .iter()
        .map(|p| {
            let logits: Vec<f64> = segments
                .iter()
                .map(|segs| {
                    let d = segs
                        .iter()
                        .map(|(a, b)| point_segment_distance(p, a, b))
                        .fold(f64::INFINITY, f64::min);
                    -d / falloff
                })
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.iter().map(|e| e / total).collect()
        })
        .collect()
}

/// Generates a normalized rig. Equal specs give identical rigs.
pub fn generate(spec: &SynthSpec) -> Result<Rig> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let skeleton = match spec.family {
        Family::Chain => chain(spec, &mut rng),
        Family::Star => star(spec, &mut rng),
        Family::Tree => tree(spec, &mut rng),
        Family::Quadruped => quadruped(spec, &mut rng),
    };
    let mesh = build_mesh(&skeleton, spec.mesh_style);
    let falloff = spec.falloff * mean_bone_length(&skeleton);
    let dense = analytic_skin(&skeleton, &mesh.vertices, falloff);
    let skin = SkinWeights::from_dense(skeleton.len(), &dense);
    let rig = Rig::new(mesh, skeleton, Some(skin))?;
    Ok(normalize_rig(&rig)?.rig)
}

/// Random forest placed directly in the unit cube: 1 to 3 trees, every pair
/// of joints at least `min_separation` apart and every bone at least half
/// that far from joints other than its endpoints.
pub fn random_forest(joint_count: usize, min_separation: f64, seed: u64) -> Result<Skeleton> {
    if joint_count == 0 || !(min_separation > 0.0) {
        return Err(Error::precondition("need at least one joint and a positive separation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'attempt: for _ in 0..1000 {
        let roots = rng.random_range(1..=joint_count.min(3));
        let mut joints: Vec<Vec3> = Vec::new();
        let mut parents: Vec<Option<usize>> = Vec::new();
        let inside = |p: &Vec3| p.iter().all(|c| c.abs() <= 0.42);
        let ok = |joints: &[Vec3], parents: &[Option<usize>], q: &Vec3, parent: Option<usize>| {
            if !inside(q) {
                return false;
            }
            for (i, j) in joints.iter().enumerate() {
                if (j - q).norm() < min_separation {
                    return false;
                }
                if let Some(p) = parent {
                    if i != p && point_segment_distance(j, &joints[p], q) < 0.5 * min_separation {
                        return false;
                    }
                }
                if let Some(pi) = parents[i] {
                    if point_segment_distance(q, &joints[pi], j) < 0.5 * min_separation {
                        return false;
                    }
                }
            }
            true
        };
        for k in 0..joint_count {
            let mut placed = false;
            for _ in 0..200 {
                let (q, parent) = if k < roots {
                    let q = Vec3::from_fn(|_, _| rng.random_range(-0.42..0.42));
                    (q, None)
                } else {
                    let p = rng.random_range(0..joints.len());
                    let len = rng.random_range(min_separation..2.5 * min_separation);
                    (joints[p] + len * random_unit(&mut rng), Some(p))
                };
                if ok(&joints, &parents, &q, parent) {
                    joints.push(q);
                    parents.push(parent);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        return Skeleton::new(joints, parents);
    }
    Err(Error::Numeric("could not place a forest with the requested separation".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    InsertMidBone,
    DuplicateBranch,
    DeleteBranch,
    JitterJoints,
}

impl std::str::FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "insert-mid-bone" => Corruption::InsertMidBone,
            "duplicate-branch" => Corruption::DuplicateBranch,
            "delete-branch" => Corruption::DeleteBranch,
            "jitter-joints" => Corruption::JitterJoints,
            _ => return Err(Error::precondition(format!("unknown corruption {s:?}"))),
        })
    }
}

/// Applies one corruption. Insertions become joint `n` (the old joint
/// count); duplicated branches are appended in subtree order.
pub fn corrupt(rig: &Rig, kind: Corruption, magnitude: f64, seed: u64) -> Result<Rig> {
    rig.validate()?;
    if !(magnitude >= 0.0 && magnitude.is_finite()) {
        return Err(Error::precondition("corruption magnitude must be finite and nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = &rig.skeleton;
    let n = s.len();
    let non_roots: Vec<usize> = (0..n).filter(|&j| s.parents[j].is_some()).collect();
    let pick_non_root = |rng: &mut ChaCha8Rng| -> Result<usize> {
        if non_roots.is_empty() {
            return Err(Error::precondition("corruption needs a joint with a parent"));
        }
        Ok(non_roots[rng.random_range(0..non_roots.len())])
    };
    let mut out = rig.clone();
    match kind {
        Corruption::InsertMidBone => {
            let c = pick_non_root(&mut rng)?;
            let p = s.parents[c].unwrap();
            out.skeleton.joints.push(0.5 * (s.joints[p] + s.joints[c]));
            out.skeleton.parents.push(Some(p));
            out.skeleton.parents[c] = Some(n);
            if let Some(skin) = &mut out.skin {
                skin.joint_count = n + 1;
                for row in &mut skin.entries {
                    if let Some(pos) = row.iter().position(|&(j, _)| j == p) {
                        let half = row[pos].1 * 0.5;
                        row[pos].1 = half;
                        row.push((n, half));
                    }
                }
            }
        }
        Corruption::DuplicateBranch => {
            let c = pick_non_root(&mut rng)?;
            let branch = s.subtree(c);
            let offset = magnitude * random_unit(&mut rng);
            let mut remap = vec![usize::MAX; n];
            for (k, &j) in branch.iter().enumerate() {
                remap[j] = n + k;
            }
            for &j in &branch {
                let parent = if j == c { s.parents[c] } else { s.parents[j].map(|p| remap[p]) };
                out.skeleton.joints.push(s.joints[j] + offset);
                out.skeleton.parents.push(parent);
            }
            if let Some(skin) = &mut out.skin {
                skin.joint_count = n + branch.len();
            }
        }
        Corruption::DeleteBranch => {
            let c = pick_non_root(&mut rng)?;
            let p = s.parents[c].unwrap();
            let mut removed = vec![false; n];
            for j in s.subtree(c) {
                removed[j] = true;
            }
            let mut new_index = vec![usize::MAX; n];
            let mut next = 0;
            for j in 0..n {
                if !removed[j] {
                    new_index[j] = next;
                    next += 1;
                }
            }
            out.skeleton.joints = (0..n).filter(|&j| !removed[j]).map(|j| s.joints[j]).collect();
            out.skeleton.parents = (0..n)
                .filter(|&j| !removed[j])
                .map(|j| s.parents[j].map(|q| new_index[q]))
                .collect();
            if let Some(skin) = &mut out.skin {
                let entries = skin
                    .entries
                    .iter()
                    .map(|row| {
                        let mut dense = vec![0.0; next];
                        for &(j, w) in row {
                            let target = if removed[j] { p } else { j };
                            dense[new_index[target]] += w;
                        }
                        dense
                    })
                    .collect::<Vec<_>>();
                *skin = SkinWeights::from_dense(next, &entries);
            }
        }
        Corruption::JitterJoints => {
            for j in &mut out.skeleton.joints {
                *j += magnitude * Vec3::from_fn(|_, _| rng.sample(StandardNormal));
            }
        }
    }
    out.validate()?;
    Ok(out)
}

//! Bounding volume hierarchy over mesh triangles for exact closest-point
//! queries, and skin transfer built on top of it.

mod cache;
mod transfer;

pub use cache::{CACHE_MAGIC, CACHE_VERSION};
pub use transfer::{transfer_skin_bvh, transfer_skin_nn, transfer_with};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{barycentric_point, closest_point_on_triangle, Aabb};
use crate::rig::{Mesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum NodeKind {
    Inner { left: u32, right: u32 },
    /// Range into the triangle permutation.
    Leaf { start: u32, count: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Node {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

/// Closest point on a triangle soup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub triangle: usize,
    pub point: Vec3,
    /// Weights of the triangle's three corners, in triangle order.
    pub barycentric: [f64; 3],
    pub distance: f64,
}

/// Immutable hierarchy over the triangles of one mesh. Node 0 is the root.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    pub(crate) nodes: Vec<Node>,
    pub(crate) order: Vec<u32>,
    triangles: Vec<[Vec3; 3]>,
    mesh_hash: u64,
}

const MAX_LEAF_SIZE: usize = 1;

/// Builds the hierarchy by recursive median splits on the longest axis of
/// the triangle centroids' bounds.
pub fn build_bvh(mesh: &Mesh) -> Result<TriangleBvh> {
    if mesh.triangles.is_empty() {
        return Err(Error::precondition("cannot build a BVH without triangles"));
    }
    mesh.validate()?;
    let triangles: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|t| mesh.triangle(t)).collect();
    let centroids: Vec<Vec3> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
    let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
    let mut nodes = Vec::with_capacity(2 * triangles.len());
    build_node(&triangles, &centroids, &mut order, 0, &mut nodes);
    Ok(TriangleBvh {
        nodes,
        order,
        triangles,
        mesh_hash: mesh_hash(mesh),
    })
}

fn build_node(
    triangles: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [u32],
    offset: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let bounds = order
        .iter()
        .fold(Aabb::empty(), |b, &t| Aabb::from_points(&triangles[t as usize]).union(&b));
    let index = nodes.len() as u32;
    let leaf = Node {
        bounds,
        kind: NodeKind::Leaf {
            start: offset as u32,
            count: order.len() as u32,
        },
    };
    nodes.push(leaf);
    if order.len() <= MAX_LEAF_SIZE {
        return index;
    }
    let centroid_bounds = Aabb::from_points(order.iter().map(|&t| &centroids[t as usize]));
    let axis = centroid_bounds.longest_axis();
    order.sort_by(|&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let mid = order.len() / 2;
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(triangles, centroids, lo, offset, nodes);
    let right = build_node(triangles, centroids, hi, offset + mid, nodes);
    nodes[index as usize].kind = NodeKind::Inner { left, right };
    index
}

pub(crate) fn mesh_hash(mesh: &Mesh) -> u64 {
    let mut h = Sha256::new();
    h.update((mesh.vertices.len() as u64).to_le_bytes());
    for v in &mesh.vertices {
        for c in v.iter() {
            h.update(c.to_bits().to_le_bytes());
        }
    }
    h.update((mesh.triangles.len() as u64).to_le_bytes());
    for t in &mesh.triangles {
        for &i in t {
            h.update((i as u64).to_le_bytes());
        }
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Exact closest point on one triangle together with its squared distance.
fn triangle_hit(tri: &[Vec3; 3], index: usize, q: &Vec3) -> (f64, SurfaceHit) {
    let bary = closest_point_on_triangle(q, &tri[0], &tri[1], &tri[2]);
    let point = barycentric_point(&bary, &tri[0], &tri[1], &tri[2]);
    let d2 = (q - point).norm_squared();
    let hit = SurfaceHit {
        triangle: index,
        point,
        barycentric: bary,
        distance: d2.sqrt(),
    };
    (d2, hit)
}

/// Squared distances this close count as equal, so that a point nearest to a
/// shared edge or vertex resolves to the lowest triangle index regardless of
/// rounding in the per-triangle kernel.
fn tie_slack(d2: f64) -> f64 {
    1e-9 * d2 + 1e-24
}

fn better(candidate: (f64, usize), best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((d, t)) => {
            let slack = tie_slack(d);
            candidate.0 < d - slack || (candidate.0 <= d + slack && candidate.1 < t)
        }
    }
}

impl TriangleBvh {
    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn mesh_hash(&self) -> u64 {
        self.mesh_hash
    }

    /// Globally nearest surface point; equal distances resolve to the lowest
    /// triangle index.
    pub fn closest_point(&self, q: &Vec3) -> SurfaceHit {
        let mut best: Option<(f64, usize)> = None;
        let mut best_hit = None;
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if let Some((d, _)) = best {
                if node.bounds.distance_squared(q) > d + tie_slack(d) {
                    continue;
                }
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &t in &self.order[start as usize..(start + count) as usize] {
                        let t = t as usize;
                        let (d2, hit) = triangle_hit(&self.triangles[t], t, q);
                        if better((d2, t), best) {
                            best = Some((d2, t));
                            best_hit = Some(hit);
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left as usize].bounds.distance_squared(q);
                    let dr = self.nodes[right as usize].bounds.distance_squared(q);
                    // Nearer child is popped first.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best_hit.expect("a BVH holds at least one triangle")
    }

    pub fn closest_points(&self, queries: &[Vec3]) -> Vec<SurfaceHit> {
        queries.par_iter().map(|q| self.closest_point(q)).collect()
    }

    /// Linear scan over all triangles with the same kernel and tie rule.
    pub fn closest_point_brute_force(&self, q: &Vec3) -> SurfaceHit {
        closest_point_brute_force(&self.triangles, q)
    }

    /// Every triangle index reached by a full traversal, in visit order.
    pub fn traverse_all(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            match self.nodes[n as usize].kind {
                NodeKind::Leaf { start, count } => out.extend(
                    self.order[start as usize..(start + count) as usize]
                        .iter()
                        .map(|&t| t as usize),
                ),
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// Checks that every node's box contains its subtree and that the leaves
    /// partition the triangles.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Cache(m));
        let mut seen = vec![false; self.triangles.len()];
        let mut stack = vec![0u32];
        let mut visited = 0;
        while let Some(n) = stack.pop() {
            visited += 1;
            if visited > self.nodes.len() {
                return fail("node graph is not a tree".into());
            }
            let node = &self.nodes[n as usize];
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &t in &self.order[start as usize..(start + count) as usize] {
                        let t = t as usize;
                        if !node.bounds.contains(&Aabb::from_points(&self.triangles[t])) {
                            return fail(format!("leaf {n} does not bound triangle {t}"));
                        }
                        if std::mem::replace(&mut seen[t], true) {
                            return fail(format!("triangle {t} appears in two leaves"));
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    for c in [left, right] {
                        if !node.bounds.contains(&self.nodes[c as usize].bounds) {
                            return fail(format!("node {n} does not bound child {c}"));
                        }
                        stack.push(c);
                    }
                }
            }
        }
        if let Some(t) = seen.iter().position(|s| !s) {
            return fail(format!("triangle {t} is not in any leaf"));
        }
        Ok(())
    }
}

/// Closest point by scanning every triangle.
pub fn closest_point_brute_force(triangles: &[[Vec3; 3]], q: &Vec3) -> SurfaceHit {
    let mut best: Option<(f64, usize)> = None;
    let mut best_hit = None;
    for (t, tri) in triangles.iter().enumerate() {
        let (d2, hit) = triangle_hit(tri, t, q);
        if better((d2, t), best) {
            best = Some((d2, t));
            best_hit = Some(hit);
        }
    }
    best_hit.expect("at least one triangle")
}

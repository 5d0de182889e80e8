//! Core data model: meshes, skeletons, sparse skin weights and the rig that
//! bundles them, plus validation and unit-cube normalization.

pub(crate) mod io;

pub use io::{load_rig, rig_from_str, rig_to_string, save_rig, RIG_FILE_VERSION};
pub(crate) use io::{read_json, round_sig9, write_json};

use crate::error::{Error, Result, RigError};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Tolerance on partition of unity for a validated skin.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;
/// Skins within this distance of partition of unity are renormalized on load.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;

/// Triangle mesh in (usually) unit-cube coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), RigError> {
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(RigError::NonFinite {
                    what: "vertex",
                    index: i,
                });
            }
        }
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(RigError::TriangleIndex {
                    triangle: t,
                    index: bad,
                    vertex_count: n,
                });
            }
            if tri[0] == tri[1] && tri[1] == tri[2] {
                return Err(RigError::DegenerateTriangle { triangle: t });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Axis-aligned bounds of the vertices, `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds_of(&self.vertices)
    }

    /// True if every vertex lies in `[-0.5, 0.5]^3` up to `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.vertices.iter().all(|v| in_unit_cube(v, tol))
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }
}

pub(crate) fn in_unit_cube(p: &Vec3, tol: f64) -> bool {
    p.iter().all(|&c| (-0.5 - tol..=0.5 + tol).contains(&c))
}

pub(crate) fn bounds_of(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Joint positions with parent links. The links form a forest; `None` marks
/// a root.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Skeleton {
    pub joints: Vec<Vec3>,
    pub parents: Vec<Option<usize>>,
}

impl Skeleton {
    pub fn new(joints: Vec<Vec3>, parents: Vec<Option<usize>>) -> Result<Self> {
        let skeleton = Self { joints, parents };
        skeleton.validate()?;
        Ok(skeleton)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn validate(&self) -> Result<(), RigError> {
        let n = self.joints.len();
        if self.parents.len() != n {
            return Err(RigError::ParentsLength {
                joints: n,
                parents: self.parents.len(),
            });
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !j.iter().all(|c| c.is_finite()) {
                return Err(RigError::NonFinite {
                    what: "joint",
                    index: i,
                });
            }
        }
        for (i, p) in self.parents.iter().enumerate() {
            match *p {
                Some(p) if p == i => return Err(RigError::SelfParent { joint: i }),
                Some(p) if p >= n => {
                    return Err(RigError::ParentIndex {
                        joint: i,
                        parent: p as i64,
                    })
                }
                _ => {}
            }
        }
        if let Some(joint) = self.find_cycle() {
            return Err(RigError::Cycle { joint });
        }
        Ok(())
    }

    /// Returns a joint on a parent cycle, if any. Assumes indices are in range.
    fn find_cycle(&self) -> Option<usize> {
        // 0 = unvisited, 1 = on the current walk, 2 = known to reach a root
        let mut state = vec![0u8; self.len()];
        for start in 0..self.len() {
            let mut path = Vec::new();
            let mut cur = Some(start);
            while let Some(c) = cur {
                match state[c] {
                    2 => break,
                    1 => return Some(c),
                    _ => {
                        state[c] = 1;
                        path.push(c);
                        cur = self.parents[c];
                    }
                }
            }
            for p in path {
                state[p] = 2;
            }
        }
        None
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_none())
            .map(|(i, _)| i)
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len()];
        for (i, p) in self.parents.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(i);
            }
        }
        children
    }

    /// `(parent, child)` index pairs, one per non-root joint.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (p, i)))
    }

    /// Joint indices ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let children = self.children();
        let mut order = Vec::with_capacity(self.len());
        let mut stack: Vec<usize> = self.roots().collect();
        stack.reverse();
        while let Some(j) = stack.pop() {
            order.push(j);
            stack.extend(children[j].iter().rev());
        }
        order
    }

    /// Parent position of joint `i`; roots return their own position.
    pub fn parent_position(&self, i: usize) -> Vec3 {
        self.joints[self.parents[i].unwrap_or(i)]
    }

    /// Indices of `root` and all of its descendants, in depth-first order.
    pub fn subtree(&self, root: usize) -> Vec<usize> {
        let children = self.children();
        let mut out = Vec::new();
        let mut stack = vec![root];
        while let Some(j) = stack.pop() {
            out.push(j);
            stack.extend(children[j].iter().rev());
        }
        out
    }
}

/// Sparse per-vertex skinning weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkinWeights {
    pub joint_count: usize,
    /// One list of `(joint, weight)` pairs per vertex.
    pub entries: Vec<Vec<(usize, f64)>>,
}

impl SkinWeights {
    pub fn new(joint_count: usize, entries: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let skin = Self {
            joint_count,
            entries,
        };
        skin.validate(WEIGHT_SUM_TOLERANCE)?;
        Ok(skin)
    }

    /// Builds sparse weights from dense rows, dropping exact zeros.
    pub fn from_dense(joint_count: usize, rows: &[Vec<f64>]) -> Self {
        let entries = rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(j, &w)| (j, w))
                    .collect()
            })
            .collect();
        Self {
            joint_count,
            entries,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.entries.len()
    }

    pub fn dense_row(&self, vertex: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.joint_count];
        for &(j, w) in &self.entries[vertex] {
            row[j] += w;
        }
        row
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.vertex_count()).map(|v| self.dense_row(v)).collect()
    }

    pub fn weight_sum(&self, vertex: usize) -> f64 {
        self.entries[vertex].iter().map(|&(_, w)| w).sum()
    }

    /// Checks index ranges, weight ranges and partition of unity within `tol`.
    pub fn validate(&self, tol: f64) -> Result<(), RigError> {
        for (v, row) in self.entries.iter().enumerate() {
            for &(j, w) in row {
                if j >= self.joint_count {
                    return Err(RigError::SkinJointIndex {
                        vertex: v,
                        joint: j,
                        joint_count: self.joint_count,
                    });
                }
                if !w.is_finite() || w < 0.0 || w > 1.0 + tol {
                    return Err(RigError::WeightRange {
                        vertex: v,
                        weight: w,
                    });
                }
            }
            let sum = self.weight_sum(v);
            if (sum - 1.0).abs() > tol {
                return Err(RigError::WeightSum { vertex: v, sum });
            }
        }
        Ok(())
    }

    /// Divides every vertex row by its sum.
    pub fn renormalize(&mut self) {
        for row in &mut self.entries {
            let sum: f64 = row.iter().map(|&(_, w)| w).sum();
            if sum > 0.0 {
                for (_, w) in row.iter_mut() {
                    *w /= sum;
                }
            }
        }
    }
}

/// A mesh bound to a skeleton, optionally with skin weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rig {
    pub mesh: Mesh,
    pub skeleton: Skeleton,
    pub skin: Option<SkinWeights>,
}

impl Rig {
    pub fn new(mesh: Mesh, skeleton: Skeleton, skin: Option<SkinWeights>) -> Result<Self> {
        let rig = Self {
            mesh,
            skeleton,
            skin,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<(), RigError> {
        self.mesh.validate()?;
        self.skeleton.validate()?;
        if let Some(skin) = &self.skin {
            self.check_skin_shape(skin)?;
            skin.validate(WEIGHT_SUM_TOLERANCE)?;
        }
        Ok(())
    }

    /// Validation used when reading files: skins that are off partition of
    /// unity by more than [`WEIGHT_SUM_TOLERANCE`] but at most
    /// [`RENORMALIZE_TOLERANCE`] are renormalized in place.
    pub(crate) fn validate_lenient(&mut self) -> Result<(), RigError> {
        self.mesh.validate()?;
        self.skeleton.validate()?;
        if let Some(skin) = &mut self.skin {
            if skin.joint_count != self.skeleton.len() {
                return Err(RigError::SkinJointCount {
                    skin: skin.joint_count,
                    skeleton: self.skeleton.len(),
                });
            }
            if skin.vertex_count() != self.mesh.vertices.len() {
                return Err(RigError::SkinVertexCount {
                    expected: self.mesh.vertices.len(),
                    found: skin.vertex_count(),
                });
            }
            skin.validate(RENORMALIZE_TOLERANCE)?;
            // Rows already within tolerance are left alone so that reading
            // and rewriting a file reproduces it exactly.
            if skin.validate(WEIGHT_SUM_TOLERANCE).is_err() {
                skin.renormalize();
                skin.validate(WEIGHT_SUM_TOLERANCE)?;
            }
        }
        Ok(())
    }

    fn check_skin_shape(&self, skin: &SkinWeights) -> Result<(), RigError> {
        if skin.joint_count != self.skeleton.len() {
            return Err(RigError::SkinJointCount {
                skin: skin.joint_count,
                skeleton: self.skeleton.len(),
            });
        }
        if skin.vertex_count() != self.mesh.vertices.len() {
            return Err(RigError::SkinVertexCount {
                expected: self.mesh.vertices.len(),
                found: skin.vertex_count(),
            });
        }
        Ok(())
    }

    /// Applies `f` to every vertex and joint position.
    pub fn map_positions(&self, f: impl Fn(&Vec3) -> Vec3) -> Rig {
        Rig {
            mesh: Mesh {
                vertices: self.mesh.vertices.iter().map(&f).collect(),
                triangles: self.mesh.triangles.clone(),
            },
            skeleton: Skeleton {
                joints: self.skeleton.joints.iter().map(&f).collect(),
                parents: self.skeleton.parents.clone(),
            },
            skin: self.skin.clone(),
        }
    }

    pub fn require_skin(&self) -> Result<&SkinWeights> {
        self.skin
            .as_ref()
            .ok_or_else(|| Error::precondition("rig has no skin weights"))
    }
}

/// Result of [`normalize_rig`]: `normalized = (original + offset) * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub rig: Rig,
    pub scale: f64,
    pub offset: Vec3,
}

impl Normalized {
    /// Maps a normalized-space point back to the original frame.
    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale - self.offset
    }
}

/// Centers the mesh bounding box at the origin and scales its largest
/// extent to 1. Joints follow the same similarity transform.
pub fn normalize_rig(rig: &Rig) -> Result<Normalized> {
    let (lo, hi) = rig
        .mesh
        .bounds()
        .ok_or_else(|| Error::precondition("cannot normalize a rig with an empty mesh"))?;
    let offset = -(lo + hi) * 0.5;
    let extent = (hi - lo).max();
    let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    let rig = rig.map_positions(|p| (p + offset) * scale);
    Ok(Normalized { rig, scale, offset })
}

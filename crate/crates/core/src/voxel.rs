//! Sparse voxel grids over the unit cube `[-0.5, 0.5]^3`, surface and bone
//! rasterization, and L∞ dilation.
//!
//! Voxel `i` along an axis covers `[-0.5 + i/N, -0.5 + (i+1)/N]`. Surface
//! voxelization treats these boxes as closed (a triangle touching a face
//! marks the voxel). Bone rasterization treats them as half-open on the
//! upper side so that every point belongs to exactly one voxel.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::triangle_box_overlap;
use crate::rig::{in_unit_cube, read_json, write_json, Mesh, Skeleton, Vec3};

pub type Voxel = [u32; 3];

/// Smallest resolution accepted by [`voxelize_surface`].
pub const MIN_SURFACE_RESOLUTION: u32 = 8;
pub const DEFAULT_RESOLUTION: u32 = 64;
pub const DEFAULT_DILATION: u32 = 2;
/// How far outside the unit cube an input point may lie.
pub const CUBE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SparseVoxelGrid {
    resolution: u32,
    occupied: BTreeSet<Voxel>,
}

impl SparseVoxelGrid {
    pub fn new(resolution: u32, voxels: impl IntoIterator<Item = Voxel>) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::precondition("grid resolution must be positive"));
        }
        let mut occupied = BTreeSet::new();
        for v in voxels {
            if v.iter().any(|&c| c >= resolution) {
                return Err(Error::precondition(format!(
                    "voxel {v:?} outside a grid of resolution {resolution}"
                )));
            }
            if !occupied.insert(v) {
                return Err(Error::precondition(format!("duplicate voxel {v:?}")));
            }
        }
        Ok(Self {
            resolution,
            occupied,
        })
    }

    pub fn empty(resolution: u32) -> Self {
        Self {
            resolution,
            occupied: BTreeSet::new(),
        }
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    /// Edge length of one voxel in world units.
    pub fn voxel_size(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn contains(&self, v: &Voxel) -> bool {
        self.occupied.contains(v)
    }

    /// Occupied voxels in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = &Voxel> + '_ {
        self.occupied.iter()
    }

    pub fn center(&self, v: &Voxel) -> Vec3 {
        voxel_center(self.resolution, v)
    }

    /// The voxel containing `p` (half-open cells), if `p` lies in the grid.
    pub fn voxel_of(&self, p: &Vec3) -> Option<Voxel> {
        let mut out = [0; 3];
        for a in 0..3 {
            let i = cell_index(self.resolution, p[a]);
            if i < 0 || i >= self.resolution as i64 {
                return None;
            }
            out[a] = i as u32;
        }
        Some(out)
    }

    /// True if the occupied set is a single 26-connected component.
    pub fn is_connected26(&self) -> bool {
        let Some(&start) = self.occupied.iter().next() else {
            return true;
        };
        let mut seen = HashSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for n in neighborhood(self.resolution, &v, 1) {
                if self.occupied.contains(&n) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen.len() == self.occupied.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct GridFile {
            resolution: u32,
            occupied: Vec<Voxel>,
        }
        let file: GridFile = read_json(path.as_ref())?;
        Self::new(file.resolution, file.occupied)
    }
}

/// Coordinate of the boundary plane `i` along any axis.
pub(crate) fn boundary(resolution: u32, i: i64) -> f64 {
    -0.5 + i as f64 / resolution as f64
}

pub fn voxel_center(resolution: u32, v: &Voxel) -> Vec3 {
    Vec3::from_fn(|a, _| {
        let i = v[a] as i64;
        0.5 * (boundary(resolution, i) + boundary(resolution, i + 1))
    })
}

/// Index of the half-open cell `[b(i), b(i+1))` containing `x`, unclamped.
pub(crate) fn cell_index(resolution: u32, x: f64) -> i64 {
    let mut i = ((x + 0.5) * resolution as f64).floor() as i64;
    while x < boundary(resolution, i) {
        i -= 1;
    }
    while x >= boundary(resolution, i + 1) {
        i += 1;
    }
    i
}

fn neighborhood(resolution: u32, v: &Voxel, radius: u32) -> impl Iterator<Item = Voxel> {
    let r = radius as i64;
    let n = resolution as i64;
    let [x, y, z] = v.map(|c| c as i64);
    let range = move |c: i64| (c - r).max(0)..=(c + r).min(n - 1);
    range(x).flat_map(move |i| {
        range(y).flat_map(move |j| range(z).map(move |k| [i as u32, j as u32, k as u32]))
    })
}

/// Minkowski sum with the L∞ ball of `radius`, clipped to the grid.
pub fn dilate(grid: &SparseVoxelGrid, radius: u32) -> SparseVoxelGrid {
    if radius == 0 {
        return grid.clone();
    }
    let mut set = HashSet::with_capacity(grid.len() * 8);
    for v in grid.iter() {
        set.extend(neighborhood(grid.resolution, v, radius));
    }
    SparseVoxelGrid {
        resolution: grid.resolution,
        occupied: set.into_iter().collect(),
    }
}

/// Marks every voxel whose closed box overlaps at least one triangle.
pub fn voxelize_surface(mesh: &Mesh, resolution: u32) -> Result<SparseVoxelGrid> {
    if mesh.triangles.is_empty() {
        return Err(Error::precondition("cannot voxelize a mesh without triangles"));
    }
    if resolution < MIN_SURFACE_RESOLUTION {
        return Err(Error::precondition(format!(
            "surface resolution {resolution} is below the minimum {MIN_SURFACE_RESOLUTION}"
        )));
    }
    if !mesh.is_normalized(CUBE_TOLERANCE) {
        return Err(Error::precondition(
            "mesh is not normalized to the unit cube [-0.5, 0.5]^3",
        ));
    }
    let per_triangle: Vec<Vec<Voxel>> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| triangle_voxels(&mesh.triangle(t), resolution))
        .collect();
    let occupied = per_triangle.into_iter().flatten().collect();
    Ok(SparseVoxelGrid {
        resolution,
        occupied,
    })
}

fn triangle_voxels(tri: &[Vec3; 3], resolution: u32) -> Vec<Voxel> {
    let n = resolution as i64;
    let mut ranges = [(0i64, 0i64); 3];
    for (a, range) in ranges.iter_mut().enumerate() {
        let lo = tri[0][a].min(tri[1][a]).min(tri[2][a]);
        let hi = tri[0][a].max(tri[1][a]).max(tri[2][a]);
        // Closed boxes: voxel i touches [lo, hi] iff b(i) <= hi and b(i+1) >= lo.
        let mut first = (cell_index(resolution, lo) - 1).max(0);
        while first < n && boundary(resolution, first + 1) < lo {
            first += 1;
        }
        let mut last = cell_index(resolution, hi).min(n - 1);
        while last >= 0 && boundary(resolution, last) > hi {
            last -= 1;
        }
        *range = (first, last);
    }
    let mut out = Vec::new();
    for i in ranges[0].0..=ranges[0].1 {
        for j in ranges[1].0..=ranges[1].1 {
            for k in ranges[2].0..=ranges[2].1 {
                let lo = Vec3::new(
                    boundary(resolution, i),
                    boundary(resolution, j),
                    boundary(resolution, k),
                );
                let hi = Vec3::new(
                    boundary(resolution, i + 1),
                    boundary(resolution, j + 1),
                    boundary(resolution, k + 1),
                );
                if triangle_box_overlap(&((lo + hi) * 0.5), &((hi - lo) * 0.5), tri) {
                    out.push([i as u32, j as u32, k as u32]);
                }
            }
        }
    }
    out
}

/// Voxels traversed by the skeleton's bones (joint to parent), plus the voxel
/// of every joint, dilated by `dilation` under the L∞ norm.
pub fn voxelize_skeleton(
    skeleton: &Skeleton,
    resolution: u32,
    dilation: u32,
) -> Result<SparseVoxelGrid> {
    if skeleton.is_empty() {
        return Err(Error::precondition("cannot voxelize an empty skeleton"));
    }
    if resolution == 0 {
        return Err(Error::precondition("grid resolution must be positive"));
    }
    if let Some(i) = skeleton
        .joints
        .iter()
        .position(|j| !in_unit_cube(j, CUBE_TOLERANCE))
    {
        return Err(Error::precondition(format!(
            "joint {i} lies outside the unit cube [-0.5, 0.5]^3"
        )));
    }
    let n = resolution as i64;
    let mut occupied = BTreeSet::new();
    let mut emit = |c: [i64; 3]| {
        if c.iter().all(|&x| (0..n).contains(&x)) {
            occupied.insert(c.map(|x| x as u32));
        }
    };
    for j in &skeleton.joints {
        emit([0, 1, 2].map(|a| cell_index(resolution, j[a]).clamp(0, n - 1)));
    }
    for (p, c) in skeleton.bones() {
        traverse_segment(resolution, &skeleton.joints[c], &skeleton.joints[p], &mut emit);
    }
    let bones = SparseVoxelGrid {
        resolution,
        occupied,
    };
    Ok(dilate(&bones, dilation))
}

/// Amanatides–Woo traversal over half-open cells. Calls `emit` with every
/// cell containing some point of the segment `p0 → p1`.
pub(crate) fn traverse_segment(
    resolution: u32,
    p0: &Vec3,
    p1: &Vec3,
    emit: &mut impl FnMut([i64; 3]),
) {
    let d = p1 - p0;
    let mut cell = [0, 1, 2].map(|a| cell_index(resolution, p0[a]));
    emit(cell);
    let crossing = |a: usize, cell: i64| -> f64 {
        if d[a] > 0.0 {
            (boundary(resolution, cell + 1) - p0[a]) / d[a]
        } else if d[a] < 0.0 {
            (boundary(resolution, cell) - p0[a]) / d[a]
        } else {
            f64::INFINITY
        }
    };
    let mut next = [0, 1, 2].map(|a| crossing(a, cell[a]));
    loop {
        let t = next[0].min(next[1]).min(next[2]);
        if t > 1.0 {
            break;
        }
        // Moving up, the boundary point already belongs to the next cell.
        let mut stepped = false;
        for a in 0..3 {
            if next[a] == t && d[a] > 0.0 {
                cell[a] += 1;
                next[a] = crossing(a, cell[a]);
                stepped = true;
            }
        }
        if stepped {
            emit(cell);
        }
        // Moving down, the boundary point still belongs to the current cell.
        if t < 1.0 {
            let mut stepped = false;
            for a in 0..3 {
                if next[a] == t && d[a] < 0.0 {
                    cell[a] -= 1;
                    next[a] = crossing(a, cell[a]);
                    stepped = true;
                }
            }
            if stepped {
                emit(cell);
            }
        } else {
            break;
        }
    }
}

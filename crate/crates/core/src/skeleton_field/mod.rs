//! The skeleton field: every voxel of the bone support stores the offset to
//! its nearest joint, the offset to that joint's parent, and a confidence
//! that decays to zero on the Voronoi boundaries between joints.
//!
//! [`encode_field`] builds the exact field for a known skeleton;
//! [`decode_skeleton`] recovers a skeleton from a (possibly noisy) field by
//! voting and confidence-weighted mean-shift clustering (see [`cluster`]).

pub mod cluster;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cluster::{cluster_skeleton, cluster_votes, ClusterParams, Clustering};

use crate::error::{Error, Result};
use crate::rig::{read_json, round_sig9, write_json, Skeleton, Vec3};
use crate::voxel::{SparseVoxelGrid, Voxel};

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub voxel: Voxel,
    /// Nearest joint minus voxel center.
    pub joint_offset: Vec3,
    /// Parent of the nearest joint minus voxel center. Roots point at
    /// themselves.
    pub parent_offset: Vec3,
    pub conf_joint: f64,
    pub conf_parent: f64,
}

/// One [`FieldSample`] per occupied voxel, in the grid's lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonField {
    grid: SparseVoxelGrid,
    samples: Vec<FieldSample>,
}

impl SkeletonField {
    pub fn new(grid: SparseVoxelGrid, mut samples: Vec<FieldSample>) -> Result<Self> {
        samples.sort_by_key(|s| s.voxel);
        if samples.len() != grid.len()
            || samples.iter().zip(grid.iter()).any(|(s, v)| s.voxel != *v)
        {
            return Err(Error::precondition(
                "field samples must cover each occupied voxel exactly once",
            ));
        }
        for s in &samples {
            let ok = |c: f64| (0.0..=1.0).contains(&c);
            if !ok(s.conf_joint) || !ok(s.conf_parent) {
                return Err(Error::precondition(format!(
                    "confidence outside [0, 1] at voxel {:?}",
                    s.voxel
                )));
            }
            let finite = s.joint_offset.iter().chain(s.parent_offset.iter());
            if !finite.into_iter().all(|c| c.is_finite()) {
                return Err(Error::precondition(format!(
                    "non-finite offset at voxel {:?}",
                    s.voxel
                )));
            }
        }
        Ok(Self { grid, samples })
    }

    pub fn grid(&self) -> &SparseVoxelGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[FieldSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Adds isotropic Gaussian noise of standard deviation `sigma` (world
    /// units) to both offsets of every sample. Confidences are untouched.
    pub fn with_offset_noise(&self, sigma: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::precondition(format!("invalid noise level: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = || Vec3::from_fn(|_, _| normal.sample(&mut rng));
        let samples = self
            .samples
            .iter()
            .map(|s| FieldSample {
                joint_offset: s.joint_offset + noise(),
                parent_offset: s.parent_offset + noise(),
                ..s.clone()
            })
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            samples,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = FieldFile {
            resolution: self.grid.resolution(),
            samples: self
                .samples
                .iter()
                .map(|s| SampleFile {
                    voxel: s.voxel,
                    joint_offset: s.joint_offset.map(round_sig9).into(),
                    parent_offset: s.parent_offset.map(round_sig9).into(),
                    conf_j: round_sig9(s.conf_joint),
                    conf_p: round_sig9(s.conf_parent),
                })
                .collect(),
        };
        write_json(path.as_ref(), &file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: FieldFile = read_json(path.as_ref())?;
        let grid = SparseVoxelGrid::new(file.resolution, file.samples.iter().map(|s| s.voxel))?;
        let samples = file
            .samples
            .into_iter()
            .map(|s| FieldSample {
                voxel: s.voxel,
                joint_offset: s.joint_offset.into(),
                parent_offset: s.parent_offset.into(),
                conf_joint: s.conf_j,
                conf_parent: s.conf_p,
            })
            .collect();
        Self::new(grid, samples)
    }
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    resolution: u32,
    samples: Vec<SampleFile>,
}

#[derive(Serialize, Deserialize)]
struct SampleFile {
    voxel: Voxel,
    joint_offset: [f64; 3],
    parent_offset: [f64; 3],
    conf_j: f64,
    conf_p: f64,
}

/// Confidence of a nearest-joint assignment from the squared distances to the
/// nearest and second-nearest joints: `1 - d1² / d2²`, clamped to `[0, 1]`.
/// Coincident nearest and second-nearest joints are fully ambiguous.
pub fn assignment_confidence(nearest_sq: f64, second_sq: Option<f64>) -> f64 {
    match second_sq {
        None => 1.0,
        Some(d2) if d2 <= 0.0 => 0.0,
        Some(d2) => (1.0 - nearest_sq / d2).clamp(0.0, 1.0),
    }
}

/// Nearest and second-nearest joints of `p` with squared distances. Ties
/// resolve to the lower joint index.
fn two_nearest(joints: &[Vec3], p: &Vec3) -> ((usize, f64), Option<(usize, f64)>) {
    let mut best = (0, f64::INFINITY);
    let mut second: Option<(usize, f64)> = None;
    for (i, j) in joints.iter().enumerate() {
        let d = (j - p).norm_squared();
        if d < best.1 {
            second = Some(best).filter(|b| b.1.is_finite());
            best = (i, d);
        } else if second.is_none_or(|s| d < s.1) {
            second = Some((i, d));
        }
    }
    (best, second)
}

/// Exact skeleton field of `skeleton` on the voxels of `grid`.
pub fn encode_field(skeleton: &Skeleton, grid: &SparseVoxelGrid) -> Result<SkeletonField> {
    if skeleton.is_empty() {
        return Err(Error::precondition("cannot encode an empty skeleton"));
    }
    if grid.is_empty() {
        return Err(Error::precondition("cannot encode a field on an empty grid"));
    }
    let voxels: Vec<Voxel> = grid.iter().copied().collect();
    let samples = voxels
        .par_iter()
        .map(|v| {
            let center = grid.center(v);
            let ((nearest, d1), second) = two_nearest(&skeleton.joints, &center);
            let conf = assignment_confidence(d1, second.map(|s| s.1));
            FieldSample {
                voxel: *v,
                joint_offset: skeleton.joints[nearest] - center,
                parent_offset: skeleton.parent_position(nearest) - center,
                conf_joint: conf,
                conf_parent: conf,
            }
        })
        .collect();
    Ok(SkeletonField {
        grid: grid.clone(),
        samples,
    })
}

/// Mean over voxels of `c_gt · (‖Δjoint‖² + ‖Δparent‖²)`, weighting the joint
/// term by the ground-truth joint confidence and the parent term by the
/// ground-truth parent confidence.
pub fn confidence_weighted_error(pred: &SkeletonField, gt: &SkeletonField) -> Result<f64> {
    if pred.grid != gt.grid {
        return Err(Error::precondition(
            "predicted and ground-truth fields live on different grids",
        ));
    }
    if gt.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred
        .samples
        .iter()
        .zip(&gt.samples)
        .map(|(p, g)| {
            g.conf_joint * (p.joint_offset - g.joint_offset).norm_squared()
                + g.conf_parent * (p.parent_offset - g.parent_offset).norm_squared()
        })
        .sum();
    Ok(total / gt.len() as f64)
}

/// Joint and parent votes cast by each voxel of a field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Votes {
    pub joints: Vec<Vec3>,
    pub parents: Vec<Vec3>,
    pub conf_joint: Vec<f64>,
    pub conf_parent: Vec<f64>,
}

impl Votes {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Votes with a single confidence channel shared by joints and parents.
    pub fn uniform(joints: Vec<Vec3>, parents: Vec<Vec3>, conf: Vec<f64>) -> Self {
        Self {
            joints,
            parents,
            conf_parent: conf.clone(),
            conf_joint: conf,
        }
    }
}

pub fn field_votes(field: &SkeletonField) -> Votes {
    let mut votes = Votes::default();
    for s in &field.samples {
        let center = field.grid.center(&s.voxel);
        votes.joints.push(center + s.joint_offset);
        votes.parents.push(center + s.parent_offset);
        votes.conf_joint.push(s.conf_joint);
        votes.conf_parent.push(s.conf_parent);
    }
    votes
}

/// Field votes followed by [`cluster_skeleton`].
pub fn decode_skeleton(field: &SkeletonField, params: &ClusterParams) -> Result<Skeleton> {
    if field.is_empty() {
        return Err(Error::precondition("cannot decode an empty field"));
    }
    cluster_skeleton(&field_votes(field), params)
}

/// Maps every reference joint to its nearest decoded joint when the two
/// skeletons have the same joint count, every match is closer than
/// `tolerance`, the map is one-to-one, and parent links correspond.
pub fn structural_match(
    reference: &Skeleton,
    decoded: &Skeleton,
    tolerance: f64,
) -> Option<Vec<usize>> {
    if reference.len() != decoded.len() {
        return None;
    }
    let mut map = Vec::with_capacity(reference.len());
    let mut used = vec![false; decoded.len()];
    for r in &reference.joints {
        let (k, d) = decoded
            .joints
            .iter()
            .enumerate()
            .map(|(k, q)| (k, (r - q).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if d >= tolerance || std::mem::replace(&mut used[k], true) {
            return None;
        }
        map.push(k);
    }
    let same_links = (0..reference.len())
        .all(|i| decoded.parents[map[i]] == reference.parents[i].map(|p| map[p]));
    same_links.then_some(map)
}

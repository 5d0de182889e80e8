//! Forward kinematics, linear blend skinning and random pose jitter.

use std::path::Path;

use nalgebra::{Isometry3, Quaternion, Translation3, Unit, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rig::io::{read_json, write_json};
use crate::rig::{Mesh, Rig, Skeleton, Vec3};

pub const DEFAULT_ROTATION_PROBABILITY: f64 = 0.8;
pub const DEFAULT_MAX_ANGLE_DEGREES: f64 = 60.0;

/// Per-joint local rotations about each joint's rest position, plus an
/// optional translation applied to every root.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub root_translation: Vec3,
}

impl Pose {
    pub fn identity(joint_count: usize) -> Self {
        Pose {
            rotations: vec![UnitQuaternion::identity(); joint_count],
            root_translation: Vec3::zeros(),
        }
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.root_translation == Vec3::zeros()
            && self.rotations.iter().all(|q| *q == UnitQuaternion::identity())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = PoseFile {
            rotations: self
                .rotations
                .iter()
                .map(|q| [q.i, q.j, q.k, q.w])
                .collect(),
            root_translation: self.root_translation.into(),
        };
        write_json(path.as_ref(), &file)
    }

    /// Loads a pose; quaternions within 1e-6 of unit length are renormalized.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: PoseFile = read_json(path.as_ref())?;
        let mut rotations = Vec::with_capacity(file.rotations.len());
        for (i, [x, y, z, w]) in file.rotations.into_iter().enumerate() {
            let q = Quaternion::new(w, x, y, z);
            let norm = q.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
                return Err(Error::precondition(format!(
                    "rotation {i} has norm {norm}, expected a unit quaternion"
                )));
            }
            rotations.push(UnitQuaternion::new_normalize(q));
        }
        let t = Vec3::from(file.root_translation);
        if !t.iter().all(|c| c.is_finite()) {
            return Err(Error::precondition("root translation is not finite"));
        }
        Ok(Pose {
            rotations,
            root_translation: t,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    rotations: Vec<[f64; 4]>,
    #[serde(default)]
    root_translation: [f64; 3],
}

fn check_length(skeleton: &Skeleton, pose: &Pose) -> Result<()> {
    if pose.len() != skeleton.len() {
        return Err(Error::precondition(format!(
            "pose has {} rotations but the skeleton has {} joints",
            pose.len(),
            skeleton.len()
        )));
    }
    Ok(())
}

/// World rotation of every joint and the displacement of its position from
/// rest. Tracking displacements keeps the identity pose exact.
fn world_frames(skeleton: &Skeleton, pose: &Pose) -> Vec<(UnitQuaternion<f64>, Vec3)> {
    let mut frames = vec![(UnitQuaternion::identity(), Vec3::zeros()); skeleton.len()];
    for i in skeleton.topological_order() {
        frames[i] = match skeleton.parents[i] {
            None => (pose.rotations[i], pose.root_translation),
            Some(p) => {
                let (rot_p, disp_p) = frames[p];
                let offset = skeleton.joints[i] - skeleton.joints[p];
                (rot_p * pose.rotations[i], disp_p + (rot_p * offset - offset))
            }
        };
    }
    frames
}

/// World transforms of every joint. Each maps the joint's local frame, with
/// origin at the joint, into the posed world.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<Isometry3<f64>>> {
    check_length(skeleton, pose)?;
    Ok(world_frames(skeleton, pose)
        .into_iter()
        .zip(&skeleton.joints)
        .map(|((rot, disp), rest)| Isometry3::from_parts(Translation3::from(rest + disp), rot))
        .collect())
}

/// Posed joint positions.
pub fn posed_joints(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<Vec3>> {
    Ok(forward_kinematics(skeleton, pose)?
        .iter()
        .map(|t| t.translation.vector)
        .collect())
}

/// Linear blend skinning. Triangles are carried over unchanged.
pub fn skin_mesh(rig: &Rig, pose: &Pose) -> Result<Mesh> {
    let skin = rig.require_skin()?;
    check_length(&rig.skeleton, pose)?;
    let frames = world_frames(&rig.skeleton, pose);
    let joints = &rig.skeleton.joints;
    let vertices = rig
        .mesh
        .vertices
        .par_iter()
        .zip(&skin.entries)
        .map(|(v, row)| {
            let mut delta = Vec3::zeros();
            for &(j, w) in row {
                let (rot, disp) = frames[j];
                let local = v - joints[j];
                delta += w * (rot * local - local + disp);
            }
            v + delta
        })
        .collect();
    Ok(Mesh {
        vertices,
        triangles: rig.mesh.triangles.clone(),
    })
}

/// Random jitter: each joint independently rotates, with probability `prob`,
/// about a uniformly random axis by an angle drawn uniformly from
/// `[0, max_angle_degrees]`.
pub fn perturb_pose(
    skeleton: &Skeleton,
    prob: f64,
    max_angle_degrees: f64,
    seed: u64,
) -> Result<Pose> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::precondition(format!("probability {prob} is outside [0, 1]")));
    }
    if !(max_angle_degrees >= 0.0 && max_angle_degrees.is_finite()) {
        return Err(Error::precondition(format!(
            "maximum angle {max_angle_degrees} must be finite and nonnegative"
        )));
    }
    let max = max_angle_degrees.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pose = Pose::identity(skeleton.len());
    for q in &mut pose.rotations {
        if !rng.random_bool(prob) {
            continue;
        }
        let axis = loop {
            let g = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            if let Some(a) = Unit::try_new(g, 1e-12) {
                break a;
            }
        };
        let angle = rng.random_range(0.0..=max);
        if angle > 0.0 {
            *q = UnitQuaternion::from_axis_angle(&axis, angle);
        }
    }
    Ok(pose)
}

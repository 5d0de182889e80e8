use crate::error::{Error, Result};
use crate::geometry::point_segment_distance;
use crate::rig::{Skeleton, Vec3};

pub const DEFAULT_SAMPLES_PER_BONE: usize = 32;

/// Joint-to-joint, joint-to-bone and bone-to-bone Chamfer distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chamfer {
    pub joint_to_joint: f64,
    pub joint_to_bone: f64,
    pub bone_to_bone: f64,
}

/// Segments of a skeleton; every root also contributes a zero-length
/// segment so isolated joints are represented.
fn segments(s: &Skeleton) -> Vec<(Vec3, Vec3)> {
    s.roots()
        .map(|r| (s.joints[r], s.joints[r]))
        .chain(s.bones().map(|(p, c)| (s.joints[p], s.joints[c])))
        .collect()
}

fn bone_samples(s: &Skeleton, per_bone: usize) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = s.roots().map(|r| s.joints[r]).collect();
    for (p, c) in s.bones() {
        let (a, b) = (s.joints[p], s.joints[c]);
        out.extend((0..per_bone).map(|k| a + (b - a) * (k as f64 / (per_bone - 1) as f64)));
    }
    out
}

fn mean_nearest(from: &[Vec3], dist: impl Fn(&Vec3) -> f64) -> f64 {
    from.iter().map(dist).sum::<f64>() / from.len() as f64
}

fn nearest_point(p: &Vec3, set: &[Vec3]) -> f64 {
    set.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

fn nearest_segment(p: &Vec3, set: &[(Vec3, Vec3)]) -> f64 {
    set.iter()
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

fn symmetric_points(x: &[Vec3], y: &[Vec3]) -> f64 {
    0.5 * (mean_nearest(x, |p| nearest_point(p, y)) + mean_nearest(y, |p| nearest_point(p, x)))
}

pub fn chamfer_metrics(pred: &Skeleton, gt: &Skeleton, samples_per_bone: usize) -> Result<Chamfer> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::precondition("Chamfer metrics need two nonempty skeletons"));
    }
    if samples_per_bone < 2 {
        return Err(Error::precondition("at least 2 samples per bone are required"));
    }
    let (sp, sg) = (segments(pred), segments(gt));
    let joint_to_bone = 0.5
        * (mean_nearest(&pred.joints, |p| nearest_segment(p, &sg))
            + mean_nearest(&gt.joints, |p| nearest_segment(p, &sp)));
    Ok(Chamfer {
        joint_to_joint: symmetric_points(&pred.joints, &gt.joints),
        joint_to_bone,
        bone_to_bone: symmetric_points(
            &bone_samples(pred, samples_per_bone),
            &bone_samples(gt, samples_per_bone),
        ),
    })
}

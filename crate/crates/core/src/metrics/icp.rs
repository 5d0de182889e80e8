use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rig::Vec3;

pub const DEFAULT_ICP_RESTARTS: usize = 100;
pub const DEFAULT_ICP_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    /// Maps source points onto the target.
    pub transform: Isometry3<f64>,
    /// Mean squared nearest-neighbor distance after alignment.
    pub residual: f64,
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Least-squares rigid motion taking `src[i]` to `dst[i]`.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Isometry3<f64> {
    let cs = centroid(src);
    let cd = centroid(dst);
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rotation * cs;
    Isometry3::from_parts(Translation3::from(t), rotation)
}

fn nearest(p: &Vec3, set: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in set.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub(crate) fn apply(t: &Isometry3<f64>, p: &Vec3) -> Vec3 {
    t.transform_point(&Point3::from(*p)).coords
}

fn residual(src: &[Vec3], dst: &[Vec3], t: &Isometry3<f64>) -> f64 {
    src.iter().map(|p| nearest(&apply(t, p), dst).1).sum::<f64>()
        / src.len() as f64
}

fn refine(src: &[Vec3], dst: &[Vec3], mut t: Isometry3<f64>, iterations: usize) -> IcpResult {
    let mut err = residual(src, dst, &t);
    for _ in 0..iterations {
        let matched: Vec<Vec3> = src
            .iter()
            .map(|p| dst[nearest(&apply(&t, p), dst).0])
            .collect();
        let next = kabsch(src, &matched);
        let next_err = residual(src, dst, &next);
        if next_err >= err {
            break;
        }
        let gain = err - next_err;
        t = next;
        err = next_err;
        if gain <= 1e-15 * (1.0 + err) {
            break;
        }
    }
    IcpResult { transform: t, residual: err }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    loop {
        let q = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
        if q.norm() > 1e-9 {
            return UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q));
        }
    }
}

/// Best-of-restarts rigid ICP from `src` onto `dst`. Restart 0 starts from
/// the identity rotation, the rest from uniformly random rotations; each
/// starts with centroids aligned.
pub fn align_icp(
    src: &[Vec3],
    dst: &[Vec3],
    restarts: usize,
    iterations: usize,
    seed: u64,
) -> Result<IcpResult> {
    if src.len() < 3 || dst.len() < 3 {
        return Err(Error::precondition("ICP needs at least 3 points on each side"));
    }
    if restarts == 0 {
        return Err(Error::precondition("ICP needs at least one restart"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotations: Vec<UnitQuaternion<f64>> = (0..restarts)
        .map(|r| {
            if r == 0 {
                UnitQuaternion::identity()
            } else {
                random_rotation(&mut rng)
            }
        })
        .collect();
    let (cs, cd) = (centroid(src), centroid(dst));
    let results: Vec<IcpResult> = rotations
        .par_iter()
        .map(|q| {
            let start = Isometry3::from_parts(Translation3::from(cd - q * cs), *q);
            refine(src, dst, start, iterations)
        })
        .collect();
    Ok(results
        .into_iter()
        .reduce(|best, r| if r.residual < best.residual { r } else { best })
        .expect("at least one restart"))
}

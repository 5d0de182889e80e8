use rayon::prelude::*;

use super::ot::TransportPlan;
use crate::bvh::{build_bvh, transfer_with};
use crate::error::{Error, Result};
use crate::rig::{Rig, SkinWeights};

pub const KL_SMOOTHING: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkinScores {
    pub l1: f64,
    pub l2: f64,
    pub kl: f64,
}

/// Reference weights sampled at every predicted vertex: barycentric on the
/// closest reference triangle, or the nearest reference vertex when the
/// reference mesh has no triangles.
fn reference_at_pred_vertices(pred: &Rig, gt: &Rig) -> Result<SkinWeights> {
    let gt_skin = gt.require_skin()?;
    if gt.mesh.triangles.is_empty() {
        crate::bvh::transfer_skin_nn(gt, &pred.mesh)
    } else {
        let bvh = build_bvh(&gt.mesh)?;
        transfer_with(&bvh, &gt.mesh, gt_skin, &pred.mesh)
    }
}

/// Compares skins after pushing predicted joint weights onto reference
/// joints through the row-normalized plan (rows: predicted joints).
pub fn skin_metrics(pred: &Rig, gt: &Rig, plan: &TransportPlan) -> Result<SkinScores> {
    let pred_skin = pred.require_skin()?;
    let gt_skin = gt.require_skin()?;
    let (n, m) = plan.plan.shape();
    if n != pred_skin.joint_count || m != gt_skin.joint_count {
        return Err(Error::precondition(format!(
            "plan is {n}x{m} but the skins have {} and {} joints",
            pred_skin.joint_count, gt_skin.joint_count
        )));
    }
    if pred.mesh.vertices.is_empty() {
        return Err(Error::precondition("predicted mesh has no vertices"));
    }
    let reference = reference_at_pred_vertices(pred, gt)?;
    let push = plan.row_normalized();
    let scores: Vec<(f64, f64, f64)> = pred_skin
        .entries
        .par_iter()
        .zip(&reference.entries)
        .map(|(row, reference_row)| {
            let mut aligned = vec![0.0; m];
            for &(i, w) in row {
                for (k, x) in aligned.iter_mut().enumerate() {
                    *x += w * push[(i, k)];
                }
            }
            let mut target = vec![0.0; m];
            for &(k, w) in reference_row {
                target[k] = w;
            }
            let mut l1 = 0.0;
            let mut l2 = 0.0;
            let mut kl = 0.0;
            for (t, p) in target.iter().zip(&aligned) {
                l1 += (t - p).abs();
                l2 += (t - p).powi(2);
                if *t > 0.0 {
                    kl += t * (t / (p + KL_SMOOTHING)).ln();
                }
            }
            (l1, l2.sqrt(), kl)
        })
        .collect();
    let count = scores.len() as f64;
    let sum = scores
        .iter()
        .fold((0.0, 0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1, acc.2 + s.2));
    Ok(SkinScores {
        l1: sum.0 / count,
        l2: sum.1 / count,
        kl: (sum.2 / count).max(0.0),
    })
}

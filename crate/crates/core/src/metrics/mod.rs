//! Skeleton and skin evaluation metrics.
//!
//! [`evaluate`] runs the whole protocol on a predicted and a reference rig:
//! the reference is normalized into the unit cube, the prediction is scaled
//! and centered to match it, rigidly aligned by ICP on the joints, and then
//! scored with Chamfer, Wasserstein, Gromov–Wasserstein and skin metrics.

mod chamfer;
mod icp;
mod ot;
mod skin;

pub use chamfer::{chamfer_metrics, Chamfer, DEFAULT_SAMPLES_PER_BONE};
pub use icp::{align_icp, kabsch, IcpResult, DEFAULT_ICP_ITERATIONS, DEFAULT_ICP_RESTARTS};
pub use ot::{
    gromov_wasserstein, gromov_wasserstein_plan, gw_from_distances, sinkhorn,
    skeleton_geodesics, squared_distance_matrix, uniform, wasserstein, OtSettings,
    TransportPlan,
};
pub use skin::{skin_metrics, SkinScores, KL_SMOOTHING};

use std::fmt::Write as _;

use nalgebra::{Isometry3, UnitQuaternion};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rig::{normalize_rig, Rig, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    None,
    #[default]
    Icp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub alignment: Alignment,
    pub icp_restarts: usize,
    pub icp_iterations: usize,
    pub seed: u64,
    pub samples_per_bone: usize,
    pub ot: OtSettings,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            alignment: Alignment::Icp,
            icp_restarts: DEFAULT_ICP_RESTARTS,
            icp_iterations: DEFAULT_ICP_ITERATIONS,
            seed: 0,
            samples_per_bone: DEFAULT_SAMPLES_PER_BONE,
            ot: OtSettings::default(),
        }
    }
}

/// The eight table columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub joint_to_joint: f64,
    pub joint_to_bone: f64,
    pub bone_to_bone: f64,
    pub wasserstein: f64,
    pub gromov_wasserstein: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skin_l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skin_l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skin_kl: Option<f64>,
}

/// Similarity transform taking the original prediction into the normalized
/// reference frame: `p -> scale * rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlignmentRecord {
    pub scale: f64,
    /// Quaternion as `[x, y, z, w]`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icp_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub scores: Scores,
    pub alignment: AlignmentRecord,
}

pub const COLUMN_TITLES: [&str; 8] = [
    "Joint-to-Joint",
    "Joint-to-Bone",
    "Bone-to-Bone",
    "Wasserstein",
    "Gromov–Wasserstein",
    "Skin ℓ1",
    "Skin ℓ2",
    "Skin KL",
];

impl Scores {
    pub fn columns(&self) -> [Option<f64>; 8] {
        [
            Some(self.joint_to_joint),
            Some(self.joint_to_bone),
            Some(self.bone_to_bone),
            Some(self.wasserstein),
            Some(self.gromov_wasserstein),
            self.skin_l1,
            self.skin_l2,
            self.skin_kl,
        ]
    }

    /// Column-wise mean. Skin columns are averaged over the entries that
    /// have them.
    pub fn mean<'a>(all: impl IntoIterator<Item = &'a Scores>) -> Option<Scores> {
        let all: Vec<&Scores> = all.into_iter().collect();
        if all.is_empty() {
            return None;
        }
        let mean = |f: &dyn Fn(&Scores) -> Option<f64>| {
            let v: Vec<f64> = all.iter().filter_map(|s| f(s)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some(Scores {
            joint_to_joint: mean(&|s| Some(s.joint_to_joint))?,
            joint_to_bone: mean(&|s| Some(s.joint_to_bone))?,
            bone_to_bone: mean(&|s| Some(s.bone_to_bone))?,
            wasserstein: mean(&|s| Some(s.wasserstein))?,
            gromov_wasserstein: mean(&|s| Some(s.gromov_wasserstein))?,
            skin_l1: mean(&|s| s.skin_l1),
            skin_l2: mean(&|s| s.skin_l2),
            skin_kl: mean(&|s| s.skin_kl),
        })
    }
}

/// Plain-text table with one labelled row per entry, columns padded to a
/// common width.
pub fn format_table(rows: &[(String, Scores)]) -> String {
    let label_width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(5);
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(_, s)| {
            s.columns()
                .iter()
                .map(|c| c.map_or_else(|| "-".to_string(), |v| format!("{v:.6}")))
                .collect()
        })
        .collect();
    let widths: Vec<usize> = COLUMN_TITLES
        .iter()
        .enumerate()
        .map(|(j, t)| {
            cells
                .iter()
                .map(|r| r[j].chars().count())
                .chain([t.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}", "Asset");
    for (t, w) in COLUMN_TITLES.iter().zip(&widths) {
        let pad = w - t.chars().count();
        let _ = write!(out, "  {}{t}", " ".repeat(pad));
    }
    out.push('\n');
    for ((label, _), row) in rows.iter().zip(&cells) {
        let pad = label_width - label.chars().count();
        let _ = write!(out, "{label}{}", " ".repeat(pad));
        for (c, w) in row.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    out
}

fn rms_radius(points: &[Vec3]) -> (Vec3, f64) {
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    let r = (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / points.len() as f64)
        .sqrt();
    (c, r)
}

/// Scores `pred` against `gt` after normalization and optional alignment.
pub fn evaluate(pred: &Rig, gt: &Rig, settings: &EvalSettings) -> Result<MetricReport> {
    pred.validate()?;
    gt.validate()?;
    settings.ot.validate()?;
    if pred.skeleton.is_empty() || gt.skeleton.is_empty() {
        return Err(Error::precondition("both rigs need a nonempty skeleton"));
    }
    let gt = normalize_rig(gt)?.rig;

    // Scale and center the prediction to match the reference, measured on
    // mesh vertices when both rigs have them and on joints otherwise.
    let use_vertices = !pred.mesh.vertices.is_empty() && !gt.mesh.vertices.is_empty();
    let (pred_ref, gt_ref) = if use_vertices {
        (&pred.mesh.vertices, &gt.mesh.vertices)
    } else {
        (&pred.skeleton.joints, &gt.skeleton.joints)
    };
    let (cp, rp) = rms_radius(pred_ref);
    let (cg, rg) = rms_radius(gt_ref);
    let scale = if rp > 0.0 && rg > 0.0 { rg / rp } else { 1.0 };
    let shift = cg - scale * cp;
    let pred = pred.map_positions(|p| scale * p + shift);

    let (iso, residual) = match settings.alignment {
        Alignment::None => (Isometry3::identity(), None),
        Alignment::Icp => {
            let (src, dst) = if pred.skeleton.len() >= 3 && gt.skeleton.len() >= 3 {
                (pred.skeleton.joints.clone(), gt.skeleton.joints.clone())
            } else {
                (subsample(&pred.mesh.vertices), subsample(&gt.mesh.vertices))
            };
            if src.len() >= 3 && dst.len() >= 3 {
                let r = align_icp(
                    &src,
                    &dst,
                    settings.icp_restarts,
                    settings.icp_iterations,
                    settings.seed,
                )?;
                (r.transform, Some(r.residual))
            } else {
                (Isometry3::identity(), None)
            }
        }
    };
    let pred = pred.map_positions(|p| icp::apply(&iso, p));

    let chamfer = chamfer_metrics(&pred.skeleton, &gt.skeleton, settings.samples_per_bone)?;
    let (w, plan) = wasserstein(&pred.skeleton.joints, &gt.skeleton.joints, &settings.ot)?;
    let gw = gromov_wasserstein(&pred.skeleton, &gt.skeleton, &settings.ot)?;
    let skin = match (&pred.skin, &gt.skin) {
        (Some(_), Some(_)) => Some(skin_metrics(&pred, &gt, &plan)?),
        _ => None,
    };
    let scores = Scores {
        joint_to_joint: chamfer.joint_to_joint,
        joint_to_bone: chamfer.joint_to_bone,
        bone_to_bone: chamfer.bone_to_bone,
        wasserstein: w,
        gromov_wasserstein: gw,
        skin_l1: skin.map(|s| s.l1),
        skin_l2: skin.map(|s| s.l2),
        skin_kl: skin.map(|s| s.kl),
    };
    if scores.columns().iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("a metric evaluated to a non-finite value".into()));
    }
    let rotation: UnitQuaternion<f64> = iso.rotation;
    let translation = rotation * shift + iso.translation.vector;
    Ok(MetricReport {
        scores,
        alignment: AlignmentRecord {
            scale,
            rotation: [rotation.i, rotation.j, rotation.k, rotation.w],
            translation: translation.into(),
            icp_residual: residual,
        },
    })
}

/// At most 256 points taken at an even stride.
fn subsample(points: &[Vec3]) -> Vec<Vec3> {
    let stride = points.len().div_ceil(256).max(1);
    points.iter().step_by(stride).copied().collect()
}

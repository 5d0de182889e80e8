use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{build_bvh, TriangleBvh};
use crate::error::{Error, Result};
use crate::rig::{Mesh, Rig, SkinWeights};

/// Moves the source skin onto `dst` by interpolating the weights of the
/// closest source triangle's corners.
pub fn transfer_skin_bvh(src: &Rig, dst: &Mesh) -> Result<SkinWeights> {
    let skin = src.require_skin()?;
    let bvh = build_bvh(&src.mesh)?;
    transfer_with(&bvh, &src.mesh, skin, dst)
}

/// Barycentric transfer against a prebuilt hierarchy of `src_mesh`.
pub fn transfer_with(
    bvh: &TriangleBvh,
    src_mesh: &Mesh,
    skin: &SkinWeights,
    dst: &Mesh,
) -> Result<SkinWeights> {
    if skin.vertex_count() != src_mesh.vertices.len() {
        return Err(Error::precondition("skin does not match the source mesh"));
    }
    let entries: Vec<Vec<(usize, f64)>> = dst
        .vertices
        .par_iter()
        .map(|v| {
            let hit = bvh.closest_point(v);
            let tri = src_mesh.triangles[hit.triangle];
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for (corner, &b) in tri.iter().zip(&hit.barycentric) {
                if b <= 0.0 {
                    continue;
                }
                for &(j, w) in &skin.entries[*corner] {
                    *acc.entry(j).or_default() += b * w;
                }
            }
            let total: f64 = acc.values().sum();
            acc.into_iter()
                .filter(|&(_, w)| w > 0.0)
                .map(|(j, w)| (j, w / total))
                .collect()
        })
        .collect();
    if entries.iter().any(|row| row.is_empty()) {
        return Err(Error::Numeric("transferred weights vanished".into()));
    }
    SkinWeights::new(skin.joint_count, entries)
}

/// Each destination vertex copies the weights of its nearest source vertex.
pub fn transfer_skin_nn(src: &Rig, dst: &Mesh) -> Result<SkinWeights> {
    let skin = src.require_skin()?;
    if src.mesh.vertices.is_empty() {
        return Err(Error::precondition("source mesh has no vertices"));
    }
    let entries = dst
        .vertices
        .par_iter()
        .map(|v| {
            let mut best = (f64::INFINITY, 0);
            for (i, s) in src.mesh.vertices.iter().enumerate() {
                let d = (v - s).norm_squared();
                if d < best.0 {
                    best = (d, i);
                }
            }
            skin.entries[best.1].clone()
        })
        .collect();
    SkinWeights::new(skin.joint_count, entries)
}

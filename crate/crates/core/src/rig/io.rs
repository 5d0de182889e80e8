use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Mesh, Rig, Skeleton, SkinWeights, Vec3};
use crate::error::{Result, RigError};

pub const RIG_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigFile {
    version: u32,
    mesh: MeshFile,
    skeleton: SkeletonFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skin: Option<SkinFile>,
}

#[derive(Serialize, Deserialize)]
struct MeshFile {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    joints: Vec<[f64; 3]>,
    parents: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
struct SkinFile {
    entries: Vec<Vec<(usize, f64)>>,
}

/// Rounds to 9 significant decimal digits, the precision of every real we
/// write to disk.
pub(crate) fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn point_out(p: &Vec3) -> [f64; 3] {
    [round_sig9(p.x), round_sig9(p.y), round_sig9(p.z)]
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads and validates a rig file.
pub fn load_rig(path: impl AsRef<Path>) -> Result<Rig> {
    let file: RigFile = read_json(path.as_ref())?;
    rig_from_file(file)
}

/// Writes a rig file. All reals are rounded to 9 significant digits.
pub fn save_rig(rig: &Rig, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), &rig_to_file(rig))
}

pub fn rig_from_str(text: &str) -> Result<Rig> {
    rig_from_file(serde_json::from_str(text)?)
}

pub fn rig_to_string(rig: &Rig) -> Result<String> {
    Ok(serde_json::to_string(&rig_to_file(rig))?)
}

fn rig_from_file(file: RigFile) -> Result<Rig> {
    if file.version != RIG_FILE_VERSION {
        return Err(RigError::Version(file.version).into());
    }
    let joint_count = file.skeleton.joints.len();
    let mut parents = Vec::with_capacity(file.skeleton.parents.len());
    for (i, &p) in file.skeleton.parents.iter().enumerate() {
        parents.push(match p {
            -1 => None,
            p if p >= 0 && (p as usize) < joint_count => Some(p as usize),
            p => return Err(RigError::ParentIndex { joint: i, parent: p }.into()),
        });
    }
    let mut rig = Rig {
        mesh: Mesh {
            vertices: file.mesh.vertices.iter().map(|&v| Vec3::from(v)).collect(),
            triangles: file.mesh.triangles,
        },
        skeleton: Skeleton {
            joints: file.skeleton.joints.iter().map(|&j| Vec3::from(j)).collect(),
            parents,
        },
        skin: file.skin.map(|s| SkinWeights {
            joint_count,
            entries: s.entries,
        }),
    };
    rig.validate_lenient()?;
    Ok(rig)
}

fn rig_to_file(rig: &Rig) -> RigFile {
    RigFile {
        version: RIG_FILE_VERSION,
        mesh: MeshFile {
            vertices: rig.mesh.vertices.iter().map(point_out).collect(),
            triangles: rig.mesh.triangles.clone(),
        },
        skeleton: SkeletonFile {
            joints: rig.skeleton.joints.iter().map(point_out).collect(),
            parents: rig
                .skeleton
                .parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
        },
        skin: rig.skin.as_ref().map(|s| SkinFile {
            entries: s
                .entries
                .iter()
                .map(|row| row.iter().map(|&(j, w)| (j, round_sig9(w))).collect())
                .collect(),
        }),
    }
}

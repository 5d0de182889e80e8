//! Rigged meshes as fields over sparse voxels.
//!
//! The crate covers the deterministic half of a field-based rigging
//! pipeline:
//!
//! * [`rig`]: meshes, skeletons, sparse skin weights and the rig JSON format.
//! * [`voxel`]: surface and bone rasterization onto sparse voxel grids.
//! * [`skeleton_field`]: the confidence-weighted nearest-joint/parent vector
//!   field, and its decoding back to a skeleton by mean-shift clustering.
//! * [`skin_field`]: joint-count-agnostic skin embeddings and their
//!   compatibility-softmax decoder.
//! * [`bvh`]: closest-point queries and barycentric skin transfer.
//! * [`animate`]: forward kinematics, linear blend skinning, pose jitter.
//! * [`metrics`]: Chamfer, Wasserstein and Gromov–Wasserstein skeleton
//!   metrics, skin metrics and ICP alignment.
//! * [`syngen`]: procedural rigs and controlled corruptions for testing.

pub mod animate;
pub mod bvh;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod rig;
pub mod skeleton_field;
pub mod skin_field;
pub mod syngen;
pub mod voxel;

pub use error::{Error, ErrorKind, Result, RigError};
pub use rig::{load_rig, normalize_rig, save_rig, Mesh, Rig, Skeleton, SkinWeights, Vec3};

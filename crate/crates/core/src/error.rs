use std::io;

use thiserror::Error;

/// Violations of the rig data model invariants.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RigError {
    #[error("triangle {triangle} references vertex {index}, but the mesh has {vertex_count} vertices")]
    TriangleIndex {
        triangle: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("triangle {triangle} is degenerate (all three indices equal)")]
    DegenerateTriangle { triangle: usize },
    #[error("non-finite coordinate in {what} {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("parents has {parents} entries but there are {joints} joints")]
    ParentsLength { joints: usize, parents: usize },
    #[error("joint {joint} has out-of-range parent {parent}")]
    ParentIndex { joint: usize, parent: i64 },
    #[error("joint {joint} is its own parent")]
    SelfParent { joint: usize },
    #[error("parent links contain a cycle through joint {joint}")]
    Cycle { joint: usize },
    #[error("skin has {found} vertex entries but the mesh has {expected} vertices")]
    SkinVertexCount { expected: usize, found: usize },
    #[error("skin joint count {skin} does not match skeleton joint count {skeleton}")]
    SkinJointCount { skin: usize, skeleton: usize },
    #[error("vertex {vertex} references joint {joint} (joint count {joint_count})")]
    SkinJointIndex {
        vertex: usize,
        joint: usize,
        joint_count: usize,
    },
    #[error("vertex {vertex} has weight {weight} outside [0, 1]")]
    WeightRange { vertex: usize, weight: f64 },
    #[error("vertex {vertex} weights sum to {sum}, not 1")]
    WeightSum { vertex: usize, sum: f64 },
    #[error("unsupported rig file version {0}")]
    Version(u32),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid rig: {0}")]
    Rig(#[from] RigError),
    /// An operation was called with arguments outside its domain.
    #[error("{0}")]
    Precondition(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid BVH cache: {0}")]
    Cache(String),
}

/// Coarse classification used by the command line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Validation,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) => ErrorKind::Io,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Parse(_) | Error::Rig(_) | Error::Precondition(_) | Error::Cache(_) => {
                ErrorKind::Validation
            }
        }
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

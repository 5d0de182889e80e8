//! Binary cache format for a built hierarchy.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "RBVH" | version u32 | mesh hash u64 | node count u32
//! per node: min f64x3 | max f64x3 | tag u32 (0 inner, 1 leaf) | a u32 | b u32
//! triangle count u32 | permutation u32 x triangle count
//! ```
//!
//! Inner nodes store child indices in `a`/`b`; leaves store a start offset and
//! count into the permutation.

use std::path::Path;

use super::{mesh_hash, Node, NodeKind, TriangleBvh};
use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::rig::{Mesh, Vec3};

pub const CACHE_MAGIC: &[u8; 4] = b"RBVH";
pub const CACHE_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Cache("truncated cache file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vec3(&mut self) -> Result<Vec3> {
        let mut v = Vec3::zeros();
        for i in 0..3 {
            v[i] = f64::from_bits(self.u64()?);
        }
        Ok(v)
    }
}

impl TriangleBvh {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.nodes.len() * 60 + self.order.len() * 4);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.mesh_hash.to_le_bytes());
        out.extend_from_slice(&(self.nodes.len() as u32).to_le_bytes());
        for node in &self.nodes {
            for v in [node.bounds.min, node.bounds.max] {
                for c in v.iter() {
                    out.extend_from_slice(&c.to_bits().to_le_bytes());
                }
            }
            let (tag, a, b) = match node.kind {
                NodeKind::Inner { left, right } => (0u32, left, right),
                NodeKind::Leaf { start, count } => (1u32, start, count),
            };
            for x in [tag, a, b] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.order.len() as u32).to_le_bytes());
        for t in &self.order {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    /// Restores a hierarchy for `mesh`, rejecting caches built from any other
    /// mesh.
    pub fn from_bytes(bytes: &[u8], mesh: &Mesh) -> Result<TriangleBvh> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CACHE_MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Cache(format!("unsupported cache version {version}")));
        }
        let hash = r.u64()?;
        if hash != mesh_hash(mesh) {
            return Err(Error::Cache("cache was built for a different mesh".into()));
        }
        let node_count = r.u32()? as usize;
        if node_count == 0 || node_count > bytes.len() / 60 {
            return Err(Error::Cache(format!("implausible node count {node_count}")));
        }
        let mut nodes = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            let min = r.vec3()?;
            let max = r.vec3()?;
            let (tag, a, b) = (r.u32()?, r.u32()?, r.u32()?);
            let kind = match tag {
                0 => NodeKind::Inner { left: a, right: b },
                1 => NodeKind::Leaf { start: a, count: b },
                _ => return Err(Error::Cache(format!("unknown node tag {tag}"))),
            };
            nodes.push(Node {
                bounds: Aabb { min, max },
                kind,
            });
        }
        let tri_count = r.u32()? as usize;
        if tri_count != mesh.triangles.len() {
            return Err(Error::Cache("triangle count does not match mesh".into()));
        }
        let mut order = Vec::with_capacity(tri_count);
        for _ in 0..tri_count {
            order.push(r.u32()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Cache("trailing bytes after cache".into()));
        }
        for node in &nodes {
            let ok = match node.kind {
                NodeKind::Inner { left, right } => {
                    (left as usize) < node_count && (right as usize) < node_count
                }
                NodeKind::Leaf { start, count } => {
                    (start as usize).saturating_add(count as usize) <= tri_count
                }
            };
            if !ok {
                return Err(Error::Cache("node references out of range".into()));
            }
        }
        if order.iter().any(|&t| t as usize >= tri_count) {
            return Err(Error::Cache("permutation index out of range".into()));
        }
        let bvh = TriangleBvh {
            nodes,
            order,
            triangles: (0..tri_count).map(|t| mesh.triangle(t)).collect(),
            mesh_hash: hash,
        };
        bvh.check_invariants()?;
        Ok(bvh)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, mesh: &Mesh) -> Result<TriangleBvh> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, mesh)
    }
}

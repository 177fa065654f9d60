//! The 13-dimensional per-face input descriptor.
//!
//! Layout: `[area, angle0, angle1, angle2, dot0, dot1, dot2, cx, cy, cz, nx, ny, nz]`
//! where `dot_k` is the face normal against the vertex normal of corner `k`.
//! The first seven entries are the shape part, the last six the pose part.

use crate::{HalfEdgeMesh, Result};

pub const FEATURE_DIM: usize = 13;
pub const SHAPE_DIM: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct MeshFaceFeatures {
    pub rows: Vec<[f64; FEATURE_DIM]>,
}

impl MeshFaceFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row-major flat copy, `len() * 13` values.
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.iter().copied()).collect()
    }
}

pub fn face_features_13(mesh: &HalfEdgeMesh) -> Result<MeshFaceFeatures> {
    let vertex_normals = mesh.vertex_normals()?;
    let rows = (0..mesh.num_faces())
        .map(|f| {
            let g = mesh.face_geometry(f)?;
            let corners = mesh.faces()[f];
            let mut row = [0.0; FEATURE_DIM];
            row[0] = g.area;
            row[1..4].copy_from_slice(&g.angles);
            for k in 0..3 {
                row[4 + k] = g.normal.dot(&vertex_normals[corners[k]]);
            }
            row[7..10].copy_from_slice(g.centroid.as_slice());
            row[10..13].copy_from_slice(g.normal.as_slice());
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeshFaceFeatures { rows })
}

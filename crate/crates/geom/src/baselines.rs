//! Classical subdivision schemes: midpoint, Loop and modified Butterfly.
//!
//! All three share the connectivity of [`subdivide_connectivity`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::lod::subdivide::subdivide_connectivity;
use crate::{HalfEdgeMesh, MeshError, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubdivisionScheme {
    Midpoint,
    Loop,
    Butterfly,
}

impl SubdivisionScheme {
    pub const ALL: [SubdivisionScheme; 3] = [Self::Midpoint, Self::Loop, Self::Butterfly];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Midpoint => "midpoint",
            Self::Loop => "loop",
            Self::Butterfly => "butterfly",
        }
    }

    pub fn apply(&self, mesh: &HalfEdgeMesh, levels: usize) -> Result<HalfEdgeMesh> {
        match self {
            Self::Midpoint => midpoint_subdivide(mesh, levels),
            Self::Loop => loop_subdivide(mesh, levels),
            Self::Butterfly => butterfly_subdivide(mesh, levels),
        }
    }
}

impl std::str::FromStr for SubdivisionScheme {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| MeshError::InvalidArgument(format!("unknown subdivision scheme '{s}'")))
    }
}

fn check_levels(levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(MeshError::InvalidArgument("subdivision needs at least one level".into()));
    }
    Ok(())
}

fn require_closed(mesh: &HalfEdgeMesh) -> Result<()> {
    for h in 0..3 * mesh.num_faces() {
        if mesh.twin(h).is_none() {
            return Err(MeshError::BoundaryEdge(mesh.origin(h), mesh.dest(h)));
        }
    }
    Ok(())
}

/// Refine with `edge_point(mesh, a, b)` for new vertices and `vertex_point`
/// for old ones.
fn refine(
    mesh: &HalfEdgeMesh,
    edge_point: impl Fn(&HalfEdgeMesh, usize, usize) -> Result<Vec3>,
    vertex_point: impl Fn(&HalfEdgeMesh, usize) -> Result<Vec3>,
) -> Result<HalfEdgeMesh> {
    let s = subdivide_connectivity(mesh.faces(), mesh.num_vertices());
    let mut positions = (0..mesh.num_vertices())
        .map(|v| vertex_point(mesh, v))
        .collect::<Result<Vec<_>>>()?;
    for &[a, b] in &s.midpoints {
        positions.push(edge_point(mesh, a, b)?);
    }
    HalfEdgeMesh::new(positions, s.faces)
}

pub fn midpoint_subdivide(mesh: &HalfEdgeMesh, levels: usize) -> Result<HalfEdgeMesh> {
    check_levels(levels)?;
    let mut m = mesh.clone();
    for _ in 0..levels {
        m = refine(&m, |m, a, b| Ok((m.position(a) + m.position(b)) * 0.5), |m, v| Ok(m.position(v)))?;
    }
    Ok(m)
}

/// Half-edge from `a` to `b`.
fn halfedge(mesh: &HalfEdgeMesh, a: usize, b: usize) -> Result<usize> {
    mesh.outgoing(a)
        .and_then(|hs| hs.into_iter().find(|&h| mesh.dest(h) == b))
        .ok_or(MeshError::BoundaryEdge(a, b))
}

fn ring(mesh: &HalfEdgeMesh, v: usize) -> Result<Vec<usize>> {
    mesh.vertex_ring(v)
        .ok_or_else(|| MeshError::Invalid(format!("vertex {v} is on a boundary or isolated")))
}

pub fn loop_beta(n: usize) -> f64 {
    let n = n as f64;
    let c = 3.0 / 8.0 + 0.25 * (2.0 * PI / n).cos();
    (5.0 / 8.0 - c * c) / n
}

pub fn loop_subdivide(mesh: &HalfEdgeMesh, levels: usize) -> Result<HalfEdgeMesh> {
    check_levels(levels)?;
    let mut m = mesh.clone();
    for _ in 0..levels {
        require_closed(&m)?;
        m = refine(
            &m,
            |m, a, b| {
                let h = halfedge(m, a, b)?;
                let t = m.twin(h).ok_or(MeshError::BoundaryEdge(a, b))?;
                let c = m.dest(m.next(h));
                let d = m.dest(m.next(t));
                Ok((m.position(a) + m.position(b)) * 0.375 + (m.position(c) + m.position(d)) * 0.125)
            },
            |m, v| {
                let r = ring(m, v)?;
                let beta = loop_beta(r.len());
                let sum: Vec3 = r.iter().map(|&u| m.position(u)).sum();
                Ok(m.position(v) * (1.0 - r.len() as f64 * beta) + sum * beta)
            },
        )?;
    }
    Ok(m)
}

/// Weights of the one-ring stencil around an extraordinary vertex of
/// valence `k`, starting at the edge's other endpoint. The centre weight
/// is `3/4`.
pub fn butterfly_ring_weights(k: usize) -> Vec<f64> {
    match k {
        3 => vec![5.0 / 12.0, -1.0 / 12.0, -1.0 / 12.0],
        4 => vec![3.0 / 8.0, 0.0, -1.0 / 8.0, 0.0],
        _ => (0..k)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / k as f64;
                (0.25 + t.cos() + 0.5 * (2.0 * t).cos()) / k as f64
            })
            .collect(),
    }
}

fn extraordinary_stencil(m: &HalfEdgeMesh, v: usize, other: usize) -> Result<Vec3> {
    let r = ring(m, v)?;
    let start = r
        .iter()
        .position(|&u| u == other)
        .ok_or(MeshError::BoundaryEdge(v, other))?;
    let w = butterfly_ring_weights(r.len());
    let mut p = m.position(v) * 0.75;
    for j in 0..r.len() {
        p += m.position(r[(start + j) % r.len()]) * w[j];
    }
    Ok(p)
}

/// Vertex across the edge `h` from the face of `h`.
fn across(m: &HalfEdgeMesh, h: usize) -> Result<usize> {
    let t = m.twin(h).ok_or(MeshError::BoundaryEdge(m.origin(h), m.dest(h)))?;
    Ok(m.dest(m.next(t)))
}

/// New vertex on edge `(a, b)` under the modified Butterfly rule.
pub fn butterfly_edge_point(m: &HalfEdgeMesh, a: usize, b: usize) -> Result<Vec3> {
    let ka = ring(m, a)?.len();
    let kb = ring(m, b)?.len();
    match (ka == 6, kb == 6) {
        (true, true) => {
            let h = halfedge(m, a, b)?;
            let t = m.twin(h).ok_or(MeshError::BoundaryEdge(a, b))?;
            let c = m.dest(m.next(h));
            let d = m.dest(m.next(t));
            let outer = [
                across(m, m.next(h))?,
                across(m, m.prev(h))?,
                across(m, m.next(t))?,
                across(m, m.prev(t))?,
            ];
            let mut p = (m.position(a) + m.position(b)) * 0.5 + (m.position(c) + m.position(d)) * 0.125;
            for o in outer {
                p -= m.position(o) / 16.0;
            }
            Ok(p)
        }
        (false, true) => extraordinary_stencil(m, a, b),
        (true, false) => extraordinary_stencil(m, b, a),
        (false, false) => Ok((extraordinary_stencil(m, a, b)? + extraordinary_stencil(m, b, a)?) * 0.5),
    }
}

pub fn butterfly_subdivide(mesh: &HalfEdgeMesh, levels: usize) -> Result<HalfEdgeMesh> {
    check_levels(levels)?;
    let mut m = mesh.clone();
    for _ in 0..levels {
        require_closed(&m)?;
        m = refine(&m, butterfly_edge_point, |m, v| Ok(m.position(v)))?;
    }
    Ok(m)
}

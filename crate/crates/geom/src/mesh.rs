//! Indexed triangle mesh with implicit half-edge connectivity.
//!
//! Half-edge `3 * f + k` runs from corner `k` to corner `k + 1` of face `f`,
//! so `next`, `prev`, `face` and `origin` are arithmetic. Only twins are
//! stored. Meshes with boundaries or non-manifold edges can still be built
//! (so they can be validated); such half-edges simply have no twin.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{MeshError, Result, Vec3};

const NO_TWIN: usize = usize::MAX;

/// Relative (to squared bbox diagonal) area below which a face is degenerate.
pub const DEGENERATE_AREA_RATIO: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct HalfEdgeMesh {
    positions: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    twins: Vec<usize>,
    vertex_halfedge: Vec<usize>,
    edge_face_counts: HashMap<(usize, usize), usize>,
    directed_duplicates: usize,
}

/// A point on a mesh expressed as a face and barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub face: usize,
    pub bary: [f64; 3],
}

impl SurfacePoint {
    pub fn new(face: usize, bary: [f64; 3]) -> Self {
        Self { face, bary }
    }

    pub fn corner(face: usize, k: usize) -> Self {
        let mut bary = [0.0; 3];
        bary[k] = 1.0;
        Self { face, bary }
    }

    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.bary.iter().sum();
        self.bary.iter().all(|&b| b >= -1e-9) && (sum - 1.0).abs() <= 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub is_edge_manifold: bool,
    pub is_watertight: bool,
    pub connected_component_count: usize,
    pub degenerate_face_count: usize,
    /// Vertices whose incident faces do not form a single fan.
    pub non_manifold_vertex_count: usize,
}

impl ValidationReport {
    /// True when the mesh is a single closed manifold without degenerate faces.
    pub fn is_valid(&self) -> bool {
        self.is_edge_manifold
            && self.is_watertight
            && self.connected_component_count == 1
            && self.degenerate_face_count == 0
            && self.non_manifold_vertex_count == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeometry {
    pub area: f64,
    /// Interior angle at each corner, radians.
    pub angles: [f64; 3],
    pub normal: Vec3,
    pub centroid: Vec3,
}

/// Uniform scale followed by translation: `p' = scale * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + Vec3::from(self.translation)
    }
}

impl HalfEdgeMesh {
    pub fn new(positions: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = positions.len();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: v,
                        count: n,
                    });
                }
            }
        }

        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
        let mut directed_duplicates = 0;
        let mut edge_face_counts: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if directed.insert((a, b), 3 * fi + k).is_some() {
                    directed_duplicates += 1;
                }
                *edge_face_counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }

        let mut twins = vec![NO_TWIN; faces.len() * 3];
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if edge_face_counts[&(a.min(b), a.max(b))] != 2 {
                    continue;
                }
                if let Some(&h) = directed.get(&(b, a)) {
                    twins[3 * fi + k] = h;
                }
            }
        }

        let mut vertex_halfedge = vec![NO_TWIN; n];
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let h = 3 * fi + k;
                let v = f[k];
                // Prefer a boundary outgoing half-edge so fan walks start
                // at the boundary when there is one.
                if vertex_halfedge[v] == NO_TWIN
                    || (twins[h] == NO_TWIN && twins[vertex_halfedge[v]] != NO_TWIN)
                {
                    vertex_halfedge[v] = h;
                }
            }
        }

        Ok(Self {
            positions,
            faces,
            twins,
            vertex_halfedge,
            edge_face_counts,
            directed_duplicates,
        })
    }

    fn prev_of(h: usize) -> usize {
        3 * (h / 3) + (h % 3 + 2) % 3
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_face_counts.len()
    }

    pub fn position(&self, v: usize) -> Vec3 {
        self.positions[v]
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.positions[a], self.positions[b], self.positions[c]]
    }

    pub fn next(&self, h: usize) -> usize {
        3 * (h / 3) + (h % 3 + 1) % 3
    }

    pub fn prev(&self, h: usize) -> usize {
        Self::prev_of(h)
    }

    pub fn face_of(&self, h: usize) -> usize {
        h / 3
    }

    pub fn origin(&self, h: usize) -> usize {
        self.faces[h / 3][h % 3]
    }

    pub fn dest(&self, h: usize) -> usize {
        self.faces[h / 3][(h % 3 + 1) % 3]
    }

    pub fn twin(&self, h: usize) -> Option<usize> {
        let t = self.twins[h];
        (t != NO_TWIN).then_some(t)
    }

    /// Face across the edge opposite corner `k` of face `f`.
    pub fn opposite_face(&self, f: usize, k: usize) -> Option<usize> {
        self.twin(3 * f + (k + 1) % 3).map(|t| t / 3)
    }

    /// Outgoing half-edges of `v` in fan order. `None` if the fan hits a
    /// boundary or the vertex is isolated.
    pub fn outgoing(&self, v: usize) -> Option<Vec<usize>> {
        let start = self.vertex_halfedge[v];
        if start == NO_TWIN {
            return None;
        }
        let mut out = Vec::with_capacity(8);
        let mut h = start;
        loop {
            out.push(h);
            let t = self.twin(self.prev(h))?;
            h = t;
            if h == start {
                return Some(out);
            }
            if out.len() > self.twins.len() {
                return None;
            }
        }
    }

    /// One-ring neighbours of `v` in fan order (closed meshes only).
    pub fn vertex_ring(&self, v: usize) -> Option<Vec<usize>> {
        self.outgoing(v)
            .map(|hs| hs.into_iter().map(|h| self.dest(h)).collect())
    }

    /// Undirected edges as `(min, max)` pairs in lexicographic order.
    pub fn sorted_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<_> = self.edge_face_counts.keys().copied().collect();
        edges.sort_unstable();
        edges
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        bbox_of(&self.positions)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.num_faces()).map(|f| self.face_area(f)).sum()
    }

    pub fn point(&self, sp: &SurfacePoint) -> Vec3 {
        let [a, b, c] = self.triangle(sp.face);
        a * sp.bary[0] + b * sp.bary[1] + c * sp.bary[2]
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn validate(&self) -> ValidationReport {
        let is_edge_manifold = self.directed_duplicates == 0
            && self.edge_face_counts.values().all(|&c| c <= 2);
        let is_watertight =
            !self.faces.is_empty() && self.edge_face_counts.values().all(|&c| c == 2);

        let mut uf = UnionFind::new(self.positions.len());
        let mut used = vec![false; self.positions.len()];
        for f in &self.faces {
            uf.union(f[0], f[1]);
            uf.union(f[1], f[2]);
            for &v in f {
                used[v] = true;
            }
        }
        let mut roots: Vec<usize> = (0..self.positions.len())
            .filter(|&v| used[v])
            .map(|v| uf.find(v))
            .collect();
        roots.sort_unstable();
        roots.dedup();

        let diag = self.bbox_diagonal();
        let threshold = DEGENERATE_AREA_RATIO * diag * diag;
        let degenerate_face_count = (0..self.num_faces())
            .filter(|&f| !(self.face_area(f) >= threshold) || threshold == 0.0)
            .count();

        let mut non_manifold_vertex_count = 0;
        if is_edge_manifold {
            let mut incident = vec![0usize; self.positions.len()];
            for f in &self.faces {
                for &v in f {
                    incident[v] += 1;
                }
            }
            for v in 0..self.positions.len() {
                if incident[v] == 0 {
                    continue;
                }
                let fan = self.fan_size(v);
                if fan != incident[v] {
                    non_manifold_vertex_count += 1;
                }
            }
        }

        ValidationReport {
            is_edge_manifold,
            is_watertight,
            connected_component_count: roots.len(),
            degenerate_face_count,
            non_manifold_vertex_count,
        }
    }

    // Number of faces reachable by walking the fan from the stored half-edge.
    fn fan_size(&self, v: usize) -> usize {
        let start = self.vertex_halfedge[v];
        let mut count = 0;
        let mut h = start;
        loop {
            count += 1;
            match self.twin(self.prev(h)) {
                Some(t) if t != start => h = t,
                _ => break,
            }
            if count > self.faces.len() {
                break;
            }
        }
        count
    }

    pub fn face_geometry(&self, f: usize) -> Result<FaceGeometry> {
        let tri = self.triangle(f);
        triangle_geometry(&tri).ok_or(MeshError::DegenerateFace(f))
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Result<Vec<Vec3>> {
        let mut acc = vec![Vec3::zeros(); self.positions.len()];
        for f in &self.faces {
            let (a, b, c) = (self.positions[f[0]], self.positions[f[1]], self.positions[f[2]]);
            let n = (b - a).cross(&(c - a));
            for &v in f {
                acc[v] += n;
            }
        }
        acc.into_iter()
            .enumerate()
            .map(|(v, n)| {
                let len = n.norm();
                if len > 0.0 && len.is_finite() {
                    Ok(n / len)
                } else {
                    Err(MeshError::ZeroNormal(v))
                }
            })
            .collect()
    }

    /// Scale uniformly so the largest bbox extent is 1 and center the bbox at the origin.
    pub fn normalize_to_unit_cube(&self) -> Result<(HalfEdgeMesh, Similarity)> {
        if self.positions.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        let (lo, hi) = self.bbox();
        let extent = (hi - lo).max();
        if !(extent > 0.0) {
            return Err(MeshError::ZeroExtent);
        }
        let scale = 1.0 / extent;
        let center = (lo + hi) * 0.5;
        let t = -center * scale;
        let transform = Similarity {
            scale,
            translation: [t.x, t.y, t.z],
        };
        Ok((self.transformed(|p| transform.apply(p)), transform))
    }

    /// Copy of the mesh with every position mapped through `f`.
    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> HalfEdgeMesh {
        let mut out = self.clone();
        for p in out.positions.iter_mut() {
            *p = f(p);
        }
        out
    }

    pub fn with_positions(&self, positions: Vec<Vec3>) -> Result<HalfEdgeMesh> {
        if positions.len() != self.positions.len() {
            return Err(MeshError::InvalidArgument(format!(
                "expected {} positions, got {}",
                self.positions.len(),
                positions.len()
            )));
        }
        let mut out = self.clone();
        out.positions = positions;
        Ok(out)
    }

    /// Euler characteristic V - E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.positions.len()];
        for f in &self.faces {
            for &v in f {
                used[v] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.num_edges() as i64 + self.num_faces() as i64
    }

    /// Genus of a closed connected orientable mesh.
    pub fn genus(&self) -> i64 {
        (2 - self.euler_characteristic()) / 2
    }
}

pub fn bbox_of(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// Area, corner angles, unit normal and centroid of a triangle.
pub fn triangle_geometry(tri: &[Vec3; 3]) -> Option<FaceGeometry> {
    let cross = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let twice_area = cross.norm();
    if !(twice_area > 0.0) || !twice_area.is_finite() {
        return None;
    }
    let mut angles = [0.0; 3];
    for (k, angle) in angles.iter_mut().enumerate() {
        let u = tri[(k + 1) % 3] - tri[k];
        let w = tri[(k + 2) % 3] - tri[k];
        *angle = twice_area.atan2(u.dot(&w));
    }
    Some(FaceGeometry {
        area: 0.5 * twice_area,
        angles,
        normal: cross / twice_area,
        centroid: (tri[0] + tri[1] + tri[2]) / 3.0,
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

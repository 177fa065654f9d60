//! The level-of-detail hierarchy `M^0 .. M^L`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::decimate::quadric_decimate;
use super::subdivide::{sorted_edges, subdivide_connectivity};
use super::surface_map::{MapMethod, SurfaceMap};
use crate::{obj, HalfEdgeMesh, MeshError, Result, SurfacePoint, Vec3};

pub const DEFAULT_TARGET_FACES: usize = 400;
pub const DEFAULT_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyOptions {
    pub target_faces: usize,
    pub levels: usize,
    pub seed: u64,
    pub jitter: f64,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        Self {
            target_faces: DEFAULT_TARGET_FACES,
            levels: DEFAULT_LEVELS,
            seed: 0,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LodLevel {
    pub positions: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl LodLevel {
    pub fn mesh(&self) -> Result<HalfEdgeMesh> {
        HalfEdgeMesh::new(self.positions.clone(), self.faces.clone())
    }
}

#[derive(Debug, Clone)]
pub struct LodHierarchy {
    pub levels: Vec<LodLevel>,
    /// `parents[i][j]` is the level-`i` parent of level-`i+1` face `j`.
    pub parents: Vec<Vec<usize>>,
    /// `midpoints[i]` lists the endpoints of every vertex added at level `i+1`.
    pub midpoints: Vec<Vec<[usize; 2]>>,
    /// Coarse-domain location of every finest-level vertex; coarser levels
    /// use a prefix.
    pub coarse_points: Vec<SurfacePoint>,
    pub surface_map: Option<SurfaceMap>,
    pub method: MapMethod,
    pub options: HierarchyOptions,
}

impl LodHierarchy {
    /// Number of subdivision levels `L`.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, i: usize) -> &LodLevel {
        &self.levels[i]
    }

    pub fn finest(&self) -> &LodLevel {
        self.levels.last().expect("at least one level")
    }

    /// Structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for i in 1..self.levels.len() {
            let (prev, cur) = (&self.levels[i - 1], &self.levels[i]);
            if cur.faces.len() != 4 * prev.faces.len() {
                return Err(format!("level {i}: face count {} != 4 * {}", cur.faces.len(), prev.faces.len()));
            }
            let e = sorted_edges(&prev.faces).len();
            if cur.positions.len() != prev.positions.len() + e {
                return Err(format!("level {i}: vertex count mismatch"));
            }
            let s = subdivide_connectivity(&prev.faces, prev.positions.len());
            if s.faces != cur.faces || s.parent != self.parents[i - 1] || s.midpoints != self.midpoints[i - 1] {
                return Err(format!("level {i}: connectivity is not the midpoint split"));
            }
            if cur.positions[..prev.positions.len()] != prev.positions[..] {
                return Err(format!("level {i}: coarser vertices moved"));
            }
        }
        if self.coarse_points.len() != self.finest().positions.len() {
            return Err("coarse point table has the wrong length".into());
        }
        Ok(())
    }
}

/// Coarse-domain points of all vertices of `levels` subdivisions of `faces`,
/// together with the per-level connectivity.
pub fn coarse_domain_points(
    faces: &[[usize; 3]],
    vertex_count: usize,
    levels: usize,
) -> (Vec<Vec<[usize; 3]>>, Vec<Vec<usize>>, Vec<Vec<[usize; 2]>>, Vec<SurfacePoint>) {
    let mut points = vec![None; vertex_count];
    for (f, tri) in faces.iter().enumerate() {
        for (k, &v) in tri.iter().enumerate() {
            if points[v].is_none() {
                points[v] = Some(SurfacePoint::corner(f, k));
            }
        }
    }
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    // Per face: coarse ancestor and corner barycentrics relative to it.
    let mut frames: Vec<(usize, [[f64; 3]; 3])> = (0..faces.len()).map(|f| (f, identity)).collect();
    let mut all_faces = vec![faces.to_vec()];
    let mut parents = Vec::new();
    let mut mids = Vec::new();
    let mut n = vertex_count;
    for _ in 0..levels {
        let cur = all_faces.last().expect("level");
        let s = subdivide_connectivity(cur, n);
        points.resize(s.vertex_count(), None);
        let avg = |a: &[f64; 3], b: &[f64; 3]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
        let mut next_frames = Vec::with_capacity(s.faces.len());
        for (p, tri) in cur.iter().enumerate() {
            let (anc, c) = frames[p];
            let m_ab = avg(&c[0], &c[1]);
            let m_bc = avg(&c[1], &c[2]);
            let m_ca = avg(&c[2], &c[0]);
            for (k, bary) in [(0, 1), (1, 2), (2, 0)].iter().zip([m_ab, m_bc, m_ca]) {
                let (a, b) = (tri[k.0], tri[k.1]);
                let v = n + super::subdivide::edge_index(&s.midpoints, a, b).expect("edge");
                if points[v].is_none() {
                    points[v] = Some(SurfacePoint::new(anc, bary));
                }
            }
            next_frames.push((anc, [c[0], m_ab, m_ca]));
            next_frames.push((anc, [m_ab, c[1], m_bc]));
            next_frames.push((anc, [m_ca, m_bc, c[2]]));
            next_frames.push((anc, [m_ab, m_bc, m_ca]));
        }
        frames = next_frames;
        n = s.vertex_count();
        parents.push(s.parent);
        mids.push(s.midpoints);
        all_faces.push(s.faces);
    }
    let points = points
        .into_iter()
        .map(|p| p.unwrap_or(SurfacePoint::new(0, [1.0, 0.0, 0.0])))
        .collect();
    (all_faces, parents, mids, points)
}

/// Decimate, parameterize and subdivide `mesh` into `options.levels + 1`
/// levels. Every vertex is placed on `mesh` through the surface map.
pub fn build_hierarchy(mesh: &HalfEdgeMesh, options: &HierarchyOptions) -> Result<LodHierarchy> {
    let report = mesh.validate();
    if !report.is_valid() {
        return Err(MeshError::Invalid(format!("input mesh fails validation: {report:?}")));
    }
    let target = options.target_faces.min(mesh.num_faces());
    let dec = quadric_decimate(mesh, target, options.seed, options.jitter)?;
    let map = SurfaceMap::build(mesh, &dec);
    let coarse = &dec.coarse;
    let (all_faces, parents, midpoints, coarse_points) =
        coarse_domain_points(coarse.faces(), coarse.num_vertices(), options.levels);
    let finest: Vec<Vec3> = coarse_points
        .iter()
        .map(|p| mesh.point(&map.map_to_original(p)))
        .collect();
    let mut levels = Vec::with_capacity(all_faces.len());
    for faces in all_faces {
        let nv = faces.iter().flatten().max().map_or(0, |&m| m + 1);
        levels.push(LodLevel {
            positions: finest[..nv].to_vec(),
            faces,
        });
    }
    if map.fallback_count() > 0 {
        log::warn!("{} collapses used projection fallback", map.fallback_count());
    }
    Ok(LodHierarchy {
        levels,
        parents,
        midpoints,
        coarse_points,
        method: map.method,
        surface_map: Some(map),
        options: HierarchyOptions {
            target_faces: target,
            ..*options
        },
    })
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    options: HierarchyOptions,
    method: MapMethod,
    parents: Vec<Vec<usize>>,
    midpoints: Vec<Vec<[usize; 2]>>,
    coarse_faces: Vec<usize>,
    coarse_barycentrics: Vec<[f64; 3]>,
}

const SIDECAR: &str = "hierarchy.json";

/// Write `level_k.obj` files and the JSON sidecar into `dir`.
pub fn save_hierarchy(h: &LodHierarchy, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, level) in h.levels.iter().enumerate() {
        obj::save_obj(&level.mesh()?, &dir.join(format!("level_{k}.obj")))?;
    }
    let sidecar = Sidecar {
        options: h.options,
        method: h.method,
        parents: h.parents.clone(),
        midpoints: h.midpoints.clone(),
        coarse_faces: h.coarse_points.iter().map(|p| p.face).collect(),
        coarse_barycentrics: h.coarse_points.iter().map(|p| p.bary).collect(),
    };
    std::fs::write(dir.join(SIDECAR), serde_json::to_vec(&sidecar)?)?;
    Ok(())
}

/// Read a hierarchy written by [`save_hierarchy`]. The surface map is not
/// stored, so `surface_map` is `None`.
pub fn load_hierarchy(dir: &Path) -> Result<LodHierarchy> {
    let sidecar: Sidecar = serde_json::from_slice(&std::fs::read(dir.join(SIDECAR))?)?;
    let mut levels = Vec::new();
    for k in 0..=sidecar.options.levels {
        let m = obj::load_obj(&dir.join(format!("level_{k}.obj")))?;
        levels.push(LodLevel {
            positions: m.positions().to_vec(),
            faces: m.faces().to_vec(),
        });
    }
    if sidecar.coarse_faces.len() != sidecar.coarse_barycentrics.len() {
        return Err(MeshError::Cache("coarse point arrays differ in length".into()));
    }
    // Restore the prefix property exactly after text round-off.
    let finest = levels.last().expect("level").positions.clone();
    for l in &mut levels {
        let n = l.positions.len();
        l.positions.copy_from_slice(&finest[..n]);
    }
    let h = LodHierarchy {
        levels,
        parents: sidecar.parents,
        midpoints: sidecar.midpoints,
        coarse_points: sidecar
            .coarse_faces
            .iter()
            .zip(&sidecar.coarse_barycentrics)
            .map(|(&f, &b)| SurfacePoint::new(f, b))
            .collect(),
        surface_map: None,
        method: sidecar.method,
        options: sidecar.options,
    };
    h.check_invariants().map_err(MeshError::Cache)?;
    Ok(h)
}

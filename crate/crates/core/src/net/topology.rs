//! Index arrays of a subdivision hierarchy: face adjacency, parent maps,
//! edges and the gathers built from them.

use std::collections::HashMap;
use std::sync::Arc;

use npmesh_geom::lod::{subdivide_connectivity, LodHierarchy};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone)]
pub struct LevelTopology {
    pub faces: Arc<Vec<[usize; 3]>>,
    pub vertex_count: usize,
    /// `adjacency[f][k]`: face across the edge opposite corner `k`.
    pub adjacency: Arc<Vec<[usize; 3]>>,
    /// Undirected edges in sorted order; edge `e` spawns vertex
    /// `vertex_count + e` on the next level.
    pub edges: Vec<[usize; 2]>,
    pub edge_ends: [Arc<Vec<usize>>; 2],
    /// The two faces sharing each edge, smaller index first.
    pub edge_faces: [Arc<Vec<usize>>; 2],
    /// Parent of every face on the coarser level (`None` at level 0).
    pub parent: Option<Arc<Vec<usize>>>,
    /// Per face: the face itself for the centre child, else the parent's
    /// neighbour across the edge opposite the child's corner.
    pub upsample_from: Option<[Arc<Vec<usize>>; 2]>,
}

impl LevelTopology {
    pub fn face_count(&self) -> usize {
        self.faces.len()
    }
}

/// Per-level topology for `M^0 .. M^L`.
#[derive(Debug, Clone)]
pub struct Topology {
    pub levels: Vec<LevelTopology>,
}

fn adjacency(faces: &[[usize; 3]]) -> Result<Vec<[usize; 3]>> {
    let mut owner: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
    for (f, t) in faces.iter().enumerate() {
        for k in 0..3 {
            if owner.insert((t[k], t[(k + 1) % 3]), f).is_some() {
                return Err(CoreError::Topology(format!("edge ({}, {}) is not manifold", t[k], t[(k + 1) % 3])));
            }
        }
    }
    faces
        .iter()
        .map(|t| {
            let mut row = [0; 3];
            for (k, slot) in row.iter_mut().enumerate() {
                let (a, b) = (t[(k + 1) % 3], t[(k + 2) % 3]);
                *slot = *owner
                    .get(&(b, a))
                    .ok_or_else(|| CoreError::Topology(format!("boundary edge ({a}, {b})")))?;
            }
            Ok(row)
        })
        .collect()
}

fn level(faces: Vec<[usize; 3]>, vertex_count: usize, parent: Option<Vec<usize>>, coarse_adj: Option<&[[usize; 3]]>) -> Result<LevelTopology> {
    let adjacency = adjacency(&faces)?;
    let edges = npmesh_geom::lod::subdivide::sorted_edges(&faces);
    let mut first: HashMap<[usize; 2], usize> = HashMap::with_capacity(edges.len());
    let mut pairs = vec![[usize::MAX; 2]; edges.len()];
    let index: HashMap<[usize; 2], usize> = edges.iter().enumerate().map(|(i, e)| (*e, i)).collect();
    for (f, t) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let key = [a.min(b), a.max(b)];
            let e = index[&key];
            match first.insert(key, f) {
                None => pairs[e][0] = f,
                Some(_) => pairs[e][1] = f,
            }
        }
    }
    let edge_faces = [0, 1].map(|s| Arc::new(pairs.iter().map(|p| p[s]).collect::<Vec<_>>()));
    let edge_ends = [0, 1].map(|s| Arc::new(edges.iter().map(|e| e[s]).collect::<Vec<_>>()));
    let upsample_from = match (&parent, coarse_adj) {
        (Some(par), Some(cadj)) => {
            let a: Vec<usize> = par.clone();
            let b: Vec<usize> = par
                .iter()
                .enumerate()
                .map(|(j, &p)| if j % 4 == 3 { p } else { cadj[p][j % 4] })
                .collect();
            Some([Arc::new(a), Arc::new(b)])
        }
        _ => None,
    };
    Ok(LevelTopology {
        faces: Arc::new(faces),
        vertex_count,
        adjacency: Arc::new(adjacency),
        edges,
        edge_ends,
        edge_faces,
        parent: parent.map(Arc::new),
        upsample_from,
    })
}

impl Topology {
    /// Subdivide `coarse_faces` `levels` times. The mesh must be closed
    /// and edge-manifold.
    pub fn new(coarse_faces: &[[usize; 3]], coarse_vertices: usize, levels: usize) -> Result<Self> {
        let mut out = vec![level(coarse_faces.to_vec(), coarse_vertices, None, None)?];
        for _ in 0..levels {
            let prev = out.last().expect("level 0");
            let s = subdivide_connectivity(&prev.faces, prev.vertex_count);
            let n = s.vertex_count();
            let next = level(s.faces, n, Some(s.parent), Some(&prev.adjacency))?;
            out.push(next);
        }
        Ok(Self { levels: out })
    }

    /// Topology of a hierarchy, checked against its stored connectivity.
    pub fn of_hierarchy(h: &LodHierarchy) -> Result<Self> {
        let t = Self::new(&h.levels[0].faces, h.levels[0].positions.len(), h.depth())?;
        for (i, (a, b)) in t.levels.iter().zip(&h.levels).enumerate() {
            if *a.faces != b.faces || a.vertex_count != b.positions.len() {
                return Err(CoreError::Topology(format!("level {i} connectivity differs from its subdivision")));
            }
        }
        Ok(t)
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, i: usize) -> &LevelTopology {
        &self.levels[i]
    }

    pub fn face_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.faces.len()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use npmesh_geom::shapes;

    #[test]
    fn octahedron_levels() {
        let m = shapes::octahedron();
        let t = Topology::new(m.faces(), m.num_vertices(), 2).unwrap();
        assert_eq!(t.face_counts(), vec![8, 32, 128]);
        assert_eq!(t.level(1).vertex_count, 6 + 12);
        for l in &t.levels {
            for (f, row) in l.adjacency.iter().enumerate() {
                for &g in row {
                    assert!(l.adjacency[g].contains(&f));
                }
            }
            for (e, [a, b]) in l.edges.iter().enumerate() {
                let (fa, fb) = (l.edge_faces[0][e], l.edge_faces[1][e]);
                assert!(fa < fb);
                assert!(l.faces[fa].contains(a) && l.faces[fa].contains(b));
                assert!(l.faces[fb].contains(a) && l.faces[fb].contains(b));
            }
        }
    }

    #[test]
    fn adjacency_matches_mesh() {
        let m = shapes::icosahedron();
        let t = Topology::new(m.faces(), m.num_vertices(), 0).unwrap();
        for f in 0..m.num_faces() {
            for k in 0..3 {
                assert_eq!(Some(t.level(0).adjacency[f][k]), m.opposite_face(f, k));
            }
        }
    }

    #[test]
    fn boundary_rejected() {
        let m = shapes::plane_grid(1.0, 2);
        assert!(matches!(Topology::new(m.faces(), m.num_vertices(), 1), Err(CoreError::Topology(_))));
    }
}

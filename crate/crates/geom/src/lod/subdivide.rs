//! Midpoint 1-to-4 connectivity refinement with fixed indexing.
//!
//! New vertices are appended after the old ones, one per undirected edge,
//! in lexicographic `(min, max)` edge order. Parent face `p = (a, b, c)`
//! yields children `4p .. 4p + 3`:
//! `(a, m_ab, m_ca)`, `(m_ab, b, m_bc)`, `(m_ca, m_bc, c)`, `(m_ab, m_bc, m_ca)`.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subdivision {
    pub faces: Vec<[usize; 3]>,
    /// Parent face of every child face.
    pub parent: Vec<usize>,
    /// Sorted endpoint pair of every new vertex, in vertex order.
    pub midpoints: Vec<[usize; 2]>,
    pub old_vertex_count: usize,
}

impl Subdivision {
    pub fn vertex_count(&self) -> usize {
        self.old_vertex_count + self.midpoints.len()
    }
}

/// Sorted unique undirected edges of a triangulation.
pub fn sorted_edges(faces: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut edges: Vec<[usize; 2]> = faces
        .iter()
        .flat_map(|f| (0..3).map(move |k| [f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3])]))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Index of `(a, b)` in a sorted edge list.
pub fn edge_index(edges: &[[usize; 2]], a: usize, b: usize) -> Option<usize> {
    edges.binary_search(&[a.min(b), a.max(b)]).ok()
}

pub fn subdivide_connectivity(faces: &[[usize; 3]], vertex_count: usize) -> Subdivision {
    let edges = sorted_edges(faces);
    let mid = |a: usize, b: usize| {
        vertex_count + edge_index(&edges, a, b).expect("edge of the triangulation")
    };
    let mut out = Vec::with_capacity(faces.len() * 4);
    let mut parent = Vec::with_capacity(faces.len() * 4);
    for (p, &[a, b, c]) in faces.iter().enumerate() {
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        out.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        parent.extend([p; 4]);
    }
    Subdivision {
        faces: out,
        parent,
        midpoints: edges,
        old_vertex_count: vertex_count,
    }
}

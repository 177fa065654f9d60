//! Quadric error edge-collapse decimation that records a local planar
//! parameterization of every collapse.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::flatten::{conformal_flatten, is_injective, tutte_circle, uniform_interior, Vec2};
use super::quadric::Quadric;
use crate::{HalfEdgeMesh, MeshError, Result, Vec3};

/// Faces of the decimated mesh may miss the target by this many.
pub const TARGET_SLACK: usize = 2;

/// One accepted edge collapse `removed -> kept`.
///
/// Patch vertex slots are `[kept, removed, ring...]`; `pre_faces` and
/// `post_faces` index those slots and carry the stable face id.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseRecord {
    pub kept: usize,
    pub removed: usize,
    pub placed: Vec3,
    pub cost: f64,
    pub vertices: Vec<usize>,
    pub pre_uv: Vec<Vec2>,
    /// Position of `kept` in the same chart after the collapse.
    pub kept_uv: Vec2,
    pub pre_faces: Vec<(usize, [usize; 3])>,
    pub post_faces: Vec<(usize, [usize; 3])>,
    /// 3D positions of the patch right after the collapse.
    pub post_positions: Vec<Vec3>,
    pub injective: bool,
}

impl CollapseRecord {
    /// Chart coordinate of a slot after the collapse.
    pub fn post_uv(&self, slot: usize) -> Vec2 {
        if slot == 0 {
            self.kept_uv
        } else {
            self.pre_uv[slot]
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decimation {
    pub coarse: HalfEdgeMesh,
    pub records: Vec<CollapseRecord>,
    /// Input vertex id of every coarse vertex.
    pub vertex_ids: Vec<usize>,
    /// Input face id of every coarse face.
    pub face_ids: Vec<usize>,
    pub target_faces: usize,
}

impl Decimation {
    pub fn missed_target(&self) -> bool {
        self.coarse.num_faces() != self.target_faces
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    priority: f64,
    key: u64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
    placed: Vec3,
    cost: f64,
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Candidate {
    // Reversed so that BinaryHeap pops the cheapest collapse.
    fn cmp(&self, o: &Self) -> Ordering {
        o.priority
            .total_cmp(&self.priority)
            .then(o.key.cmp(&self.key))
            .then(o.a.cmp(&self.a))
            .then(o.b.cmp(&self.b))
    }
}

struct State {
    pos: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_alive: Vec<bool>,
    on_boundary: Vec<bool>,
    vfaces: Vec<Vec<usize>>,
    quadrics: Vec<Quadric>,
    stamps: Vec<u32>,
    live_faces: usize,
    area_eps: f64,
    rng: ChaCha8Rng,
    jitter: f64,
}

struct Plan {
    vertices: Vec<usize>,
    pre_faces: Vec<(usize, [usize; 3])>,
    post_faces: Vec<(usize, [usize; 3])>,
    boundary: Vec<usize>,
}

impl State {
    fn ring(&self, v: usize) -> Vec<usize> {
        let mut r: Vec<usize> = self.vfaces[v]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&x| x != v)
            .collect();
        r.sort_unstable();
        r.dedup();
        r
    }

    fn placement(&self, a: usize, b: usize) -> (Vec3, f64) {
        let q = self.quadrics[a] + self.quadrics[b];
        if let Some(p) = q.optimal_point() {
            return (p, q.evaluate(&p));
        }
        let mid = (self.pos[a] + self.pos[b]) * 0.5;
        [self.pos[a], self.pos[b], mid]
            .into_iter()
            .map(|p| (p, q.evaluate(&p)))
            .fold((mid, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
    }

    fn candidate(&mut self, a: usize, b: usize) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        let (placed, cost) = self.placement(a, b);
        let (factor, key) = if self.jitter > 0.0 {
            (self.rng.gen_range(1.0..1.0 + self.jitter), self.rng.gen::<u64>())
        } else {
            (1.0, 0)
        };
        Candidate {
            priority: cost * factor,
            key,
            a,
            b,
            stamp_a: self.stamps[a],
            stamp_b: self.stamps[b],
            placed,
            cost,
        }
    }

    fn is_stale(&self, c: &Candidate) -> bool {
        !self.vert_alive[c.a]
            || !self.vert_alive[c.b]
            || self.stamps[c.a] != c.stamp_a
            || self.stamps[c.b] != c.stamp_b
    }

    /// Legality checks; on success the local patch description.
    fn plan(&self, kept: usize, removed: usize, placed: &Vec3) -> Option<Plan> {
        if self.on_boundary[kept] || self.on_boundary[removed] {
            return None;
        }
        let shared: Vec<usize> = self.vfaces[kept]
            .iter()
            .copied()
            .filter(|&f| self.faces[f].contains(&removed))
            .collect();
        if shared.len() != 2 {
            return None;
        }
        let opposite: Vec<usize> = shared
            .iter()
            .map(|&f| {
                *self.faces[f]
                    .iter()
                    .find(|&&x| x != kept && x != removed)
                    .expect("triangle has a third vertex")
            })
            .collect();
        let ring_k = self.ring(kept);
        let ring_r = self.ring(removed);
        let common: Vec<usize> = ring_k
            .iter()
            .copied()
            .filter(|x| ring_r.binary_search(x).is_ok())
            .collect();
        let mut expected = opposite.clone();
        expected.sort_unstable();
        if opposite[0] == opposite[1] || common != expected {
            return None;
        }
        if ring_k.len() + ring_r.len() < 7 {
            return None;
        }
        if opposite.iter().any(|&o| self.vfaces[o].len() < 4) {
            return None;
        }

        let mut pre: Vec<usize> = self.vfaces[kept]
            .iter()
            .chain(&self.vfaces[removed])
            .copied()
            .collect();
        pre.sort_unstable();
        pre.dedup();

        for &f in &pre {
            if shared.contains(&f) {
                continue;
            }
            let tri = self.faces[f];
            let old = tri.map(|v| self.pos[v]);
            let new = tri.map(|v| if v == kept || v == removed { *placed } else { self.pos[v] });
            let n_old = (old[1] - old[0]).cross(&(old[2] - old[0]));
            let n_new = (new[1] - new[0]).cross(&(new[2] - new[0]));
            let a_new = n_new.norm();
            if !(a_new > self.area_eps) || !(n_old.dot(&n_new) > 0.0) {
                return None;
            }
        }

        // Boundary cycle of the combined one-ring.
        let mut next = std::collections::BTreeMap::new();
        for &f in &pre {
            if shared.contains(&f) {
                continue;
            }
            let t = self.faces[f];
            let k = t.iter().position(|&v| v == kept || v == removed)?;
            let (x, y) = (t[(k + 1) % 3], t[(k + 2) % 3]);
            if next.insert(x, y).is_some() {
                return None;
            }
        }
        let start = *next.keys().next()?;
        let mut boundary = vec![start];
        let mut cur = next[&start];
        while cur != start {
            if boundary.len() > next.len() {
                return None;
            }
            boundary.push(cur);
            cur = *next.get(&cur)?;
        }
        if boundary.len() != next.len() || boundary.len() < 3 {
            return None;
        }

        let mut vertices = vec![kept, removed];
        vertices.extend(&boundary);
        let slot = |v: usize| vertices.iter().position(|&x| x == v).expect("patch vertex");
        let pre_faces = pre
            .iter()
            .map(|&f| (f, self.faces[f].map(slot)))
            .collect();
        let post_faces = pre
            .iter()
            .filter(|f| !shared.contains(f))
            .map(|&f| (f, self.faces[f].map(|v| if v == removed { 0 } else { slot(v) })))
            .collect();
        let boundary = (2..vertices.len()).collect();
        Some(Plan {
            vertices,
            pre_faces,
            post_faces,
            boundary,
        })
    }

    fn collapse(&mut self, kept: usize, removed: usize, placed: Vec3) {
        let shared: Vec<usize> = self.vfaces[kept]
            .iter()
            .copied()
            .filter(|&f| self.faces[f].contains(&removed))
            .collect();
        for &f in &shared {
            self.face_alive[f] = false;
            self.live_faces -= 1;
            for v in self.faces[f] {
                self.vfaces[v].retain(|&g| g != f);
            }
        }
        let moved = std::mem::take(&mut self.vfaces[removed]);
        for &f in &moved {
            for v in self.faces[f].iter_mut() {
                if *v == removed {
                    *v = kept;
                }
            }
        }
        self.vfaces[kept].extend(moved);
        self.vfaces[kept].sort_unstable();
        self.vert_alive[removed] = false;
        self.pos[kept] = placed;
        self.quadrics[kept] = self.quadrics[kept] + self.quadrics[removed];
        self.stamps[kept] += 1;
        self.stamps[removed] += 1;
    }
}

/// Chart for a planned collapse: pre-collapse coordinates per slot, the
/// post-collapse coordinate of the kept vertex and whether it is bijective.
fn parameterize(plan: &Plan, pre_pos: &[Vec3], placed: &Vec3) -> (Vec<Vec2>, Vec2, bool) {
    let pre_tris: Vec<[usize; 3]> = plan.pre_faces.iter().map(|f| f.1).collect();
    let post_tris: Vec<[usize; 3]> = plan.post_faces.iter().map(|f| f.1).collect();
    let mut post_pos = pre_pos.to_vec();
    post_pos[0] = *placed;
    let post_chart = |pre_uv: &[Vec2], conformal: bool| -> Option<Vec2> {
        let fixed: Vec<(usize, Vec2)> = plan.boundary.iter().map(|&s| (s, pre_uv[s])).collect();
        let mut fixed_all = fixed.clone();
        fixed_all.push((1, pre_uv[1]));
        let uv = if conformal {
            conformal_flatten(&post_pos, &post_tris, &fixed_all)?
        } else {
            uniform_interior(post_pos.len(), &post_tris, &fixed_all)?
        };
        is_injective(&uv, &post_tris, &plan.boundary).then_some(uv[0])
    };

    let edge = (pre_pos[1] - pre_pos[0]).norm();
    let pins = [(0, Vec2::zeros()), (1, Vec2::new(edge, 0.0))];
    if let Some(uv) = conformal_flatten(pre_pos, &pre_tris, &pins) {
        if is_injective(&uv, &pre_tris, &plan.boundary) {
            if let Some(k) = post_chart(&uv, true) {
                return (uv, k, true);
            }
        }
    }
    if let Some(uv) = tutte_circle(pre_pos, &pre_tris, &plan.boundary) {
        if is_injective(&uv, &pre_tris, &plan.boundary) {
            for conformal in [true, false] {
                if let Some(k) = post_chart(&uv, conformal) {
                    return (uv, k, true);
                }
            }
        }
    }
    let uv = vec![Vec2::zeros(); pre_pos.len()];
    (uv, Vec2::zeros(), false)
}

/// Collapse edges in quadric-cost order until at most `target_faces` remain.
///
/// Priorities are multiplied by `Uniform(1, 1 + jitter)` drawn from `seed`.
/// Edges touching a mesh boundary are never collapsed.
pub fn quadric_decimate(
    mesh: &HalfEdgeMesh,
    target_faces: usize,
    seed: u64,
    jitter: f64,
) -> Result<Decimation> {
    let report = mesh.validate();
    if report.degenerate_face_count > 0 || report.non_manifold_vertex_count > 0 || !report.is_edge_manifold {
        return Err(MeshError::Invalid(format!("decimation input fails validation: {report:?}")));
    }
    if target_faces < 4 || target_faces > mesh.num_faces() {
        return Err(MeshError::InvalidArgument(format!(
            "target_faces must lie in [4, {}], got {target_faces}",
            mesh.num_faces()
        )));
    }
    if !(0.0..1.0).contains(&jitter) {
        return Err(MeshError::InvalidArgument(format!("jitter must lie in [0, 1), got {jitter}")));
    }

    let nv = mesh.num_vertices();
    let mut vfaces = vec![Vec::new(); nv];
    let mut quadrics = vec![Quadric::zero(); nv];
    for (f, tri) in mesh.faces().iter().enumerate() {
        let p = mesh.triangle(f);
        let c = (p[1] - p[0]).cross(&(p[2] - p[0]));
        let area = 0.5 * c.norm();
        let n = c / c.norm();
        let q = Quadric::from_plane(&n, -n.dot(&p[0]), area);
        for &v in tri {
            vfaces[v].push(f);
            quadrics[v] += q;
        }
    }
    let mut on_boundary = vec![false; nv];
    for h in 0..3 * mesh.num_faces() {
        if mesh.twin(h).is_none() {
            on_boundary[mesh.origin(h)] = true;
            on_boundary[mesh.dest(h)] = true;
        }
    }
    let diag = mesh.bbox_diagonal();
    let mut st = State {
        pos: mesh.positions().to_vec(),
        faces: mesh.faces().to_vec(),
        face_alive: vec![true; mesh.num_faces()],
        vert_alive: vec![true; nv],
        on_boundary,
        vfaces,
        quadrics,
        stamps: vec![0; nv],
        live_faces: mesh.num_faces(),
        area_eps: 1e-12 * diag * diag,
        rng: ChaCha8Rng::seed_from_u64(seed),
        jitter,
    };

    let mut records = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut progress_since_fill = true;
    while st.live_faces > target_faces {
        let Some(c) = heap.pop() else {
            if !progress_since_fill {
                break;
            }
            progress_since_fill = false;
            let mut edges: Vec<(usize, usize)> = Vec::new();
            for f in (0..st.faces.len()).filter(|&f| st.face_alive[f]) {
                let t = st.faces[f];
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    edges.push((a.min(b), a.max(b)));
                }
            }
            edges.sort_unstable();
            edges.dedup();
            for (a, b) in edges {
                let cand = st.candidate(a, b);
                heap.push(cand);
            }
            continue;
        };
        if st.is_stale(&c) {
            continue;
        }
        let Candidate { a, b, placed, cost, .. } = c;
        // The lower id survives.
        let (kept, removed) = (a, b);
        let Some(plan) = st.plan(kept, removed, &placed) else {
            continue;
        };
        if st.live_faces - 2 < target_faces.saturating_sub(TARGET_SLACK) {
            break;
        }
        let pre_pos: Vec<Vec3> = plan.vertices.iter().map(|&v| st.pos[v]).collect();
        let (pre_uv, kept_uv, injective) = parameterize(&plan, &pre_pos, &placed);
        let mut post_positions = pre_pos;
        post_positions[0] = placed;
        post_positions[1] = placed;
        records.push(CollapseRecord {
            kept,
            removed,
            placed,
            cost,
            vertices: plan.vertices,
            pre_uv,
            kept_uv,
            pre_faces: plan.pre_faces,
            post_faces: plan.post_faces,
            post_positions,
            injective,
        });
        st.collapse(kept, removed, placed);
        progress_since_fill = true;
        for n in st.ring(kept) {
            let cand = st.candidate(kept, n);
            heap.push(cand);
        }
    }

    if st.live_faces > target_faces + TARGET_SLACK {
        return Err(MeshError::DecimationStuck {
            reached: st.live_faces,
            target: target_faces,
        });
    }
    if st.live_faces != target_faces {
        log::warn!(
            "decimation stopped at {} faces for target {}",
            st.live_faces,
            target_faces
        );
    }

    let mut remap = vec![usize::MAX; nv];
    let mut vertex_ids = Vec::new();
    let mut positions = Vec::new();
    for v in (0..nv).filter(|&v| st.vert_alive[v] && !st.vfaces[v].is_empty()) {
        remap[v] = vertex_ids.len();
        vertex_ids.push(v);
        positions.push(st.pos[v]);
    }
    let face_ids: Vec<usize> = (0..st.faces.len()).filter(|&f| st.face_alive[f]).collect();
    let faces = face_ids.iter().map(|&f| st.faces[f].map(|v| remap[v])).collect();
    Ok(Decimation {
        coarse: HalfEdgeMesh::new(positions, faces)?,
        records,
        vertex_ids,
        face_ids,
        target_faces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn already_at_target_is_identity() {
        let m = shapes::icosphere(1);
        let d = quadric_decimate(&m, m.num_faces(), 0, 0.0).unwrap();
        assert!(d.records.is_empty());
        assert_eq!(d.coarse.positions(), m.positions());
        assert_eq!(d.coarse.faces(), m.faces());
    }

    #[test]
    fn tessellated_cube_to_400() {
        let m = shapes::tessellated_cube(16);
        assert_eq!(m.num_faces(), 3072);
        let d = quadric_decimate(&m, 400, 0, 0.0).unwrap();
        assert_eq!(d.coarse.num_faces(), 400);
        let r = d.coarse.validate();
        assert!(r.is_valid(), "{r:?}");
        assert!(r.is_watertight);
        assert_eq!(d.coarse.euler_characteristic(), 2);
        assert_eq!(d.coarse.genus(), 0);
    }

    #[test]
    fn torus_keeps_genus() {
        let m = shapes::corpus_mesh(3, 1);
        let d = quadric_decimate(&m, 200, 1, 0.1).unwrap();
        assert!(d.coarse.validate().is_valid());
        assert_eq!(d.coarse.genus(), 1);
        assert_eq!(d.coarse.num_faces(), 200);
    }

    #[test]
    fn jitter_changes_the_sequence() {
        let m = shapes::corpus_mesh(0, 1);
        let a = quadric_decimate(&m, 200, 1, 0.1).unwrap();
        let b = quadric_decimate(&m, 200, 2, 0.1).unwrap();
        let seq = |d: &Decimation| d.records.iter().map(|r| (r.kept, r.removed)).collect::<Vec<_>>();
        assert_ne!(seq(&a), seq(&b));
    }

    #[test]
    fn deterministic() {
        let m = shapes::corpus_mesh(5, 1);
        let a = quadric_decimate(&m, 150, 4, 0.1).unwrap();
        let b = quadric_decimate(&m, 150, 4, 0.1).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.coarse.positions(), b.coarse.positions());
    }

    #[test]
    fn costs_are_non_negative_and_monotone_without_jitter() {
        let m = shapes::corpus_mesh(1, 1);
        let d = quadric_decimate(&m, 100, 0, 0.0).unwrap();
        let costs: Vec<f64> = d.records.iter().map(|r| r.cost).collect();
        assert!(costs.iter().all(|&c| c >= -1e-12));
        // Lazy updates may reorder slightly; the bulk must be sorted.
        let inversions = costs.windows(2).filter(|w| w[1] < w[0] - 1e-12).count();
        assert!(inversions * 4 < costs.len(), "{inversions} of {}", costs.len());
    }

    #[test]
    fn records_are_mostly_injective() {
        let m = shapes::corpus_mesh(2, 1);
        let d = quadric_decimate(&m, 100, 0, 0.1).unwrap();
        assert!(d.records.iter().all(|r| r.injective));
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = shapes::icosphere(1);
        assert!(quadric_decimate(&m, 2, 0, 0.0).is_err());
        assert!(quadric_decimate(&m, 1000, 0, 0.0).is_err());
        assert!(quadric_decimate(&m, 40, 0, 1.0).is_err());
    }

    #[test]
    fn open_grid_keeps_its_boundary() {
        let m = shapes::plane_grid(1.0, 8);
        let d = quadric_decimate(&m, 80, 0, 0.0).unwrap();
        assert!(d.coarse.num_faces() <= 82);
        let r = d.coarse.validate();
        assert!(r.is_edge_manifold);
        assert!(!r.is_watertight);
    }
}

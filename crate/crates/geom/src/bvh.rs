//! Axis-aligned bounding box tree over mesh triangles for exact
//! closest-point queries.

use crate::{HalfEdgeMesh, SurfacePoint, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = if p[a] < self.lo[a] {
                self.lo[a] - p[a]
            } else if p[a] > self.hi[a] {
                p[a] - self.hi[a]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BvhIndex {
    triangles: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: SurfacePoint,
    pub position: Vec3,
    pub distance: f64,
}

impl BvhIndex {
    pub fn build(mesh: &HalfEdgeMesh) -> Self {
        let triangles: Vec<[Vec3; 3]> = (0..mesh.num_faces()).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|t| (t[0] + t[1] + t[2]) / 3.0)
            .collect();
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1);
        if !triangles.is_empty() {
            build_node(&triangles, &centroids, &mut order, 0, triangles.len(), &mut nodes);
        }
        Self {
            triangles,
            order,
            nodes,
        }
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Exact closest point on the mesh. Panics on an empty mesh.
    pub fn closest_point(&self, query: &Vec3) -> ClosestPoint {
        assert!(!self.nodes.is_empty(), "closest_point on empty mesh");
        let mut best_d2 = f64::INFINITY;
        let mut best = (usize::MAX, [0.0; 3], Vec3::zeros());
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds().distance_squared(query) > best_d2 {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        let (p, bary) = closest_on_triangle(query, &self.triangles[f]);
                        let d2 = (p - query).norm_squared();
                        if d2 < best_d2 || (d2 == best_d2 && f < best.0) {
                            best_d2 = d2;
                            best = (f, bary, p);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_squared(query);
                    let dr = self.nodes[right].bounds().distance_squared(query);
                    // Visit the nearer child first.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        ClosestPoint {
            point: SurfacePoint::new(best.0, best.1),
            position: best.2,
            distance: best_d2.sqrt(),
        }
    }
}

fn build_node(
    triangles: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &f in &order[start..end] {
        for p in &triangles[f] {
            bounds.grow(p);
        }
        cbounds.grow(&centroids[f]);
    }
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return id;
    }
    let extent = cbounds.hi - cbounds.lo;
    let axis = extent.imax();
    let mid = (start + end) / 2;
    order[start..end].sort_by(|&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    nodes.push(Node::Leaf { bounds, start, end });
    let left = build_node(triangles, centroids, order, start, mid, nodes);
    let right = build_node(triangles, centroids, order, mid, end, nodes);
    nodes[id] = Node::Inner {
        bounds,
        left,
        right,
    };
    id
}

/// Closest point on a triangle and its barycentric coordinates
/// (Ericson, Real-Time Collision Detection, 5.1.5).
pub fn closest_on_triangle(p: &Vec3, tri: &[Vec3; 3]) -> (Vec3, [f64; 3]) {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Exhaustive closest point, for testing.
pub fn closest_point_brute_force(mesh: &HalfEdgeMesh, query: &Vec3) -> ClosestPoint {
    let mut best: Option<ClosestPoint> = None;
    for f in 0..mesh.num_faces() {
        let (p, bary) = closest_on_triangle(query, &mesh.triangle(f));
        let d = (p - query).norm();
        if best.map_or(true, |b| d < b.distance) {
            best = Some(ClosestPoint {
                point: SurfacePoint::new(f, bary),
                position: p,
                distance: d,
            });
        }
    }
    best.expect("non-empty mesh")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vertex_query_has_zero_distance() {
        let m = shapes::icosphere(2);
        let bvh = BvhIndex::build(&m);
        for v in 0..m.num_vertices() {
            assert_eq!(bvh.closest_point(&m.position(v)).distance, 0.0);
        }
    }

    #[test]
    fn point_above_square() {
        let m = HalfEdgeMesh::new(
            vec![
                Vec3::new(-1.0, -1.0, 0.0),
                Vec3::new(1.0, -1.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(-1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let cp = BvhIndex::build(&m).closest_point(&Vec3::new(0.0, 0.0, 2.0));
        assert!((cp.distance - 2.0).abs() < 1e-15);
        assert!(cp.position.norm() < 1e-15);
        assert!(cp.point.is_valid());
    }

    #[test]
    fn matches_brute_force() {
        let m = shapes::corpus_mesh(3, 1);
        let bvh = BvhIndex::build(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let a = bvh.closest_point(&q);
            let b = closest_point_brute_force(&m, &q);
            assert!((a.distance - b.distance).abs() <= 1e-12, "{a:?} {b:?}");
            assert!((m.point(&a.point) - a.position).norm() < 1e-12);
        }
    }

    #[test]
    fn barycentrics_are_valid_in_all_regions() {
        let tri = [Vec3::zeros(), Vec3::x(), Vec3::y()];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let q = Vec3::new(rng.gen_range(-2.0..3.0), rng.gen_range(-2.0..3.0), rng.gen_range(-1.0..1.0));
            let (p, bary) = closest_on_triangle(&q, &tri);
            let sp = SurfacePoint::new(0, bary);
            assert!(sp.is_valid());
            let recon = tri[0] * bary[0] + tri[1] * bary[1] + tri[2] * bary[2];
            assert!((recon - p).norm() < 1e-12);
        }
    }
}

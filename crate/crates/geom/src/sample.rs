//! Area-uniform surface sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{HalfEdgeMesh, SurfacePoint, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub point: SurfacePoint,
    pub position: Vec3,
}

/// `n` points distributed uniformly by area. Faces are picked from the
/// cumulative area table; barycentrics use the square-root warp.
pub fn sample_surface(mesh: &HalfEdgeMesh, n: usize, seed: u64) -> Vec<SurfaceSample> {
    let mut cdf = Vec::with_capacity(mesh.num_faces());
    let mut total = 0.0;
    for f in 0..mesh.num_faces() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * total;
            let face = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let r1: f64 = rng.gen();
            let r2: f64 = rng.gen();
            let s = r1.sqrt();
            let bary = [1.0 - s, s * (1.0 - r2), s * r2];
            let point = SurfacePoint::new(face, bary);
            SurfaceSample {
                point,
                position: mesh.point(&point),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvh::BvhIndex;
    use crate::shapes;

    fn two_triangles() -> HalfEdgeMesh {
        // Areas 1 and 3.
        HalfEdgeMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(12.0, 0.0, 0.0),
                Vec3::new(10.0, 3.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap()
    }

    #[test]
    fn face_share_follows_area() {
        let m = two_triangles();
        let n = 100_000;
        let s = sample_surface(&m, n, 9);
        let share = s.iter().filter(|x| x.point.face == 1).count() as f64 / n as f64;
        // Binomial std is sqrt(0.75 * 0.25 / n) ~ 0.0014; 0.01 is > 7 sigma.
        assert!((share - 0.75).abs() < 0.01, "{share}");
    }

    #[test]
    fn same_seed_same_samples() {
        let m = shapes::icosphere(1);
        assert_eq!(sample_surface(&m, 1, 5), sample_surface(&m, 1, 5));
        assert_ne!(sample_surface(&m, 4, 5), sample_surface(&m, 4, 6));
    }

    #[test]
    fn samples_lie_on_surface() {
        let m = shapes::corpus_mesh(2, 1);
        let bvh = BvhIndex::build(&m);
        for s in sample_surface(&m, 2000, 3) {
            assert!(s.point.is_valid());
            assert!(bvh.closest_point(&s.position).distance < 1e-12);
        }
    }

    #[test]
    fn chi_square_on_icosphere_faces() {
        // Face frequencies against area fractions on 80 faces.
        let m = shapes::bumpy_sphere(1, 4);
        let n = 100_000;
        let mut counts = vec![0usize; m.num_faces()];
        for s in sample_surface(&m, n, 17) {
            counts[s.point.face] += 1;
        }
        let total = m.surface_area();
        let chi2: f64 = (0..m.num_faces())
            .map(|f| {
                let e = n as f64 * m.face_area(f) / total;
                (counts[f] as f64 - e).powi(2) / e
            })
            .sum();
        // 79 dof: mean 79, std ~12.6; 150 is beyond 5 sigma.
        assert!(chi2 < 150.0, "chi2 = {chi2}");
    }
}

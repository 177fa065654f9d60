//! Point-to-mesh distance and normal deviation between two surfaces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sample::sample_surface;
use crate::{BvhIndex, HalfEdgeMesh, Vec3};

pub const DEFAULT_SAMPLES: usize = 1_000_000;
/// Samples per parallel work unit; sums are reduced in chunk order.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDeviation {
    /// Mean closest-point distance.
    pub d_pm: f64,
    /// Standard error of `d_pm`.
    pub d_pm_stderr: f64,
    /// Mean normal angle in degrees.
    pub d_normal: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Closest-point target with precomputed flat face normals.
pub struct Target {
    bvh: BvhIndex,
    normals: Vec<Vec3>,
}

impl Target {
    pub fn new(gt: &HalfEdgeMesh) -> Self {
        Self {
            bvh: BvhIndex::build(gt),
            normals: (0..gt.num_faces()).map(|f| face_normal_or_zero(gt, f)).collect(),
        }
    }
}

fn face_normal_or_zero(m: &HalfEdgeMesh, f: usize) -> Vec3 {
    let [a, b, c] = m.triangle(f);
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vec3::zeros()
    }
}

fn angle_degrees(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// `n` area-uniform samples on `pred` measured against `target`.
pub fn deviation_to(pred: &HalfEdgeMesh, target: &Target, n: usize, seed: u64) -> SurfaceDeviation {
    let samples = sample_surface(pred, n, seed);
    let pred_normals: Vec<Vec3> = (0..pred.num_faces()).map(|f| face_normal_or_zero(pred, f)).collect();
    let partial: Vec<[f64; 3]> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = [0.0; 3];
            for s in chunk {
                let cp = target.bvh.closest_point(&s.position);
                acc[0] += cp.distance;
                acc[1] += cp.distance * cp.distance;
                acc[2] += angle_degrees(&pred_normals[s.point.face], &target.normals[cp.point.face]);
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 3];
    for p in &partial {
        for k in 0..3 {
            tot[k] += p[k];
        }
    }
    let nf = n.max(1) as f64;
    let mean = tot[0] / nf;
    let var = (tot[1] / nf - mean * mean).max(0.0);
    SurfaceDeviation {
        d_pm: mean,
        d_pm_stderr: (var / nf).sqrt(),
        d_normal: tot[2] / nf,
        samples: n,
        seed,
    }
}

/// One-directional deviation from `pred` to `gt`.
pub fn deviation(pred: &HalfEdgeMesh, gt: &HalfEdgeMesh, n: usize, seed: u64) -> SurfaceDeviation {
    deviation_to(pred, &Target::new(gt), n, seed)
}

/// Average of both directions.
pub fn symmetric_deviation(a: &HalfEdgeMesh, b: &HalfEdgeMesh, n: usize, seed: u64) -> SurfaceDeviation {
    let ab = deviation(a, b, n, seed);
    let ba = deviation(b, a, n, seed);
    SurfaceDeviation {
        d_pm: 0.5 * (ab.d_pm + ba.d_pm),
        d_pm_stderr: 0.5 * (ab.d_pm_stderr.powi(2) + ba.d_pm_stderr.powi(2)).sqrt(),
        d_normal: 0.5 * (ab.d_normal + ba.d_normal),
        samples: n,
        seed,
    }
}

pub fn d_pm(pred: &HalfEdgeMesh, gt: &HalfEdgeMesh, n: usize, seed: u64) -> f64 {
    deviation(pred, gt, n, seed).d_pm
}

pub fn d_normal(pred: &HalfEdgeMesh, gt: &HalfEdgeMesh, n: usize, seed: u64) -> f64 {
    deviation(pred, gt, n, seed).d_normal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    fn tilted_plane(deg: f64) -> HalfEdgeMesh {
        let t = deg.to_radians();
        shapes::plane_grid(1.0, 4).transformed(|p| Vec3::new(p.x * t.cos(), p.y, p.x * t.sin()))
    }

    #[test]
    fn identical_meshes() {
        let m = shapes::corpus_mesh(0, 1);
        let d = deviation(&m, &m, 100_000, 1);
        assert!(d.d_pm < 1e-9);
        assert!(d.d_normal < 0.1);
    }

    #[test]
    fn concentric_spheres() {
        let a = shapes::icosphere(4);
        let b = a.transformed(|p| p * 1.001);
        let d = d_pm(&a, &b, 20_000, 3);
        assert!((d - 0.001).abs() < 0.05 * 0.001, "{d}");
    }

    #[test]
    fn tilted_plane_angle() {
        let a = shapes::plane_grid(1.0, 4);
        let b = tilted_plane(5.0);
        let d = d_normal(&a, &b, 5_000, 0);
        assert!((d - 5.0).abs() < 0.01, "{d}");
    }

    #[test]
    fn antiparallel_planes() {
        let a = shapes::plane_grid(1.0, 4);
        let b = shapes::flipped(&a);
        assert!((d_normal(&a, &b, 1000, 0) - 180.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_for_any_thread_count() {
        let a = shapes::corpus_mesh(1, 1);
        let b = shapes::corpus_mesh(1, 0);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let x = one.install(|| deviation(&a, &b, 30_000, 7));
        let y = four.install(|| deviation(&a, &b, 30_000, 7));
        assert_eq!(x, y);
    }

    #[test]
    fn halving_samples_is_consistent() {
        let a = shapes::corpus_mesh(2, 1);
        let b = shapes::corpus_mesh(2, 0);
        let full = deviation(&a, &b, 40_000, 5);
        let half = deviation(&a, &b, 20_000, 5);
        assert!((full.d_pm - half.d_pm).abs() < 3.0 * half.d_pm_stderr.max(full.d_pm_stderr) * 2f64.sqrt());
    }

    #[test]
    fn symmetric_of_identical_is_zero() {
        let m = shapes::icosphere(2);
        assert!(symmetric_deviation(&m, &m, 5000, 0).d_pm < 1e-9);
    }
}

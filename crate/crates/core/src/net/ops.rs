//! Differentiable mesh operators recorded on the tape as custom ops.

use std::sync::Arc;

use nalgebra::Matrix3;
use npmesh_geom::features::FEATURE_DIM;
use npmesh_geom::mesh::triangle_geometry;
use npmesh_geom::Vec3;
use npmesh_grad::{CustomOp, GradError, Tensor};

fn numerical(op: &'static str, detail: String) -> GradError {
    GradError::Numerical { op, detail }
}

fn vec3(d: &[f64], v: usize) -> Vec3 {
    Vec3::new(d[3 * v], d[3 * v + 1], d[3 * v + 2])
}

fn add3(d: &mut [f64], v: usize, g: &Vec3) {
    d[3 * v] += g.x;
    d[3 * v + 1] += g.y;
    d[3 * v + 2] += g.z;
}

/// Order-invariant neighbour terms of the face convolution.
///
/// For input `x` (`faces x c`) the output is `faces x 3c`:
/// `[sum_k n_k | sum of cyclic |n_{k+1} - n_k| | sum_k |n_k - x_f|]`.
/// The three neighbour values are sorted per channel before summing, so
/// the result is bitwise identical for every rotation or reflection of a
/// face's neighbour list.
pub struct NeighborAggregate {
    pub adjacency: Arc<Vec<[usize; 3]>>,
}

fn sorted3(v: [(f64, usize); 3]) -> [(f64, usize); 3] {
    let mut v = v;
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl CustomOp for NeighborAggregate {
    fn name(&self) -> &'static str {
        "neighbor_aggregate"
    }

    fn forward(&self, inputs: &[&Tensor]) -> npmesh_grad::Result<Tensor> {
        let x = inputs[0];
        let (n, c) = x.dims2();
        if self.adjacency.len() != n {
            return Err(GradError::ShapeMismatch {
                op: "neighbor_aggregate",
                detail: format!("{} adjacency rows for {n} faces", self.adjacency.len()),
            });
        }
        let d = x.data();
        let mut out = vec![0.0; n * 3 * c];
        for (f, nb) in self.adjacency.iter().enumerate() {
            for &g in nb {
                if g >= n {
                    return Err(GradError::IndexOutOfRange { index: g, rows: n });
                }
            }
            let row = &mut out[f * 3 * c..(f + 1) * 3 * c];
            for j in 0..c {
                let s = sorted3(nb.map(|g| (d[g * c + j], g)));
                let xf = d[f * c + j];
                row[j] = (s[0].0 + s[1].0) + s[2].0;
                row[c + j] = ((s[1].0 - s[0].0) + (s[2].0 - s[1].0)) + (s[2].0 - s[0].0);
                row[2 * c + j] = ((s[0].0 - xf).abs() + (s[1].0 - xf).abs()) + (s[2].0 - xf).abs();
            }
        }
        Tensor::matrix(n, 3 * c, out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0];
        let (n, c) = x.dims2();
        let d = x.data();
        let mut gx = vec![0.0; n * c];
        for (f, nb) in self.adjacency.iter().enumerate() {
            let up = &grad[f * 3 * c..(f + 1) * 3 * c];
            for j in 0..c {
                let s = sorted3(nb.map(|g| (d[g * c + j], g)));
                let xf = d[f * c + j];
                let (g1, g2, g3) = (up[j], up[c + j], up[2 * c + j]);
                let w = [g1 - 2.0 * g2, g1, g1 + 2.0 * g2];
                let mut self_g = 0.0;
                for k in 0..3 {
                    let sg = sign(s[k].0 - xf);
                    gx[s[k].1 * c + j] += w[k] + g3 * sg;
                    self_g -= g3 * sg;
                }
                gx[f * c + j] += self_g;
            }
        }
        vec![Some(gx)]
    }
}

/// Area-weighted vertex normals of a position buffer, accumulated in face
/// order exactly like [`npmesh_geom::HalfEdgeMesh::vertex_normals`].
fn normal_sums(p: &[f64], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); p.len() / 3];
    for f in faces {
        let (a, b, c) = (vec3(p, f[0]), vec3(p, f[1]), vec3(p, f[2]));
        let n = (b - a).cross(&(c - a));
        for &v in f {
            acc[v] += n;
        }
    }
    acc
}

/// The 13 per-face input features as a function of vertex positions.
pub struct FaceFeatureOp {
    pub faces: Arc<Vec<[usize; 3]>>,
}

/// Features of a position buffer (`vertices x 3`, row-major).
pub fn face_features(p: &[f64], faces: &[[usize; 3]]) -> npmesh_grad::Result<Vec<f64>> {
    let sums = normal_sums(p, faces);
    let normals = sums
        .iter()
        .enumerate()
        .map(|(v, s)| {
            let len = s.norm();
            if len > 0.0 && len.is_finite() {
                Ok(s / len)
            } else {
                Err(numerical("face_features", format!("vertex {v} has a zero-length normal")))
            }
        })
        .collect::<npmesh_grad::Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(faces.len() * FEATURE_DIM);
    for (fi, f) in faces.iter().enumerate() {
        let tri = [vec3(p, f[0]), vec3(p, f[1]), vec3(p, f[2])];
        let g = triangle_geometry(&tri).ok_or_else(|| numerical("face_features", format!("degenerate face {fi}")))?;
        out.push(g.area);
        out.extend_from_slice(&g.angles);
        for k in 0..3 {
            out.push(g.normal.dot(&normals[f[k]]));
        }
        out.extend_from_slice(g.centroid.as_slice());
        out.extend_from_slice(g.normal.as_slice());
    }
    Ok(out)
}

impl CustomOp for FaceFeatureOp {
    fn name(&self) -> &'static str {
        "face_features"
    }

    fn forward(&self, inputs: &[&Tensor]) -> npmesh_grad::Result<Tensor> {
        let p = inputs[0];
        let (n, c) = p.dims2();
        if c != 3 {
            return Err(GradError::ShapeMismatch {
                op: "face_features",
                detail: format!("positions have {c} columns"),
            });
        }
        if let Some(&v) = self.faces.iter().flatten().find(|&&v| v >= n) {
            return Err(GradError::IndexOutOfRange { index: v, rows: n });
        }
        Tensor::matrix(self.faces.len(), FEATURE_DIM, face_features(p.data(), &self.faces)?)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let p = inputs[0].data();
        let faces = &self.faces;
        let sums = normal_sums(p, faces);
        let unit: Vec<Vec3> = sums.iter().map(|s| s / s.norm()).collect();
        let mut gp = vec![0.0; p.len()];
        let mut g_unit = vec![Vec3::zeros(); sums.len()];
        let mut g_cross = vec![Vec3::zeros(); faces.len()];

        for (fi, f) in faces.iter().enumerate() {
            let up = &grad[fi * FEATURE_DIM..(fi + 1) * FEATURE_DIM];
            let t = [vec3(p, f[0]), vec3(p, f[1]), vec3(p, f[2])];
            let c = (t[1] - t[0]).cross(&(t[2] - t[0]));
            let s = c.norm();
            let n = c / s;
            let mut gc = n * (0.5 * up[0]);
            let mut gn = Vec3::new(up[10], up[11], up[12]);
            for k in 0..3 {
                // angle_k = atan2(|c|, u.w)
                let (a, b, o) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                let u = t[(k + 1) % 3] - t[k];
                let w = t[(k + 2) % 3] - t[k];
                let dt = u.dot(&w);
                let den = s * s + dt * dt;
                let g = up[1 + k];
                gc += n * (g * dt / den);
                let gd = -g * s / den;
                add3(&mut gp, b, &(w * gd));
                add3(&mut gp, o, &(u * gd));
                add3(&mut gp, a, &(-(u + w) * gd));
                // dot_k = n . unit[v_k]
                let gdot = up[4 + k];
                gn += unit[f[k]] * gdot;
                g_unit[f[k]] += n * gdot;
            }
            let gcen = Vec3::new(up[7], up[8], up[9]) / 3.0;
            for &v in f {
                add3(&mut gp, v, &gcen);
            }
            gc += (gn - n * gn.dot(&n)) / s;
            g_cross[fi] = gc;
        }
        // unit = sum / |sum|, sum = sum of face crosses
        let g_sum: Vec<Vec3> = sums
            .iter()
            .zip(&unit)
            .zip(&g_unit)
            .map(|((s, u), g)| (g - u * g.dot(u)) / s.norm())
            .collect();
        for (fi, f) in faces.iter().enumerate() {
            let mut gc = g_cross[fi];
            for &v in f {
                gc += g_sum[v];
            }
            let t = [vec3(p, f[0]), vec3(p, f[1]), vec3(p, f[2])];
            let (e1, e2) = (t[1] - t[0], t[2] - t[0]);
            let g1 = e2.cross(&gc);
            let g2 = gc.cross(&e1);
            add3(&mut gp, f[1], &g1);
            add3(&mut gp, f[2], &g2);
            add3(&mut gp, f[0], &(-(g1 + g2)));
        }
        vec![Some(gp)]
    }
}

/// Frame `[e1, e2, c / sqrt|c|]` of a triangle, `c = e1 x e2`. The scaled
/// normal keeps the frame homogeneous of degree one in the geometry, so a
/// uniform scale by `s` maps to `J = s I`.
fn frame(t: &[Vec3; 3]) -> (Matrix3<f64>, Vec3, Vec3, Vec3) {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let c = e1.cross(&e2);
    let nn = c / c.norm().sqrt();
    (Matrix3::from_columns(&[e1, e2, nn]), e1, e2, c)
}

/// Mean over faces of `|J - I|_F` with `J = T~ T^-1`, evaluated as
/// `(T~ - T) T^-1`.
pub struct JacobianOp {
    pub faces: Arc<Vec<[usize; 3]>>,
    frames: Vec<Matrix3<f64>>,
    inverse: Vec<Matrix3<f64>>,
}

impl JacobianOp {
    /// Precompute the inverse true frames. Fails on degenerate true faces.
    pub fn new(faces: Arc<Vec<[usize; 3]>>, truth: &[Vec3]) -> npmesh_grad::Result<Self> {
        let frames: Vec<Matrix3<f64>> = faces
            .iter()
            .map(|f| frame(&[truth[f[0]], truth[f[1]], truth[f[2]]]).0)
            .collect();
        let inverse = frames
            .iter()
            .enumerate()
            .map(|(fi, t)| {
                t.try_inverse()
                    .filter(|m| m.iter().all(|x| x.is_finite()))
                    .ok_or_else(|| numerical("jacobian", format!("singular frame at face {fi}")))
            })
            .collect::<npmesh_grad::Result<Vec<_>>>()?;
        Ok(Self { faces, frames, inverse })
    }

    fn jacobians(&self, p: &[f64]) -> Vec<(Matrix3<f64>, [Vec3; 3])> {
        self.faces
            .iter()
            .zip(self.frames.iter().zip(&self.inverse))
            .map(|(f, (tf, inv))| {
                let t = [vec3(p, f[0]), vec3(p, f[1]), vec3(p, f[2])];
                let (tt, ..) = frame(&t);
                ((tt - tf) * inv, t)
            })
            .collect()
    }
}

impl CustomOp for JacobianOp {
    fn name(&self) -> &'static str {
        "jacobian"
    }

    fn forward(&self, inputs: &[&Tensor]) -> npmesh_grad::Result<Tensor> {
        let p = inputs[0];
        if let Some(&v) = self.faces.iter().flatten().find(|&&v| v >= p.dims2().0) {
            return Err(GradError::IndexOutOfRange { index: v, rows: p.dims2().0 });
        }
        let total: f64 = self.jacobians(p.data()).iter().map(|(d, _)| d.norm()).sum();
        Ok(Tensor::scalar(total / self.faces.len().max(1) as f64))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let p = inputs[0].data();
        let scale = grad[0] / self.faces.len().max(1) as f64;
        let mut gp = vec![0.0; p.len()];
        for ((f, inv), (diff, t)) in self.faces.iter().zip(&self.inverse).zip(self.jacobians(p)) {
            let norm = diff.norm();
            if norm == 0.0 {
                continue;
            }
            let gj = diff * (scale / norm);
            let gt = gj * inv.transpose();
            let (_, e1, e2, c) = frame(&t);
            let cn = c.norm();
            let chat = c / cn;
            let gnn: Vec3 = gt.column(2).into();
            let gc = (gnn - chat * (0.5 * gnn.dot(&chat))) / cn.sqrt();
            let g1: Vec3 = Vec3::from(gt.column(0)) + e2.cross(&gc);
            let g2: Vec3 = Vec3::from(gt.column(1)) + gc.cross(&e1);
            add3(&mut gp, f[1], &g1);
            add3(&mut gp, f[2], &g2);
            add3(&mut gp, f[0], &(-(g1 + g2)));
        }
        vec![Some(gp)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use npmesh_geom::features::face_features_13;
    use npmesh_geom::shapes;

    fn flat(m: &npmesh_geom::HalfEdgeMesh) -> Vec<f64> {
        m.positions().iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    #[test]
    fn features_match_geometry_kernel() {
        let m = shapes::bumpy_sphere(1, 3);
        let ours = face_features(&flat(&m), m.faces()).unwrap();
        let theirs = face_features_13(&m).unwrap().flatten();
        assert_eq!(ours, theirs);
    }

    #[test]
    fn jacobian_of_identity_and_scale() {
        let m = shapes::icosphere(1);
        let faces = Arc::new(m.faces().to_vec());
        let op = JacobianOp::new(faces, m.positions()).unwrap();
        let p = Tensor::matrix(m.num_vertices(), 3, flat(&m)).unwrap();
        assert_eq!(op.forward(&[&p]).unwrap().item(), 0.0);
        let q = Tensor::matrix(m.num_vertices(), 3, flat(&m).iter().map(|x| 2.0 * x).collect()).unwrap();
        assert!((op.forward(&[&q]).unwrap().item() - 3f64.sqrt()).abs() < 1e-12);
    }
}

//! Planar flattening of small disk patches.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::Vec3;

pub type Vec2 = Vector2<f64>;

fn cross2(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

pub fn signed_area(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    0.5 * cross2(&(b - a), &(c - a))
}

/// Least-squares conformal map of a triangulated patch with the listed
/// vertices held fixed. Needs at least two fixed vertices.
pub fn conformal_flatten(
    positions: &[Vec3],
    faces: &[[usize; 3]],
    fixed: &[(usize, Vec2)],
) -> Option<Vec<Vec2>> {
    let n = positions.len();
    let mut slot = vec![usize::MAX; n];
    let mut free = 0;
    for v in 0..n {
        if !fixed.iter().any(|&(f, _)| f == v) {
            slot[v] = free;
            free += 1;
        }
    }
    let mut uv = vec![Vec2::zeros(); n];
    for &(v, p) in fixed {
        uv[v] = p;
    }
    if free == 0 {
        return Some(uv);
    }
    let rows = 2 * faces.len();
    let mut a = DMatrix::<f64>::zeros(rows, 2 * free);
    let mut rhs = DVector::<f64>::zeros(rows);
    for (t, f) in faces.iter().enumerate() {
        let p = [positions[f[0]], positions[f[1]], positions[f[2]]];
        let e1 = p[1] - p[0];
        let e2 = p[2] - p[0];
        let l1 = e1.norm();
        let cr = e1.cross(&e2).norm();
        if !(l1 > 0.0 && cr > 0.0) {
            return None;
        }
        let w = [
            Vec2::zeros(),
            Vec2::new(l1, 0.0),
            Vec2::new(e1.dot(&e2) / l1, cr / l1),
        ];
        let scale = 1.0 / cr.sqrt();
        for j in 0..3 {
            let wj = (w[(j + 2) % 3] - w[(j + 1) % 3]) * scale;
            let v = f[j];
            // Real and imaginary parts of W_j * (u_j + i v_j).
            let coeffs = [[wj.x, -wj.y], [wj.y, wj.x]];
            for (r, c) in coeffs.iter().enumerate() {
                let row = 2 * t + r;
                if slot[v] == usize::MAX {
                    rhs[row] -= c[0] * uv[v].x + c[1] * uv[v].y;
                } else {
                    a[(row, 2 * slot[v])] += c[0];
                    a[(row, 2 * slot[v] + 1)] += c[1];
                }
            }
        }
    }
    let at = a.transpose();
    let sol = (&at * &a).cholesky()?.solve(&(&at * &rhs));
    for v in 0..n {
        if slot[v] != usize::MAX {
            uv[v] = Vec2::new(sol[2 * slot[v]], sol[2 * slot[v] + 1]);
        }
    }
    uv.iter().all(|p| p.x.is_finite() && p.y.is_finite()).then_some(uv)
}

/// Uniform Tutte embedding with `boundary` (a cycle) on a circle spaced by
/// 3D edge length.
pub fn tutte_circle(positions: &[Vec3], faces: &[[usize; 3]], boundary: &[usize]) -> Option<Vec<Vec2>> {
    let n = positions.len();
    let nb = boundary.len();
    let lens: Vec<f64> = (0..nb)
        .map(|i| (positions[boundary[(i + 1) % nb]] - positions[boundary[i]]).norm())
        .collect();
    let total: f64 = lens.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let radius = total / std::f64::consts::TAU;
    let mut fixed = Vec::with_capacity(nb);
    let mut acc = 0.0;
    for (i, &b) in boundary.iter().enumerate() {
        let t = std::f64::consts::TAU * acc / total;
        fixed.push((b, Vec2::new(radius * t.cos(), radius * t.sin())));
        acc += lens[i];
    }
    uniform_interior(n, faces, &fixed)
}

/// Every free vertex at the average of its neighbours.
pub fn uniform_interior(n: usize, faces: &[[usize; 3]], fixed: &[(usize, Vec2)]) -> Option<Vec<Vec2>> {
    let mut nbrs = vec![Vec::new(); n];
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
    }
    for l in &mut nbrs {
        l.sort_unstable();
        l.dedup();
    }
    let mut slot = vec![usize::MAX; n];
    let mut free = Vec::new();
    for v in 0..n {
        if !fixed.iter().any(|&(f, _)| f == v) {
            slot[v] = free.len();
            free.push(v);
        }
    }
    let mut uv = vec![Vec2::zeros(); n];
    for &(v, p) in fixed {
        uv[v] = p;
    }
    if free.is_empty() {
        return Some(uv);
    }
    let m = free.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut bx = DVector::<f64>::zeros(m);
    let mut by = DVector::<f64>::zeros(m);
    for (i, &v) in free.iter().enumerate() {
        a[(i, i)] = nbrs[v].len() as f64;
        for &w in &nbrs[v] {
            if slot[w] == usize::MAX {
                bx[i] += uv[w].x;
                by[i] += uv[w].y;
            } else {
                a[(i, slot[w])] -= 1.0;
            }
        }
    }
    let lu = a.lu();
    let x = lu.solve(&bx)?;
    let y = lu.solve(&by)?;
    for (i, &v) in free.iter().enumerate() {
        uv[v] = Vec2::new(x[i], y[i]);
    }
    Some(uv)
}

fn segments_cross(p1: &Vec2, p2: &Vec2, q1: &Vec2, q2: &Vec2) -> bool {
    let d1 = cross2(&(p2 - p1), &(q1 - p1));
    let d2 = cross2(&(p2 - p1), &(q2 - p1));
    let d3 = cross2(&(q2 - q1), &(p1 - q1));
    let d4 = cross2(&(q2 - q1), &(p2 - q1));
    if d1 == 0.0 && d2 == 0.0 {
        let dir = p2 - p1;
        let t = |x: &Vec2| (x - p1).dot(&dir);
        let (lo, hi) = (t(q1).min(t(q2)), t(q1).max(t(q2)));
        return hi >= 0.0 && lo <= dir.norm_squared();
    }
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0)
}

/// All triangles strictly positive and the boundary cycle a simple polygon.
pub fn is_injective(uv: &[Vec2], faces: &[[usize; 3]], boundary: &[usize]) -> bool {
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    for p in uv {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let ext = (hi - lo).norm_squared();
    if !(ext > 0.0) {
        return false;
    }
    let eps = 1e-12 * ext;
    if faces
        .iter()
        .any(|f| !(signed_area(&uv[f[0]], &uv[f[1]], &uv[f[2]]) > eps))
    {
        return false;
    }
    let nb = boundary.len();
    for i in 0..nb {
        for j in i + 2..nb {
            if i == 0 && j == nb - 1 {
                continue;
            }
            let (p1, p2) = (uv[boundary[i]], uv[boundary[(i + 1) % nb]]);
            let (q1, q2) = (uv[boundary[j]], uv[boundary[(j + 1) % nb]]);
            if segments_cross(&p1, &p2, &q1, &q2) {
                return false;
            }
        }
    }
    true
}

pub fn barycentric(q: &Vec2, a: &Vec2, b: &Vec2, c: &Vec2) -> [f64; 3] {
    let area = signed_area(a, b, c);
    let l0 = signed_area(q, b, c) / area;
    let l1 = signed_area(a, q, c) / area;
    [l0, l1, 1.0 - l0 - l1]
}

/// Triangle containing `q` (largest minimum barycentric wins) and clamped
/// barycentrics in it.
pub fn locate(q: &Vec2, uv: &[Vec2], faces: &[[usize; 3]]) -> (usize, [f64; 3]) {
    let mut best = (0, [1.0, 0.0, 0.0], f64::NEG_INFINITY);
    for (i, f) in faces.iter().enumerate() {
        let b = barycentric(q, &uv[f[0]], &uv[f[1]], &uv[f[2]]);
        let m = b[0].min(b[1]).min(b[2]);
        if m > best.2 {
            best = (i, b, m);
        }
    }
    (best.0, clamp_bary(best.1))
}

pub fn clamp_bary(b: [f64; 3]) -> [f64; 3] {
    let c = [b[0].max(0.0), b[1].max(0.0), b[2].max(0.0)];
    let s = c[0] + c[1] + c[2];
    if s > 0.0 {
        [c[0] / s, c[1] / s, 1.0 - c[0] / s - c[1] / s].map(|x| x.max(0.0))
    } else {
        [1.0 / 3.0; 3]
    }
}

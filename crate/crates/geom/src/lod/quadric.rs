use nalgebra::Matrix3;

use crate::Vec3;

/// Condition number above which the optimal placement is not trusted.
pub const MAX_CONDITION: f64 = 1e8;

/// Symmetric 4x4 quadric stored as its upper triangle:
/// `[a00 a01 a02 b0 a11 a12 b1 a22 b2 c]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadric([f64; 10]);

impl Quadric {
    pub fn zero() -> Self {
        Self([0.0; 10])
    }

    /// Squared distance to the plane `n . x + d = 0` (unit `n`), times `weight`.
    pub fn from_plane(n: &Vec3, d: f64, weight: f64) -> Self {
        let (a, b, c) = (n.x, n.y, n.z);
        Self([
            a * a * weight,
            a * b * weight,
            a * c * weight,
            a * d * weight,
            b * b * weight,
            b * c * weight,
            b * d * weight,
            c * c * weight,
            c * d * weight,
            d * d * weight,
        ])
    }

    pub fn evaluate(&self, p: &Vec3) -> f64 {
        let q = &self.0;
        let (x, y, z) = (p.x, p.y, p.z);
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    fn linear_part(&self) -> (Matrix3<f64>, Vec3) {
        let q = &self.0;
        (
            Matrix3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]),
            Vec3::new(q[3], q[6], q[8]),
        )
    }

    /// Minimiser of the quadric when the system is well conditioned.
    pub fn optimal_point(&self) -> Option<Vec3> {
        let (a, b) = self.linear_part();
        let sv = a.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 0.0) || smax / smin >= MAX_CONDITION {
            return None;
        }
        a.lu().solve(&(-b))
    }
}

impl std::ops::Add for Quadric {
    type Output = Quadric;

    fn add(self, o: Quadric) -> Quadric {
        let mut out = self;
        for (x, y) in out.0.iter_mut().zip(o.0) {
            *x += y;
        }
        out
    }
}

impl std::ops::AddAssign for Quadric {
    fn add_assign(&mut self, o: Quadric) {
        *self = *self + o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_distance() {
        let q = Quadric::from_plane(&Vec3::z(), -1.0, 1.0);
        assert!((q.evaluate(&Vec3::new(3.0, 4.0, 3.0)) - 4.0).abs() < 1e-12);
        assert_eq!(q.evaluate(&Vec3::new(-2.0, 7.0, 1.0)), 0.0);
    }

    #[test]
    fn three_planes_meet_at_corner() {
        let q = Quadric::from_plane(&Vec3::x(), -1.0, 1.0)
            + Quadric::from_plane(&Vec3::y(), -2.0, 1.0)
            + Quadric::from_plane(&Vec3::z(), -3.0, 1.0);
        let p = q.optimal_point().unwrap();
        assert!((p - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        assert!(q.evaluate(&p).abs() < 1e-12);
    }

    #[test]
    fn single_plane_is_ill_conditioned() {
        let q = Quadric::from_plane(&Vec3::z(), 0.0, 1.0);
        assert!(q.optimal_point().is_none());
    }
}

//! Axis-aligned rotation augmentation.

use npmesh_geom::Vec3;
use rand::Rng;

/// A proper rotation with entries in {-1, 0, 1}, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AxisRotation(pub [[i8; 3]; 3]);

impl AxisRotation {
    pub const IDENTITY: Self = Self([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);

    /// Quarter turns about x, y and z, applied in that order.
    pub fn from_quarter_turns(kx: u8, ky: u8, kz: u8) -> Self {
        let rx = Self([[1, 0, 0], [0, 0, -1], [0, 1, 0]]);
        let ry = Self([[0, 0, 1], [0, 1, 0], [-1, 0, 0]]);
        let rz = Self([[0, -1, 0], [1, 0, 0], [0, 0, 1]]);
        let mut r = Self::IDENTITY;
        for _ in 0..kx % 4 {
            r = rx.compose(&r);
        }
        for _ in 0..ky % 4 {
            r = ry.compose(&r);
        }
        for _ in 0..kz % 4 {
            r = rz.compose(&r);
        }
        r
    }

    /// Turns drawn independently per axis.
    pub fn random(rng: &mut impl Rng) -> Self {
        let kx = rng.gen_range(0..4);
        let ky = rng.gen_range(0..4);
        let kz = rng.gen_range(0..4);
        Self::from_quarter_turns(kx, ky, kz)
    }

    /// `self * other`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut m = [[0i8; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Self(m)
    }

    pub fn determinant(&self) -> i32 {
        let m = self.0.map(|r| r.map(i32::from));
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Exact: every output coordinate is a signed copy of an input one.
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let pick = |row: &[i8; 3]| {
            let k = row.iter().position(|&x| x != 0).expect("row has an entry");
            if row[k] > 0 {
                p[k]
            } else {
                -p[k]
            }
        };
        Vec3::new(pick(&self.0[0]), pick(&self.0[1]), pick(&self.0[2]))
    }

    /// The 24 proper axis-aligned rotations.
    pub fn all() -> Vec<Self> {
        let mut out: Vec<Self> = (0..64)
            .map(|i| Self::from_quarter_turns(i % 4, (i / 4) % 4, i / 16))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Rotate every level with the same rotation.
pub fn augment_levels(levels: &[Vec<Vec3>], r: &AxisRotation) -> Vec<Vec<Vec3>> {
    levels.iter().map(|l| l.iter().map(|p| r.apply(p)).collect()).collect()
}

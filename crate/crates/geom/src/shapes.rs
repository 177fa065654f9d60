//! Procedural meshes: canonical solids for tests and a small synthetic
//! corpus of closed, single-component meshes for toy training.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{HalfEdgeMesh, Vec3};

fn build(positions: Vec<Vec3>, faces: Vec<[usize; 3]>) -> HalfEdgeMesh {
    HalfEdgeMesh::new(positions, faces).expect("procedural mesh indices are in range")
}

/// Unit cube `[-0.5, 0.5]^3` with 12 triangles. Every quad is split along
/// the diagonal joining its two even-parity corners, so each corner sees the
/// same triangle count on all three of its faces.
pub fn cube() -> HalfEdgeMesh {
    let positions: Vec<Vec3> = (0..8)
        .map(|i| {
            Vec3::new(
                (i & 1) as f64 - 0.5,
                ((i >> 1) & 1) as f64 - 0.5,
                ((i >> 2) & 1) as f64 - 0.5,
            )
        })
        .collect();
    // Quads listed counter-clockwise seen from outside.
    let quads = [
        [0, 2, 3, 1], // z-
        [4, 5, 7, 6], // z+
        [0, 1, 5, 4], // y-
        [2, 6, 7, 3], // y+
        [0, 4, 6, 2], // x-
        [1, 3, 7, 5], // x+
    ];
    let even = |v: usize| v.count_ones() % 2 == 0;
    let mut faces = Vec::with_capacity(12);
    for [a, b, c, d] in quads {
        if even(a) {
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        } else {
            faces.push([a, b, d]);
            faces.push([b, c, d]);
        }
    }
    build(positions, faces)
}

/// Cube `[-0.5, 0.5]^3` with an `n x n` quad grid per side (`12 n^2` faces).
pub fn tessellated_cube(n: usize) -> HalfEdgeMesh {
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    let n_i = n as i64;
    // (origin, u, v) in lattice units with u x v pointing outward.
    let sides: [([i64; 3], [i64; 3], [i64; 3]); 6] = [
        ([0, 0, 0], [0, 1, 0], [1, 0, 0]),
        ([0, 0, n_i], [1, 0, 0], [0, 1, 0]),
        ([0, 0, 0], [1, 0, 0], [0, 0, 1]),
        ([0, n_i, 0], [0, 0, 1], [1, 0, 0]),
        ([0, 0, 0], [0, 0, 1], [0, 1, 0]),
        ([n_i, 0, 0], [0, 1, 0], [0, 0, 1]),
    ];
    for (o, u, v) in sides {
        let mut vid = |i: i64, j: i64| -> usize {
            let key = [0, 1, 2].map(|a| o[a] + i * u[a] + j * v[a]);
            *index.entry(key).or_insert_with(|| {
                positions.push(Vec3::new(
                    key[0] as f64 / n as f64 - 0.5,
                    key[1] as f64 / n as f64 - 0.5,
                    key[2] as f64 / n as f64 - 0.5,
                ));
                positions.len() - 1
            })
        };
        for i in 0..n_i {
            for j in 0..n_i {
                let a = vid(i, j);
                let b = vid(i + 1, j);
                let c = vid(i + 1, j + 1);
                let d = vid(i, j + 1);
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
    }
    build(positions, faces)
}

pub fn tetrahedron() -> HalfEdgeMesh {
    let positions = vec![
        Vec3::new(1.0, 1.0, 1.0),
        Vec3::new(1.0, -1.0, -1.0),
        Vec3::new(-1.0, 1.0, -1.0),
        Vec3::new(-1.0, -1.0, 1.0),
    ];
    build(positions, vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
}

pub fn octahedron() -> HalfEdgeMesh {
    let positions = vec![
        Vec3::x(),
        -Vec3::x(),
        Vec3::y(),
        -Vec3::y(),
        Vec3::z(),
        -Vec3::z(),
    ];
    let faces = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    build(positions, faces)
}

pub fn icosahedron() -> HalfEdgeMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let positions = raw.iter().map(|p| Vec3::from(*p).normalize()).collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    build(positions, faces)
}

fn split_faces(positions: &mut Vec<Vec3>, faces: &[[usize; 3]]) -> Vec<[usize; 3]> {
    let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, positions: &mut Vec<Vec3>| -> usize {
        *mids.entry((a.min(b), a.max(b))).or_insert_with(|| {
            positions.push((positions[a] + positions[b]) * 0.5);
            positions.len() - 1
        })
    };
    let mut out = Vec::with_capacity(faces.len() * 4);
    for &[a, b, c] in faces {
        let ab = mid(a, b, positions);
        let bc = mid(b, c, positions);
        let ca = mid(c, a, positions);
        out.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    out
}

/// Unit icosphere with `20 * 4^level` faces.
pub fn icosphere(level: usize) -> HalfEdgeMesh {
    let ico = icosahedron();
    let mut positions = ico.positions().to_vec();
    let mut faces = ico.faces().to_vec();
    for _ in 0..level {
        faces = split_faces(&mut positions, &faces);
        for p in positions.iter_mut() {
            *p = p.normalize();
        }
    }
    build(positions, faces)
}

/// Random smooth radial bumps, as `(direction, frequency, phase, amplitude)`.
fn random_bumps(rng: &mut ChaCha8Rng, count: usize, amplitude: f64) -> Vec<(Vec3, f64, f64, f64)> {
    (0..count)
        .map(|_| {
            let d = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            (
                d,
                rng.gen_range(2.0..7.0),
                rng.gen_range(0.0..2.0 * PI),
                amplitude * rng.gen_range(0.3..1.0),
            )
        })
        .collect()
}

fn bump_field(bumps: &[(Vec3, f64, f64, f64)], p: &Vec3) -> f64 {
    bumps
        .iter()
        .map(|(d, freq, phase, amp)| amp * (freq * d.dot(p) + phase).sin())
        .sum()
}

/// Icosphere with smooth random radial displacement.
pub fn bumpy_sphere(level: usize, seed: u64) -> HalfEdgeMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps = random_bumps(&mut rng, 5, 0.04);
    icosphere(level).transformed(|p| p * (1.0 + bump_field(&bumps, p)))
}

/// Torus around the z axis with a `nu x nv` quad grid.
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> HalfEdgeMesh {
    let mut positions = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * PI * j as f64 / nv as f64;
            let r = major + minor * v.cos();
            positions.push(Vec3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    build(positions, faces)
}

/// Member `seed` of the synthetic corpus. `level` controls resolution
/// (roughly `1280 * 4^(level-1)` faces for the sphere-based families).
pub fn corpus_mesh(seed: u64, level: usize) -> HalfEdgeMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED);
    let sphere_level = level + 2;
    match seed % 4 {
        0 => {
            let bumps = random_bumps(&mut rng, 6, 0.05);
            icosphere(sphere_level).transformed(|p| p * (1.0 + bump_field(&bumps, p)))
        }
        1 => {
            let axes = Vec3::new(
                rng.gen_range(0.6..1.0),
                rng.gen_range(0.6..1.0),
                rng.gen_range(0.5..0.9),
            );
            let bumps = random_bumps(&mut rng, 4, 0.04);
            icosphere(sphere_level)
                .transformed(|p| p.component_mul(&axes) * (1.0 + bump_field(&bumps, p)))
        }
        2 => {
            // Rounded box: push the sphere towards an L^q ball.
            let q: f64 = rng.gen_range(3.0..5.0);
            let bumps = random_bumps(&mut rng, 3, 0.02);
            icosphere(sphere_level).transformed(|p| {
                let norm_q = (p.x.abs().powf(q) + p.y.abs().powf(q) + p.z.abs().powf(q))
                    .powf(1.0 / q);
                p / norm_q * (1.0 + bump_field(&bumps, p))
            })
        }
        _ => {
            let minor = rng.gen_range(0.3..0.45);
            let bumps = random_bumps(&mut rng, 3, 0.03);
            let n = 12 * (1 << level);
            torus(1.0, minor, 2 * n, n).transformed(|p| {
                // Offset the bump along the local tube normal.
                let ring = Vec3::new(p.x, p.y, 0.0).normalize();
                let normal = (p - ring).normalize();
                p + normal * bump_field(&bumps, p)
            })
        }
    }
}

/// A flat closed "pillow": two coplanar triangulated disks (z = 0) glued
/// along their outer ring. Topologically a sphere.
pub fn flat_pillow(segments: usize) -> HalfEdgeMesh {
    let mut positions = vec![Vec3::zeros(), Vec3::zeros()];
    let ring = |r: f64, i: usize, phase: f64| {
        let t = 2.0 * PI * (i as f64 + phase) / segments as f64;
        Vec3::new(r * t.cos(), r * t.sin() * 0.8, 0.0)
    };
    let inner_top = positions.len();
    positions.extend((0..segments).map(|i| ring(0.5, i, 0.25)));
    let inner_bottom = positions.len();
    positions.extend((0..segments).map(|i| ring(0.45, i, 0.6)));
    let outer = positions.len();
    positions.extend((0..segments).map(|i| ring(1.0, i, 0.0)));

    let mut faces = Vec::new();
    for i in 0..segments {
        let j = (i + 1) % segments;
        // Top side, counter-clockwise seen from +z.
        faces.push([0, inner_top + i, inner_top + j]);
        faces.push([inner_top + i, outer + i, outer + j]);
        faces.push([inner_top + i, outer + j, inner_top + j]);
        // Bottom side, reversed.
        faces.push([1, inner_bottom + j, inner_bottom + i]);
        faces.push([inner_bottom + i, outer + j, outer + i]);
        faces.push([inner_bottom + i, inner_bottom + j, outer + j]);
    }
    build(positions, faces)
}

/// Open planar grid on `[-half, half]^2` at z = 0, normal +z.
pub fn plane_grid(half: f64, n: usize) -> HalfEdgeMesh {
    let mut positions = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        for j in 0..=n {
            positions.push(Vec3::new(
                -half + 2.0 * half * i as f64 / n as f64,
                -half + 2.0 * half * j as f64 / n as f64,
                0.0,
            ));
        }
    }
    let id = |i: usize, j: usize| i * (n + 1) + j;
    let mut faces = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    build(positions, faces)
}

/// Same connectivity with every face reversed.
pub fn flipped(mesh: &HalfEdgeMesh) -> HalfEdgeMesh {
    let faces = mesh.faces().iter().map(|&[a, b, c]| [a, c, b]).collect();
    build(mesh.positions().to_vec(), faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_solids_are_valid() {
        for (name, m) in [
            ("cube", cube()),
            ("tet", tetrahedron()),
            ("oct", octahedron()),
            ("ico", icosahedron()),
            ("icosphere", icosphere(2)),
            ("tess cube", tessellated_cube(16)),
            ("torus", torus(1.0, 0.3, 24, 12)),
            ("pillow", flat_pillow(8)),
        ] {
            let r = m.validate();
            assert!(r.is_valid(), "{name}: {r:?}");
        }
        assert_eq!(tessellated_cube(16).num_faces(), 3072);
        assert_eq!(torus(1.0, 0.3, 24, 12).genus(), 1);
        assert_eq!(icosphere(2).num_faces(), 320);
    }

    #[test]
    fn corpus_meshes_are_valid() {
        for seed in 0..8 {
            let m = corpus_mesh(seed, 1);
            let r = m.validate();
            assert!(r.is_valid(), "seed {seed}: {r:?}");
            let normals_ok = m.vertex_normals().is_ok();
            assert!(normals_ok);
        }
    }

    #[test]
    fn solids_face_outward() {
        for m in [cube(), octahedron(), icosphere(1), tessellated_cube(3)] {
            let c: Vec3 = m.positions().iter().sum::<Vec3>() / m.num_vertices() as f64;
            for f in 0..m.num_faces() {
                let g = m.face_geometry(f).unwrap();
                assert!(g.normal.dot(&(g.centroid - c)) > 0.0);
            }
        }
    }
}

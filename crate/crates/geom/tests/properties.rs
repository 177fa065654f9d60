use nalgebra::{Rotation3, Unit};
use npmesh_geom::baselines::SubdivisionScheme;
use npmesh_geom::bvh::closest_point_brute_force;
use npmesh_geom::features::{face_features_13, SHAPE_DIM};
use npmesh_geom::lod::{build_hierarchy, load_hierarchy, save_hierarchy, HierarchyOptions};
use npmesh_geom::metrics::{deviation, symmetric_deviation};
use npmesh_geom::{obj, shapes, BvhIndex, HalfEdgeMesh, Vec3};
use proptest::prelude::*;

fn rigid(axis: [f64; 3], angle: f64, shift: [f64; 3]) -> impl Fn(&Vec3) -> Vec3 {
    let axis = Vec3::from(axis) + Vec3::new(1e-3, 0.0, 0.0);
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
    let t = Vec3::from(shift);
    move |p| r * p + t
}

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn valid_meshes_have_two_faces_per_edge_and_even_euler(seed in 0u64..64, level in 0usize..2) {
        let m = shapes::corpus_mesh(seed, level);
        let r = m.validate();
        prop_assert!(r.is_valid());
        prop_assert_eq!(2 * m.num_edges(), 3 * m.num_faces());
        prop_assert_eq!(m.euler_characteristic() % 2, 0);
    }

    #[test]
    fn normalization_is_idempotent(seed in 0u64..64, axis in vec3(), angle in 0.0f64..6.0, shift in vec3(), scale in 0.1f64..20.0) {
        let m = shapes::corpus_mesh(seed, 0).transformed(|p| rigid(axis, angle, shift)(p) * scale);
        let (n, _) = m.normalize_to_unit_cube().unwrap();
        let (lo, hi) = n.bbox();
        prop_assert!(((hi - lo).max() - 1.0).abs() < 1e-12);
        prop_assert!((lo + hi).norm() < 1e-12);
        let (_, again) = n.normalize_to_unit_cube().unwrap();
        prop_assert!((again.scale - 1.0).abs() < 1e-9);
        prop_assert!(Vec3::from(again.translation).norm() < 1e-9);
    }

    #[test]
    fn bvh_matches_brute_force(seed in 0u64..32, q in proptest::collection::vec(vec3(), 20)) {
        let m = shapes::corpus_mesh(seed, 0);
        let bvh = BvhIndex::build(&m);
        for p in q {
            let p = Vec3::from(p) * 1.5;
            prop_assert_eq!(bvh.closest_point(&p).distance, closest_point_brute_force(&m, &p).distance);
        }
    }

    #[test]
    fn obj_round_trip_keeps_topology_and_positions(seed in 0u64..64, axis in vec3(), angle in 0.0f64..6.0) {
        let m = shapes::corpus_mesh(seed, 0).transformed(rigid(axis, angle, [0.0; 3]));
        let text = obj::write_obj_string(&m).unwrap();
        let (back, _) = obj::read_obj(text.as_bytes()).unwrap();
        prop_assert_eq!(back.faces(), m.faces());
        for (a, b) in back.positions().iter().zip(m.positions()) {
            prop_assert!((a - b).norm() <= 1e-8 * b.norm().max(1.0));
        }
        prop_assert_eq!(obj::write_obj_string(&back).unwrap(), text);
    }

    #[test]
    fn features_split_into_invariant_shape_and_equivariant_pose(seed in 0u64..32, axis in vec3(), angle in 0.0f64..6.0, shift in vec3()) {
        let m = shapes::corpus_mesh(seed, 0);
        let motion = rigid(axis, angle, shift);
        let moved = m.transformed(&motion);
        let rot = rigid(axis, angle, [0.0; 3]);
        let (a, b) = (face_features_13(&m).unwrap(), face_features_13(&moved).unwrap());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            for k in 0..SHAPE_DIM {
                prop_assert!((ra[k] - rb[k]).abs() < 1e-9);
            }
            let c = motion(&Vec3::new(ra[7], ra[8], ra[9]));
            let n = rot(&Vec3::new(ra[10], ra[11], ra[12]));
            prop_assert!((c - Vec3::new(rb[7], rb[8], rb[9])).norm() < 1e-9);
            prop_assert!((n - Vec3::new(rb[10], rb[11], rb[12])).norm() < 1e-9);
        }
    }

    #[test]
    fn subdivision_commutes_with_rigid_motion_and_keeps_topology(seed in 0u64..32, axis in vec3(), angle in 0.0f64..6.0, shift in vec3()) {
        let m = shapes::corpus_mesh(seed, 0);
        let motion = rigid(axis, angle, shift);
        for scheme in SubdivisionScheme::ALL {
            let a = scheme.apply(&m, 1).unwrap().transformed(&motion);
            let b = scheme.apply(&m.transformed(&motion), 1).unwrap();
            for (p, q) in a.positions().iter().zip(b.positions()) {
                prop_assert!((p - q).norm() < 1e-9);
            }
            let v = b.validate();
            prop_assert!(v.is_watertight && v.is_valid());
            prop_assert_eq!(b.genus(), m.genus());
            if scheme == SubdivisionScheme::Butterfly {
                let base = m.transformed(&motion);
                prop_assert_eq!(&b.positions()[..m.num_vertices()], base.positions());
            }
        }
    }

    #[test]
    fn deviation_is_deterministic_and_bounded(a in 0u64..32, b in 0u64..32, n in 100usize..3000, seed in 0u64..1000) {
        let (x, y) = (shapes::corpus_mesh(a, 0), shapes::corpus_mesh(b, 0));
        let d = deviation(&x, &y, n, seed);
        prop_assert_eq!(d, deviation(&x, &y, n, seed));
        prop_assert!(d.d_pm >= 0.0 && d.d_pm_stderr >= 0.0);
        prop_assert!((0.0..=180.0).contains(&d.d_normal));
        prop_assert!(symmetric_deviation(&x, &y, n, seed).d_pm >= 0.0);
        prop_assert!(deviation(&x, &x, n, seed).d_pm < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn hierarchy_invariants(seed in 0u64..64, target in 40usize..200, levels in 1usize..4, dseed in 0u64..1000, jitter in 0.0f64..0.3) {
        let m = shapes::corpus_mesh(seed, 1);
        let opts = HierarchyOptions { target_faces: target, levels, seed: dseed, jitter };
        let h = build_hierarchy(&m, &opts).unwrap();
        prop_assert_eq!(h.check_invariants(), Ok(()));
        let coarse = h.level(0).mesh().unwrap();
        let r = coarse.validate();
        prop_assert_eq!(r.connected_component_count, m.validate().connected_component_count);
        prop_assert_eq!(coarse.genus(), m.genus());
        prop_assert!(coarse.num_faces() <= target + 2);
        for (i, parents) in h.parents.iter().enumerate() {
            let mut count = vec![0usize; h.levels[i].faces.len()];
            for &p in parents {
                count[p] += 1;
            }
            prop_assert!(count.iter().all(|&c| c == 4));
        }
        let again = build_hierarchy(&m, &opts).unwrap();
        prop_assert_eq!(&again.levels, &h.levels);
        prop_assert_eq!(&again.coarse_points, &h.coarse_points);
        let bvh = BvhIndex::build(&m);
        let tol = 1e-7 * m.bbox_diagonal();
        prop_assert!(h.finest().positions.iter().all(|p| bvh.closest_point(p).distance <= tol));
    }
}

#[test]
fn cached_hierarchy_round_trips() {
    let m = shapes::corpus_mesh(5, 1);
    let h = build_hierarchy(&m, &HierarchyOptions { target_faces: 120, levels: 2, seed: 3, jitter: 0.0 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_hierarchy(&h, dir.path()).unwrap();
    let back = load_hierarchy(dir.path()).unwrap();
    assert_eq!(back.check_invariants(), Ok(()));
    assert_eq!(back.parents, h.parents);
    assert_eq!(back.options, h.options);
    for (a, b) in back.levels.iter().zip(&h.levels) {
        assert_eq!(a.faces, b.faces);
        for (p, q) in a.positions.iter().zip(&b.positions) {
            assert!((p - q).norm() < 1e-8);
        }
    }
}

#[test]
fn subdivided_meshes_are_valid_inputs_again() {
    let m: HalfEdgeMesh = shapes::torus(1.0, 0.3, 12, 8);
    for scheme in SubdivisionScheme::ALL {
        let out = scheme.apply(&m, 2).unwrap();
        assert!(out.validate().is_valid());
        assert_eq!(out.genus(), 1);
        assert_eq!(out.num_faces(), 16 * m.num_faces());
    }
}

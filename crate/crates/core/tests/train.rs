mod common;

use std::path::PathBuf;

use npmesh_core::net::FeatureSet;
use npmesh_core::train::augment::augment_levels;
use npmesh_core::train::loss::{corr_value, jacobian_value, loss_sparsity, sparsity_value, total_loss};
use npmesh_core::train::trainer::CSV_HEADER;
use npmesh_core::train::{
    build_manifest, train, train_with, AxisRotation, CorrNorm, LossBreakdown, LossWeights, Manifest, Sample, Split,
    TrainConfig, Trainer,
};
use npmesh_core::ErrorKind;
use npmesh_geom::features::face_features_13;
use npmesh_geom::{obj, shapes, HalfEdgeMesh, Vec3};
use npmesh_grad::{Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn faces_of(s: &Sample) -> Vec<Vec<[usize; 3]>> {
    (1..=s.depth()).map(|i| s.topology.level(i).faces.to_vec()).collect()
}

#[test]
fn corr_examples() {
    let truth: Vec<Vec3> = (0..100).map(|i| Vec3::new(i as f64, 0.5, -1.0)).collect();
    assert_eq!(corr_value(&[truth.clone()], &[truth.clone()], CorrNorm::VertexMean).unwrap(), 0.0);
    let mut pred = truth.clone();
    pred[17].x += 0.003;
    let v = corr_value(&[pred], &[truth.clone()], CorrNorm::VertexMean).unwrap();
    assert!((v - 3e-5).abs() < 1e-15);

    let s = common::sample(0, 60, 2);
    let t = Vec3::new(0.01, -0.02, 0.015);
    let moved: Vec<Vec<Vec3>> = s.levels[1..].iter().map(|l| l.iter().map(|p| p + t).collect()).collect();
    let v = corr_value(&moved, &s.levels[1..], CorrNorm::VertexMean).unwrap();
    assert!((v - 2.0 * t.norm()).abs() < 1e-12);
    let f = corr_value(&moved, &s.levels[1..], CorrNorm::Frobenius).unwrap();
    let want: f64 = s.levels[1..].iter().map(|l| (l.len() as f64).sqrt() * t.norm() / l.len() as f64).sum();
    assert!((f - want).abs() < 1e-12);
}

#[test]
fn jacobian_examples() {
    let s = common::sample(1, 60, 2);
    let truth = &s.levels[1..];
    let faces = faces_of(&s);
    assert_eq!(jacobian_value(truth, truth, &faces).unwrap(), 0.0);

    let scaled: Vec<Vec<Vec3>> = truth.iter().map(|l| l.iter().map(|p| p * 2.0).collect()).collect();
    let v = jacobian_value(&scaled, truth, &faces).unwrap();
    assert!((v - 2.0 * 3f64.sqrt()).abs() < 1e-9, "{v}");

    let (c, sn) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
    let rotated: Vec<Vec<Vec3>> = truth
        .iter()
        .map(|l| l.iter().map(|p| Vec3::new(c * p.x - sn * p.y, sn * p.x + c * p.y, p.z)).collect())
        .collect();
    let per_face = (4.0 * (1.0 - c)).sqrt();
    let v = jacobian_value(&rotated, truth, &faces).unwrap();
    assert!((v - 2.0 * per_face).abs() < 1e-9);

    let mut degenerate = truth.to_vec();
    let f0 = faces[0][0];
    degenerate[0][f0[1]] = degenerate[0][f0[0]];
    assert!(jacobian_value(truth, &degenerate, &faces).is_err());
}

#[test]
fn sparsity_examples() {
    let mut f = FeatureSet::zeros(&[400]);
    assert_eq!(sparsity_value(&f), 0.0);
    f.levels[0][123] = [1.0; 8];
    assert!((sparsity_value(&f) - 0.02).abs() < 1e-15);
    let mut t = Tape::new();
    let mut data = vec![0.0; 400 * 8];
    data[123 * 8..124 * 8].fill(1.0);
    let v = t.constant(Tensor::matrix(400, 8, data.clone()).unwrap());
    let l = loss_sparsity(&mut t, &[v]).unwrap();
    assert_eq!(t.value(l).item(), sparsity_value(&f));
    let scaled = t.constant(Tensor::matrix(400, 8, data.iter().map(|x| x * 2.5).collect()).unwrap());
    let l2 = loss_sparsity(&mut t, &[scaled]).unwrap();
    assert!((t.value(l2).item() - 2.5 * 0.02).abs() < 1e-15);
}

#[test]
fn total_examples() {
    let w = LossWeights::default();
    assert_eq!((w.alpha, w.beta), (1.0, 0.1));
    assert!((LossBreakdown::new(1.0, 2.0, 3.0, w).total - 3.3).abs() < 1e-12);
    let w0 = LossWeights { alpha: 1.0, beta: 0.0 };
    assert_eq!(LossBreakdown::new(1.0, 2.0, 3.0, w0).total, LossBreakdown::new(1.0, 2.0, 300.0, w0).total);
    let mut t = Tape::new();
    let v: Vec<_> = [0.5, 0.25, 4.0].iter().map(|&x| t.constant(Tensor::scalar(x))).collect();
    let tot = total_loss(&mut t, v[0], v[1], v[2], w).unwrap();
    assert_eq!(t.value(tot).item(), LossBreakdown::new(0.5, 0.25, 4.0, w).total);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn losses_are_non_negative(seed in 0u64..500, scale in 0.0f64..0.05) {
        let s = common::sample(2, 40, 1);
        let mut rng = common::rng(seed);
        let pred: Vec<Vec<Vec3>> = s.levels[1..]
            .iter()
            .map(|l| l.iter().map(|p| p + Vec3::new(rng.gen_range(-scale..=scale), rng.gen_range(-scale..=scale), 0.0)).collect())
            .collect();
        prop_assert!(corr_value(&pred, &s.levels[1..], CorrNorm::VertexMean).unwrap() >= 0.0);
        prop_assert!(jacobian_value(&pred, &s.levels[1..], &faces_of(&s)).unwrap() >= 0.0);
    }

    #[test]
    fn rotations_compose_within_the_group(a in 0usize..24, b in 0usize..24) {
        let all = AxisRotation::all();
        let c = all[a].compose(&all[b]);
        prop_assert!(all.contains(&c));
    }
}

#[test]
fn rotation_preserves_shape_features() {
    let m = shapes::bumpy_sphere(1, 5);
    let before = face_features_13(&m).unwrap();
    for r in AxisRotation::all() {
        let lv = augment_levels(&[m.positions().to_vec()], &r);
        let rm = HalfEdgeMesh::new(lv[0].clone(), m.faces().to_vec()).unwrap();
        let after = face_features_13(&rm).unwrap();
        for f in 0..m.num_faces() {
            for k in 0..7 {
                assert!((before.rows[f][k] - after.rows[f][k]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn augmentation_is_seeded() {
    let mut a = common::rng(9);
    let mut b = common::rng(9);
    let ra: Vec<_> = (0..20).map(|_| AxisRotation::random(&mut a)).collect();
    let rb: Vec<_> = (0..20).map(|_| AxisRotation::random(&mut b)).collect();
    assert_eq!(ra, rb);
    assert!(ra.iter().all(|r| r.determinant() == 1));
}

fn write_corpus(dir: &std::path::Path, n: u64) -> Vec<PathBuf> {
    (0..n)
        .map(|i| {
            let p = dir.join(format!("mesh_{i:02}.obj"));
            obj::save_obj(&shapes::corpus_mesh(i, 1), &p).unwrap();
            p
        })
        .collect()
}

#[test]
fn manifest_examples() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 10);
    obj::save_obj(&shapes::plane_grid(1.0, 3), &dir.path().join("open.obj")).unwrap();
    let m = build_manifest(dir.path(), 5).unwrap();
    assert_eq!(m.entries.len(), 10);
    assert!(m.entries.iter().all(|e| !e.path.ends_with("open.obj")));
    assert_eq!(m.split(Split::Train).count(), 8);
    assert_eq!(m.split(Split::Val).count(), 1);
    assert_eq!(m.split(Split::Test).count(), 1);
    assert_eq!(m.to_jsonl().unwrap(), build_manifest(dir.path(), 5).unwrap().to_jsonl().unwrap());
    assert!(m.entries.iter().all(|e| e.seeds.len() == 10));
    let path = dir.path().join("manifest.jsonl");
    m.save(&path).unwrap();
    assert_eq!(Manifest::load(&path).unwrap(), m);

    let empty = tempfile::tempdir().unwrap();
    assert!(build_manifest(empty.path(), 0).is_err());
}

fn small_config() -> TrainConfig {
    TrainConfig {
        coarse_faces: 60,
        levels: 2,
        epochs: 3,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

fn small_trainer(cfg: TrainConfig) -> Trainer {
    let train = vec![common::sample(3, 60, 2), common::sample(4, 60, 2)];
    let val = vec![common::sample(5, 60, 2)];
    Trainer::new(cfg, train, val).unwrap()
}

#[test]
fn training_is_deterministic_and_logs_decomposition() {
    let mut a = small_trainer(small_config());
    let mut b = small_trainer(small_config());
    let ra = a.run_epoch().unwrap();
    let rb = b.run_epoch().unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.model, b.model);
    for (_, l) in &ra {
        assert_eq!(l.total, LossBreakdown::new(l.corr, l.jacobian, l.sparsity, a.cfg.weights()).total);
    }
    assert_eq!(a.validate().unwrap(), b.validate().unwrap());
}

#[test]
fn parallel_accumulation_matches_serial() {
    let cfg = TrainConfig {
        grad_accum: 2,
        ..small_config()
    };
    let mut a = small_trainer(cfg.clone());
    let r1 = a.run_epoch().unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut b = small_trainer(cfg);
    let r2 = pool.install(|| b.run_epoch().unwrap());
    assert_eq!(r1, r2);
    assert_eq!(a.model, b.model);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let full_dir = tempfile::tempdir().unwrap();
    let full = train_with(small_trainer(small_config()), full_dir.path(), false).unwrap();
    assert_eq!(full.state.step, 6);

    let dir = tempfile::tempdir().unwrap();
    let cut = TrainConfig {
        max_steps: Some(3),
        ..small_config()
    };
    let partial = train_with(small_trainer(cut), dir.path(), false).unwrap();
    assert_eq!(partial.state.step, 3);
    let resumed = train_with(small_trainer(small_config()), dir.path(), true).unwrap();
    assert_eq!(resumed.state, full.state);
    for f in ["loss.csv", "last.npmw", "best.npmw", "state.json"] {
        assert_eq!(
            std::fs::read(full_dir.path().join(f)).unwrap(),
            std::fs::read(dir.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = std::fs::read_to_string(&full.loss_csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.len() == 6));
    let with_val: Vec<&str> = rows.iter().filter(|r| !r[5].is_empty()).map(|r| r[0]).collect();
    assert_eq!(with_val, vec!["1", "3", "5"]);
}

#[test]
fn non_finite_loss_aborts_with_numerical_error() {
    let mut s = common::sample(6, 60, 2);
    s.levels[2][5] = Vec3::new(f64::NAN, 0.0, 0.0);
    let mut t = Trainer::new(small_config(), vec![s], vec![]).unwrap();
    let e = t.train_step(&[0]).unwrap_err();
    assert_eq!(e.kind(), ErrorKind::Numerical);
    assert!(e.to_string().contains("corpus6"));
}

#[test]
fn config_validation_and_defaults() {
    let d = TrainConfig::default();
    assert_eq!((d.alpha, d.beta, d.lr, d.weight_decay), (1.0, 0.1, 1e-3, 1e-6));
    assert_eq!((d.coarse_faces, d.levels), (400, 3));
    let parsed: TrainConfig = serde_json::from_str(r#"{"beta": 0.0, "levels": 2}"#).unwrap();
    assert_eq!(parsed.beta, 0.0);
    assert_eq!(parsed.alpha, 1.0);
    assert!(TrainConfig { lr: 0.0, ..d.clone() }.validate().is_err());
    assert!(TrainConfig { alpha: -1.0, ..d }.validate().is_err());
}

#[test]
fn train_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_corpus(dir.path(), 3);
    let m = Manifest::from_paths(&paths, 1).unwrap();
    let cfg = TrainConfig {
        decimations: 2,
        epochs: 1,
        ..small_config()
    };
    let out = dir.path().join("run");
    let o = train(&m, &cfg, &out, false).unwrap();
    assert!(o.best.exists() && o.last.exists());
    let n_train = m.split(Split::Train).count() as u64;
    assert_eq!(o.state.step, 2 * n_train);
    let saved: TrainConfig = serde_json::from_slice(&std::fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved, cfg);
}

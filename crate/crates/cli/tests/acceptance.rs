//! End-to-end acceptance checks on a small synthetic corpus. Each test prints
//! one `PASS`/`FAIL` line.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use npmesh_core::bench::{run_benchmark, BenchConfig, Method};
use npmesh_core::codec::{self, compression_ratio, ProgressiveStream, Ranking};
use npmesh_core::gradcheck;
use npmesh_core::report::StreamSizes;
use npmesh_core::train::dataset::samples_for_mesh;
use npmesh_core::train::{LossBreakdown, Sample, TrainConfig, Trainer};
use npmesh_core::Model;
use npmesh_geom::baselines::{butterfly_subdivide, loop_beta, loop_subdivide, midpoint_subdivide, SubdivisionScheme};
use npmesh_geom::lod::{build_hierarchy, HierarchyOptions};
use npmesh_geom::metrics::{d_normal, d_pm, deviation};
use npmesh_geom::{shapes, BvhIndex, HalfEdgeMesh, Vec3};

const COARSE: usize = 200;
const LEVELS: usize = 2;
const OVERFIT_STEPS: u64 = 500;
const TOY_STEPS: u64 = 5000;
const TWIN_STEPS: u64 = 1000;
const METRIC_SAMPLES: usize = 100_000;

fn report(id: u32, name: &str, pass: bool, detail: impl AsRef<str>, elapsed: Duration) {
    let line = format!(
        "criterion {id:>2} {name:<28} {} ({}; {:.1}s)\n",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref(),
        elapsed.as_secs_f64()
    );
    // Written to the raw handle so the line shows up without --nocapture.
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn toy_mesh(seed: u64) -> HalfEdgeMesh {
    shapes::corpus_mesh(seed, 1).normalize_to_unit_cube().unwrap().0
}

fn hierarchy_sample(mesh: &HalfEdgeMesh, name: &str) -> Sample {
    let opts = HierarchyOptions {
        target_faces: COARSE,
        levels: LEVELS,
        seed: 0,
        jitter: 0.0,
    };
    Sample::from_hierarchy(name, &build_hierarchy(mesh, &opts).unwrap()).unwrap()
}

fn toy_config(steps: u64) -> TrainConfig {
    TrainConfig {
        epochs: u64::MAX,
        max_steps: Some(steps),
        coarse_faces: COARSE,
        levels: LEVELS,
        ..TrainConfig::default()
    }
}

fn run(trainer: &mut Trainer) -> Vec<LossBreakdown> {
    let mut rows = Vec::new();
    while !trainer.finished() {
        rows.extend(trainer.run_epoch().unwrap().into_iter().map(|r| r.1));
    }
    rows
}

struct Overfit {
    mesh: HalfEdgeMesh,
    sample: Sample,
    model: Model,
    curve: Vec<LossBreakdown>,
    elapsed: Duration,
}

fn overfit() -> &'static Overfit {
    static CELL: OnceLock<Overfit> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let mesh = toy_mesh(0);
        let sample = hierarchy_sample(&mesh, "overfit");
        let cfg = TrainConfig {
            augment: false,
            decimations: 1,
            jitter: 0.0,
            ..toy_config(OVERFIT_STEPS)
        };
        let mut trainer = Trainer::new(cfg, vec![sample.clone()], Vec::new()).unwrap();
        let curve = run(&mut trainer);
        Overfit {
            mesh,
            sample,
            model: trainer.model,
            curve,
            elapsed: t.elapsed(),
        }
    })
}

fn train_toy(seeds: std::ops::Range<u64>, decimations: u64, cfg: TrainConfig) -> Model {
    let base = HierarchyOptions {
        target_faces: COARSE,
        levels: LEVELS,
        seed: 0,
        jitter: cfg.jitter,
    };
    let mut train = Vec::new();
    for s in seeds {
        let dec: Vec<u64> = (1..=decimations).map(|d| s * 7 + d).collect();
        train.extend(samples_for_mesh(&format!("toy{s}"), &toy_mesh(s), &dec, &base).unwrap());
    }
    let mut trainer = Trainer::new(cfg, train, Vec::new()).unwrap();
    run(&mut trainer);
    trainer.model
}

fn toy_model() -> &'static (Model, Duration) {
    static CELL: OnceLock<(Model, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        (train_toy(0..12, 2, toy_config(TOY_STEPS)), t.elapsed())
    })
}

#[test]
fn criterion_01_gradient_integrity() {
    let t = Instant::now();
    let suite = gradcheck::run_suite(gradcheck::DEFAULT_TOLERANCE, 0).unwrap();
    let broken = gradcheck::broken_fixture(gradcheck::DEFAULT_TOLERANCE, 0).unwrap();
    let worst = suite.layers.iter().map(|l| l.max_rel_err).fold(0.0, f64::max);
    let elapsed = t.elapsed();
    let pass = suite.passed() && suite.layers.len() >= 15 && !broken.passed && elapsed < Duration::from_secs(60);
    report(
        1,
        "gradient integrity",
        pass,
        format!("{} layers, worst rel err {worst:.2e}, broken fixture {:.2e}", suite.layers.len(), broken.max_rel_err),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_02_zero_init_identity() {
    let t = Instant::now();
    let mut pass = true;
    for (seed, levels) in [(3u64, 2usize), (5, 3)] {
        let mesh = toy_mesh(seed);
        let h = build_hierarchy(
            &mesh,
            &HierarchyOptions {
                target_faces: COARSE,
                levels,
                seed,
                jitter: 0.0,
            },
        )
        .unwrap();
        let sample = Sample::from_hierarchy("zero", &h).unwrap();
        let model = Model::new(levels, seed).unwrap();
        let stream = ProgressiveStream::parse(&codec::encode(&model, &sample, 0, Ranking::Magnitude).unwrap(), None).unwrap();
        let decoded = codec::decode_stream(&stream, &model, levels).unwrap();
        let coarse = HalfEdgeMesh::new(stream.coarse_vertices(), stream.faces()).unwrap();
        let mid = midpoint_subdivide(&coarse, levels).unwrap();
        pass &= decoded.positions() == mid.positions() && decoded.faces() == mid.faces();
    }
    report(2, "zero-init identity", pass, "decode(k=0) vs midpoint, L=2 and L=3", t.elapsed());
    assert!(pass);
}

#[test]
fn criterion_03_hierarchy_invariants() {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mesh = shapes::corpus_mesh(seed, 1);
        let opts = HierarchyOptions {
            target_faces: COARSE,
            levels: 3,
            seed,
            jitter: 0.0,
        };
        let h = build_hierarchy(&mesh, &opts).unwrap();
        for i in 1..h.levels.len() {
            let (prev, cur) = (&h.levels[i - 1], &h.levels[i]);
            let edges = HalfEdgeMesh::new(prev.positions.clone(), prev.faces.clone()).unwrap().num_edges();
            if cur.faces.len() != 4 * prev.faces.len() || cur.positions.len() != prev.positions.len() + edges {
                failures.push(format!("mesh {seed} level {i} counts"));
            }
        }
        if h.level(0).mesh().unwrap().genus() != mesh.genus() {
            failures.push(format!("mesh {seed} genus"));
        }
        let bvh = BvhIndex::build(&mesh);
        let tol = 1e-7 * mesh.bbox_diagonal();
        for p in &h.finest().positions {
            let d = bvh.closest_point(p).distance;
            worst = worst.max(d / mesh.bbox_diagonal());
            if d > tol {
                failures.push(format!("mesh {seed} off-surface vertex {d:e}"));
                break;
            }
        }
    }
    let pass = failures.is_empty();
    report(
        3,
        "hierarchy invariants",
        pass,
        format!("20 meshes, worst distance {worst:.1e} x diagonal {}", failures.join("; ")),
        t.elapsed(),
    );
    assert!(pass, "{failures:?}");
}

#[test]
fn criterion_04_overfit_convergence() {
    let o = overfit();
    let first = o.curve[0].corr;
    let last = o.curve.last().unwrap().corr;
    let drop = 1.0 - last / first;
    let pass = o.curve.len() as u64 == OVERFIT_STEPS && drop >= 0.9;
    report(
        4,
        "overfit convergence",
        pass,
        format!("L_corr {first:.5} -> {last:.5}, drop {:.1}% over {} steps", 100.0 * drop, o.curve.len()),
        o.elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_05_progressive_monotonicity() {
    let o = overfit();
    let t = Instant::now();
    let total = o.model.encode(&o.sample.topology, &o.sample.levels).unwrap().total();
    let d = |k: usize| {
        let bytes = codec::encode(&o.model, &o.sample, k, Ranking::Magnitude).unwrap();
        let pred = codec::decode(&bytes, &o.model, None, LEVELS).unwrap();
        deviation(&pred, &o.mesh, METRIC_SAMPLES, 17).d_pm
    };
    let (d0, d40, dall) = (d(0), d(40), d(total));
    let pass = dall <= 1.05 * d40 && d40 <= 1.05 * d0;
    report(
        5,
        "progressive monotonicity",
        pass,
        format!("d_pm k=0 {d0:.6}, k=40 {d40:.6}, k={total} {dall:.6}"),
        t.elapsed(),
    );
    assert!(pass);
}

fn near_zero_fraction(model: &Model, samples: &[Sample]) -> f64 {
    let (mut small, mut all) = (0usize, 0usize);
    for s in samples {
        let f = model.encode(&s.topology, &s.levels).unwrap();
        for row in f.levels.iter().flatten() {
            let n = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            small += usize::from(n < 1e-3);
            all += 1;
        }
    }
    small as f64 / all as f64
}

#[test]
fn criterion_06_sparsity_effect() {
    let t = Instant::now();
    let twin = |beta: f64| {
        let cfg = TrainConfig {
            beta,
            ..toy_config(TWIN_STEPS)
        };
        train_toy(20..30, 1, cfg)
    };
    let sparse = twin(0.1);
    let dense = twin(0.0);
    let samples: Vec<Sample> = (20..30).map(|s| hierarchy_sample(&toy_mesh(s), "twin")).collect();
    let (a, b) = (near_zero_fraction(&sparse, &samples), near_zero_fraction(&dense, &samples));
    let pass = a > b;
    report(
        6,
        "sparsity effect",
        pass,
        format!("near-zero faces: beta=0.1 {:.1}%, beta=0 {:.1}%", 100.0 * a, 100.0 * b),
        t.elapsed(),
    );
    assert!(pass);
}

#[test]
fn criterion_07_codec_exactness() {
    let (model, _) = toy_model();
    let t = Instant::now();
    let mesh = toy_mesh(101);
    let sample = hierarchy_sample(&mesh, "codec");
    let features = model.encode(&sample.topology, &sample.levels).unwrap();
    let total = features.total();
    let bytes = codec::encode(model, &sample, total, Ranking::Magnitude).unwrap();
    let stream = ProgressiveStream::parse(&bytes, None).unwrap();
    let (back, _) = stream.features(&features.counts());
    let exact = back.levels.iter().flatten().zip(features.levels.iter().flatten()).all(|(a, b)| a.map(f32::to_bits) == b.map(f32::to_bits));
    let (v, v0) = (mesh.num_vertices(), stream.coarse_positions.len());
    let mut ratio_ok = true;
    for k in [0, 1, 40, 400, total] {
        let sizes = StreamSizes {
            original_vertices: v,
            coarse_vertices: v0,
            records: k,
        };
        let oracle = (3 * v) as f64 / (3 * v0 + 8 * k) as f64;
        ratio_ok &= (sizes.ratio() - oracle).abs() <= f64::EPSILON * oracle && compression_ratio(v, v0, k) == sizes.ratio();
    }
    let mut prefixes = 0;
    for k in 0..=total {
        let len = codec::prefix_len(&stream, k);
        if codec::decode(&bytes, model, Some(len), LEVELS).is_ok() {
            prefixes += 1;
        }
    }
    let pass = exact && ratio_ok && prefixes == total + 1 && stream.to_bytes() == bytes;
    report(
        7,
        "codec exactness",
        pass,
        format!("bit-exact {exact}, CR formula {ratio_ok}, {prefixes}/{} prefixes decode", total + 1),
        t.elapsed(),
    );
    assert!(pass);
}

#[test]
fn criterion_08_metric_calibration() {
    let t = Instant::now();
    let a = shapes::corpus_mesh(4, 1);
    let self_d = d_pm(&a, &a, METRIC_SAMPLES, 0);
    let s = shapes::icosphere(4);
    let grown = s.transformed(|p| p * 1.001);
    let sphere = d_pm(&grown, &s, METRIC_SAMPLES, 1);
    let plane = shapes::plane_grid(1.0, 4);
    let r = 5f64.to_radians();
    let tilted = plane.transformed(|p| Vec3::new(p.x * r.cos(), p.y, p.x * r.sin()));
    let angle = d_normal(&tilted, &plane, METRIC_SAMPLES, 2);
    let pass = self_d < 1e-9 && (sphere - 0.001).abs() <= 0.05 * 0.001 && (angle - 5.0).abs() <= 0.01;
    report(
        8,
        "metric calibration",
        pass,
        format!("self {self_d:.1e}, spheres {sphere:.6}, planes {angle:.4} deg"),
        t.elapsed(),
    );
    assert!(pass);
}

#[test]
fn criterion_09_baseline_correctness() {
    let t = Instant::now();
    let beta = loop_beta(6) == 1.0 / 16.0;
    let m = shapes::corpus_mesh(2, 0);
    let fly = butterfly_subdivide(&m, 2).unwrap();
    let fixed = fly.positions()[..m.num_vertices()] == *m.positions();
    let mut watertight = true;
    let mut planar = true;
    let pillow = shapes::flat_pillow(6);
    for scheme in [SubdivisionScheme::Loop, SubdivisionScheme::Butterfly] {
        let out = scheme.apply(&m, 2).unwrap();
        let v = out.validate();
        watertight &= v.is_watertight && v.is_valid();
        planar &= scheme.apply(&pillow, 2).unwrap().positions().iter().all(|p| p.z == 0.0);
    }
    let ball = loop_subdivide(&shapes::icosahedron(), 3).unwrap();
    let c: Vec3 = ball.positions().iter().sum::<Vec3>() / ball.num_vertices() as f64;
    let radii: Vec<f64> = ball.positions().iter().map(|p| (p - c).norm()).collect();
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    let spread = radii.iter().map(|r| (r - mean).abs() / mean).fold(0.0, f64::max);
    let pass = beta && fixed && watertight && planar && spread < 0.02;
    report(
        9,
        "baseline correctness",
        pass,
        format!("beta(6) {beta}, butterfly fixed {fixed}, watertight {watertight}, planar {planar}, radial {:.2}%", 100.0 * spread),
        t.elapsed(),
    );
    assert!(pass);
}

#[test]
fn criterion_10_equal_cr_superiority() {
    let (model, train_time) = toy_model();
    let t = Instant::now();
    let held: Vec<(String, HalfEdgeMesh)> = (100..110).map(|s| (format!("held{s}"), toy_mesh(s))).collect();
    let cfg = BenchConfig {
        methods: vec![Method::Neural, Method::Midpoint],
        budgets: vec![0],
        coarse_faces: COARSE,
        seed: 0,
        samples: METRIC_SAMPLES,
        ranking: Ranking::Magnitude,
    };
    let rows = run_benchmark(&held, Some(model), &cfg).unwrap();
    let mut wins = 0;
    for (name, _) in &held {
        let get = |m: Method| rows.iter().find(|r| &r.mesh == name && r.method == m).unwrap();
        let (n, mid) = (get(Method::Neural), get(Method::Midpoint));
        assert_eq!(n.cr, mid.cr);
        wins += usize::from(n.d_pm < mid.d_pm);
    }
    let pass = wins * 10 >= 7 * held.len();
    report(
        10,
        "equal-CR superiority",
        pass,
        format!("neural beats midpoint on {wins}/{} held-out meshes (training {:.0}s)", held.len(), train_time.as_secs_f64()),
        t.elapsed(),
    );
    assert!(pass);
}

fn npmesh(dir: &Path, threads: &str, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_npmesh"))
        .current_dir(dir)
        .env("NPM_THREADS", threads)
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(dir: &Path, threads: &str) -> Vec<(String, Vec<u8>)> {
    let steps = [
        vec!["corpus", "--out", "meshes", "--count", "5"],
        vec!["manifest", "--dir", "meshes", "--out", "manifest.jsonl"],
        vec!["remesh", "--input", "meshes/mesh_000.obj", "--coarse-faces", "100", "--levels", "2", "--out", "cache"],
        vec![
            "train", "--manifest", "manifest.jsonl", "--out", "run", "--coarse-faces", "100", "--levels", "2", "--decimations", "2",
            "--max-steps", "50", "--grad-accum", "2",
        ],
        vec!["encode", "--model", "run/last.npmw", "--input", "cache", "--features", "60", "--out", "mesh.npm"],
        vec!["decode", "--model", "run/last.npmw", "--stream", "mesh.npm", "--out", "decoded.obj"],
        vec![
            "eval", "--pred", "decoded.obj", "--gt", "meshes/mesh_000.obj", "--stream", "mesh.npm", "--samples", "20000", "--out",
            "report.json",
        ],
    ];
    for args in &steps {
        npmesh(dir, threads, args);
    }
    ["run/last.npmw", "run/best.npmw", "run/loss.csv", "cache/level_2.obj", "mesh.npm", "decoded.obj", "report.json"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
        .collect()
}

#[test]
fn criterion_11_determinism() {
    let t = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let one = pipeline(a.path(), "1");
    let four = pipeline(b.path(), "4");
    let differing: Vec<&str> = one.iter().zip(&four).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    let pass = differing.is_empty();
    report(
        11,
        "determinism",
        pass,
        format!("{} artifacts compared across 1 and 4 threads, differing: {differing:?}", one.len()),
        t.elapsed(),
    );
    assert!(pass);
}

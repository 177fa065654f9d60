//! Finite-difference checks of every network layer and loss on a toy
//! hierarchy.

use std::sync::Arc;

use npmesh_geom::lod::hierarchy::coarse_domain_points;
use npmesh_geom::{shapes, Vec3};
use npmesh_grad::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use npmesh_grad::{CustomOp, GradError, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::net::model::{
    avg_pool_4to1, batchnorm, decoder_forward, encoder_forward, insert_conv, mesh_conv, positions_tensor,
    predict_midpoint_displacement, upsample_1to4, Mode, LEARNED_WIDTH, MESH_WIDTH,
};
use crate::net::ops::FaceFeatureOp;
use crate::net::{init_params, Topology};
use crate::train::loss::{loss_corr, loss_jacobian, loss_sparsity, CorrNorm, LossWeights};
use crate::train::{forward_sample, Sample};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const TOY_LEVELS: usize = 2;
/// Denominator floor of the relative error. Finite differences of an O(1)
/// loss carry about 1e-9 of rounding noise.
pub const DENOMINATOR_FLOOR: f64 = 1e-4;

/// Octahedron subdivided twice with midpoints pushed to a noisy sphere.
pub fn toy_sample(seed: u64) -> Result<Sample> {
    let oct = shapes::octahedron();
    let (_, _, mids, _) = coarse_domain_points(oct.faces(), oct.num_vertices(), TOY_LEVELS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<Vec3> = oct.positions().to_vec();
    let mut levels = vec![p.clone()];
    for m in &mids {
        for &[a, b] in m {
            let c = (p[a] + p[b]) * 0.5;
            let r = 1.0 + rng.gen_range(-0.1..0.1);
            let jitter = Vec3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02));
            p.push(c.normalize() * r + jitter);
        }
        levels.push(p.clone());
    }
    let topology = Arc::new(Topology::new(oct.faces(), oct.num_vertices(), TOY_LEVELS)?);
    Ok(Sample {
        name: "toy".into(),
        levels,
        topology,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<String>,
    pub passed: bool,
}

impl LayerCheck {
    fn from_report(name: &str, r: &GradCheckReport, tol: f64) -> Self {
        Self {
            name: name.into(),
            max_rel_err: r.max_rel_err,
            checked: r.checked,
            worst: r
                .worst
                .as_ref()
                .map(|w| format!("{}[{}]: analytic {:e}, numeric {:e}", w.name, w.index, w.analytic, w.numeric)),
            passed: r.checked > 0 && r.max_rel_err < tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSuite {
    pub tolerance: f64,
    pub step: f64,
    pub layers: Vec<LayerCheck>,
}

impl GradcheckSuite {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.passed)
    }
}

fn lift(e: CoreError) -> GradError {
    match e {
        CoreError::Grad(g) => g,
        other => GradError::Numerical {
            op: "gradcheck",
            detail: other.to_string(),
        },
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// `sum(y * R)` for a fixed random `R`, reducing any output to a scalar.
fn project(tape: &mut Tape, y: Var, seed: u64) -> npmesh_grad::Result<Var> {
    let n = tape.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let r = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let m = tape.mul_const(y, r)?;
    Ok(tape.sum(m))
}

fn check<F>(name: &str, store: &mut ParamStore, cfg: &GradCheckConfig, tol: f64, f: F) -> Result<LayerCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let r = grad_check(store, cfg, |t, s| f(t, s).map_err(lift))?;
    Ok(LayerCheck::from_report(name, &r, tol))
}

fn perturbed(levels: &[Vec<Vec3>], rng: &mut ChaCha8Rng, scale: f64) -> Vec<Vec<Vec3>> {
    levels
        .iter()
        .map(|l| {
            l.iter()
                .map(|p| p + Vec3::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)))
                .collect()
        })
        .collect()
}

/// Run every layer check. All must stay below `tol`.
pub fn run_suite(tol: f64, seed: u64) -> Result<GradcheckSuite> {
    let cfg = GradCheckConfig {
        floor: DENOMINATOR_FLOOR,
        ..GradCheckConfig::default()
    };
    let toy = toy_sample(seed)?;
    let topo = toy.topology.clone();
    let t1 = topo.level(1);
    let (n0, n1) = (topo.level(0).face_count(), t1.face_count());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let input_width = LEARNED_WIDTH + MESH_WIDTH;

    let mut s = ParamStore::new();
    s.insert("x", random_tensor(&mut rng, n1, input_width, 1.0), true)?;
    insert_conv(&mut s, "l", input_width, &mut rng)?;
    layers.push(check("mesh_conv", &mut s, &cfg, tol, |t, st| {
        let x = t.param(st, "x")?;
        let y = mesh_conv(t, st, "l", x, topo.level(1))?;
        Ok(project(t, y, 1)?)
    })?);

    let mut s = ParamStore::new();
    s.insert("x", random_tensor(&mut rng, n1, LEARNED_WIDTH, 2.0), true)?;
    insert_conv(&mut s, "l", LEARNED_WIDTH, &mut rng)?;
    s.get_mut("l.bn.gamma")?.value = random_tensor(&mut rng, 1, LEARNED_WIDTH, 1.0);
    layers.push(check("batchnorm_train", &mut s, &cfg, tol, |t, st| {
        let x = t.param(st, "x")?;
        let y = batchnorm(t, st, "l", x, Mode::Train, &mut Vec::new())?;
        let y = t.row_l2(y);
        Ok(project(t, y, 2)?)
    })?);
    s.get_mut("l.bn.var")?.value = Tensor::filled(&[LEARNED_WIDTH], 0.7);
    layers.push(check("batchnorm_eval", &mut s, &cfg, tol, |t, st| {
        let x = t.param(st, "x")?;
        let y = batchnorm(t, st, "l", x, Mode::Eval, &mut Vec::new())?;
        Ok(project(t, y, 3)?)
    })?);

    let mut s = ParamStore::new();
    s.insert("x", random_tensor(&mut rng, n1, LEARNED_WIDTH, 1.0), true)?;
    layers.push(check("relu", &mut s, &cfg, tol, |t, st| {
        let x = t.param(st, "x")?;
        let y = t.relu(x);
        Ok(project(t, y, 4)?)
    })?);
    layers.push(check("avg_pool", &mut s, &cfg, tol, |t, st| {
        let x = t.param(st, "x")?;
        let parent = t1.parent.clone().expect("parents");
        let y = avg_pool_4to1(t, x, &parent, n0)?;
        Ok(project(t, y, 5)?)
    })?);

    let mut s = ParamStore::new();
    s.insert("x", random_tensor(&mut rng, n0, LEARNED_WIDTH, 1.0), true)?;
    layers.push(check("upsample", &mut s, &cfg, tol, |t, st| {
        let x = t.param(st, "x")?;
        let y = upsample_1to4(t, x, topo.level(1))?;
        Ok(project(t, y, 6)?)
    })?);

    let mut s = ParamStore::new();
    s.insert("x", random_tensor(&mut rng, n1, input_width, 1.0), true)?;
    s.insert("l.disp.W", random_tensor(&mut rng, 2 * input_width, 3, 0.3), true)?;
    let bias = (0..3).map(|_| rng.gen_range(-0.3..0.3)).collect();
    s.insert("l.disp.b", Tensor::new(vec![3], bias)?, true)?;
    layers.push(check("midpoint_displacement", &mut s, &cfg, tol, |t, st| {
        let x = t.param(st, "x")?;
        let y = predict_midpoint_displacement(t, st, "l", x, topo.level(1))?;
        Ok(project(t, y, 7)?)
    })?);

    let truth = &toy.levels;
    let noisy = perturbed(truth, &mut rng, 0.05);
    let mut s = ParamStore::new();
    s.insert("p", positions_tensor(&noisy[1]), true)?;
    layers.push(check("face_features", &mut s, &cfg, tol, |t, st| {
        let p = t.param(st, "p")?;
        let y = t.custom(Arc::new(FaceFeatureOp { faces: t1.faces.clone() }), &[p])?;
        Ok(project(t, y, 8)?)
    })?);

    let mut s = ParamStore::new();
    s.insert("p1", positions_tensor(&noisy[1]), true)?;
    s.insert("p2", positions_tensor(&noisy[2]), true)?;
    let truth_refs: Vec<&[Vec3]> = truth[1..].iter().map(|l| l.as_slice()).collect();
    for norm in [CorrNorm::VertexMean, CorrNorm::Frobenius] {
        let name = match norm {
            CorrNorm::VertexMean => "corr_loss",
            CorrNorm::Frobenius => "corr_loss_frobenius",
        };
        layers.push(check(name, &mut s, &cfg, tol, |t, st| {
            let p = [t.param(st, "p1")?, t.param(st, "p2")?];
            loss_corr(t, &p, &truth_refs, norm)
        })?);
    }
    let faces = [topo.level(1).faces.clone(), topo.level(2).faces.clone()];
    layers.push(check("jacobian_loss", &mut s, &cfg, tol, |t, st| {
        let p = [t.param(st, "p1")?, t.param(st, "p2")?];
        loss_jacobian(t, &p, &truth_refs, &faces)
    })?);

    let mut s = ParamStore::new();
    s.insert("f0", random_tensor(&mut rng, n0, LEARNED_WIDTH, 1.0), true)?;
    s.insert("f1", random_tensor(&mut rng, n1, LEARNED_WIDTH, 1.0), true)?;
    layers.push(check("sparsity_loss", &mut s, &cfg, tol, |t, st| {
        let f = [t.param(st, "f0")?, t.param(st, "f1")?];
        loss_sparsity(t, &f)
    })?);

    let mut model = init_params(TOY_LEVELS, seed)?;
    let names: Vec<String> = model.names().filter(|n| n.contains(".disp.")).map(String::from).collect();
    for n in names {
        let p = model.get_mut(&n)?;
        let shape = p.value.shape().to_vec();
        let data = (0..p.value.len()).map(|_| rng.gen_range(-0.1..0.1)).collect();
        p.value = Tensor::new(shape, data)?;
    }
    layers.push(check("encoder", &mut model.clone(), &cfg, tol, |t, st| {
        let f = encoder_forward(t, st, &topo, &toy.levels, Mode::Train, &mut Vec::new())?;
        let r: Vec<Var> = f.iter().map(|&v| t.row_l2(v)).collect();
        let c = t.concat(&r, 0)?;
        Ok(project(t, c, 9)?)
    })?);
    let mut dec = model.clone();
    dec.insert("f0", random_tensor(&mut rng, n0, LEARNED_WIDTH, 1.0), true)?;
    dec.insert("f1", random_tensor(&mut rng, n1, LEARNED_WIDTH, 1.0), true)?;
    layers.push(check("decoder", &mut dec, &cfg, tol, |t, st| {
        let f = [t.param(st, "f0")?, t.param(st, "f1")?];
        let p = decoder_forward(t, st, &topo, &toy.levels[0], &f, TOY_LEVELS, Mode::Train, &mut Vec::new())?;
        Ok(project(t, p[TOY_LEVELS], 10)?)
    })?);
    layers.push(check("full_pipeline", &mut model, &cfg, tol, |t, st| {
        let w = LossWeights::default();
        let fwd = forward_sample(t, st, &topo, &toy.levels, w, CorrNorm::VertexMean, Mode::Train, None)?;
        Ok(fwd.total)
    })?);

    Ok(GradcheckSuite {
        tolerance: tol,
        step: cfg.step,
        layers,
    })
}

/// `x^2` with a deliberately wrong derivative.
#[derive(Debug)]
struct BrokenSquare;

impl CustomOp for BrokenSquare {
    fn name(&self) -> &'static str {
        "broken_square"
    }

    fn forward(&self, inputs: &[&Tensor]) -> npmesh_grad::Result<Tensor> {
        let x = inputs[0];
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * v).collect())
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(inputs[0].data().iter().zip(grad).map(|(x, g)| 3.0 * x * g).collect())]
    }
}

/// A layer whose gradient is wrong on purpose; it must fail.
pub fn broken_fixture(tol: f64, seed: u64) -> Result<LayerCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(&mut rng, 8, 3, 1.0), true)?;
    let cfg = GradCheckConfig {
        floor: DENOMINATOR_FLOOR,
        ..GradCheckConfig::default()
    };
    check("broken_fixture", &mut s, &cfg, tol, |t, st| {
        let x = t.param(st, "x")?;
        let y = t.custom(Arc::new(BrokenSquare), &[x])?;
        Ok(project(t, y, 11)?)
    })
}

//! Encoder and decoder built from face convolutions on subdivision
//! connectivity.

use std::path::Path;
use std::sync::Arc;

use npmesh_geom::Vec3;
use npmesh_grad::{checkpoint, BatchStats, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{face_features, FaceFeatureOp, NeighborAggregate};
use super::topology::{LevelTopology, Topology};
use crate::error::{CoreError, Result};

/// Width of the learned per-face features.
pub const LEARNED_WIDTH: usize = 8;
/// Width of the geometric per-face features.
pub const MESH_WIDTH: usize = npmesh_geom::features::FEATURE_DIM;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Batch statistics collected during a training-mode forward pass, keyed
/// by batch-norm parameter prefix.
pub type StatsLog = Vec<(String, BatchStats)>;

pub fn encoder_input_width(level: usize, levels: usize) -> usize {
    if level == levels {
        MESH_WIDTH
    } else {
        LEARNED_WIDTH + MESH_WIDTH
    }
}

pub fn decoder_input_width(level: usize) -> usize {
    if level == 0 {
        MESH_WIDTH + LEARNED_WIDTH
    } else {
        2 * LEARNED_WIDTH + MESH_WIDTH
    }
}

fn kaiming(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

pub(crate) fn insert_conv(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    for k in 0..4 {
        let w = kaiming(rng, width, LEARNED_WIDTH, 4 * width);
        store.insert(&format!("{prefix}.conv.W{k}"), w, true)?;
    }
    store.insert(&format!("{prefix}.conv.b"), Tensor::zeros(&[LEARNED_WIDTH]), true)?;
    store.insert(&format!("{prefix}.bn.gamma"), Tensor::filled(&[LEARNED_WIDTH], 1.0), true)?;
    store.insert(&format!("{prefix}.bn.beta"), Tensor::zeros(&[LEARNED_WIDTH]), true)?;
    store.insert(&format!("{prefix}.bn.mean"), Tensor::zeros(&[LEARNED_WIDTH]), false)?;
    store.insert(&format!("{prefix}.bn.var"), Tensor::filled(&[LEARNED_WIDTH], 1.0), false)?;
    Ok(())
}

/// Fresh parameters for an `levels`-level model. Convolutions are
/// Kaiming-uniform, biases zero, displacement layers zero.
pub fn init_params(levels: usize, seed: u64) -> Result<ParamStore> {
    if levels == 0 {
        return Err(CoreError::InvalidArgument("a model needs at least one level".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for level in (1..=levels).rev() {
        insert_conv(&mut store, &format!("enc.{level}"), encoder_input_width(level, levels), &mut rng)?;
    }
    for level in 0..levels {
        let w = decoder_input_width(level);
        store.insert(&format!("dec.{level}.disp.W"), Tensor::zeros(&[2 * w, 3]), true)?;
        store.insert(&format!("dec.{level}.disp.b"), Tensor::zeros(&[3]), true)?;
        if level + 1 < levels {
            insert_conv(&mut store, &format!("dec.{level}"), w, &mut rng)?;
        }
    }
    Ok(store)
}

/// Level count of a parameter store, checked against the expected layout.
pub fn model_levels(store: &ParamStore) -> Result<usize> {
    let levels = store
        .names()
        .filter_map(|n| n.strip_prefix("enc.")?.split('.').next()?.parse::<usize>().ok())
        .max()
        .ok_or_else(|| CoreError::InvalidArgument("parameter store has no encoder".into()))?;
    let reference = init_params(levels, 0)?;
    for p in reference.iter() {
        let q = store
            .get(&p.name)
            .map_err(|_| CoreError::InvalidArgument(format!("missing parameter {}", p.name)))?;
        if q.value.shape() != p.value.shape() {
            return Err(CoreError::InvalidArgument(format!(
                "parameter {} has shape {:?}, expected {:?}",
                p.name,
                q.value.shape(),
                p.value.shape()
            )));
        }
    }
    Ok(levels)
}

/// `out = W0 x + W1 S1 + W2 S2 + W3 S3 + b` where `S1..S3` are the
/// neighbour sum, the cyclic neighbour differences and the centre
/// differences.
pub fn mesh_conv(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, topo: &LevelTopology) -> Result<Var> {
    conv_with(tape, store, prefix, x, topo.adjacency.clone())
}

pub fn conv_with(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, adjacency: Arc<Vec<[usize; 3]>>) -> Result<Var> {
    let agg = tape.custom(Arc::new(NeighborAggregate { adjacency }), &[x])?;
    let w: Vec<Var> = (0..4)
        .map(|k| tape.param(store, &format!("{prefix}.conv.W{k}")))
        .collect::<npmesh_grad::Result<_>>()?;
    let b = tape.param(store, &format!("{prefix}.conv.b"))?;
    let stacked = tape.concat(&w[1..], 0)?;
    let own = tape.matmul(x, w[0])?;
    let nb = tape.matmul(agg, stacked)?;
    let sum = tape.add(own, nb)?;
    Ok(tape.add_row(sum, b)?)
}

pub fn batchnorm(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, mode: Mode, log: &mut StatsLog) -> Result<Var> {
    let g = tape.param(store, &format!("{prefix}.bn.gamma"))?;
    let b = tape.param(store, &format!("{prefix}.bn.beta"))?;
    match mode {
        Mode::Train => {
            let (y, stats) = tape.batchnorm_train(x, g, b, BN_EPS)?;
            log.push((format!("{prefix}.bn"), stats));
            Ok(y)
        }
        Mode::Eval => {
            let mean = store.value(&format!("{prefix}.bn.mean"))?.data().to_vec();
            let var = store.value(&format!("{prefix}.bn.var"))?.data().to_vec();
            Ok(tape.batchnorm_eval(x, g, b, &mean, &var, BN_EPS)?)
        }
    }
}

/// Mean of the four children of every parent face.
pub fn avg_pool_4to1(tape: &mut Tape, x: Var, parent: &Arc<Vec<usize>>, coarse_faces: usize) -> Result<Var> {
    let mut counts = vec![0usize; coarse_faces];
    for &p in parent.iter() {
        if p >= coarse_faces {
            return Err(CoreError::Topology(format!("parent {p} out of range")));
        }
        counts[p] += 1;
    }
    if counts.iter().any(|&c| c != 4) || parent.len() != 4 * coarse_faces {
        return Err(CoreError::Topology("parent map does not group faces by four".into()));
    }
    Ok(tape.segment_mean(x, parent.clone(), coarse_faces)?)
}

/// Parent features spread to the next level: the centre child copies its
/// parent, corner child `k` averages the parent with the parent's
/// neighbour across the edge opposite corner `k`.
pub fn upsample_1to4(tape: &mut Tape, x: Var, fine: &LevelTopology) -> Result<Var> {
    let [a, b] = fine
        .upsample_from
        .clone()
        .ok_or_else(|| CoreError::Topology("level 0 has no parent level".into()))?;
    let rows = tape.value(x).dims2().0;
    if a.iter().chain(b.iter()).any(|&i| i >= rows) {
        return Err(CoreError::Topology("upsample map out of range".into()));
    }
    let ga = tape.gather_rows(x, a)?;
    let gb = tape.gather_rows(x, b)?;
    let s = tape.add(ga, gb)?;
    Ok(tape.scale(s, 0.5))
}

/// `affine(concat(a + b, |a - b|))` for the two faces of every edge.
pub fn predict_midpoint_displacement(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, topo: &LevelTopology) -> Result<Var> {
    let a = tape.gather_rows(x, topo.edge_faces[0].clone())?;
    let b = tape.gather_rows(x, topo.edge_faces[1].clone())?;
    displacement_layer(tape, store, prefix, a, b)
}

pub fn displacement_layer(tape: &mut Tape, store: &ParamStore, prefix: &str, a: Var, b: Var) -> Result<Var> {
    let s = tape.add(a, b)?;
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    let input = tape.concat(&[s, d], 1)?;
    let w = tape.param(store, &format!("{prefix}.disp.W"))?;
    let bias = tape.param(store, &format!("{prefix}.disp.b"))?;
    let y = tape.matmul(input, w)?;
    Ok(tape.add_row(y, bias)?)
}

pub fn positions_tensor(p: &[Vec3]) -> Tensor {
    Tensor::matrix(p.len(), 3, p.iter().flat_map(|v| [v.x, v.y, v.z]).collect()).expect("shape")
}

pub fn tensor_positions(t: &Tensor) -> Vec<Vec3> {
    t.data().chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// Constant 13-wide features of a fixed mesh.
pub fn mesh_features_const(tape: &mut Tape, positions: &[Vec3], faces: &[[usize; 3]]) -> Result<Var> {
    let flat: Vec<f64> = positions.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    let f = face_features(&flat, faces)?;
    Ok(tape.constant(Tensor::matrix(faces.len(), MESH_WIDTH, f)?))
}

/// Learned features `f^0 .. f^{L-1}` from the true level positions.
pub fn encoder_forward(
    tape: &mut Tape,
    store: &ParamStore,
    topo: &Topology,
    levels: &[Vec<Vec3>],
    mode: Mode,
    log: &mut StatsLog,
) -> Result<Vec<Var>> {
    let depth = topo.depth();
    if levels.len() != depth + 1 {
        return Err(CoreError::InvalidArgument(format!("{} position levels for depth {depth}", levels.len())));
    }
    let mut out: Vec<Option<Var>> = vec![None; depth];
    let mut carried: Option<Var> = None;
    for level in (1..=depth).rev() {
        let t = topo.level(level);
        if levels[level].len() != t.vertex_count {
            return Err(CoreError::Topology(format!("level {level} has {} positions, expected {}", levels[level].len(), t.vertex_count)));
        }
        let fm = mesh_features_const(tape, &levels[level], &t.faces)?;
        let x = match carried {
            None => fm,
            Some(f) => tape.concat(&[f, fm], 1)?,
        };
        let prefix = format!("enc.{level}");
        let h = mesh_conv(tape, store, &prefix, x, t)?;
        let h = batchnorm(tape, store, &prefix, h, mode, log)?;
        let h = tape.relu(h);
        let parent = t.parent.clone().expect("level above 0 has parents");
        let pooled = avg_pool_4to1(tape, h, &parent, topo.level(level - 1).face_count())?;
        out[level - 1] = Some(pooled);
        carried = Some(pooled);
    }
    Ok(out.into_iter().map(|v| v.expect("filled")).collect())
}

/// Predicted positions for levels `0 ..= target`. `features[i]` is the
/// (already masked) `f^i`.
pub fn decoder_forward(
    tape: &mut Tape,
    store: &ParamStore,
    topo: &Topology,
    coarse: &[Vec3],
    features: &[Var],
    target: usize,
    mode: Mode,
    log: &mut StatsLog,
) -> Result<Vec<Var>> {
    let depth = topo.depth();
    if target > depth || features.len() != depth {
        return Err(CoreError::InvalidArgument(format!(
            "target level {target} with {} feature levels for depth {depth}",
            features.len()
        )));
    }
    let t0 = topo.level(0);
    if coarse.len() != t0.vertex_count {
        return Err(CoreError::Topology(format!("{} coarse vertices, expected {}", coarse.len(), t0.vertex_count)));
    }
    let mut p = tape.constant(positions_tensor(coarse));
    let mut out = vec![p];
    if target == 0 {
        return Ok(out);
    }
    let fm = mesh_features_const(tape, coarse, &t0.faces)?;
    let mut x = tape.concat(&[fm, features[0]], 1)?;
    for level in 0..target {
        let t = topo.level(level);
        let prefix = format!("dec.{level}");
        let disp = predict_midpoint_displacement(tape, store, &prefix, x, t)?;
        let a = tape.gather_rows(p, t.edge_ends[0].clone())?;
        let b = tape.gather_rows(p, t.edge_ends[1].clone())?;
        let s = tape.add(a, b)?;
        let mid = tape.scale(s, 0.5);
        let new = tape.add(mid, disp)?;
        p = tape.concat(&[p, new], 0)?;
        out.push(p);
        if level + 1 < target {
            let fine = topo.level(level + 1);
            let u = upsample_1to4(tape, x, fine)?;
            let h = mesh_conv(tape, store, &prefix, u, fine)?;
            let h = batchnorm(tape, store, &prefix, h, mode, log)?;
            let h = tape.relu(h);
            let fm = tape.custom(Arc::new(FaceFeatureOp { faces: fine.faces.clone() }), &[p])?;
            x = tape.concat(&[h, features[level + 1], fm], 1)?;
        }
    }
    Ok(out)
}

/// Learned features as transmitted: 32-bit values per face and level.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub levels: Vec<Vec<[f32; LEARNED_WIDTH]>>,
}

impl FeatureSet {
    pub fn zeros(counts: &[usize]) -> Self {
        Self {
            levels: counts.iter().map(|&n| vec![[0.0; LEARNED_WIDTH]; n]).collect(),
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.len()).collect()
    }

    pub fn total(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum()
    }

    fn from_tensors(ts: &[&Tensor]) -> Self {
        Self {
            levels: ts
                .iter()
                .map(|t| {
                    t.data()
                        .chunks_exact(LEARNED_WIDTH)
                        .map(|c| std::array::from_fn(|j| c[j] as f32))
                        .collect()
                })
                .collect(),
        }
    }
}

/// Which faces have their features available to the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMask {
    pub levels: Vec<Vec<bool>>,
}

impl TransmissionMask {
    pub fn none(counts: &[usize]) -> Self {
        Self {
            levels: counts.iter().map(|&n| vec![false; n]).collect(),
        }
    }

    pub fn full(counts: &[usize]) -> Self {
        Self {
            levels: counts.iter().map(|&n| vec![true; n]).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.levels.iter().flatten().filter(|&&b| b).count()
    }
}

/// Zero the rows of `x` whose mask entry is false.
pub fn mask_rows(tape: &mut Tape, x: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&b| b) {
        return Ok(x);
    }
    let (n, c) = tape.value(x).dims2();
    if mask.len() != n {
        return Err(CoreError::Topology(format!("mask of {} rows for {n} faces", mask.len())));
    }
    let m: Vec<f64> = mask.iter().flat_map(|&b| std::iter::repeat(if b { 1.0 } else { 0.0 }).take(c)).collect();
    Ok(tape.mul_const(x, m)?)
}

/// A parameter store together with its level count.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub store: ParamStore,
    pub levels: usize,
}

impl Model {
    pub fn new(levels: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            store: init_params(levels, seed)?,
            levels,
        })
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let levels = model_levels(&store)?;
        Ok(Self { store, levels })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_store(checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(&self.store, path)?)
    }

    fn check_depth(&self, topo: &Topology) -> Result<()> {
        if topo.depth() != self.levels {
            return Err(CoreError::InvalidArgument(format!(
                "model has {} levels, hierarchy has {}",
                self.levels,
                topo.depth()
            )));
        }
        Ok(())
    }

    /// Encoder output in evaluation mode, rounded to 32 bits.
    pub fn encode(&self, topo: &Topology, levels: &[Vec<Vec3>]) -> Result<FeatureSet> {
        self.check_depth(topo)?;
        let mut tape = Tape::new();
        let f = encoder_forward(&mut tape, &self.store, topo, levels, Mode::Eval, &mut Vec::new())?;
        let ts: Vec<&Tensor> = f.iter().map(|&v| tape.value(v)).collect();
        Ok(FeatureSet::from_tensors(&ts))
    }

    /// Decoder output in evaluation mode: positions of levels `0 ..= target`.
    pub fn decode(
        &self,
        topo: &Topology,
        coarse: &[Vec3],
        features: &FeatureSet,
        mask: &TransmissionMask,
        target: usize,
    ) -> Result<Vec<Vec<Vec3>>> {
        self.check_depth(topo)?;
        if features.counts() != topo.face_counts()[..self.levels] || mask.levels.len() != self.levels {
            return Err(CoreError::Topology("feature set does not match the hierarchy".into()));
        }
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(self.levels);
        for (l, m) in features.levels.iter().zip(&mask.levels) {
            let data: Vec<f64> = l
                .iter()
                .zip(m)
                .flat_map(|(row, &on)| row.map(|x| if on { x as f64 } else { 0.0 }))
                .collect();
            vars.push(tape.constant(Tensor::matrix(l.len(), LEARNED_WIDTH, data)?));
        }
        let p = decoder_forward(&mut tape, &self.store, topo, coarse, &vars, target, Mode::Eval, &mut Vec::new())?;
        Ok(p.iter().map(|&v| tensor_positions(tape.value(v))).collect())
    }

    /// Fold training-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, log: &StatsLog) -> Result<()> {
        apply_batch_stats(&mut self.store, log)
    }
}

pub fn apply_batch_stats(store: &mut ParamStore, log: &StatsLog) -> Result<()> {
    for (prefix, s) in log {
        let unbiased = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
        let mean = store.get_mut(&format!("{prefix}.mean"))?;
        for (r, b) in mean.value.data_mut().iter_mut().zip(&s.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        let var = store.get_mut(&format!("{prefix}.var"))?;
        for (r, b) in var.value.data_mut().iter_mut().zip(&s.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b * unbiased;
        }
    }
    Ok(())
}

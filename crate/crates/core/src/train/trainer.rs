//! Training loop.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use npmesh_geom::lod::HierarchyOptions;
use npmesh_geom::Vec3;
use npmesh_grad::{AdamConfig, ParamStore, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment_levels, AxisRotation};
use super::dataset::{fnv1a, load_split, Manifest, Sample, Split};
use super::loss::{loss_corr, loss_jacobian, loss_sparsity, total_loss, CorrNorm, LossBreakdown, LossWeights};
use crate::error::{CoreError, ErrorKind, Result};
use crate::net::model::{apply_batch_stats, mask_rows};
use crate::net::{decoder_forward, encoder_forward, Mode, Model, StatsLog, Topology, TransmissionMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Optional `lr / (1 + lr_decay * step)` schedule.
    pub lr_decay: f64,
    pub epochs: u64,
    /// Stop after this many optimiser steps.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub coarse_faces: usize,
    pub levels: usize,
    /// Decimation priority jitter used to vary the coarse meshes.
    pub jitter: f64,
    /// Coarse meshes per training mesh (at most 10).
    pub decimations: usize,
    pub augment: bool,
    /// Hierarchies whose gradients are averaged per step.
    pub grad_accum: usize,
    /// Probability of masking a face's features during training.
    pub feature_dropout: f64,
    pub corr_norm: CorrNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            lr: 1e-3,
            weight_decay: 1e-6,
            lr_decay: 0.0,
            epochs: 10,
            max_steps: None,
            seed: 0,
            coarse_faces: npmesh_geom::lod::DEFAULT_TARGET_FACES,
            levels: npmesh_geom::lod::DEFAULT_LEVELS,
            jitter: 0.1,
            decimations: super::dataset::SEEDS_PER_MESH,
            augment: true,
            grad_accum: 1,
            feature_dropout: 0.0,
            corr_norm: CorrNorm::VertexMean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::InvalidArgument(m.to_string()));
        if !(self.alpha > 0.0 && self.beta >= 0.0 && self.lr > 0.0) {
            return bad("alpha and lr must be positive, beta non-negative");
        }
        if self.weight_decay < 0.0 || self.lr_decay < 0.0 {
            return bad("decay terms must be non-negative");
        }
        if self.levels == 0 || self.coarse_faces < 4 || self.grad_accum == 0 {
            return bad("levels, coarse_faces and grad_accum must be positive");
        }
        if !(0.0..1.0).contains(&self.feature_dropout) {
            return bad("feature_dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            lr_decay: self.lr_decay,
            ..AdamConfig::default()
        }
    }

    pub fn hierarchy_options(&self) -> HierarchyOptions {
        HierarchyOptions {
            target_faces: self.coarse_faces,
            levels: self.levels,
            seed: 0,
            jitter: self.jitter,
        }
    }
}

/// Tape handles of one forward pass through encoder, decoder and losses.
pub struct SampleForward {
    pub features: Vec<Var>,
    pub positions: Vec<Var>,
    pub corr: Var,
    pub jacobian: Var,
    pub sparsity: Var,
    pub total: Var,
    pub stats: StatsLog,
}

impl SampleForward {
    pub fn breakdown(&self, tape: &Tape, w: LossWeights) -> LossBreakdown {
        LossBreakdown {
            corr: tape.value(self.corr).item(),
            jacobian: tape.value(self.jacobian).item(),
            sparsity: tape.value(self.sparsity).item(),
            total: tape.value(self.total).item(),
            alpha: w.alpha,
            beta: w.beta,
        }
    }
}

/// Encode the true levels, decode from the true coarse mesh and score the
/// prediction. `mask` hides features from the decoder; the sparsity term
/// always sees the full encoder output.
#[allow(clippy::too_many_arguments)]
pub fn forward_sample(
    tape: &mut Tape,
    store: &ParamStore,
    topo: &Topology,
    levels: &[Vec<Vec3>],
    w: LossWeights,
    norm: CorrNorm,
    mode: Mode,
    mask: Option<&TransmissionMask>,
) -> Result<SampleForward> {
    let depth = topo.depth();
    let mut stats = Vec::new();
    let features = encoder_forward(tape, store, topo, levels, mode, &mut stats)?;
    let decoder_in = match mask {
        Some(m) => features
            .iter()
            .zip(&m.levels)
            .map(|(&f, m)| mask_rows(tape, f, m))
            .collect::<Result<Vec<_>>>()?,
        None => features.clone(),
    };
    let positions = decoder_forward(tape, store, topo, &levels[0], &decoder_in, depth, mode, &mut stats)?;
    let truth: Vec<&[Vec3]> = levels[1..].iter().map(|l| l.as_slice()).collect();
    let corr = loss_corr(tape, &positions[1..], &truth, norm)?;
    let faces: Vec<Arc<Vec<[usize; 3]>>> = (1..=depth).map(|i| topo.level(i).faces.clone()).collect();
    let jacobian = loss_jacobian(tape, &positions[1..], &truth, &faces)?;
    let sparsity = loss_sparsity(tape, &features)?;
    let total = total_loss(tape, corr, jacobian, sparsity, w)?;
    Ok(SampleForward {
        features,
        positions,
        corr,
        jacobian,
        sparsity,
        total,
        stats,
    })
}

fn rng_for(seed: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    let mut bytes = tag.as_bytes().to_vec();
    for x in [seed, a, b] {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    ChaCha8Rng::seed_from_u64(fnv1a(&bytes))
}

fn with_context(name: &str, e: CoreError) -> CoreError {
    if e.kind() == ErrorKind::Numerical {
        CoreError::Numerical(format!("{name}: {e}"))
    } else {
        e
    }
}

/// Position in the training schedule; persisted next to checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: u64,
    /// Samples of the current epoch already consumed.
    pub position: usize,
    pub step: u64,
    pub best_val: Option<f64>,
}

pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, train: Vec<Sample>, val: Vec<Sample>) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(CoreError::InvalidArgument("no training samples".into()));
        }
        if let Some(s) = train.iter().chain(&val).find(|s| s.depth() != cfg.levels) {
            return Err(CoreError::InvalidArgument(format!("{} has {} levels, config has {}", s.name, s.depth(), cfg.levels)));
        }
        let mut model = Model::new(cfg.levels, cfg.seed)?;
        model.store.round_to_f32();
        Ok(Self {
            model,
            cfg,
            train,
            val,
            state: TrainState::default(),
        })
    }

    /// Sample order of an epoch.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng_for(self.cfg.seed, "epoch", epoch, 0));
        order
    }

    fn sample_gradients(&self, sample: &Sample, step: u64, slot: u64) -> Result<(ParamStore, StatsLog, LossBreakdown)> {
        let mut rng = rng_for(self.cfg.seed, "step", step, slot);
        let rotation = if self.cfg.augment {
            AxisRotation::random(&mut rng)
        } else {
            AxisRotation::IDENTITY
        };
        let levels = augment_levels(&sample.levels, &rotation);
        let topo = &sample.topology;
        let mask = (self.cfg.feature_dropout > 0.0).then(|| TransmissionMask {
            levels: topo.face_counts()[..topo.depth()]
                .iter()
                .map(|&n| (0..n).map(|_| !rng.gen_bool(self.cfg.feature_dropout)).collect())
                .collect(),
        });
        let w = self.cfg.weights();
        let mut tape = Tape::new();
        let fwd = forward_sample(&mut tape, &self.model.store, topo, &levels, w, self.cfg.corr_norm, Mode::Train, mask.as_ref())
            .map_err(|e| with_context(&sample.name, e))?;
        let b = fwd.breakdown(&tape, w);
        if !b.total.is_finite() {
            return Err(CoreError::Numerical(format!("non-finite loss on {} at step {step}: {b:?}", sample.name)));
        }
        let grads = tape.backward(fwd.total)?;
        let mut g = self.model.store.clone();
        g.zero_grad();
        g.accumulate(&tape, &grads);
        Ok((g, fwd.stats, b))
    }

    /// One optimiser step over the given training samples.
    pub fn train_step(&mut self, batch: &[usize]) -> Result<LossBreakdown> {
        let step = self.state.step;
        let results = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| self.sample_gradients(&self.train[i], step, slot as u64))
            .collect::<Vec<_>>();
        let store = &mut self.model.store;
        store.zero_grad();
        let mut sum = [0.0; 4];
        for r in results {
            let (g, stats, b) = r?;
            store.add_grads_from(&g);
            apply_batch_stats(store, &stats)?;
            for (s, x) in sum.iter_mut().zip([b.corr, b.jacobian, b.sparsity, b.total]) {
                *s += x;
            }
        }
        let n = batch.len() as f64;
        if batch.len() > 1 {
            store.scale_grads(1.0 / n);
        }
        store.adam_step(&self.cfg.adam());
        store.round_to_f32();
        self.state.step += 1;
        let w = self.cfg.weights();
        Ok(if batch.len() == 1 {
            LossBreakdown {
                corr: sum[0],
                jacobian: sum[1],
                sparsity: sum[2],
                total: sum[3],
                alpha: w.alpha,
                beta: w.beta,
            }
        } else {
            LossBreakdown::new(sum[0] / n, sum[1] / n, sum[2] / n, w)
        })
    }

    /// Mean evaluation-mode loss over the validation samples.
    pub fn validate(&self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let w = self.cfg.weights();
        let totals = self
            .val
            .par_iter()
            .map(|s| {
                let mut tape = Tape::new();
                let f = forward_sample(&mut tape, &self.model.store, &s.topology, &s.levels, w, self.cfg.corr_norm, Mode::Eval, None)
                    .map_err(|e| with_context(&s.name, e))?;
                Ok(tape.value(f.total).item())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Some(totals.iter().sum::<f64>() / totals.len() as f64))
    }

    fn budget_left(&self) -> bool {
        self.cfg.max_steps.is_none_or(|m| self.state.step < m)
    }

    /// Continue the current epoch until it ends or the step budget runs
    /// out. Returns `(step, loss)` per optimiser step.
    pub fn run_epoch(&mut self) -> Result<Vec<(u64, LossBreakdown)>> {
        let order = self.epoch_order(self.state.epoch);
        let mut rows = Vec::new();
        while self.state.position < order.len() && self.budget_left() {
            let end = (self.state.position + self.cfg.grad_accum).min(order.len());
            let batch = order[self.state.position..end].to_vec();
            let step = self.state.step;
            let b = self.train_step(&batch)?;
            self.state.position = end;
            rows.push((step, b));
        }
        if self.state.position >= order.len() {
            self.state.epoch += 1;
            self.state.position = 0;
        }
        Ok(rows)
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.cfg.epochs || !self.budget_left()
    }
}

pub const CSV_HEADER: &str = "step,corr,jacobian,sparsity,total,val_total";

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub last: PathBuf,
    pub best: PathBuf,
    pub loss_csv: PathBuf,
    pub state: TrainState,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Drop CSV rows at or past `step`.
fn truncate_csv(path: &Path, step: u64) -> Result<String> {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for line in text.lines().skip(1) {
        let s: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
        if s.is_some_and(|s| s < step) {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Train on the manifest's training split, writing `last.npmw`,
/// `best.npmw`, `state.json`, `config.json` and `loss.csv` into `out`.
/// With `resume`, continues from the state found there.
pub fn train(manifest: &Manifest, cfg: &TrainConfig, out: &Path, resume: bool) -> Result<TrainOutput> {
    cfg.validate()?;
    let base = cfg.hierarchy_options();
    let train_set = load_split(manifest, Split::Train, cfg.decimations, &base)?;
    let val_set = load_split(manifest, Split::Val, 1, &base)?;
    info!("training on {} hierarchies, validating on {}", train_set.len(), val_set.len());
    let trainer = Trainer::new(cfg.clone(), train_set, val_set)?;
    train_with(trainer, out, resume)
}

pub fn train_with(mut trainer: Trainer, out: &Path, resume: bool) -> Result<TrainOutput> {
    std::fs::create_dir_all(out)?;
    let last = out.join("last.npmw");
    let best = out.join("best.npmw");
    let csv = out.join("loss.csv");
    let state_path = out.join("state.json");
    let mut log = String::new();
    if resume && last.exists() && state_path.exists() {
        trainer.model = Model::load(&last)?;
        trainer.state = serde_json::from_slice(&std::fs::read(&state_path)?)?;
        log = truncate_csv(&csv, trainer.state.step)?;
        info!("resuming at step {}", trainer.state.step);
    } else {
        let _ = writeln!(log, "{CSV_HEADER}");
    }
    write_atomic(&out.join("config.json"), serde_json::to_string_pretty(&trainer.cfg)?.as_bytes())?;
    while !trainer.finished() {
        let epoch = trainer.state.epoch;
        let rows = trainer.run_epoch()?;
        let completed = trainer.state.epoch > epoch;
        let val = if completed { trainer.validate()? } else { None };
        let n = rows.len();
        for (i, (step, b)) in rows.iter().enumerate() {
            let v = match (i + 1 == n, val) {
                (true, Some(v)) => v.to_string(),
                _ => String::new(),
            };
            let _ = writeln!(log, "{step},{},{},{},{},{v}", b.corr, b.jacobian, b.sparsity, b.total);
        }
        let score = if completed { val.or_else(|| rows.last().map(|r| r.1.total)) } else { None };
        let improved = match (score, trainer.state.best_val) {
            (Some(s), Some(b)) => s < b,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            trainer.state.best_val = score;
        }
        trainer.model.save(&last)?;
        if improved || !best.exists() {
            trainer.model.save(&best)?;
        }
        write_atomic(&state_path, serde_json::to_string_pretty(&trainer.state)?.as_bytes())?;
        let mut f = std::fs::File::create(&csv)?;
        f.write_all(log.as_bytes())?;
        info!("epoch {} done at step {} (val {:?})", trainer.state.epoch, trainer.state.step, val);
        if n == 0 && !trainer.finished() {
            break;
        }
    }
    Ok(TrainOutput {
        last,
        best,
        loss_csv: csv,
        state: trainer.state,
    })
}

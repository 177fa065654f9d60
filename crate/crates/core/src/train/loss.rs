//! Reconstruction, Jacobian and sparsity losses.

use std::sync::Arc;

use npmesh_geom::Vec3;
use npmesh_grad::{Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::net::model::positions_tensor;
use crate::net::ops::JacobianOp;
use crate::net::FeatureSet;

/// How the per-level vertex error of the correspondence loss is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrNorm {
    /// `(1/|V|) sum_v |v~ - v|`.
    #[default]
    VertexMean,
    /// `(1/|V|) |V~ - V|_F`.
    Frobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub corr: f64,
    pub jacobian: f64,
    pub sparsity: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossBreakdown {
    pub fn new(corr: f64, jacobian: f64, sparsity: f64, w: LossWeights) -> Self {
        Self {
            corr,
            jacobian,
            sparsity,
            total: combine(corr, jacobian, sparsity, w),
            alpha: w.alpha,
            beta: w.beta,
        }
    }
}

fn combine(corr: f64, jac: f64, sp: f64, w: LossWeights) -> f64 {
    (corr + jac * w.alpha) + sp * w.beta
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut it = vars.iter().copied();
    let first = it
        .next()
        .ok_or_else(|| CoreError::InvalidArgument("loss over zero levels".into()))?;
    it.try_fold(first, |acc, v| Ok(tape.add(acc, v)?))
}

/// Sum over levels of the per-level correspondence error. `pred[i]` and
/// `truth[i]` are matching levels.
pub fn loss_corr(tape: &mut Tape, pred: &[Var], truth: &[&[Vec3]], norm: CorrNorm) -> Result<Var> {
    if pred.len() != truth.len() {
        return Err(CoreError::InvalidArgument("level count mismatch".into()));
    }
    let mut terms = Vec::with_capacity(pred.len());
    for (&p, t) in pred.iter().zip(truth) {
        if tape.value(p).dims2() != (t.len(), 3) {
            return Err(CoreError::Topology(format!("{:?} predicted vs {} true vertices", tape.value(p).shape(), t.len())));
        }
        let c = tape.constant(positions_tensor(t));
        let d = tape.sub(p, c)?;
        let term = match norm {
            CorrNorm::VertexMean => {
                let r = tape.row_l2(d);
                tape.mean(r)
            }
            CorrNorm::Frobenius => {
                let f = tape.frobenius(d);
                tape.scale(f, 1.0 / t.len() as f64)
            }
        };
        terms.push(term);
    }
    sum_vars(tape, &terms)
}

/// Sum over levels of the mean `|J - I|_F` over faces.
pub fn loss_jacobian(tape: &mut Tape, pred: &[Var], truth: &[&[Vec3]], faces: &[Arc<Vec<[usize; 3]>>]) -> Result<Var> {
    if pred.len() != truth.len() || pred.len() != faces.len() {
        return Err(CoreError::InvalidArgument("level count mismatch".into()));
    }
    let mut terms = Vec::with_capacity(pred.len());
    for ((&p, t), f) in pred.iter().zip(truth).zip(faces) {
        let op = JacobianOp::new(f.clone(), t)?;
        terms.push(tape.custom(Arc::new(op), &[p])?);
    }
    sum_vars(tape, &terms)
}

/// `sum_i |f^i|_1 / |F^i|`.
pub fn loss_sparsity(tape: &mut Tape, features: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(features.len());
    for &f in features {
        let rows = tape.value(f).dims2().0.max(1);
        let l = tape.l1_sum(f);
        terms.push(tape.scale(l, 1.0 / rows as f64));
    }
    sum_vars(tape, &terms)
}

pub fn total_loss(tape: &mut Tape, corr: Var, jac: Var, sp: Var, w: LossWeights) -> Result<Var> {
    let j = tape.scale(jac, w.alpha);
    let s = tape.scale(sp, w.beta);
    let a = tape.add(corr, j)?;
    Ok(tape.add(a, s)?)
}

/// Evaluate the correspondence loss on plain position arrays.
pub fn corr_value(pred: &[Vec<Vec3>], truth: &[Vec<Vec3>], norm: CorrNorm) -> Result<f64> {
    let mut tape = Tape::new();
    let p: Vec<Var> = pred.iter().map(|x| tape.constant(positions_tensor(x))).collect();
    let t: Vec<&[Vec3]> = truth.iter().map(|x| x.as_slice()).collect();
    let v = loss_corr(&mut tape, &p, &t, norm)?;
    Ok(tape.value(v).item())
}

/// Evaluate the Jacobian loss on plain position arrays.
pub fn jacobian_value(pred: &[Vec<Vec3>], truth: &[Vec<Vec3>], faces: &[Vec<[usize; 3]>]) -> Result<f64> {
    let mut tape = Tape::new();
    let p: Vec<Var> = pred.iter().map(|x| tape.constant(positions_tensor(x))).collect();
    let t: Vec<&[Vec3]> = truth.iter().map(|x| x.as_slice()).collect();
    let f: Vec<Arc<Vec<[usize; 3]>>> = faces.iter().map(|x| Arc::new(x.clone())).collect();
    let v = loss_jacobian(&mut tape, &p, &t, &f)?;
    Ok(tape.value(v).item())
}

/// Evaluate the sparsity loss of a feature set.
pub fn sparsity_value(features: &FeatureSet) -> f64 {
    features
        .levels
        .iter()
        .map(|l| {
            let s: f64 = l.iter().flatten().map(|x| (*x as f64).abs()).sum();
            s / l.len().max(1) as f64
        })
        .sum()
}

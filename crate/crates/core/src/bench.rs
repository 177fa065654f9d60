//! Rate-distortion benchmark of the neural codec against QSlim and
//! classical subdivision at matched compression ratios.

use std::str::FromStr;

use npmesh_geom::baselines::SubdivisionScheme;
use npmesh_geom::lod::{build_hierarchy, quadric_decimate, HierarchyOptions};
use npmesh_geom::metrics::{deviation_to, Target};
use npmesh_geom::HalfEdgeMesh;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, compression_ratio, ProgressiveStream, Ranking};
use crate::error::{CoreError, Result};
use crate::net::Model;
use crate::train::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Neural,
    Qslim,
    Midpoint,
    Loop,
    Butterfly,
}

impl Method {
    pub const ALL: [Method; 5] = [Self::Neural, Self::Qslim, Self::Midpoint, Self::Loop, Self::Butterfly];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Neural => "neural",
            Self::Qslim => "qslim",
            Self::Midpoint => "midpoint",
            Self::Loop => "loop",
            Self::Butterfly => "butterfly",
        }
    }
}

impl FromStr for Method {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CoreError::InvalidArgument(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    /// Transmitted feature counts.
    pub budgets: Vec<usize>,
    pub coarse_faces: usize,
    pub seed: u64,
    pub samples: usize,
    pub ranking: Ranking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mesh: String,
    pub method: Method,
    pub budget: usize,
    pub cr: f64,
    pub d_pm: f64,
    pub d_normal: f64,
}

pub const CSV_HEADER: &str = "mesh,method,budget,CR,d_pm,d_normal";

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.mesh,
            r.method.name(),
            r.budget,
            r.cr,
            r.d_pm,
            r.d_normal
        ));
    }
    out
}

/// Face count of a QSlim mesh whose vertex count matches `3|V^0| + 8k`
/// floats: every extra vertex costs three floats and adds two faces.
pub fn matched_face_count(coarse_faces: usize, budget: usize) -> usize {
    coarse_faces + 2 * (8.0 * budget as f64 / 3.0).round() as usize
}

fn mesh_rows(name: &str, gt: &HalfEdgeMesh, model: Option<&Model>, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let levels = model.map_or(3, |m| m.levels);
    let opts = HierarchyOptions {
        target_faces: cfg.coarse_faces,
        levels,
        seed: cfg.seed,
        jitter: 0.0,
    };
    let h = build_hierarchy(gt, &opts)?;
    let f0 = h.levels[0].faces.len();
    let target = Target::new(gt);
    let score = |m: &HalfEdgeMesh| deviation_to(m, &target, cfg.samples, cfg.seed);
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for &k in &cfg.budgets {
            let (cr, mesh) = match method {
                Method::Neural => {
                    let model = model.ok_or_else(|| CoreError::InvalidArgument("neural method needs a model".into()))?;
                    let sample = Sample::from_hierarchy(name, &h)?;
                    let bytes = codec::encode(model, &sample, k, cfg.ranking)?;
                    let stream = ProgressiveStream::parse(&bytes, None)?;
                    let cr = compression_ratio(gt.num_vertices(), stream.coarse_positions.len(), stream.records.len());
                    (cr, codec::decode_stream(&stream, model, levels)?)
                }
                _ => {
                    let faces = matched_face_count(f0, k).min(gt.num_faces());
                    let q = quadric_decimate(gt, faces, cfg.seed, 0.0)?.coarse;
                    let cr = compression_ratio(gt.num_vertices(), q.num_vertices(), 0);
                    let m = match method {
                        Method::Qslim => q,
                        Method::Midpoint => SubdivisionScheme::Midpoint.apply(&q, levels)?,
                        Method::Loop => SubdivisionScheme::Loop.apply(&q, levels)?,
                        _ => SubdivisionScheme::Butterfly.apply(&q, levels)?,
                    };
                    (cr, m)
                }
            };
            let d = score(&mesh);
            rows.push(BenchRow {
                mesh: name.to_string(),
                method,
                budget: k,
                cr,
                d_pm: d.d_pm,
                d_normal: d.d_normal,
            });
        }
    }
    Ok(rows)
}

/// One row per mesh, method and budget, in that order.
pub fn run_benchmark(meshes: &[(String, HalfEdgeMesh)], model: Option<&Model>, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let per_mesh = meshes
        .par_iter()
        .map(|(name, m)| mesh_rows(name, m, model, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_mesh.into_iter().flatten().collect())
}

//! Reconstruction quality reports.

use npmesh_geom::metrics::{deviation, symmetric_deviation};
use npmesh_geom::HalfEdgeMesh;
use serde::{Deserialize, Serialize};

use crate::codec::{compression_ratio, ProgressiveStream};
use crate::error::Result;

/// Sizes that determine the compression ratio of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSizes {
    pub original_vertices: usize,
    pub coarse_vertices: usize,
    pub records: usize,
}

impl StreamSizes {
    pub fn of(stream: &ProgressiveStream, original_vertices: usize) -> Self {
        Self {
            original_vertices,
            coarse_vertices: stream.coarse_positions.len(),
            records: stream.records.len(),
        }
    }

    pub fn ratio(&self) -> f64 {
        compression_ratio(self.original_vertices, self.coarse_vertices, self.records)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub d_pm: f64,
    pub d_pm_stderr: f64,
    /// `d_pm` in units of 1e-4.
    pub d_pm_e4: f64,
    pub d_normal: f64,
    pub cr: Option<f64>,
    pub stream: Option<StreamSizes>,
    pub samples: usize,
    pub seed: u64,
    pub symmetric: bool,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Deviation of `pred` from `gt` (both directions when `symmetric`).
pub fn evaluate(
    pred: &HalfEdgeMesh,
    gt: &HalfEdgeMesh,
    stream: Option<StreamSizes>,
    samples: usize,
    seed: u64,
    symmetric: bool,
) -> MetricsReport {
    let d = if symmetric {
        symmetric_deviation(pred, gt, samples, seed)
    } else {
        deviation(pred, gt, samples, seed)
    };
    MetricsReport {
        d_pm: d.d_pm,
        d_pm_stderr: d.d_pm_stderr,
        d_pm_e4: d.d_pm * 1e4,
        d_normal: d.d_normal,
        cr: stream.map(|s| s.ratio()),
        stream,
        samples,
        seed,
        symmetric,
    }
}

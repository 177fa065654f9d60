//! Progressive bitstream: coarse mesh followed by ranked feature records.
//!
//! Layout (little endian): magic `NPM1`, u8 version, u8 level count,
//! u32 `|V^0|`, u32 `|F^0|`, u32 record count, u32 CRC-32 of the payload.
//! The payload holds `V^0` as f32 triples, `F^0` as u32 triples and the
//! records as (u8 level, u32 face, 8 x f32).

use std::cmp::Ordering;
use std::str::FromStr;

use npmesh_geom::{HalfEdgeMesh, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::net::{FeatureSet, Model, Topology, TransmissionMask, LEARNED_WIDTH};
use crate::train::loss::{corr_value, jacobian_value, CorrNorm};
use crate::train::Sample;

pub const MAGIC: &[u8; 4] = b"NPM1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
pub const RECORD_LEN: usize = 1 + 4 + 4 * LEARNED_WIDTH;
/// Candidates scored by the loss ranking unless told otherwise.
pub const DEFAULT_LOSS_CANDIDATES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRecord {
    pub level: u8,
    pub face: u32,
    pub values: [f32; LEARNED_WIDTH],
}

impl FeatureRecord {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    fn key(&self) -> (u8, u32) {
        (self.level, self.face)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranking {
    #[default]
    Magnitude,
    Loss,
}

impl FromStr for Ranking {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(Ranking::Magnitude),
            "loss" => Ok(Ranking::Loss),
            _ => Err(CoreError::InvalidArgument(format!("unknown ranking '{s}'"))),
        }
    }
}

pub fn records_of(fs: &FeatureSet) -> Vec<FeatureRecord> {
    fs.levels
        .iter()
        .enumerate()
        .flat_map(|(l, rows)| {
            rows.iter().enumerate().map(move |(f, v)| FeatureRecord {
                level: l as u8,
                face: f as u32,
                values: *v,
            })
        })
        .collect()
}

fn by_score(a: (f64, &FeatureRecord), b: (f64, &FeatureRecord)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.key().cmp(&b.1.key()))
}

/// Descending L2 norm, ties by (level, face).
pub fn rank_records_magnitude(mut records: Vec<FeatureRecord>) -> Vec<FeatureRecord> {
    records.sort_by(|a, b| by_score((a.norm(), a), (b.norm(), b)));
    records
}

pub fn rank_features_magnitude(fs: &FeatureSet) -> Vec<FeatureRecord> {
    rank_records_magnitude(records_of(fs))
}

/// Correspondence plus Jacobian loss of a decoded hierarchy against the
/// true levels.
pub fn reconstruction_loss(pred: &[Vec<Vec3>], truth: &[Vec<Vec3>], topo: &Topology) -> Result<f64> {
    let faces: Vec<Vec<[usize; 3]>> = (1..truth.len()).map(|i| topo.level(i).faces.to_vec()).collect();
    Ok(corr_value(&pred[1..], &truth[1..], CorrNorm::VertexMean)? + jacobian_value(&pred[1..], &truth[1..], &faces)?)
}

fn round_positions(p: &[Vec3]) -> Vec<Vec3> {
    p.iter().map(|v| v.map(|x| x as f32 as f64)).collect()
}

/// Loss decrease when only `r` is transmitted, relative to sending none.
pub fn loss_scores(model: &Model, sample: &Sample, fs: &FeatureSet, candidates: &[FeatureRecord]) -> Result<Vec<f64>> {
    let topo = &sample.topology;
    let counts = fs.counts();
    let coarse = round_positions(&sample.levels[0]);
    let depth = topo.depth();
    let run = |mask: &TransmissionMask| -> Result<f64> {
        let pred = model.decode(topo, &coarse, fs, mask, depth)?;
        reconstruction_loss(&pred, &sample.levels, topo)
    };
    let base = run(&TransmissionMask::none(&counts))?;
    candidates
        .par_iter()
        .map(|r| {
            let mut m = TransmissionMask::none(&counts);
            m.levels[r.level as usize][r.face as usize] = true;
            Ok(base - run(&m)?)
        })
        .collect()
}

/// Score the `candidates` largest-magnitude features by their individual
/// loss decrease and put them first; the rest follow in magnitude order.
pub fn rank_features_by_loss(model: &Model, sample: &Sample, fs: &FeatureSet, candidates: usize) -> Result<Vec<FeatureRecord>> {
    let mut ranked = rank_features_magnitude(fs);
    let rest = ranked.split_off(candidates.min(ranked.len()));
    let scores = loss_scores(model, sample, fs, &ranked)?;
    let mut scored: Vec<(f64, FeatureRecord)> = scores.into_iter().zip(ranked).collect();
    scored.sort_by(|a, b| by_score((a.0, &a.1), (b.0, &b.1)));
    Ok(scored.into_iter().map(|(_, r)| r).chain(rest).collect())
}

/// `3|V| / (3|V^0| + 8k)`.
pub fn compression_ratio(original_vertices: usize, coarse_vertices: usize, records: usize) -> f64 {
    (3 * original_vertices) as f64 / (3 * coarse_vertices + LEARNED_WIDTH * records) as f64
}

/// A parsed (possibly partial) stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressiveStream {
    pub levels: u8,
    pub coarse_positions: Vec<[f32; 3]>,
    pub coarse_faces: Vec<[u32; 3]>,
    pub records: Vec<FeatureRecord>,
}

fn fmt(msg: impl Into<String>) -> CoreError {
    CoreError::Format(msg.into())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

impl ProgressiveStream {
    pub fn coarse_end(&self) -> usize {
        HEADER_LEN + 12 * self.coarse_positions.len() + 12 * self.coarse_faces.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.coarse_end() - HEADER_LEN + RECORD_LEN * self.records.len());
        for p in &self.coarse_positions {
            p.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes()));
        }
        for f in &self.coarse_faces {
            f.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes()));
        }
        for r in &self.records {
            payload.push(r.level);
            payload.extend_from_slice(&r.face.to_le_bytes());
            r.values.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes()));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.levels);
        out.extend_from_slice(&(self.coarse_positions.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.coarse_faces.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// Parse the first `prefix` bytes (all when `None`). A prefix must end
    /// on a record boundary; the checksum is verified only when the whole
    /// stream is present.
    pub fn parse(bytes: &[u8], prefix: Option<usize>) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(fmt("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(fmt(format!("unsupported version {}", bytes[4])));
        }
        let levels = bytes[5];
        let nv = u32_at(bytes, 6) as usize;
        let nf = u32_at(bytes, 10) as usize;
        let k = u32_at(bytes, 14) as usize;
        let crc = u32_at(bytes, 18);
        let coarse_end = HEADER_LEN + 12 * nv + 12 * nf;
        let full = coarse_end + RECORD_LEN * k;
        let len = match prefix {
            None => {
                if bytes.len() != full {
                    return Err(fmt(format!("stream has {} bytes, header announces {full}", bytes.len())));
                }
                full
            }
            Some(p) => {
                if p > bytes.len() || p > full {
                    return Err(fmt(format!("prefix of {p} bytes exceeds the stream")));
                }
                p
            }
        };
        if len < coarse_end {
            return Err(fmt("truncated coarse mesh block"));
        }
        if (len - coarse_end) % RECORD_LEN != 0 {
            return Err(fmt("prefix does not end on a record boundary"));
        }
        if len == full && crc32fast::hash(&bytes[HEADER_LEN..full]) != crc {
            return Err(fmt("checksum mismatch"));
        }
        let b = &bytes[..len];
        let coarse_positions = (0..nv)
            .map(|i| std::array::from_fn(|j| f32_at(b, HEADER_LEN + 12 * i + 4 * j)))
            .collect();
        let fstart = HEADER_LEN + 12 * nv;
        let coarse_faces: Vec<[u32; 3]> = (0..nf).map(|i| std::array::from_fn(|j| u32_at(b, fstart + 12 * i + 4 * j))).collect();
        if coarse_faces.iter().flatten().any(|&v| v as usize >= nv) {
            return Err(fmt("face references a missing vertex"));
        }
        let records = (coarse_end..len)
            .step_by(RECORD_LEN)
            .map(|at| {
                let level = b[at];
                let face = u32_at(b, at + 1);
                if level >= levels || face as usize >= nf << (2 * level as usize) {
                    return Err(fmt(format!("record ({level}, {face}) out of range")));
                }
                Ok(FeatureRecord {
                    level,
                    face,
                    values: std::array::from_fn(|j| f32_at(b, at + 5 + 4 * j)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            levels,
            coarse_positions,
            coarse_faces,
            records,
        })
    }

    pub fn coarse_vertices(&self) -> Vec<Vec3> {
        self.coarse_positions
            .iter()
            .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64))
            .collect()
    }

    pub fn faces(&self) -> Vec<[usize; 3]> {
        self.coarse_faces.iter().map(|f| f.map(|v| v as usize)).collect()
    }

    /// Features and mask implied by the records present.
    pub fn features(&self, counts: &[usize]) -> (FeatureSet, TransmissionMask) {
        let mut fs = FeatureSet::zeros(counts);
        let mut mask = TransmissionMask::none(counts);
        for r in &self.records {
            fs.levels[r.level as usize][r.face as usize] = r.values;
            mask.levels[r.level as usize][r.face as usize] = true;
        }
        (fs, mask)
    }
}

/// Ranked records of a sample under `ranking`.
pub fn rank(model: &Model, sample: &Sample, fs: &FeatureSet, ranking: Ranking, candidates: usize) -> Result<Vec<FeatureRecord>> {
    match ranking {
        Ranking::Magnitude => Ok(rank_features_magnitude(fs)),
        Ranking::Loss => rank_features_by_loss(model, sample, fs, candidates),
    }
}

/// Stream with the coarse mesh of `sample` and its first `k` ranked
/// feature records.
pub fn encode(model: &Model, sample: &Sample, k: usize, ranking: Ranking) -> Result<Vec<u8>> {
    encode_with(model, sample, k, ranking, DEFAULT_LOSS_CANDIDATES)
}

pub fn encode_with(model: &Model, sample: &Sample, k: usize, ranking: Ranking, candidates: usize) -> Result<Vec<u8>> {
    let fs = model.encode(&sample.topology, &sample.levels)?;
    if k > fs.total() {
        return Err(CoreError::InvalidArgument(format!("{k} records requested, {} available", fs.total())));
    }
    let mut records = rank(model, sample, &fs, ranking, candidates)?;
    records.truncate(k);
    let t0 = sample.topology.level(0);
    let stream = ProgressiveStream {
        levels: model.levels as u8,
        coarse_positions: sample.levels[0].iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect(),
        coarse_faces: t0.faces.iter().map(|f| f.map(|v| v as u32)).collect(),
        records,
    };
    Ok(stream.to_bytes())
}

/// Reconstruct level `target` from a parsed stream.
pub fn decode_stream(stream: &ProgressiveStream, model: &Model, target: usize) -> Result<HalfEdgeMesh> {
    if stream.levels as usize != model.levels {
        return Err(CoreError::InvalidArgument(format!(
            "stream has {} levels, model has {}",
            stream.levels, model.levels
        )));
    }
    if target > model.levels {
        return Err(CoreError::InvalidArgument(format!("level {target} exceeds {}", model.levels)));
    }
    let coarse = stream.coarse_vertices();
    let topo = Topology::new(&stream.faces(), coarse.len(), model.levels)?;
    let counts = topo.face_counts();
    let (fs, mask) = stream.features(&counts[..model.levels]);
    let mut pos = model.decode(&topo, &coarse, &fs, &mask, target)?;
    let p = pos.pop().expect("at least level 0");
    Ok(HalfEdgeMesh::new(p, topo.level(target).faces.to_vec())?)
}

/// Decode the first `prefix` bytes (all when `None`) at level `target`.
pub fn decode(bytes: &[u8], model: &Model, prefix: Option<usize>, target: usize) -> Result<HalfEdgeMesh> {
    decode_stream(&ProgressiveStream::parse(bytes, prefix)?, model, target)
}

/// Byte length of a stream cut after `k` records.
pub fn prefix_len(stream: &ProgressiveStream, k: usize) -> usize {
    stream.coarse_end() + RECORD_LEN * k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(level: u8, face: u32, x: f32) -> FeatureRecord {
        FeatureRecord {
            level,
            face,
            values: [x; LEARNED_WIDTH],
        }
    }

    #[test]
    fn ratio_formula() {
        assert_eq!(compression_ratio(1000, 100, 0), 10.0);
        assert!((compression_ratio(50_000, 202, 400) - 150_000.0 / 3806.0).abs() < 1e-12);
    }

    #[test]
    fn magnitude_order_and_ties() {
        let r = rank_records_magnitude(vec![rec(1, 0, 1.0), rec(0, 3, 1.0), rec(0, 1, 5.0), rec(0, 2, 1.0)]);
        let keys: Vec<_> = r.iter().map(|r| r.key()).collect();
        assert_eq!(keys, vec![(0, 1), (0, 2), (0, 3), (1, 0)]);
    }

    #[test]
    fn header_checks() {
        let s = ProgressiveStream {
            levels: 1,
            coarse_positions: vec![[0.0; 3]; 3],
            coarse_faces: vec![[0, 1, 2]],
            records: vec![rec(0, 0, 0.5)],
        };
        let b = s.to_bytes();
        assert_eq!(b.len(), HEADER_LEN + 36 + 12 + RECORD_LEN);
        assert_eq!(ProgressiveStream::parse(&b, None).unwrap(), s);
        let mut bad = b.clone();
        *bad.last_mut().unwrap() ^= 1;
        assert!(matches!(ProgressiveStream::parse(&bad, None), Err(CoreError::Format(_))));
        assert!(ProgressiveStream::parse(&b[..b.len() - 1], None).is_err());
        assert!(ProgressiveStream::parse(&b, Some(b.len() - 1)).is_err());
        assert_eq!(ProgressiveStream::parse(&b, Some(b.len() - RECORD_LEN)).unwrap().records.len(), 0);
        bad = b.clone();
        bad[0] = b'X';
        assert!(ProgressiveStream::parse(&bad, None).is_err());
    }
}

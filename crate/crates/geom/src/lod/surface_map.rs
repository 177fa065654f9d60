//! Composition of per-collapse charts: coarse surface points back onto the
//! input surface.

use super::decimate::{CollapseRecord, Decimation};
use super::flatten::{locate, Vec2};
use crate::{BvhIndex, HalfEdgeMesh, SurfacePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapMethod {
    SelfParameterization,
    ProjectionFallback,
}

#[derive(Debug, Clone)]
pub struct SurfaceMap {
    records: Vec<CollapseRecord>,
    /// Records (ascending) in which a face appears after the collapse.
    face_records: Vec<Vec<u32>>,
    coarse_face_ids: Vec<usize>,
    original: BvhIndex,
    pub method: MapMethod,
}

impl SurfaceMap {
    pub fn build(original: &HalfEdgeMesh, decimation: &Decimation) -> Self {
        let mut face_records = vec![Vec::new(); original.num_faces()];
        for (i, r) in decimation.records.iter().enumerate() {
            for &(f, _) in &r.post_faces {
                face_records[f].push(i as u32);
            }
        }
        let method = if decimation.records.iter().all(|r| r.injective) {
            MapMethod::SelfParameterization
        } else {
            MapMethod::ProjectionFallback
        };
        Self {
            records: decimation.records.clone(),
            face_records,
            coarse_face_ids: decimation.face_ids.clone(),
            original: BvhIndex::build(original),
            method,
        }
    }

    pub fn records(&self) -> &[CollapseRecord] {
        &self.records
    }

    pub fn fallback_count(&self) -> usize {
        self.records.iter().filter(|r| !r.injective).count()
    }

    /// Image on the input mesh of a point on the coarse mesh.
    pub fn map_to_original(&self, p: &SurfacePoint) -> SurfacePoint {
        let mut face = self.coarse_face_ids[p.face];
        let mut bary = p.bary;
        let mut time = self.records.len();
        loop {
            let list = &self.face_records[face];
            let n = list.partition_point(|&r| (r as usize) < time);
            if n == 0 {
                return SurfacePoint::new(face, bary);
            }
            let ri = list[n - 1] as usize;
            let rec = &self.records[ri];
            let post = rec
                .post_faces
                .iter()
                .find(|(f, _)| *f == face)
                .expect("face listed in record")
                .1;
            if !rec.injective {
                let q = rec.post_positions[post[0]] * bary[0]
                    + rec.post_positions[post[1]] * bary[1]
                    + rec.post_positions[post[2]] * bary[2];
                return self.original.closest_point(&q).point;
            }
            let q: Vec2 =
                rec.post_uv(post[0]) * bary[0] + rec.post_uv(post[1]) * bary[1] + rec.post_uv(post[2]) * bary[2];
            let tris: Vec<[usize; 3]> = rec.pre_faces.iter().map(|f| f.1).collect();
            let (i, b) = locate(&q, &rec.pre_uv, &tris);
            face = rec.pre_faces[i].0;
            bary = b;
            time = ri;
        }
    }
}

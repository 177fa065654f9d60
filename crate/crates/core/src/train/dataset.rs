//! Dataset manifests and training samples.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use npmesh_geom::lod::{build_hierarchy, HierarchyOptions, LodHierarchy};
use npmesh_geom::{obj, HalfEdgeMesh, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::net::Topology;

/// Decimation seeds per mesh.
pub const SEEDS_PER_MESH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
    pub seeds: [u64; SEEDS_PER_MESH],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn keyed_hash(name: &str, seed: u64, salt: u64) -> u64 {
    let mut bytes = name.as_bytes().to_vec();
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(&salt.to_le_bytes());
    fnv1a(&bytes)
}

/// Split sizes for `n` meshes: rounded 80/10/10, test takes the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.8 * n as f64).round() as usize;
    let val = ((0.1 * n as f64).round() as usize).min(n - train);
    (train, val, n - train - val)
}

impl Manifest {
    /// Assign splits to the given mesh paths by ordering them on
    /// `hash(file name, seed)`.
    pub fn from_paths(paths: &[PathBuf], seed: u64) -> Result<Self> {
        if paths.is_empty() {
            return Err(CoreError::InvalidArgument("no meshes to list".into()));
        }
        let name = |p: &PathBuf| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut keyed: Vec<(u64, &PathBuf)> = paths.iter().map(|p| (keyed_hash(&name(p), seed, 0), p)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        let (train, val, _) = split_sizes(paths.len());
        let mut entries: Vec<ManifestEntry> = keyed
            .into_iter()
            .enumerate()
            .map(|(i, (_, p))| {
                let split = if i < train {
                    Split::Train
                } else if i < train + val {
                    Split::Val
                } else {
                    Split::Test
                };
                let n = name(p);
                let seeds = std::array::from_fn(|j| keyed_hash(&n, seed, j as u64 + 1));
                ManifestEntry { path: p.clone(), split, seeds }
            })
            .collect();
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Self { entries })
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == s)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m = Self::from_jsonl(&std::fs::read_to_string(path)?)?;
        if m.entries.is_empty() {
            return Err(CoreError::InvalidArgument(format!("manifest {} is empty", path.display())));
        }
        Ok(m)
    }
}

/// Load an OBJ and scale it into the unit cube.
pub fn load_normalized(path: &Path) -> Result<HalfEdgeMesh> {
    let m = obj::load_obj(path)?;
    Ok(m.normalize_to_unit_cube()?.0)
}

/// Manifest of every valid `.obj` in `dir`. Meshes failing validation are
/// skipped with a warning.
pub fn build_manifest(dir: &Path, seed: u64) -> Result<Manifest> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
        .collect();
    paths.sort();
    let valid: Vec<PathBuf> = paths
        .into_iter()
        .filter(|p| match obj::load_obj(p) {
            Ok(m) => {
                let r = m.validate();
                if r.is_valid() && r.is_watertight {
                    true
                } else {
                    warn!("excluding {}: {r:?}", p.display());
                    false
                }
            }
            Err(e) => {
                warn!("excluding {}: {e}", p.display());
                false
            }
        })
        .collect();
    if valid.is_empty() {
        return Err(CoreError::InvalidArgument(format!("no valid meshes in {}", dir.display())));
    }
    Manifest::from_paths(&valid, seed)
}

/// One hierarchy ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub levels: Vec<Vec<Vec3>>,
    pub topology: Arc<Topology>,
}

impl Sample {
    pub fn from_hierarchy(name: impl Into<String>, h: &LodHierarchy) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            levels: h.levels.iter().map(|l| l.positions.clone()).collect(),
            topology: Arc::new(Topology::of_hierarchy(h)?),
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }
}

/// Hierarchies of `mesh` for the first `count` decimation seeds.
pub fn samples_for_mesh(name: &str, mesh: &HalfEdgeMesh, seeds: &[u64], base: &HierarchyOptions) -> Result<Vec<Sample>> {
    seeds
        .par_iter()
        .map(|&s| {
            let h = build_hierarchy(mesh, &HierarchyOptions { seed: s, ..*base })?;
            Sample::from_hierarchy(format!("{name}#{s}"), &h)
        })
        .collect()
}

/// Samples of every manifest entry in split `split`, in manifest order.
pub fn load_split(manifest: &Manifest, split: Split, decimations: usize, base: &HierarchyOptions) -> Result<Vec<Sample>> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    let per_mesh = entries
        .par_iter()
        .map(|e| {
            let mesh = load_normalized(&e.path)?;
            let n = decimations.clamp(1, SEEDS_PER_MESH);
            samples_for_mesh(&e.path.display().to_string(), &mesh, &e.seeds[..n], base)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_mesh.into_iter().flatten().collect())
}

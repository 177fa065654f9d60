#![allow(dead_code)]

use npmesh_core::train::Sample;
use npmesh_core::Model;
use npmesh_geom::lod::{build_hierarchy, HierarchyOptions};
use npmesh_geom::shapes;
use npmesh_grad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hierarchy of a corpus shape as a training sample.
pub fn sample(mesh_seed: u64, coarse_faces: usize, levels: usize) -> Sample {
    let mesh = shapes::corpus_mesh(mesh_seed, 1);
    let opts = HierarchyOptions {
        target_faces: coarse_faces,
        levels,
        seed: 0,
        jitter: 0.0,
    };
    let h = build_hierarchy(&mesh, &opts).unwrap();
    Sample::from_hierarchy(format!("corpus{mesh_seed}"), &h).unwrap()
}

/// A model whose displacement layers are random instead of zero.
pub fn random_model(levels: usize, seed: u64, scale: f64) -> Model {
    let mut m = Model::new(levels, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    let names: Vec<String> = m.store.names().filter(|n| n.contains(".disp.")).map(String::from).collect();
    for n in names {
        let p = m.store.get_mut(&n).unwrap();
        let shape = p.value.shape().to_vec();
        let data = (0..p.value.len()).map(|_| rng.gen_range(-scale..scale)).collect();
        p.value = Tensor::new(shape, data).unwrap();
    }
    m
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

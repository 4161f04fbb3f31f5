//! Shared fixtures for the kernel benchmarks.

use ndarray::Array2;
use rand::Rng;

use featquant::evaluation::kraemer_sample;
use featquant::{BlockSpec, Dataset, SynthSpec};

/// Five-class synthetic dataset with one signal and two noise blocks.
pub fn dataset(per_class: usize, dims: usize, seed: u64) -> Dataset {
    SynthSpec {
        n_classes: 5,
        blocks: vec![
            BlockSpec::signal("signal", dims, 0.3),
            BlockSpec::noise("noise1", dims),
            BlockSpec::noise("noise2", dims),
        ],
        instances_per_class: vec![per_class; 5],
        seed,
    }
    .generate()
    .expect("valid synthetic spec")
}

/// Random posterior rows drawn uniformly from the simplex.
pub fn posteriors(rows: usize, classes: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut p = Array2::zeros((rows, classes));
    for mut row in p.rows_mut() {
        for (dst, v) in row.iter_mut().zip(kraemer_sample(classes, rng).as_slice()) {
            *dst = v.max(1e-9);
        }
    }
    p
}

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shallow_cascade::cascade::CascadeModel;
use shallow_cascade::data::{Dataset, FeatureView};
use shallow_cascade::models::{init_params, StageModel, StageSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard-normal features with labels drawn at rate 1/2 (at least one of each).
pub fn random_data(n: usize, dim: usize, seed: u64) -> Dataset<f64> {
    let mut r = rng(seed);
    let features = Array2::from_shape_fn((n, dim), |_| r.sample::<f64, _>(StandardNormal));
    let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
    labels[0] = 0;
    labels[n - 1] = 1;
    Dataset::new(features, labels, None).unwrap()
}

/// Stage with every parameter drawn from N(0, scale²).
pub fn random_stage(spec: &StageSpec, seed: u64, scale: f64) -> StageModel<f64> {
    let mut m = init_params(spec, 0).unwrap();
    let mut r = rng(seed);
    let values: Vec<f64> = (0..m.num_params()).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
    m.assign_flat(&values);
    m
}

pub fn random_spec(kind: usize, dim: usize) -> StageSpec {
    let view = FeatureView::range(0, dim);
    match kind % 3 {
        0 => StageSpec::linear(view),
        1 => StageSpec::one_hidden(4, view),
        _ => StageSpec::two_hidden(3, 4, view),
    }
}

pub fn random_cascade(stages: usize, dim: usize, alpha: f64, seed: u64) -> CascadeModel<f64> {
    let stages = (0..stages)
        .map(|l| random_stage(&random_spec(seed as usize + l, dim), seed * 31 + l as u64, 0.8))
        .collect();
    CascadeModel::new(stages, alpha).unwrap()
}

/// Linear stage on `dim` columns whose output is σ(x[col]).
pub fn probe_stage(col: usize, dim: usize) -> StageModel<f64> {
    let mut m = init_params(&StageSpec::linear(FeatureView::range(0, dim)), 0).unwrap();
    m.layers[0].weights[(0, col)] = 1.0;
    m
}

/// Cascade whose stage l outputs exactly σ(x[l]); feed it logits.
pub fn probe_cascade(stages: usize, alpha: f64) -> CascadeModel<f64> {
    CascadeModel::new((0..stages).map(|l| probe_stage(l, stages)).collect(), alpha).unwrap()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

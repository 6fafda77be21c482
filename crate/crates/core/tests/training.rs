//! Behaviour of the optimization drivers on toy and synthetic data.

mod common;

use ndarray::Array2;
use shallow_cascade::cascade::{cost_penalty, objective, CascadeModel, CostSchedule};
use shallow_cascade::data::{stratified_split, synth_generate, zscore_fit_apply, Dataset, FeatureView, SynthConfig};
use shallow_cascade::models::{init_params, StageSpec};
use shallow_cascade::runtime::{default_schedule, hard_classify};
use shallow_cascade::sweep::{Architecture, FeatureLayout};
use shallow_cascade::training::{
    joint_finetune, reverse_init, reverse_init_upstream, train_final_stage, train_standalone, TrainConfig,
};

fn cfg(epochs: usize) -> TrainConfig<f64> {
    TrainConfig { epochs, ..TrainConfig::default() }
}

/// Normalized training split of the default synthetic data, shrunk to
/// `train_count` cases to keep runs short.
fn synth_train(train_count: usize) -> Dataset<f64> {
    let data: Dataset<f64> = synth_generate(&SynthConfig::default()).unwrap();
    let pos = (train_count as f64 * 0.0758).round() as usize;
    let (train, _) = stratified_split(&data, train_count, pos, 3).unwrap();
    zscore_fit_apply(&train, &[]).unwrap().0
}

fn layout() -> FeatureLayout {
    FeatureLayout::leading(37, 5).unwrap()
}

#[test]
fn standalone_lr_separates_a_separable_toy_set() {
    let pts = [(-2.0, -1.0), (-1.5, 0.5), (-1.0, -2.0), (-0.5, 0.3), (0.6, -0.2), (1.0, 1.5), (1.5, -1.0), (2.0, 0.7)];
    let features = Array2::from_shape_fn((pts.len(), 2), |(i, j)| if j == 0 { pts[i].0 } else { pts[i].1 });
    let labels: Vec<u8> = pts.iter().map(|p| u8::from(p.0 + 0.2 * p.1 > 0.0)).collect();
    let data = Dataset::new(features, labels.clone(), None).unwrap();
    let model = init_params(&StageSpec::linear(FeatureView::range(0, 2)), 0).unwrap();
    let (trained, report) = train_standalone(&model, &data, &cfg(500)).unwrap();
    assert_eq!(report.trace.len(), 500);
    for (i, &y) in labels.iter().enumerate() {
        let p = trained.forward(&data.row(i).to_vec()).unwrap();
        assert_eq!(u8::from(p > 0.5), y, "instance {i} p={p}");
    }
    assert!(train_standalone(&model, &data, &cfg(0)).is_err());
}

#[test]
fn training_is_deterministic() {
    let data = synth_train(400);
    let cascade = Architecture::Casc2 { all_features_first: false }.build::<f64>(&layout(), 100.0, 5).unwrap();
    let schedule = default_schedule(&cascade, 1e-3).unwrap();
    let run = || {
        let init = reverse_init(&cascade, &data, &schedule, &cfg(40)).unwrap();
        joint_finetune(&init, &data, &schedule, &cfg(40)).unwrap().0.flatten()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn reverse_init_of_one_stage_is_standalone_training() {
    let data = synth_train(300);
    let cascade = Architecture::Single1Lnn.build::<f64>(&layout(), 100.0, 2).unwrap();
    let schedule = default_schedule(&cascade, 0.0).unwrap();
    let init = reverse_init(&cascade, &data, &schedule, &cfg(50)).unwrap();
    let (alone, _) = train_standalone(&cascade.stages[0], &data, &cfg(50)).unwrap();
    assert_eq!(init.stages[0], alone);
}

#[test]
fn reverse_init_freezes_downstream_stages() {
    let data = synth_train(300);
    let c = cfg(30);
    let fresh = Architecture::Casc3 { all_features_first: false }.build::<f64>(&layout(), 100.0, 4).unwrap();
    let schedule = default_schedule(&fresh, 1e-3).unwrap();
    let (last, _) = train_final_stage(&fresh, &data, &c).unwrap();
    let mut staged = fresh.clone();
    staged.stages[2] = last;

    let full = reverse_init_upstream(&staged, &data, &schedule, &c).unwrap();
    assert_eq!(full.stages[2], staged.stages[2], "final stage changed");

    // stage 2 is fitted before stage 1 exists as far as it is concerned
    let tail = CascadeModel::new(staged.stages[1..].to_vec(), 100.0).unwrap();
    let tail_init = reverse_init_upstream(&tail, &data, &schedule.suffix(1), &c).unwrap();
    assert_eq!(full.stages[1], tail_init.stages[0]);

    assert_eq!(reverse_init(&fresh, &data, &schedule, &c).unwrap(), full);
}

#[test]
fn reverse_init_first_stage_rejects_most_negatives() {
    let data = synth_train(3400);
    let cascade = Architecture::Casc2 { all_features_first: false }.build::<f64>(&layout(), 100.0, 7).unwrap();
    let schedule = default_schedule(&cascade, 1e-3).unwrap();
    let init = reverse_init(&cascade, &data, &schedule, &cfg(300)).unwrap();
    let (mut neg_rejected, mut pos_lost) = (0usize, 0usize);
    for i in 0..data.len() {
        let r = hard_classify(&init, &data.row(i).to_vec(), 0.5);
        let early_reject = r.label == 0 && r.stages_executed == 1;
        match data.labels()[i] {
            1 => pos_lost += usize::from(early_reject),
            _ => neg_rejected += usize::from(early_reject),
        }
    }
    let neg = data.len() - data.positive_count();
    let pos = data.positive_count();
    assert!(neg_rejected as f64 >= 0.7 * neg as f64, "stage 1 rejected {neg_rejected}/{neg} negatives");
    assert!(pos_lost as f64 <= 0.01 * pos as f64, "stage 1 rejected {pos_lost}/{pos} positives");
}

#[test]
fn joint_finetune_never_ends_above_its_start() {
    let data = synth_train(400);
    let cascade = Architecture::Casc2 { all_features_first: false }.build::<f64>(&layout(), 100.0, 1).unwrap();
    let schedule = default_schedule(&cascade, 1e-2).unwrap();
    let init = reverse_init(&cascade, &data, &schedule, &cfg(60)).unwrap();
    let before = objective(&init, &data, &schedule).unwrap();
    let (tuned, report) = joint_finetune(&init, &data, &schedule, &cfg(60)).unwrap();
    let after = objective(&tuned, &data, &schedule).unwrap();
    assert!(after <= before);
    assert!((report.final_objective - after).abs() <= 1e-9 * after);
}

#[test]
fn single_stage_finetune_reduces_to_standalone() {
    let data = synth_train(300);
    let cascade = Architecture::Single1Lnn.build::<f64>(&layout(), 100.0, 3).unwrap();
    let schedule = default_schedule(&cascade, 0.0).unwrap();
    let (tuned, report) = joint_finetune(&cascade, &data, &schedule, &cfg(200)).unwrap();
    let (alone, alone_report) = train_standalone(&cascade.stages[0], &data, &cfg(200)).unwrap();
    assert!((report.final_objective - alone_report.final_objective).abs() <= 1e-6);
    let tuned_alone = CascadeModel::new(vec![alone], 100.0).unwrap();
    let gap = objective(&tuned, &data, &schedule).unwrap() - objective(&tuned_alone, &data, &schedule).unwrap();
    assert!(gap.abs() <= 1e-6);
}

fn mean_penalty(c: &CascadeModel<f64>, data: &Dataset<f64>, schedule: &CostSchedule<f64>) -> f64 {
    (0..data.len())
        .map(|i| cost_penalty(&c.stage_probs(&data.row(i).to_vec()).unwrap(), schedule, c.alpha))
        .sum::<f64>()
        / data.len() as f64
}

#[test]
fn larger_lambda_lowers_expected_cost() {
    let data = synth_train(600);
    let cascade = Architecture::Casc2 { all_features_first: false }.build::<f64>(&layout(), 100.0, 2).unwrap();
    let zero = default_schedule(&cascade, 0.0).unwrap();
    let pipeline = |schedule: &CostSchedule<f64>| {
        let init = reverse_init(&cascade, &data, schedule, &cfg(100)).unwrap();
        joint_finetune(&init, &data, schedule, &cfg(100)).unwrap().0
    };
    let light = pipeline(&zero);
    // λ at which the cost term matches the loss term, times ten
    let loss = objective(&light, &data, &zero).unwrap();
    let cost = mean_penalty(&light, &data, &zero) * data.len() as f64;
    let heavy_schedule = zero.with_lambda(10.0 * loss / cost);
    let heavy = pipeline(&heavy_schedule);
    assert!(mean_penalty(&heavy, &data, &zero) < mean_penalty(&light, &data, &zero));
}

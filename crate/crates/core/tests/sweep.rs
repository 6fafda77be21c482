mod common;

use shallow_cascade::data::{stratified_split, synth_generate, zscore_fit_apply, Dataset, SynthConfig};
use shallow_cascade::sweep::{run_sweep, seed_average, select_best, Architecture, FeatureLayout, SweepConfig, TradeoffPoint};
use shallow_cascade::training::TrainConfig;

fn small_split() -> (Dataset<f64>, Dataset<f64>) {
    let cfg = SynthConfig { n_total: 500, ..SynthConfig::default() };
    let data: Dataset<f64> = synth_generate(&cfg).unwrap();
    let (train, test) = stratified_split(&data, 400, 30, 1).unwrap();
    let (train, test, _) = zscore_fit_apply(&train, &[&test]).unwrap();
    (train, test.into_iter().next().unwrap())
}

fn config(archs: Vec<Architecture>, grid: Vec<f64>, seeds: Vec<u64>) -> SweepConfig<f64> {
    let train_cfg = TrainConfig { epochs: 60, ..TrainConfig::default() };
    let mut cfg = SweepConfig::new(FeatureLayout::leading(37, 5).unwrap(), train_cfg);
    cfg.architectures = archs;
    cfg.lambda_grid = grid;
    cfg.seeds = seeds;
    cfg
}

const CASC2: Architecture = Architecture::Casc2 { all_features_first: false };

#[test]
fn one_grid_point_gives_one_point() {
    let (train, test) = small_split();
    let out = run_sweep(&config(vec![CASC2], vec![0.0], vec![3]), &train, &test).unwrap();
    assert_eq!(out.points.len(), 1);
    assert_eq!(out.models.len(), 1);
    assert!(out.points[0].mean_cost >= 1.0);
}

#[test]
fn cardinality_and_seed_separation() {
    let (train, test) = small_split();
    let archs = vec![Architecture::Single1Lnn, CASC2];
    let out = run_sweep(&config(archs, vec![0.0, 1e-3, 1e-1], vec![1, 2]), &train, &test).unwrap();
    assert!(out.failures.is_empty());
    assert_eq!(out.points.len(), 2 * 3 * 2);
    let same_lambda: Vec<&TradeoffPoint> =
        out.points.iter().filter(|p| p.architecture == "casc2" && p.lambda == 1e-3).collect();
    assert_eq!(same_lambda.len(), 2);
    assert_ne!(same_lambda[0].seed, same_lambda[1].seed);
    assert_eq!(seed_average(&out.points).len(), 2 * 3);
}

#[test]
fn zero_lambda_has_the_highest_cost() {
    let (train, test) = small_split();
    let grid = vec![0.0, 1e-3, 1e-2, 1e-1, 1.0];
    let out = run_sweep(&config(vec![CASC2], grid, vec![4]), &train, &test).unwrap();
    let zero = out.points.iter().find(|p| p.lambda == 0.0).unwrap();
    for p in &out.points {
        assert!(p.mean_cost <= zero.mean_cost, "lambda {} cost {} above {}", p.lambda, p.mean_cost, zero.mean_cost);
    }
}

#[test]
fn sweeps_are_reproducible_across_worker_counts() {
    let (train, test) = small_split();
    let mut cfg = config(vec![CASC2], vec![0.0, 1e-2], vec![5, 6]);
    let a = run_sweep(&cfg, &train, &test).unwrap();
    cfg.workers = 2;
    let b = run_sweep(&cfg, &train, &test).unwrap();
    assert_eq!(a.points, b.points);
}

#[test]
fn select_best_tie_breaks() {
    let p = |accuracy, mean_cost, lambda| TradeoffPoint {
        architecture: "casc2".into(),
        lambda,
        seed: None,
        accuracy,
        tpr: 0.0,
        fpr: 0.0,
        mean_cost,
        mean_stages: 1.0,
        mean_time_secs: None,
        mean_flops: 0.0,
    };
    assert_eq!(select_best(&[p(0.8, 1.0, 0.0), p(0.9, 5.0, 1.0)]).unwrap().lambda, 1.0);
    assert_eq!(select_best(&[p(0.9, 3.0, 0.0), p(0.9, 2.0, 1.0)]).unwrap().lambda, 1.0);
    assert_eq!(select_best(&[p(0.9, 2.0, 0.5), p(0.9, 2.0, 0.1)]).unwrap().lambda, 0.1);
}

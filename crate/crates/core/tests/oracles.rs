//! Results checked against independent re-implementations written here.

mod common;

use common::*;
use rand::Rng;
use shallow_cascade::cascade::{
    cost_penalty, objective, soft_cascade_objective, CascadeModel, CostSchedule,
};
use shallow_cascade::data::{synth_generate, Dataset, SynthConfig};
use shallow_cascade::models::StageModel;
use shallow_cascade::runtime::evaluate;
use shallow_cascade::sweep::{pareto_front, select_best, TradeoffPoint};

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Plain loop forward pass over the stage's own view.
fn stage_prob(m: &StageModel<f64>, row: &[f64]) -> f64 {
    let mut h: Vec<f64> = m.spec.view.indices().iter().map(|&j| row[j]).collect();
    for layer in &m.layers {
        let (rows, cols) = layer.weights.dim();
        let mut next = vec![0.0; rows];
        for r in 0..rows {
            let mut z = layer.bias[r];
            for c in 0..cols {
                z += layer.weights[(r, c)] * h[c];
            }
            next[r] = logistic(z);
        }
        h = next;
    }
    h[0]
}

fn clamp(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

fn nll(y: u8, p: f64) -> f64 {
    if y == 1 { -clamp(p).ln() } else { -(1.0 - clamp(p)).ln() }
}

fn spreadsheet_objective(c: &CascadeModel<f64>, d: &Dataset<f64>, kappa: &[f64], lambda: f64, soft: bool) -> f64 {
    let mut total = 0.0;
    for i in 0..d.len() {
        let row = d.row(i).to_vec();
        let p: Vec<f64> = c.stages.iter().map(|s| stage_prob(s, &row)).collect();
        let g: Vec<f64> = p
            .iter()
            .map(|&v| if soft { v } else { logistic(c.alpha * (v - 0.5)) })
            .collect();
        let combined = if soft {
            p.iter().product()
        } else {
            let mut acc = 0.0;
            for l in 0..p.len() {
                let reach: f64 = g[..l].iter().product();
                let stop = if l + 1 == p.len() { 1.0 } else { 1.0 - g[l] };
                acc += stop * reach * p[l];
            }
            acc
        };
        let mut cost = 0.0;
        for l in 0..kappa.len() {
            cost += kappa[l] * g[..l].iter().product::<f64>();
        }
        total += nll(d.labels()[i], combined) + lambda * cost;
    }
    total
}

#[test]
fn objective_matches_scalar_recomputation() {
    for seed in 0..20u64 {
        let stages = 1 + (seed % 3) as usize;
        let alpha = [1.0, 10.0, 100.0][(seed % 3) as usize];
        let c = random_cascade(stages, 6, alpha, seed);
        let d = random_data(25, 6, seed + 5);
        let kappa: Vec<f64> = (0..stages).map(|l| 1.0 + 2.5 * l as f64).collect();
        let schedule = CostSchedule::new(kappa.clone(), 0.3).unwrap();
        for (soft, value) in [
            (false, objective(&c, &d, &schedule).unwrap()),
            (true, soft_cascade_objective(&c, &d, &schedule).unwrap()),
        ] {
            let oracle = spreadsheet_objective(&c, &d, &kappa, 0.3, soft);
            assert!((value - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), "seed {seed} soft={soft}: {value} vs {oracle}");
        }
    }
}

#[test]
fn lambda_adds_exactly_the_summed_penalty() {
    let c = random_cascade(3, 4, 100.0, 9);
    let d = random_data(30, 4, 10);
    let s0 = CostSchedule::new(vec![1.0, 3.0, 8.0], 0.0).unwrap();
    let s1 = s0.with_lambda(0.25);
    let penalty: f64 = (0..d.len())
        .map(|i| {
            let p = c.stage_probs(&d.row(i).to_vec()).unwrap();
            cost_penalty(&p, &s0, 100.0)
        })
        .sum();
    let diff = objective(&c, &d, &s1).unwrap() - objective(&c, &d, &s0).unwrap();
    assert!((diff - 0.25 * penalty).abs() < 1e-9 * penalty);
}

#[test]
fn synthetic_cheap_view_rejects_most_negatives() {
    let cfg = SynthConfig::default();
    let data: Dataset<f64> = synth_generate(&cfg).unwrap();
    let n = data.len();
    let k = cfg.cheap_dim;
    // standardize the cheap columns by hand
    let mut x = vec![vec![0.0; k]; n];
    for j in 0..k {
        let col: Vec<f64> = (0..n).map(|i| data.features()[(i, j)]).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        for i in 0..n {
            x[i][j] = (col[i] - m) / sd;
        }
    }
    // full-batch gradient descent on the logistic loss
    let y: Vec<f64> = data.labels().iter().map(|&v| v as f64).collect();
    let (mut w, mut b) = (vec![0.0; k], 0.0);
    for _ in 0..1000 {
        let (mut gw, mut gb) = (vec![0.0; k], 0.0);
        for i in 0..n {
            let z: f64 = b + (0..k).map(|j| w[j] * x[i][j]).sum::<f64>();
            let r = logistic(z) - y[i];
            gb += r;
            for j in 0..k {
                gw[j] += r * x[i][j];
            }
        }
        b -= 0.5 * gb / n as f64;
        for j in 0..k {
            w[j] -= 0.5 * gw[j] / n as f64;
        }
    }
    let score = |i: usize| b + (0..k).map(|j| w[j] * x[i][j]).sum::<f64>();
    let mut pos: Vec<f64> = (0..n).filter(|&i| y[i] == 1.0).map(score).collect();
    pos.sort_by(f64::total_cmp);
    let threshold = pos[pos.len() / 100];
    let pos_recall = pos.iter().filter(|&&s| s >= threshold).count() as f64 / pos.len() as f64;
    let negs: Vec<f64> = (0..n).filter(|&i| y[i] == 0.0).map(score).collect();
    let neg_recall = negs.iter().filter(|&&s| s < threshold).count() as f64 / negs.len() as f64;
    assert!(pos_recall >= 0.99, "{pos_recall}");
    assert!(neg_recall >= cfg.cheap_separable_fraction, "negative recall {neg_recall}");
}

#[test]
fn evaluate_matches_hand_enumeration() {
    // stage probabilities per instance and labels
    let cases: [([f64; 2], u8); 7] = [
        ([0.9, 0.8], 1), // accept, correct
        ([0.9, 0.2], 1), // stage 2 rejects a positive
        ([0.3, 0.9], 0), // stage 1 rejects a negative
        ([0.7, 0.6], 0), // accepted negative
        ([0.4, 0.4], 1), // stage 1 rejects a positive
        ([0.6, 0.45], 0), // stage 2 rejects a negative
        ([0.55, 0.95], 1), // accept
    ];
    let features = ndarray::Array2::from_shape_fn((cases.len(), 2), |(i, j)| logit(cases[i].0[j]));
    let labels = cases.iter().map(|c| c.1).collect();
    let data = Dataset::new(features, labels, None).unwrap();
    let report = evaluate(&probe_cascade(2, 100.0), &data, &CostSchedule::new(vec![1.0, 4.0], 0.0).unwrap()).unwrap();
    assert_eq!((report.true_pos, report.false_pos, report.true_neg, report.false_neg), (2, 1, 2, 2));
    assert!((report.accuracy - 4.0 / 7.0).abs() < 1e-15);
    assert!((report.tpr - 0.5).abs() < 1e-15);
    assert!((report.fpr - 1.0 / 3.0).abs() < 1e-15);
    // stages run: 2,2,1,2,1,2,2 → costs 5,5,1,5,1,5,5
    assert!((report.mean_cost - 27.0 / 7.0).abs() < 1e-12);
    assert!((report.mean_stages - 12.0 / 7.0).abs() < 1e-12);
}

fn point(accuracy: f64, mean_cost: f64, lambda: f64) -> TradeoffPoint {
    TradeoffPoint {
        architecture: "casc3".into(),
        lambda,
        seed: Some(0),
        accuracy,
        tpr: 0.0,
        fpr: 0.0,
        mean_cost,
        mean_stages: 1.0,
        mean_time_secs: None,
        mean_flops: 0.0,
    }
}

fn brute_front(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let mut keep: Vec<TradeoffPoint> = points
        .iter()
        .filter(|b| {
            !points.iter().any(|a| {
                a.accuracy >= b.accuracy && a.mean_cost <= b.mean_cost && (a.accuracy > b.accuracy || a.mean_cost < b.mean_cost)
            })
        })
        .cloned()
        .collect();
    keep.sort_by(|a, b| a.mean_cost.total_cmp(&b.mean_cost));
    keep
}

#[test]
fn pareto_front_matches_brute_force() {
    let mut r = rng(42);
    for _ in 0..1000 {
        let n = r.random_range(1..=20);
        // coarse values force plenty of ties
        let pts: Vec<TradeoffPoint> = (0..n)
            .map(|i| point(r.random_range(0..6) as f64 / 5.0, r.random_range(1..8) as f64, i as f64))
            .collect();
        let front = pareto_front(&pts);
        assert_eq!(front, brute_front(&pts));
        let best = select_best(&pts).unwrap();
        assert!(front.contains(&best));
    }
}

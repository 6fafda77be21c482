//! Hard-decision cascade execution with early exit and cost accounting.

use std::hint::black_box;
use std::time::Instant;

use crate::cascade::{CascadeModel, CostSchedule};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Scratch, StageSpec};
use crate::scalar::Scalar;

/// Default decision threshold of every stage.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// FLOPs charged per logistic unit.
const LOGISTIC_FLOPS: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct HardResult<T> {
    pub label: u8,
    pub stages_executed: usize,
    /// Probabilities of the stages that actually ran.
    pub per_stage_probs: Vec<T>,
}

/// Run stages in order; the first stage with p ≤ threshold rejects the
/// instance and stops evaluation. A tie at the threshold rejects.
pub fn hard_classify<T: Scalar>(cascade: &CascadeModel<T>, x: &[T], threshold: T) -> HardResult<T> {
    let mut scratch = Scratch::default();
    let mut probs = Vec::with_capacity(cascade.len());
    for stage in &cascade.stages {
        let p = stage.forward_with(x, &mut scratch);
        probs.push(p);
        if p <= threshold {
            return HardResult { label: 0, stages_executed: probs.len(), per_stage_probs: probs };
        }
    }
    HardResult { label: 1, stages_executed: probs.len(), per_stage_probs: probs }
}

/// Label and number of stages run, without recording probabilities.
#[inline]
fn hard_label<T: Scalar>(
    cascade: &CascadeModel<T>,
    x: &[T],
    threshold: T,
    scratch: &mut Scratch<T>,
) -> (u8, usize) {
    for (l, stage) in cascade.stages.iter().enumerate() {
        if stage.forward_with(x, scratch) <= threshold {
            return (0, l + 1);
        }
    }
    (1, cascade.len())
}

/// Floating-point operation count of one stage evaluation: an affine map
/// d → m costs m·(2d + 1) and every logistic unit costs 5.
pub fn stage_flops(spec: &StageSpec) -> Result<u64> {
    spec.validate()?;
    let sizes = spec.layer_sizes();
    Ok(sizes
        .windows(2)
        .map(|w| {
            let (d, m) = (w[0] as u64, w[1] as u64);
            m * (2 * d + 1) + LOGISTIC_FLOPS * m
        })
        .sum())
}

/// FLOPs of every stage of a cascade.
pub fn cascade_flops<T: Scalar>(cascade: &CascadeModel<T>) -> Result<Vec<u64>> {
    cascade.stages.iter().map(|s| stage_flops(&s.spec)).collect()
}

/// κ_l = flops(l) / flops(1), so the first stage always costs 1.
pub fn default_schedule<T: Scalar>(cascade: &CascadeModel<T>, lambda: T) -> Result<CostSchedule<T>> {
    cascade.validate()?;
    let flops = cascade_flops(cascade)?;
    let base = flops[0] as f64;
    let kappa = flops.iter().map(|&f| T::of(f as f64 / base)).collect();
    CostSchedule::new(kappa, lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
    /// Mean over instances of Σ κ_l for the stages executed.
    pub mean_cost: f64,
    pub mean_stages: f64,
    /// Mean wall time per classification, when benchmarked.
    pub mean_time_secs: Option<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "arch,lambda,accuracy,tpr,fpr,mean_cost,mean_stages,mean_time_ns";

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn csv_row(&self, arch: &str, lambda: f64) -> String {
        format!(
            "{arch},{lambda},{},{},{},{},{},{}",
            self.accuracy,
            self.tpr,
            self.fpr,
            self.mean_cost,
            self.mean_stages,
            format_time_ns(self.mean_time_secs)
        )
    }
}

pub(crate) fn format_time_ns(secs: Option<f64>) -> String {
    secs.map(|s| format!("{:.3}", s * 1e9)).unwrap_or_default()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Hard-classify every instance and summarize accuracy and cost.
pub fn evaluate<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
) -> Result<EvalReport> {
    evaluate_at(cascade, data, schedule, T::of(DEFAULT_THRESHOLD))
}

pub fn evaluate_at<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
    threshold: T,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Config("evaluation data is empty".into()));
    }
    cascade.check_dim(data.dim())?;
    schedule.check_len(cascade.len())?;
    // cumulative cost of running the first k stages
    let mut cumulative = Vec::with_capacity(cascade.len() + 1);
    cumulative.push(0.0);
    for k in &schedule.kappa {
        cumulative.push(cumulative.last().copied().unwrap_or(0.0) + k.to_f64_lossy());
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    let mut cost = 0.0;
    let mut stages = 0usize;
    let mut scratch = Scratch::default();
    let mut row = Vec::with_capacity(data.dim());
    for (i, &y) in data.labels().iter().enumerate() {
        row.clear();
        row.extend(data.row(i).iter().copied());
        let (label, ran) = hard_label(cascade, &row, threshold, &mut scratch);
        cost += cumulative[ran];
        stages += ran;
        match (label, y) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fneg += 1,
            _ => tn += 1,
        }
    }
    let n = data.len();
    Ok(EvalReport {
        accuracy: ratio(tp + tn, n),
        tpr: ratio(tp, tp + fneg),
        fpr: ratio(fp, fp + tn),
        true_pos: tp,
        false_pos: fp,
        true_neg: tn,
        false_neg: fneg,
        mean_cost: cost / n as f64,
        mean_stages: stages as f64 / n as f64,
        mean_time_secs: None,
    })
}

/// Number of untimed calls before measurement starts.
pub const BENCH_WARMUP: usize = 100;

/// Mean wall-clock seconds per single-instance hard classification, over
/// `evaluations` calls cycling through the dataset.
pub fn bench<T: Scalar>(cascade: &CascadeModel<T>, data: &Dataset<T>, evaluations: usize) -> Result<f64> {
    if evaluations == 0 {
        return Err(Error::Config("bench needs at least one evaluation".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("bench data is empty".into()));
    }
    cascade.check_dim(data.dim())?;
    let rows: Vec<Vec<T>> = (0..data.len()).map(|i| data.row(i).to_vec()).collect();
    let threshold = T::of(DEFAULT_THRESHOLD);
    let mut scratch = Scratch::default();
    let mut sink = 0usize;
    for i in 0..BENCH_WARMUP {
        let (label, ran) = hard_label(cascade, &rows[i % rows.len()], threshold, &mut scratch);
        sink += usize::from(label) + ran;
    }
    let start = Instant::now();
    for i in 0..evaluations {
        let x = black_box(&rows[i % rows.len()]);
        let (label, ran) = hard_label(cascade, x, threshold, &mut scratch);
        sink += usize::from(label) + ran;
    }
    let elapsed = start.elapsed().as_secs_f64();
    black_box(sink);
    Ok(elapsed / evaluations as f64)
}

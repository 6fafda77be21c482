//! Regularization sweeps over λ, tradeoff-point collection, Pareto fronts
//! and max-accuracy selection.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::cascade::{CascadeModel, CostSchedule};
use crate::data::{Dataset, FeatureView};
use crate::error::{Error, Result};
use crate::models::{init_params, StageModel, StageSpec};
use crate::rng::child_seed;
use crate::runtime::{bench, cascade_flops, default_schedule, evaluate, format_time_ns};
use crate::scalar::Scalar;
use crate::training::{joint_finetune, reverse_init_upstream, train_final_stage, TrainConfig};

/// Named cascade layouts used in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// One network with 10 hidden units on every feature.
    Single1Lnn,
    /// Logistic regression, then a 10-unit network.
    Casc2 { all_features_first: bool },
    /// Logistic regression, a 3-unit network, then a 10-20 two-layer network.
    Casc3 { all_features_first: bool },
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Single1Lnn,
        Architecture::Casc2 { all_features_first: false },
        Architecture::Casc3 { all_features_first: false },
        Architecture::Casc2 { all_features_first: true },
        Architecture::Casc3 { all_features_first: true },
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Single1Lnn => "single-1lnn",
            Architecture::Casc2 { all_features_first: false } => "casc2",
            Architecture::Casc3 { all_features_first: false } => "casc3",
            Architecture::Casc2 { all_features_first: true } => "casc2-allfeat",
            Architecture::Casc3 { all_features_first: true } => "casc3-allfeat",
        }
    }

    pub fn stage_specs(&self, layout: &FeatureLayout) -> Vec<StageSpec> {
        let full = || layout.full.clone();
        let first = |all: bool| {
            StageSpec::linear(if all { layout.full.clone() } else { layout.cheap.clone() })
        };
        match *self {
            Architecture::Single1Lnn => vec![StageSpec::one_hidden(10, full())],
            Architecture::Casc2 { all_features_first } => {
                vec![first(all_features_first), StageSpec::one_hidden(10, full())]
            }
            Architecture::Casc3 { all_features_first } => vec![
                first(all_features_first),
                StageSpec::one_hidden(3, full()),
                StageSpec::two_hidden(10, 20, full()),
            ],
        }
    }

    /// Freshly initialized cascade; stage `l` draws from child seed `l`.
    pub fn build<T: Scalar>(&self, layout: &FeatureLayout, alpha: T, seed: u64) -> Result<CascadeModel<T>> {
        let stages = self
            .stage_specs(layout)
            .iter()
            .enumerate()
            .map(|(l, spec)| init_params(spec, child_seed(seed, l as u64)))
            .collect::<Result<Vec<_>>>()?;
        CascadeModel::new(stages, alpha)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .iter()
            .find(|a| a.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<_> = Architecture::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown architecture `{s}` (expected one of {names:?})"))
            })
    }
}

/// Which columns the cheap first stage and the later stages read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    pub cheap: FeatureView,
    pub full: FeatureView,
}

impl FeatureLayout {
    /// Cheap view = the first `cheap_dim` columns, full view = all `dim`.
    pub fn leading(dim: usize, cheap_dim: usize) -> Result<Self> {
        if cheap_dim == 0 || cheap_dim > dim {
            return Err(Error::Config(format!(
                "need 1 <= cheap_dim <= {dim}, got {cheap_dim}"
            )));
        }
        Ok(FeatureLayout { cheap: FeatureView::range(0, cheap_dim), full: FeatureView::range(0, dim) })
    }

    /// For data with five basis-expansion columns appended after the
    /// `original_dim` raw features.
    pub fn basis_appended(original_dim: usize) -> Self {
        FeatureLayout {
            cheap: FeatureView::range(original_dim, original_dim + 5),
            full: FeatureView::range(0, original_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KappaMode {
    /// FLOP-proportional costs normalized to κ₁ = 1.
    FlopDefault,
    /// The same explicit κ for every architecture (lengths must match).
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig<T> {
    pub lambda_grid: Vec<f64>,
    pub architectures: Vec<Architecture>,
    pub seeds: Vec<u64>,
    pub train_cfg: TrainConfig<T>,
    pub kappa_mode: KappaMode,
    pub layout: FeatureLayout,
    pub alpha: f64,
    /// Timed evaluations per point; `None` skips timing.
    pub bench_evaluations: Option<usize>,
    pub workers: usize,
}

/// 0 followed by 12 log-spaced values from 1e-5 to 1e1.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend((0..12).map(|i| 10f64.powf(-5.0 + 6.0 * i as f64 / 11.0)));
    grid
}

impl<T: Scalar> SweepConfig<T> {
    pub fn new(layout: FeatureLayout, train_cfg: TrainConfig<T>) -> Self {
        SweepConfig {
            lambda_grid: default_lambda_grid(),
            architectures: vec![
                Architecture::Single1Lnn,
                Architecture::Casc2 { all_features_first: false },
                Architecture::Casc3 { all_features_first: false },
            ],
            seeds: vec![train_cfg.seed],
            train_cfg,
            kappa_mode: KappaMode::FlopDefault,
            layout,
            alpha: crate::cascade::DEFAULT_ALPHA,
            bench_evaluations: None,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.architectures.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("lambda grid, architectures and seeds must be nonempty".into()));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("lambda values must be finite and >= 0".into()));
        }
        let mut sorted = self.lambda_grid.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("lambda grid has repeated values".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.bench_evaluations == Some(0) {
            return Err(Error::Config("bench needs at least one evaluation".into()));
        }
        self.train_cfg.validate()
    }
}

/// One trained (architecture, λ, seed) configuration evaluated on test data.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub architecture: String,
    pub lambda: f64,
    /// `None` for seed-averaged points.
    pub seed: Option<u64>,
    pub accuracy: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// Mean executed cost in κ units.
    pub mean_cost: f64,
    pub mean_stages: f64,
    pub mean_time_secs: Option<f64>,
    /// Mean executed FLOPs, comparable across architectures.
    pub mean_flops: f64,
}

impl TradeoffPoint {
    pub const CSV_HEADER: &'static str =
        "arch,seed,lambda,accuracy,tpr,fpr,mean_cost,mean_stages,mean_time_ns,mean_flops";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.architecture,
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.lambda,
            self.accuracy,
            self.tpr,
            self.fpr,
            self.mean_cost,
            self.mean_stages,
            format_time_ns(self.mean_time_secs),
            self.mean_flops
        )
    }
}

pub fn points_csv(points: &[TradeoffPoint]) -> String {
    let mut out = format!("{}\n", TradeoffPoint::CSV_HEADER);
    for p in points {
        out.push_str(&p.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub architecture: String,
    pub lambda: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome<T> {
    pub points: Vec<TradeoffPoint>,
    pub failures: Vec<SweepFailure>,
    /// Trained cascades, parallel to `points`.
    pub models: Vec<CascadeModel<T>>,
}

struct Group<T> {
    arch: Architecture,
    seed: u64,
    init: Result<(CascadeModel<T>, CostSchedule<T>)>,
}

fn schedule_for<T: Scalar>(cascade: &CascadeModel<T>, mode: &KappaMode) -> Result<CostSchedule<T>> {
    match mode {
        KappaMode::FlopDefault => default_schedule(cascade, T::zero()),
        KappaMode::Explicit(kappa) => {
            let s = CostSchedule::new(kappa.iter().map(|&k| T::of(k)).collect(), T::zero())?;
            s.check_len(cascade.len())?;
            Ok(s)
        }
    }
}

/// Train and evaluate every (architecture, λ, seed) combination.
///
/// For each (architecture, seed) the final stage is fitted once, since that
/// step of reverse-order initialization depends on neither λ nor the other
/// stages; every λ then runs the upstream initialization and joint
/// fine-tuning from that shared starting point.
pub fn run_sweep<T: Scalar>(
    cfg: &SweepConfig<T>,
    train: &Dataset<T>,
    test: &Dataset<T>,
) -> Result<SweepOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("sweep needs nonempty train and test data".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    let keys: Vec<(Architecture, u64)> = cfg
        .architectures
        .iter()
        .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();

    let groups: Vec<Group<T>> = pool.install(|| {
        keys.par_iter()
            .map(|&(arch, seed)| {
                let init = (|| {
                    let mut cascade = arch.build(&cfg.layout, T::of(cfg.alpha), seed)?;
                    cascade.check_dim(train.dim())?;
                    let schedule = schedule_for(&cascade, &cfg.kappa_mode)?;
                    let train_cfg = TrainConfig { seed, ..cfg.train_cfg.clone() };
                    let (last, _) = train_final_stage(&cascade, train, &train_cfg)?;
                    *cascade.stages.last_mut().expect("nonempty") = last;
                    Ok((cascade, schedule))
                })();
                Group { arch, seed, init }
            })
            .collect()
    });

    let jobs: Vec<(usize, f64)> = (0..groups.len())
        .flat_map(|g| cfg.lambda_grid.iter().map(move |&l| (g, l)))
        .collect();
    let results: Vec<Result<(TradeoffPoint, CascadeModel<T>)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(g, lambda)| {
                let group = &groups[g];
                match &group.init {
                    Ok((cascade, schedule)) => {
                        run_point(cfg, group, cascade, &schedule.with_lambda(T::of(lambda)), train, test)
                    }
                    Err(e) => Err(Error::Config(e.to_string())),
                }
            })
            .collect()
    });

    let mut outcome = SweepOutcome { points: Vec::new(), failures: Vec::new(), models: Vec::new() };
    for (&(g, lambda), result) in jobs.iter().zip(results) {
        match result {
            Ok((point, model)) => {
                outcome.points.push(point);
                outcome.models.push(model);
            }
            Err(e) => {
                log::warn!("sweep point {} λ={lambda} seed={} failed: {e}", groups[g].arch, groups[g].seed);
                outcome.failures.push(SweepFailure {
                    architecture: groups[g].arch.name().to_owned(),
                    lambda,
                    seed: groups[g].seed,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(outcome)
}

fn run_point<T: Scalar>(
    cfg: &SweepConfig<T>,
    group: &Group<T>,
    staged: &CascadeModel<T>,
    schedule: &CostSchedule<T>,
    train: &Dataset<T>,
    test: &Dataset<T>,
) -> Result<(TradeoffPoint, CascadeModel<T>)> {
    let train_cfg = TrainConfig { seed: group.seed, ..cfg.train_cfg.clone() };
    let initialized = reverse_init_upstream(staged, train, schedule, &train_cfg)?;
    let (trained, _) = joint_finetune(&initialized, train, schedule, &train_cfg)?;
    let point = evaluate_point(&trained, group.arch.name(), group.seed, schedule, test, cfg.bench_evaluations)?;
    Ok((point, trained))
}

/// Evaluate one trained cascade into a tradeoff point.
pub fn evaluate_point<T: Scalar>(
    cascade: &CascadeModel<T>,
    architecture: &str,
    seed: u64,
    schedule: &CostSchedule<T>,
    test: &Dataset<T>,
    bench_evaluations: Option<usize>,
) -> Result<TradeoffPoint> {
    let report = evaluate(cascade, test, schedule)?;
    let flops: Vec<T> = cascade_flops(cascade)?.into_iter().map(|f| T::of(f as f64)).collect();
    let flop_report = evaluate(cascade, test, &CostSchedule::new(flops, T::zero())?)?;
    let mean_time_secs = bench_evaluations.map(|n| bench(cascade, test, n)).transpose()?;
    Ok(TradeoffPoint {
        architecture: architecture.to_owned(),
        lambda: schedule.lambda.to_f64_lossy(),
        seed: Some(seed),
        accuracy: report.accuracy,
        tpr: report.tpr,
        fpr: report.fpr,
        mean_cost: report.mean_cost,
        mean_stages: report.mean_stages,
        mean_time_secs,
        mean_flops: flop_report.mean_cost,
    })
}

/// `a` dominates `b`: no worse on both axes and strictly better on one.
pub fn dominates(a: &TradeoffPoint, b: &TradeoffPoint) -> bool {
    a.accuracy >= b.accuracy
        && a.mean_cost <= b.mean_cost
        && (a.accuracy > b.accuracy || a.mean_cost < b.mean_cost)
}

/// Points not dominated in (max accuracy, min mean_cost), ordered by
/// mean_cost ascending; equal-cost survivors keep their input order.
pub fn pareto_front(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].mean_cost.total_cmp(&points[b].mean_cost));
    let mut front = Vec::new();
    let mut best_cheaper = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let cost = points[order[i]].mean_cost;
        let mut j = i;
        while j < order.len() && points[order[j]].mean_cost == cost {
            j += 1;
        }
        let group = &order[i..j];
        let top = group
            .iter()
            .map(|&k| points[k].accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        if top > best_cheaper {
            front.extend(
                group
                    .iter()
                    .filter(|&&k| points[k].accuracy == top)
                    .map(|&k| points[k].clone()),
            );
            best_cheaper = top;
        }
        i = j;
    }
    front
}

fn best_order(a: &TradeoffPoint, b: &TradeoffPoint) -> Ordering {
    b.accuracy
        .total_cmp(&a.accuracy)
        .then(a.mean_cost.total_cmp(&b.mean_cost))
        .then(a.lambda.total_cmp(&b.lambda))
}

/// Highest accuracy; ties go to lower mean_cost, then lower λ.
pub fn select_best(points: &[TradeoffPoint]) -> Option<TradeoffPoint> {
    points.iter().min_by(|a, b| best_order(a, b)).cloned()
}

/// Average points sharing (architecture, λ) across seeds.
pub fn seed_average(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let mut keys: Vec<(String, u64)> = Vec::new();
    for p in points {
        let key = (p.architecture.clone(), p.lambda.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(arch, bits)| {
            let group: Vec<&TradeoffPoint> = points
                .iter()
                .filter(|p| p.architecture == arch && p.lambda.to_bits() == bits)
                .collect();
            let n = group.len() as f64;
            let mean = |f: fn(&TradeoffPoint) -> f64| group.iter().map(|p| f(p)).sum::<f64>() / n;
            let times: Option<Vec<f64>> = group.iter().map(|p| p.mean_time_secs).collect();
            TradeoffPoint {
                architecture: arch,
                lambda: f64::from_bits(bits),
                seed: None,
                accuracy: mean(|p| p.accuracy),
                tpr: mean(|p| p.tpr),
                fpr: mean(|p| p.fpr),
                mean_cost: mean(|p| p.mean_cost),
                mean_stages: mean(|p| p.mean_stages),
                mean_time_secs: times.map(|t| t.iter().sum::<f64>() / n),
                mean_flops: mean(|p| p.mean_flops),
            }
        })
        .collect()
}

/// Text block naming the best point per architecture, in input order.
pub fn best_summary(points: &[TradeoffPoint]) -> String {
    let mut archs: Vec<&str> = Vec::new();
    for p in points {
        if !archs.contains(&p.architecture.as_str()) {
            archs.push(&p.architecture);
        }
    }
    let mut out = String::from("best point per architecture (max accuracy, then min cost, then min lambda):\n");
    for arch in archs {
        let subset: Vec<TradeoffPoint> =
            points.iter().filter(|p| p.architecture == arch).cloned().collect();
        if let Some(b) = select_best(&subset) {
            out.push_str(&format!(
                "  {arch}: lambda={} accuracy={:.4} tpr={:.4} fpr={:.4} mean_cost={:.4} mean_stages={:.4} mean_flops={:.1}\n",
                b.lambda, b.accuracy, b.tpr, b.fpr, b.mean_cost, b.mean_stages, b.mean_flops
            ));
        }
    }
    out
}

/// Stage shapes of a cascade, e.g. `LR-5 / 1LNN-3 / 2LNN-10-20`.
pub fn describe<T: Scalar>(stages: &[StageModel<T>]) -> String {
    stages.iter().map(|s| s.spec.label()).collect::<Vec<_>>().join(" / ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(acc: f64, cost: f64, lambda: f64) -> TradeoffPoint {
        TradeoffPoint {
            architecture: "a".into(),
            lambda,
            seed: Some(0),
            accuracy: acc,
            tpr: 0.0,
            fpr: 0.0,
            mean_cost: cost,
            mean_stages: 1.0,
            mean_time_secs: None,
            mean_flops: cost,
        }
    }

    #[test]
    fn default_grid_shape() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 13);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1e-5).abs() < 1e-18);
        assert!((g[12] - 10.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn pareto_examples() {
        let single = vec![pt(0.5, 3.0, 0.0)];
        assert_eq!(pareto_front(&single), single);
        let two = vec![pt(0.9, 1.0, 0.0), pt(0.8, 2.0, 0.1)];
        assert_eq!(pareto_front(&two), vec![two[0].clone()]);
        let dup = vec![pt(0.9, 1.0, 0.0), pt(0.9, 1.0, 0.1), pt(0.95, 2.0, 0.2)];
        assert_eq!(pareto_front(&dup), dup);
    }

    #[test]
    fn selection_tie_breaks() {
        let pts = vec![pt(0.8, 1.0, 0.0), pt(0.9, 3.0, 0.1), pt(0.7, 0.5, 0.2)];
        assert_eq!(select_best(&pts).unwrap().lambda, 0.1);
        let pts = vec![pt(0.9, 3.0, 0.0), pt(0.9, 2.0, 0.5)];
        assert_eq!(select_best(&pts).unwrap().lambda, 0.5);
        let pts = vec![pt(0.9, 2.0, 0.5), pt(0.9, 2.0, 0.1)];
        assert_eq!(select_best(&pts).unwrap().lambda, 0.1);
        assert!(select_best(&[]).is_none());
    }

    #[test]
    fn seed_average_groups_by_arch_and_lambda() {
        let mut a = pt(0.8, 1.0, 0.1);
        let mut b = pt(0.9, 3.0, 0.1);
        b.seed = Some(1);
        let c = pt(0.5, 1.0, 0.2);
        a.mean_time_secs = Some(1.0);
        let avg = seed_average(&[a, b, c]);
        assert_eq!(avg.len(), 2);
        assert!((avg[0].accuracy - 0.85).abs() < 1e-12);
        assert_eq!(avg[0].mean_cost, 2.0);
        assert_eq!(avg[0].seed, None);
        assert_eq!(avg[0].mean_time_secs, None);
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert!("casc4".parse::<Architecture>().is_err());
        let layout = FeatureLayout::leading(37, 5).unwrap();
        let specs = Architecture::Casc3 { all_features_first: false }.stage_specs(&layout);
        let labels: Vec<_> = specs.iter().map(StageSpec::label).collect();
        assert_eq!(labels, vec!["LR-5", "1LNN-3", "2LNN-10-20"]);
        let specs = Architecture::Casc2 { all_features_first: true }.stage_specs(&layout);
        assert_eq!(specs[0].label(), "LR-37");
    }

    #[test]
    fn config_validation() {
        let layout = FeatureLayout::leading(4, 2).unwrap();
        let mut cfg = SweepConfig::<f64>::new(layout, TrainConfig::default());
        cfg.validate().unwrap();
        cfg.lambda_grid = vec![0.1, 0.1];
        assert!(cfg.validate().is_err());
        cfg.lambda_grid = vec![];
        assert!(cfg.validate().is_err());
    }
}

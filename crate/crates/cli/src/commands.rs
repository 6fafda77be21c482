use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use shallow_cascade::cascade::{
    objective_gradient, soft_cascade_gradient, CascadeModel, Combination, CostSchedule, LossOptions,
    DEFAULT_ALPHA,
};
use shallow_cascade::config::KvConfig;
use shallow_cascade::data::{
    load_csv, stratified_split, synth_generate, write_csv, zscore_fit_apply, Dataset, Preprocessing,
    SynthConfig,
};
use shallow_cascade::rng::child_seed;
use shallow_cascade::runtime::{bench, default_schedule, evaluate, evaluate_at, EvalReport, DEFAULT_THRESHOLD};
use shallow_cascade::sweep::{
    best_summary, pareto_front, points_csv, run_sweep, seed_average, Architecture, FeatureLayout, KappaMode,
    SweepConfig, TradeoffPoint,
};
use shallow_cascade::training::{
    compare_finite_differences, joint_finetune, jitter_params, reverse_init, train_standalone, TrainConfig,
};
use shallow_cascade::{Error, Result};

use crate::bundle::{ModelBundle, FORMAT};
use crate::{CommonArgs, EvalArgs, GradcheckArgs, ModelArgs, SweepArgs, SynthArgs, TrainArgs};

/// What a command reports back: text for standard output and whether all
/// of its internal checks passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub passed: bool,
}

impl Outcome {
    fn ok(summary: String) -> Self {
        Outcome { summary, passed: true }
    }
}

const MODEL_KEYS: [&str; 6] = ["data", "alpha", "kappa", "cheap_dim", "basis", "out"];

fn keys(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

fn overlay<V: ToString>(cfg: &mut KvConfig, key: &str, value: Option<V>) {
    if let Some(v) = value {
        cfg.set(key, v);
    }
}

fn overlay_path(cfg: &mut KvConfig, key: &str, value: &Option<PathBuf>) {
    overlay(cfg, key, value.as_ref().map(|p| p.display()));
}

fn base_config(common: &CommonArgs) -> Result<KvConfig> {
    let mut cfg = match &common.config {
        Some(path) => KvConfig::load(path)?,
        None => KvConfig::new(),
    };
    overlay_path(&mut cfg, "out", &common.out);
    overlay(&mut cfg, "seed", common.seed);
    Ok(cfg)
}

fn overlay_model(cfg: &mut KvConfig, m: &ModelArgs) {
    overlay_path(cfg, "data", &m.data);
    overlay(cfg, "epochs", m.epochs);
    overlay(cfg, "step_size", m.step_size);
    overlay(cfg, "optimizer", m.optimizer.as_ref());
    overlay(cfg, "objective", m.objective.as_ref());
    overlay(cfg, "pos_weight", m.pos_weight);
    overlay(cfg, "alpha", m.alpha);
    overlay(cfg, "kappa", m.kappa.as_ref());
    overlay(cfg, "cheap_dim", m.cheap_dim);
    overlay(cfg, "basis", m.basis.as_ref());
}

fn required_path(cfg: &KvConfig, key: &str) -> Result<PathBuf> {
    cfg.get::<PathBuf>(key)?
        .ok_or_else(|| Error::Config(format!("missing `{key}` (flag --{key} or config key)")))
}

fn out_dir(cfg: &KvConfig) -> Result<PathBuf> {
    let dir = required_path(cfg, "out")?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn split_counts(cfg: &KvConfig) -> Result<Option<(usize, usize)>> {
    match (cfg.get::<usize>("train_count")?, cfg.get::<usize>("train_pos_count")?) {
        (Some(n), Some(p)) => Ok(Some((n, p))),
        (None, None) => Ok(None),
        _ => Err(Error::Config("train_count and train_pos_count must be given together".into())),
    }
}

fn nonneg(value: f64, what: &str) -> Result<f64> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Config(format!("{what} must be finite and >= 0, got {value}")))
    }
}

fn alpha_of(cfg: &KvConfig) -> Result<f64> {
    let alpha = cfg.get_or("alpha", DEFAULT_ALPHA)?;
    if alpha > 0.0 && alpha.is_finite() {
        Ok(alpha)
    } else {
        Err(Error::Config(format!("alpha must be finite and > 0, got {alpha}")))
    }
}

/// Fit the input pipeline on raw training data and pick the stage views.
fn fit_pipeline(raw: &Dataset<f64>, cfg: &KvConfig) -> Result<(Preprocessing<f64>, FeatureLayout)> {
    let basis = match cfg.get_list::<String>("basis")? {
        None => None,
        Some(names) if names.len() == 2 => {
            if cfg.contains("cheap_dim") {
                return Err(Error::Config("`basis` and `cheap_dim` are mutually exclusive".into()));
            }
            let column = |name: &str| {
                raw.feature_names()
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::Config(format!("basis column `{name}` not in data header")))
            };
            Some((column(&names[0])?, column(&names[1])?))
        }
        Some(_) => return Err(Error::Config("basis needs exactly two column names".into())),
    };
    let pre = Preprocessing::fit(raw, basis)?;
    let layout = match basis {
        Some(_) => FeatureLayout::basis_appended(raw.dim()),
        None => FeatureLayout::leading(raw.dim(), cfg.get_or("cheap_dim", 5)?)?,
    };
    Ok((pre, layout))
}

fn schedule_for(cfg: &KvConfig, cascade: &CascadeModel<f64>, lambda: f64) -> Result<CostSchedule<f64>> {
    match cfg.get_list::<f64>("kappa")? {
        Some(kappa) => {
            let s = CostSchedule::new(kappa, lambda)?;
            s.check_len(cascade.len())?;
            Ok(s)
        }
        None => default_schedule(cascade, lambda),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<Outcome> {
    let mut cfg = base_config(&a.common)?;
    overlay(&mut cfg, "n_total", a.n_total);
    overlay(&mut cfg, "positive_fraction", a.positive_fraction);
    overlay(&mut cfg, "dim", a.dim);
    overlay(&mut cfg, "cheap_dim", a.cheap_dim);
    overlay(&mut cfg, "cheap_separable_fraction", a.cheap_separable_fraction);
    overlay(&mut cfg, "train_count", a.train_count);
    overlay(&mut cfg, "train_pos_count", a.train_pos);
    cfg.ensure_only(&keys(&[&SynthConfig::KEYS, &["out", "train_count", "train_pos_count"]]))?;
    let synth = SynthConfig::from_config(&cfg)?;
    let split = split_counts(&cfg)?;
    let out = out_dir(&cfg)?;

    let data: Dataset<f64> = synth_generate(&synth)?;
    let path = out.join("data.csv");
    write_csv(&data, &path)?;
    let pos = data.positive_count();
    let mut summary = format!(
        "wrote {} instances ({pos} positive, {} negative, {} features) to {}\n",
        data.len(),
        data.len() - pos,
        data.dim(),
        path.display()
    );
    if let Some((n, p)) = split {
        let (train, test) = stratified_split(&data, n, p, synth.seed)?;
        for (name, part) in [("train.csv", &train), ("test.csv", &test)] {
            let path = out.join(name);
            write_csv(part, &path)?;
            let _ = writeln!(
                summary,
                "wrote {} instances ({} positive) to {}",
                part.len(),
                part.positive_count(),
                path.display()
            );
        }
    }
    Ok(Outcome::ok(summary))
}

pub fn cmd_train(a: &TrainArgs) -> Result<Outcome> {
    let mut cfg = base_config(&a.common)?;
    overlay_model(&mut cfg, &a.model);
    overlay(&mut cfg, "arch", a.arch.as_ref());
    overlay(&mut cfg, "lambda", a.lambda);
    cfg.ensure_only(&keys(&[&TrainConfig::<f64>::KEYS, &MODEL_KEYS, &["arch", "lambda"]]))?;
    let train_cfg = TrainConfig::<f64>::from_config(&cfg)?;
    let arch: Architecture = cfg.get_or("arch", Architecture::Casc3 { all_features_first: false })?;
    let lambda = nonneg(cfg.get_or("lambda", 0.0)?, "lambda")?;
    let alpha = alpha_of(&cfg)?;
    let data_path = required_path(&cfg, "data")?;
    let out = out_dir(&cfg)?;

    let raw: Dataset<f64> = load_csv(&data_path)?;
    let (pre, layout) = fit_pipeline(&raw, &cfg)?;
    let train = pre.apply(&raw)?;
    let cascade = arch.build(&layout, alpha, train_cfg.seed)?;
    let schedule = schedule_for(&cfg, &cascade, lambda)?;

    let (trained, report) = if cascade.len() == 1 {
        let (stage, report) = train_standalone(&cascade.stages[0], &train, &train_cfg)?;
        (CascadeModel::new(vec![stage], cascade.alpha)?, report)
    } else {
        let init = reverse_init(&cascade, &train, &schedule, &train_cfg)?;
        joint_finetune(&init, &train, &schedule, &train_cfg)?
    };

    let bundle = ModelBundle {
        format: FORMAT.to_owned(),
        architecture: arch.name().to_owned(),
        objective: train_cfg.objective.to_string(),
        lambda,
        kappa: schedule.kappa.clone(),
        feature_names: raw.feature_names().to_vec(),
        preprocessing: pre,
        cascade: trained,
    };
    bundle.validate()?;
    let model_path = out.join("model.json");
    bundle.save(&model_path)?;
    let trace_path = out.join("trace.csv");
    write_text(&trace_path, &report.trace_csv())?;

    let fit = evaluate(&bundle.cascade, &train, &schedule)?;
    let stages: Vec<String> = bundle.cascade.stages.iter().map(|s| s.spec.label()).collect();
    let summary = format!(
        "{} [{}] lambda={lambda} objective={}\n{}\ntraining accuracy {:.4}, mean cost {:.4}, mean stages {:.4}\nwrote {} and {}\n",
        arch.name(),
        stages.join(" / "),
        bundle.objective,
        report.summary(),
        fit.accuracy,
        fit.mean_cost,
        fit.mean_stages,
        model_path.display(),
        trace_path.display()
    );
    Ok(Outcome::ok(summary))
}

fn eval_csv(report: &EvalReport, bundle: &ModelBundle<f64>) -> String {
    format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row(&bundle.architecture, bundle.lambda))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Outcome> {
    let mut cfg = base_config(&a.common)?;
    overlay_path(&mut cfg, "model", &a.model);
    overlay_path(&mut cfg, "data", &a.data);
    overlay(&mut cfg, "bench", a.bench);
    overlay(&mut cfg, "threshold", a.threshold);
    cfg.ensure_only(&["model", "data", "bench", "threshold", "out"])?;
    let bench_n = cfg.get::<usize>("bench")?;
    if bench_n == Some(0) {
        return Err(Error::Config("bench needs at least one evaluation".into()));
    }
    let threshold = cfg.get_or("threshold", DEFAULT_THRESHOLD)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let bundle = ModelBundle::<f64>::load(&required_path(&cfg, "model")?)?;
    let raw: Dataset<f64> = load_csv(required_path(&cfg, "data")?)?;
    if raw.dim() != bundle.preprocessing.input_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features, data has {}",
            bundle.preprocessing.input_dim(),
            raw.dim()
        )));
    }
    let data = bundle.preprocessing.apply(&raw)?;
    let schedule = bundle.schedule()?;
    let mut report = evaluate_at(&bundle.cascade, &data, &schedule, threshold)?;
    if let Some(n) = bench_n {
        report.mean_time_secs = Some(bench(&bundle.cascade, &data, n)?);
    }
    let csv = eval_csv(&report, &bundle);
    if cfg.contains("out") {
        let path = out_dir(&cfg)?.join("eval.csv");
        write_text(&path, &csv)?;
    }
    let summary = format!(
        "{csv}confusion: tp={} fp={} tn={} fn={}\n",
        report.true_pos, report.false_pos, report.true_neg, report.false_neg
    );
    Ok(Outcome::ok(summary))
}

const SWEEP_KEYS: [&str; 9] = [
    "test",
    "train_count",
    "train_pos_count",
    "architectures",
    "lambda_grid",
    "seeds",
    "workers",
    "bench",
    "pareto",
];

/// Concatenated per-architecture Pareto fronts.
fn fronts(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let mut archs: Vec<&str> = Vec::new();
    for p in points {
        if !archs.contains(&p.architecture.as_str()) {
            archs.push(&p.architecture);
        }
    }
    archs
        .into_iter()
        .flat_map(|arch| {
            let subset: Vec<TradeoffPoint> = points.iter().filter(|p| p.architecture == arch).cloned().collect();
            pareto_front(&subset)
        })
        .collect()
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<Outcome> {
    let mut cfg = base_config(&a.common)?;
    overlay_model(&mut cfg, &a.model);
    overlay_path(&mut cfg, "test", &a.test);
    overlay(&mut cfg, "train_count", a.train_count);
    overlay(&mut cfg, "train_pos_count", a.train_pos);
    overlay(&mut cfg, "architectures", a.arch.as_ref());
    overlay(&mut cfg, "lambda_grid", a.lambda.as_ref());
    overlay(&mut cfg, "seeds", a.seeds.as_ref());
    overlay(&mut cfg, "workers", a.workers);
    overlay(&mut cfg, "bench", a.bench);
    if a.pareto {
        cfg.set("pareto", true);
    }
    cfg.ensure_only(&keys(&[&TrainConfig::<f64>::KEYS, &MODEL_KEYS, &SWEEP_KEYS]))?;
    let train_cfg = TrainConfig::<f64>::from_config(&cfg)?;
    let data_path = required_path(&cfg, "data")?;
    let raw: Dataset<f64> = load_csv(&data_path)?;
    let (raw_train, raw_test) = match (cfg.get::<PathBuf>("test")?, split_counts(&cfg)?) {
        (Some(path), None) => (raw, load_csv(&path)?),
        (None, Some((n, p))) => stratified_split(&raw, n, p, train_cfg.seed)?,
        (Some(_), Some(_)) => {
            return Err(Error::Config("give either a test file or split counts, not both".into()))
        }
        (None, None) => {
            return Err(Error::Config("sweep needs a test file or train_count/train_pos_count".into()))
        }
    };
    let (pre, layout) = fit_pipeline(&raw_train, &cfg)?;
    let (train, test) = (pre.apply(&raw_train)?, pre.apply(&raw_test)?);

    let seed = train_cfg.seed;
    let mut sweep = SweepConfig::new(layout, train_cfg);
    if let Some(archs) = cfg.get_list::<Architecture>("architectures")? {
        sweep.architectures = archs;
    }
    if let Some(grid) = cfg.get_list::<f64>("lambda_grid")? {
        sweep.lambda_grid = grid;
    }
    sweep.seeds = cfg.get_list::<u64>("seeds")?.unwrap_or_else(|| vec![seed]);
    if let Some(kappa) = cfg.get_list::<f64>("kappa")? {
        sweep.kappa_mode = KappaMode::Explicit(kappa);
    }
    sweep.alpha = alpha_of(&cfg)?;
    sweep.bench_evaluations = cfg.get("bench")?;
    sweep.workers = cfg.get_or("workers", 1)?;
    let want_pareto = cfg.get_or("pareto", false)?;
    let out = out_dir(&cfg)?;

    let outcome = run_sweep(&sweep, &train, &test)?;
    let points_path = out.join("sweep.csv");
    write_text(&points_path, &points_csv(&outcome.points))?;
    let mut summary = format!("wrote {} points to {}\n", outcome.points.len(), points_path.display());

    let reported = if sweep.seeds.len() > 1 {
        let mean = seed_average(&outcome.points);
        let path = out.join("sweep_mean.csv");
        write_text(&path, &points_csv(&mean))?;
        let _ = writeln!(summary, "wrote seed-averaged points to {}", path.display());
        mean
    } else {
        outcome.points.clone()
    };
    if want_pareto {
        let path = out.join("pareto.csv");
        write_text(&path, &points_csv(&fronts(&reported)))?;
        let _ = writeln!(summary, "wrote Pareto fronts to {}", path.display());
    }
    let best = best_summary(&reported);
    write_text(&out.join("summary.txt"), &best)?;
    summary.push_str(&best);
    for f in &outcome.failures {
        let _ = writeln!(summary, "FAILED {} lambda={} seed={}: {}", f.architecture, f.lambda, f.seed, f.message);
    }
    Ok(Outcome { summary, passed: outcome.failures.is_empty() })
}

const GRADCHECK_DIM: usize = 8;
const GRADCHECK_CHEAP_DIM: usize = 3;

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let mut cfg = base_config(&a.common)?;
    overlay(&mut cfg, "arch", a.arch.as_ref());
    overlay(&mut cfg, "alpha", a.alpha);
    overlay(&mut cfg, "lambda", a.lambda);
    overlay(&mut cfg, "epsilon", a.epsilon);
    overlay(&mut cfg, "instances", a.instances);
    overlay(&mut cfg, "objective", a.objective.as_ref());
    overlay(&mut cfg, "tolerance", a.tolerance);
    cfg.ensure_only(&["arch", "alpha", "lambda", "epsilon", "instances", "objective", "tolerance", "seed"])?;
    let arch: Architecture = cfg.get_or("arch", Architecture::Casc2 { all_features_first: false })?;
    let alpha = alpha_of(&cfg)?;
    let lambda = nonneg(cfg.get_or("lambda", 0.1)?, "lambda")?;
    let epsilon: f64 = cfg.get_or("epsilon", 1e-6)?;
    let tolerance: f64 = cfg.get_or("tolerance", 1e-5)?;
    let instances: usize = cfg.get_or("instances", 8)?;
    let combination: Combination = cfg.get_or("objective", Combination::SelfGated)?;
    let seed: u64 = cfg.get_or("seed", 7)?;
    if !(epsilon > 0.0) || !(tolerance > 0.0) {
        return Err(Error::Config("epsilon and tolerance must be > 0".into()));
    }
    if instances < 2 {
        return Err(Error::Config("gradcheck needs at least 2 instances".into()));
    }

    let synth = SynthConfig {
        n_total: instances,
        positive_fraction: 0.5,
        dim: GRADCHECK_DIM,
        cheap_dim: GRADCHECK_CHEAP_DIM,
        cheap_separable_fraction: 0.5,
        seed,
    };
    let (data, _, _) = zscore_fit_apply(&synth_generate::<f64>(&synth)?, &[])?;
    let layout = FeatureLayout::leading(GRADCHECK_DIM, GRADCHECK_CHEAP_DIM)?;
    let mut cascade = arch.build(&layout, alpha, seed)?;
    jitter_params(&mut cascade, child_seed(seed, u64::MAX), 0.5);
    let schedule = default_schedule(&cascade, lambda)?;
    let opts = LossOptions { combination, pos_weight: 1.0 };
    let mut analytic = match combination {
        Combination::SelfGated => objective_gradient(&cascade, &data, &schedule)?,
        Combination::Product => soft_cascade_gradient(&cascade, &data, &schedule)?,
    }
    .flatten();
    if a.corrupt_gradient {
        analytic[0] += 1.0;
    }
    let worst = compare_finite_differences(&cascade, &data, &schedule, epsilon, &opts, &analytic)?;
    let passed = worst < tolerance;
    let summary = format!(
        "{} ({} parameters, {instances} instances) objective={combination} alpha={alpha} lambda={lambda} epsilon={epsilon:e}\nmax relative error {worst:.3e} (tolerance {tolerance:e}): {}\n",
        arch.name(),
        cascade.num_params(),
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(Outcome { summary, passed })
}

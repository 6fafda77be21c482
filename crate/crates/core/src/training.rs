//! Optimization drivers: standalone stage fits, reverse-order
//! initialization of a cascade, joint fine-tuning and gradient checks.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cascade::{
    combine_batch, evaluate_cached, CascadeModel, Combination, CostSchedule, LossOptions,
    StageInputs,
};
use crate::config::KvConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::StageModel;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    PlainGd,
    AdaptiveMoment,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain_gd" => Ok(OptimizerKind::PlainGd),
            "adaptive_moment" | "adam" => Ok(OptimizerKind::AdaptiveMoment),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub optimizer: OptimizerKind,
    pub step_size: T,
    pub moment_decays: (T, T),
    pub epsilon_hat: T,
    pub epochs: usize,
    pub seed: u64,
    /// Emit a log record every this many epochs (0 disables).
    pub log_every: usize,
    /// Loss multiplier for positive instances.
    pub pos_weight: T,
    /// L2 shrinkage applied in the update step only; 0 disables.
    pub weight_decay: T,
    pub objective: Combination,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::AdaptiveMoment,
            step_size: T::of(1e-2),
            moment_decays: (T::of(0.9), T::of(0.999)),
            epsilon_hat: T::of(1e-8),
            epochs: 2000,
            seed: 7,
            log_every: 0,
            pos_weight: T::one(),
            weight_decay: T::zero(),
            objective: Combination::SelfGated,
        }
    }
}

impl<T: Scalar + std::str::FromStr> TrainConfig<T> {
    pub const KEYS: [&'static str; 11] = [
        "optimizer",
        "step_size",
        "moment_decays",
        "epsilon_hat",
        "epochs",
        "batch",
        "seed",
        "log_every",
        "pos_weight",
        "weight_decay",
        "objective",
    ];

    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let d = Self::default();
        if let Some(batch) = cfg.raw("batch") {
            if batch != "full" {
                return Err(Error::Config(format!("only `batch = full` is supported, got `{batch}`")));
            }
        }
        let moment_decays = match cfg.get_list::<T>("moment_decays")? {
            None => d.moment_decays,
            Some(v) if v.len() == 2 => (v[0], v[1]),
            Some(v) => {
                return Err(Error::Config(format!(
                    "moment_decays needs two values, got {}",
                    v.len()
                )))
            }
        };
        let out = TrainConfig {
            optimizer: cfg.get_or("optimizer", d.optimizer)?,
            step_size: cfg.get_or("step_size", d.step_size)?,
            moment_decays,
            epsilon_hat: cfg.get_or("epsilon_hat", d.epsilon_hat)?,
            epochs: cfg.get_or("epochs", d.epochs)?,
            seed: cfg.get_or("seed", d.seed)?,
            log_every: cfg.get_or("log_every", d.log_every)?,
            pos_weight: cfg.get_or("pos_weight", d.pos_weight)?,
            weight_decay: cfg.get_or("weight_decay", d.weight_decay)?,
            objective: cfg.get_or("objective", d.objective)?,
        };
        out.validate()?;
        Ok(out)
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > T::zero()) {
            return Err(Error::Config(format!("step_size must be > 0, got {}", self.step_size)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let (b1, b2) = self.moment_decays;
        let unit = |b: T| b >= T::zero() && b < T::one();
        if !unit(b1) || !unit(b2) {
            return Err(Error::Config("moment decays must lie in [0, 1)".into()));
        }
        if !(self.epsilon_hat > T::zero()) {
            return Err(Error::Config("epsilon_hat must be > 0".into()));
        }
        if !(self.pos_weight > T::zero()) || self.weight_decay < T::zero() {
            return Err(Error::Config("pos_weight must be > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions<T> {
        LossOptions { combination: self.objective, pos_weight: self.pos_weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Objective at the start of every epoch.
    pub trace: Vec<f64>,
    /// Objective at the returned parameters.
    pub final_objective: f64,
    pub wall_seconds: f64,
    /// Relative objective change below 1e-8 over the last 10 epochs.
    pub converged: bool,
    /// Set when fine-tuning ended above its starting objective and the
    /// starting parameters were returned instead.
    pub reverted: bool,
}

impl TrainReport {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,objective\n");
        for (e, v) in self.trace.iter().enumerate() {
            out.push_str(&format!("{},{v}\n", e + 1));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "epochs={} final_objective={} converged={} reverted={} wall_seconds={:.3}",
            self.trace.len(),
            self.final_objective,
            self.converged,
            self.reverted,
            self.wall_seconds
        )
    }
}

struct Optimizer<T> {
    kind: OptimizerKind,
    step: T,
    b1: T,
    b2: T,
    eps: T,
    decay: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Optimizer<T> {
    fn new(cfg: &TrainConfig<T>, n: usize) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            step: cfg.step_size,
            b1: cfg.moment_decays.0,
            b2: cfg.moment_decays.1,
            eps: cfg.epsilon_hat,
            decay: cfg.weight_decay,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn update(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let (c1, c2) = (T::one() - self.b1.powi(self.t), T::one() - self.b2.powi(self.t));
        for i in 0..params.len() {
            let g = grad[i] + self.decay * params[i];
            match self.kind {
                OptimizerKind::PlainGd => params[i] -= self.step * g,
                OptimizerKind::AdaptiveMoment => {
                    self.m[i] = self.b1 * self.m[i] + (T::one() - self.b1) * g;
                    self.v[i] = self.b2 * self.v[i] + (T::one() - self.b2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= self.step * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
    }
}

/// Full-batch loop. `eval(params, want_grad)` returns the objective and,
/// when asked, its gradient.
fn optimize<T: Scalar>(
    start: Vec<T>,
    cfg: &TrainConfig<T>,
    mut eval: impl FnMut(&[T], bool) -> (T, Option<Vec<T>>),
) -> Result<(Vec<T>, TrainReport)> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut params = start;
    let mut opt = Optimizer::new(cfg, params.len());
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (value, grad) = eval(&params, true);
        if !value.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        trace.push(value.to_f64_lossy());
        if cfg.log_every > 0 && epoch % cfg.log_every == 0 {
            log::debug!("epoch {epoch}: objective {value}");
        }
        opt.update(&mut params, &grad.expect("gradient requested"));
    }
    let (final_value, _) = eval(&params, false);
    if !final_value.is_finite() {
        return Err(Error::Diverged { epoch: cfg.epochs + 1 });
    }
    let converged = trace.len() > 10 && {
        let a = trace[trace.len() - 11];
        let b = *trace.last().expect("nonempty");
        (a - b).abs() <= 1e-8 * a.abs().max(f64::MIN_POSITIVE)
    };
    Ok((
        params,
        TrainReport {
            trace,
            final_objective: final_value.to_f64_lossy(),
            wall_seconds: clock.elapsed().as_secs_f64(),
            converged,
            reverted: false,
        },
    ))
}

/// Fit one stage alone under (optionally positive-weighted) cross-entropy.
pub fn train_standalone<T: Scalar>(
    model: &StageModel<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<(StageModel<T>, TrainReport)> {
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    model.spec.view.validate(data.dim())?;
    let inputs = data.view_matrix(&model.spec.view);
    fit_one_stage(
        model,
        &inputs,
        &[],
        data.labels(),
        &standalone_schedule(),
        T::one(),
        &opts_standalone(cfg),
        cfg,
    )
}

fn standalone_schedule<T: Scalar>() -> CostSchedule<T> {
    CostSchedule { kappa: vec![T::zero()], lambda: T::zero() }
}

fn opts_standalone<T: Scalar>(cfg: &TrainConfig<T>) -> LossOptions<T> {
    LossOptions { combination: Combination::SelfGated, pos_weight: cfg.pos_weight }
}

/// Train `model` as the first stage of a sub-cascade whose remaining stage
/// outputs are the fixed columns `downstream`.
#[allow(clippy::too_many_arguments)]
fn fit_one_stage<T: Scalar>(
    model: &StageModel<T>,
    inputs: &Array2<T>,
    downstream: &[Array1<T>],
    labels: &[u8],
    schedule: &CostSchedule<T>,
    alpha: T,
    opts: &LossOptions<T>,
    cfg: &TrainConfig<T>,
) -> Result<(StageModel<T>, TrainReport)> {
    let mut work = model.clone();
    let n = labels.len();
    let mut upstream: Vec<Array1<T>> = (0..=downstream.len()).map(|_| Array1::zeros(n)).collect();
    let (params, report) = optimize(model.flatten(), cfg, |params, want_grad| {
        work.assign_flat(params);
        let trace = work.forward_batch(inputs.view());
        let mut probs: Vec<ArrayView1<'_, T>> = vec![trace.output()];
        probs.extend(downstream.iter().map(|d| d.view()));
        let up = want_grad.then_some(&mut upstream[..]);
        let value = combine_batch(&probs, labels, schedule, alpha, opts, up);
        let grad = want_grad.then(|| work.backward_batch(&trace, upstream[0].view()).flatten());
        (value, grad)
    })?;
    work.assign_flat(&params);
    Ok((work, report))
}

/// Step (1) of reverse-order initialization: fit the final stage alone.
pub fn train_final_stage<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<(StageModel<T>, TrainReport)> {
    let last = cascade.stages.last().expect("validated cascade");
    train_standalone(last, data, cfg)
}

/// Step (2) of reverse-order initialization: with the final stage already
/// fitted, train stages L−1 down to 1, each against the sub-cascade below
/// it with those downstream stages frozen and κ restricted to that suffix.
/// A stage whose parameters are all zero is first fitted standalone.
pub fn reverse_init_upstream<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
    cfg: &TrainConfig<T>,
) -> Result<CascadeModel<T>> {
    cascade.validate()?;
    schedule.check_len(cascade.len())?;
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    let inputs = StageInputs::new(cascade, data)?;
    let opts = cfg.loss_options();
    let mut out = cascade.clone();
    // outputs of already-initialized stages, indexed like `out.stages`
    let mut fixed: Vec<Option<Array1<T>>> = vec![None; cascade.len()];
    let last = cascade.len() - 1;
    fixed[last] = Some(
        out.stages[last]
            .forward_batch(inputs.matrices[last].view())
            .output()
            .to_owned(),
    );
    for l in (0..last).rev() {
        let downstream: Vec<Array1<T>> = fixed[l + 1..]
            .iter()
            .map(|p| p.clone().expect("downstream initialized"))
            .collect();
        // an all-zero stage outputs exactly 0.5 everywhere, where every gate
        // is half open and rejection is uphill; a standalone fit moves it off
        let start = &out.stages[l];
        let warm = if start.flatten().iter().all(|v| v.is_zero()) {
            fit_one_stage(
                start,
                &inputs.matrices[l],
                &[],
                &inputs.labels,
                &standalone_schedule(),
                T::one(),
                &opts_standalone(cfg),
                cfg,
            )?
            .0
        } else {
            start.clone()
        };
        let (stage, _) = fit_one_stage(
            &warm,
            &inputs.matrices[l],
            &downstream,
            &inputs.labels,
            &schedule.suffix(l),
            cascade.alpha,
            &opts,
            cfg,
        )?;
        fixed[l] = Some(stage.forward_batch(inputs.matrices[l].view()).output().to_owned());
        out.stages[l] = stage;
    }
    Ok(out)
}

/// Reverse-order initialization: stage L alone, then each earlier stage
/// against the frozen downstream sub-cascade.
pub fn reverse_init<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
    cfg: &TrainConfig<T>,
) -> Result<CascadeModel<T>> {
    cascade.validate()?;
    schedule.check_len(cascade.len())?;
    let (last, _) = train_final_stage(cascade, data, cfg)?;
    let mut staged = cascade.clone();
    *staged.stages.last_mut().expect("validated cascade") = last;
    reverse_init_upstream(&staged, data, schedule, cfg)
}

/// Optimize all stages jointly on the full objective. If the result is
/// worse than the starting point, the starting parameters are returned
/// and `report.reverted` is set.
pub fn joint_finetune<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
    cfg: &TrainConfig<T>,
) -> Result<(CascadeModel<T>, TrainReport)> {
    cascade.validate()?;
    schedule.check_len(cascade.len())?;
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    let inputs = StageInputs::new(cascade, data)?;
    let opts = cfg.loss_options();
    let mut work = cascade.clone();
    let (params, mut report) = optimize(cascade.flatten(), cfg, |params, want_grad| {
        work.assign_flat(params);
        let (value, grad) = evaluate_cached(&work, &inputs, schedule, &opts, want_grad);
        (value, grad.map(|g| g.flatten()))
    })?;
    let initial = report.trace[0];
    if report.final_objective > initial {
        log::warn!(
            "joint fine-tuning ended at {} above its start {initial}; keeping initial parameters",
            report.final_objective
        );
        report.final_objective = initial;
        report.reverted = true;
        return Ok((cascade.clone(), report));
    }
    work.assign_flat(&params);
    Ok((work, report))
}

/// Largest |analytic − central difference| / max(1, |analytic|) over all
/// parameters of the self-gated objective.
pub fn gradient_check<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
    epsilon: T,
) -> Result<T> {
    gradient_check_with(cascade, data, schedule, epsilon, &LossOptions::default())
}

pub fn gradient_check_with<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
    epsilon: T,
    opts: &LossOptions<T>,
) -> Result<T> {
    let inputs = checked_inputs(cascade, data, schedule)?;
    let (_, grad) = evaluate_cached(cascade, &inputs, schedule, opts, true);
    let analytic = grad.expect("gradient requested").flatten();
    compare_finite_differences(cascade, data, schedule, epsilon, opts, &analytic)
}

/// Compare a supplied gradient vector against central differences.
pub fn compare_finite_differences<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
    epsilon: T,
    opts: &LossOptions<T>,
    analytic: &[T],
) -> Result<T> {
    let inputs = checked_inputs(cascade, data, schedule)?;
    if analytic.len() != cascade.num_params() {
        return Err(Error::Dimension(format!(
            "{} gradient entries for {} parameters",
            analytic.len(),
            cascade.num_params()
        )));
    }
    let base = cascade.flatten();
    let mut probe = cascade.clone();
    let mut shifted = base.clone();
    let mut worst = T::zero();
    for (i, &a) in analytic.iter().enumerate() {
        shifted[i] = base[i] + epsilon;
        probe.assign_flat(&shifted);
        let up = evaluate_cached(&probe, &inputs, schedule, opts, false).0;
        shifted[i] = base[i] - epsilon;
        probe.assign_flat(&shifted);
        let down = evaluate_cached(&probe, &inputs, schedule, opts, false).0;
        shifted[i] = base[i];
        let fd = (up - down) / (epsilon + epsilon);
        let err = (a - fd).abs() / a.abs().max(T::one());
        if !(err <= worst) {
            worst = err;
        }
    }
    Ok(worst)
}

const GRADCHECK_MAX_INSTANCES: usize = 32;

fn checked_inputs<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
) -> Result<StageInputs<T>> {
    if data.is_empty() || data.len() > GRADCHECK_MAX_INSTANCES {
        return Err(Error::Config(format!(
            "gradient check needs 1..={GRADCHECK_MAX_INSTANCES} instances, got {}",
            data.len()
        )));
    }
    schedule.check_len(cascade.len())?;
    StageInputs::new(cascade, data)
}

/// Add N(0, scale²) noise to every parameter, e.g. to move a zero-initialized
/// linear stage off its symmetric starting point.
pub fn jitter_params<T: Scalar>(cascade: &mut CascadeModel<T>, seed: u64, scale: f64) {
    let mut rng = stream_rng(seed, Stream::Init);
    let noisy: Vec<T> = cascade
        .flatten()
        .into_iter()
        .map(|v| v + T::of(scale * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    cascade.assign_flat(&noisy);
}

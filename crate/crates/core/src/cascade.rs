//! Combination rules for stage probabilities and the cost-regularized
//! training objective.
//!
//! The self-gated rule evaluates, for stage outputs `p_1..p_L`,
//!
//! ```text
//! P* = Σ_l θ_l p_l,   θ_l = (1 − g(p_l)) Π_{k<l} g(p_k)  (l < L),
//!                     θ_L = Π_{k<L} g(p_k),
//! g(p) = 1 / (1 + exp(−α (p − 0.5)))
//! ```
//!
//! which with large α puts nearly all weight on the first stage that
//! rejects, or on the last stage. The cost penalty
//! `κ_1 + Σ_{l≥2} κ_l Π_{k<l} g(p_k)` then approximates the cost of the
//! stages a hard cascade would actually run.
//!
//! Both quantities are evaluated through the suffix recursions
//! `S_l = (1 − g_l) p_l + g_l S_{l+1}` and `C_l = κ_l + g_l C_{l+1}`, which
//! gives the gradients without dividing by (possibly underflowed) gates.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{ParamGradient, StageModel};
use crate::scalar::{sigmoid, Scalar};

/// Default gating sharpness.
pub const DEFAULT_ALPHA: f64 = 100.0;

type Buf<T> = SmallVec<[T; 8]>;

/// Ordered stages sharing one feature space, plus the gate sharpness α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CascadeModel<T> {
    pub stages: Vec<StageModel<T>>,
    pub alpha: T,
}

impl<T: Scalar> CascadeModel<T> {
    pub fn new(stages: Vec<StageModel<T>>, alpha: T) -> Result<Self> {
        let model = CascadeModel { stages, alpha };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("a cascade needs at least one stage".into()));
        }
        if !(self.alpha > T::zero() && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        self.stages.iter().try_for_each(StageModel::validate)
    }

    /// Check every stage view against a feature dimension.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        self.stages.iter().try_for_each(|s| s.spec.view.validate(dim))
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.stages.iter().map(StageModel::num_params).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.stages.iter().flat_map(StageModel::flatten).collect()
    }

    pub fn assign_flat(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.num_params(), "parameter count mismatch");
        let mut offset = 0;
        for s in &mut self.stages {
            let n = s.num_params();
            s.assign_flat(&values[offset..offset + n]);
            offset += n;
        }
    }

    /// Every stage's probability for one instance.
    pub fn stage_probs(&self, x: &[T]) -> Result<Vec<T>> {
        self.stages.iter().map(|s| s.forward(x)).collect()
    }

    /// Self-gated mixture output for one instance.
    pub fn predict_proba(&self, x: &[T]) -> Result<T> {
        Ok(cascade_prob(&self.stage_probs(x)?, self.alpha))
    }
}

/// Per-stage costs κ and the tradeoff weight λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CostSchedule<T> {
    pub kappa: Vec<T>,
    pub lambda: T,
}

impl<T: Scalar> CostSchedule<T> {
    pub fn new(kappa: Vec<T>, lambda: T) -> Result<Self> {
        if kappa.is_empty() || kappa.iter().any(|k| !(*k >= T::zero() && k.is_finite())) {
            return Err(Error::Config(format!(
                "kappa must be nonempty and nonnegative, got {kappa:?}"
            )));
        }
        if !(lambda >= T::zero() && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(CostSchedule { kappa, lambda })
    }

    pub fn check_len(&self, stages: usize) -> Result<()> {
        if self.kappa.len() != stages {
            return Err(Error::Dimension(format!(
                "{} stage costs for {stages} stages",
                self.kappa.len()
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> T {
        self.kappa.iter().copied().sum()
    }

    /// Costs of stages `from..` only, with the same λ.
    pub fn suffix(&self, from: usize) -> Self {
        CostSchedule { kappa: self.kappa[from..].to_vec(), lambda: self.lambda }
    }

    pub fn with_lambda(&self, lambda: T) -> Self {
        CostSchedule { kappa: self.kappa.clone(), lambda }
    }
}

/// Gradient of a cascade objective, one block per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeGradient<T> {
    pub stages: Vec<ParamGradient<T>>,
}

impl<T: Scalar> CascadeGradient<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.stages.iter().flat_map(ParamGradient::flatten).collect()
    }
}

/// How stage probabilities are combined during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    /// Self-gated mixture with the gated cost penalty.
    #[default]
    SelfGated,
    /// Noisy-AND product with the expected-stage-cost penalty (soft cascade).
    Product,
}

impl std::str::FromStr for Combination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_gated" | "self-gated" => Ok(Combination::SelfGated),
            "soft_cascade" | "soft-cascade" | "product" => Ok(Combination::Product),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

impl std::fmt::Display for Combination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Combination::SelfGated => "self_gated",
            Combination::Product => "soft_cascade",
        })
    }
}

/// Sharp logistic step at 0.5.
#[inline]
pub fn gate<T: Scalar>(p: T, alpha: T) -> T {
    sigmoid(alpha * (p - T::of(0.5)))
}

#[inline]
fn gate_slope<T: Scalar>(g: T, alpha: T) -> T {
    alpha * g * (T::one() - g)
}

/// Mixture weights θ; they sum to one for any input.
pub fn mixture_weights<T: Scalar>(p: &[T], alpha: T) -> Vec<T> {
    let last = p.len() - 1;
    let mut prefix = T::one();
    let mut theta = Vec::with_capacity(p.len());
    for (l, &pl) in p.iter().enumerate() {
        if l == last {
            theta.push(prefix);
        } else {
            let g = gate(pl, alpha);
            theta.push((T::one() - g) * prefix);
            prefix *= g;
        }
    }
    theta
}

/// Self-gated mixture P* = Σ θ_l p_l.
pub fn cascade_prob<T: Scalar>(p: &[T], alpha: T) -> T {
    mixture_weights(p, alpha)
        .into_iter()
        .zip(p)
        .map(|(t, &pl)| t * pl)
        .sum()
}

/// Noisy-AND combination Π p_l.
pub fn product_prob<T: Scalar>(p: &[T]) -> T {
    p.iter().fold(T::one(), |acc, &v| acc * v)
}

fn clamp_width<T: Scalar>() -> T {
    T::of(1e-12).max(T::epsilon())
}

/// Cross-entropy −[y log P + (1 − y) log(1 − P)] with P clamped away from 0 and 1.
pub fn nll_instance<T: Scalar>(label: u8, p_star: T) -> T {
    let eps = clamp_width::<T>();
    let p = p_star.max(eps).min(T::one() - eps);
    if label == 1 {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Gated cost κ_1 + Σ_{l≥2} κ_l Π_{k<l} g(p_k).
pub fn cost_penalty<T: Scalar>(p: &[T], schedule: &CostSchedule<T>, alpha: T) -> T {
    gated_cost(p, &schedule.kappa, |v| gate(v, alpha))
}

/// Expected stage cost of the soft cascade: κ_1 + Σ_{l≥2} κ_l Π_{k<l} p_k.
pub fn soft_cost_penalty<T: Scalar>(p: &[T], schedule: &CostSchedule<T>) -> T {
    gated_cost(p, &schedule.kappa, |v| v)
}

fn gated_cost<T: Scalar>(p: &[T], kappa: &[T], g: impl Fn(T) -> T) -> T {
    let mut total = T::zero();
    let mut prefix = T::one();
    for (l, &k) in kappa.iter().enumerate() {
        total += k * prefix;
        if l + 1 < kappa.len() {
            prefix *= g(p[l]);
        }
    }
    total
}

/// Loss settings shared by all objective evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions<T> {
    pub combination: Combination,
    /// Multiplier on the cross-entropy of positive instances.
    pub pos_weight: T,
}

impl<T: Scalar> Default for LossOptions<T> {
    fn default() -> Self {
        LossOptions { combination: Combination::SelfGated, pos_weight: T::one() }
    }
}

impl<T: Scalar> LossOptions<T> {
    pub fn new(combination: Combination) -> Self {
        LossOptions { combination, ..Self::default() }
    }
}

/// Per-instance objective `w·nll(y, P*) + λ·r` and its derivative with
/// respect to each stage probability (written into `dp`).
pub(crate) fn instance_terms<T: Scalar>(
    p: &[T],
    label: u8,
    kappa: &[T],
    lambda: T,
    alpha: T,
    opts: &LossOptions<T>,
    dp: Option<&mut [T]>,
) -> (T, T) {
    let n = p.len();
    let last = n - 1;
    // suffix values S_l, C_l and the gate of every stage
    let mut g: Buf<T> = SmallVec::from_elem(T::zero(), n);
    let mut slope: Buf<T> = SmallVec::from_elem(T::zero(), n);
    let mut s: Buf<T> = SmallVec::from_elem(T::zero(), n + 1);
    let mut c: Buf<T> = SmallVec::from_elem(T::zero(), n + 1);
    s[last] = p[last];
    c[last] = kappa[last];
    for l in (0..last).rev() {
        let (gl, dl) = match opts.combination {
            Combination::SelfGated => {
                let gl = gate(p[l], alpha);
                (gl, gate_slope(gl, alpha))
            }
            Combination::Product => (p[l], T::one()),
        };
        g[l] = gl;
        slope[l] = dl;
        s[l] = match opts.combination {
            Combination::SelfGated => (T::one() - gl) * p[l] + gl * s[l + 1],
            Combination::Product => p[l] * s[l + 1],
        };
        c[l] = kappa[l] + gl * c[l + 1];
    }
    let p_star = s[0];
    let penalty = c[0];

    let weight = if label == 1 { opts.pos_weight } else { T::one() };
    let loss = weight * nll_instance(label, p_star);

    if let Some(dp) = dp {
        let eps = clamp_width::<T>();
        let dloss = if p_star < eps || p_star > T::one() - eps {
            T::zero()
        } else if label == 1 {
            -weight / p_star
        } else {
            weight / (T::one() - p_star)
        };
        let mut prefix = T::one();
        for j in 0..n {
            let (dpj, drj) = if j == last {
                (prefix, T::zero())
            } else {
                let dpj = match opts.combination {
                    Combination::SelfGated => {
                        prefix * ((T::one() - g[j]) + slope[j] * (s[j + 1] - p[j]))
                    }
                    Combination::Product => prefix * s[j + 1],
                };
                (dpj, prefix * slope[j] * c[j + 1])
            };
            dp[j] = dloss * dpj + lambda * drj;
            if j < last {
                prefix *= g[j];
            }
        }
    }
    (loss, penalty)
}

/// Stage inputs gathered once per dataset: one (n × |view|) matrix per stage.
#[derive(Debug, Clone)]
pub struct StageInputs<T> {
    pub(crate) matrices: Vec<Array2<T>>,
    pub(crate) labels: Vec<u8>,
}

impl<T: Scalar> StageInputs<T> {
    pub fn new(cascade: &CascadeModel<T>, data: &Dataset<T>) -> Result<Self> {
        cascade.check_dim(data.dim())?;
        Ok(StageInputs {
            matrices: cascade.stages.iter().map(|s| data.view_matrix(&s.spec.view)).collect(),
            labels: data.labels().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Sum of instance objectives over a batch of stage probabilities. When
/// `upstream` is given it receives dObjective/dp_l for every stage and instance.
pub(crate) fn combine_batch<T: Scalar>(
    probs: &[ArrayView1<'_, T>],
    labels: &[u8],
    schedule: &CostSchedule<T>,
    alpha: T,
    opts: &LossOptions<T>,
    mut upstream: Option<&mut [Array1<T>]>,
) -> T {
    let l = probs.len();
    let mut p: Buf<T> = SmallVec::from_elem(T::zero(), l);
    let mut dp: Buf<T> = SmallVec::from_elem(T::zero(), l);
    let mut total = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        for (k, col) in probs.iter().enumerate() {
            p[k] = col[i];
        }
        let want = upstream.is_some();
        let (loss, penalty) = instance_terms(
            &p,
            y,
            &schedule.kappa,
            schedule.lambda,
            alpha,
            opts,
            want.then_some(&mut dp[..]),
        );
        total += loss + schedule.lambda * penalty;
        if let Some(up) = upstream.as_deref_mut() {
            for (k, u) in up.iter_mut().enumerate() {
                u[i] = dp[k];
            }
        }
    }
    total
}

/// Objective and (optionally) gradient on pre-gathered inputs.
pub fn evaluate_cached<T: Scalar>(
    cascade: &CascadeModel<T>,
    inputs: &StageInputs<T>,
    schedule: &CostSchedule<T>,
    opts: &LossOptions<T>,
    with_gradient: bool,
) -> (T, Option<CascadeGradient<T>>) {
    let traces: Vec<_> = cascade
        .stages
        .iter()
        .zip(&inputs.matrices)
        .map(|(s, x)| s.forward_batch(x.view()))
        .collect();
    let probs: Vec<_> = traces.iter().map(|t| t.output()).collect();
    if !with_gradient {
        let value = combine_batch(&probs, &inputs.labels, schedule, cascade.alpha, opts, None);
        return (value, None);
    }
    let mut upstream: Vec<Array1<T>> = (0..cascade.len()).map(|_| Array1::zeros(inputs.len())).collect();
    let value = combine_batch(
        &probs,
        &inputs.labels,
        schedule,
        cascade.alpha,
        opts,
        Some(&mut upstream),
    );
    let stages = cascade
        .stages
        .iter()
        .zip(&traces)
        .zip(&upstream)
        .map(|((s, t), u)| s.backward_batch(t, u.view()))
        .collect();
    (value, Some(CascadeGradient { stages }))
}

fn prepare<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
) -> Result<StageInputs<T>> {
    if data.is_empty() {
        return Err(Error::Config("objective over an empty dataset".into()));
    }
    schedule.check_len(cascade.len())?;
    StageInputs::new(cascade, data)
}

/// Minimized training objective Σ_n [nll(y_n, P*(x_n)) + λ·r(x_n)].
pub fn objective<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
) -> Result<T> {
    let inputs = prepare(cascade, data, schedule)?;
    Ok(evaluate_cached(cascade, &inputs, schedule, &LossOptions::default(), false).0)
}

pub fn objective_gradient<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
) -> Result<CascadeGradient<T>> {
    let inputs = prepare(cascade, data, schedule)?;
    let (_, grad) = evaluate_cached(cascade, &inputs, schedule, &LossOptions::default(), true);
    Ok(grad.expect("gradient requested"))
}

/// Soft-cascade baseline: cross-entropy of the product rule plus λ times
/// the expected stage cost.
pub fn soft_cascade_objective<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
) -> Result<T> {
    let inputs = prepare(cascade, data, schedule)?;
    let opts = LossOptions::new(Combination::Product);
    Ok(evaluate_cached(cascade, &inputs, schedule, &opts, false).0)
}

pub fn soft_cascade_gradient<T: Scalar>(
    cascade: &CascadeModel<T>,
    data: &Dataset<T>,
    schedule: &CostSchedule<T>,
) -> Result<CascadeGradient<T>> {
    let inputs = prepare(cascade, data, schedule)?;
    let opts = LossOptions::new(Combination::Product);
    let (_, grad) = evaluate_cached(cascade, &inputs, schedule, &opts, true);
    Ok(grad.expect("gradient requested"))
}

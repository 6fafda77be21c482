//! Labeled datasets, normalization, feature engineering and splitting.

mod io;
mod synth;

pub use io::{load_csv, read_csv, write_csv, write_csv_to};
pub use synth::{synth_generate, SynthConfig};

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// One feature vector with its binary label (1 = detection class).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance<T> {
    pub features: Vec<T>,
    pub label: u8,
}

/// Ordered column indices a stage reads from the shared feature space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureView(Vec<usize>);

impl FeatureView {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let mut seen = indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "feature view has duplicate indices: {indices:?}"
            )));
        }
        Ok(FeatureView(indices))
    }

    /// Columns `start..end`.
    pub fn range(start: usize, end: usize) -> Self {
        FeatureView((start..end).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Smallest feature dimension this view can read from.
    pub fn required_dim(&self) -> usize {
        self.0.iter().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Config("feature view is empty".into()));
        }
        if self.required_dim() > dim {
            return Err(Error::Dimension(format!(
                "feature view reads column {} but data has {dim} features",
                self.required_dim() - 1
            )));
        }
        Ok(())
    }
}

/// Per-feature z-score parameters fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub stddev: Vec<T>,
}

impl<T: Scalar> NormStats<T> {
    /// Population mean and stddev per column. A constant column gets
    /// stddev 1 so it maps to zeros instead of dividing by zero.
    pub fn fit(features: ArrayView2<'_, T>) -> Self {
        let n = T::of(features.nrows() as f64);
        let mut mean = Vec::with_capacity(features.ncols());
        let mut stddev = Vec::with_capacity(features.ncols());
        for col in features.columns() {
            let m = col.iter().copied().sum::<T>() / n;
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
            let sd = var.sqrt();
            mean.push(m);
            stddev.push(if sd > T::zero() { sd } else { T::one() });
        }
        NormStats { mean, stddev }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, data: &Dataset<T>) -> Result<Dataset<T>> {
        if data.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "normalization fitted on {} features, data has {}",
                self.dim(),
                data.dim()
            )));
        }
        let mut features = data.features.clone();
        for (j, mut col) in features.columns_mut().into_iter().enumerate() {
            let (m, sd) = (self.mean[j], self.stddev[j]);
            col.mapv_inplace(|v| (v - m) / sd);
        }
        Ok(Dataset {
            features,
            labels: data.labels.clone(),
            feature_names: data.feature_names.clone(),
            norm_stats: Some(self.clone()),
        })
    }
}

/// Immutable labeled feature matrix (one row per instance).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Array2<T>,
    labels: Vec<u8>,
    feature_names: Vec<String>,
    norm_stats: Option<NormStats<T>>,
}

fn default_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|j| format!("f{j}")).collect()
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        features: Array2<T>,
        labels: Vec<u8>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let dim = features.ncols();
        if dim == 0 {
            return Err(Error::Dimension("dataset needs at least one feature".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::Config(format!(
                "label {} at instance {i} is not binary",
                labels[i]
            )));
        }
        if let Some(((i, j), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature {j} of instance {i}")));
        }
        let feature_names = feature_names.unwrap_or_else(|| default_names(dim));
        if feature_names.len() != dim {
            return Err(Error::Dimension(format!(
                "{} feature names for {dim} features",
                feature_names.len()
            )));
        }
        let features = if features.is_standard_layout() {
            features
        } else {
            features.as_standard_layout().to_owned()
        };
        Ok(Dataset {
            features,
            labels,
            feature_names,
            norm_stats: None,
        })
    }

    pub fn from_instances(
        instances: &[LabeledInstance<T>],
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let dim = match (instances.first(), &feature_names) {
            (Some(first), _) => first.features.len(),
            (None, Some(names)) => names.len(),
            (None, None) => {
                return Err(Error::Dimension(
                    "cannot infer dimension of an empty dataset".into(),
                ))
            }
        };
        let mut flat = Vec::with_capacity(instances.len() * dim);
        for (i, inst) in instances.iter().enumerate() {
            if inst.features.len() != dim {
                return Err(Error::Dimension(format!(
                    "instance {i} has {} features, expected {dim}",
                    inst.features.len()
                )));
            }
            flat.extend_from_slice(&inst.features);
        }
        let features = Array2::from_shape_vec((instances.len(), dim), flat)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let labels = instances.iter().map(|i| i.label).collect();
        Self::new(features, labels, feature_names)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, T> {
        self.features.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn norm_stats(&self) -> Option<&NormStats<T>> {
        self.norm_stats.as_ref()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.features.row(i)
    }

    pub fn instance(&self, i: usize) -> LabeledInstance<T> {
        LabeledInstance {
            features: self.features.row(i).to_vec(),
            label: self.labels[i],
        }
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Labels as scalars, for loss computations.
    pub fn label_vector(&self) -> Array1<T> {
        self.labels.iter().map(|&y| T::of(f64::from(y))).collect()
    }

    /// Gather the columns of `view` into a dense (n × |view|) matrix.
    pub fn view_matrix(&self, view: &FeatureView) -> Array2<T> {
        self.features.select(Axis(1), view.indices())
    }

    /// Rows at `indices`, in that order. Keeps names and stats.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            norm_stats: self.norm_stats.clone(),
        }
    }

    /// Append the five-term quadratic expansion of columns `roll` and `pitch`.
    pub fn with_basis_expansion(&self, roll: usize, pitch: usize) -> Result<Self> {
        let dim = self.dim();
        if roll >= dim || pitch >= dim {
            return Err(Error::Dimension(format!(
                "basis columns ({roll}, {pitch}) out of range for {dim} features"
            )));
        }
        let mut extra = Array2::zeros((self.len(), 5));
        for (i, mut out) in extra.rows_mut().into_iter().enumerate() {
            let phi = basis_expand(self.features[(i, roll)], self.features[(i, pitch)]);
            out.assign(&ndarray::aview1(&phi));
        }
        let features = concatenate(Axis(1), &[self.features.view(), extra.view()])
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let mut names = self.feature_names.clone();
        let (r, p) = (&self.feature_names[roll], &self.feature_names[pitch]);
        names.extend([
            format!("phi_{r}"),
            format!("phi_{p}"),
            format!("phi_{r}^2"),
            format!("phi_{p}^2"),
            format!("phi_{r}*{p}"),
        ]);
        Dataset::new(features, self.labels.clone(), Some(names))
    }

    /// Convert to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            features: self.features.mapv(|v| U::of(v.to_f64_lossy())),
            labels: self.labels.clone(),
            feature_names: self.feature_names.clone(),
            norm_stats: self.norm_stats.as_ref().map(|s| NormStats {
                mean: s.mean.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
                stddev: s.stddev.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            }),
        }
    }
}

/// Fit z-score statistics on `train` alone and apply them to every dataset.
pub fn zscore_fit_apply<T: Scalar>(
    train: &Dataset<T>,
    others: &[&Dataset<T>],
) -> Result<(Dataset<T>, Vec<Dataset<T>>, NormStats<T>)> {
    if train.is_empty() {
        return Err(Error::Config("cannot fit normalization on an empty dataset".into()));
    }
    let stats = NormStats::fit(train.features());
    let train_out = stats.transform(train)?;
    let others_out = others
        .iter()
        .map(|d| stats.transform(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((train_out, others_out, stats))
}

/// Fitted input pipeline: z-score, optional quadratic expansion of two
/// standardized columns, then a second z-score over the widened matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Preprocessing<T> {
    pub raw: NormStats<T>,
    /// `(roll, pitch)` column indices into the raw features.
    pub basis: Option<(usize, usize)>,
    pub expanded: Option<NormStats<T>>,
}

impl<T: Scalar> Preprocessing<T> {
    pub fn fit(train: &Dataset<T>, basis: Option<(usize, usize)>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("cannot fit normalization on an empty dataset".into()));
        }
        let raw = NormStats::fit(train.features());
        let expanded = match basis {
            None => None,
            Some((roll, pitch)) => {
                let widened = raw.transform(train)?.with_basis_expansion(roll, pitch)?;
                Some(NormStats::fit(widened.features()))
            }
        };
        Ok(Preprocessing { raw, basis, expanded })
    }

    /// Number of raw columns the pipeline expects.
    pub fn input_dim(&self) -> usize {
        self.raw.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.input_dim() + if self.basis.is_some() { 5 } else { 0 }
    }

    pub fn apply(&self, data: &Dataset<T>) -> Result<Dataset<T>> {
        let z = self.raw.transform(data)?;
        match (self.basis, &self.expanded) {
            (Some((roll, pitch)), Some(stats)) => stats.transform(&z.with_basis_expansion(roll, pitch)?),
            (None, None) => Ok(z),
            _ => Err(Error::Format("basis columns and expanded statistics must both be present".into())),
        }
    }
}

/// Quadratic basis Φ([x, y]) = [x, y, x², y², x·y].
pub fn basis_expand<T: Scalar>(roll: T, pitch: T) -> [T; 5] {
    [roll, pitch, roll * roll, pitch * pitch, roll * pitch]
}

/// Class-stratified random split. The training part gets exactly
/// `train_count` instances of which `train_pos_count` are positive.
pub fn stratified_split<T: Scalar>(
    data: &Dataset<T>,
    train_count: usize,
    train_pos_count: usize,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, &y) in data.labels().iter().enumerate() {
        if y == 1 { pos.push(i) } else { neg.push(i) }
    }
    let infeasible = train_pos_count > train_count
        || train_pos_count > pos.len()
        || train_count - train_pos_count > neg.len();
    if infeasible {
        return Err(Error::InfeasibleSplit {
            train_count,
            train_pos: train_pos_count,
            available_pos: pos.len(),
            available_neg: neg.len(),
        });
    }
    let mut rng = stream_rng(seed, Stream::Split);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let train_neg = train_count - train_pos_count;

    let mut train_idx: Vec<usize> = pos[..train_pos_count]
        .iter()
        .chain(&neg[..train_neg])
        .copied()
        .collect();
    let mut test_idx: Vec<usize> = pos[train_pos_count..]
        .iter()
        .chain(&neg[train_neg..])
        .copied()
        .collect();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((data.subset(&train_idx), data.subset(&test_idx)))
}

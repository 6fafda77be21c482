//! Stage classifiers: logistic regression and feed-forward networks with
//! one or two logistic hidden layers, each ending in one logistic unit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureView;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::{open_unit, sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Linear,
    OneHidden,
    TwoHidden,
}

impl StageKind {
    pub fn hidden_layers(self) -> usize {
        match self {
            StageKind::Linear => 0,
            StageKind::OneHidden => 1,
            StageKind::TwoHidden => 2,
        }
    }
}

/// Architecture of one stage: depth, hidden widths and input columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageSpec {
    pub kind: StageKind,
    pub hidden_sizes: Vec<usize>,
    pub view: FeatureView,
}

impl StageSpec {
    pub fn linear(view: FeatureView) -> Self {
        StageSpec { kind: StageKind::Linear, hidden_sizes: vec![], view }
    }

    pub fn one_hidden(hidden: usize, view: FeatureView) -> Self {
        StageSpec { kind: StageKind::OneHidden, hidden_sizes: vec![hidden], view }
    }

    pub fn two_hidden(first: usize, second: usize, view: FeatureView) -> Self {
        StageSpec {
            kind: StageKind::TwoHidden,
            hidden_sizes: vec![first, second],
            view,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.len() != self.kind.hidden_layers() {
            return Err(Error::Config(format!(
                "{:?} stage needs {} hidden sizes, got {:?}",
                self.kind,
                self.kind.hidden_layers(),
                self.hidden_sizes
            )));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if self.view.is_empty() {
            return Err(Error::Config("stage feature view is empty".into()));
        }
        Ok(())
    }

    /// Widths from input to output, e.g. `[37, 10, 1]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(self.view.len());
        sizes.extend(&self.hidden_sizes);
        sizes.push(1);
        sizes
    }

    /// Short human-readable tag, e.g. `LR-5` or `2LNN-10-20`.
    pub fn label(&self) -> String {
        match self.kind {
            StageKind::Linear => format!("LR-{}", self.view.len()),
            StageKind::OneHidden => format!("1LNN-{}", self.hidden_sizes[0]),
            StageKind::TwoHidden => {
                format!("2LNN-{}-{}", self.hidden_sizes[0], self.hidden_sizes[1])
            }
        }
    }
}

/// Affine map `out = W·in + b` with `W` stored out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    bound = "T: Scalar",
    into = "LayerRecord<T>",
    try_from = "LayerRecord<T>"
)]
pub struct Layer<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Layer { weights: Array2::zeros((out, inp)), bias: Array1::zeros(out) }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn params(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct LayerRecord<T> {
    rows: usize,
    cols: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> From<Layer<T>> for LayerRecord<T> {
    fn from(l: Layer<T>) -> Self {
        let (rows, cols) = l.weights.dim();
        LayerRecord {
            rows,
            cols,
            weights: l.weights.iter().copied().collect(),
            bias: l.bias.to_vec(),
        }
    }
}

impl<T: Scalar> TryFrom<LayerRecord<T>> for Layer<T> {
    type Error = String;

    fn try_from(r: LayerRecord<T>) -> Result<Self, String> {
        if r.bias.len() != r.rows {
            return Err(format!("bias length {} != rows {}", r.bias.len(), r.rows));
        }
        let weights = Array2::from_shape_vec((r.rows, r.cols), r.weights)
            .map_err(|e| e.to_string())?;
        Ok(Layer { weights, bias: Array1::from(r.bias) })
    }
}

/// One gradient entry per parameter, laid out like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> ParamGradient<T> {
    pub fn zeros_like(model: &StageModel<T>) -> Self {
        ParamGradient {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| l.params().all(|v| *v == T::zero()))
    }
}

/// A trained or freshly initialized stage classifier p(y = 1 | x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StageModel<T> {
    pub spec: StageSpec,
    pub layers: Vec<Layer<T>>,
}

/// Reusable buffers for single-instance evaluation.
#[derive(Debug, Default, Clone)]
pub struct Scratch<T> {
    a: Vec<T>,
    b: Vec<T>,
}

/// Activations recorded by [`StageModel::forward_batch`]: the input matrix
/// followed by the output of every layer.
#[derive(Debug, Clone)]
pub struct BatchTrace<T> {
    activations: Vec<Array2<T>>,
}

impl<T: Scalar> BatchTrace<T> {
    pub fn output(&self) -> ArrayView1<'_, T> {
        self.activations.last().expect("trace has an output").column(0)
    }
}

/// Fresh parameters: zeros for a linear stage, otherwise uniform weights in
/// ±√(6 / (fan_in + fan_out)) with zero biases.
pub fn init_params<T: Scalar>(spec: &StageSpec, seed: u64) -> Result<StageModel<T>> {
    spec.validate()?;
    let sizes = spec.layer_sizes();
    let mut rng = stream_rng(seed, Stream::Init);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (inp, out) = (w[0], w[1]);
            let mut layer = Layer::zeros(out, inp);
            if spec.kind != StageKind::Linear {
                let a = (6.0 / (inp + out) as f64).sqrt();
                layer
                    .weights
                    .mapv_inplace(|_| T::of(rng.random_range(-a..=a)));
            }
            layer
        })
        .collect();
    Ok(StageModel { spec: spec.clone(), layers })
}

impl<T: Scalar> StageModel<T> {
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Parameters in canonical order: per layer, weights row-major then bias.
    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }

    pub fn assign_flat(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.num_params(), "parameter count mismatch");
        let mut it = values.iter();
        for l in &mut self.layers {
            for p in l.params_mut() {
                *p = *it.next().expect("length checked");
            }
        }
    }

    pub fn param_mut(&mut self, index: usize) -> &mut T {
        let mut index = index;
        for l in &mut self.layers {
            let n = l.num_params();
            if index < n {
                return l.params_mut().nth(index).expect("index in range");
            }
            index -= n;
        }
        panic!("parameter index out of range")
    }

    /// Check shapes against the spec and that every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let sizes = self.spec.layer_sizes();
        if self.layers.len() != sizes.len() - 1 {
            return Err(Error::Format(format!(
                "{} layers for spec with {} layers",
                self.layers.len(),
                sizes.len() - 1
            )));
        }
        for (l, w) in self.layers.iter().zip(sizes.windows(2)) {
            if l.weights.dim() != (w[1], w[0]) || l.bias.len() != w[1] {
                return Err(Error::Format(format!(
                    "layer shape {:?} does not chain {} -> {}",
                    l.weights.dim(),
                    w[0],
                    w[1]
                )));
            }
            if !l.params().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("model parameter".into()));
            }
        }
        Ok(())
    }

    /// p(y = 1 | x) for a full feature vector; the stage reads its own view.
    pub fn forward(&self, x: &[T]) -> Result<T> {
        if x.len() < self.spec.view.required_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, stage reads column {}",
                x.len(),
                self.spec.view.required_dim() - 1
            )));
        }
        if let Some(j) = self.spec.view.indices().iter().find(|&&j| !x[j].is_finite()) {
            return Err(Error::NonFinite(format!("input feature {j}")));
        }
        Ok(self.forward_with(x, &mut Scratch::default()))
    }

    /// Unchecked single-instance evaluation reusing `scratch`.
    pub fn forward_with(&self, x: &[T], scratch: &mut Scratch<T>) -> T {
        let view = self.spec.view.indices();
        let Scratch { a, b } = scratch;
        a.clear();
        a.extend(view.iter().map(|&j| x[j]));
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            b.clear();
            for (row, &bias) in layer.weights.rows().into_iter().zip(&layer.bias) {
                let mut z = bias;
                for (w, v) in row.iter().zip(a.iter()) {
                    z += *w * *v;
                }
                b.push(sigmoid(z));
            }
            if k == last {
                return open_unit(b[0]);
            }
            std::mem::swap(a, b);
        }
        unreachable!("a stage has at least one layer")
    }

    /// Forward pass over a batch whose columns are already this stage's view.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, T>) -> BatchTrace<T> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.to_owned());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().expect("input pushed");
            let mut z = prev.dot(&layer.weights.t());
            z += &layer.bias;
            if k == last {
                z.mapv_inplace(|v| open_unit(sigmoid(v)));
            } else {
                z.mapv_inplace(sigmoid);
            }
            activations.push(z);
        }
        BatchTrace { activations }
    }

    /// Gradient of Σᵢ upstreamᵢ · pᵢ with respect to every parameter.
    pub fn backward_batch(&self, trace: &BatchTrace<T>, upstream: ArrayView1<'_, T>) -> ParamGradient<T> {
        let n = upstream.len();
        let out = trace.output();
        let mut delta: Array2<T> = Array2::zeros((n, 1));
        Zip::from(delta.column_mut(0))
            .and(&upstream)
            .and(&out)
            .for_each(|d, &u, &p| *d = u * p * (T::one() - p));

        let mut grads: Vec<Layer<T>> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let prev = &trace.activations[k];
            let weights = delta.t().dot(prev);
            let bias = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut next = delta.dot(&self.layers[k].weights);
                Zip::from(&mut next)
                    .and(prev)
                    .for_each(|d, &a| *d *= a * (T::one() - a));
                delta = next;
            }
            grads.push(Layer { weights, bias });
        }
        grads.reverse();
        ParamGradient { layers: grads }
    }

    /// Gradient of `upstream · p(x)` for one instance.
    pub fn backward(&self, x: &[T], upstream: T) -> ParamGradient<T> {
        let row: Vec<T> = self.spec.view.indices().iter().map(|&j| x[j]).collect();
        let inputs = ArrayView2::from_shape((1, row.len()), &row).expect("one row");
        let trace = self.forward_batch(inputs);
        self.backward_batch(&trace, ndarray::aview1(&[upstream]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn view(n: usize) -> FeatureView {
        FeatureView::range(0, n)
    }

    #[test]
    fn linear_init_is_zero_and_outputs_half() {
        let m: StageModel<f64> = init_params(&StageSpec::linear(view(5)), 11).unwrap();
        assert!(m.flatten().iter().all(|&v| v == 0.0));
        assert_eq!(m.forward(&[3.0, -1.0, 2.0, 0.0, 9.0]).unwrap(), 0.5);
    }

    #[test]
    fn hidden_init_shapes_and_bounds() {
        let m: StageModel<f64> = init_params(&StageSpec::one_hidden(10, view(37)), 1).unwrap();
        assert_eq!(m.layers[0].weights.dim(), (10, 37));
        assert_eq!(m.layers[0].bias.len(), 10);
        assert_eq!(m.layers[1].weights.dim(), (1, 10));
        assert_eq!(m.layers[1].bias.len(), 1);
        let a = (6.0f64 / 47.0).sqrt();
        assert!(m.layers[0].weights.iter().all(|w| w.abs() <= a));
        assert!(m.layers[0].bias.iter().all(|&b| b == 0.0));
        let again: StageModel<f64> = init_params(&StageSpec::one_hidden(10, view(37)), 1).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn sigmoid_limits_of_linear_stage() {
        let mut m: StageModel<f64> = init_params(&StageSpec::linear(view(2)), 0).unwrap();
        m.layers[0].weights[(0, 0)] = 1.0;
        assert_eq!(m.forward(&[0.0, 5.0]).unwrap(), 0.5);
        let p = m.forward(&[1e6, 0.0]).unwrap();
        assert!(p < 1.0 && p > 0.999_999);
        let q = m.forward(&[-1e6, 0.0]).unwrap();
        assert!(q > 0.0);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let m: StageModel<f64> = init_params(&StageSpec::linear(view(3)), 0).unwrap();
        assert!(m.forward(&[0.0, f64::NAN, 1.0]).is_err());
        assert!(m.forward(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn view_selects_columns() {
        let spec = StageSpec::linear(FeatureView::new(vec![2]).unwrap());
        let mut m: StageModel<f64> = init_params(&spec, 0).unwrap();
        m.layers[0].weights[(0, 0)] = 1.0;
        let p = m.forward(&[100.0, 100.0, 0.0]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn linear_backward_closed_form() {
        let mut m: StageModel<f64> = init_params(&StageSpec::linear(view(3)), 0).unwrap();
        m.assign_flat(&[0.3, -0.2, 0.1, 0.05]);
        let x = [1.0, 2.0, -0.5];
        let p = m.forward(&x).unwrap();
        let g = m.backward(&x, 1.0).flatten();
        let s = p * (1.0 - p);
        for j in 0..3 {
            assert!((g[j] - s * x[j]).abs() < 1e-15);
        }
        assert!((g[3] - s).abs() < 1e-15);
        assert!(m.backward(&x, 0.0).is_zero());
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let spec = StageSpec::two_hidden(4, 3, FeatureView::new(vec![1, 3, 0]).unwrap());
        let m: StageModel<f64> = init_params(&spec, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Array2<f64> = Array2::from_shape_fn((6, 4), |_| rng.random_range(-2.0..2.0));
        let sel = x.select(Axis(1), spec.view.indices());
        let trace = m.forward_batch(sel.view());
        for i in 0..6 {
            let single = m.forward(x.row(i).as_slice().unwrap()).unwrap();
            assert!((single - trace.output()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_round_trip_and_param_mut() {
        let m: StageModel<f64> = init_params(&StageSpec::one_hidden(3, view(2)), 2).unwrap();
        let flat = m.flatten();
        assert_eq!(flat.len(), m.num_params());
        let mut m2 = m.clone();
        *m2.param_mut(4) += 1.0;
        assert_eq!(m2.flatten()[4], flat[4] + 1.0);
        m2.assign_flat(&flat);
        assert_eq!(m, m2);
    }

    #[test]
    fn serde_is_value_exact() {
        let m: StageModel<f64> = init_params(&StageSpec::two_hidden(10, 20, view(37)), 9).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: StageModel<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
        back.validate().unwrap();
    }

    #[test]
    fn spec_validation() {
        let mut s = StageSpec::one_hidden(10, view(3));
        s.hidden_sizes.clear();
        assert!(s.validate().is_err());
        assert!(StageSpec::linear(FeatureView::new(vec![]).unwrap()).validate().is_err());
        assert_eq!(StageSpec::two_hidden(10, 20, view(37)).label(), "2LNN-10-20");
    }
}

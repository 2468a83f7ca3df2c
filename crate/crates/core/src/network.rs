//! Feed-forward classifier: dense layers, a softmax head and exact
//! backpropagation to both the parameters and the inputs.
//!
//! Parameters live in one flat vector. Each layer stores its weight matrix
//! (`rows = out`, `cols = in`, row-major) followed by its bias.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::divergence::softmax_in_place;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation and the activation output. The
    /// ReLU subgradient at exactly zero is taken as 0.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// Network layout: hidden layers followed by a linear layer of
/// `output_classes` logits and a softmax.
///
/// With `pin_last_logit` the final logit is fixed at 0 and has no
/// parameters, as in the single-logit binary models.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    pub hidden: Vec<(usize, Activation)>,
    pub output_classes: usize,
    pub pin_last_logit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    fn end(&self) -> usize {
        self.bias_offset + self.rows
    }
}

impl ArchitectureSpec {
    pub fn new(
        input_dim: usize,
        hidden: Vec<(usize, Activation)>,
        output_classes: usize,
    ) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden,
            output_classes,
            pin_last_logit: false,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.iter().any(|(w, _)| *w == 0) {
            return Err(Error::InvalidParameter(
                "layer widths must be at least 1".into(),
            ));
        }
        if self.output_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 output classes, got {}",
                self.output_classes
            )));
        }
        Ok(())
    }

    /// Named presets: `mnist-mlp`, `fmnist-mlp`, `surrogate-64`, `toy`.
    pub fn preset(name: &str) -> Result<Self> {
        use Activation::*;
        match name {
            "mnist-mlp" => Self::new(784, vec![(128, Relu), (128, Relu)], 10),
            "fmnist-mlp" => Self::new(784, vec![(200, Relu), (100, Relu)], 10),
            "surrogate-64" => Self::new(784, vec![(64, Relu)], 10),
            "toy" => Self::new(2, vec![(16, Tanh)], 2),
            other => Err(Error::Parse(format!(
                "unknown architecture preset `{other}`"
            ))),
        }
    }

    /// Same hidden stack with a different input width and class count.
    pub fn with_io(&self, input_dim: usize, output_classes: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            output_classes,
            ..self.clone()
        };
        arch.validate()?;
        Ok(arch)
    }

    fn learned_outputs(&self) -> usize {
        if self.pin_last_logit {
            self.output_classes - 1
        } else {
            self.output_classes
        }
    }

    pub fn shape_map(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut offset = 0;
        let mut cols = self.input_dim;
        let widths = self
            .hidden
            .iter()
            .map(|(w, _)| *w)
            .chain(std::iter::once(self.learned_outputs()));
        for rows in widths {
            let shape = LayerShape {
                rows,
                cols,
                weight_offset: offset,
                bias_offset: offset + rows * cols,
            };
            offset = shape.end();
            cols = rows;
            shapes.push(shape);
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.shape_map().last().map_or(0, LayerShape::end)
    }
}

/// Flat parameter vector plus the per-layer offsets into it.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    flat: Vec<f64>,
    shapes: Vec<LayerShape>,
}

impl NetworkParams {
    pub fn from_flat(arch: &ArchitectureSpec, flat: Vec<f64>) -> Result<Self> {
        let shapes = arch.shape_map();
        let expected = shapes.last().map_or(0, LayerShape::end);
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: flat.len(),
            });
        }
        Ok(Self { flat, shapes })
    }

    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        Self {
            flat: vec![0.0; arch.param_count()],
            shapes: arch.shape_map(),
        }
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let sh = self.shapes[layer];
        ArrayView2::from_shape(
            (sh.rows, sh.cols),
            &self.flat[sh.weight_offset..sh.bias_offset],
        )
        .expect("layer shape matches flat slice")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let sh = self.shapes[layer];
        ArrayView1::from(&self.flat[sh.bias_offset..sh.end()])
    }

    fn check(&self, arch: &ArchitectureSpec) -> Result<()> {
        if self.shapes != arch.shape_map() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                got: self.flat.len(),
            });
        }
        Ok(())
    }
}

fn layer_views(
    flat: &mut [f64],
    sh: LayerShape,
) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
    let (w, rest) = flat[sh.weight_offset..sh.end()].split_at_mut(sh.rows * sh.cols);
    (
        ArrayViewMut2::from_shape((sh.rows, sh.cols), w).expect("layer shape matches flat slice"),
        ArrayViewMut1::from(rest),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights ~ Normal(0, 2 / (fan_in + fan_out)).
    GlorotNormal,
    /// Weights ~ Uniform(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
    HeUniform,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glorot" | "glorot_normal" => Ok(InitScheme::GlorotNormal),
            "he" | "he_uniform" => Ok(InitScheme::HeUniform),
            other => Err(Error::Parse(format!("unknown init scheme `{other}`"))),
        }
    }
}

/// Deterministic initialization: biases are zero, weights drawn layer by
/// layer in flat order from a stream keyed by `seed`.
pub fn init_params(arch: &ArchitectureSpec, scheme: InitScheme, seed: u64) -> NetworkParams {
    let mut params = NetworkParams::zeros(arch);
    let mut rng = seeded(seed);
    for sh in params.shapes.clone() {
        let (fan_in, fan_out) = (sh.cols as f64, sh.rows as f64);
        let weights = &mut params.flat[sh.weight_offset..sh.bias_offset];
        match scheme {
            InitScheme::GlorotNormal => {
                let dist =
                    Normal::new(0.0, (2.0 / (fan_in + fan_out)).sqrt()).expect("positive std");
                weights.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            }
            InitScheme::HeUniform => {
                let limit = (6.0 / fan_in).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite range");
                weights.iter_mut().for_each(|w| *w = rng.sample(dist));
            }
        }
    }
    params
}

/// Intermediate values of a batched forward pass (one row per example).
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    /// Pre-activations of each hidden layer.
    pub pre: Vec<Array2<f64>>,
    /// Activations of each hidden layer.
    pub post: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    /// Probabilities of example `i` as a slice.
    pub fn probs_row(&self, i: usize) -> &[f64] {
        let cols = self.probs.ncols();
        &self.probs.as_slice().expect("standard layout")[i * cols..(i + 1) * cols]
    }
}

fn affine(input: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut z = input.dot(&w.t());
    z += &b;
    z
}

/// Batched forward pass over the rows of `x`.
pub fn forward_batch(
    params: &NetworkParams,
    arch: &ArchitectureSpec,
    x: ArrayView2<f64>,
) -> Result<ForwardTrace> {
    params.check(arch)?;
    if x.ncols() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim,
            got: x.ncols(),
        });
    }
    let input = x.as_standard_layout().into_owned();
    let mut pre = Vec::with_capacity(arch.hidden.len());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(arch.hidden.len());
    for (l, (_, act)) in arch.hidden.iter().enumerate() {
        let prev = post.last().map_or(input.view(), |a| a.view());
        let z = affine(prev, params.weights(l), params.bias(l));
        let a = z.mapv(|v| act.apply(v));
        pre.push(z);
        post.push(a);
    }
    let last = arch.hidden.len();
    let prev = post.last().map_or(input.view(), |a| a.view());
    let learned = affine(prev, params.weights(last), params.bias(last));
    let logits = if arch.pin_last_logit {
        let mut full = Array2::zeros((learned.nrows(), arch.output_classes));
        full.slice_mut(s![.., ..arch.output_classes - 1])
            .assign(&learned);
        full
    } else {
        learned
    };
    let mut probs = logits.clone();
    for mut row in probs.outer_iter_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    Ok(ForwardTrace {
        input,
        pre,
        post,
        logits,
        probs,
    })
}

/// Forward pass for a single feature vector.
pub fn forward(params: &NetworkParams, arch: &ArchitectureSpec, x: &[f64]) -> Result<ForwardTrace> {
    let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    forward_batch(params, arch, view)
}

/// Gradients from a backward pass. `params` is summed over the batch;
/// `input` has one row per example.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Array2<f64>,
}

/// Backpropagates `grad_logits` (one row per example) through the trace.
pub fn backward_batch(
    trace: &ForwardTrace,
    params: &NetworkParams,
    arch: &ArchitectureSpec,
    grad_logits: ArrayView2<f64>,
) -> Result<Gradients> {
    params.check(arch)?;
    let n = trace.batch_size();
    if trace.pre.len() != arch.hidden.len() || trace.logits.ncols() != arch.output_classes {
        return Err(Error::InvalidParameter(
            "trace does not match architecture".into(),
        ));
    }
    if grad_logits.dim() != (n, arch.output_classes) {
        return Err(Error::DimensionMismatch {
            expected: n * arch.output_classes,
            got: grad_logits.len(),
        });
    }
    let mut grad = vec![0.0; params.len()];
    let mut upstream: Array2<f64> = if arch.pin_last_logit {
        grad_logits
            .slice(s![.., ..arch.output_classes - 1])
            .to_owned()
    } else {
        grad_logits.to_owned()
    };
    for l in (0..=arch.hidden.len()).rev() {
        if l < arch.hidden.len() {
            let act = arch.hidden[l].1;
            ndarray::Zip::from(&mut upstream)
                .and(&trace.pre[l])
                .and(&trace.post[l])
                .for_each(|g, &z, &a| *g *= act.derivative(z, a));
        }
        let below = if l == 0 {
            trace.input.view()
        } else {
            trace.post[l - 1].view()
        };
        let (mut dw, mut db) = layer_views(&mut grad, params.shapes[l]);
        dw.assign(&upstream.t().dot(&below));
        db.assign(&upstream.sum_axis(Axis(0)));
        upstream = upstream.dot(&params.weights(l));
    }
    Ok(Gradients {
        params: grad,
        input: upstream,
    })
}

/// Backward pass for a single example; returns `(grad_params, grad_input)`.
pub fn backward(
    trace: &ForwardTrace,
    params: &NetworkParams,
    arch: &ArchitectureSpec,
    grad_logits: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let view = ArrayView2::from_shape((1, grad_logits.len()), grad_logits).map_err(|_| {
        Error::DimensionMismatch {
            expected: arch.output_classes,
            got: grad_logits.len(),
        }
    })?;
    let g = backward_batch(trace, params, arch, view)?;
    Ok((g.params, g.input.into_raw_vec_and_offset().0))
}

/// Arg-max class predictions for each row of `x`.
pub fn predict(
    params: &NetworkParams,
    arch: &ArchitectureSpec,
    x: ArrayView2<f64>,
) -> Result<Vec<usize>> {
    let trace = forward_batch(params, arch, x)?;
    Ok(trace
        .probs
        .outer_iter()
        .map(|row| crate::divergence::argmax(row.as_slice().expect("standard layout")))
        .collect())
}

/// Fraction of rows of `x` whose predicted class equals the label.
pub fn accuracy(
    params: &NetworkParams,
    arch: &ArchitectureSpec,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    // chunked so large evaluation sets don't materialize every activation at once
    for (rows, ys) in x.axis_chunks_iter(Axis(0), 1024).zip(labels.chunks(1024)) {
        let preds = predict(params, arch, rows)?;
        correct += preds.iter().zip(ys).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// The single-feature binary models used for influence-function studies.
/// Only the first logit is modelled; the second is pinned at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExampleModel {
    /// `z = t1 + t2 x`
    M1,
    /// `z = t5 + t6 relu(t1 + t2 x) + t7 relu(t3 + t4 x)`
    M2,
    /// `z = t5 + t6 tanh(t1 + t2 x) + t7 tanh(t3 + t4 x)`
    M3,
}

impl ExampleModel {
    pub fn param_count(self) -> usize {
        match self {
            ExampleModel::M1 => 2,
            ExampleModel::M2 | ExampleModel::M3 => 7,
        }
    }

    pub fn architecture(self) -> ArchitectureSpec {
        let hidden = match self {
            ExampleModel::M1 => vec![],
            ExampleModel::M2 => vec![(2, Activation::Relu)],
            ExampleModel::M3 => vec![(2, Activation::Tanh)],
        };
        ArchitectureSpec {
            input_dim: 1,
            hidden,
            output_classes: 2,
            pin_last_logit: true,
        }
    }

    /// Position in the flat network layout of each model parameter `t_k`.
    fn flat_index(self) -> &'static [usize] {
        // flat layout: M1 = [w, b]; M2/M3 = [w1, w2, b1, b2, v1, v2, c]
        match self {
            ExampleModel::M1 => &[1, 0],
            ExampleModel::M2 | ExampleModel::M3 => &[2, 0, 3, 1, 6, 4, 5],
        }
    }

    pub fn theta_to_params(self, theta: &[f64]) -> Result<NetworkParams> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        let mut flat = vec![0.0; theta.len()];
        for (k, &idx) in self.flat_index().iter().enumerate() {
            flat[idx] = theta[k];
        }
        NetworkParams::from_flat(&self.architecture(), flat)
    }

    /// Reorders a flat-layout vector (e.g. a parameter gradient) into model
    /// parameter order.
    pub fn flat_to_theta(self, flat: &[f64]) -> Vec<f64> {
        self.flat_index().iter().map(|&idx| flat[idx]).collect()
    }
}

impl std::str::FromStr for ExampleModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(ExampleModel::M1),
            "M2" => Ok(ExampleModel::M2),
            "M3" => Ok(ExampleModel::M3),
            other => Err(Error::Parse(format!("unknown example model `{other}`"))),
        }
    }
}

/// Convenience for tests and attacks: probabilities for one example.
pub fn probs_of(params: &NetworkParams, arch: &ArchitectureSpec, x: &[f64]) -> Result<Array1<f64>> {
    Ok(forward(params, arch, x)?.probs.row(0).to_owned())
}

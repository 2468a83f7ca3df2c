//! The S-divergence loss family and the baseline classification losses.
//!
//! Losses here work on probability vectors produced by a softmax head. The
//! S-divergence family is indexed by `(beta, lambda)` through the derived
//! constants `A = 1 + lambda (1 - beta)` and `B = beta - lambda (1 - beta)`;
//! only pairs with `A > 0` and `B > 0` (plus the `beta = 1` line) are
//! accepted.

use std::fmt;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result, TuningRejection};

/// Probabilities are clamped to `[PROB_CLIP, 1 - PROB_CLIP]` before any term
/// with a non-positive power or a logarithm is evaluated.
pub const PROB_CLIP: f64 = 1e-7;

const SIMPLEX_TOL: f64 = 1e-9;

#[inline]
pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// An admissible `(beta, lambda)` pair with its derived `A` and `B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningPair {
    beta: f64,
    lambda: f64,
    a: f64,
    b: f64,
}

impl TuningPair {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        let reject = |reason| Error::Tuning {
            beta,
            lambda,
            reason,
        };
        if !beta.is_finite() || !(0.0..=1.0).contains(&beta) {
            return Err(reject(TuningRejection::BetaOutOfRange));
        }
        if !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite, got {lambda}"
            )));
        }
        let a = 1.0 + lambda * (1.0 - beta);
        let b = beta - lambda * (1.0 - beta);
        if a <= 0.0 {
            return Err(reject(TuningRejection::ANonpositive));
        }
        if b <= 0.0 {
            return Err(reject(TuningRejection::BNonpositive));
        }
        Ok(Self { beta, lambda, a, b })
    }

    pub fn is_admissible(beta: f64, lambda: f64) -> bool {
        Self::new(beta, lambda).is_ok()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
}

impl fmt::Display for TuningPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.beta, self.lambda)
    }
}

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbs("empty vector".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidProbs(format!("entry {bad} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidProbs(format!("entries sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn vertex(label: OneHotLabel) -> Self {
        let mut v = vec![0.0; label.dim()];
        v[label.class()] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A one-hot encoded class label, stored by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotLabel {
    class: usize,
    dim: usize,
}

impl OneHotLabel {
    pub fn new(class: usize, dim: usize) -> Result<Self> {
        if class >= dim {
            return Err(Error::LabelOutOfRange {
                label: class,
                classes: dim,
            });
        }
        Ok(Self { class, dim })
    }
    pub fn class(&self) -> usize {
        self.class
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    #[inline]
    pub fn entry(&self, j: usize) -> f64 {
        if j == self.class {
            1.0
        } else {
            0.0
        }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = j;
        }
    }
    best
}

/// Row softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Pulls a gradient with respect to softmax outputs back to the logits:
/// `grad_z = p * (g - <p, g>)`.
pub(crate) fn softmax_backward(probs: &[f64], grad_probs: &[f64], out: &mut [f64]) {
    let inner: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    for ((o, p), g) in out.iter_mut().zip(probs).zip(grad_probs) {
        *o = p * (g - inner);
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

// Slice kernels shared by the typed API and the training loop.

/// [`sd_loss`] on a raw slice, without validation. Defined for any
/// positive `p`, on or off the simplex.
pub fn sd_loss_raw(class: usize, p: &[f64], t: &TuningPair) -> f64 {
    let (beta, a, b) = (t.beta, t.a, t.b);
    let coef = (1.0 + beta) / b;
    let mut total = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        total += pj.powf(1.0 + beta) + a / b;
        if j == class {
            total -= coef * pj.powf(b);
        }
    }
    total / a
}

pub(crate) fn sd_grad_probs_raw(class: usize, p: &[f64], t: &TuningPair, out: &mut [f64]) {
    let scale = (1.0 + t.beta) / t.a;
    for (j, (o, &pj)) in out.iter_mut().zip(p).enumerate() {
        let q = clip_prob(pj);
        let mut g = q.powf(t.beta);
        if j == class {
            g -= q.powf(t.b - 1.0);
        }
        *o = scale * g;
    }
}

/// The per-example S-divergence loss between a one-hot label and a
/// probability vector.
///
/// At `p = u` this evaluates to `(J - 1) / B`, not zero: the constant label
/// term carried by the loss is `J A / B` rather than `A / B`.
pub fn sd_loss(u: OneHotLabel, p: &ProbVector, t: &TuningPair) -> Result<f64> {
    check_dim(u.dim(), p.len())?;
    Ok(sd_loss_raw(u.class(), p.as_slice(), t))
}

/// Partial derivatives of [`sd_loss`] with respect to each probability.
pub fn sd_loss_grad_probs(u: OneHotLabel, p: &ProbVector, t: &TuningPair) -> Result<Vec<f64>> {
    check_dim(u.dim(), p.len())?;
    let mut out = vec![0.0; p.len()];
    sd_grad_probs_raw(u.class(), p.as_slice(), t, &mut out);
    Ok(out)
}

/// Gradient of `sd_loss(u, softmax(logits))` with respect to the logits.
pub fn sd_loss_grad_logits(u: OneHotLabel, logits: &[f64], t: &TuningPair) -> Result<Vec<f64>> {
    check_dim(u.dim(), logits.len())?;
    let p = softmax(logits);
    let mut gp = vec![0.0; p.len()];
    sd_grad_probs_raw(u.class(), &p, t, &mut gp);
    let mut out = vec![0.0; p.len()];
    softmax_backward(&p, &gp, &mut out);
    Ok(out)
}

/// Conditional SD-risk `r(p*, p)`: the S-divergence between the true class
/// posterior `p*` and the model probabilities `p`. Non-negative, zero only
/// at `p = p*`.
pub fn conditional_sd_risk(p_star: &ProbVector, p: &ProbVector, t: &TuningPair) -> Result<f64> {
    check_dim(p_star.len(), p.len())?;
    Ok(conditional_sd_risk_raw(p_star.as_slice(), p.as_slice(), t))
}

pub(crate) fn conditional_sd_risk_raw(p_star: &[f64], p: &[f64], t: &TuningPair) -> f64 {
    let (beta, a, b) = (t.beta, t.a, t.b);
    let total: f64 = p
        .iter()
        .zip(p_star)
        .map(|(&pj, &sj)| {
            pj.powf(1.0 + beta) - (1.0 + beta) / b * pj.powf(b) * sj.powf(a)
                + a / b * sj.powf(1.0 + beta)
        })
        .sum();
    total / a
}

/// `sum_j loss(e_j, p)`, the total loss over all possible labels.
pub fn total_sd_loss(p: &ProbVector, t: &TuningPair) -> f64 {
    (0..p.len()).map(|j| sd_loss_raw(j, p.as_slice(), t)).sum()
}

/// Uniform lower and upper bounds on [`total_sd_loss`] over the simplex.
pub fn loss_bounds(t: &TuningPair, classes: usize) -> Result<(f64, f64)> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let j = classes as f64;
    let (beta, a, b) = (t.beta, t.a, t.b);
    let coef = (1.0 + beta) / (a * b);
    let spread = j.powf(1.0 - b);
    let lower = j.powf(1.0 - beta) / a - coef * spread.max(1.0) + j * j / b;
    let upper = j / a - coef * spread.min(1.0) + j * j / b;
    Ok((lower, upper))
}

/// Baseline losses used for comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    Cce,
    Mae,
    /// Generalized cross entropy with exponent `q` in `(0, 1]`.
    Gce(f64),
    /// Cross entropy with the largest `delta` fraction of each batch trimmed.
    Tcce(f64),
}

impl BaselineKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineKind::Gce(q) if !(q > 0.0 && q <= 1.0) => Err(Error::InvalidParameter(
                format!("gce q must lie in (0, 1], got {q}"),
            )),
            BaselineKind::Tcce(d) if !(0.0..1.0).contains(&d) => Err(Error::InvalidParameter(
                format!("tcce delta must lie in [0, 1), got {d}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Per-example losses plus their batch aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub per_example: Vec<f64>,
    pub aggregate: f64,
}

/// Evaluates a baseline loss over a batch of `(label, probabilities)` pairs.
pub fn baseline_loss(kind: BaselineKind, batch: &[(usize, &[f64])]) -> Result<BatchLoss> {
    kind.validate()?;
    let loss = LossKind::Baseline(kind);
    let mut per_example = Vec::with_capacity(batch.len());
    for &(y, p) in batch {
        if y >= p.len() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: p.len(),
            });
        }
        per_example.push(loss.example_loss(y, p));
    }
    let weights = loss.batch_weights(&per_example);
    let aggregate = per_example.iter().zip(&weights).map(|(l, w)| l * w).sum();
    Ok(BatchLoss {
        per_example,
        aggregate,
    })
}

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Sd(TuningPair),
    Baseline(BaselineKind),
}

impl LossKind {
    pub fn sd(beta: f64, lambda: f64) -> Result<Self> {
        Ok(LossKind::Sd(TuningPair::new(beta, lambda)?))
    }

    /// Short label used in CSV output, e.g. `sd`, `cce`, `gce`.
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Sd(_) => "sd",
            LossKind::Baseline(BaselineKind::Cce) => "cce",
            LossKind::Baseline(BaselineKind::Mae) => "mae",
            LossKind::Baseline(BaselineKind::Gce(_)) => "gce",
            LossKind::Baseline(BaselineKind::Tcce(_)) => "tcce",
        }
    }

    /// The two numeric parameters reported alongside the loss name:
    /// `(beta, lambda)` for sd, `(q, 0)` for gce, `(delta, 0)` for tcce.
    pub fn params(&self) -> (f64, f64) {
        match *self {
            LossKind::Sd(t) => (t.beta(), t.lambda()),
            LossKind::Baseline(BaselineKind::Gce(q)) => (q, 0.0),
            LossKind::Baseline(BaselineKind::Tcce(d)) => (d, 0.0),
            LossKind::Baseline(_) => (0.0, 0.0),
        }
    }

    pub(crate) fn example_loss(&self, y: usize, p: &[f64]) -> f64 {
        match *self {
            LossKind::Sd(t) => sd_loss_raw(y, p, &t),
            LossKind::Baseline(BaselineKind::Cce) | LossKind::Baseline(BaselineKind::Tcce(_)) => {
                -clip_prob(p[y]).ln()
            }
            LossKind::Baseline(BaselineKind::Mae) => 2.0 * (1.0 - p[y]),
            LossKind::Baseline(BaselineKind::Gce(q)) => (1.0 - p[y].powf(q)) / q,
        }
    }

    pub(crate) fn example_grad_probs(&self, y: usize, p: &[f64], out: &mut [f64]) {
        if let LossKind::Sd(t) = self {
            sd_grad_probs_raw(y, p, t, out);
            return;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let py = clip_prob(p[y]);
        out[y] = match *self {
            LossKind::Baseline(BaselineKind::Cce) | LossKind::Baseline(BaselineKind::Tcce(_)) => {
                -1.0 / py
            }
            LossKind::Baseline(BaselineKind::Mae) => -2.0,
            LossKind::Baseline(BaselineKind::Gce(q)) => -py.powf(q - 1.0),
            LossKind::Sd(_) => unreachable!(),
        };
    }

    /// Weights that turn per-example losses into the batch aggregate. Plain
    /// averaging for every loss except tcce, which drops the
    /// `ceil(delta * n)` largest losses and averages the rest.
    pub(crate) fn batch_weights(&self, losses: &[f64]) -> Vec<f64> {
        let n = losses.len();
        if n == 0 {
            return Vec::new();
        }
        match *self {
            LossKind::Baseline(BaselineKind::Tcce(delta)) => {
                let drop = ((delta * n as f64).ceil() as usize).min(n - 1);
                let mut order: Vec<usize> = (0..n).collect();
                // Stable sort keeps tie-breaking deterministic.
                order.sort_by(|&i, &j| losses[j].total_cmp(&losses[i]));
                let keep = (n - drop) as f64;
                let mut w = vec![1.0 / keep; n];
                for &i in &order[..drop] {
                    w[i] = 0.0;
                }
                w
            }
            _ => vec![1.0 / n as f64; n],
        }
    }

    /// Batch loss and gradient with respect to the logits. `probs` rows are
    /// softmax outputs; the returned gradient already carries the batch
    /// averaging weights.
    pub fn batch_grad_logits(
        &self,
        labels: &[usize],
        probs: ArrayView2<f64>,
    ) -> (f64, Array2<f64>) {
        let (n, classes) = probs.dim();
        let mut losses = Vec::with_capacity(n);
        for (i, row) in probs.outer_iter().enumerate() {
            let p = row.as_slice().expect("contiguous probability rows");
            losses.push(self.example_loss(labels[i], p));
        }
        let weights = self.batch_weights(&losses);
        let mut grad = Array2::zeros((n, classes));
        let mut gp = vec![0.0; classes];
        for (i, (row, mut out)) in probs.outer_iter().zip(grad.outer_iter_mut()).enumerate() {
            if weights[i] == 0.0 {
                continue;
            }
            let p = row.as_slice().expect("contiguous probability rows");
            self.example_grad_probs(labels[i], p, &mut gp);
            let out = out.as_slice_mut().expect("contiguous gradient rows");
            softmax_backward(p, &gp, out);
            out.iter_mut().for_each(|g| *g *= weights[i]);
        }
        let total = losses.iter().zip(&weights).map(|(l, w)| l * w).sum();
        (total, grad)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Sd(t) => write!(f, "sd{t}"),
            LossKind::Baseline(BaselineKind::Gce(q)) => write!(f, "gce({q})"),
            LossKind::Baseline(BaselineKind::Tcce(d)) => write!(f, "tcce({d})"),
            other => f.write_str(other.name()),
        }
    }
}

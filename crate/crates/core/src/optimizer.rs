//! Adam and the mini-batch training loop.

use std::io::Write;
use std::path::Path;

use ndarray::Axis;
use rand::seq::SliceRandom;

use crate::data::{fmt_sig6, Dataset};
use crate::divergence::LossKind;
use crate::error::{Error, Result};
use crate::network::{
    accuracy, backward_batch, forward_batch, init_params, ArchitectureSpec, InitScheme,
    NetworkParams,
};
use crate::rng::seeded;

pub const DEFAULT_BATCH_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid Adam configuration {self:?}"
            )))
        }
    }
}

/// First and second raw moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// In-place update of `params` given the gradient at the current point.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grad.len()
                },
            });
        }
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }
}

/// Pure form of a single Adam update.
pub fn adam_step(
    state: &AdamState,
    cfg: &AdamConfig,
    params: &[f64],
    grad: &[f64],
) -> Result<(Vec<f64>, AdamState)> {
    let mut next = state.clone();
    let mut out = params.to_vec();
    next.step(cfg, &mut out, grad)?;
    Ok((out, next))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub loss: LossKind,
    pub init: InitScheme,
}

impl TrainConfig {
    pub fn new(loss: LossKind, epochs: usize, shuffle_seed: u64) -> Self {
        Self {
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            shuffle_seed,
            loss,
            init: InitScheme::GlorotNormal,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_init(mut self, init: InitScheme) -> Self {
        self.init = init;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if let LossKind::Baseline(b) = self.loss {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub trace: Vec<EpochMetrics>,
}

fn check_data(data: &Dataset, arch: &ArchitectureSpec) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim,
            got: data.dim(),
        });
    }
    if let Some(&label) = data.labels.iter().find(|&&l| l >= arch.output_classes) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: arch.output_classes,
        });
    }
    Ok(())
}

/// Visiting order of epoch `epoch` (0-based): a shuffle of `0..n` keyed by
/// `shuffle_seed + epoch`.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(shuffle_seed.wrapping_add(epoch as u64)));
    order
}

/// Trains from a fresh initialization keyed by `init_seed`. Each epoch
/// visits the examples in an order shuffled with seed
/// `shuffle_seed + epoch`; the last short batch is kept. When `eval` is
/// given its accuracy is recorded after every epoch.
pub fn train(
    data: &Dataset,
    arch: &ArchitectureSpec,
    init_seed: u64,
    cfg: &TrainConfig,
    adam: &AdamConfig,
    eval: Option<&Dataset>,
) -> Result<TrainOutcome> {
    let params = init_params(arch, cfg.init, init_seed);
    train_from(data, arch, params, cfg, adam, eval)
}

/// Like [`train`], starting from the given parameters.
pub fn train_from(
    data: &Dataset,
    arch: &ArchitectureSpec,
    mut params: NetworkParams,
    cfg: &TrainConfig,
    adam: &AdamConfig,
    eval: Option<&Dataset>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    adam.validate()?;
    arch.validate()?;
    check_data(data, arch)?;
    if let Some(e) = eval {
        check_data(e, arch)?;
    }
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), cfg.shuffle_seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = data.features.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let trace = forward_batch(&params, arch, x.view())?;
            let (loss, grad_z) = cfg.loss.batch_grad_logits(&y, trace.probs.view());
            let grads = backward_batch(&trace, &params, arch, grad_z.view())?;
            if grads.params.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in epoch {}",
                    epoch + 1
                )));
            }
            state.step(adam, params.as_flat_mut(), &grads.params)?;
            loss_sum += loss * batch.len() as f64;
        }
        let test_accuracy = match eval {
            Some(e) => Some(accuracy(&params, arch, e.features.view(), &e.labels)?),
            None => None,
        };
        trace.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / data.len() as f64,
            test_accuracy,
        });
    }
    Ok(TrainOutcome { params, trace })
}

/// CSV rows `epoch,train_loss,test_accuracy` (empty accuracy when absent).
pub fn write_metrics_csv(path: impl AsRef<Path>, trace: &[EpochMetrics]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,train_loss,test_accuracy")?;
    for m in trace {
        let acc = m.test_accuracy.map(fmt_sig6).unwrap_or_default();
        writeln!(out, "{},{},{}", m.epoch, fmt_sig6(m.train_loss), acc)?;
    }
    out.flush()?;
    Ok(())
}

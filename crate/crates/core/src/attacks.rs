//! White-box L-infinity attacks (FGSM and PGD) driven by input gradients.

use ndarray::{Array2, ArrayView2, Axis};

use crate::data::{Dataset, Provenance};
use crate::divergence::{softmax_backward, BaselineKind, LossKind};
use crate::error::{Error, Result};
use crate::network::{accuracy, backward_batch, forward_batch, ArchitectureSpec, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(Error::Parse(format!("unknown attack `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget.
    pub epsilon: f64,
    /// PGD step size.
    pub step_size: f64,
    /// PGD iterations.
    pub max_iters: usize,
    pub clip_min: f64,
    pub clip_max: f64,
    /// Loss whose input gradient drives the attack.
    pub loss: LossKind,
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            step_size: epsilon,
            max_iters: 1,
            clip_min: 0.0,
            clip_max: 1.0,
            loss: LossKind::Baseline(BaselineKind::Cce),
        }
    }

    pub fn pgd(epsilon: f64, step_size: f64, max_iters: usize) -> Self {
        Self {
            kind: AttackKind::Pgd,
            step_size,
            max_iters,
            ..Self::fgsm(epsilon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon >= 0.0
            && self.epsilon.is_finite()
            && (self.kind == AttackKind::Fgsm || self.step_size > 0.0)
            && self.max_iters >= 1
            && self.clip_min < self.clip_max;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid attack configuration {self:?}"
            )))
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            AttackKind::Fgsm => format!("fgsm(eps={})", self.epsilon),
            AttackKind::Pgd => format!(
                "pgd(eps={},step={},iters={})",
                self.epsilon, self.step_size, self.max_iters
            ),
        }
    }
}

/// Sign with `sign(0) = 0`.
#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects `v` onto `[x0 - eps, x0 + eps] ∩ [lo, hi]` so that
/// `|result - x0| <= eps` holds exactly in floating point.
#[inline]
fn project(x0: f64, v: f64, eps: f64, lo: f64, hi: f64) -> f64 {
    let mut p = v.clamp(x0 - eps, x0 + eps);
    while p - x0 > eps {
        p = p.next_down();
    }
    while x0 - p > eps {
        p = p.next_up();
    }
    p.clamp(lo, hi)
}

/// Gradient of the attack loss with respect to each input row.
pub fn input_gradients(
    params: &NetworkParams,
    arch: &ArchitectureSpec,
    x: ArrayView2<f64>,
    labels: &[usize],
    loss: LossKind,
) -> Result<Array2<f64>> {
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    let trace = forward_batch(params, arch, x)?;
    let classes = arch.output_classes;
    let mut grad_z = Array2::zeros((x.nrows(), classes));
    let mut gp = vec![0.0; classes];
    for (i, mut out) in grad_z.outer_iter_mut().enumerate() {
        if labels[i] >= classes {
            return Err(Error::LabelOutOfRange {
                label: labels[i],
                classes,
            });
        }
        let p = trace.probs_row(i);
        loss.example_grad_probs(labels[i], p, &mut gp);
        softmax_backward(p, &gp, out.as_slice_mut().expect("standard layout"));
    }
    Ok(backward_batch(&trace, params, arch, grad_z.view())?.input)
}

fn check_box(x: ArrayView2<f64>, cfg: &AttackConfig) -> Result<()> {
    if x.iter().any(|v| !(cfg.clip_min..=cfg.clip_max).contains(v)) {
        return Err(Error::InvalidParameter(
            "attack input outside the clip range".into(),
        ));
    }
    Ok(())
}

/// Attacks every row of `x` (batched). PGD starts from the clean input.
pub fn attack_batch(
    params: &NetworkParams,
    arch: &ArchitectureSpec,
    x: ArrayView2<f64>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    check_box(x, cfg)?;
    let (step, iters) = match cfg.kind {
        AttackKind::Fgsm => (cfg.epsilon, 1),
        AttackKind::Pgd => (cfg.step_size, cfg.max_iters),
    };
    let mut adv = x.to_owned();
    if cfg.epsilon == 0.0 {
        return Ok(adv);
    }
    for _ in 0..iters {
        let g = input_gradients(params, arch, adv.view(), labels, cfg.loss)?;
        ndarray::Zip::from(&mut adv)
            .and(&x)
            .and(&g)
            .for_each(|a, &x0, &gi| {
                *a = project(
                    x0,
                    *a + step * sign(gi),
                    cfg.epsilon,
                    cfg.clip_min,
                    cfg.clip_max,
                );
            });
    }
    Ok(adv)
}

fn single(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("row vector")
}

/// `clip(x + eps * sign(grad_x loss))`.
pub fn fgsm(
    params: &NetworkParams,
    arch: &ArchitectureSpec,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    let cfg = AttackConfig {
        kind: AttackKind::Fgsm,
        ..*cfg
    };
    Ok(attack_batch(params, arch, single(x), &[label], &cfg)?
        .into_raw_vec_and_offset()
        .0)
}

/// Iterated signed steps, each projected onto the eps-ball around `x` and
/// the clip box.
pub fn pgd(
    params: &NetworkParams,
    arch: &ArchitectureSpec,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    let cfg = AttackConfig {
        kind: AttackKind::Pgd,
        ..*cfg
    };
    Ok(attack_batch(params, arch, single(x), &[label], &cfg)?
        .into_raw_vec_and_offset()
        .0)
}

const CHUNK: usize = 512;

/// Replaces every example by its attacked version under a surrogate model.
/// Labels are kept.
pub fn adversarial_trainset(
    surrogate: &NetworkParams,
    arch: &ArchitectureSpec,
    data: &Dataset,
    cfg: &AttackConfig,
) -> Result<Dataset> {
    let mut features = Array2::zeros(data.features.raw_dim());
    for (c, (rows, mut out)) in data
        .features
        .axis_chunks_iter(Axis(0), CHUNK)
        .zip(features.axis_chunks_iter_mut(Axis(0), CHUNK))
        .enumerate()
    {
        let labels = &data.labels[c * CHUNK..c * CHUNK + rows.nrows()];
        out.assign(&attack_batch(surrogate, arch, rows, labels, cfg)?);
    }
    let provenance = if cfg.epsilon > 0.0 {
        Provenance::Attacked
    } else {
        data.provenance
    };
    Dataset::new(features, data.labels.clone(), data.classes, provenance)
}

/// Accuracy of `params` on the attacked version of `data`, where the attack
/// is computed against `params` itself.
pub fn adversarial_accuracy(
    params: &NetworkParams,
    arch: &ArchitectureSpec,
    data: &Dataset,
    cfg: &AttackConfig,
) -> Result<f64> {
    let adv = adversarial_trainset(params, arch, data, cfg)?;
    accuracy(params, arch, adv.features.view(), &adv.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, ExampleModel, InitScheme};
    use proptest::prelude::*;

    #[test]
    fn zero_budget_is_identity() {
        let arch = ArchitectureSpec::preset("toy").unwrap();
        let params = init_params(&arch, InitScheme::GlorotNormal, 0);
        let x = [0.3, 0.8];
        assert_eq!(
            fgsm(&params, &arch, &x, 1, &AttackConfig::fgsm(0.0)).unwrap(),
            x.to_vec()
        );
        assert_eq!(
            pgd(&params, &arch, &x, 1, &AttackConfig::pgd(0.0, 0.01, 10)).unwrap(),
            x.to_vec()
        );
    }

    #[test]
    fn fgsm_moves_toward_boundary_on_linear_logit() {
        // z1 = t2 x with t2 > 0 and true class 0 (the modelled class): the
        // CCE input gradient is -(1 - p1) t2 < 0, so FGSM decreases x
        let m1 = ExampleModel::M1;
        let params = m1.theta_to_params(&[0.0, 2.0]).unwrap();
        let arch = m1.architecture();
        let cfg = AttackConfig {
            clip_min: -10.0,
            clip_max: 10.0,
            ..AttackConfig::fgsm(0.25)
        };
        let out = fgsm(&params, &arch, &[0.5], 0, &cfg).unwrap();
        assert_eq!(out, vec![0.25]);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        // an all-zero network has zero input gradient: nothing moves
        let arch = ArchitectureSpec::preset("toy").unwrap();
        let params = NetworkParams::zeros(&arch);
        let x = [0.4, 0.6];
        assert_eq!(
            fgsm(&params, &arch, &x, 0, &AttackConfig::fgsm(0.3)).unwrap(),
            x.to_vec()
        );
    }

    #[test]
    fn rejects_out_of_box_inputs() {
        let arch = ArchitectureSpec::preset("toy").unwrap();
        let params = NetworkParams::zeros(&arch);
        assert!(fgsm(&params, &arch, &[1.5, 0.0], 0, &AttackConfig::fgsm(0.1)).is_err());
        assert!(AttackConfig::pgd(0.1, 0.0, 1).validate().is_err());
    }

    proptest! {
        #[test]
        fn projection_is_exact(x0 in 0.0f64..1.0, v in -2.0f64..2.0, eps in 0.0f64..0.5) {
            let p = project(x0, v, eps, 0.0, 1.0);
            prop_assert!((p - x0).abs() <= eps);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}

//! Evaluators for the theoretical guarantees: the excess-risk bound under
//! uniform label noise, influence functions of the minimum S-divergence
//! functional for the single-feature example models, and a grid check of
//! classification calibration.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::data::example1_posterior;
use crate::divergence::{
    argmax, clip_prob, conditional_sd_risk_raw, softmax_backward, ProbVector, TuningPair,
};
use crate::error::{Error, Result};
use crate::network::{backward, forward, ExampleModel};
use crate::rng::seeded;

/// Upper bound on the excess clean risk of the noise-trained minimizer
/// under uniform label noise of level `eta` with `classes` classes.
pub fn excess_risk_bound(t: &TuningPair, eta: f64, classes: usize) -> Result<f64> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let j = classes as f64;
    if !(0.0..(j - 1.0) / j).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "noise level {eta} outside [0, {})",
            (j - 1.0) / j
        )));
    }
    let (beta, a, b) = (t.beta(), t.a(), t.b());
    let noise = eta / (j - 1.0 - j * eta);
    let tuning = (j - j.powf(1.0 - beta) + (1.0 + beta) / b * (1.0 - j.powf(1.0 - b)).abs()) / a;
    Ok(noise * tuning)
}

/// The excess-risk bound over a `(beta, lambda)` grid. Cells outside the
/// admissible set hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundGrid {
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub eta: f64,
    pub classes: usize,
    /// `values[i][k]` is the bound at `(betas[i], lambdas[k])`.
    pub values: Vec<Vec<Option<f64>>>,
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub fn bound_grid(
    eta: f64,
    classes: usize,
    beta_range: (f64, f64),
    lambda_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<BoundGrid> {
    if resolution.0 == 0
        || resolution.1 == 0
        || beta_range.0 > beta_range.1
        || lambda_range.0 > lambda_range.1
    {
        return Err(Error::InvalidParameter(
            "empty or reversed grid range".into(),
        ));
    }
    let betas = linspace(beta_range.0, beta_range.1, resolution.0);
    let lambdas = linspace(lambda_range.0, lambda_range.1, resolution.1);
    let mut values = Vec::with_capacity(betas.len());
    for &beta in &betas {
        let mut row = Vec::with_capacity(lambdas.len());
        for &lambda in &lambdas {
            row.push(match TuningPair::new(beta, lambda) {
                Ok(t) => Some(excess_risk_bound(&t, eta, classes)?),
                Err(_) => None,
            });
        }
        values.push(row);
    }
    Ok(BoundGrid {
        betas,
        lambdas,
        eta,
        classes,
        values,
    })
}

impl BoundGrid {
    pub fn get(&self, beta_idx: usize, lambda_idx: usize) -> Option<f64> {
        self.values[beta_idx][lambda_idx]
    }

    /// Long-format CSV: `beta,lambda,value`, with `inadmissible` in place of
    /// a number outside the admissible set. Full precision.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "beta,lambda,value")?;
        for (i, &beta) in self.betas.iter().enumerate() {
            for (k, &lambda) in self.lambdas.iter().enumerate() {
                match self.values[i][k] {
                    Some(v) => writeln!(out, "{beta},{lambda},{v}")?,
                    None => writeln!(out, "{beta},{lambda},inadmissible")?,
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Value, parameter gradient and parameter Hessian of the modelled logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDerivatives {
    pub z: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<Vec<f64>>,
}

/// Closed-form derivatives of the example models' first logit in model
/// parameter order `t1, t2, ...`.
pub fn logit_derivatives(model: ExampleModel, theta: &[f64], x: f64) -> Result<LogitDerivatives> {
    if theta.len() != model.param_count() {
        return Err(Error::DimensionMismatch {
            expected: model.param_count(),
            got: theta.len(),
        });
    }
    let d = theta.len();
    let mut hess = vec![vec![0.0; d]; d];
    if model == ExampleModel::M1 {
        return Ok(LogitDerivatives {
            z: theta[0] + theta[1] * x,
            grad: vec![1.0, x],
            hess,
        });
    }
    // (value, first, second derivative) of the hidden activation
    let phi = |a: f64| -> (f64, f64, f64) {
        match model {
            ExampleModel::M2 => (a.max(0.0), if a > 0.0 { 1.0 } else { 0.0 }, 0.0),
            _ => {
                let t = a.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1)
            }
        }
    };
    let a1 = theta[0] + theta[1] * x;
    let a2 = theta[2] + theta[3] * x;
    let (f1, d1, s1) = phi(a1);
    let (f2, d2, s2) = phi(a2);
    let (w1, w2) = (theta[5], theta[6]);
    let z = theta[4] + w1 * f1 + w2 * f2;
    let grad = vec![w1 * d1, w1 * d1 * x, w2 * d2, w2 * d2 * x, 1.0, f1, f2];
    let mut set = |i: usize, k: usize, v: f64| {
        hess[i][k] = v;
        hess[k][i] = v;
    };
    set(0, 0, w1 * s1);
    set(0, 1, w1 * s1 * x);
    set(1, 1, w1 * s1 * x * x);
    set(0, 5, d1);
    set(1, 5, d1 * x);
    set(2, 2, w2 * s2);
    set(2, 3, w2 * s2 * x);
    set(3, 3, w2 * s2 * x * x);
    set(2, 6, d2);
    set(3, 6, d2 * x);
    Ok(LogitDerivatives { z, grad, hess })
}

/// Down-weighting factors `u_j = p_j^beta - p*_j^A p_j^(B-1)`, evaluated as
/// `p_j^(B-1) (p_j^A - p*_j^A)` so they vanish exactly at `p = p*`. Both
/// vectors get the same probability clamp.
fn weights_u(p: &[f64], p_star: &[f64], t: &TuningPair) -> Vec<f64> {
    p.iter()
        .zip(p_star)
        .map(|(&pj, &sj)| {
            let (q, s) = (clip_prob(pj), clip_prob(sj));
            q.powf(t.b() - 1.0) * (q.powf(t.a()) - s.powf(t.a()))
        })
        .collect()
}

/// Derivatives `u'_j = beta p_j^(beta-1) - p*_j^A (B-1) p_j^(B-2)`.
fn weights_u_prime(p: &[f64], p_star: &[f64], t: &TuningPair) -> Vec<f64> {
    p.iter()
        .zip(p_star)
        .map(|(&pj, &sj)| {
            let (q, s) = (clip_prob(pj), clip_prob(sj));
            t.beta() * q.powf(t.beta() - 1.0) - s.powf(t.a()) * (t.b() - 1.0) * q.powf(t.b() - 2.0)
        })
        .collect()
}

/// `psi(x; theta) = sum_j u_j(x; theta) grad_theta p_j(x; theta)`, assembled
/// from a network backward pass. Returned in model parameter order.
pub fn psi(
    model: ExampleModel,
    theta: &[f64],
    x: f64,
    t: &TuningPair,
    p_star: &dyn Fn(f64) -> [f64; 2],
) -> Result<Vec<f64>> {
    let arch = model.architecture();
    let params = model.theta_to_params(theta)?;
    let trace = forward(&params, &arch, &[x])?;
    let p = trace.probs_row(0).to_vec();
    let u = weights_u(&p, &p_star(x), t);
    let mut grad_logits = vec![0.0; p.len()];
    softmax_backward(&p, &u, &mut grad_logits);
    let (grad, _) = backward(&trace, &params, &arch, &grad_logits)?;
    Ok(model.flat_to_theta(&grad))
}

/// Offset applied to feature-sample points lying within this distance of
/// a ReLU kink.
pub const KINK_OFFSET: f64 = 1e-6;

fn nudge_off_kinks(model: ExampleModel, theta: &[f64], x: f64) -> f64 {
    if model != ExampleModel::M2 {
        return x;
    }
    let near = |x: f64| {
        (theta[0] + theta[1] * x).abs() < KINK_OFFSET
            || (theta[2] + theta[3] * x).abs() < KINK_OFFSET
    };
    if near(x) {
        x + KINK_OFFSET
    } else {
        x
    }
}

/// `Psi(theta)`: the feature-sample average of `grad_theta psi`, computed
/// from closed-form first and second derivatives of the model.
pub fn big_psi(
    model: ExampleModel,
    theta: &[f64],
    t: &TuningPair,
    sample: &[f64],
    p_star: &dyn Fn(f64) -> [f64; 2],
) -> Result<DMatrix<f64>> {
    if sample.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = model.param_count();
    let mut total = DMatrix::zeros(d, d);
    for &x0 in sample {
        let x = nudge_off_kinks(model, theta, x0);
        let ld = logit_derivatives(model, theta, x)?;
        let p1 = logistic(ld.z);
        let p = [p1, 1.0 - p1];
        let ps = p_star(x);
        let u = weights_u(&p, &ps, t);
        let up = weights_u_prime(&p, &ps, t);
        let s = p1 * (1.0 - p1);
        let g = DVector::from_iterator(d, ld.grad.iter().map(|v| s * v));
        let grad_z = DVector::from_vec(ld.grad.clone());
        let hess_z = DMatrix::from_fn(d, d, |i, k| ld.hess[i][k]);
        // p2 = 1 - p1, so grad p2 = -grad p1 and hess p2 = -hess p1
        let hess_p1 = &grad_z * grad_z.transpose() * (s * (1.0 - 2.0 * p1)) + hess_z * s;
        total += &g * g.transpose() * (up[0] + up[1]) + hess_p1 * (u[0] - u[1]);
    }
    Ok(total / sample.len() as f64)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Relative singular-value cutoff of the pseudoinverse.
pub const PINV_RCOND: f64 = 1e-10;

/// Moore–Penrose pseudoinverse via SVD; singular values below
/// `max_sv * rcond` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let (u, v_t) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numeric("SVD factors missing".into())),
    };
    let max_sv = svd.singular_values.max();
    let cutoff = max_sv * rcond;
    let inv = svd
        .singular_values
        .map(|s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 });
    Ok(v_t.transpose() * DMatrix::from_diagonal(&inv) * u.transpose())
}

/// The true class posterior used by an influence-function request.
pub enum Posterior {
    /// Posterior of the single-feature synthetic problem.
    Example1,
    /// The model's own output at `theta_g` (correctly specified case).
    Model,
    Custom(Box<dyn Fn(f64) -> [f64; 2] + Send + Sync>),
}

impl std::fmt::Debug for Posterior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Posterior::Example1 => f.write_str("Example1"),
            Posterior::Model => f.write_str("Model"),
            Posterior::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Default number of standard-normal draws standing in for the feature
/// distribution.
pub const DEFAULT_FEATURE_SAMPLE: usize = 100;

pub fn standard_normal_sample(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[derive(Debug)]
pub struct IfRequest {
    pub model: ExampleModel,
    pub theta_g: Vec<f64>,
    pub tuning: TuningPair,
    pub grid: Vec<f64>,
    pub sample: Vec<f64>,
    pub posterior: Posterior,
}

impl IfRequest {
    /// All-ones `theta_g`, a 100-point standard-normal feature sample drawn
    /// from `seed` and the synthetic posterior.
    pub fn example1(model: ExampleModel, tuning: TuningPair, grid: Vec<f64>, seed: u64) -> Self {
        Self {
            model,
            theta_g: vec![1.0; model.param_count()],
            tuning,
            grid,
            sample: standard_normal_sample(DEFAULT_FEATURE_SAMPLE, seed),
            posterior: Posterior::Example1,
        }
    }
}

/// Influence-function values: `values[i]` is the IF vector at `grid[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IfCurves {
    pub model: ExampleModel,
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl IfCurves {
    /// Long-format CSV `x_t,component,value`; components are numbered from 1
    /// in model parameter order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x_t,component,value")?;
        for (x, v) in self.grid.iter().zip(&self.values) {
            for (k, val) in v.iter().enumerate() {
                writeln!(out, "{x},{},{val}", k + 1)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

/// `IF(x_t) = -Psi^+(theta_g) psi(x_t; theta_g)` on every grid point, taking
/// the minimum-norm solution (zero kernel component).
pub fn influence_function(req: &IfRequest) -> Result<IfCurves> {
    let model = req.model;
    let theta = &req.theta_g;
    if theta.len() != model.param_count() {
        return Err(Error::DimensionMismatch {
            expected: model.param_count(),
            got: theta.len(),
        });
    }
    let params = model.theta_to_params(theta)?;
    let arch = model.architecture();
    let model_posterior = |x: f64| -> [f64; 2] {
        let tr = forward(&params, &arch, &[x]).expect("validated model");
        [tr.probs[[0, 0]], tr.probs[[0, 1]]]
    };
    let p_star: &dyn Fn(f64) -> [f64; 2] = match &req.posterior {
        Posterior::Example1 => &example1_posterior,
        Posterior::Model => &model_posterior,
        Posterior::Custom(f) => f.as_ref(),
    };
    let psi_mat = big_psi(model, theta, &req.tuning, &req.sample, p_star)?;
    let pinv = pseudo_inverse(&psi_mat, PINV_RCOND)?;
    let mut values = Vec::with_capacity(req.grid.len());
    for &x in &req.grid {
        let v = DVector::from_vec(psi(model, theta, x, &req.tuning, p_star)?);
        let inf = -(&pinv * v);
        // + 0.0 folds negative zeros so exact-zero curves print as `0`
        values.push(inf.iter().map(|c| c + 0.0).collect());
    }
    let curves = IfCurves {
        model,
        grid: req.grid.clone(),
        values,
    };
    if !curves.is_finite() {
        return Err(Error::Numeric("influence function is not finite".into()));
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Grid point minimizing the conditional risk.
    pub argmin: Vec<f64>,
    pub risk_at_argmin: f64,
    /// Smallest risk among all other grid points minus the minimum.
    pub gap: f64,
    pub argmin_class: usize,
    pub bayes_class: usize,
}

impl Calibration {
    pub fn is_calibrated(&self) -> bool {
        self.argmin_class == self.bayes_class
    }
}

fn for_each_composition(total: usize, parts: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(remaining: usize, parts: usize, prefix: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if parts == 1 {
            prefix.push(remaining);
            f(prefix);
            prefix.pop();
            return;
        }
        for k in 0..=remaining {
            prefix.push(k);
            rec(remaining - k, parts - 1, prefix, f);
            prefix.pop();
        }
    }
    rec(total, parts, &mut Vec::with_capacity(parts), f);
}

/// Minimizes `r(p*, .)` over the simplex grid with spacing `1 / resolution`.
pub fn calibration_check(
    p_star: &ProbVector,
    t: &TuningPair,
    resolution: usize,
) -> Result<Calibration> {
    let classes = p_star.len();
    if !(2..=4).contains(&classes) {
        return Err(Error::InvalidParameter(format!(
            "grid check supports 2 to 4 classes, got {classes}"
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidParameter(
            "resolution must be positive".into(),
        ));
    }
    let n = resolution as f64;
    let mut best = (f64::INFINITY, Vec::new());
    let mut second = f64::INFINITY;
    let mut point = vec![0.0; classes];
    for_each_composition(resolution, classes, &mut |counts| {
        for (p, &c) in point.iter_mut().zip(counts) {
            *p = c as f64 / n;
        }
        let r = conditional_sd_risk_raw(p_star.as_slice(), &point, t);
        if r < best.0 {
            second = best.0;
            best = (r, point.clone());
        } else if r < second {
            second = r;
        }
    });
    let (risk_at_argmin, argmin) = best;
    Ok(Calibration {
        argmin_class: argmax(&argmin),
        bayes_class: p_star.argmax(),
        gap: second - risk_at_argmin,
        risk_at_argmin,
        argmin,
    })
}

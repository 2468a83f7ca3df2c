//! End-to-end acceptance suite. Every test prints one `PASS`/`FAIL` line
//! to stderr (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use sdnet::attacks::{adversarial_accuracy, attack_batch, fgsm, pgd};
use sdnet::contamination::corrupt_labels;
use sdnet::data::{example1_posterior, read_idx, synthetic_blobs, BlobSpec};
use sdnet::divergence::{
    conditional_sd_risk, loss_bounds, sd_loss_grad_logits, sd_loss_grad_probs, sd_loss_raw,
    softmax, total_sd_loss,
};
use sdnet::network::{accuracy, backward, forward, init_params};
use sdnet::optimizer::train;
use sdnet::rng::{seeded, Rng64};
use sdnet::theory::{
    big_psi, calibration_check, excess_risk_bound, influence_function, linspace, psi,
    standard_normal_sample, IfRequest, Posterior,
};
use sdnet::{
    Activation, AdamConfig, ArchitectureSpec, AttackConfig, BaselineKind, Dataset, ExampleModel,
    InitScheme, LossKind, NetworkParams, NoiseConfig, OneHotLabel, ProbVector, TrainConfig,
    TuningPair,
};

fn report(id: u32, what: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "{verdict} criterion {id} ({what}): {detail}"
    );
}

// ---- shared helpers ----

fn random_tuning(rng: &mut Rng64) -> TuningPair {
    if rng.random_bool(0.1) {
        return TuningPair::new(1.0, rng.random_range(-3.0..3.0)).unwrap();
    }
    let beta: f64 = rng.random_range(0.0..0.999);
    // keep A and B at least 0.05 inside the admissible set
    let lo = -0.95 / (1.0 - beta);
    let hi = (beta - 0.05) / (1.0 - beta);
    TuningPair::new(beta, rng.random_range(lo..hi)).unwrap()
}

fn random_simplex(rng: &mut Rng64, dim: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim)
        .map(|_| -rng.random_range(1e-12f64..1.0).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter()
        .map(|r| floor + (1.0 - dim as f64 * floor) * r / total)
        .collect()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .chain(analytic)
        .fold(1e-8f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

fn central(f: impl Fn(&[f64]) -> f64, at: &[f64], rel_step: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..at.len())
        .map(|i| {
            let h = rel_step * at[i].abs().max(1.0);
            x[i] = at[i] + h;
            let up = f(&x);
            x[i] = at[i] - h;
            let down = f(&x);
            x[i] = at[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Twenty admissible pairs: beta in {0.1, ..., 0.9} (step 0.2) crossed with
/// four points strictly inside the admissible lambda interval.
fn tuning_grid() -> Vec<TuningPair> {
    let mut out = Vec::new();
    for beta in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let (lo, hi) = (-1.0 / (1.0 - beta), beta / (1.0 - beta));
        for frac in [0.1, 0.4, 0.6, 0.9] {
            out.push(TuningPair::new(beta, lo + frac * (hi - lo)).unwrap());
        }
    }
    out
}

// ---- 1. gradients ----

const GRAD_CASES: usize = 1000;
const GRAD_TOL: f64 = 1e-5;

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    let mut rng = seeded(11);
    for _ in 0..GRAD_CASES {
        let t = random_tuning(&mut rng);
        let dim = rng.random_range(2..10);
        let class = rng.random_range(0..dim);
        let p = random_simplex(&mut rng, dim, 0.01);
        let g = sd_loss_grad_probs(
            OneHotLabel::new(class, dim).unwrap(),
            &ProbVector::new(p.clone()).unwrap(),
            &t,
        )
        .unwrap();
        let fd = central(|q| sd_loss_raw(class, q, &t), &p, 1e-7);
        worst[0] = worst[0].max(rel_err(&g, &fd));

        let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = sd_loss_grad_logits(OneHotLabel::new(class, dim).unwrap(), &z, &t).unwrap();
        let fd = central(|zz| sd_loss_raw(class, &softmax(zz), &t), &z, 1e-6);
        worst[1] = worst[1].max(rel_err(&g, &fd));
    }
    let shallow = ArchitectureSpec::new(4, vec![(8, Activation::Tanh)], 3).unwrap();
    let deep =
        ArchitectureSpec::new(3, vec![(5, Activation::Tanh), (4, Activation::Relu)], 4).unwrap();
    let loss_at = |params: &NetworkParams,
                   arch: &ArchitectureSpec,
                   x: &[f64],
                   class: usize,
                   t: &TuningPair| {
        sd_loss_raw(class, forward(params, arch, x).unwrap().probs_row(0), t)
    };
    for case in 0..GRAD_CASES {
        let arch = if case % 2 == 0 { &shallow } else { &deep };
        let t = random_tuning(&mut rng);
        let params = init_params(arch, InitScheme::GlorotNormal, case as u64);
        let x: Vec<f64> = (0..arch.input_dim)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let class = rng.random_range(0..arch.output_classes);
        let tr = forward(&params, arch, &x).unwrap();
        let label = OneHotLabel::new(class, arch.output_classes).unwrap();
        let gz = sd_loss_grad_logits(label, tr.logits.row(0).as_slice().unwrap(), &t).unwrap();
        let (gp, gx) = backward(&tr, &params, arch, &gz).unwrap();
        let fd_p = central(
            |flat| {
                loss_at(
                    &NetworkParams::from_flat(arch, flat.to_vec()).unwrap(),
                    arch,
                    &x,
                    class,
                    &t,
                )
            },
            params.as_flat(),
            1e-6,
        );
        worst[2] = worst[2].max(rel_err(&gp, &fd_p));
        let fd_x = central(|xx| loss_at(&params, arch, xx, class, &t), &x, 1e-6);
        worst[3] = worst[3].max(rel_err(&gx, &fd_x));
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|&e| e < GRAD_TOL) && elapsed < Duration::from_secs(30);
    report(
        1,
        "gradient correctness",
        pass,
        &format!(
            "{GRAD_CASES} cases each; max rel err probs {:.1e}, logits {:.1e}, params {:.1e}, inputs {:.1e}; {:.1}s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---- 2. divergence properties ----

#[test]
fn criterion_2_divergence_is_a_proper_risk() {
    let grid = tuning_grid();
    let pairs = 10_000;
    let mut rng = seeded(22);
    let (mut max_self, mut min_other) = (0.0f64, f64::INFINITY);
    for i in 0..pairs {
        let t = grid[i % grid.len()];
        let dim = rng.random_range(2..11);
        let p_star = ProbVector::new(random_simplex(&mut rng, dim, 1e-3)).unwrap();
        let p = ProbVector::new(random_simplex(&mut rng, dim, 1e-3)).unwrap();
        max_self = max_self.max(conditional_sd_risk(&p_star, &p_star, &t).unwrap().abs());
        if p != p_star {
            min_other = min_other.min(conditional_sd_risk(&p_star, &p, &t).unwrap());
        }
    }
    let mut worst_cal = 0.0f64;
    let mut miscalibrated = 0;
    for t in &grid {
        for classes in [2, 3] {
            let p_star = ProbVector::new(random_simplex(&mut rng, classes, 0.02)).unwrap();
            let c = calibration_check(&p_star, t, 100).unwrap();
            let dist = c
                .argmin
                .iter()
                .zip(p_star.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_cal = worst_cal.max(dist);
            if !c.is_calibrated()
                && (p_star.as_slice()[c.argmin_class] - p_star.as_slice()[c.bayes_class]).abs()
                    > 1e-9
            {
                miscalibrated += 1;
            }
        }
    }
    let pass =
        max_self <= 1e-12 && min_other > 0.0 && worst_cal <= 0.01 + 1e-12 && miscalibrated == 0;
    report(
        2,
        "divergence properties",
        pass,
        &format!(
            "{pairs} pairs over {} tunings; max |r(p,p)| {max_self:.1e}, min r(p*,p) {min_other:.2e}; calibration max L-inf {worst_cal:.4}",
            grid.len()
        ),
    );
    assert!(pass);
}

// ---- 3. bounds on the total loss ----

#[test]
fn criterion_3_total_loss_bounds() {
    let mut cells = tuning_grid();
    cells.extend([
        TuningPair::new(1.0, 0.0).unwrap(),
        TuningPair::new(1.0, -2.0).unwrap(),
        TuningPair::new(0.0, -0.5).unwrap(),
    ]);
    let mut rng = seeded(33);
    let mut violations = 0;
    let mut checked = 0;
    for t in &cells {
        for classes in [2, 10] {
            let (lo, hi) = loss_bounds(t, classes).unwrap();
            for _ in 0..10_000 {
                let p = ProbVector::new(random_simplex(&mut rng, classes, 0.0)).unwrap();
                let s = total_sd_loss(&p, t);
                checked += 1;
                if !(lo - 1e-9 <= s && s <= hi + 1e-9) {
                    violations += 1;
                }
            }
        }
    }
    let l2 = TuningPair::new(1.0, 0.0).unwrap();
    let (lo, hi) = loss_bounds(&l2, 2).unwrap();
    let centre = total_sd_loss(&ProbVector::new(vec![0.5, 0.5]).unwrap(), &l2);
    let vertex = total_sd_loss(&ProbVector::new(vec![1.0, 0.0]).unwrap(), &l2);
    let extremes = lo == 3.0 && hi == 4.0 && centre == 3.0 && vertex == 4.0;
    let pass = violations == 0 && extremes;
    report(
        3,
        "total-loss bounds",
        pass,
        &format!(
            "{checked} draws over {} cells, {violations} outside; J=2 beta=1: bounds [{lo}, {hi}], at centre {centre}, at vertex {vertex}",
            cells.len() * 2
        ),
    );
    assert!(pass);
}

// ---- 4. excess-risk bound ----

#[test]
fn criterion_4_excess_risk_bound_shape() {
    let classes = 10;
    let a1 = excess_risk_bound(&TuningPair::new(1.0, 0.0).unwrap(), 0.2, classes).unwrap();
    let a2 = excess_risk_bound(&TuningPair::new(0.0, -0.5).unwrap(), 0.2, classes).unwrap();
    let anchors = (a1 - 0.2571428571).abs() < 1e-9 && (a2 - 0.24711744687638626).abs() < 1e-9;

    let mut zero_ok = true;
    for t in tuning_grid() {
        zero_ok &= excess_risk_bound(&t, 0.0, classes).unwrap() == 0.0;
    }

    let betas = linspace(0.0, 1.0, 50);
    let lambdas = linspace(-1.0, 0.0, 21);
    let mut violations = Vec::new();
    let mut compared = 0;
    for eta in [0.2, 0.4, 0.6] {
        for &lambda in &lambdas {
            let mut prev: Option<(f64, f64)> = None;
            for &beta in &betas {
                let Ok(t) = TuningPair::new(beta, lambda) else {
                    continue;
                };
                let m = excess_risk_bound(&t, eta, classes).unwrap();
                if let Some((pb, pm)) = prev {
                    compared += 1;
                    if m > pm * (1.0 + 1e-12) {
                        violations.push((eta, lambda, pb, beta, pm, m));
                    }
                }
                prev = Some((beta, m));
            }
        }
    }
    let mut lambdas_hit: Vec<f64> = violations.iter().map(|v| v.1).collect();
    lambdas_hit.sort_by(f64::total_cmp);
    lambdas_hit.dedup();
    let bad_lambdas: Vec<String> = lambdas_hit.iter().map(|l| format!("{l:.2}")).collect();
    let example = violations
        .first()
        .map(|(eta, l, b0, b1, m0, m1)| {
            format!("; e.g. eta={eta} lambda={l:.2}: M({b0:.4})={m0:.6} < M({b1:.4})={m1:.6}")
        })
        .unwrap_or_default();
    let pass = anchors && zero_ok && violations.is_empty();
    report(
        4,
        "excess-risk bound",
        pass,
        &format!(
            "anchors {a1:.10} / {a2:.10} {}; M(eta=0)=0 {}; monotone in beta: {} of {compared} steps increase (lambda in [{}]){example}",
            if anchors { "ok" } else { "off" },
            if zero_ok { "ok" } else { "off" },
            violations.len(),
            bad_lambdas.join(", ")
        ),
    );
    assert!(pass);
}

// ---- 5. influence function ----

#[test]
fn criterion_5_influence_function() {
    let start = Instant::now();
    let pairs = [
        TuningPair::new(0.5, -0.5).unwrap(),
        TuningPair::new(0.1, -0.8).unwrap(),
    ];
    let models = [ExampleModel::M1, ExampleModel::M2, ExampleModel::M3];
    let grid = linspace(-10.0, 10.0, 201);

    let mut zero = true;
    for model in models {
        for t in pairs {
            let mut req = IfRequest::example1(model, t, grid.clone(), 3);
            req.posterior = Posterior::Model;
            zero &= influence_function(&req)
                .unwrap()
                .values
                .iter()
                .flatten()
                .all(|&v| v == 0.0);
        }
    }

    let mut finite = true;
    for model in [ExampleModel::M1, ExampleModel::M3] {
        for t in pairs {
            let req = IfRequest::example1(model, t, grid.clone(), 5);
            let curves = influence_function(&req).unwrap();
            finite &= curves.values.len() == grid.len() && curves.is_finite();
        }
    }

    let sample = standard_normal_sample(100, 7);
    let mut worst = 0.0f64;
    for model in models {
        let theta = vec![1.0; model.param_count()];
        for t in pairs {
            let analytic = big_psi(model, &theta, &t, &sample, &example1_posterior).unwrap();
            let d = theta.len();
            let mut fd = vec![vec![0.0; d]; d];
            let h = 1e-5;
            for k in 0..d {
                let (mut up, mut down) = (theta.clone(), theta.clone());
                up[k] += h;
                down[k] -= h;
                for &x in &sample {
                    let a = psi(model, &up, x, &t, &example1_posterior).unwrap();
                    let b = psi(model, &down, x, &t, &example1_posterior).unwrap();
                    for i in 0..d {
                        fd[i][k] += (a[i] - b[i]) / (2.0 * h) / sample.len() as f64;
                    }
                }
            }
            let scale = fd.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..d {
                for k in 0..d {
                    let n = fd[i][k];
                    worst = worst.max((analytic[(i, k)] - n).abs() / n.abs().max(1e-6 * scale));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = zero && finite && worst < 1e-4 && elapsed < Duration::from_secs(60);
    report(
        5,
        "influence function",
        pass,
        &format!(
            "zero under correct specification {zero}; finite curves {finite}; Jacobian max rel err {worst:.1e}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---- 6. label-noise trend ----

fn mnist_dir() -> Option<PathBuf> {
    std::env::var_os("SDNET_MNIST_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain([Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")])
        .find(|dir| {
            dir.join("train-images-idx3-ubyte").is_file()
                && dir.join("t10k-images-idx3-ubyte").is_file()
        })
}

/// `(train, test, description, clean threshold, noisy margin)`.
fn trend_data() -> (Dataset, Dataset, String, f64, f64) {
    if let Some(dir) = mnist_dir() {
        let train = read_idx(
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        )
        .unwrap();
        let test = read_idx(
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        )
        .unwrap();
        return (
            train.head(8000),
            test.head(2000),
            format!("MNIST from {}", dir.display()),
            0.90,
            0.10,
        );
    }
    let spec = BlobSpec::random_centers(10_000, 784, 10, 0.3, 60);
    let all = synthetic_blobs(&spec, 61).unwrap();
    let idx: Vec<usize> = (0..10_000).collect();
    let (train, test) = (all.subset(&idx[..8000]), all.subset(&idx[8000..]));
    (
        train,
        test,
        "synthetic 784-d blobs (no MNIST files found)".into(),
        0.95,
        0.05,
    )
}

fn fit_and_score(train_set: &Dataset, test: &Dataset, loss: LossKind) -> f64 {
    let arch = ArchitectureSpec::preset("mnist-mlp").unwrap();
    let cfg = TrainConfig::new(loss, 30, 601);
    let out = train(train_set, &arch, 602, &cfg, &AdamConfig::default(), None).unwrap();
    accuracy(&out.params, &arch, test.features.view(), &test.labels).unwrap()
}

#[test]
fn criterion_6_label_noise_trend() {
    let start = Instant::now();
    let (train_set, test, source, clean_min, margin_min) = trend_data();
    let cce = LossKind::Baseline(BaselineKind::Cce);
    let clean_cce = fit_and_score(&train_set, &test, cce);
    let clean_sd = fit_and_score(&train_set, &test, LossKind::sd(0.1, -0.8).unwrap());
    let (noisy, _) = corrupt_labels(&train_set, NoiseConfig::new(0.4, 603).unwrap()).unwrap();
    let noisy_cce = fit_and_score(&noisy, &test, cce);
    let noisy_sd = fit_and_score(&noisy, &test, LossKind::sd(0.05, -1.0).unwrap());
    let elapsed = start.elapsed();
    let pass = clean_cce >= clean_min
        && clean_sd >= clean_min
        && (clean_cce - clean_sd).abs() <= 0.03
        && noisy_sd - noisy_cce >= margin_min
        && elapsed < Duration::from_secs(600);
    report(
        6,
        "label-noise trend",
        pass,
        &format!(
            "{source}; clean cce {clean_cce:.4} / sd(0.1,-0.8) {clean_sd:.4} (need >= {clean_min}, within 0.03); \
             eta=0.4 cce {noisy_cce:.4} / sd(0.05,-1) {noisy_sd:.4} (need margin >= {margin_min}); {:.0}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---- 7. attacks ----

#[test]
fn criterion_7_attacks() {
    let arch = ArchitectureSpec::preset("mnist-mlp").unwrap();
    let spec = BlobSpec::random_centers(2500, 784, 10, 0.3, 70);
    let all = synthetic_blobs(&spec, 71).unwrap();
    let idx: Vec<usize> = (0..2500).collect();
    let (train_set, test) = (all.subset(&idx[..2000]), all.subset(&idx[2000..]));
    let cfg = TrainConfig::new(LossKind::Baseline(BaselineKind::Cce), 10, 72);
    let model = train(&train_set, &arch, 73, &cfg, &AdamConfig::default(), None)
        .unwrap()
        .params;

    // exact constraints on every coordinate
    let mut exact = true;
    for eps in [0.0, 0.05, 0.1, 0.3] {
        for cfg in [AttackConfig::fgsm(eps), AttackConfig::pgd(eps, 0.01, 20)] {
            let adv =
                attack_batch(&model, &arch, test.features.view(), &test.labels, &cfg).unwrap();
            exact &= adv
                .iter()
                .zip(test.features.iter())
                .all(|(&a, &x)| (a - x).abs() <= eps && (0.0..=1.0).contains(&a));
        }
    }

    // FGSM and one PGD step of size epsilon coincide bit for bit
    let mut same = true;
    for i in 0..50 {
        let x = test.features.row(i).to_vec();
        let eps = 0.02 * (i % 10 + 1) as f64;
        let a = fgsm(&model, &arch, &x, test.labels[i], &AttackConfig::fgsm(eps)).unwrap();
        let b = pgd(
            &model,
            &arch,
            &x,
            test.labels[i],
            &AttackConfig::pgd(eps, eps, 1),
        )
        .unwrap();
        same &= a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits());
    }

    let clean = accuracy(&model, &arch, test.features.view(), &test.labels).unwrap();
    let attacked =
        adversarial_accuracy(&model, &arch, &test, &AttackConfig::pgd(0.3, 0.01, 100)).unwrap();
    let pass = exact && same && clean - attacked >= 0.5;
    report(
        7,
        "attack correctness",
        pass,
        &format!(
            "budget and box exact {exact}; FGSM == 1-step PGD {same}; CCE mnist-mlp on 784-d blobs: clean {clean:.4}, PGD(0.3,0.01,100) {attacked:.4}"
        ),
    );
    assert!(pass);
}

// ---- 8. determinism ----

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_sdnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_8_cli_outputs_are_reproducible() {
    let commands: Vec<(&str, Vec<&str>)> = vec![
        (
            "train",
            vec![
                "train",
                "--dataset",
                "toy:300",
                "--loss",
                "cce,sd:0.1:-0.5,gce:0.7",
                "--eta",
                "0.2",
                "--folds",
                "3",
                "--epochs",
                "5",
                "--batch",
                "32",
                "--seed",
                "8",
                "--out",
                "r.csv",
            ],
        ),
        (
            "train-adversarial",
            vec![
                "train",
                "--dataset",
                "blobs:300:16:3:0.1",
                "--arch",
                "toy",
                "--loss",
                "sd:0.1:-0.8",
                "--attack",
                "pgd",
                "--epsilon",
                "0.1",
                "--step",
                "0.02",
                "--iters",
                "5",
                "--surrogate",
                "surrogate-64",
                "--folds",
                "2",
                "--epochs",
                "3",
                "--seed",
                "8",
                "--out",
                "r.csv",
            ],
        ),
        (
            "epochs",
            vec![
                "epochs",
                "--dataset",
                "toy:300",
                "--loss",
                "cce,tcce:0.5",
                "--folds",
                "3",
                "--epochs",
                "5",
                "--seed",
                "8",
                "--out",
                "e.csv",
            ],
        ),
        (
            "bound",
            vec![
                "bound",
                "--eta",
                "0.3",
                "--resolution",
                "21:21",
                "--out",
                "b.csv",
            ],
        ),
        (
            "influence",
            vec![
                "influence",
                "--model",
                "m3",
                "--beta",
                "0.1",
                "--lambda",
                "-0.8",
                "--grid",
                "-10:10:41",
                "--seed",
                "8",
                "--out",
                "if.csv",
            ],
        ),
        (
            "corrupt",
            vec![
                "corrupt",
                "--dataset",
                "blobs:500:5:4:0.1",
                "--eta",
                "0.3",
                "--seed",
                "8",
                "--out",
                "noisy",
            ],
        ),
        (
            "attack",
            vec![
                "attack",
                "--dataset",
                "blobs:300:784:10:0.3",
                "--attack",
                "pgd",
                "--epsilon",
                "0.1",
                "--step",
                "0.01",
                "--iters",
                "10",
                "--epochs",
                "2",
                "--seed",
                "8",
                "--out",
                "adv",
            ],
        ),
    ];
    let mut failures = Vec::new();
    for (name, args) in &commands {
        let runs: Vec<_> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let ok = run_cli(dir.path(), args);
                (ok, snapshot(dir.path()))
            })
            .collect();
        let ok = runs.iter().all(|(ok, files)| *ok && !files.is_empty());
        if !ok || runs[0].1 != runs[1].1 {
            failures.push(*name);
        }
    }
    let pass = failures.is_empty();
    report(
        8,
        "determinism",
        pass,
        &format!(
            "{} commands run twice; {}",
            commands.len(),
            if pass {
                "all outputs byte-identical".to_string()
            } else {
                format!("differ or failed: {}", failures.join(", "))
            }
        ),
    );
    assert!(pass);
}

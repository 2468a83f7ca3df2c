use ndarray::Array2;
use rand::Rng;
use sdnet::attacks::{adversarial_accuracy, adversarial_trainset, attack_batch, fgsm, pgd};
use sdnet::data::{read_dataset_dump, synthetic_blobs, write_dataset_dump, BlobSpec};
use sdnet::network::{accuracy, init_params};
use sdnet::optimizer::train;
use sdnet::rng::seeded;
use sdnet::{
    Activation, AdamConfig, ArchitectureSpec, AttackConfig, BaselineKind, InitScheme, LossKind,
    Provenance, TrainConfig,
};

fn small_arch() -> ArchitectureSpec {
    ArchitectureSpec::new(6, vec![(10, Activation::Relu), (7, Activation::Tanh)], 3).unwrap()
}

#[test]
fn fgsm_equals_one_saturating_pgd_step() {
    let arch = small_arch();
    let mut rng = seeded(1);
    for case in 0..200 {
        let params = init_params(&arch, InitScheme::HeUniform, case);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let y = rng.random_range(0..3);
        let eps = rng.random_range(0.0..0.4);
        let step = eps * rng.random_range(1.0..3.0);
        let a = fgsm(&params, &arch, &x, y, &AttackConfig::fgsm(eps)).unwrap();
        let b = pgd(
            &params,
            &arch,
            &x,
            y,
            &AttackConfig::pgd(eps, step.max(1e-12), 1),
        )
        .unwrap();
        assert_eq!(a, b, "case {case}");
    }
}

#[test]
fn outputs_respect_budget_and_box() {
    let arch = small_arch();
    let mut rng = seeded(2);
    for case in 0..100 {
        let params = init_params(&arch, InitScheme::GlorotNormal, case);
        let x = Array2::from_shape_fn((5, 6), |_| rng.random_range(0.0..1.0));
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
        let eps = rng.random_range(0.0..0.5);
        let cfg = if case % 2 == 0 {
            AttackConfig::fgsm(eps)
        } else {
            AttackConfig::pgd(eps, rng.random_range(0.001..0.2), rng.random_range(1..20))
        };
        let adv = attack_batch(&params, &arch, x.view(), &labels, &cfg).unwrap();
        for (a, x0) in adv.iter().zip(x.iter()) {
            assert!((a - x0).abs() <= eps, "case {case}");
            assert!((0.0..=1.0).contains(a));
        }
    }
}

#[test]
fn attacks_are_deterministic() {
    let arch = small_arch();
    let params = init_params(&arch, InitScheme::GlorotNormal, 3);
    let x = [0.1, 0.5, 0.9, 0.3, 0.3, 0.7];
    let cfg = AttackConfig::pgd(0.2, 0.01, 30);
    assert_eq!(
        pgd(&params, &arch, &x, 2, &cfg).unwrap(),
        pgd(&params, &arch, &x, 2, &cfg).unwrap()
    );
}

fn trained_toy() -> (sdnet::NetworkParams, ArchitectureSpec, sdnet::Dataset) {
    let data = synthetic_blobs(&BlobSpec::toy(400), 5).unwrap();
    let arch = ArchitectureSpec::preset("toy").unwrap();
    let cfg = TrainConfig::new(LossKind::Baseline(BaselineKind::Cce), 40, 1).with_batch_size(16);
    let out = train(&data, &arch, 2, &cfg, &AdamConfig::default(), None).unwrap();
    (out.params, arch, data)
}

#[test]
fn adversarial_trainset_properties() {
    let (params, arch, data) = trained_toy();
    let same = adversarial_trainset(&params, &arch, &data, &AttackConfig::fgsm(0.0)).unwrap();
    assert_eq!(same, data);
    let cfg = AttackConfig::fgsm(0.3);
    let adv = adversarial_trainset(&params, &arch, &data, &cfg).unwrap();
    assert_eq!(adv.labels, data.labels);
    assert_eq!(adv.provenance, Provenance::Attacked);
    assert!(adv
        .features
        .iter()
        .zip(data.features.iter())
        .all(|(a, x)| (a - x).abs() <= 0.3));
    let clean = accuracy(&params, &arch, data.features.view(), &data.labels).unwrap();
    let attacked = accuracy(&params, &arch, adv.features.view(), &adv.labels).unwrap();
    assert!(attacked < clean, "{attacked} vs {clean}");

    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("adv");
    write_dataset_dump(&prefix, &adv, None).unwrap();
    let (back, mask) = read_dataset_dump(&prefix, 2, Provenance::Attacked).unwrap();
    assert_eq!(back, adv);
    assert!(mask.is_none());
}

#[test]
fn pgd_breaks_an_undefended_model() {
    let (params, arch, data) = trained_toy();
    let clean = accuracy(&params, &arch, data.features.view(), &data.labels).unwrap();
    let adv =
        adversarial_accuracy(&params, &arch, &data, &AttackConfig::pgd(0.3, 0.01, 100)).unwrap();
    assert!(
        clean >= 0.99 && adv <= clean - 0.5,
        "clean {clean}, pgd {adv}"
    );
}

//! Experiment drivers behind the command-line front end: dataset
//! selection, contamination of training folds, k-fold cross-validation and
//! per-epoch accuracy traces.
//!
//! Every driver is a pure function of its spec: all randomness is derived
//! from the spec's base seed, and rows are emitted in a fixed order.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::attacks::{adversarial_accuracy, adversarial_trainset, AttackConfig};
use crate::contamination::{corrupt_labels, NoiseConfig};
use crate::data::{
    fmt_sig6, make_folds, read_dataset_dump, read_idx_dir, synthetic_blobs, synthetic_example1,
    BlobSpec, Dataset, Provenance, ResultRecord,
};
use crate::divergence::{BaselineKind, LossKind};
use crate::error::{Error, Result};
use crate::network::{ArchitectureSpec, NetworkParams};
use crate::optimizer::{train, AdamConfig, EpochMetrics, TrainConfig, DEFAULT_BATCH_SIZE};
use crate::rng::derive_seed;

// stream tags for derive_seed
const TAG_DATA: u64 = 1;
const TAG_FOLDS: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_NOISE: u64 = 100;
const TAG_INIT: u64 = 200;
const TAG_SURROGATE: u64 = 300;

/// Where a dataset comes from. Parsed from selectors such as `toy:1000`,
/// `blobs:2000:784:10:0.3`, `example1:500`, `idx:/data/mnist:10000` or
/// `dump:/tmp/noisy:10`.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Two planar Gaussian blobs.
    Toy { n: usize },
    /// Gaussian blobs around random centres in the unit box.
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        std: f64,
    },
    /// The single-feature binary problem with a known posterior.
    Example1 { n: usize },
    /// MNIST-style IDX files in a directory; optionally the first `limit` rows.
    Idx { dir: PathBuf, limit: Option<usize> },
    /// A features/labels CSV pair written by the `corrupt` or `attack` commands.
    Dump { prefix: PathBuf, classes: usize },
}

const DEFAULT_SYNTHETIC_N: usize = 1000;

fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad {what} `{s}`")))
}

impl std::str::FromStr for DatasetSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let n_or_default = |i: usize| {
            parts
                .get(i)
                .map_or(Ok(DEFAULT_SYNTHETIC_N), |v| parse_field(v, "sample size"))
        };
        let src = match parts[0] {
            "toy" if parts.len() <= 2 => DatasetSource::Toy {
                n: n_or_default(1)?,
            },
            "example1" if parts.len() <= 2 => DatasetSource::Example1 {
                n: n_or_default(1)?,
            },
            "blobs" if parts.len() == 5 => DatasetSource::Blobs {
                n: parse_field(parts[1], "sample size")?,
                dim: parse_field(parts[2], "dimension")?,
                classes: parse_field(parts[3], "class count")?,
                std: parse_field(parts[4], "standard deviation")?,
            },
            "idx" if (2..=3).contains(&parts.len()) => DatasetSource::Idx {
                dir: PathBuf::from(parts[1]),
                limit: parts
                    .get(2)
                    .map(|v| parse_field(v, "row limit"))
                    .transpose()?,
            },
            "dump" if parts.len() == 3 => DatasetSource::Dump {
                prefix: PathBuf::from(parts[1]),
                classes: parse_field(parts[2], "class count")?,
            },
            _ => return Err(Error::Parse(format!("unrecognized dataset selector `{s}`"))),
        };
        Ok(src)
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Toy { n } => write!(f, "toy:{n}"),
            DatasetSource::Blobs {
                n,
                dim,
                classes,
                std,
            } => write!(f, "blobs:{n}:{dim}:{classes}:{std}"),
            DatasetSource::Example1 { n } => write!(f, "example1:{n}"),
            DatasetSource::Idx { dir, limit: None } => write!(f, "idx:{}", dir.display()),
            DatasetSource::Idx {
                dir,
                limit: Some(l),
            } => write!(f, "idx:{}:{l}", dir.display()),
            DatasetSource::Dump { prefix, classes } => {
                write!(f, "dump:{}:{classes}", prefix.display())
            }
        }
    }
}

impl DatasetSource {
    /// Loads or generates the dataset. Synthetic sources draw from `seed`.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Toy { n } => synthetic_blobs(&BlobSpec::toy(*n), seed),
            DatasetSource::Blobs {
                n,
                dim,
                classes,
                std,
            } => {
                if *dim == 0 || *classes < 2 || !std.is_finite() || *std < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "bad blob parameters in `{self}`"
                    )));
                }
                let spec = BlobSpec::random_centers(*n, *dim, *classes, *std, derive_seed(seed, 0));
                synthetic_blobs(&spec, derive_seed(seed, 1))
            }
            DatasetSource::Example1 { n } => synthetic_example1(*n, seed),
            DatasetSource::Idx { dir, limit } => {
                let data = read_idx_dir(dir)?;
                Ok(match limit {
                    Some(l) => data.head(*l),
                    None => data,
                })
            }
            DatasetSource::Dump { prefix, classes } => {
                Ok(read_dataset_dump(prefix, *classes, Provenance::Synthetic)?.0)
            }
        }
    }
}

/// Parses a loss selector: `cce`, `mae`, `gce:Q`, `tcce:DELTA`, `sd:BETA:LAMBDA`,
/// or bare `sd` taking the given default tuning.
pub fn parse_loss(s: &str, default_tuning: Option<(f64, f64)>) -> Result<LossKind> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let kind = match (parts[0], parts.len()) {
        ("cce", 1) => LossKind::Baseline(BaselineKind::Cce),
        ("mae", 1) => LossKind::Baseline(BaselineKind::Mae),
        ("gce", 2) => LossKind::Baseline(BaselineKind::Gce(parse_field(parts[1], "gce exponent")?)),
        ("tcce", 2) => LossKind::Baseline(BaselineKind::Tcce(parse_field(
            parts[1],
            "trimming fraction",
        )?)),
        ("sd", 3) => LossKind::sd(
            parse_field(parts[1], "beta")?,
            parse_field(parts[2], "lambda")?,
        )?,
        ("sd", 1) => match default_tuning {
            Some((beta, lambda)) => LossKind::sd(beta, lambda)?,
            None => {
                return Err(Error::InvalidParameter(
                    "`sd` needs --beta and --lambda".into(),
                ))
            }
        },
        _ => return Err(Error::Parse(format!("unrecognized loss `{s}`"))),
    };
    if let LossKind::Baseline(b) = kind {
        b.validate()?;
    }
    Ok(kind)
}

/// Parses a comma-separated list of loss selectors.
pub fn parse_losses(s: &str, default_tuning: Option<(f64, f64)>) -> Result<Vec<LossKind>> {
    s.split(',')
        .map(|part| parse_loss(part, default_tuning))
        .collect()
}

/// How training data are contaminated before fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum Contamination {
    Clean,
    /// Uniform label noise at the given level.
    LabelNoise {
        eta: f64,
    },
    /// Inputs replaced by attacks against a surrogate trained with CCE on
    /// the clean training data.
    Adversarial {
        attack: AttackConfig,
        surrogate: ArchitectureSpec,
        surrogate_epochs: usize,
    },
}

impl Contamination {
    pub fn label(&self) -> String {
        match self {
            Contamination::Clean => "clean".into(),
            Contamination::LabelNoise { eta } => format!("eta={eta}"),
            Contamination::Adversarial { attack, .. } => attack.label(),
        }
    }

    /// Applies the contamination to a training set. `seed` keys the noise
    /// draw or the surrogate's initialization and shuffling.
    pub fn apply(&self, train_set: &Dataset, batch_size: usize, seed: u64) -> Result<Dataset> {
        match self {
            Contamination::Clean => Ok(train_set.clone()),
            Contamination::LabelNoise { eta } => {
                Ok(corrupt_labels(train_set, NoiseConfig::new(*eta, seed)?)?.0)
            }
            Contamination::Adversarial {
                attack,
                surrogate,
                surrogate_epochs,
            } => {
                let surrogate =
                    fit_surrogate(train_set, surrogate, *surrogate_epochs, batch_size, seed)?;
                adversarial_trainset(&surrogate.0, &surrogate.1, train_set, attack)
            }
        }
    }
}

/// Trains a CCE surrogate adapted to the data's width and class count.
pub fn fit_surrogate(
    data: &Dataset,
    arch: &ArchitectureSpec,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<(NetworkParams, ArchitectureSpec)> {
    let arch = arch.with_io(data.dim(), data.classes)?;
    let cfg = TrainConfig::new(
        LossKind::Baseline(BaselineKind::Cce),
        epochs,
        derive_seed(seed, TAG_SHUFFLE),
    )
    .with_batch_size(batch_size);
    let out = train(
        data,
        &arch,
        derive_seed(seed, TAG_INIT),
        &cfg,
        &AdamConfig::default(),
        None,
    )?;
    Ok((out.params, arch))
}

/// Configuration shared by the cross-validation and epoch-trace drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    /// Hidden stack; input width and class count are taken from the data.
    pub arch: ArchitectureSpec,
    pub losses: Vec<LossKind>,
    pub contamination: Contamination,
    pub folds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(
        dataset: DatasetSource,
        arch: ArchitectureSpec,
        losses: Vec<LossKind>,
        seed: u64,
    ) -> Self {
        Self {
            dataset,
            arch,
            losses,
            contamination: Contamination::Clean,
            folds: 5,
            epochs: 30,
            batch_size: DEFAULT_BATCH_SIZE,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.losses.is_empty() {
            return Err(Error::InvalidParameter("no loss configured".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn train_config(&self, loss: LossKind, fold: usize) -> TrainConfig {
        TrainConfig::new(
            loss,
            self.epochs,
            derive_seed(self.seed, TAG_SHUFFLE + fold as u64 * 1000),
        )
        .with_batch_size(self.batch_size)
    }

    /// Contaminated training set and clean validation set of fold `fold`.
    fn fold_data(
        &self,
        data: &Dataset,
        plan: &crate::data::FoldPlan,
        fold: usize,
    ) -> Result<(Dataset, Dataset)> {
        let (train_set, valid) = plan.views(data, fold);
        let seed = match self.contamination {
            Contamination::Adversarial { .. } => {
                derive_seed(self.seed, TAG_SURROGATE + fold as u64)
            }
            _ => derive_seed(self.seed, TAG_NOISE + fold as u64),
        };
        Ok((
            self.contamination
                .apply(&train_set, self.batch_size, seed)?,
            valid,
        ))
    }
}

/// Parameters fitted on one fold.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub loss: LossKind,
    /// 1-based fold index.
    pub fold: usize,
    pub params: NetworkParams,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    /// Per-fold rows followed by one `mean` row, for each loss in order.
    pub records: Vec<ResultRecord>,
    pub models: Vec<FittedModel>,
}

impl CvOutcome {
    /// Mean clean accuracy of `loss`.
    pub fn mean_accuracy(&self, loss: &LossKind) -> Option<f64> {
        let (beta, lambda) = loss.params();
        self.records
            .iter()
            .find(|r| {
                r.fold == "mean" && r.loss == loss.name() && r.beta == beta && r.lambda == lambda
            })
            .map(|r| r.clean_accuracy)
    }
}

/// k-fold cross-validation: for each fold, contaminate the training part,
/// train every configured loss from the same initialization and evaluate on
/// the clean validation fold. With an adversarial contamination the
/// validation fold is also attacked (white-box) to fill `adv_accuracy`.
pub fn run_cross_validation(spec: &ExperimentSpec) -> Result<CvOutcome> {
    spec.validate()?;
    let data = spec.dataset.load(derive_seed(spec.seed, TAG_DATA))?;
    let arch = spec.arch.with_io(data.dim(), data.classes)?;
    let plan = make_folds(data.len(), spec.folds, derive_seed(spec.seed, TAG_FOLDS))?;
    let mut per_loss: Vec<Vec<ResultRecord>> = vec![Vec::new(); spec.losses.len()];
    let mut models = Vec::new();
    let adam = AdamConfig::default();
    for fold in 0..spec.folds {
        let (train_set, valid) = spec.fold_data(&data, &plan, fold)?;
        let init_seed = derive_seed(spec.seed, TAG_INIT + fold as u64);
        for (li, &loss) in spec.losses.iter().enumerate() {
            let out = train(
                &train_set,
                &arch,
                init_seed,
                &spec.train_config(loss, fold),
                &adam,
                Some(&valid),
            )?;
            let clean_accuracy = out
                .trace
                .last()
                .and_then(|m| m.test_accuracy)
                .expect("eval set given");
            let adv_accuracy = match &spec.contamination {
                Contamination::Adversarial { attack, .. } => {
                    Some(adversarial_accuracy(&out.params, &arch, &valid, attack)?)
                }
                _ => None,
            };
            per_loss[li].push(record(
                spec,
                loss,
                (fold + 1).to_string(),
                clean_accuracy,
                adv_accuracy,
            ));
            models.push(FittedModel {
                loss,
                fold: fold + 1,
                params: out.params,
            });
        }
    }
    let mut records = Vec::new();
    for (li, rows) in per_loss.into_iter().enumerate() {
        let k = rows.len() as f64;
        let clean = rows.iter().map(|r| r.clean_accuracy).sum::<f64>() / k;
        let adv = rows
            .iter()
            .map(|r| r.adv_accuracy)
            .sum::<Option<f64>>()
            .map(|s| s / k);
        let mean = record(spec, spec.losses[li], "mean".into(), clean, adv);
        records.extend(rows);
        records.push(mean);
    }
    Ok(CvOutcome { records, models })
}

fn record(
    spec: &ExperimentSpec,
    loss: LossKind,
    fold: String,
    clean: f64,
    adv: Option<f64>,
) -> ResultRecord {
    let (beta, lambda) = loss.params();
    ResultRecord {
        dataset: spec.dataset.to_string(),
        loss: loss.name().into(),
        beta,
        lambda,
        condition: spec.contamination.label(),
        fold,
        clean_accuracy: clean,
        adv_accuracy: adv,
        epochs: spec.epochs,
    }
}

/// One row per fitted model: `loss,beta,lambda,fold,params` with the flat
/// parameter vector space-separated in shortest round-trip form.
pub fn write_models_csv(path: impl AsRef<Path>, models: &[FittedModel]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "loss,beta,lambda,fold,params")?;
    for m in models {
        let (beta, lambda) = m.loss.params();
        let flat: Vec<String> = m.params.as_flat().iter().map(f64::to_string).collect();
        writeln!(
            out,
            "{},{beta},{lambda},{},{}",
            m.loss.name(),
            m.fold,
            flat.join(" ")
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub loss: LossKind,
    pub metrics: Vec<EpochMetrics>,
}

/// Single train/test split (the first fold of a `spec.folds`-fold plan is
/// held out); records test accuracy after every epoch for each loss.
pub fn run_epoch_traces(spec: &ExperimentSpec) -> Result<Vec<EpochTrace>> {
    spec.validate()?;
    let data = spec.dataset.load(derive_seed(spec.seed, TAG_DATA))?;
    let arch = spec.arch.with_io(data.dim(), data.classes)?;
    let plan = make_folds(data.len(), spec.folds, derive_seed(spec.seed, TAG_FOLDS))?;
    let (train_set, test) = spec.fold_data(&data, &plan, 0)?;
    let init_seed = derive_seed(spec.seed, TAG_INIT);
    spec.losses
        .iter()
        .map(|&loss| {
            let out = train(
                &train_set,
                &arch,
                init_seed,
                &spec.train_config(loss, 0),
                &AdamConfig::default(),
                Some(&test),
            )?;
            Ok(EpochTrace {
                loss,
                metrics: out.trace,
            })
        })
        .collect()
}

/// Long-format CSV `loss,beta,lambda,epoch,train_loss,test_accuracy`.
pub fn write_epoch_traces(path: impl AsRef<Path>, traces: &[EpochTrace]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "loss,beta,lambda,epoch,train_loss,test_accuracy")?;
    for t in traces {
        let (beta, lambda) = t.loss.params();
        for m in &t.metrics {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                t.loss.name(),
                fmt_sig6(beta),
                fmt_sig6(lambda),
                m.epoch,
                fmt_sig6(m.train_loss),
                m.test_accuracy.map(fmt_sig6).unwrap_or_default()
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_selectors_round_trip() {
        for s in [
            "toy:200",
            "blobs:100:5:3:0.1",
            "example1:50",
            "idx:/data/mnist",
            "idx:/data/mnist:800",
            "dump:/tmp/x:10",
        ] {
            let src: DatasetSource = s.parse().unwrap();
            assert_eq!(src.to_string(), s);
        }
        assert_eq!(
            "toy".parse::<DatasetSource>().unwrap(),
            DatasetSource::Toy {
                n: DEFAULT_SYNTHETIC_N
            }
        );
        for bad in ["", "toy:x", "blobs:1:2", "idx", "mnist"] {
            assert!(bad.parse::<DatasetSource>().is_err(), "{bad}");
        }
    }

    #[test]
    fn loss_selectors() {
        assert_eq!(
            parse_loss("cce", None).unwrap(),
            LossKind::Baseline(BaselineKind::Cce)
        );
        assert_eq!(
            parse_loss("sd:0.1:-0.5", None).unwrap(),
            LossKind::sd(0.1, -0.5).unwrap()
        );
        assert_eq!(
            parse_loss("sd", Some((0.5, -0.5))).unwrap(),
            LossKind::sd(0.5, -0.5).unwrap()
        );
        assert!(parse_loss("sd", None).is_err());
        assert!(matches!(
            parse_loss("sd:0:0", None),
            Err(Error::Tuning { .. })
        ));
        assert!(parse_loss("gce:0", None).is_err());
        assert_eq!(parse_losses("cce,gce:0.7", None).unwrap().len(), 2);
    }

    #[test]
    fn cross_validation_rows_and_determinism() {
        let mut spec = ExperimentSpec::new(
            DatasetSource::Toy { n: 90 },
            ArchitectureSpec::preset("toy").unwrap(),
            vec![
                LossKind::Baseline(BaselineKind::Cce),
                LossKind::sd(0.5, -0.5).unwrap(),
            ],
            11,
        );
        spec.folds = 3;
        spec.epochs = 2;
        spec.batch_size = 16;
        let a = run_cross_validation(&spec).unwrap();
        assert_eq!(a.records.len(), 2 * (3 + 1));
        assert_eq!(a.models.len(), 6);
        assert_eq!(a.records[3].fold, "mean");
        let mean = a.records[..3].iter().map(|r| r.clean_accuracy).sum::<f64>() / 3.0;
        assert_eq!(a.records[3].clean_accuracy, mean);
        let b = run_cross_validation(&spec).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn trace_length_equals_epochs() {
        let mut spec = ExperimentSpec::new(
            DatasetSource::Toy { n: 60 },
            ArchitectureSpec::preset("toy").unwrap(),
            vec![LossKind::Baseline(BaselineKind::Mae)],
            3,
        );
        spec.epochs = 4;
        spec.contamination = Contamination::LabelNoise { eta: 0.2 };
        let traces = run_epoch_traces(&spec).unwrap();
        assert_eq!(traces[0].metrics.len(), 4);
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sdnet::attacks::{adversarial_trainset, AttackConfig};
use sdnet::contamination::{corrupt_labels, NoiseConfig};
use sdnet::data::{write_dataset_dump, write_results};
use sdnet::experiment::{
    fit_surrogate, parse_losses, run_cross_validation, run_epoch_traces, write_epoch_traces,
    write_models_csv, Contamination, DatasetSource, ExperimentSpec,
};
use sdnet::rng::derive_seed;
use sdnet::theory::{bound_grid, influence_function, linspace, IfRequest, Posterior};
use sdnet::{ArchitectureSpec, Error, ExampleModel, TuningPair};

mod config;

const EXIT_FLAGS: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(
    name = "sdnet",
    version,
    about = "Robust classifier training with S-divergence losses"
)]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// k-fold cross-validated accuracy on clean or contaminated training folds.
    Train(TrainArgs),
    /// Test accuracy after every epoch on a single train/test split.
    Epochs(TrainArgs),
    /// Excess-risk bound over a (beta, lambda) grid.
    Bound(BoundArgs),
    /// Influence-function curves for the single-feature example models.
    Influence(InfluenceArgs),
    /// Writes a copy of a dataset with uniform label noise.
    Corrupt(CorruptArgs),
    /// Writes a copy of a dataset perturbed by attacks on a CCE surrogate.
    Attack(AttackArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackFlag {
    Fgsm,
    Pgd,
}

#[derive(Args)]
struct AttackOpts {
    /// Attack used to perturb training inputs.
    #[arg(long)]
    attack: Option<AttackFlag>,
    /// L-infinity budget.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// PGD step size.
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    /// PGD iterations.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Surrogate architecture preset the attacks are computed against.
    #[arg(long, default_value = "surrogate-64")]
    surrogate: String,
}

impl AttackOpts {
    fn config(&self, kind: AttackFlag) -> AttackConfig {
        match kind {
            AttackFlag::Fgsm => AttackConfig::fgsm(self.epsilon),
            AttackFlag::Pgd => AttackConfig::pgd(self.epsilon, self.step, self.iters),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset selector: toy[:N], blobs:N:DIM:CLASSES:STD, example1[:N],
    /// idx:DIR[:N] or dump:PREFIX:CLASSES.
    #[arg(long)]
    dataset: String,
    /// Architecture preset; input width and class count follow the data.
    #[arg(long, default_value = "toy")]
    arch: String,
    /// Comma-separated losses: cce, mae, gce:Q, tcce:DELTA, sd:BETA:LAMBDA or sd.
    #[arg(long, default_value = "sd")]
    loss: String,
    /// Tuning used by a bare `sd` loss.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Uniform label-noise level applied to training folds.
    #[arg(long)]
    eta: Option<f64>,
    #[command(flatten)]
    attack: AttackOpts,
    /// Number of folds (for `epochs`, the first fold is the test split).
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Where fitted parameters go (train only); defaults to `<out>.params.csv`.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// `LO:HI` range of beta.
    #[arg(long, default_value = "0:1", allow_hyphen_values = true)]
    beta_range: String,
    /// `LO:HI` range of lambda.
    #[arg(long, default_value = "-1:1", allow_hyphen_values = true)]
    lambda_range: String,
    /// `NBETA:NLAMBDA` grid resolution.
    #[arg(long, default_value = "51:51")]
    resolution: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PosteriorFlag {
    /// The synthetic single-feature posterior.
    Example1,
    /// The model's own output (correct specification).
    Model,
}

#[derive(Args)]
struct InfluenceArgs {
    /// m1, m2 or m3.
    #[arg(long)]
    model: String,
    #[arg(long, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, allow_hyphen_values = true)]
    lambda: f64,
    /// Comma-separated parameter values; all ones by default.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    /// `LO:HI:N` grid of contamination points.
    #[arg(long, default_value = "-10:10:201", allow_hyphen_values = true)]
    grid: String,
    #[arg(long, value_enum, default_value = "example1")]
    posterior: PosteriorFlag,
    /// Size of the standard-normal feature sample.
    #[arg(long, default_value_t = 100)]
    sample: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    seed: u64,
    /// Output prefix; writes `<out>.features.csv` and `<out>.labels.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, value_enum)]
    attack: AttackFlag,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Surrogate architecture preset.
    #[arg(long, default_value = "surrogate-64")]
    arch: String,
    /// Surrogate training epochs.
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long)]
    seed: u64,
    /// Output prefix; writes `<out>.features.csv` and `<out>.labels.csv`.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Tuning { .. } | Error::InvalidParameter(_) | Error::Parse(_) => EXIT_FLAGS,
        Error::DimensionMismatch { .. }
        | Error::InvalidProbs(_)
        | Error::EmptyDataset
        | Error::LabelOutOfRange { .. }
        | Error::Idx { .. }
        | Error::Input { .. }
        | Error::Csv(_) => EXIT_DATA,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
    }
}

fn split_pair<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(':')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad {what} `{s}`")))
        })
        .collect()
}

fn range(s: &str, what: &str) -> Result<(f64, f64), Error> {
    match split_pair::<f64>(s, what)?[..] {
        [lo, hi] => Ok((lo, hi)),
        _ => Err(Error::Parse(format!("{what} must be LO:HI, got `{s}`"))),
    }
}

fn experiment_spec(a: &TrainArgs) -> Result<ExperimentSpec, Error> {
    let dataset: DatasetSource = a.dataset.parse()?;
    let arch = ArchitectureSpec::preset(&a.arch)?;
    let tuning = match (a.beta, a.lambda) {
        (Some(b), Some(l)) => Some((b, l)),
        (None, None) => None,
        _ => {
            return Err(Error::InvalidParameter(
                "--beta and --lambda go together".into(),
            ))
        }
    };
    let losses = parse_losses(&a.loss, tuning)?;
    let contamination = match (a.eta, a.attack.attack) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidParameter(
                "--eta and --attack are exclusive".into(),
            ))
        }
        (Some(eta), None) => {
            NoiseConfig::new(eta, 0)?;
            Contamination::LabelNoise { eta }
        }
        (None, Some(kind)) => {
            let attack = a.attack.config(kind);
            attack.validate()?;
            Contamination::Adversarial {
                attack,
                surrogate: ArchitectureSpec::preset(&a.attack.surrogate)?,
                surrogate_epochs: a.epochs,
            }
        }
        (None, None) => Contamination::Clean,
    };
    let mut spec = ExperimentSpec::new(dataset, arch, losses, a.seed);
    spec.contamination = contamination;
    spec.folds = a.folds;
    spec.epochs = a.epochs;
    spec.batch_size = a.batch;
    Ok(spec)
}

fn default_params_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".params.csv");
    PathBuf::from(s)
}

fn cmd_train(a: &TrainArgs) -> Result<(), Error> {
    let spec = experiment_spec(a)?;
    let outcome = run_cross_validation(&spec)?;
    write_results(&a.out, &outcome.records)?;
    let params = a
        .params
        .clone()
        .unwrap_or_else(|| default_params_path(&a.out));
    write_models_csv(params, &outcome.models)
}

fn cmd_epochs(a: &TrainArgs) -> Result<(), Error> {
    let spec = experiment_spec(a)?;
    write_epoch_traces(&a.out, &run_epoch_traces(&spec)?)
}

fn cmd_bound(a: &BoundArgs) -> Result<(), Error> {
    let res: Vec<usize> = split_pair(&a.resolution, "resolution")?;
    let [nb, nl] = res[..] else {
        return Err(Error::Parse(format!(
            "resolution must be NBETA:NLAMBDA, got `{}`",
            a.resolution
        )));
    };
    let grid = bound_grid(
        a.eta,
        a.classes,
        range(&a.beta_range, "beta range")?,
        range(&a.lambda_range, "lambda range")?,
        (nb, nl),
    )?;
    grid.write_csv(&a.out)
}

fn cmd_influence(a: &InfluenceArgs) -> Result<(), Error> {
    let model: ExampleModel = a.model.parse()?;
    let tuning = TuningPair::new(a.beta, a.lambda)?;
    let g: Vec<f64> = split_pair(&a.grid, "grid")?;
    let [lo, hi, n] = g[..] else {
        return Err(Error::Parse(format!(
            "grid must be LO:HI:N, got `{}`",
            a.grid
        )));
    };
    if n < 1.0 || n.fract() != 0.0 {
        return Err(Error::Parse(format!(
            "grid size must be a positive integer, got `{n}`"
        )));
    }
    let mut req = IfRequest::example1(model, tuning, linspace(lo, hi, n as usize), a.seed);
    if let Some(theta) = &a.theta {
        req.theta_g = theta
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad theta `{theta}`")))
            })
            .collect::<Result<_, _>>()?;
    }
    req.sample = sdnet::theory::standard_normal_sample(a.sample, a.seed);
    if let PosteriorFlag::Model = a.posterior {
        req.posterior = Posterior::Model;
    }
    influence_function(&req)?.write_csv(&a.out)
}

fn cmd_corrupt(a: &CorruptArgs) -> Result<(), Error> {
    let source: DatasetSource = a.dataset.parse()?;
    let cfg = NoiseConfig::new(a.eta, derive_seed(a.seed, 1))?;
    let data = source.load(derive_seed(a.seed, 0))?;
    let (noisy, mask) = corrupt_labels(&data, cfg)?;
    write_dataset_dump(&a.out, &noisy, Some(&mask))
}

fn cmd_attack(a: &AttackArgs) -> Result<(), Error> {
    let source: DatasetSource = a.dataset.parse()?;
    let cfg = match a.attack {
        AttackFlag::Fgsm => AttackConfig::fgsm(a.epsilon),
        AttackFlag::Pgd => AttackConfig::pgd(a.epsilon, a.step, a.iters),
    };
    cfg.validate()?;
    let data = source.load(derive_seed(a.seed, 0))?;
    let arch = ArchitectureSpec::preset(&a.arch)?;
    let (params, arch) = fit_surrogate(&data, &arch, a.epochs, a.batch, derive_seed(a.seed, 1))?;
    let attacked = adversarial_trainset(&params, &arch, &data, &cfg)?;
    write_dataset_dump(&a.out, &attacked, None)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
fn run(args: Vec<String>) -> u8 {
    let args = match config::expand(args) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FLAGS;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FLAGS } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Epochs(a) => cmd_epochs(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Influence(a) => cmd_influence(a),
        Command::Corrupt(a) => cmd_corrupt(a),
        Command::Attack(a) => cmd_attack(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args().collect()))
}

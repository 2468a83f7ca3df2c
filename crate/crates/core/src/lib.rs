//! Robust training of neural classifiers with the S-divergence family of
//! losses: loss kernels, a small dense network with hand-written backward
//! passes, Adam training, label-noise and adversarial contamination, and
//! evaluators for the excess-risk bound and influence functions.

pub mod attacks;
pub mod contamination;
pub mod data;
pub mod divergence;
pub mod error;
pub mod experiment;
pub mod network;
pub mod optimizer;
pub mod rng;
pub mod theory;

pub use attacks::{AttackConfig, AttackKind};
pub use contamination::NoiseConfig;
pub use data::{Dataset, Provenance};
pub use divergence::{BaselineKind, LossKind, OneHotLabel, ProbVector, TuningPair};
pub use error::{Error, Result, TuningRejection};
pub use network::{Activation, ArchitectureSpec, ExampleModel, InitScheme, NetworkParams};
pub use optimizer::{AdamConfig, TrainConfig, TrainOutcome};

//! Product-manifold disentanglement from weakly supervised pairs: a small
//! reverse-mode autodiff engine, the subspace autoencoder and its losses, the
//! training schedule, a synthetic product-manifold generator, and the
//! evaluation metrics.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod schedule;
pub mod synthdata;
pub mod tensor;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use losses::SubspaceNormTracker;
pub use metrics::{EvalSet, MetricsReport};
pub use model::{Model, ModelConfig, ModelParams};
pub use rng::Streams;
pub use schedule::{BetaSchedule, TrainConfig, TrainOutcome};
pub use synthdata::{ChangePolicy, Dataset, DatasetConfig, DatasetKind, FactorKind, FactorSpec};
pub use tensor::Tensor;

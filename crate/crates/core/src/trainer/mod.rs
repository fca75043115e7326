//! Desk-scale trainer: synthetic long-tail data, populations of small
//! classifiers, magnitude pruning and post-training int8 quantization.
//! Populations emit prediction logs in the ledger format.

pub mod dataset;
pub mod model;
pub mod population;
pub mod prune;
pub mod quant;

use thiserror::Error;

pub use dataset::{generate_dataset, AttributeSpec, Dataset, DatasetError, SplitDataset, SyntheticDatasetSpec};
pub use model::{train_model, Classifier, Mlp, TrainConfig, TrainedModel};
pub use population::{run_population, MemberSummary, PopulationRun, ProtocolConfig};
pub use prune::{PruneEvent, PruneMask, PruneRamp, PruneSchedule, PruneScope, Pruner};
pub use quant::{quantize, quantize_tensor, QuantSpec, QuantizedModel, QuantizedTensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("infeasible pruning schedule: {0}")]
    InfeasibleSchedule(String),
    #[error("quantization failed: {0}")]
    Quantization(String),
    #[error("population too small: {0} seed(s), need at least 2")]
    PopulationTooSmall(usize),
    #[error("population {population_id:?}, seed {seed}: {source}")]
    MemberFailed {
        population_id: String,
        seed: u64,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

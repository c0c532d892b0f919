//! Dataset generation, training and evaluation runs driven by a TOML config.

mod config;
mod dataset;
mod eval;
mod train;

use thiserror::Error;

pub use config::{DataConfig, MaterialConfig, RunConfig, TrainConfig};
pub use dataset::{
    assign_splits, base_cases, generate_dataset, load_pair, validation_cases, CaseSpec, Dataset, DatasetInfo,
    DatasetManifest, Family, ManifestRecord, Split, AUGMENTATIONS, ORDINATE_RULE, SELECTION_RULE, TRUSS_TEMPLATE,
};
pub use eval::{
    coarse_report, evaluate, flip_discrepancy, footprint_mismatch, load_model, super_resolve, CheckpointMeta,
    Evaluation, LoadedModel, SampleEval, SuperResolved,
};
pub use train::{checkpoint_path, train, EpochRecord, TrainHistory, TrainOutcome};

use crate::codec::CodecError;
use crate::models::ModelError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code: 1 config, 2 data / i/o, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) | PipelineError::Io(_) => 2,
            PipelineError::Numerical(_) => 3,
        }
    }
}

impl From<CodecError> for PipelineError {
    fn from(e: CodecError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::Canvas { .. } => PipelineError::Config(e.to_string()),
            ModelError::Nn(NnError::Checkpoint(_)) | ModelError::Nn(NnError::Io(_)) => {
                PipelineError::Data(e.to_string())
            }
            _ => PipelineError::Numerical(e.to_string()),
        }
    }
}

impl From<NnError> for PipelineError {
    fn from(e: NnError) -> Self {
        ModelError::Nn(e).into()
    }
}

/// Worker pool sized by `PISTRESS_THREADS` (default: rayon's choice).
pub(crate) fn thread_pool() -> Result<rayon::ThreadPool, PipelineError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("PISTRESS_THREADS") {
        let n: usize =
            v.parse().map_err(|_| PipelineError::Config(format!("PISTRESS_THREADS={v:?} is not a thread count")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| PipelineError::Config(e.to_string()))
}

//! Dataset ingestion, training loop, and checkpointing.

pub mod checkpoint;
pub mod dataset;
pub mod model;
pub mod trainer;

pub use checkpoint::{checkpoint_load, checkpoint_save, CheckpointMeta, ScalarKind};
pub use dataset::{ingest, normalize_depth, DatasetMeta, FrameRecord};
pub use model::{Adam, Model, ModelGrads};
pub use trainer::{
    assemble_batch, prepare_dataset, train, train_step, train_with_mode, StepParams, TrainConfig,
};

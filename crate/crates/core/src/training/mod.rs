//! The training pipelines (single-modal, semantic alignment, the two
//! mapping pipelines, three fusion levels) and the hyperparameter search.

mod config;
mod fit;
mod mapping;
mod plan;
mod search;
mod semantic;
mod supervised;
mod trained;

pub use config::{Alternation, TrainConfig, TrainOverrides};
pub use fit::{EpochStats, PhaseHistory};
pub use mapping::{
    logistic_head, train_fully_supervised_mapping, train_semi_supervised_mapping, Direction, FslModel, FslPipeline, SslModel,
    SslPipeline,
};
pub use plan::{preset_names, train_method, untrained_model, MethodPlan, PhasePlan, Scale, TrainOutcome};
pub use search::{
    append_trial, hyperparameter_search, read_ledger, select_top_k, select_top_k_and_retrain, Dim, DimKind, HyperParams,
    RandomSampler, Sampler, SearchSpace, TpeSampler, TrialOutcome, TrialRecord,
};
pub use semantic::{train_semantic_alignment, AlignmentBatch, AlignmentRun, AlignmentTrainer, MmdSnapshot, SnapshotOptions, StepLosses};
pub use supervised::{
    train_fusion_data, train_fusion_two_branch, train_single_modal, ClassifierModel, FusionLevel, TwoBranchModel,
};
pub use trained::{Method, ModelManifest, TrainedModel};

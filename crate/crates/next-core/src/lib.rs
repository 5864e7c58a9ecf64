//! Low-rank modeling and nonlinear extrapolation of checkpoint trajectories.
//!
//! The pipeline: load or synthesize a checkpoint trajectory, reduce the
//! per-parameter deltas to their rank-1 subspaces, train a small
//! encoder-decoder predictor on those subspaces, and extrapolate a future
//! checkpoint by adding the scaled predicted delta back onto the last
//! weights. Diagnostics (energy-ratio curves, linear-fit R^2, ICER) and
//! linear-extrapolation baselines ride along for comparison.

pub mod dataset;
pub mod diagnostics;
pub mod extrapolate;
pub mod lab;
pub mod linalg;
pub mod predictor;
pub mod rng;
pub mod store;

pub use dataset::{
    align_sign, compute_deltas, extract_dataset, load_dataset, save_dataset, Dataset,
    DatasetError, DatasetGroup, DatasetMeta, ExtractOptions, Field, SigmaTransform,
    TrainingExample,
};
pub use diagnostics::{
    energy_csv, energy_ratio_series, icer, linear_r2, r2_csv, DiagnosticsError, EnergySeries,
    R2Report,
};
pub use extrapolate::{
    comparison_csv, extrapolate_checkpoint, frobenius_errors, linear_extrapolate,
    predict_extend, predict_target_delta, ComparisonRow, ExtrapolateError, ExtrapolationReport,
    LinearVariant, ParamRecord,
};
pub use lab::{
    analytic_ground_truth, gen_analytic_trajectory, gen_toy_training_trajectory, AnalyticRun,
    DynamicsKind, DynamicsSpec, LabError, ToyTrainSpec, TrainMode,
};
pub use linalg::{
    energy_ratio, frobenius_norm, full_svd, rank1_reconstruct, top_singular_triplet,
    top_singular_triplet_default, LinalgError, Matrix, Rank1Factor, SpectrumSummary,
};
pub use predictor::{
    backward, forward, init_uniform, l1_loss, load_bundle, save_bundle, train, BundleMeta,
    GroupStats, PredictorBundle, PredictorConfig, PredictorError, PredictorParams, TrainOptions,
};
pub use store::{
    load_checkpoint, load_lora_adapter, load_manifest, merge_lora, read_trajectory,
    save_checkpoint, save_checkpoint_f64, save_lora_adapter, save_manifest, Checkpoint, LoraAdapter, LoraEntry,
    ManifestEntry, StoreError, Trajectory, TrajectoryManifest,
};

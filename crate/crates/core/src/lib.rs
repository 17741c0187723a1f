//! Capsule routing engine: dynamic routing-by-agreement with Max-Min or
//! Softmax normalization, a precomputed "master coefficient" fast path,
//! a planted-model data generator for controlled experiments, and the
//! correlation analyses that justify the fast path.
//!
//! All numerics are f64 and deterministic: the same inputs (and, where
//! randomness exists, the same seed) reproduce results bitwise in
//! single-threaded mode. Parallel code paths only ever map a pure
//! function over independent examples, so they return the same values as
//! the sequential ones.

pub mod analysis;
pub mod benchmark;
pub mod error;
pub mod master;
pub mod routing;
pub mod storage;
pub mod synth;

pub use analysis::{
    accuracy_report, class_mean_correlations, gt_correlation_matrix, master_class_correlations,
    pearson, tuning_curves, AccuracyReport, CorrelationMatrix, TuningCurves,
};
pub use benchmark::{
    analytic_flop_ratio, dynamic_multiply_adds, fast_multiply_adds, run_benchmark, BenchReport,
    RoutingMode,
};
pub use error::{Error, Result};
pub use master::{
    accumulate_containers, build_gt_only_master, build_master, filter_examples,
    finalize_containers, reduce_to_master, replicate_master, BuilderConfig, ClassContainers,
    FilterStrategy, MasterMatrix, MasterVariant,
};
pub use routing::{
    agreement_update, classify, dynamic_route, fast_route, fast_route_trace, normalize_rows,
    predict_vectors, squash, squash_outputs, weighted_sum, CapsuleOutputs, CoefficientKind,
    CoefficientMatrix, LowerCapsules, NormKind, PredictionTensor, RoutingConfig, RoutingTrace,
    TransformTensor,
};
pub use storage::{
    export_accuracy_csv, export_bench_csv, export_correlation_csv, export_tuning_csv,
    read_dataset, read_master, read_trace_set, write_dataset, write_dataset_with_width,
    write_master, write_trace_set, RecordKind, ScalarWidth,
};
pub use synth::{dataset_digest, generate_planted, LabeledDataset, PlantedSpec, Provenance};

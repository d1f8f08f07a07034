//! Batch drivers: benchmark generation and storage, tracking whole
//! benchmarks, evaluation and the ablation matrix.

mod benchmark;
mod experiment;
mod features;

pub use benchmark::{
    generate_benchmark, load_benchmark, simulate_benchmark, write_benchmark, BenchmarkConfig, SequenceData,
    CONFIG_VERSION,
};
pub use experiment::{
    evaluate_benchmark, read_results_dir, run_ablation, track_benchmark, training_set, verification_set, write_results_dir,
    aggregate_from_csv, AblationReport, EvalSettings, ExperimentSpec, Variant, ABLATION_METRICS,
};
pub use features::{read_features, write_features, FEATURES_MAGIC};

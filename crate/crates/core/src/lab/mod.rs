//! Training, evaluation and the distillation experiments.

mod experiments;
mod records;
mod stats;
mod train;

pub use experiments::{
    default_noise_grid, distill, mean_student_accuracy, run_binary, run_indexed, run_reference_students,
    run_semi_supervised, run_semi_sweep, run_set1, run_set2, semi_means, BinaryRun, TargetSource, BINARY_REPEATS,
    SEMI_FRACTIONS, SEMI_SEEDS, SET1_GRID_LEN, SET1_NOISE_MAX, SET1_NOISE_MIN, SET2_REPEATS,
};
pub use records::{
    paired_values, parse_results_csv, read_results_csv, write_results_csv, ExperimentRecord, Field, Provenance,
    HEADER as RESULTS_HEADER,
};
pub use stats::{average_ranks, mean, pearson, sample_variance, spearman, welch_greater, WelchTest};
pub use train::{
    evaluate_accuracy, evaluate_distance_to_bcpd, mean_distances, predict_rows, train_model, train_on, train_on_with,
    TrainConfig, TrainHistory,
};

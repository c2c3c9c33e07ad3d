//! Grouped training, inference, classification and reporting metrics.

pub mod classify;
pub mod metrics;
pub mod train;

pub use classify::{
    classify_dba_nn, classify_dtw_nn, classify_nn, classify_ours, dba_representatives, mpce,
    predict_dtw_nn, predict_nn, predict_ours,
};
pub use metrics::{
    class_alignment, dataset_pairwise_loss, mtsa_objective, pairwise_sq_distance, timing_bench,
    AlignmentReport, ClassAlignment, ObjectiveForm, TimingRow,
};
pub use train::{
    infer_warp, train_class_warper, train_class_warper_detailed, validation_split, warped_average,
    ClassWarper, RestartSummary, TrainConfig,
};

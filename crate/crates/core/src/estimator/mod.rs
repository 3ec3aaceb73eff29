//! Random feature estimators for values missing on failed edges.

pub mod online;
pub mod protocol;
pub mod rff;

pub use online::{NeighborEstimator, StepSchedule};
pub use protocol::{
    build_feature_vector, fit_ridge, offline_pretrain, simulate_with_estimation, sparsify_run, EstimationTrace,
    EstimatorBank, EstimatorConfig, FeatureVector, Imputer, NodeHistory, SignalModel,
};
pub use rff::{kernel_exact, median_bandwidth, rff_features, ridge_closed_form, sample_spectral, Kernel, RffModel};

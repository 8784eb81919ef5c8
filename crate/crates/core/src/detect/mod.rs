//! Abrupt power-change detection.

pub mod ar;
pub mod calibrate;
pub mod gllr;
pub mod threshold;

pub use ar::{ar_cross_validate_nrmse, fit_ar, synth_fault_signal, ArModel};
pub use calibrate::{
    calibrate_difference_threshold, calibrate_difference_threshold_on_traces, calibrate_threshold,
    calibrate_threshold_on_traces, gllr_mean_run_length, run_length_histogram, Calibration,
};
pub use gllr::{
    default_drift, gllr_increment, gllr_step, postprocess, reset_after_alarm, score_vector,
    GllrDetector, GllrParams, GllrState, REBASELINE_SAMPLES,
};
pub use threshold::ThresholdDetector;

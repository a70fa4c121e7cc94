//! Evaluation metrics: overlap, boundary distance, calibration, uncertainty
//! protocols and the statistics used to compare them.

mod calibration;
mod overlap;
pub mod stats;
mod uncertainty;

pub use calibration::{
    ece, reliability_points, CalibrationAccumulator, CalibrationBin, CalibrationConvention,
    CalibrationTable, ReliabilityPoint,
};
pub use overlap::{boundary, dice, hausdorff};
pub use stats::{mann_whitney_u, pearson_r, MannWhitney, PValueMethod, Summary};
pub use uncertainty::{
    confusion_outcomes, mean_foreground_entropy, outcome_entropies, stratify_by_lesion_load, Domain,
    LesionStrata, Outcome, OutcomeBreakdown, OutcomeEntropies, OutcomeStats, ScanReport,
    DEFAULT_LOAD_THRESHOLDS_ML,
};

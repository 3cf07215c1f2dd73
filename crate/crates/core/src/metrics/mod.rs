//! Frame- and utterance-level error rates, detection latency and accuracy,
//! paired significance tests, and the evaluation report.

mod compare;
mod det;
mod report;
mod scores;
mod wilcoxon;

pub use compare::{compare_reports, ChangeCounts, Comparison, MetricComparison, RETAIN_EPS};
pub use det::{det_curve, eer, eer_from_det, DetCurve, DetPoint, EerResult};
pub use report::{
    eval_set, evaluate_suite, operating_threshold, EerSummary, EvalUtterance, InvertedOracleSource, MetricsReport,
    OracleSource, PosteriorSource, ReportMeta, UserReport, DEFAULT_DURATIONS_MS,
    REPORT_DET_POINTS, REPORT_SCHEMA_VERSION,
};
pub use scores::{
    accuracy_vs_duration, detection_accuracy, detection_latency, frame_score_pvad,
    frame_score_vad, lower_median_i64, median_f64, moving_average, target_onset,
    utterance_score, DurationAccuracy, Latency, FRAME_HOP_MS, SMOOTHING_FRAMES,
};
pub use wilcoxon::{wilcoxon_exact, wilcoxon_normal, wilcoxon_signed_rank, WilcoxonResult, EXACT_MAX_N};

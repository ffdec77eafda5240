//! Pairwise ordering evaluation: confusion-matrix metrics, accuracy by clip
//! separation, and CSV/SVG/JSON report files.

mod curve;
mod metrics;
mod render;
#[cfg(test)]
mod tests;

pub use curve::{separation_curve, spearman, CurvePoint, SeparationCurve};
pub use metrics::{
    evaluate, evaluation_pairs, score, Confusion, ConstantPredictor, DeltaRow, EvalReport, Flipped, ModelPredictor,
    OraclePredictor, PairPredictor, LOW_CONFIDENCE_PAIRS,
};
pub use render::{
    curve_csv, curve_svg, render_reports, report_file_name, results_csv, RunMeta, CURVE_CSV_FILE, CURVE_SVG_FILE,
    RESULTS_FILE, RUN_META_FILE,
};

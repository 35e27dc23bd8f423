//! Macro-F1 and the global/local test scores, plus per-round curve tables.

mod confusion;
mod curves;
mod eval;

pub use confusion::{macro_f1, ConfusionMatrix};
pub use curves::{record_curves, CurveRow, CurveTable};
pub use eval::{
    eval_global, eval_local, evaluate, harmonic_mean, ClientScores, EvalReport, LocalScores,
    EVAL_SCHEMA_VERSION,
};

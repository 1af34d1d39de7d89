//! Classification metrics and evaluation reports.

mod metrics;
mod report;

pub use metrics::{accuracy, auc, confusion, f1, f1_is_degenerate, ConfusionMatrix};
pub use report::*;

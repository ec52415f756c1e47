//! Global residual tail: threshold selection, GPD fit, diagnostics and report.

pub mod gpd;
pub mod report;
pub mod threshold;

pub use gpd::{bootstrap_xi_ci, gpd_ks_pvalue, pwm_fit, return_level, GpdFit, ReturnLevel};
pub use report::{build_tail_report, Regime, TailEstimate, TailReport, REPORT_LEVELS};
pub use threshold::{
    select_threshold, splice_loglik, RefusalReason, SpliceParams, ThresholdConfig, ThresholdFit,
    ThresholdOutcome,
};

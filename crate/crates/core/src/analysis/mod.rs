//! Exact logit shifts, first-order predictions, per-site decomposition,
//! fact margins and remainder-scaling diagnostics.
//!
//! Jacobians are always evaluated on the base trajectory; the perturbed model
//! is only used for exact quantities. Remainders are obtained by subtraction.

mod margin;
mod shift;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::model::SiteId;

pub use margin::{flip_criterion, margin_report, FlipDiagnostic, MarginReport, SiteMarginTerm};
pub use shift::{
    exact_logit_shift, first_order_single, first_order_total, logit_remainder, logit_remainder_with_trace,
    site_tangents, ShiftReport,
};
pub use sweep::{
    fit_loglog_slope, remainder_sweep, sweep_probe, validate_grid, ModelProbe, ShiftProbe, SweepResult, SweepRow,
    REMAINDER_FLOOR,
};

/// One site's first-order contribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteTerm {
    pub site: SiteId,
    pub first_order: f64,
}

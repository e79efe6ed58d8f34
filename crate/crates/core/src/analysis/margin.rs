use serde::{Deserialize, Serialize};

use super::shift::site_tangents;
use crate::error::{Error, Result};
use crate::lora::{apply, LoraSet};
use crate::model::{forward, SiteId, TransformerModel};

/// Per-site margin term together with its two single-token components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteMarginTerm {
    pub site: SiteId,
    /// `(u_doc - u_pre) . J v`
    pub margin: f64,
    pub doc: f64,
    pub pre: f64,
}

/// Fact margin `m = logit(y_doc) - logit(y_pre)` before and after the
/// perturbation, with its first-order decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub y_doc: usize,
    pub y_pre: usize,
    pub epsilon: f64,
    pub m0: f64,
    pub m: f64,
    pub first_order_margin: f64,
    pub per_site: Vec<SiteMarginTerm>,
    pub margin_remainder: f64,
    /// `m0 + first_order_margin > 0`
    pub flip_predicted: bool,
    /// `m > 0`
    pub flip_actual: bool,
}

pub fn margin_report(
    model: &TransformerModel,
    set: &LoraSet,
    tokens: &[usize],
    y_doc: usize,
    y_pre: usize,
) -> Result<MarginReport> {
    if y_doc == y_pre {
        return Err(Error::Input(format!("y_doc and y_pre must differ (both {y_doc})")));
    }
    let u_doc = model.unembedding_row(y_doc)?;
    let u_pre = model.unembedding_row(y_pre)?;
    let readout = u_doc.sub(&u_pre)?;

    let base = forward(model, tokens)?;
    let perturbed = forward(&apply(model, set)?, tokens)?;
    let m0 = base.logits.get(y_doc) - base.logits.get(y_pre);
    let m = perturbed.logits.get(y_doc) - perturbed.logits.get(y_pre);

    let per_site: Vec<SiteMarginTerm> = site_tangents(model, &base, set)?
        .into_iter()
        .map(|(site, t)| {
            Ok(SiteMarginTerm {
                site,
                margin: readout.dot(&t)?,
                doc: u_doc.dot(&t)?,
                pre: u_pre.dot(&t)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut first_order_margin = 0.0;
    for term in &per_site {
        first_order_margin += term.margin;
    }
    let margin_remainder = (m - m0) - first_order_margin;
    Ok(MarginReport {
        y_doc,
        y_pre,
        epsilon: set.epsilon(),
        m0,
        m,
        first_order_margin,
        per_site,
        margin_remainder,
        flip_predicted: m0 + first_order_margin > 0.0,
        flip_actual: m > 0.0,
    })
}

/// Both sides of the flip inequality
/// `first_order_margin > -m0 - margin_remainder`, evaluated with the
/// measured remainder, plus the remainder-free prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipDiagnostic {
    pub lhs: f64,
    pub rhs: f64,
    pub inequality_holds: bool,
    pub margin_positive: bool,
    /// `inequality_holds == margin_positive`; an algebraic identity.
    pub identity_consistent: bool,
    pub first_order_prediction: bool,
    pub prediction_correct: bool,
}

pub fn flip_criterion(report: &MarginReport) -> FlipDiagnostic {
    let lhs = report.first_order_margin;
    let rhs = -report.m0 - report.margin_remainder;
    let inequality_holds = lhs > rhs;
    let margin_positive = report.m > 0.0;
    FlipDiagnostic {
        lhs,
        rhs,
        inequality_holds,
        margin_positive,
        identity_consistent: inequality_holds == margin_positive,
        first_order_prediction: report.flip_predicted,
        prediction_correct: report.flip_predicted == report.flip_actual,
    }
}

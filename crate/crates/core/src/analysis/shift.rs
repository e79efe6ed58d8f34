use serde::{Deserialize, Serialize};

use super::SiteTerm;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::lora::{apply, LoraAdapter, LoraSet};
use crate::model::{forward, jvp_from_site, logit, ActivationTrace, SiteId, TransformerModel};

/// Exact shift, first-order prediction and remainder for one token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub token: usize,
    pub epsilon: f64,
    pub exact_shift: f64,
    pub first_order_total: f64,
    pub per_site: Vec<SiteTerm>,
    pub remainder: f64,
    pub delta_norm: f64,
}

fn check_trace(model: &TransformerModel, trace: &ActivationTrace) -> Result<()> {
    trace.check_fresh(model)
}

/// Tangent of the final residual for one adapter at global scale `epsilon`:
/// `J (epsilon * delta_w * z)` with `z` read from the base trace at every
/// position.
fn adapter_tangent(
    model: &TransformerModel,
    trace: &ActivationTrace,
    adapter: &LoraAdapter,
    epsilon: f64,
) -> Result<Vector> {
    adapter.check_for(model)?;
    let dw = adapter.delta_w()?;
    let v: Vec<Vector> = trace
        .site_input(adapter.site())?
        .iter()
        .map(|z| dw.matvec(z)?.scale(epsilon))
        .collect::<Result<_>>()?;
    jvp_from_site(model, adapter.site(), &trace.tokens, &v)
}

/// Final-residual tangent of every adapter in `set`, in site order.
pub fn site_tangents(
    model: &TransformerModel,
    trace: &ActivationTrace,
    set: &LoraSet,
) -> Result<Vec<(SiteId, Vector)>> {
    check_trace(model, trace)?;
    set.adapters()
        .map(|a| Ok((a.site(), adapter_tangent(model, trace, a, set.epsilon())?)))
        .collect()
}

/// `logit(apply(model, set)) - logit(model)` for token `y`.
pub fn exact_logit_shift(model: &TransformerModel, set: &LoraSet, tokens: &[usize], y: usize) -> Result<f64> {
    model.check_token(y)?;
    let base = forward(model, tokens)?;
    let perturbed = forward(&apply(model, set)?, tokens)?;
    Ok(perturbed.logits.get(y) - base.logits.get(y))
}

/// Single-site leading term `u_y . J (epsilon * (alpha/r) B A z)`.
///
/// `trace` must be the base trace of `model`.
pub fn first_order_single(
    model: &TransformerModel,
    trace: &ActivationTrace,
    adapter: &LoraAdapter,
    epsilon: f64,
    y: usize,
) -> Result<f64> {
    check_trace(model, trace)?;
    let t = adapter_tangent(model, trace, adapter, epsilon)?;
    logit(model, &t, y)
}

/// Sum of single-site leading terms over `set`, with the per-site breakdown.
pub fn first_order_total(
    model: &TransformerModel,
    trace: &ActivationTrace,
    set: &LoraSet,
    y: usize,
) -> Result<(f64, Vec<SiteTerm>)> {
    model.check_token(y)?;
    let per_site: Vec<SiteTerm> = site_tangents(model, trace, set)?
        .into_iter()
        .map(|(site, t)| {
            Ok(SiteTerm {
                site,
                first_order: logit(model, &t, y)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for term in &per_site {
        total += term.first_order;
    }
    Ok((total, per_site))
}

/// Full decomposition for one token using an already-recorded base trace.
pub fn logit_remainder_with_trace(
    model: &TransformerModel,
    trace: &ActivationTrace,
    set: &LoraSet,
    y: usize,
) -> Result<ShiftReport> {
    check_trace(model, trace)?;
    model.check_token(y)?;
    let perturbed = forward(&apply(model, set)?, &trace.tokens)?;
    let exact_shift = perturbed.logits.get(y) - trace.logits.get(y);
    let (first_order_total, per_site) = first_order_total(model, trace, set, y)?;
    let remainder = exact_shift - first_order_total;
    if !remainder.is_finite() {
        return Err(Error::NonFinite("logit_remainder"));
    }
    Ok(ShiftReport {
        token: y,
        epsilon: set.epsilon(),
        exact_shift,
        first_order_total,
        per_site,
        remainder,
        delta_norm: set.perturbation_norm()?,
    })
}

pub fn logit_remainder(model: &TransformerModel, set: &LoraSet, tokens: &[usize], y: usize) -> Result<ShiftReport> {
    let trace = forward(model, tokens)?;
    logit_remainder_with_trace(model, &trace, set, y)
}

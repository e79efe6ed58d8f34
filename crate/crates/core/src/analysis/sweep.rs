use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora::{scale, LoraSet};
use crate::model::{forward, ActivationTrace, TransformerModel};

use super::shift::logit_remainder_with_trace;

/// Remainders at or below this magnitude are treated as float noise and
/// excluded from the log-log fit.
pub const REMAINDER_FLOOR: f64 = 1e-13;

/// A one-parameter family whose exact shift and first-order prediction can
/// be evaluated at any scale `epsilon`.
pub trait ShiftProbe {
    /// `(exact_shift, first_order)` at scale `epsilon`.
    fn shift_at(&self, epsilon: f64) -> Result<(f64, f64)>;
}

/// Logit of one token under `scale(set, epsilon)`.
pub struct ModelProbe<'a> {
    model: &'a TransformerModel,
    trace: ActivationTrace,
    set: &'a LoraSet,
    y: usize,
}

impl<'a> ModelProbe<'a> {
    pub fn new(model: &'a TransformerModel, set: &'a LoraSet, tokens: &[usize], y: usize) -> Result<Self> {
        model.check_token(y)?;
        set.check_for(model)?;
        Ok(Self {
            model,
            trace: forward(model, tokens)?,
            set,
            y,
        })
    }
}

impl ShiftProbe for ModelProbe<'_> {
    fn shift_at(&self, epsilon: f64) -> Result<(f64, f64)> {
        let r = logit_remainder_with_trace(self.model, &self.trace, &scale(self.set, epsilon), self.y)?;
        Ok((r.exact_shift, r.first_order_total))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub exact_shift: f64,
    pub first_order: f64,
    pub remainder: f64,
    pub remainder_over_eps: f64,
    pub remainder_over_eps_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub eps_grid: Vec<f64>,
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log|remainder|` against `log epsilon`;
    /// absent when `linear_exact` is set.
    pub fitted_slope: Option<f64>,
    /// Every remainder fell below [`REMAINDER_FLOOR`].
    pub linear_exact: bool,
}

impl SweepResult {
    /// Whether `|remainder| / epsilon` strictly decreases over the last `k`
    /// grid points.
    pub fn tail_strictly_decreasing(&self, k: usize) -> bool {
        let n = self.rows.len();
        if k < 2 || k > n {
            return false;
        }
        self.rows[n - k..]
            .windows(2)
            .all(|w| w[1].remainder_over_eps.abs() < w[0].remainder_over_eps.abs())
    }
}

/// Grid must have at least three strictly positive, strictly decreasing
/// finite entries.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::Input(format!(
            "eps_grid needs at least 3 points, got {}",
            grid.len()
        )));
    }
    if let Some(bad) = grid.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::Input(format!(
            "eps_grid entries must be positive and finite, got {bad}"
        )));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Input("eps_grid must be strictly decreasing".into()));
    }
    Ok(())
}

/// OLS slope of `log|r|` on `log epsilon` over the `(epsilon, r)` pairs
/// with `|r| > REMAINDER_FLOOR`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(e, r)| *e > 0.0 && r.abs() > REMAINDER_FLOOR && r.is_finite())
        .map(|(e, r)| (e.ln(), r.abs().ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable rows above {REMAINDER_FLOOR:e}, need 2",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in &usable {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all usable rows share one epsilon".into()));
    }
    Ok(sxy / sxx)
}

/// Evaluates `probe` over `grid` and fits the remainder order.
pub fn sweep_probe(probe: &dyn ShiftProbe, grid: &[f64]) -> Result<SweepResult> {
    validate_grid(grid)?;
    let rows: Vec<SweepRow> = grid
        .iter()
        .map(|&epsilon| {
            let (exact_shift, first_order) = probe.shift_at(epsilon)?;
            let remainder = exact_shift - first_order;
            Ok(SweepRow {
                epsilon,
                exact_shift,
                first_order,
                remainder,
                remainder_over_eps: remainder / epsilon,
                remainder_over_eps_sq: remainder / (epsilon * epsilon),
            })
        })
        .collect::<Result<_>>()?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.epsilon, r.remainder)).collect();
    let linear_exact = points.iter().all(|(_, r)| r.abs() <= REMAINDER_FLOOR);
    let fitted_slope = if linear_exact {
        None
    } else {
        Some(fit_loglog_slope(&points)?)
    };
    Ok(SweepResult {
        eps_grid: grid.to_vec(),
        rows,
        fitted_slope,
        linear_exact,
    })
}

pub fn remainder_sweep(
    model: &TransformerModel,
    set: &LoraSet,
    tokens: &[usize],
    y: usize,
    grid: &[f64],
) -> Result<SweepResult> {
    validate_grid(grid)?;
    sweep_probe(&ModelProbe::new(model, set, tokens, y)?, grid)
}

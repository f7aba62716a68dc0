//! Learnable per-loss noise weighting.
//!
//! Each component contributes `L_m / (2 σ_m²) + ln(1 + σ_m²)` to the total,
//! with `σ_m² = exp(s_m)` so the variance stays positive for any real `s_m`.

use crate::diff::{Graph, NodeId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyState {
    log_vars: Vec<f64>,
}

impl UncertaintyState {
    /// `m` components at `s = 0` (σ² = 1, weight 0.5 each).
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("need at least one loss component".into()));
        }
        Ok(UncertaintyState { log_vars: vec![0.0; m] })
    }

    pub fn from_log_vars(log_vars: Vec<f64>) -> Result<Self> {
        if log_vars.is_empty() || log_vars.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid log-variances {log_vars:?}")));
        }
        Ok(UncertaintyState { log_vars })
    }

    pub fn len(&self) -> usize {
        self.log_vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_vars.is_empty()
    }

    pub fn log_vars(&self) -> &[f64] {
        &self.log_vars
    }

    pub fn log_vars_mut(&mut self) -> &mut [f64] {
        &mut self.log_vars
    }

    pub fn sigma2(&self) -> Vec<f64> {
        self.log_vars.iter().map(|s| s.exp()).collect()
    }

    /// `1 / (2 σ_m²)` per component.
    pub fn effective_weights(&self) -> Vec<f64> {
        self.log_vars.iter().map(|s| 0.5 * (-s).exp()).collect()
    }
}

pub fn combine(loss_values: &[f64], state: &UncertaintyState) -> Result<f64> {
    if loss_values.len() != state.len() {
        return Err(Error::Shape(format!(
            "{} loss values for {} noise parameters",
            loss_values.len(),
            state.len()
        )));
    }
    if let Some(bad) = loss_values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite loss value {bad}")));
    }
    Ok(loss_values
        .iter()
        .zip(state.log_vars())
        .map(|(l, s)| 0.5 * l * (-s).exp() + s.exp().ln_1p())
        .sum())
}

/// Graph form of [`combine`]; `log_vars` are scalar nodes, one per loss.
pub fn build_combine(g: &mut Graph, losses: &[NodeId], log_vars: &[NodeId]) -> Result<NodeId> {
    if losses.len() != log_vars.len() || losses.is_empty() {
        return Err(Error::Shape(format!(
            "{} losses for {} noise parameters",
            losses.len(),
            log_vars.len()
        )));
    }
    let one = g.scalar(1.0);
    let mut total = None;
    for (&l, &s) in losses.iter().zip(log_vars) {
        let neg = g.scale(s, -1.0);
        let precision = g.exp(neg);
        let weighted = g.mul(l, precision);
        let data_term = g.scale(weighted, 0.5);
        let var = g.exp(s);
        let shifted = g.add(one, var);
        let reg = g.log(shifted);
        let term = g.add(data_term, reg);
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    Ok(total.expect("at least one component"))
}

/// σ² minimizing one component at a fixed loss value `l`: the positive root
/// of `2u² − l·u − l = 0`, or 0 when `l = 0`.
pub fn stationary_sigma2(l: f64) -> Result<f64> {
    if !(l >= 0.0) || !l.is_finite() {
        return Err(Error::InvalidArgument(format!("loss value must be finite and >= 0, got {l}")));
    }
    Ok((l + (l * l + 8.0 * l).sqrt()) / 4.0)
}

/// Analytic `∂/∂s` of one component at fixed loss value.
pub fn log_var_gradient(l: f64, s: f64) -> f64 {
    -0.5 * l * (-s).exp() + s.exp() / (1.0 + s.exp())
}

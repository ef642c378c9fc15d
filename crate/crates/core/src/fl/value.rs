use std::collections::BTreeSet;

use super::{ClientReport, CommValue, FlError};
use crate::nn::GradSnapshot;

/// `‖prev − cur‖² · (1 + N/1000)^acc`.
///
/// The gradient-change term is small for a client whose update looks like the
/// last one (a stale client); the accuracy exponent separates clients more as
/// the federation grows.
pub fn comm_value(
    prev_grad: &GradSnapshot,
    cur_grad: &GradSnapshot,
    n_clients: usize,
    acc: f64,
) -> Result<f64, FlError> {
    if prev_grad.len() != cur_grad.len() {
        return Err(FlError::LengthMismatch(prev_grad.len(), cur_grad.len()));
    }
    if !acc.is_finite() || !(0.0..=1.0).contains(&acc) {
        return Err(FlError::Accuracy(acc));
    }
    if n_clients == 0 {
        return Err(FlError::Invalid("client count 0".into()));
    }
    let diff_sq: f64 = prev_grad
        .values
        .iter()
        .zip(&cur_grad.values)
        .map(|(p, c)| (p - c) * (p - c))
        .sum();
    if !diff_sq.is_finite() {
        return Err(FlError::NonFinite("comm_value"));
    }
    let base = 1.0 + n_clients as f64 / 1e3;
    Ok(diff_sq * base.powf(acc))
}

/// Clients whose value is at least the mean value of all reporting clients.
///
/// Bootstrap reports (no previous gradient yet) are always selected and sit
/// outside the mean; the threshold is taken over the finite values only.
pub fn select_clients(reports: &[ClientReport]) -> Result<BTreeSet<u16>, FlError> {
    if reports.is_empty() {
        return Err(FlError::Empty("select"));
    }
    let finite: Vec<f64> = reports.iter().filter_map(|r| r.value.finite()).collect();
    if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(FlError::NonFinite("select_clients"));
    }
    let mean = if finite.is_empty() {
        0.0
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(reports
        .iter()
        .filter(|r| match r.value {
            CommValue::Bootstrap => true,
            CommValue::Value(v) => v >= mean,
        })
        .map(|r| r.client_id)
        .collect())
}

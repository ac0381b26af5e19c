//! Naive baseline for the overlapping-window target `r_{k,k'}`.
//!
//! At prediction time `t` the baseline classifies `x_{k,k'}(t-1)`, where
//!
//! ```text
//! x_{k,k'}(s) = r_{k,k'}(s)     if s <= t - k'
//!             = r_{k,t-s}(s)    if t - k' < s < t
//! ```
//!
//! i.e. the target with its future average truncated to the mids observed up
//! to and including `t`. It needs no training beyond the shared threshold.

use crate::labeling::{classify, modified_return, Label, LabelError, LabelingPolicy, TargetKind};

/// Truncated target `x_{k,k'}(s)` as seen from time `t`.
pub fn truncated_series(m: &[f64], s: usize, t: usize, k: usize, k_prime: usize) -> Result<f64, LabelError> {
    if s >= t || t >= m.len() {
        return Err(LabelError::IndexOutOfRange {
            t: s,
            horizon: k_prime,
            len: m.len(),
        });
    }
    let observable = t - s;
    modified_return(m, s, k, observable.min(k_prime))
}

/// Predicted class for the target at `t`, using only `m[0..=t]`.
pub fn naive_predict(m: &[f64], t: usize, policy: &LabelingPolicy) -> Result<Label, LabelError> {
    if policy.target != TargetKind::RkK {
        return Err(LabelError::InvalidPolicy(
            "naive baseline is defined for the r_{k,k'} target",
        ));
    }
    if t == 0 || t >= m.len() {
        return Err(LabelError::IndexOutOfRange {
            t,
            horizon: policy.k,
            len: m.len(),
        });
    }
    let x = truncated_series(&m[..=t], t - 1, t, policy.k, policy.k_prime)?;
    Ok(classify(x, policy.alpha))
}

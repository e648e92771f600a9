//! Unique and shared explained variance of two feature sets from the
//! cross-validated fits of each set alone and both together.

use serde::{Deserialize, Serialize};

use crate::crossval::pearson_r;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariancePartition {
    pub r2_a: f64,
    pub r2_p: f64,
    pub r2_ap: f64,
    pub unique_a: f64,
    pub unique_p: f64,
    pub shared: f64,
}

/// Components are reported raw; cross-validation noise can make any of
/// them negative.
pub fn partition(r2_a: f64, r2_p: f64, r2_ap: f64) -> VariancePartition {
    let unique_a = r2_ap - r2_p;
    let unique_p = r2_ap - r2_a;
    VariancePartition {
        r2_a,
        r2_p,
        r2_ap,
        unique_a,
        unique_p,
        shared: r2_a + r2_p - r2_ap,
    }
}

/// Squared held-out Pearson correlation.
pub fn r_squared(pred: &[f64], obs: &[f64]) -> Result<f64> {
    let r = pearson_r(pred, obs)?;
    Ok(r * r)
}

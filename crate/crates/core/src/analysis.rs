//! Summaries over fitted encoding models: normalized weight maps and
//! paired differences in held-out correlation.

use nalgebra::{DMatrix, DVector};

use crate::crossval::EncodingResult;
use crate::error::{Error, Result};

/// Features × channels, each column scaled so its largest entry is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    pub matrix: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub channel_names: Vec<String>,
}

/// `Σ_τ |w(f, τ)|` for a features × lags weight matrix.
pub fn lag_summed_magnitude(w: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(w.nrows(), |f, _| w.row(f).iter().map(|v| v.abs()).sum())
}

/// Averages lag-summed magnitudes over subjects, then normalizes each
/// channel by its maximum. `subjects[s][c]` is the features × lags weight
/// matrix of channel `c`; only `rows` are kept.
pub fn weight_map(
    subjects: &[Vec<DMatrix<f64>>],
    rows: &[usize],
    feature_names: Vec<String>,
    channel_names: Vec<String>,
) -> Result<WeightMap> {
    let first = subjects.first().ok_or(Error::EmptyInput)?;
    let n_ch = first.len();
    if n_ch == 0 {
        return Err(Error::EmptyInput);
    }
    if channel_names.len() != n_ch || feature_names.len() != rows.len() {
        return Err(Error::LengthMismatch {
            left: channel_names.len() + feature_names.len(),
            right: n_ch + rows.len(),
        });
    }
    let mut sum = DMatrix::<f64>::zeros(rows.len(), n_ch);
    for subject in subjects {
        if subject.len() != n_ch {
            return Err(Error::ChannelMismatch {
                left: n_ch,
                right: subject.len(),
            });
        }
        for (c, w) in subject.iter().enumerate() {
            let mag = lag_summed_magnitude(w);
            for (i, &f) in rows.iter().enumerate() {
                if f >= mag.len() {
                    return Err(Error::LengthMismatch {
                        left: f,
                        right: mag.len(),
                    });
                }
                sum[(i, c)] += mag[f];
            }
        }
    }
    let mut matrix = sum / subjects.len() as f64;
    normalize_columns(&mut matrix);
    Ok(WeightMap {
        matrix,
        feature_names,
        channel_names,
    })
}

/// Divides each column by its maximum; all-zero columns stay zero.
pub fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let max = col.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            col /= max;
        }
    }
}

/// `r(a) − r(b)` for the same subject, channel and mode under the same
/// fold plan.
pub fn delta_r(a: &EncodingResult, b: &EncodingResult) -> Result<f64> {
    if a.plan_fingerprint != b.plan_fingerprint
        || a.subject_id != b.subject_id
        || a.channel != b.channel
        || a.mode != b.mode
    {
        return Err(Error::FoldPlanMismatch);
    }
    Ok(a.r_mean_fisher - b.r_mean_fisher)
}

/// Significance stars for a (corrected) p value.
pub fn stars(p: f64) -> &'static str {
    if p < 1e-4 {
        "****"
    } else if p < 1e-3 {
        "***"
    } else if p < 1e-2 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}

/// Mean and standard error of the mean (sample standard deviation).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

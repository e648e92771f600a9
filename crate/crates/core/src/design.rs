//! Time-lagged design matrices.
//!
//! Column `(f, τ)` at row `t` holds feature `f` at row `t − τ/step`, with
//! zeros outside the trial. Columns are lag-major: all features at the first
//! lag, then all features at the next lag, and so on. A positive lag means
//! the feature precedes the response.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LagSpec {
    pub min_ms: i64,
    pub max_ms: i64,
    pub step_ms: i64,
    pub sample_rate_hz: f64,
}

impl Default for LagSpec {
    fn default() -> Self {
        Self {
            min_ms: -300,
            max_ms: 300,
            step_ms: 20,
            sample_rate_hz: 50.0,
        }
    }
}

impl LagSpec {
    pub fn validate(&self) -> Result<()> {
        let one_sample = (self.step_ms as f64 * self.sample_rate_hz - 1000.0).abs() < 1e-9;
        if self.step_ms <= 0 || !one_sample {
            return Err(Error::Config(format!(
                "lag step {} ms must equal one sample at {} Hz",
                self.step_ms, self.sample_rate_hz
            )));
        }
        if self.min_ms > 0 || self.max_ms < 0 {
            return Err(Error::Config("lag window must contain zero".into()));
        }
        if self.min_ms % self.step_ms != 0 || self.max_ms % self.step_ms != 0 {
            return Err(Error::Config("lag bounds must be multiples of the step".into()));
        }
        Ok(())
    }

    /// Lags in samples, ascending.
    pub fn lags_samples(&self) -> Vec<i64> {
        (self.min_ms / self.step_ms..=self.max_ms / self.step_ms).collect()
    }

    pub fn lags_ms(&self) -> Vec<i64> {
        self.lags_samples().into_iter().map(|k| k * self.step_ms).collect()
    }

    pub fn n_lags(&self) -> usize {
        ((self.max_ms - self.min_ms) / self.step_ms + 1) as usize
    }

    pub fn lag_index_of_ms(&self, lag_ms: i64) -> Option<usize> {
        self.lags_ms().iter().position(|&l| l == lag_ms)
    }
}

/// Column of feature `f` at lag index `lag_idx` for `n_features` features.
pub fn column_index(f: usize, lag_idx: usize, n_features: usize) -> usize {
    lag_idx * n_features + f
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaggedDesign {
    pub matrix: DMatrix<f64>,
    pub feature_count: usize,
    pub lags: LagSpec,
}

impl LaggedDesign {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column_of(&self, f: usize, lag_ms: i64) -> Option<usize> {
        let k = self.lags.lag_index_of_ms(lag_ms)?;
        (f < self.feature_count).then(|| column_index(f, k, self.feature_count))
    }
}

/// Builds the lagged design for one trial. The trial must be longer than
/// the number of lags.
pub fn build_lagged(x: &FeatureMatrix, spec: &LagSpec) -> Result<LaggedDesign> {
    spec.validate()?;
    if x.n_frames() <= spec.n_lags() {
        return Err(Error::Degenerate(format!(
            "{} frames is not more than {} lags",
            x.n_frames(),
            spec.n_lags()
        )));
    }
    if (x.sample_rate_hz - spec.sample_rate_hz).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "features at {} Hz but lags defined at {} Hz",
            x.sample_rate_hz, spec.sample_rate_hz
        )));
    }
    Ok(lag_matrix(&x.data, spec))
}

/// Lagged expansion of a raw `T × F` matrix.
pub fn lag_matrix(x: &DMatrix<f64>, spec: &LagSpec) -> LaggedDesign {
    let (t_len, f_count) = x.shape();
    let lags = spec.lags_samples();
    let mut matrix = DMatrix::zeros(t_len, f_count * lags.len());
    for (k, &lag) in lags.iter().enumerate() {
        for f in 0..f_count {
            let src = x.column(f);
            let mut dst = matrix.column_mut(column_index(f, k, f_count));
            for t in 0..t_len {
                let s = t as i64 - lag;
                if s >= 0 && (s as usize) < t_len {
                    dst[t] = src[s as usize];
                }
            }
        }
    }
    LaggedDesign {
        matrix,
        feature_count: f_count,
        lags: spec.clone(),
    }
}

/// Stacks per-trial designs row-wise; lags never cross trial boundaries.
pub fn stack_designs<'a>(designs: impl IntoIterator<Item = &'a LaggedDesign>) -> Result<DMatrix<f64>> {
    let designs: Vec<&LaggedDesign> = designs.into_iter().collect();
    let Some(first) = designs.first() else {
        return Err(Error::EmptyInput);
    };
    let cols = first.n_columns();
    if let Some(d) = designs.iter().find(|d| d.n_columns() != cols) {
        return Err(Error::LengthMismatch {
            left: cols,
            right: d.n_columns(),
        });
    }
    let rows: usize = designs.iter().map(|d| d.n_rows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for d in designs {
        out.rows_mut(r, d.n_rows()).copy_from(&d.matrix);
        r += d.n_rows();
    }
    Ok(out)
}

/// Weight vector to a `F × |L|` matrix; entry `(f, k)` multiplies feature
/// `f` at lag index `k`.
pub fn reshape_weights(w: &DVector<f64>, n_features: usize, lags: &LagSpec) -> Result<DMatrix<f64>> {
    let n_lags = lags.n_lags();
    if w.len() != n_features * n_lags {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: n_features * n_lags,
        });
    }
    Ok(DMatrix::from_fn(n_features, n_lags, |f, k| w[column_index(f, k, n_features)]))
}

/// Inverse of [`reshape_weights`].
pub fn flatten_weights(m: &DMatrix<f64>) -> DVector<f64> {
    let (f_count, n_lags) = m.shape();
    let mut w = DVector::zeros(f_count * n_lags);
    for k in 0..n_lags {
        for f in 0..f_count {
            w[column_index(f, k, f_count)] = m[(f, k)];
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    fn fm(data: DMatrix<f64>) -> FeatureMatrix {
        let names = (0..data.ncols()).map(|i| format!("f{i}")).collect();
        FeatureMatrix {
            data,
            sample_rate_hz: 50.0,
            feature_names: names,
            kind: FeatureKind::Articulatory,
        }
    }

    fn small_lags() -> LagSpec {
        LagSpec {
            min_ms: -20,
            max_ms: 20,
            step_ms: 20,
            sample_rate_hz: 50.0,
        }
    }

    #[test]
    fn default_window_has_31_lags() {
        let spec = LagSpec::default();
        assert_eq!(spec.n_lags(), 31);
        assert_eq!(spec.lags_ms().first(), Some(&-300));
        assert_eq!(spec.lags_ms().last(), Some(&300));
    }

    #[test]
    fn hand_shifted_columns() {
        let x = fm(DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]));
        let d = build_lagged(&x, &small_lags()).unwrap();
        let col = |k: usize| d.matrix.column(k).iter().copied().collect::<Vec<_>>();
        assert_eq!(col(0), vec![2.0, 3.0, 4.0, 5.0, 0.0]);
        assert_eq!(col(1), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(col(2), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_lag_is_identity() {
        let x = fm(DMatrix::from_fn(6, 3, |t, f| (t * 7 + f) as f64));
        let spec = LagSpec {
            min_ms: 0,
            max_ms: 0,
            ..LagSpec::default()
        };
        assert_eq!(build_lagged(&x, &spec).unwrap().matrix, x.data);
    }

    #[test]
    fn column_count_two_features() {
        let x = fm(DMatrix::from_element(40, 2, 1.0));
        let d = build_lagged(&x, &LagSpec::default()).unwrap();
        assert_eq!(d.n_columns(), 62);
    }

    #[test]
    fn short_trial_is_degenerate() {
        let x = fm(DMatrix::from_element(31, 1, 1.0));
        assert!(matches!(
            build_lagged(&x, &LagSpec::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn planted_weight_lands_at_its_feature_and_lag() {
        let spec = LagSpec::default();
        let f_count = 5;
        let k = spec.lag_index_of_ms(100).unwrap();
        let mut w = DVector::zeros(f_count * spec.n_lags());
        w[column_index(3, k, f_count)] = 2.5;
        let m = reshape_weights(&w, f_count, &spec).unwrap();
        assert_eq!(m[(3, k)], 2.5);
        assert_eq!(m.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(flatten_weights(&m), w);
        assert!(reshape_weights(&w, 4, &spec).is_err());
    }

    #[test]
    fn single_feature_reshape_is_row() {
        let spec = small_lags();
        let w = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = reshape_weights(&w, 1, &spec).unwrap();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn impulse_produces_one_entry_per_lag() {
        let spec = LagSpec::default();
        let mut data = DMatrix::zeros(100, 2);
        data[(50, 1)] = 1.0;
        let d = build_lagged(&fm(data), &spec).unwrap();
        assert_eq!(d.matrix.iter().filter(|v| **v != 0.0).count(), 31);
        for (k, lag) in spec.lags_samples().into_iter().enumerate() {
            let row = (50 + lag) as usize;
            assert_eq!(d.matrix[(row, column_index(1, k, 2))], 1.0);
        }
    }

    #[test]
    fn stacked_trials_do_not_leak() {
        let spec = small_lags();
        let a = build_lagged(&fm(DMatrix::from_element(4, 1, 1.0)), &spec).unwrap();
        let b = build_lagged(&fm(DMatrix::from_element(4, 1, 2.0)), &spec).unwrap();
        let s = stack_designs([&a, &b]).unwrap();
        // lag +1 column at the first row of trial b reads zero, not trial a
        assert_eq!(s[(4, 2)], 0.0);
        // lag -1 column at the last row of trial a reads zero, not trial b
        assert_eq!(s[(3, 0)], 0.0);
    }
}

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Uniformly sampled real-valued channels (time × channel).
///
/// Storage is column-major, so every channel is one contiguous slice.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelSeries {
    data: DMatrix<f64>,
    sample_rate_hz: f64,
    channel_names: Vec<String>,
}

impl MultiChannelSeries {
    pub fn new(data: DMatrix<f64>, sample_rate_hz: f64, channel_names: Vec<String>) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Format(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if channel_names.len() != data.ncols() {
            return Err(Error::Format(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("series data"));
        }
        Ok(Self {
            data,
            sample_rate_hz,
            channel_names,
        })
    }

    /// Builds a series from per-channel sample vectors with generated names `ch1..chN`.
    pub fn from_channels(channels: &[Vec<f64>], sample_rate_hz: f64) -> Result<Self> {
        let names = (1..=channels.len()).map(|i| format!("ch{i}")).collect();
        Self::from_named_channels(channels, sample_rate_hz, names)
    }

    pub fn from_named_channels(
        channels: &[Vec<f64>],
        sample_rate_hz: f64,
        names: Vec<String>,
    ) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if let Some(bad) = channels.iter().find(|c| c.len() != len) {
            return Err(Error::LengthMismatch {
                left: len,
                right: bad.len(),
            });
        }
        let flat: Vec<f64> = channels.iter().flatten().copied().collect();
        Self::new(DMatrix::from_vec(len, channels.len(), flat), sample_rate_hz, names)
    }

    /// Same shape, names and rate as `self`, new per-channel samples.
    pub(crate) fn with_channels(&self, channels: Vec<Vec<f64>>, sample_rate_hz: f64) -> Result<Self> {
        Self::from_named_channels(&channels, sample_rate_hz, self.channel_names.clone())
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.data.nrows();
        &self.data.as_slice()[c * n..(c + 1) * n]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_channels()).map(move |c| self.channel(c))
    }

    /// Frame `t` as a vector across channels.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        self.data.row(t).iter().copied().collect()
    }

    /// Rows `start..end`, all channels.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.n_frames() {
            return Err(Error::LengthMismatch {
                left: end,
                right: self.n_frames(),
            });
        }
        let data = self.data.rows(start, end - start).into_owned();
        Ok(Self {
            data,
            sample_rate_hz: self.sample_rate_hz,
            channel_names: self.channel_names.clone(),
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames() as f64 / self.sample_rate_hz
    }
}

//! Raw multichannel EMG to 50 Hz standardized envelopes.
//!
//! The chain is band-pass, notch comb, analytic-signal envelope, decimation
//! and per-channel z-scoring. All filtering is applied forward and backward,
//! so no stage introduces group delay.

mod filter;
mod series;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub use filter::{butter_bandpass, butter_lowpass, iir_notch, Biquad, Sos};
pub use series::MultiChannelSeries;

use crate::error::{Error, Result};

/// Butterworth order of the decimation anti-alias low-pass.
const ANTI_ALIAS_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub notch_base_hz: f64,
    pub notch_max_hz: f64,
    pub notch_q: f64,
    pub butterworth_order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            band_low_hz: 10.0,
            band_high_hz: 450.0,
            notch_base_hz: 60.0,
            notch_max_hz: 450.0,
            notch_q: 30.0,
            butterworth_order: 4,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        if !(self.band_low_hz > 0.0 && self.band_low_hz < self.band_high_hz) {
            return Err(Error::InvalidSpec(format!(
                "band edges must satisfy 0 < low < high, got {}..{}",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if self.band_high_hz >= nyquist {
            return Err(Error::InvalidSpec(format!(
                "upper band edge {} Hz is not below Nyquist {} Hz",
                self.band_high_hz, nyquist
            )));
        }
        if !(self.notch_base_hz > 0.0) || !(self.notch_q > 0.0) {
            return Err(Error::InvalidSpec("notch base frequency and Q must be positive".into()));
        }
        if self.butterworth_order == 0 {
            return Err(Error::InvalidSpec("Butterworth order must be positive".into()));
        }
        Ok(())
    }

    /// Notch centers `base, 2·base, ...` up to `notch_max_hz` inclusive.
    pub fn notch_frequencies(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 1.0;
        while k * self.notch_base_hz <= self.notch_max_hz + 1e-9 {
            out.push(k * self.notch_base_hz);
            k += 1.0;
        }
        out
    }

    pub fn bandpass_design(&self, sample_rate_hz: f64) -> Result<Sos> {
        self.validate(sample_rate_hz)?;
        Ok(butter_bandpass(
            self.butterworth_order,
            self.band_low_hz,
            self.band_high_hz,
            sample_rate_hz,
        ))
    }

    pub fn notch_design(&self, sample_rate_hz: f64) -> Result<Sos> {
        self.validate(sample_rate_hz)?;
        let nyquist = sample_rate_hz / 2.0;
        let freqs = self.notch_frequencies();
        if let Some(f) = freqs.iter().find(|&&f| f >= nyquist) {
            return Err(Error::InvalidSpec(format!(
                "notch at {f} Hz is not below Nyquist {nyquist} Hz"
            )));
        }
        Ok(Sos::new(
            freqs
                .into_iter()
                .map(|f| iir_notch(f, self.notch_q, sample_rate_hz))
                .collect(),
        ))
    }
}

fn map_channels(
    x: &MultiChannelSeries,
    rate: f64,
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<MultiChannelSeries> {
    x.with_channels(x.channels().map(f).collect(), rate)
}

/// Zero-phase Butterworth band-pass.
pub fn bandpass_filter(x: &MultiChannelSeries, spec: &FilterSpec) -> Result<MultiChannelSeries> {
    let sos = spec.bandpass_design(x.sample_rate_hz())?;
    map_channels(x, x.sample_rate_hz(), |c| sos.filtfilt(c))
}

/// Zero-phase cascade of notches at the line frequency and its harmonics.
pub fn notch_comb(x: &MultiChannelSeries, spec: &FilterSpec) -> Result<MultiChannelSeries> {
    let sos = spec.notch_design(x.sample_rate_hz())?;
    map_channels(x, x.sample_rate_hz(), |c| sos.filtfilt(c))
}

/// Magnitude of the analytic signal of one channel.
pub fn analytic_envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    // one-sided spectrum: keep DC (and Nyquist for even n), double positive bins
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *v *= h;
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|v| v.norm() * scale).collect()
}

/// Per-channel envelope via the frequency-domain analytic signal.
pub fn hilbert_envelope(x: &MultiChannelSeries) -> Result<MultiChannelSeries> {
    if x.is_empty() || x.n_channels() == 0 {
        return Err(Error::EmptyInput);
    }
    map_channels(x, x.sample_rate_hz(), analytic_envelope)
}

/// Integer decimation factor from `from_hz` to `to_hz`.
pub fn decimation_factor(from_hz: f64, to_hz: f64) -> Result<usize> {
    let ratio = from_hz / to_hz;
    let k = ratio.round();
    if !(to_hz > 0.0) || k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
        return Err(Error::NonIntegerRatio { from_hz, to_hz });
    }
    Ok(k as usize)
}

/// Anti-alias low-pass at 0.8 × the target Nyquist, then keep every k-th
/// sample. Output length is `round(n / k)`.
pub fn decimate(x: &MultiChannelSeries, target_rate_hz: f64) -> Result<MultiChannelSeries> {
    let k = decimation_factor(x.sample_rate_hz(), target_rate_hz)?;
    if k == 1 {
        return Ok(x.clone());
    }
    let n = x.n_frames();
    let n_out = ((n + k / 2) / k).max(usize::from(n > 0));
    let sos = butter_lowpass(ANTI_ALIAS_ORDER, 0.8 * target_rate_hz / 2.0, x.sample_rate_hz());
    map_channels(x, target_rate_hz, |c| {
        let smooth = sos.filtfilt(c);
        smooth.into_iter().step_by(k).take(n_out).collect()
    })
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardize each channel to mean 0 and population standard deviation 1.
pub fn zscore_per_channel(x: &MultiChannelSeries) -> Result<MultiChannelSeries> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = Vec::with_capacity(x.n_channels());
    for (c, ch) in x.channels().enumerate() {
        let (mean, std) = mean_std(ch);
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::ConstantChannel(x.channel_names()[c].clone()));
        }
        // second pass removes the residual mean left by rounding
        let mut z: Vec<f64> = ch.iter().map(|v| (v - mean) / std).collect();
        let (m2, s2) = mean_std(&z);
        z.iter_mut().for_each(|v| *v = (*v - m2) / s2);
        out.push(z);
    }
    x.with_channels(out, x.sample_rate_hz())
}

/// Full chain for one raw trial: band-pass, notch comb, envelope, decimate
/// to `target_rate_hz`, z-score.
pub fn emg_to_envelope(
    raw: &MultiChannelSeries,
    spec: &FilterSpec,
    target_rate_hz: f64,
) -> Result<MultiChannelSeries> {
    let band = bandpass_filter(raw, spec)?;
    let clean = notch_comb(&band, spec)?;
    let env = hilbert_envelope(&clean)?;
    let low = decimate(&env, target_rate_hz)?;
    zscore_per_channel(&low)
}

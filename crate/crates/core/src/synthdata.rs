//! Synthetic subjects with known temporal response functions.
//!
//! Articulatory tracks are low-passed noise, standardized over the
//! speaking interval and zero outside it. Phoneme labels are the nearest
//! entry of a fixed codebook to each span's mean articulatory state, so the
//! phoneme stream carries no information the tracks lack. Envelopes are the
//! lagged convolution of the kinematic tracks with planted kernels plus
//! white noise.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::{flatten_weights, lag_matrix, LagSpec};
use crate::error::{Error, Result};
use crate::features::{PhonemeAlignment, PhonemeInventory, PhonemeSpan, SpeechMode, FEATURE_RATE_HZ, SPARC_COLUMNS};
use crate::preprocess::{butter_bandpass, MultiChannelSeries};
use crate::stats::{derive_seed, hash_label};

const CODEBOOK_SEED: u64 = 0xc0de_b00c;

/// Scale of codebook prototypes relative to unit-variance tracks; span
/// means are smoother than single frames.
const CODEBOOK_SCALE: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeEffect {
    /// Multiplies the clean envelope.
    pub amplitude: f64,
    /// Noise level relative to the unscaled envelope; `None` uses the
    /// spec-wide value.
    pub snr_db: Option<f64>,
    /// Time-warp strength applied to the produced envelope.
    pub warp_strength: f64,
}

impl Default for ModeEffect {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            snr_db: None,
            warp_strength: 0.0,
        }
    }
}

impl ModeEffect {
    pub fn default_for(mode: SpeechMode) -> Self {
        match mode {
            SpeechMode::Aloud => Self::default(),
            SpeechMode::Mimed => Self {
                amplitude: 0.9,
                snr_db: None,
                warp_strength: 0.15,
            },
            SpeechMode::Subvocal => Self {
                amplitude: 0.5,
                snr_db: Some(0.0),
                warp_strength: 0.15,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub features_per_channel: usize,
    /// Bump centers are drawn from `±center_range_ms`.
    pub center_range_ms: f64,
    pub width_ms: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            features_per_channel: 3,
            center_range_ms: 200.0,
            width_ms: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_sentences: usize,
    pub repetitions: usize,
    pub n_channels: usize,
    pub n_artic_features: usize,
    pub phoneme_count: usize,
    /// Inclusive range of speaking frames per sentence.
    pub speaking_frames: (usize, usize),
    /// Silence frames before and after speech.
    pub silence_frames: usize,
    /// Inclusive range of phoneme span lengths in frames.
    pub span_frames: (usize, usize),
    pub feature_cutoff_hz: f64,
    /// Envelope SNR in dB; `inf` gives noiseless envelopes.
    pub snr_db: f64,
    pub kernel: KernelSpec,
    pub lags: LagSpec,
    pub mode_effects: BTreeMap<SpeechMode, ModeEffect>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_sentences: 20,
            repetitions: 1,
            n_channels: 8,
            n_artic_features: 12,
            phoneme_count: 40,
            speaking_frames: (60, 100),
            silence_frames: 10,
            span_frames: (3, 9),
            feature_cutoff_hz: 8.0,
            snr_db: 10.0,
            kernel: KernelSpec::default(),
            lags: LagSpec::default(),
            mode_effects: SpeechMode::ALL.iter().map(|&m| (m, ModeEffect::default_for(m))).collect(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.n_sentences == 0 || self.repetitions == 0 || self.n_channels == 0 {
            return bad("sentences, repetitions and channels must be positive");
        }
        if self.n_artic_features != 12 || self.phoneme_count != 40 {
            return bad("the feature layout is fixed at 12 kinematic tracks and 40 phoneme classes");
        }
        let (lo, hi) = self.speaking_frames;
        if lo == 0 || lo > hi {
            return bad("speaking_frames must be a nonempty range");
        }
        let (s_lo, s_hi) = self.span_frames;
        if s_lo == 0 || s_lo > s_hi {
            return bad("span_frames must be a nonempty range");
        }
        if self.kernel.features_per_channel == 0 || self.kernel.features_per_channel > self.n_artic_features {
            return bad("features_per_channel out of range");
        }
        if !(self.feature_cutoff_hz > 0.0 && self.feature_cutoff_hz < FEATURE_RATE_HZ / 2.0) {
            return bad("feature cutoff must lie below the Nyquist frequency");
        }
        if self.snr_db.is_nan() {
            return bad("snr_db is NaN");
        }
        for (mode, e) in &self.mode_effects {
            if !(0.0..=0.3).contains(&e.warp_strength) || !(e.amplitude > 0.0) {
                return Err(Error::Config(format!("synthetic spec: bad effect for {mode}")));
            }
        }
        self.lags.validate()
    }

    pub fn effect(&self, mode: SpeechMode) -> ModeEffect {
        self.mode_effects
            .get(&mode)
            .cloned()
            .unwrap_or_else(|| ModeEffect::default_for(mode))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTrial {
    pub sentence_id: String,
    pub repetition: usize,
    pub mode: SpeechMode,
    /// Envelope on the articulatory time axis.
    pub envelope: MultiChannelSeries,
    /// Envelope as produced; time-warped for silent modes.
    pub produced: MultiChannelSeries,
    /// Reference-axis position of each produced frame.
    pub warp_positions: Vec<f64>,
    /// 14 articulatory columns at 50 Hz.
    pub sparc: MultiChannelSeries,
    pub alignment: PhonemeAlignment,
    /// Speaking frames on the reference axis.
    pub speaking: std::ops::Range<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSubject {
    pub subject_id: String,
    pub trials: Vec<SynthTrial>,
    /// Per channel, kinematic features × lags.
    pub kernels: Vec<DMatrix<f64>>,
    pub lags: LagSpec,
}

impl SynthSubject {
    pub fn trials_for(&self, mode: SpeechMode) -> impl Iterator<Item = &SynthTrial> {
        self.trials.iter().filter(move |t| t.mode == mode)
    }
}

/// Deterministic 39 speech prototypes in kinematic space.
pub fn phoneme_codebook(n_features: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(CODEBOOK_SEED);
    DMatrix::from_fn(PhonemeInventory::SILENCE_INDEX, n_features, |_, _| {
        CODEBOOK_SCALE * rng.sample::<f64, _>(StandardNormal)
    })
}

fn nearest_prototype(codebook: &DMatrix<f64>, v: &DVector<f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for k in 0..codebook.nrows() {
        let d = (codebook.row(k).transpose() - v).norm_squared();
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Gaussian-bump kernels, one `features × lags` matrix per channel.
pub fn planted_kernels(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let lags_ms = spec.lags.lags_ms();
    (0..spec.n_channels)
        .map(|_| {
            let mut k = DMatrix::zeros(spec.n_artic_features, lags_ms.len());
            for f in sample(rng, spec.n_artic_features, spec.kernel.features_per_channel) {
                let centre = rng.random_range(-spec.kernel.center_range_ms..=spec.kernel.center_range_ms);
                let amp = rng.random_range(0.5..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for (j, &lag) in lags_ms.iter().enumerate() {
                    let z = (lag as f64 - centre) / spec.kernel.width_ms;
                    k[(f, j)] = amp * (-0.5 * z * z).exp();
                }
            }
            k
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Frames discarded while the smoother settles.
const BURN_IN: usize = 50;

/// One-pole low-passed noise, standardized over `speaking` and zero
/// elsewhere. The gentle roll-off keeps some power up to the Nyquist
/// frequency, so lagged copies of a track stay linearly independent.
fn smooth_track(n: usize, speaking: &std::ops::Range<usize>, cutoff_hz: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = (-std::f64::consts::TAU * cutoff_hz / FEATURE_RATE_HZ).exp();
    let mut state = 0.0;
    let smooth: Vec<f64> = (0..n + BURN_IN)
        .map(|_| {
            state = a * state + (1.0 - a) * gaussian(rng);
            state
        })
        .skip(BURN_IN)
        .collect();
    let inside = &smooth[speaking.clone()];
    let m = inside.iter().sum::<f64>() / inside.len() as f64;
    let sd = (inside.iter().map(|v| (v - m).powi(2)).sum::<f64>() / inside.len() as f64).sqrt();
    (0..n)
        .map(|t| if speaking.contains(&t) { (smooth[t] - m) / sd } else { 0.0 })
        .collect()
}

struct Sentence {
    id: String,
    n_frames: usize,
    speaking: std::ops::Range<usize>,
    /// Frames × 14 in SPARC column order.
    tracks: DMatrix<f64>,
    alignment: PhonemeAlignment,
    /// Clean envelope, frames × channels.
    clean: DMatrix<f64>,
}

fn make_sentence(
    spec: &SynthSpec,
    index: usize,
    subject_seed: u64,
    kernels: &[DMatrix<f64>],
    codebook: &DMatrix<f64>,
) -> Result<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[subject_seed, 1, index as u64]));
    let id = format!("sent{index:03}");
    let (lo, hi) = spec.speaking_frames;
    let speak = rng.random_range(lo..=hi);
    let n = speak + 2 * spec.silence_frames;
    let speaking = spec.silence_frames..spec.silence_frames + speak;
    let n_tracks = SPARC_COLUMNS.len();
    let mut tracks = DMatrix::zeros(n, n_tracks);
    for f in 0..n_tracks {
        let track = smooth_track(n, &speaking, spec.feature_cutoff_hz, &mut rng);
        tracks.set_column(f, &DVector::from_vec(track));
    }

    let inventory = PhonemeInventory::arpabet();
    let to_s = |frame: usize| frame as f64 / FEATURE_RATE_HZ;
    let mut spans = vec![PhonemeSpan {
        start_s: 0.0,
        end_s: to_s(speaking.start),
        label: inventory.labels()[PhonemeInventory::SILENCE_INDEX].clone(),
    }];
    let mut t = speaking.start;
    while t < speaking.end {
        let len = rng.random_range(spec.span_frames.0..=spec.span_frames.1);
        let end = (t + len).min(speaking.end);
        let kin = tracks.view((t, 0), (end - t, spec.n_artic_features));
        let mean = DVector::from_fn(spec.n_artic_features, |f, _| kin.column(f).mean());
        spans.push(PhonemeSpan {
            start_s: to_s(t),
            end_s: to_s(end),
            label: inventory.labels()[nearest_prototype(codebook, &mean)].clone(),
        });
        t = end;
    }
    spans.push(PhonemeSpan {
        start_s: to_s(speaking.end),
        end_s: to_s(n),
        label: inventory.labels()[PhonemeInventory::SILENCE_INDEX].clone(),
    });
    let alignment = PhonemeAlignment::new(id.clone(), spans)?;

    let kin = tracks.columns(0, spec.n_artic_features).into_owned();
    let design = lag_matrix(&kin, &spec.lags).matrix;
    let mut clean = DMatrix::zeros(n, spec.n_channels);
    for (c, k) in kernels.iter().enumerate() {
        clean.set_column(c, &(&design * flatten_weights(k)));
    }
    Ok(Sentence {
        id,
        n_frames: n,
        speaking,
        tracks,
        alignment,
        clean,
    })
}

fn channel_names(n: usize) -> Vec<String> {
    (1..=n).map(|c| format!("ch{c}")).collect()
}

fn noisy_envelope(sentence: &Sentence, effect: &ModeEffect, snr_db: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let inside = sentence.speaking.clone();
    let mut env = sentence.clean.clone() * effect.amplitude;
    for c in 0..env.ncols() {
        let clean: Vec<f64> = sentence.clean.column(c).rows(inside.start, inside.len()).iter().copied().collect();
        let m = clean.iter().sum::<f64>() / clean.len() as f64;
        let var = clean.iter().map(|v| (v - m).powi(2)).sum::<f64>() / clean.len() as f64;
        let noise_sd = if snr_db.is_infinite() && snr_db > 0.0 {
            0.0
        } else {
            (var / 10f64.powf(snr_db / 10.0)).sqrt()
        };
        for t in 0..env.nrows() {
            env[(t, c)] += noise_sd * gaussian(rng);
        }
    }
    env
}

/// Builds one synthetic subject for the requested modes. Articulation and
/// alignment are shared by every mode and repetition of a sentence; noise
/// and warps are drawn per trial.
pub fn generate_subject(spec: &SynthSpec, subject_id: &str, modes: &[SpeechMode]) -> Result<SynthSubject> {
    spec.validate()?;
    let subject_seed = derive_seed(&[spec.seed, hash_label(subject_id)]);
    let mut kernel_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[subject_seed, 0]));
    let kernels = planted_kernels(spec, &mut kernel_rng);
    let codebook = phoneme_codebook(spec.n_artic_features);
    let names = channel_names(spec.n_channels);
    let sparc_names: Vec<String> = SPARC_COLUMNS.iter().map(|s| s.to_string()).collect();

    let mut trials = Vec::new();
    for s in 0..spec.n_sentences {
        let sentence = make_sentence(spec, s, subject_seed, &kernels, &codebook)?;
        let sparc = MultiChannelSeries::new(sentence.tracks.clone(), FEATURE_RATE_HZ, sparc_names.clone())?;
        for &mode in modes {
            let effect = spec.effect(mode);
            let snr = effect.snr_db.unwrap_or(spec.snr_db);
            for rep in 0..spec.repetitions {
                let trial_seed = derive_seed(&[subject_seed, 2, s as u64, hash_label(mode.as_str()), rep as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
                let env = noisy_envelope(&sentence, &effect, snr, &mut rng);
                let envelope = MultiChannelSeries::new(env, FEATURE_RATE_HZ, names.clone())?;
                let (produced, warp_positions) = if effect.warp_strength > 0.0 {
                    time_warp_jitter(&envelope, effect.warp_strength, derive_seed(&[trial_seed, 3]))?
                } else {
                    let pos = (0..sentence.n_frames).map(|t| t as f64).collect();
                    (envelope.clone(), pos)
                };
                trials.push(SynthTrial {
                    sentence_id: sentence.id.clone(),
                    repetition: rep,
                    mode,
                    envelope,
                    produced,
                    warp_positions,
                    sparc: sparc.clone(),
                    alignment: sentence.alignment.clone(),
                    speaking: sentence.speaking.clone(),
                });
            }
        }
    }
    Ok(SynthSubject {
        subject_id: subject_id.to_string(),
        trials,
        kernels,
        lags: spec.lags.clone(),
    })
}

/// Resamples `x` along a smooth monotone time axis whose local rate stays
/// within `1 ± strength`. Returns the warped series and, for each output
/// frame, the input position it was read from.
pub fn time_warp_jitter(x: &MultiChannelSeries, strength: f64, seed: u64) -> Result<(MultiChannelSeries, Vec<f64>)> {
    if !(0.0..=0.3).contains(&strength) {
        return Err(Error::Config(format!("warp strength {strength} outside [0, 0.3]")));
    }
    let n = x.n_frames();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.2..1.0),
                rng.random_range(0.005..0.03),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let total: f64 = waves.iter().map(|w| w.0).sum();
    let rate = |j: usize| {
        let s: f64 = waves
            .iter()
            .map(|(a, f, ph)| a * (std::f64::consts::TAU * f * j as f64 + ph).sin())
            .sum();
        1.0 + strength * s / total
    };
    let last = (n - 1) as f64;
    let mut positions = vec![0.0];
    loop {
        let next = positions[positions.len() - 1] + rate(positions.len() - 1);
        if next > last + 1e-9 {
            break;
        }
        positions.push(next.min(last));
    }
    let data = DMatrix::from_fn(positions.len(), x.n_channels(), |j, c| {
        let p = positions[j];
        let i = p.floor() as usize;
        let frac = p - i as f64;
        let ch = x.channel(c);
        if i + 1 < n {
            ch[i] * (1.0 - frac) + ch[i + 1] * frac
        } else {
            ch[i]
        }
    });
    Ok((
        MultiChannelSeries::new(data, x.sample_rate_hz(), x.channel_names().to_vec())?,
        positions,
    ))
}

/// Raw EMG whose slow amplitude follows `envelope`: band-limited noise
/// modulated by `exp(0.35·envelope)`, plus mains hum.
pub fn synthesize_raw_emg(envelope: &MultiChannelSeries, raw_rate_hz: f64, seed: u64) -> Result<MultiChannelSeries> {
    let ratio = raw_rate_hz / envelope.sample_rate_hz();
    let k = ratio.round() as usize;
    if k < 2 || (ratio - k as f64).abs() > 1e-9 {
        return Err(Error::NonIntegerRatio {
            from_hz: raw_rate_hz,
            to_hz: envelope.sample_rate_hz(),
        });
    }
    let n = envelope.n_frames() * k;
    let carrier_band = butter_bandpass(2, 20.0, 400.0, raw_rate_hz);
    let mut channels = Vec::with_capacity(envelope.n_channels());
    for c in 0..envelope.n_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, c as u64]));
        let noise: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
        let carrier = carrier_band.filtfilt(&noise);
        let env = envelope.channel(c);
        let hum_phase = rng.random_range(0.0..std::f64::consts::TAU);
        channels.push(
            (0..n)
                .map(|i| {
                    // linear interpolation between frame centers
                    let p = ((i as f64 + 0.5) / k as f64 - 0.5).clamp(0.0, (env.len() - 1) as f64);
                    let j = p.floor() as usize;
                    let frac = p - j as f64;
                    let e = if j + 1 < env.len() { env[j] * (1.0 - frac) + env[j + 1] * frac } else { env[j] };
                    let t = i as f64 / raw_rate_hz;
                    (0.35 * e).exp() * carrier[i] + 0.2 * (std::f64::consts::TAU * 60.0 * t + hum_phase).sin()
                })
                .collect(),
        );
    }
    MultiChannelSeries::from_named_channels(&channels, raw_rate_hz, envelope.channel_names().to_vec())
}

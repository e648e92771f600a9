//! 50 Hz predictor matrices: articulatory kinematics (A), phoneme one-hots
//! (P) and their concatenation `[P | A]`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{mean_std, MultiChannelSeries};

/// Frame rate shared by features and envelopes.
pub const FEATURE_RATE_HZ: f64 = 50.0;

/// Articulatory file columns: 12 kinematic traces (upper lip, lower lip,
/// lower incisor, tongue tip, blade, dorsum; x then y), then pitch and loudness.
pub const SPARC_COLUMNS: [&str; 14] = [
    "ul_x", "ul_y", "ll_x", "ll_y", "li_x", "li_y", "tt_x", "tt_y", "tb_x", "tb_y", "td_x",
    "td_y", "pitch", "loudness",
];

pub const KINEMATIC_COUNT: usize = 12;

pub const SILENCE: &str = "sil";

/// 39 stressless ARPAbet symbols.
const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeechMode {
    Aloud,
    Mimed,
    Subvocal,
}

impl SpeechMode {
    pub const ALL: [SpeechMode; 3] = [SpeechMode::Aloud, SpeechMode::Mimed, SpeechMode::Subvocal];

    pub fn as_str(self) -> &'static str {
        match self {
            SpeechMode::Aloud => "aloud",
            SpeechMode::Mimed => "mimed",
            SpeechMode::Subvocal => "subvocal",
        }
    }

    pub fn is_silent(self) -> bool {
        self != SpeechMode::Aloud
    }
}

impl fmt::Display for SpeechMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpeechMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aloud" => Ok(SpeechMode::Aloud),
            "mimed" => Ok(SpeechMode::Mimed),
            "subvocal" => Ok(SpeechMode::Subvocal),
            _ => Err(Error::Config(format!("unknown speech mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "A")]
    Articulatory,
    #[serde(rename = "P")]
    Phoneme,
    #[serde(rename = "AP")]
    Concatenated,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Articulatory => "A",
            FeatureKind::Phoneme => "P",
            FeatureKind::Concatenated => "AP",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(FeatureKind::Articulatory),
            "P" => Ok(FeatureKind::Phoneme),
            "AP" => Ok(FeatureKind::Concatenated),
            _ => Err(Error::Config(format!("unknown feature kind '{s}'"))),
        }
    }
}

/// The 40-symbol phoneme set; the silence token sits at index 39.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeInventory {
    labels: Vec<String>,
}

impl Default for PhonemeInventory {
    fn default() -> Self {
        Self::arpabet()
    }
}

impl PhonemeInventory {
    pub const SILENCE_INDEX: usize = 39;

    pub fn arpabet() -> Self {
        let mut labels: Vec<String> = ARPABET.iter().map(|s| s.to_string()).collect();
        labels.push(SILENCE.to_string());
        Self { labels }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Index of `label`. `sp` and the empty label are read as silence.
    pub fn index_of(&self, label: &str) -> Result<usize> {
        if is_silence(label) {
            return Ok(Self::SILENCE_INDEX);
        }
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

pub fn is_silence(label: &str) -> bool {
    matches!(label, SILENCE | "sp" | "")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhonemeSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeAlignment {
    utterance_id: String,
    spans: Vec<PhonemeSpan>,
}

/// Frames whose centers `(t + 0.5) / rate` fall in `[start_s, end_s)`.
pub fn frames_in(start_s: f64, end_s: f64, rate_hz: f64) -> Range<usize> {
    let edge = |s: f64| ((s * rate_hz - 0.5 - 1e-9).ceil().max(0.0)) as usize;
    let lo = edge(start_s);
    lo..edge(end_s).max(lo)
}

impl PhonemeAlignment {
    pub fn new(utterance_id: impl Into<String>, spans: Vec<PhonemeSpan>) -> Result<Self> {
        let utterance_id = utterance_id.into();
        for (k, s) in spans.iter().enumerate() {
            if !(s.start_s.is_finite() && s.end_s.is_finite() && s.end_s > s.start_s && s.start_s >= 0.0) {
                return Err(Error::Format(format!(
                    "{utterance_id}: span {k} has invalid bounds {}..{}",
                    s.start_s, s.end_s
                )));
            }
            if k > 0 && s.start_s < spans[k - 1].end_s - 1e-9 {
                return Err(Error::Format(format!(
                    "{utterance_id}: span {k} overlaps or precedes span {}",
                    k - 1
                )));
            }
        }
        Ok(Self { utterance_id, spans })
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn spans(&self) -> &[PhonemeSpan] {
        &self.spans
    }

    pub fn duration_s(&self) -> f64 {
        self.spans.last().map_or(0.0, |s| s.end_s)
    }

    /// Frame range from the first to the last non-silence span.
    pub fn speaking_frames(&self, n_frames: usize, rate_hz: f64) -> Result<Range<usize>> {
        let mut speech = self.spans.iter().filter(|s| !is_silence(&s.label));
        let first = speech
            .next()
            .ok_or_else(|| Error::AllSilence(self.utterance_id.clone()))?;
        let last = speech.next_back().unwrap_or(first);
        let r = frames_in(first.start_s, last.end_s, rate_hz);
        let (lo, hi) = (r.start.min(n_frames), r.end.min(n_frames));
        if lo >= hi {
            return Err(Error::AllSilence(self.utterance_id.clone()));
        }
        Ok(lo..hi)
    }

    /// Spans restricted to `frames` and re-based so frame `frames.start` is time 0.
    pub fn restrict(&self, frames: Range<usize>, rate_hz: f64) -> Self {
        let t0 = frames.start as f64 / rate_hz;
        let t1 = frames.end as f64 / rate_hz;
        let spans = self
            .spans
            .iter()
            .filter_map(|s| {
                let (a, b) = (s.start_s.max(t0), s.end_s.min(t1));
                (b > a).then(|| PhonemeSpan {
                    start_s: a - t0,
                    end_s: b - t0,
                    label: s.label.clone(),
                })
            })
            .collect();
        Self {
            utterance_id: self.utterance_id.clone(),
            spans,
        }
    }

    /// Partition of `0..n_frames` into contiguous blocks, one per span;
    /// frames no span covers form blocks of their own.
    pub fn frame_blocks(&self, n_frames: usize, rate_hz: f64) -> Vec<Range<usize>> {
        let mut blocks = Vec::new();
        let mut cursor = 0;
        for s in &self.spans {
            let r = frames_in(s.start_s, s.end_s, rate_hz);
            let (lo, hi) = (r.start.min(n_frames), r.end.min(n_frames));
            if lo >= hi {
                continue;
            }
            if lo > cursor {
                blocks.push(cursor..lo);
            }
            let lo = lo.max(cursor);
            if hi > lo {
                blocks.push(lo..hi);
                cursor = hi;
            }
        }
        if cursor < n_frames {
            blocks.push(cursor..n_frames);
        }
        blocks
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub data: DMatrix<f64>,
    pub sample_rate_hz: f64,
    pub feature_names: Vec<String>,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.data.ncols()
    }

    pub fn slice_frames(&self, frames: Range<usize>) -> Self {
        Self {
            data: self.data.rows(frames.start, frames.len()).into_owned(),
            ..self.clone()
        }
    }

    /// Columns `cols`, keeping `kind` as given.
    pub fn select_columns(&self, cols: Range<usize>, kind: FeatureKind) -> Self {
        Self {
            data: self.data.columns(cols.start, cols.len()).into_owned(),
            sample_rate_hz: self.sample_rate_hz,
            feature_names: self.feature_names[cols].to_vec(),
            kind,
        }
    }

    /// Z-score continuous columns; one-hot columns are left as they are.
    /// Constant continuous columns are centered to zero.
    pub fn standardize_continuous(&self) -> Self {
        let continuous: Range<usize> = match self.kind {
            FeatureKind::Phoneme => 0..0,
            FeatureKind::Articulatory => 0..self.n_features(),
            FeatureKind::Concatenated => {
                let n_p = self
                    .feature_names
                    .iter()
                    .take_while(|n| !SPARC_COLUMNS.contains(&n.as_str()))
                    .count();
                n_p..self.n_features()
            }
        };
        let mut out = self.clone();
        if self.n_frames() == 0 {
            return out;
        }
        for c in continuous {
            let col: Vec<f64> = self.data.column(c).iter().copied().collect();
            let (mean, std) = mean_std(&col);
            let scale = if std > 1e-12 * mean.abs().max(1.0) { 1.0 / std } else { 0.0 };
            for (dst, v) in out.data.column_mut(c).iter_mut().zip(col) {
                *dst = (v - mean) * scale;
            }
        }
        out
    }
}

/// Articulatory features for one trial: aloud keeps all 14 columns, silent
/// modes keep the 12 kinematic columns (pitch and loudness are dropped).
pub fn load_sparc(source: &MultiChannelSeries, mode: SpeechMode) -> Result<FeatureMatrix> {
    if (source.sample_rate_hz() - FEATURE_RATE_HZ).abs() > 1e-9 {
        return Err(Error::Format(format!(
            "articulatory features must be at {FEATURE_RATE_HZ} Hz, got {} Hz",
            source.sample_rate_hz()
        )));
    }
    if source.n_channels() != SPARC_COLUMNS.len() {
        return Err(Error::Format(format!(
            "articulatory file needs {} columns, found {}",
            SPARC_COLUMNS.len(),
            source.n_channels()
        )));
    }
    let keep = if mode.is_silent() { KINEMATIC_COUNT } else { SPARC_COLUMNS.len() };
    let mut cols = Vec::with_capacity(keep);
    for name in &SPARC_COLUMNS[..keep] {
        let idx = source
            .channel_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Format(format!("articulatory column '{name}' missing")))?;
        cols.push(source.channel(idx).to_vec());
    }
    let n = source.n_frames();
    Ok(FeatureMatrix {
        data: DMatrix::from_vec(n, keep, cols.concat()),
        sample_rate_hz: FEATURE_RATE_HZ,
        feature_names: SPARC_COLUMNS[..keep].iter().map(|s| s.to_string()).collect(),
        kind: FeatureKind::Articulatory,
    })
}

/// One-hot phoneme matrix at 50 Hz: each frame takes the label of the span
/// covering its center; uncovered frames are silence.
pub fn densify_phonemes(
    align: &PhonemeAlignment,
    inv: &PhonemeInventory,
    n_frames: usize,
) -> Result<FeatureMatrix> {
    if !align.spans().is_empty() {
        let expected = (align.duration_s() * FEATURE_RATE_HZ).round() as i64;
        if (n_frames as i64 - expected).abs() > 2 {
            return Err(Error::LengthMismatch {
                left: n_frames,
                right: expected.max(0) as usize,
            });
        }
    }
    let mut labels = vec![PhonemeInventory::SILENCE_INDEX; n_frames];
    for s in align.spans() {
        let idx = inv.index_of(&s.label)?;
        let r = frames_in(s.start_s, s.end_s, FEATURE_RATE_HZ);
        labels[r.start.min(n_frames)..r.end.min(n_frames)].fill(idx);
    }
    let mut data = DMatrix::zeros(n_frames, inv.len());
    for (t, &k) in labels.iter().enumerate() {
        data[(t, k)] = 1.0;
    }
    Ok(FeatureMatrix {
        data,
        sample_rate_hz: FEATURE_RATE_HZ,
        feature_names: inv.labels().to_vec(),
        kind: FeatureKind::Phoneme,
    })
}

/// Drop the frames before the first and after the last speech span from
/// both the envelope and the features.
pub fn trim_to_speaking(
    envelope: &MultiChannelSeries,
    features: &FeatureMatrix,
    align: &PhonemeAlignment,
) -> Result<(MultiChannelSeries, FeatureMatrix)> {
    if envelope.n_frames() != features.n_frames() {
        return Err(Error::LengthMismatch {
            left: envelope.n_frames(),
            right: features.n_frames(),
        });
    }
    if (envelope.sample_rate_hz() - features.sample_rate_hz).abs() > 1e-9 {
        return Err(Error::Format("envelope and features differ in sample rate".into()));
    }
    let r = align.speaking_frames(envelope.n_frames(), envelope.sample_rate_hz())?;
    Ok((envelope.slice_frames(r.start, r.end)?, features.slice_frames(r)))
}

/// Column-wise `[P | A]`.
pub fn concat_ap(p: &FeatureMatrix, a: &FeatureMatrix) -> Result<FeatureMatrix> {
    if p.kind != FeatureKind::Phoneme || a.kind != FeatureKind::Articulatory {
        return Err(Error::Format(format!(
            "concatenation expects (P, A), got ({}, {})",
            p.kind, a.kind
        )));
    }
    if p.n_frames() != a.n_frames() || a.n_features() == 0 {
        return Err(Error::LengthMismatch {
            left: p.n_frames(),
            right: a.n_frames(),
        });
    }
    let n = p.n_frames();
    let mut data = DMatrix::zeros(n, p.n_features() + a.n_features());
    data.columns_mut(0, p.n_features()).copy_from(&p.data);
    data.columns_mut(p.n_features(), a.n_features()).copy_from(&a.data);
    let mut names = p.feature_names.clone();
    names.extend(a.feature_names.iter().cloned());
    Ok(FeatureMatrix {
        data,
        sample_rate_hz: p.sample_rate_hz,
        feature_names: names,
        kind: FeatureKind::Concatenated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(a: f64, b: f64, l: &str) -> PhonemeSpan {
        PhonemeSpan {
            start_s: a,
            end_s: b,
            label: l.to_string(),
        }
    }

    fn sparc_series(cols: usize, n: usize) -> MultiChannelSeries {
        let chans: Vec<Vec<f64>> = (0..cols).map(|c| (0..n).map(|t| (c * n + t) as f64).collect()).collect();
        let names = SPARC_COLUMNS.iter().take(cols).map(|s| s.to_string()).collect();
        MultiChannelSeries::from_named_channels(&chans, 50.0, names).unwrap()
    }

    #[test]
    fn inventory_shape() {
        let inv = PhonemeInventory::arpabet();
        assert_eq!(inv.len(), 40);
        assert_eq!(inv.index_of("sil").unwrap(), 39);
        let mut sorted = inv.labels().to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 40);
        assert!(matches!(inv.index_of("AA1"), Err(Error::UnknownLabel(l)) if l == "AA1"));
    }

    #[test]
    fn sparc_by_mode() {
        let src = sparc_series(14, 20);
        let aloud = load_sparc(&src, SpeechMode::Aloud).unwrap();
        assert_eq!(aloud.n_features(), 14);
        let mimed = load_sparc(&src, SpeechMode::Mimed).unwrap();
        assert_eq!(mimed.n_features(), 12);
        assert!(!mimed.feature_names.iter().any(|n| n == "pitch" || n == "loudness"));
        assert_eq!(mimed.data.column(3).iter().copied().collect::<Vec<_>>(), src.channel(3));
    }

    #[test]
    fn sparc_wrong_width_or_rate() {
        assert!(matches!(
            load_sparc(&sparc_series(13, 10), SpeechMode::Aloud),
            Err(Error::Format(_))
        ));
        let src = sparc_series(14, 10);
        let fast = MultiChannelSeries::new(src.data().clone(), 100.0, src.channel_names().to_vec()).unwrap();
        assert!(load_sparc(&fast, SpeechMode::Aloud).is_err());
    }

    #[test]
    fn densify_single_span() {
        let inv = PhonemeInventory::arpabet();
        let al = PhonemeAlignment::new("u", vec![span(0.0, 0.2, "AA")]).unwrap();
        let m = densify_phonemes(&al, &inv, 10).unwrap();
        for t in 0..10 {
            assert_eq!(m.data[(t, 0)], 1.0);
            assert_eq!(m.data.row(t).sum(), 1.0);
        }
    }

    #[test]
    fn densify_empty_is_silence() {
        let inv = PhonemeInventory::arpabet();
        let al = PhonemeAlignment::new("u", vec![]).unwrap();
        let m = densify_phonemes(&al, &inv, 5).unwrap();
        assert!((0..5).all(|t| m.data[(t, 39)] == 1.0));
    }

    #[test]
    fn densify_boundary_by_frame_center() {
        let inv = PhonemeInventory::arpabet();
        let al = PhonemeAlignment::new("u", vec![span(0.0, 0.1, "B"), span(0.1, 0.2, "IY")]).unwrap();
        let m = densify_phonemes(&al, &inv, 10).unwrap();
        let b = inv.index_of("B").unwrap();
        let iy = inv.index_of("IY").unwrap();
        for t in 0..5 {
            assert_eq!(m.data[(t, b)], 1.0);
        }
        for t in 5..10 {
            assert_eq!(m.data[(t, iy)], 1.0);
        }
    }

    #[test]
    fn exact_boundary_goes_to_later_span() {
        // frame 2 has center 0.05 s, exactly the boundary
        let inv = PhonemeInventory::arpabet();
        let al = PhonemeAlignment::new("u", vec![span(0.0, 0.05, "B"), span(0.05, 0.1, "IY")]).unwrap();
        let m = densify_phonemes(&al, &inv, 5).unwrap();
        assert_eq!(m.data[(2, inv.index_of("IY").unwrap())], 1.0);
    }

    #[test]
    fn densify_unknown_label_and_bad_length() {
        let inv = PhonemeInventory::arpabet();
        let al = PhonemeAlignment::new("u", vec![span(0.0, 0.2, "QQ")]).unwrap();
        assert!(matches!(densify_phonemes(&al, &inv, 10), Err(Error::UnknownLabel(l)) if l == "QQ"));
        let al = PhonemeAlignment::new("u", vec![span(0.0, 0.2, "AA")]).unwrap();
        assert!(densify_phonemes(&al, &inv, 13).is_err());
        assert!(densify_phonemes(&al, &inv, 12).is_ok());
    }

    #[test]
    fn alignment_rejects_overlap() {
        assert!(PhonemeAlignment::new("u", vec![span(0.0, 0.2, "AA"), span(0.1, 0.3, "B")]).is_err());
        assert!(PhonemeAlignment::new("u", vec![span(0.2, 0.2, "AA")]).is_err());
    }

    fn trial(n: usize) -> (MultiChannelSeries, FeatureMatrix) {
        let env = MultiChannelSeries::from_channels(&[(0..n).map(|t| t as f64).collect()], 50.0).unwrap();
        let feats = FeatureMatrix {
            data: DMatrix::from_fn(n, 2, |t, c| (t * 10 + c) as f64),
            sample_rate_hz: 50.0,
            feature_names: vec!["ul_x".into(), "ul_y".into()],
            kind: FeatureKind::Articulatory,
        };
        (env, feats)
    }

    #[test]
    fn trim_removes_leading_and_trailing_silence() {
        // 0.2 s silence, 1.0 s of speech from 0.2 s, 0.2 s silence: 70 frames
        let (env, feats) = trial(70);
        let al = PhonemeAlignment::new(
            "u",
            vec![span(0.0, 0.2, "sil"), span(0.2, 0.7, "AA"), span(0.7, 1.2, "B"), span(1.2, 1.4, "sil")],
        )
        .unwrap();
        let (e, f) = trim_to_speaking(&env, &feats, &al).unwrap();
        let kept: Vec<f64> = (10..60).map(|t| t as f64).collect();
        assert_eq!(e.channel(0), kept.as_slice());
        assert_eq!(f.n_frames(), 50);
        assert_eq!(f.data[(0, 0)], 100.0);
    }

    #[test]
    fn trim_without_silence_is_noop_and_all_silence_errors() {
        let (env, feats) = trial(10);
        let al = PhonemeAlignment::new("u", vec![span(0.0, 0.2, "AA")]).unwrap();
        let (e, f) = trim_to_speaking(&env, &feats, &al).unwrap();
        assert_eq!(e, env);
        assert_eq!(f, feats);
        let al = PhonemeAlignment::new("u", vec![span(0.0, 0.2, "sil")]).unwrap();
        assert!(matches!(trim_to_speaking(&env, &feats, &al), Err(Error::AllSilence(_))));
    }

    #[test]
    fn concat_orders_p_then_a() {
        let inv = PhonemeInventory::arpabet();
        let al = PhonemeAlignment::new("u", vec![span(0.0, 0.2, "AA")]).unwrap();
        let p = densify_phonemes(&al, &inv, 10).unwrap();
        let a = FeatureMatrix {
            data: DMatrix::from_fn(10, 12, |t, c| (t + c) as f64),
            sample_rate_hz: 50.0,
            feature_names: SPARC_COLUMNS[..12].iter().map(|s| s.to_string()).collect(),
            kind: FeatureKind::Articulatory,
        };
        let ap = concat_ap(&p, &a).unwrap();
        assert_eq!(ap.n_features(), 52);
        assert_eq!(ap.feature_names[..40], p.feature_names[..]);
        assert_eq!(ap.feature_names[40..], a.feature_names[..]);
        assert_eq!(ap.select_columns(0..40, FeatureKind::Phoneme), p);

        let empty = FeatureMatrix {
            data: DMatrix::zeros(0, 12),
            ..a.clone()
        };
        assert!(concat_ap(&p, &empty).is_err());
    }

    #[test]
    fn standardize_leaves_one_hots() {
        let inv = PhonemeInventory::arpabet();
        let al = PhonemeAlignment::new("u", vec![span(0.0, 0.1, "AA"), span(0.1, 0.2, "B")]).unwrap();
        let p = densify_phonemes(&al, &inv, 10).unwrap();
        let a = FeatureMatrix {
            data: DMatrix::from_fn(10, 12, |t, c| (t * (c + 1)) as f64 + 3.0),
            sample_rate_hz: 50.0,
            feature_names: SPARC_COLUMNS[..12].iter().map(|s| s.to_string()).collect(),
            kind: FeatureKind::Articulatory,
        };
        let ap = concat_ap(&p, &a).unwrap().standardize_continuous();
        assert_eq!(ap.data.columns(0, 40), p.data.columns(0, 40));
        for c in 40..52 {
            let col: Vec<f64> = ap.data.column(c).iter().copied().collect();
            let (m, s) = mean_std(&col);
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_blocks_partition() {
        let al = PhonemeAlignment::new("u", vec![span(0.04, 0.1, "AA"), span(0.1, 0.16, "B")]).unwrap();
        let blocks = al.frame_blocks(10, 50.0);
        assert_eq!(blocks, vec![0..2, 2..5, 5..8, 8..10]);
    }

    #[test]
    fn restrict_rebases_time() {
        let al = PhonemeAlignment::new(
            "u",
            vec![span(0.0, 0.2, "sil"), span(0.2, 0.4, "AA"), span(0.4, 0.6, "sil")],
        )
        .unwrap();
        let r = al.speaking_frames(30, 50.0).unwrap();
        assert_eq!(r, 10..20);
        let sub = al.restrict(r, 50.0);
        assert_eq!(sub.spans().len(), 1);
        assert!((sub.spans()[0].start_s).abs() < 1e-12);
        assert!((sub.spans()[0].end_s - 0.2).abs() < 1e-12);
    }
}

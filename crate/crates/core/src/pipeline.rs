//! Turning per-trial envelopes, articulatory tracks and alignments into
//! encoding-ready trials.

use crate::crossval::EncodingTrial;
use crate::error::{Error, Result};
use crate::features::{
    concat_ap, densify_phonemes, load_sparc, FeatureKind, FeatureMatrix, PhonemeAlignment, PhonemeInventory,
    SpeechMode,
};
use crate::preprocess::{zscore_per_channel, MultiChannelSeries};

/// Largest envelope/feature length difference, in frames, that is
/// reconciled by truncation.
pub const MAX_LENGTH_SLACK: usize = 2;

/// Inputs for one trial, all at the feature rate.
#[derive(Clone, Copy, Debug)]
pub struct TrialInputs<'a> {
    pub sentence_id: &'a str,
    pub envelope: &'a MultiChannelSeries,
    pub sparc: &'a MultiChannelSeries,
    pub alignment: &'a PhonemeAlignment,
}

/// Truncates to a common length, trims leading and trailing silence,
/// re-standardizes and builds the requested feature set.
pub fn prepare_trial(
    inputs: TrialInputs<'_>,
    mode: SpeechMode,
    kind: FeatureKind,
    inventory: &PhonemeInventory,
) -> Result<EncodingTrial> {
    let n_env = inputs.envelope.n_frames();
    let n_feat = inputs.sparc.n_frames();
    if n_env.abs_diff(n_feat) > MAX_LENGTH_SLACK {
        return Err(Error::LengthMismatch {
            left: n_env,
            right: n_feat,
        });
    }
    let n = n_env.min(n_feat);
    let rate = inputs.envelope.sample_rate_hz();
    let speaking = inputs.alignment.speaking_frames(n, rate)?;

    let envelope = zscore_per_channel(&inputs.envelope.slice_frames(speaking.start, speaking.end)?)?;
    let articulatory = || -> Result<FeatureMatrix> {
        let full = load_sparc(inputs.sparc, mode)?;
        Ok(full.slice_frames(speaking.clone()).standardize_continuous())
    };
    let phonemes = || -> Result<FeatureMatrix> {
        Ok(densify_phonemes(inputs.alignment, inventory, n)?.slice_frames(speaking.clone()))
    };
    let features = match kind {
        FeatureKind::Articulatory => articulatory()?,
        FeatureKind::Phoneme => phonemes()?,
        FeatureKind::Concatenated => concat_ap(&phonemes()?, &articulatory()?)?,
    };
    let blocks = inputs
        .alignment
        .restrict(speaking.clone(), rate)
        .frame_blocks(speaking.len(), rate);
    Ok(EncodingTrial {
        sentence_id: inputs.sentence_id.to_string(),
        envelope,
        features,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::features::{PhonemeSpan, SPARC_COLUMNS};

    fn align() -> PhonemeAlignment {
        let span = |a: f64, b: f64, l: &str| PhonemeSpan {
            start_s: a,
            end_s: b,
            label: l.into(),
        };
        PhonemeAlignment::new(
            "u1",
            vec![
                span(0.0, 0.2, "sil"),
                span(0.2, 0.5, "AA"),
                span(0.5, 0.8, "B"),
                span(0.8, 1.0, "sil"),
            ],
        )
        .unwrap()
    }

    fn inputs(n_env: usize, n_feat: usize) -> (MultiChannelSeries, MultiChannelSeries) {
        let env = MultiChannelSeries::from_channels(
            &[(0..n_env).map(|t| (t as f64 * 0.37).sin()).collect()],
            50.0,
        )
        .unwrap();
        let sparc = MultiChannelSeries::new(
            DMatrix::from_fn(n_feat, 14, |t, f| ((t * (f + 1)) as f64 * 0.13).cos()),
            50.0,
            SPARC_COLUMNS.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        (env, sparc)
    }

    #[test]
    fn trims_and_blocks_the_speaking_interval() {
        let (env, sparc) = inputs(50, 50);
        let a = align();
        let t = prepare_trial(
            TrialInputs {
                sentence_id: "s1",
                envelope: &env,
                sparc: &sparc,
                alignment: &a,
            },
            SpeechMode::Mimed,
            FeatureKind::Articulatory,
            &PhonemeInventory::arpabet(),
        )
        .unwrap();
        assert_eq!(t.envelope.n_frames(), 30);
        assert_eq!(t.features.n_features(), 12);
        assert_eq!(t.blocks, vec![0..15, 15..30]);
        let m: f64 = t.envelope.channel(0).iter().sum::<f64>() / 30.0;
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn concatenated_puts_phonemes_first() {
        let (env, sparc) = inputs(51, 50);
        let a = align();
        let t = prepare_trial(
            TrialInputs {
                sentence_id: "s1",
                envelope: &env,
                sparc: &sparc,
                alignment: &a,
            },
            SpeechMode::Aloud,
            FeatureKind::Concatenated,
            &PhonemeInventory::arpabet(),
        )
        .unwrap();
        assert_eq!(t.features.n_features(), 54);
        assert_eq!(t.features.feature_names[40], "ul_x");
        // frame 0 of the trimmed trial is "AA"
        let aa = PhonemeInventory::arpabet().index_of("AA").unwrap();
        assert_eq!(t.features.data[(0, aa)], 1.0);
    }

    #[test]
    fn large_length_gap_is_an_error() {
        let (env, sparc) = inputs(50, 40);
        let a = align();
        let r = prepare_trial(
            TrialInputs {
                sentence_id: "s1",
                envelope: &env,
                sparc: &sparc,
                alignment: &a,
            },
            SpeechMode::Aloud,
            FeatureKind::Phoneme,
            &PhonemeInventory::arpabet(),
        );
        assert!(matches!(r, Err(Error::LengthMismatch { left: 50, right: 40 })));
    }
}

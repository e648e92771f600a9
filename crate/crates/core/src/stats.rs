//! Permutation nulls, Wilcoxon signed-rank tests and Benjamini–Hochberg
//! control.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::crossval::{fisher_mean, pearson_r, RScoring};
use crate::error::{Error, Result};
use crate::features::PhonemeAlignment;

pub const DEFAULT_PERMUTATIONS: usize = 1000;

/// Largest sample size for which the exact null is enumerated.
pub const EXACT_MAX_N: usize = 25;

/// FNV-1a of a label, used to fold string ids into seeds.
pub fn hash_label(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes an ordered list of integers into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Reassembles the blocks of `y` in a random order. Blocks must partition
/// `0..y.len()` in order. With fewer than two blocks `y` comes back as is
/// and the flag is set.
pub fn permute_blocks(y: &[f64], blocks: &[Range<usize>], rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, bool)> {
    let mut cursor = 0;
    for b in blocks {
        if b.start != cursor || b.end <= b.start {
            return Err(Error::InvalidSpec(format!("blocks do not tile the series at frame {cursor}")));
        }
        cursor = b.end;
    }
    if cursor != y.len() {
        return Err(Error::LengthMismatch {
            left: cursor,
            right: y.len(),
        });
    }
    if blocks.len() < 2 {
        return Ok((y.to_vec(), true));
    }
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(y.len());
    for i in order {
        out.extend_from_slice(&y[blocks[i].clone()]);
    }
    Ok((out, false))
}

/// Shuffles whole phoneme spans of one utterance's envelope.
pub fn permute_spans(y: &[f64], align: &PhonemeAlignment, rate_hz: f64, seed: u64) -> Result<(Vec<f64>, bool)> {
    let blocks = align.frame_blocks(y.len(), rate_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    permute_blocks(y, &blocks, &mut rng)
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub values: Vec<f64>,
    pub threshold_95: f64,
    pub n_permutations: usize,
}

impl NullDistribution {
    pub fn from_values(values: Vec<f64>) -> Self {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            threshold_95: percentile_sorted(&sorted, 95.0),
            n_permutations: values.len(),
            values,
        }
    }

    /// Fraction of null values at or above `r`.
    pub fn exceedance(&self, r: f64) -> f64 {
        self.values.iter().filter(|&&v| v >= r).count() as f64 / self.values.len().max(1) as f64
    }
}

/// Predictions and observations for one held-out trial, with the blocks
/// that may be shuffled.
#[derive(Clone, Copy, Debug)]
pub struct HeldOut<'a> {
    pub pred: &'a [f64],
    pub obs: &'a [f64],
    pub blocks: &'a [Range<usize>],
}

/// Held-out correlation of `(pred, obs)` pairs under the chosen scoring.
/// A constant prediction or observation scores zero.
pub fn score(pairs: &[(&[f64], &[f64])], scoring: RScoring) -> f64 {
    match scoring {
        RScoring::Pooled => {
            let pred: Vec<f64> = pairs.iter().flat_map(|(p, _)| p.iter().copied()).collect();
            let obs: Vec<f64> = pairs.iter().flat_map(|(_, o)| o.iter().copied()).collect();
            pearson_r(&pred, &obs).unwrap_or(0.0)
        }
        RScoring::PerTrial => {
            let rs: Vec<f64> = pairs
                .iter()
                .map(|(p, o)| clamp_r(pearson_r(p, o).unwrap_or(0.0)))
                .collect();
            fisher_mean(&rs).unwrap_or(0.0)
        }
    }
}

pub(crate) fn clamp_r(r: f64) -> f64 {
    r.clamp(-1.0 + 1e-12, 1.0 - 1e-12)
}

/// Null correlations from re-scoring fixed predictions against
/// span-shuffled observations. The model is not refitted.
pub fn null_distribution(trials: &[HeldOut<'_>], scoring: RScoring, n_perm: usize, seed: u64) -> Result<NullDistribution> {
    if trials.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut values = Vec::with_capacity(n_perm);
    for perm in 0..n_perm {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, perm as u64]));
        let shuffled = trials
            .iter()
            .map(|t| permute_blocks(t.obs, t.blocks, &mut rng).map(|(y, _)| y))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(&[f64], &[f64])> = trials.iter().zip(&shuffled).map(|(t, y)| (t.pred, y.as_slice())).collect();
        values.push(score(&pairs, scoring));
    }
    Ok(NullDistribution::from_values(values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonTest {
    /// `min(W+, W−)`.
    pub statistic: f64,
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
    pub p_value: f64,
}

/// Two-sided Wilcoxon signed-rank test on `x − y`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonTest> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired differences"));
    }
    if d.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let n = d.len();
    let (ranks2, tie_sizes) = doubled_midranks(&d);
    let w_plus2: u64 = d.iter().zip(&ranks2).filter(|(v, _)| **v > 0.0).map(|(_, r)| *r).sum();
    let total2 = (n * (n + 1)) as u64;
    let w_plus = w_plus2 as f64 / 2.0;
    let statistic = w_plus.min((total2 - w_plus2) as f64 / 2.0);

    let (p_value, exact) = if n <= EXACT_MAX_N {
        (exact_p(&ranks2, w_plus2), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
        let z = ((w_plus - mean).abs() - 0.5).max(0.0) / sd;
        let normal = Normal::standard();
        ((2.0 * (1.0 - normal.cdf(z))).min(1.0), false)
    };
    Ok(WilcoxonTest {
        statistic,
        w_plus,
        n,
        exact,
        p_value,
    })
}

/// Twice the average ranks of `|d|` (integers even with ties), plus the
/// sizes of tie groups.
fn doubled_midranks(d: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks2 = vec![0u64; d.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && d[idx[j]].abs() == d[idx[i]].abs() {
            j += 1;
        }
        // ranks i+1..=j averaged, doubled
        let r2 = (i + 1 + j) as u64;
        for &k in &idx[i..j] {
            ranks2[k] = r2;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks2, ties)
}

/// Exact two-sided p from the sign-flip distribution of the doubled rank sum.
fn exact_p(ranks2: &[u64], w_plus2: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(ranks2.len() as i32);
    let lower: f64 = counts[..=w_plus2 as usize].iter().sum::<f64>() / all;
    let upper: f64 = counts[w_plus2 as usize..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Benjamini–Hochberg step-up rejections at level `q`.
pub fn bh_fdr(p_values: &[f64], q: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let cutoff = (1..=m)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 * q / m as f64)
        .map(|k| p_values[order[k - 1]]);
    match cutoff {
        Some(c) => p_values.iter().map(|&p| p <= c).collect(),
        None => vec![false; m],
    }
}

/// BH-adjusted p values (q values); `q_i ≤ level` iff `bh_fdr` rejects `i`.
pub fn bh_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for k in (1..=m).rev() {
        let i = order[k - 1];
        running = running.min(p_values[i] * m as f64 / k as f64);
        adjusted[i] = running;
    }
    adjusted
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub q_value: f64,
    pub significant_after_fdr: bool,
    pub q_level: f64,
}

/// Attaches BH decisions to a family of Wilcoxon tests.
pub fn with_fdr(tests: &[WilcoxonTest], q_level: f64) -> Vec<TestResult> {
    let p: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
    let reject = bh_fdr(&p, q_level);
    let q = bh_adjust(&p);
    tests
        .iter()
        .zip(reject)
        .zip(q)
        .map(|((t, significant_after_fdr), q_value)| TestResult {
            statistic: t.statistic,
            p_value: t.p_value,
            q_value,
            significant_after_fdr,
            q_level,
        })
        .collect()
}

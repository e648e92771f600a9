//! Dynamic time warping of silent-mode envelopes onto aloud references.
//!
//! Frames are compared with the Euclidean distance over the full channel
//! vector, so one path aligns all channels of a trial. [`fastdtw`] is the
//! multiresolution approximation (coarsen by pairwise averaging, solve,
//! project the path one level up, widen by `radius`, refine).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::MultiChannelSeries;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalCost {
    Euclidean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtwConfig {
    pub radius: usize,
    /// Used instead of `radius` when the windowed cost matrix would exceed
    /// `cell_budget` cells.
    pub fallback_radius: usize,
    pub local_cost: LocalCost,
    pub cell_budget: usize,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            radius: 30,
            fallback_radius: 20,
            local_cost: LocalCost::Euclidean,
            cell_budget: 50_000_000,
        }
    }
}

impl DtwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius == 0 || self.fallback_radius == 0 || self.fallback_radius > self.radius {
            return Err(Error::Config(format!(
                "DTW radii must satisfy 0 < fallback ({}) <= radius ({})",
                self.fallback_radius, self.radius
            )));
        }
        Ok(())
    }
}

/// Monotone, continuous alignment from `(0, 0)` to `(len_a - 1, len_b - 1)`.
/// Pairs are `(reference_index, query_index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpPath {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

impl WarpPath {
    pub fn identity(len: usize) -> Self {
        Self {
            pairs: (0..len).map(|i| (i, i)).collect(),
            cost: 0.0,
        }
    }

    /// Checks the start/end, monotonicity and unit-step constraints.
    pub fn validate(&self, len_a: usize, len_b: usize) -> Result<()> {
        let first = self.pairs.first().copied();
        let last = self.pairs.last().copied();
        if first != Some((0, 0)) || last != Some((len_a.wrapping_sub(1), len_b.wrapping_sub(1))) {
            return Err(Error::PathOutOfRange(format!(
                "path must run from (0,0) to ({},{})",
                len_a.wrapping_sub(1),
                len_b.wrapping_sub(1)
            )));
        }
        for w in self.pairs.windows(2) {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if di > 1 || dj > 1 || di + dj == 0 {
                return Err(Error::PathOutOfRange(format!(
                    "invalid step {:?} -> {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

fn frames(x: &MultiChannelSeries) -> Vec<Vec<f64>> {
    (0..x.n_frames()).map(|t| x.frame(t)).collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_inputs(a: &MultiChannelSeries, b: &MultiChannelSeries) -> Result<()> {
    if a.n_channels() != b.n_channels() {
        return Err(Error::ChannelMismatch {
            left: a.n_channels(),
            right: b.n_channels(),
        });
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Per-row column ranges `[lo, hi)` of the cells a path may visit.
#[derive(Clone, Debug)]
struct Window {
    rows: Vec<(usize, usize)>,
}

impl Window {
    fn full(len_a: usize, len_b: usize) -> Self {
        Self {
            rows: vec![(0, len_b); len_a],
        }
    }

    fn cells(&self) -> usize {
        self.rows.iter().map(|(lo, hi)| hi - lo).sum()
    }

    /// Cells of the fine grid covered by a coarse path, widened by `radius`.
    fn project(path: &[(usize, usize)], len_a: usize, len_b: usize, radius: usize) -> Self {
        let mut rows = vec![(usize::MAX, 0usize); len_a];
        for &(i, j) in path {
            for fi in [2 * i, 2 * i + 1] {
                if fi >= len_a {
                    continue;
                }
                let lo = (2 * j).min(len_b - 1);
                let hi = (2 * j + 2).min(len_b);
                rows[fi].0 = rows[fi].0.min(lo);
                rows[fi].1 = rows[fi].1.max(hi);
            }
        }
        // diagonal steps in the coarse path leave corner gaps between blocks
        for i in 1..len_a {
            if rows[i].0 > rows[i - 1].1 {
                rows[i].0 = rows[i - 1].1;
            }
        }
        // ranges are monotone, so the union over rows i-r..=i+r is [lo(i-r), hi(i+r))
        let widened = (0..len_a)
            .map(|i| {
                let lo = rows[i.saturating_sub(radius)].0.saturating_sub(radius);
                let hi = (rows[(i + radius).min(len_a - 1)].1 + radius).min(len_b);
                (lo, hi)
            })
            .collect();
        Self { rows: widened }
    }
}

/// Dynamic program restricted to `window`; returns the optimal path in it.
fn windowed_dtw(a: &[Vec<f64>], b: &[Vec<f64>], window: &Window) -> WarpPath {
    let n = a.len();
    let offsets: Vec<usize> = window
        .rows
        .iter()
        .scan(0, |acc, (lo, hi)| {
            let o = *acc;
            *acc += hi - lo;
            Some(o)
        })
        .collect();
    let mut acc = vec![f64::INFINITY; window.cells()];
    let get = |acc: &[f64], i: usize, j: usize| -> f64 {
        let (lo, hi) = window.rows[i];
        if j < lo || j >= hi {
            f64::INFINITY
        } else {
            acc[offsets[i] + j - lo]
        }
    };
    for i in 0..n {
        let (lo, hi) = window.rows[i];
        for j in lo..hi {
            let d = euclidean(&a[i], &b[j]);
            let prev = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => get(&acc, 0, j - 1),
                (_, 0) => get(&acc, i - 1, 0),
                _ => get(&acc, i - 1, j - 1)
                    .min(get(&acc, i - 1, j))
                    .min(get(&acc, i, j - 1)),
            };
            acc[offsets[i] + j - lo] = prev + d;
        }
    }

    // backtrack; ties prefer the diagonal, then the reference step
    let (mut i, mut j) = (n - 1, b.len() - 1);
    let mut pairs = vec![(i, j)];
    while i > 0 || j > 0 {
        (i, j) = match (i, j) {
            (0, _) => (0, j - 1),
            (_, 0) => (i - 1, 0),
            _ => {
                let cands = [(i - 1, j - 1), (i - 1, j), (i, j - 1)];
                let mut best = cands[0];
                for c in &cands[1..] {
                    if get(&acc, c.0, c.1) < get(&acc, best.0, best.1) {
                        best = *c;
                    }
                }
                best
            }
        };
        pairs.push((i, j));
    }
    pairs.reverse();
    let cost = pairs.iter().map(|&(i, j)| euclidean(&a[i], &b[j])).sum();
    WarpPath { pairs, cost }
}

/// Globally optimal alignment of `b` onto `a` over the full cost matrix.
pub fn dtw_exact(a: &MultiChannelSeries, b: &MultiChannelSeries) -> Result<WarpPath> {
    check_inputs(a, b)?;
    let (fa, fb) = (frames(a), frames(b));
    Ok(windowed_dtw(&fa, &fb, &Window::full(fa.len(), fb.len())))
}

fn coarsen(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.chunks(2)
        .map(|pair| match pair {
            [p, q] => p.iter().zip(q).map(|(u, v)| 0.5 * (u + v)).collect(),
            [p] => p.clone(),
            _ => unreachable!(),
        })
        .collect()
}

struct BudgetExceeded;

fn fastdtw_frames(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    radius: usize,
    budget: Option<usize>,
) -> std::result::Result<WarpPath, BudgetExceeded> {
    // a window of this size already spans the whole matrix at the next level
    let min_size = (radius + 2).max(2 * radius);
    if a.len() <= min_size || b.len() <= min_size {
        let window = Window::full(a.len(), b.len());
        if budget.is_some_and(|cap| window.cells() > cap) {
            return Err(BudgetExceeded);
        }
        return Ok(windowed_dtw(a, b, &window));
    }
    let coarse = fastdtw_frames(&coarsen(a), &coarsen(b), radius, budget)?;
    let window = Window::project(&coarse.pairs, a.len(), b.len(), radius);
    if budget.is_some_and(|cap| window.cells() > cap) {
        return Err(BudgetExceeded);
    }
    Ok(windowed_dtw(a, b, &window))
}

/// Multiresolution approximate DTW constrained to a projected window of
/// half-width `cfg.radius`. Falls back to `cfg.fallback_radius` when the
/// window would exceed `cfg.cell_budget` cells.
pub fn fastdtw(a: &MultiChannelSeries, b: &MultiChannelSeries, cfg: &DtwConfig) -> Result<WarpPath> {
    check_inputs(a, b)?;
    cfg.validate()?;
    let (fa, fb) = (frames(a), frames(b));
    match fastdtw_frames(&fa, &fb, cfg.radius, Some(cfg.cell_budget)) {
        Ok(path) => Ok(path),
        Err(BudgetExceeded) => {
            log::warn!(
                "DTW window exceeds {} cells at radius {}; retrying with radius {}",
                cfg.cell_budget,
                cfg.radius,
                cfg.fallback_radius
            );
            Ok(fastdtw_frames(&fa, &fb, cfg.fallback_radius, None).unwrap_or_else(|_| unreachable!()))
        }
    }
}

/// Collapse `query` onto the reference time axis: output frame `i` is the
/// mean of every query frame the path maps to reference index `i`.
pub fn warp_to_reference(
    query: &MultiChannelSeries,
    path: &WarpPath,
    ref_len: usize,
) -> Result<MultiChannelSeries> {
    let n_q = query.n_frames();
    if let Some(&(i, j)) = path.pairs.iter().find(|&&(i, j)| i >= ref_len || j >= n_q) {
        return Err(Error::PathOutOfRange(format!(
            "pair ({i},{j}) outside {ref_len}x{n_q}"
        )));
    }
    let c = query.n_channels();
    let mut sums = DMatrix::<f64>::zeros(ref_len, c);
    let mut counts = vec![0usize; ref_len];
    for &(i, j) in &path.pairs {
        counts[i] += 1;
        for ch in 0..c {
            sums[(i, ch)] += query.data()[(j, ch)];
        }
    }
    if let Some(i) = counts.iter().position(|&k| k == 0) {
        return Err(Error::PathOutOfRange(format!("reference index {i} is not mapped")));
    }
    for (i, &k) in counts.iter().enumerate() {
        for ch in 0..c {
            sums[(i, ch)] /= k as f64;
        }
    }
    MultiChannelSeries::new(sums, query.sample_rate_hz(), query.channel_names().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: &[f64]) -> MultiChannelSeries {
        MultiChannelSeries::from_channels(&[x.to_vec()], 50.0).unwrap()
    }

    #[test]
    fn identical_series_align_diagonally() {
        let a = one(&[0.3, -1.0, 2.0, 0.5]);
        let p = dtw_exact(&a, &a).unwrap();
        assert_eq!(p.pairs, WarpPath::identity(4).pairs);
        assert_eq!(p.cost, 0.0);
        let f = fastdtw(&a, &a, &DtwConfig::default()).unwrap();
        assert_eq!(f, p);
    }

    #[test]
    fn stretched_series_aligns_at_zero_cost() {
        let p = dtw_exact(&one(&[0.0, 1.0, 2.0]), &one(&[0.0, 0.0, 1.0, 2.0])).unwrap();
        assert_eq!(p.cost, 0.0);
        assert_eq!(p.pairs, vec![(0, 0), (0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn single_frames() {
        let p = dtw_exact(&one(&[1.0]), &one(&[2.0])).unwrap();
        assert_eq!(p.pairs, vec![(0, 0)]);
        assert_eq!(p.cost, 1.0);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let a = MultiChannelSeries::from_channels(&[vec![0.0; 3], vec![0.0; 3]], 50.0).unwrap();
        assert!(matches!(
            dtw_exact(&a, &one(&[0.0; 3])),
            Err(Error::ChannelMismatch { .. })
        ));
        assert!(fastdtw(&a, &one(&[0.0; 3]), &DtwConfig::default()).is_err());
    }

    #[test]
    fn coarsen_keeps_trailing_frame() {
        let x = vec![vec![1.0], vec![3.0], vec![5.0], vec![7.0], vec![9.0]];
        assert_eq!(coarsen(&x), vec![vec![2.0], vec![6.0], vec![9.0]]);
    }

    #[test]
    fn projected_window_contains_projected_path() {
        let coarse = vec![(0, 0), (1, 1), (1, 2), (2, 3)];
        let w = Window::project(&coarse, 6, 8, 0);
        for &(i, j) in &coarse {
            for fi in [2 * i, 2 * i + 1] {
                for fj in [2 * j, 2 * j + 1] {
                    let (lo, hi) = w.rows[fi];
                    assert!(fj >= lo && fj < hi, "({fi},{fj}) not in {:?}", w.rows[fi]);
                }
            }
        }
    }

    #[test]
    fn warp_identity_is_noop() {
        let x = one(&[1.0, 2.0, 3.0]);
        assert_eq!(warp_to_reference(&x, &WarpPath::identity(3), 3).unwrap(), x);
    }

    #[test]
    fn warp_averages_many_to_one() {
        let x = one(&[2.0, 4.0, 7.0]);
        let path = WarpPath {
            pairs: vec![(0, 0), (0, 1), (1, 2)],
            cost: 0.0,
        };
        let y = warp_to_reference(&x, &path, 2).unwrap();
        assert_eq!(y.channel(0), &[3.0, 7.0]);
    }

    #[test]
    fn warp_rejects_out_of_range() {
        let x = one(&[2.0, 4.0]);
        let path = WarpPath {
            pairs: vec![(0, 0), (1, 2)],
            cost: 0.0,
        };
        assert!(matches!(
            warp_to_reference(&x, &path, 2),
            Err(Error::PathOutOfRange(_))
        ));
    }

    #[test]
    fn budget_triggers_fallback_radius() {
        let a: Vec<f64> = (0..400).map(|i| (i as f64 * 0.05).sin()).collect();
        let b: Vec<f64> = (0..440).map(|i| (i as f64 * 0.045).sin()).collect();
        let tight = DtwConfig {
            radius: 30,
            fallback_radius: 2,
            cell_budget: 10_000,
            ..DtwConfig::default()
        };
        let p = fastdtw(&one(&a), &one(&b), &tight).unwrap();
        p.validate(400, 440).unwrap();
        let direct = fastdtw_frames(
            &frames(&one(&a)),
            &frames(&one(&b)),
            2,
            None,
        )
        .unwrap_or_else(|_| unreachable!());
        assert_eq!(p, direct);
    }
}

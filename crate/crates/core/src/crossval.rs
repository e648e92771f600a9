//! Sentence-level nested cross-validation of elastic-net encoding models.
//!
//! Every repetition of a sentence travels with it, so a fold never sees the
//! same sentence on both sides. Inside each outer training set an inner CV
//! chooses `(α, λ)` per channel; the model is then refitted on the whole
//! outer training set and scored on the held-out sentences.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{build_lagged, reshape_weights, stack_designs, LagSpec, LaggedDesign};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix, SpeechMode};
use crate::preprocess::MultiChannelSeries;
use crate::solver::{AdmmProblem, ElasticNetConfig, TrfWeights};
use crate::stats::{self, clamp_r, derive_seed, hash_label, HeldOut, NullDistribution};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub outer: Vec<Fold>,
    /// Inner folds over each outer training set, indexed like `outer`.
    pub inner: Vec<Vec<Fold>>,
}

impl FoldPlan {
    /// Stable digest of the fold memberships.
    pub fn fingerprint(&self) -> u64 {
        let mut text = String::new();
        for (o, fold) in self.outer.iter().enumerate() {
            text.push_str(&format!("o{o}:{};", fold.test.join(",")));
            for (i, inner) in self.inner[o].iter().enumerate() {
                text.push_str(&format!("i{i}:{};", inner.test.join(",")));
            }
        }
        hash_label(&text)
    }

    pub fn fold_of(&self, sentence_id: &str) -> Option<usize> {
        self.outer.iter().position(|f| f.test.iter().any(|s| s == sentence_id))
    }
}

fn split(ids: &[String], k: usize) -> Vec<Fold> {
    let n = ids.len();
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = n / k + usize::from(i < n % k);
        let test: Vec<String> = ids[start..start + size].to_vec();
        let train = ids[..start].iter().chain(&ids[start + size..]).cloned().collect();
        folds.push(Fold { train, test });
        start += size;
    }
    folds
}

fn shuffled(ids: &BTreeSet<String>, seed: u64) -> Vec<String> {
    let mut v: Vec<String> = ids.iter().cloned().collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// Seeded sentence-level outer and inner folds. Duplicate ids (repetitions)
/// collapse to one sentence.
pub fn make_folds<S: AsRef<str>>(sentence_ids: &[S], k_outer: usize, k_inner: usize, seed: u64) -> Result<FoldPlan> {
    if k_outer < 2 || k_inner < 2 {
        return Err(Error::Config(format!(
            "need at least 2 outer and 2 inner folds, got {k_outer} and {k_inner}"
        )));
    }
    let unique: BTreeSet<String> = sentence_ids.iter().map(|s| s.as_ref().to_string()).collect();
    if unique.len() < k_outer {
        return Err(Error::TooFewSentences {
            sentences: unique.len(),
            folds: k_outer,
        });
    }
    let outer = split(&shuffled(&unique, seed), k_outer);
    let mut inner = Vec::with_capacity(k_outer);
    for (o, fold) in outer.iter().enumerate() {
        if fold.train.len() < k_inner {
            return Err(Error::TooFewSentences {
                sentences: fold.train.len(),
                folds: k_inner,
            });
        }
        let train: BTreeSet<String> = fold.train.iter().cloned().collect();
        inner.push(split(&shuffled(&train, derive_seed(&[seed, o as u64])), k_inner));
    }
    Ok(FoldPlan { seed, outer, inner })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            alphas: vec![1e-3, 1e-2, 1e-1],
            lambdas: vec![0.1, 0.3, 0.5],
        }
    }
}

impl GridSpec {
    pub fn single(alpha: f64, lambda: f64) -> Self {
        Self {
            alphas: vec![alpha],
            lambdas: vec![lambda],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.lambdas.is_empty() {
            return Err(Error::Config("hyperparameter grid is empty".into()));
        }
        if self.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::Config("grid alphas must be finite and >= 0".into()));
        }
        if self.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::Config("grid lambdas must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `(α, λ)` pairs, α varying fastest so consecutive points can warm-start.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.lambdas
            .iter()
            .flat_map(|&l| self.alphas.iter().map(move |&a| (a, l)))
            .collect()
    }
}

/// How held-out frames are turned into one correlation per fold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RScoring {
    /// Correlation over all test frames concatenated.
    #[default]
    Pooled,
    /// Fisher mean of per-trial correlations.
    PerTrial,
}

/// Pearson correlation. Errors on a constant input rather than returning 0.
pub fn pearson_r(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: obs.len(),
        });
    }
    if pred.len() < 2 {
        return Err(Error::Degenerate("correlation needs at least two samples".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mo = obs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, o) in pred.iter().zip(obs) {
        let (dp, d_o) = (p - mp, o - mo);
        sxy += dp * d_o;
        sxx += dp * dp;
        syy += d_o * d_o;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let r = sxy / (sxx * syy).sqrt();
    if !r.is_finite() {
        return Err(Error::NonFinite("correlation"));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// `tanh(mean(atanh r))`.
pub fn fisher_mean(rs: &[f64]) -> Result<f64> {
    if rs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if rs.iter().any(|r| !(r.abs() < 1.0)) {
        return Err(Error::FisherDomain);
    }
    Ok((rs.iter().map(|r| r.atanh()).sum::<f64>() / rs.len() as f64).tanh())
}

/// One preprocessed, trimmed trial: envelopes and features on the same
/// frames, plus the span blocks used for permutation.
#[derive(Clone, Debug)]
pub struct EncodingTrial {
    pub sentence_id: String,
    pub envelope: MultiChannelSeries,
    pub features: FeatureMatrix,
    pub blocks: Vec<Range<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvSettings {
    pub k_outer: usize,
    pub k_inner: usize,
    pub scoring: RScoring,
    pub n_permutations: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self {
            k_outer: 5,
            k_inner: 3,
            scoring: RScoring::Pooled,
            n_permutations: stats::DEFAULT_PERMUTATIONS,
        }
    }
}

/// Everything `run_encoding` needs besides the data and the fold plan.
#[derive(Clone, Debug)]
pub struct EncodingSetup {
    pub subject_id: String,
    pub mode: SpeechMode,
    pub kind: FeatureKind,
    pub grid: GridSpec,
    pub lags: LagSpec,
    pub solver: ElasticNetConfig,
    pub cv: CvSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodingResult {
    pub subject_id: String,
    pub channel: usize,
    pub channel_name: String,
    pub mode: SpeechMode,
    pub feature_kind: FeatureKind,
    pub r_per_fold: Vec<f64>,
    pub r_mean_fisher: f64,
    /// Most frequent per-fold choice.
    pub chosen_alpha: f64,
    pub chosen_lambda: f64,
    pub alpha_per_fold: Vec<f64>,
    pub lambda_per_fold: Vec<f64>,
    pub null_threshold_95: f64,
    pub null_threshold_per_fold: Vec<f64>,
    /// False if any solve behind this channel hit the iteration cap.
    pub converged: bool,
    pub plan_fingerprint: u64,
    pub feature_names: Vec<String>,
    /// Fold-averaged weights, features × lags.
    pub weights: DMatrix<f64>,
    /// Outer-fold refit weights, flattened lag-major.
    pub fold_weights: Vec<DVector<f64>>,
}

struct FoldOutcome {
    r: Vec<f64>,
    chosen: Vec<(f64, f64)>,
    nulls: Vec<Option<NullDistribution>>,
    weights: Vec<DVector<f64>>,
    converged: Vec<bool>,
}

struct Prepared<'a> {
    trials: &'a [EncodingTrial],
    designs: Vec<LaggedDesign>,
    by_sentence: BTreeMap<&'a str, Vec<usize>>,
    n_channels: usize,
}

impl Prepared<'_> {
    fn indices(&self, sentences: &[String]) -> Vec<usize> {
        let mut idx: Vec<usize> = sentences
            .iter()
            .filter_map(|s| self.by_sentence.get(s.as_str()))
            .flatten()
            .copied()
            .collect();
        idx.sort_unstable();
        idx
    }

    fn problem(&self, idx: &[usize]) -> Result<AdmmProblem> {
        let x = stack_designs(idx.iter().map(|&i| &self.designs[i]))?;
        let rows: usize = idx.iter().map(|&i| self.trials[i].envelope.n_frames()).sum();
        let mut y = DMatrix::zeros(rows, self.n_channels);
        let mut r = 0;
        for &i in idx {
            let env = self.trials[i].envelope.data();
            y.rows_mut(r, env.nrows()).copy_from(env);
            r += env.nrows();
        }
        AdmmProblem::new(x, y)
    }

    fn predict(&self, idx: &[usize], w: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        idx.iter().map(|&i| &self.designs[i].matrix * w).collect()
    }

    /// Per-channel held-out score of stacked predictions.
    fn score(&self, idx: &[usize], preds: &[DMatrix<f64>], channel: usize, scoring: RScoring) -> f64 {
        let pred_cols: Vec<Vec<f64>> = preds.iter().map(|p| p.column(channel).iter().copied().collect()).collect();
        let pairs: Vec<(&[f64], &[f64])> = idx
            .iter()
            .zip(&pred_cols)
            .map(|(&i, p)| (p.as_slice(), self.trials[i].envelope.channel(channel)))
            .collect();
        stats::score(&pairs, scoring)
    }
}

fn weights_matrix(fits: &[TrfWeights], p: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(p, fits.len());
    for (c, f) in fits.iter().enumerate() {
        w.set_column(c, &f.w);
    }
    w
}

/// Mean inner-CV score per grid point and channel.
fn inner_scores(prep: &Prepared<'_>, folds: &[Fold], setup: &EncodingSetup) -> Result<Vec<Vec<f64>>> {
    let points = setup.grid.points();
    let per_fold = folds
        .par_iter()
        .map(|fold| -> Result<Vec<Vec<f64>>> {
            let train = prep.indices(&fold.train);
            let test = prep.indices(&fold.test);
            let problem = prep.problem(&train)?;
            let mut warm: Option<DMatrix<f64>> = None;
            let mut scores = Vec::with_capacity(points.len());
            for (k, &(alpha, lambda)) in points.iter().enumerate() {
                // warm start only along α at a fixed λ
                if k % setup.grid.alphas.len() == 0 {
                    warm = None;
                }
                let fits = problem.solve(&setup.solver.with_penalty(alpha, lambda), warm.as_ref())?;
                let w = weights_matrix(&fits, problem.n_columns());
                let preds = prep.predict(&test, &w);
                scores.push(
                    (0..prep.n_channels)
                        .map(|c| prep.score(&test, &preds, c, setup.cv.scoring))
                        .collect(),
                );
                warm = Some(w);
            }
            Ok(scores)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_folds = per_fold.len() as f64;
    Ok((0..points.len())
        .map(|k| {
            (0..prep.n_channels)
                .map(|c| per_fold.iter().map(|f| f[k][c]).sum::<f64>() / n_folds)
                .collect()
        })
        .collect())
}

fn run_fold(prep: &Prepared<'_>, plan: &FoldPlan, o: usize, setup: &EncodingSetup) -> Result<FoldOutcome> {
    let points = setup.grid.points();
    let n_ch = prep.n_channels;
    let chosen: Vec<(f64, f64)> = if points.len() == 1 {
        vec![points[0]; n_ch]
    } else {
        let scores = inner_scores(prep, &plan.inner[o], setup)?;
        (0..n_ch)
            .map(|c| {
                let mut best = 0;
                for k in 1..points.len() {
                    if scores[k][c] > scores[best][c] {
                        best = k;
                    }
                }
                points[best]
            })
            .collect()
    };

    let train = prep.indices(&plan.outer[o].train);
    let test = prep.indices(&plan.outer[o].test);
    let problem = prep.problem(&train)?;
    let p = problem.n_columns();
    let mut fits: Vec<Option<TrfWeights>> = vec![None; n_ch];
    for &(alpha, lambda) in &points {
        let cols: Vec<usize> = (0..n_ch).filter(|&c| chosen[c] == (alpha, lambda)).collect();
        if cols.is_empty() {
            continue;
        }
        let solved = problem.solve_columns(&setup.solver.with_penalty(alpha, lambda), &cols, None)?;
        for (c, f) in cols.into_iter().zip(solved) {
            fits[c] = Some(f);
        }
    }
    let fits: Vec<TrfWeights> = fits.into_iter().map(|f| f.expect("every channel has a grid point")).collect();
    let w = weights_matrix(&fits, p);
    let preds = prep.predict(&test, &w);

    let mut r = Vec::with_capacity(n_ch);
    let mut nulls = Vec::with_capacity(n_ch);
    for c in 0..n_ch {
        r.push(prep.score(&test, &preds, c, setup.cv.scoring));
        if setup.cv.n_permutations == 0 {
            nulls.push(None);
            continue;
        }
        let pred_cols: Vec<Vec<f64>> = preds.iter().map(|m| m.column(c).iter().copied().collect()).collect();
        let held: Vec<HeldOut<'_>> = test
            .iter()
            .zip(&pred_cols)
            .map(|(&i, pc)| HeldOut {
                pred: pc,
                obs: prep.trials[i].envelope.channel(c),
                blocks: &prep.trials[i].blocks,
            })
            .collect();
        let seed = derive_seed(&[plan.seed, hash_label(&setup.subject_id), c as u64, o as u64]);
        nulls.push(Some(stats::null_distribution(
            &held,
            setup.cv.scoring,
            setup.cv.n_permutations,
            seed,
        )?));
    }
    Ok(FoldOutcome {
        r,
        chosen,
        nulls,
        converged: fits.iter().map(|f| f.converged).collect(),
        weights: fits.into_iter().map(|f| f.w).collect(),
    })
}

fn validate_trials(trials: &[EncodingTrial], plan: &FoldPlan) -> Result<(usize, usize)> {
    let first = trials.first().ok_or(Error::EmptyInput)?;
    let n_ch = first.envelope.n_channels();
    let n_feat = first.features.n_features();
    for t in trials {
        if t.envelope.n_channels() != n_ch {
            return Err(Error::ChannelMismatch {
                left: n_ch,
                right: t.envelope.n_channels(),
            });
        }
        if t.features.n_features() != n_feat {
            return Err(Error::LengthMismatch {
                left: n_feat,
                right: t.features.n_features(),
            });
        }
        if t.features.n_frames() != t.envelope.n_frames() {
            return Err(Error::LengthMismatch {
                left: t.features.n_frames(),
                right: t.envelope.n_frames(),
            });
        }
        if plan.fold_of(&t.sentence_id).is_none() {
            return Err(Error::FoldPlanMismatch);
        }
    }
    Ok((n_ch, n_feat))
}

/// Nested CV for one subject, mode and feature set. Returns one result per
/// envelope channel.
pub fn run_encoding(trials: &[EncodingTrial], setup: &EncodingSetup, plan: &FoldPlan) -> Result<Vec<EncodingResult>> {
    setup.grid.validate()?;
    setup.solver.validate()?;
    setup.lags.validate()?;
    let (n_ch, n_feat) = validate_trials(trials, plan)?;

    let designs = trials
        .iter()
        .map(|t| build_lagged(&t.features, &setup.lags))
        .collect::<Result<Vec<_>>>()?;
    let mut by_sentence: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        by_sentence.entry(t.sentence_id.as_str()).or_default().push(i);
    }
    let prep = Prepared {
        trials,
        designs,
        by_sentence,
        n_channels: n_ch,
    };

    let outcomes = (0..plan.outer.len())
        .into_par_iter()
        .map(|o| run_fold(&prep, plan, o, setup))
        .collect::<Result<Vec<_>>>()?;

    let fingerprint = plan.fingerprint();
    let names = trials[0].envelope.channel_names().to_vec();
    (0..n_ch)
        .map(|c| {
            let r_per_fold: Vec<f64> = outcomes.iter().map(|f| f.r[c]).collect();
            let clamped: Vec<f64> = r_per_fold.iter().map(|&r| clamp_r(r)).collect();
            let fold_weights: Vec<DVector<f64>> = outcomes.iter().map(|f| f.weights[c].clone()).collect();
            let mean_w = fold_weights.iter().fold(DVector::zeros(n_feat * setup.lags.n_lags()), |acc, w| acc + w)
                / fold_weights.len() as f64;
            let choices: Vec<(f64, f64)> = outcomes.iter().map(|f| f.chosen[c]).collect();
            let (chosen_alpha, chosen_lambda) = most_frequent(&choices);
            let fold_nulls: Option<Vec<NullDistribution>> = outcomes.iter().map(|f| f.nulls[c].clone()).collect();
            // Fisher mean of the per-fold 95th percentiles.
            let (null_threshold_95, null_threshold_per_fold) = match fold_nulls {
                Some(n) => {
                    let per_fold: Vec<f64> = n.iter().map(|d| d.threshold_95).collect();
                    let clamped: Vec<f64> = per_fold.iter().map(|&t| clamp_r(t)).collect();
                    (fisher_mean(&clamped)?, per_fold)
                }
                None => (f64::NAN, vec![f64::NAN; outcomes.len()]),
            };
            let converged = outcomes.iter().all(|f| f.converged[c]);
            if !converged {
                log::warn!(
                    "subject {} channel {} ({} {}): solver hit the iteration cap",
                    setup.subject_id,
                    names[c],
                    setup.mode,
                    setup.kind
                );
            }
            Ok(EncodingResult {
                subject_id: setup.subject_id.clone(),
                channel: c,
                channel_name: names[c].clone(),
                mode: setup.mode,
                feature_kind: setup.kind,
                r_mean_fisher: fisher_mean(&clamped)?,
                r_per_fold,
                chosen_alpha,
                chosen_lambda,
                alpha_per_fold: choices.iter().map(|c| c.0).collect(),
                lambda_per_fold: choices.iter().map(|c| c.1).collect(),
                null_threshold_95,
                null_threshold_per_fold,
                converged,
                plan_fingerprint: fingerprint,
                feature_names: trials[0].features.feature_names.clone(),
                weights: reshape_weights(&mean_w, n_feat, &setup.lags)?,
                fold_weights,
            })
        })
        .collect()
}

/// Most frequent pair; ties go to the earliest occurrence.
fn most_frequent(choices: &[(f64, f64)]) -> (f64, f64) {
    let mut best = choices[0];
    let mut best_count = 0;
    for &c in choices {
        let count = choices.iter().filter(|&&d| d == c).count();
        if count > best_count {
            best = c;
            best_count = count;
        }
    }
    best
}

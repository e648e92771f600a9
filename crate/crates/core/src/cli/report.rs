//! The `analyze` verb: result tables and figures from `encoding.tsv`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;

use super::svg::{bar_chart, heat_map, BarSeries};
use super::{data, CmdResult, Failure, RunConfig, RESULTS_FILE};
use crate::analysis::{mean_sem, stars, weight_map};
use crate::crossval::EncodingResult;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, SpeechMode, KINEMATIC_COUNT, SPARC_COLUMNS};
use crate::io::{read_table, write_table};
use crate::stats::{bh_adjust, bh_fdr, wilcoxon_signed_rank};
use crate::varpart::partition;

/// One line of `encoding.tsv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub subject: String,
    pub mode: SpeechMode,
    pub kind: FeatureKind,
    pub channel: usize,
    pub channel_name: String,
    pub r_mean_fisher: f64,
    pub r_per_fold: Vec<f64>,
    pub chosen_alpha: f64,
    pub chosen_lambda: f64,
    pub null_threshold_95: f64,
    pub converged: bool,
    pub plan_fingerprint: u64,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ResultRow {
    pub const HEADER: [&'static str; 12] = [
        "subject",
        "mode",
        "feature_kind",
        "channel",
        "channel_name",
        "r_mean_fisher",
        "r_per_fold",
        "chosen_alpha",
        "chosen_lambda",
        "null_threshold_95",
        "converged",
        "plan_fingerprint",
    ];

    pub fn to_fields(&self) -> Vec<String> {
        vec![
            self.subject.clone(),
            self.mode.to_string(),
            self.kind.to_string(),
            self.channel.to_string(),
            self.channel_name.clone(),
            self.r_mean_fisher.to_string(),
            join(&self.r_per_fold),
            self.chosen_alpha.to_string(),
            self.chosen_lambda.to_string(),
            self.null_threshold_95.to_string(),
            self.converged.to_string(),
            format!("{:016x}", self.plan_fingerprint),
        ]
    }

    pub fn parse(fields: &[String]) -> Result<Self> {
        let bad = |what: &str, v: &str| Error::Format(format!("bad {what} '{v}'"));
        let num = |i: usize| fields[i].parse::<f64>().map_err(|_| bad(Self::HEADER[i], &fields[i]));
        if fields.len() != Self::HEADER.len() {
            return Err(Error::Format(format!("expected {} fields", Self::HEADER.len())));
        }
        Ok(Self {
            subject: fields[0].clone(),
            mode: fields[1].parse()?,
            kind: fields[2].parse()?,
            channel: fields[3].parse().map_err(|_| bad("channel", &fields[3]))?,
            channel_name: fields[4].clone(),
            r_mean_fisher: num(5)?,
            r_per_fold: fields[6]
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|_| bad("r_per_fold", v)))
                .collect::<Result<_>>()?,
            chosen_alpha: num(7)?,
            chosen_lambda: num(8)?,
            null_threshold_95: num(9)?,
            converged: fields[10].parse().map_err(|_| bad("converged", &fields[10]))?,
            plan_fingerprint: u64::from_str_radix(&fields[11], 16).map_err(|_| bad("plan_fingerprint", &fields[11]))?,
        })
    }
}

impl From<&EncodingResult> for ResultRow {
    fn from(r: &EncodingResult) -> Self {
        Self {
            subject: r.subject_id.clone(),
            mode: r.mode,
            kind: r.feature_kind,
            channel: r.channel,
            channel_name: r.channel_name.clone(),
            r_mean_fisher: r.r_mean_fisher,
            r_per_fold: r.r_per_fold.clone(),
            chosen_alpha: r.chosen_alpha,
            chosen_lambda: r.chosen_lambda,
            null_threshold_95: r.null_threshold_95,
            converged: r.converged,
            plan_fingerprint: r.plan_fingerprint,
        }
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let (header, rows) = read_table(path)?;
    if header != ResultRow::HEADER {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    rows.iter()
        .map(|r| ResultRow::parse(r).map_err(|e| e.in_file(path)))
        .collect()
}

type Key<'a> = (&'a str, SpeechMode, FeatureKind, usize);

fn f(x: f64) -> String {
    x.to_string()
}

fn mean_finite(v: &[f64]) -> f64 {
    let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

pub fn analyze(cfg: &RunConfig) -> CmdResult {
    let rows = data(read_rows(&cfg.output_dir.join(RESULTS_FILE)))?;
    let subjects: Vec<String> = if cfg.subjects.is_empty() {
        rows.iter().map(|r| r.subject.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        cfg.subjects.clone()
    };
    let present: BTreeSet<(&str, SpeechMode, FeatureKind)> =
        rows.iter().map(|r| (r.subject.as_str(), r.mode, r.kind)).collect();
    let mut missing = Vec::new();
    for s in &subjects {
        for &m in &cfg.modes {
            for &k in &cfg.feature_kinds {
                if !present.contains(&(s.as_str(), m, k)) {
                    missing.push(format!("{s}/{m}/{k}"));
                }
            }
        }
    }
    if subjects.is_empty() || !missing.is_empty() {
        return Err(Failure::Data(Error::Format(format!(
            "missing encode results for: {}",
            if missing.is_empty() { "every subject".to_string() } else { missing.join(", ") }
        ))));
    }

    let index: BTreeMap<Key<'_>, &ResultRow> = rows
        .iter()
        .filter(|r| subjects.contains(&r.subject))
        .map(|r| ((r.subject.as_str(), r.mode, r.kind, r.channel), r))
        .collect();
    let mut channels: BTreeMap<SpeechMode, BTreeMap<usize, String>> = BTreeMap::new();
    for r in index.values() {
        channels.entry(r.mode).or_default().insert(r.channel, r.channel_name.clone());
    }
    let has = |k: FeatureKind| cfg.feature_kinds.contains(&k);
    let ctx = Ctx {
        cfg,
        subjects: &subjects,
        index: &index,
        channels: &channels,
    };
    data(ctx.fig2a())?;
    if has(FeatureKind::Articulatory) && has(FeatureKind::Phoneme) {
        data(ctx.fig2b())?;
    }
    if has(FeatureKind::Articulatory) && has(FeatureKind::Phoneme) && has(FeatureKind::Concatenated) {
        data(ctx.fig3())?;
    }
    if has(FeatureKind::Articulatory) {
        data(ctx.fig4())?;
    }
    Ok(())
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    subjects: &'a [String],
    index: &'a BTreeMap<Key<'a>, &'a ResultRow>,
    channels: &'a BTreeMap<SpeechMode, BTreeMap<usize, String>>,
}

impl Ctx<'_> {
    fn modes(&self) -> impl Iterator<Item = (SpeechMode, &BTreeMap<usize, String>)> + '_ {
        self.cfg
            .modes
            .iter()
            .filter_map(|m| self.channels.get(m).map(|c| (*m, c)))
    }

    fn across_subjects(&self, mode: SpeechMode, kind: FeatureKind, ch: usize) -> Vec<&ResultRow> {
        self.subjects
            .iter()
            .filter_map(|s| self.index.get(&(s.as_str(), mode, kind, ch)).copied())
            .collect()
    }

    /// Mean ± SEM of r per channel, mode and feature kind, with chance levels.
    fn fig2a(&self) -> Result<()> {
        let header = [
            "mode",
            "feature_kind",
            "channel",
            "n_subjects",
            "mean_r",
            "sem_r",
            "mean_threshold_95",
        ];
        let mut rows = Vec::new();
        for (mode, chans) in self.modes() {
            let mut series = Vec::new();
            let mut chance = Vec::new();
            for &kind in &self.cfg.feature_kinds {
                let mut means = Vec::new();
                let mut sems = Vec::new();
                for (&c, name) in chans {
                    let rs = self.across_subjects(mode, kind, c);
                    let r: Vec<f64> = rs.iter().map(|x| x.r_mean_fisher).collect();
                    let thr = mean_finite(&rs.iter().map(|x| x.null_threshold_95).collect::<Vec<_>>());
                    let (m, s) = mean_sem(&r);
                    rows.push(vec![
                        mode.to_string(),
                        kind.to_string(),
                        name.clone(),
                        r.len().to_string(),
                        f(m),
                        f(s),
                        f(thr),
                    ]);
                    means.push(m);
                    sems.push(s);
                    if kind == self.cfg.feature_kinds[0] {
                        chance.push(thr);
                    }
                }
                series.push(BarSeries {
                    name: kind.to_string(),
                    values: means,
                    errors: sems,
                });
            }
            let labels: Vec<String> = chans.values().cloned().collect();
            let svg = bar_chart(&format!("Held-out r, {mode}"), &labels, &series, Some(&chance));
            write_text(&self.cfg.output_dir.join(format!("fig2a_{mode}.svg")), &svg)?;
        }
        write_table(&self.cfg.output_dir.join("fig2a_r.tsv"), &header, &rows)
    }

    /// Paired A − P differences with Wilcoxon tests corrected across every
    /// mode and channel.
    fn fig2b(&self) -> Result<()> {
        struct Cell {
            mode: SpeechMode,
            name: String,
            deltas: Vec<f64>,
            w_plus: f64,
            statistic: f64,
            p: f64,
        }
        let mut cells = Vec::new();
        for (mode, chans) in self.modes() {
            for (&c, name) in chans {
                let mut ra = Vec::new();
                let mut rp = Vec::new();
                for s in self.subjects {
                    let a = self.index.get(&(s.as_str(), mode, FeatureKind::Articulatory, c));
                    let p = self.index.get(&(s.as_str(), mode, FeatureKind::Phoneme, c));
                    if let (Some(a), Some(p)) = (a, p) {
                        if a.plan_fingerprint != p.plan_fingerprint {
                            return Err(Error::FoldPlanMismatch);
                        }
                        ra.push(a.r_mean_fisher);
                        rp.push(p.r_mean_fisher);
                    }
                }
                let deltas: Vec<f64> = ra.iter().zip(&rp).map(|(a, p)| a - p).collect();
                let (w_plus, statistic, p) = match wilcoxon_signed_rank(&ra, &rp) {
                    Ok(t) => (t.w_plus, t.statistic, t.p_value),
                    Err(Error::AllZeroDifferences | Error::EmptyInput) => (0.0, 0.0, 1.0),
                    Err(e) => return Err(e),
                };
                cells.push(Cell {
                    mode,
                    name: name.clone(),
                    deltas,
                    w_plus,
                    statistic,
                    p,
                });
            }
        }
        let p: Vec<f64> = cells.iter().map(|c| c.p).collect();
        let q = bh_adjust(&p);
        let reject = bh_fdr(&p, self.cfg.fdr_q);
        let header = [
            "mode",
            "channel",
            "n_subjects",
            "mean_delta_r",
            "sem_delta_r",
            "n_positive",
            "w_plus",
            "statistic",
            "p_value",
            "q_value",
            "significant",
            "stars",
        ];
        let rows: Vec<Vec<String>> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (m, s) = mean_sem(&c.deltas);
                vec![
                    c.mode.to_string(),
                    c.name.clone(),
                    c.deltas.len().to_string(),
                    f(m),
                    f(s),
                    c.deltas.iter().filter(|d| **d > 0.0).count().to_string(),
                    f(c.w_plus),
                    f(c.statistic),
                    f(c.p),
                    f(q[i]),
                    reject[i].to_string(),
                    stars(q[i]).to_string(),
                ]
            })
            .collect();
        write_table(&self.cfg.output_dir.join("fig2b_delta_r.tsv"), &header, &rows)
    }

    /// Unique and shared explained variance per subject, mode and channel.
    fn fig3(&self) -> Result<()> {
        let header = [
            "subject", "mode", "channel", "r2_a", "r2_p", "r2_ap", "unique_a", "unique_p", "shared",
        ];
        let mut rows = Vec::new();
        for (mode, chans) in self.modes() {
            for (&c, name) in chans {
                for s in self.subjects {
                    let get = |k| self.index.get(&(s.as_str(), mode, k, c));
                    let (Some(a), Some(p), Some(ap)) = (
                        get(FeatureKind::Articulatory),
                        get(FeatureKind::Phoneme),
                        get(FeatureKind::Concatenated),
                    ) else {
                        continue;
                    };
                    if a.plan_fingerprint != p.plan_fingerprint || a.plan_fingerprint != ap.plan_fingerprint {
                        return Err(Error::FoldPlanMismatch);
                    }
                    let v = partition(
                        a.r_mean_fisher.powi(2),
                        p.r_mean_fisher.powi(2),
                        ap.r_mean_fisher.powi(2),
                    );
                    rows.push(vec![
                        s.clone(),
                        mode.to_string(),
                        name.clone(),
                        f(v.r2_a),
                        f(v.r2_p),
                        f(v.r2_ap),
                        f(v.unique_a),
                        f(v.unique_p),
                        f(v.shared),
                    ]);
                }
            }
        }
        write_table(&self.cfg.output_dir.join("fig3_partition.tsv"), &header, &rows)
    }

    /// Kinematic features × channels, lag-summed and normalized per channel.
    fn fig4(&self) -> Result<()> {
        for (mode, chans) in self.modes() {
            let mut per_subject = Vec::new();
            for s in self.subjects {
                let path = super::weights_path(&self.cfg.output_dir, s, mode, FeatureKind::Articulatory);
                let by_channel = read_weights(&path)?;
                let mats = chans
                    .values()
                    .map(|name| {
                        by_channel
                            .get(name)
                            .cloned()
                            .ok_or_else(|| Error::Format(format!("{}: no weights for {name}", path.display())))
                    })
                    .collect::<Result<Vec<_>>>()?;
                per_subject.push(mats);
            }
            let rows: Vec<usize> = (0..KINEMATIC_COUNT).collect();
            let names: Vec<String> = SPARC_COLUMNS[..KINEMATIC_COUNT].iter().map(|s| s.to_string()).collect();
            let map = weight_map(&per_subject, &rows, names, chans.values().cloned().collect())?;
            let mut header = vec!["feature"];
            header.extend(map.channel_names.iter().map(String::as_str));
            let table: Vec<Vec<String>> = (0..map.matrix.nrows())
                .map(|i| {
                    let mut row = vec![map.feature_names[i].clone()];
                    row.extend(map.matrix.row(i).iter().map(|v| f(*v)));
                    row
                })
                .collect();
            write_table(&self.cfg.output_dir.join(format!("fig4_weights_{mode}.tsv")), &header, &table)?;
            let svg = heat_map(
                &format!("Normalized weights, {mode}"),
                &map.feature_names,
                &map.channel_names,
                &map.matrix,
            );
            write_text(&self.cfg.output_dir.join(format!("fig4_weights_{mode}.svg")), &svg)?;
        }
        Ok(())
    }
}

/// Features × lags weight matrices keyed by channel name.
fn read_weights(path: &Path) -> Result<BTreeMap<String, DMatrix<f64>>> {
    let (header, rows) = read_table(path)?;
    let n_lags = header.len().saturating_sub(2);
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in &rows {
        let vals = row[2..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("{}: bad weight", path.display())))?;
        grouped.entry(row[0].clone()).or_default().extend(vals);
    }
    Ok(grouped
        .into_iter()
        .map(|(c, v)| (c, DMatrix::from_row_slice(v.len() / n_lags.max(1), n_lags, &v)))
        .collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::from(e).in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_rows_round_trip() {
        let row = ResultRow {
            subject: "sub01".into(),
            mode: SpeechMode::Mimed,
            kind: FeatureKind::Concatenated,
            channel: 3,
            channel_name: "ch4".into(),
            r_mean_fisher: 0.123456789,
            r_per_fold: vec![0.1, -0.2, 1.0 / 3.0],
            chosen_alpha: 1e-2,
            chosen_lambda: 0.1,
            null_threshold_95: f64::NAN,
            converged: false,
            plan_fingerprint: 0xdead_beef_0000_0001,
        };
        let fields = row.to_fields();
        assert_eq!(fields.len(), ResultRow::HEADER.len());
        let back = ResultRow::parse(&fields).unwrap();
        assert!(back.null_threshold_95.is_nan());
        assert_eq!(
            ResultRow {
                null_threshold_95: 0.0,
                ..back
            },
            ResultRow {
                null_threshold_95: 0.0,
                ..row
            }
        );
    }

    #[test]
    fn mean_of_finite_values() {
        assert_eq!(mean_finite(&[1.0, f64::NAN, 3.0]), 2.0);
        assert!(mean_finite(&[f64::NAN]).is_nan());
    }
}

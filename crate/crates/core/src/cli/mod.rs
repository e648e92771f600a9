//! Command-line driver: run configs, the dataset layout and the
//! `preprocess`, `encode`, `analyze`, `synth` and `validate-config` verbs.
//!
//! Dataset layout, one directory per subject:
//!
//! ```text
//! <root>/<subject>/raw/<mode>/<sentence>_r<rep>.tsv        2 kHz EMG
//! <root>/<subject>/envelopes/<mode>/<sentence>_r<rep>.tsv  50 Hz envelopes
//! <root>/<subject>/sparc/<sentence>_r<rep>.tsv             articulatory tracks
//! <root>/<subject>/align/<sentence>_r<rep>.tsv             phoneme spans
//! ```
//!
//! Articulatory tracks and alignments belong to the aloud production of a
//! sentence; silent envelopes are warped onto that time axis.

mod report;
mod svg;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossval::{make_folds, run_encoding, CvSettings, EncodingResult, EncodingSetup, EncodingTrial, FoldPlan, GridSpec};
use crate::design::LagSpec;
use crate::dtw::{fastdtw, warp_to_reference, DtwConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, PhonemeAlignment, PhonemeInventory, SpeechMode, FEATURE_RATE_HZ};
use crate::io::{read_alignment, read_series, write_alignment, write_series_text, write_table};
use crate::pipeline::{prepare_trial, TrialInputs};
use crate::preprocess::{emg_to_envelope, zscore_per_channel, FilterSpec, MultiChannelSeries};
use crate::solver::ElasticNetConfig;
use crate::stats::{derive_seed, hash_label};
use crate::synthdata::{generate_subject, synthesize_raw_emg, SynthSpec};

pub use report::{analyze, ResultRow};

pub const THREADS_ENV: &str = "EMG_TRF_THREADS";
pub const RAW_RATE_HZ: f64 = 2000.0;
pub const RESULTS_FILE: &str = "encoding.tsv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    /// Empty means every subject directory under `dataset_root`.
    pub subjects: Vec<String>,
    pub modes: Vec<SpeechMode>,
    pub feature_kinds: Vec<FeatureKind>,
    pub lags: LagSpec,
    pub grid: GridSpec,
    pub solver: ElasticNetConfig,
    pub cv: CvSettings,
    pub filter: FilterSpec,
    pub dtw: DtwConfig,
    pub fdr_q: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("data"),
            output_dir: PathBuf::from("results"),
            subjects: Vec::new(),
            modes: SpeechMode::ALL.to_vec(),
            feature_kinds: vec![FeatureKind::Articulatory, FeatureKind::Phoneme],
            lags: LagSpec::default(),
            grid: GridSpec::default(),
            solver: ElasticNetConfig::default(),
            cv: CvSettings::default(),
            filter: FilterSpec::default(),
            dtw: DtwConfig::default(),
            fdr_q: 0.05,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Parameter checks that need no data.
    pub fn validate(&self) -> Result<()> {
        self.lags.validate()?;
        self.grid.validate()?;
        self.solver.validate()?;
        self.dtw.validate()?;
        self.filter.validate(RAW_RATE_HZ)?;
        if (self.lags.sample_rate_hz - FEATURE_RATE_HZ).abs() > 1e-9 {
            return Err(Error::Config(format!("lag sample rate must be {FEATURE_RATE_HZ} Hz")));
        }
        if self.cv.k_outer < 2 || self.cv.k_inner < 2 {
            return Err(Error::Config("k_outer and k_inner must be at least 2".into()));
        }
        if self.modes.is_empty() || self.feature_kinds.is_empty() {
            return Err(Error::Config("at least one mode and one feature kind are required".into()));
        }
        if has_duplicates(&self.modes) || has_duplicates(&self.feature_kinds) || has_duplicates(&self.subjects) {
            return Err(Error::Config("subjects, modes and feature kinds must not repeat".into()));
        }
        if let Some(s) = self.subjects.iter().find(|s| s.is_empty() || s.contains(['/', '\\'])) {
            return Err(Error::Config(format!("invalid subject id '{s}'")));
        }
        if !(self.fdr_q > 0.0 && self.fdr_q < 1.0) {
            return Err(Error::Config(format!("fdr_q {} outside (0, 1)", self.fdr_q)));
        }
        Ok(())
    }

    fn resolve_subjects(&self) -> Result<Vec<String>> {
        if !self.subjects.is_empty() {
            for s in &self.subjects {
                if !self.dataset_root.join(s).is_dir() {
                    return Err(Error::Format(format!(
                        "subject directory {} does not exist",
                        self.dataset_root.join(s).display()
                    )));
                }
            }
            return Ok(self.subjects.clone());
        }
        let mut found = Vec::new();
        for entry in fs::read_dir(&self.dataset_root).map_err(|e| Error::from(e).in_file(&self.dataset_root))? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                found.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        found.sort();
        if found.is_empty() {
            return Err(Error::Format(format!("no subjects under {}", self.dataset_root.display())));
        }
        Ok(found)
    }
}

fn has_duplicates<T: Ord>(v: &[T]) -> bool {
    v.iter().collect::<BTreeSet<_>>().len() != v.len()
}

/// `<sentence>_r<rep>`, the stem of every per-trial file.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrialKey {
    pub sentence: String,
    pub repetition: usize,
}

impl TrialKey {
    pub fn parse(stem: &str) -> Option<Self> {
        let (sentence, rep) = stem.rsplit_once("_r")?;
        if sentence.is_empty() {
            return None;
        }
        Some(Self {
            sentence: sentence.to_string(),
            repetition: rep.parse().ok()?,
        })
    }

    pub fn file_name(&self) -> String {
        format!("{self}.tsv")
    }
}

impl fmt::Display for TrialKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_r{}", self.sentence, self.repetition)
    }
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn raw_dir(&self, subject: &str, mode: SpeechMode) -> PathBuf {
        self.root.join(subject).join("raw").join(mode.as_str())
    }

    pub fn envelope_dir(&self, subject: &str, mode: SpeechMode) -> PathBuf {
        self.root.join(subject).join("envelopes").join(mode.as_str())
    }

    pub fn sparc_dir(&self, subject: &str) -> PathBuf {
        self.root.join(subject).join("sparc")
    }

    pub fn align_dir(&self, subject: &str) -> PathBuf {
        self.root.join(subject).join("align")
    }

    /// Sorted trial keys of the `.tsv` files in `dir`.
    pub fn trials_in(dir: &Path) -> Result<Vec<TrialKey>> {
        let entries = fs::read_dir(dir).map_err(|e| Error::from(e).in_file(dir))?;
        let mut keys = Vec::new();
        for entry in entries {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("tsv") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let key = TrialKey::parse(stem).ok_or_else(|| {
                Error::Format(format!("{}: file name is not <sentence>_r<rep>.tsv", path.display()))
            })?;
            keys.push(key);
        }
        keys.sort();
        if keys.is_empty() {
            return Err(Error::Format(format!("{}: no trials", dir.display())));
        }
        Ok(keys)
    }
}

/// What went wrong, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Data(Error),
    /// Compute failures that were isolated; the listed jobs have no output.
    Partial(Vec<String>),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Partial(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e}"),
            Failure::Data(e) => write!(f, "data error: {e}"),
            Failure::Partial(jobs) => write!(f, "{} job(s) failed: {}", jobs.len(), jobs.join("; ")),
        }
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

fn data<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Data)
}

#[derive(Parser, Debug)]
#[command(name = "emg-trf", version, about = "Encoding analysis of surface-EMG envelopes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Raw EMG to 50 Hz envelopes; silent trials are warped to their aloud pair.
    Preprocess(ConfigArgs),
    /// Cross-validated encoding models for every subject, mode and feature kind.
    Encode(ConfigArgs),
    /// Tables and figures from encoding results.
    Analyze(ConfigArgs),
    /// Writes a synthetic dataset in the layout the other verbs read.
    Synth(SynthArgs),
    /// Checks a config and the files it refers to without computing anything.
    ValidateConfig(ConfigArgs),
}

#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset_root: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub subjects: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<SpeechMode>>,
    #[arg(long, value_delimiter = ',')]
    pub feature_kinds: Option<Vec<FeatureKind>>,
    #[arg(long)]
    pub n_permutations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset_root {
            cfg.dataset_root = v.clone();
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = &self.subjects {
            cfg.subjects = v.clone();
        }
        if let Some(v) = &self.modes {
            cfg.modes = v.clone();
        }
        if let Some(v) = &self.feature_kinds {
            cfg.feature_kinds = v.clone();
        }
        if let Some(v) = self.n_permutations {
            cfg.cv.n_permutations = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Dataset root to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    /// JSON synthetic-data spec; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',', default_value = "aloud,mimed,subvocal")]
    pub modes: Vec<SpeechMode>,
    /// Also write 2 kHz raw EMG for `preprocess`.
    #[arg(long)]
    pub raw: bool,
}

/// Parses arguments, runs the verb and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn run(command: Command) -> CmdResult {
    let config = |a: &ConfigArgs| a.resolve().map_err(Failure::Config);
    match command {
        Command::Preprocess(a) => preprocess(&config(&a)?),
        Command::Encode(a) => encode(&config(&a)?),
        Command::Analyze(a) => analyze(&config(&a)?),
        Command::Synth(a) => synth(&a),
        Command::ValidateConfig(a) => {
            let cfg = config(&a)?;
            let subjects = data(cfg.resolve_subjects())?;
            let has_raw = subjects
                .iter()
                .any(|s| cfg.modes.iter().any(|&m| Layout::new(&cfg.dataset_root).raw_dir(s, m).is_dir()));
            if has_raw {
                data(check_raw(&cfg, &subjects))?;
            }
            let has_env = subjects
                .iter()
                .any(|s| cfg.modes.iter().any(|&m| Layout::new(&cfg.dataset_root).envelope_dir(s, m).is_dir()));
            if has_env {
                data(load_encoding_inputs(&cfg, &subjects))?;
            }
            println!("config ok: {} subject(s)", subjects.len());
            Ok(())
        }
    }
}

/// Every raw file parses, its rate suits the filters, and every silent
/// trial has an aloud partner.
fn check_raw(cfg: &RunConfig, subjects: &[String]) -> Result<()> {
    let layout = Layout::new(&cfg.dataset_root);
    for s in subjects {
        let aloud: BTreeSet<TrialKey> = if layout.raw_dir(s, SpeechMode::Aloud).is_dir() {
            Layout::trials_in(&layout.raw_dir(s, SpeechMode::Aloud))?.into_iter().collect()
        } else {
            BTreeSet::new()
        };
        let mut modes = cfg.modes.clone();
        if modes.iter().any(|m| m.is_silent()) && !modes.contains(&SpeechMode::Aloud) {
            modes.insert(0, SpeechMode::Aloud);
        }
        for &mode in &modes {
            let dir = layout.raw_dir(s, mode);
            for key in Layout::trials_in(&dir)? {
                if mode.is_silent() && !aloud.contains(&key) {
                    return Err(Error::Format(format!(
                        "silent trial {s}/{mode}/{key} has no aloud pair in {}",
                        layout.raw_dir(s, SpeechMode::Aloud).display()
                    )));
                }
                let path = dir.join(key.file_name());
                let raw = read_series(&path)?;
                cfg.filter.validate(raw.sample_rate_hz()).map_err(|e| e.in_file(&path))?;
                if raw.is_empty() {
                    return Err(Error::EmptyInput.in_file(&path));
                }
            }
        }
    }
    Ok(())
}

fn preprocess(cfg: &RunConfig) -> CmdResult {
    let subjects = data(cfg.resolve_subjects())?;
    data(check_raw(cfg, &subjects))?;
    let layout = Layout::new(&cfg.dataset_root);

    let jobs: Vec<(String, Result<Vec<(SpeechMode, TrialKey, MultiChannelSeries)>>)> = subjects
        .par_iter()
        .map(|s| (s.clone(), preprocess_subject(cfg, &layout, s)))
        .collect();
    let mut failures = Vec::new();
    for (s, outcome) in jobs {
        match outcome {
            Ok(envs) => {
                for (mode, key, env) in envs {
                    data(write_series_text(&layout.envelope_dir(&s, mode).join(key.file_name()), &env))?;
                }
            }
            Err(e) => failures.push(format!("{s}: {e}")),
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Partial(failures))
    }
}

fn preprocess_subject(
    cfg: &RunConfig,
    layout: &Layout,
    subject: &str,
) -> Result<Vec<(SpeechMode, TrialKey, MultiChannelSeries)>> {
    let envelope = |mode: SpeechMode, key: &TrialKey| -> Result<MultiChannelSeries> {
        let path = layout.raw_dir(subject, mode).join(key.file_name());
        emg_to_envelope(&read_series(&path)?, &cfg.filter, FEATURE_RATE_HZ).map_err(|e| e.in_file(&path))
    };
    let silent: Vec<SpeechMode> = cfg.modes.iter().copied().filter(|m| m.is_silent()).collect();
    let mut aloud = BTreeMap::new();
    if cfg.modes.contains(&SpeechMode::Aloud) || !silent.is_empty() {
        for key in Layout::trials_in(&layout.raw_dir(subject, SpeechMode::Aloud))? {
            let env = envelope(SpeechMode::Aloud, &key)?;
            aloud.insert(key, env);
        }
    }
    let mut out = Vec::new();
    if cfg.modes.contains(&SpeechMode::Aloud) {
        out.extend(aloud.iter().map(|(k, e)| (SpeechMode::Aloud, k.clone(), e.clone())));
    }
    for mode in silent {
        for key in Layout::trials_in(&layout.raw_dir(subject, mode))? {
            let reference = &aloud[&key];
            let query = envelope(mode, &key)?;
            let path = fastdtw(reference, &query, &cfg.dtw)?;
            let warped = warp_to_reference(&query, &path, reference.n_frames())?;
            out.push((mode, key, zscore_per_channel(&warped)?));
        }
    }
    info!("{subject}: {} envelopes", out.len());
    Ok(out)
}

/// Prepared trials per `(mode, kind)` and the subject's fold plan.
pub struct SubjectInputs {
    pub subject: String,
    pub plan: FoldPlan,
    pub trials: BTreeMap<(SpeechMode, FeatureKind), Vec<EncodingTrial>>,
}

fn load_encoding_inputs(cfg: &RunConfig, subjects: &[String]) -> Result<Vec<SubjectInputs>> {
    let layout = Layout::new(&cfg.dataset_root);
    let inventory = PhonemeInventory::arpabet();
    let mut out = Vec::new();
    for s in subjects {
        let mut shared: BTreeMap<TrialKey, (MultiChannelSeries, PhonemeAlignment)> = BTreeMap::new();
        let mut trials = BTreeMap::new();
        let mut sentences = BTreeSet::new();
        for &mode in &cfg.modes {
            let dir = layout.envelope_dir(s, mode);
            for key in Layout::trials_in(&dir)? {
                if !shared.contains_key(&key) {
                    let sparc_path = layout.sparc_dir(s).join(key.file_name());
                    let align_path = layout.align_dir(s).join(key.file_name());
                    for p in [&sparc_path, &align_path] {
                        if !p.is_file() {
                            return Err(Error::Format(format!(
                                "trial {s}/{mode}/{key} has no file {}",
                                p.display()
                            )));
                        }
                    }
                    shared.insert(key.clone(), (read_series(&sparc_path)?, read_alignment(&align_path)?));
                }
                let env_path = dir.join(key.file_name());
                let envelope = read_series(&env_path)?;
                let (sparc, alignment) = &shared[&key];
                for &kind in &cfg.feature_kinds {
                    let inputs = TrialInputs {
                        sentence_id: &key.sentence,
                        envelope: &envelope,
                        sparc,
                        alignment,
                    };
                    let trial = prepare_trial(inputs, mode, kind, &inventory).map_err(|e| e.in_file(&env_path))?;
                    trials.entry((mode, kind)).or_insert_with(Vec::new).push(trial);
                }
                sentences.insert(key.sentence.clone());
            }
        }
        let ids: Vec<String> = sentences.into_iter().collect();
        let plan = make_folds(&ids, cfg.cv.k_outer, cfg.cv.k_inner, derive_seed(&[cfg.seed, hash_label(s)]))
            .map_err(|e| Error::Format(format!("subject {s}: {e}")))?;
        out.push(SubjectInputs {
            subject: s.clone(),
            plan,
            trials,
        });
    }
    Ok(out)
}

fn encode(cfg: &RunConfig) -> CmdResult {
    let subjects = data(cfg.resolve_subjects())?;
    let inputs = data(load_encoding_inputs(cfg, &subjects))?;

    let jobs: Vec<(&SubjectInputs, SpeechMode, FeatureKind)> = inputs
        .iter()
        .flat_map(|si| si.trials.keys().map(move |&(m, k)| (si, m, k)))
        .collect();
    let outcomes: Vec<((String, SpeechMode), FeatureKind, Result<Vec<EncodingResult>>)> = jobs
        .par_iter()
        .map(|&(si, mode, kind)| {
            let setup = EncodingSetup {
                subject_id: si.subject.clone(),
                mode,
                kind,
                grid: cfg.grid.clone(),
                lags: cfg.lags.clone(),
                solver: cfg.solver.clone(),
                cv: cfg.cv.clone(),
            };
            info!("encoding {} {mode} {kind}", si.subject);
            let r = run_encoding(&si.trials[&(mode, kind)], &setup, &si.plan);
            ((si.subject.clone(), mode), kind, r)
        })
        .collect();

    let mut failed: BTreeMap<(String, SpeechMode), String> = BTreeMap::new();
    for (job, kind, r) in &outcomes {
        if let Err(e) = r {
            failed.entry(job.clone()).or_insert_with(|| format!("{} {} {kind}: {e}", job.0, job.1));
        }
    }
    let mut results: Vec<EncodingResult> = outcomes
        .into_iter()
        .filter(|(job, _, _)| !failed.contains_key(job))
        .flat_map(|(_, _, r)| r.unwrap_or_default())
        .collect();
    results.sort_by(|a, b| {
        (&a.subject_id, a.mode, a.feature_kind, a.channel).cmp(&(&b.subject_id, b.mode, b.feature_kind, b.channel))
    });

    data(write_results(cfg, &results, failed.values().cloned().collect()))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Partial(failed.into_values().collect()))
    }
}

fn write_results(cfg: &RunConfig, results: &[EncodingResult], failures: Vec<String>) -> Result<()> {
    let rows: Vec<Vec<String>> = results.iter().map(|r| ResultRow::from(r).to_fields()).collect();
    write_table(&cfg.output_dir.join(RESULTS_FILE), &ResultRow::HEADER, &rows)?;

    let mut by_job: BTreeMap<(&str, SpeechMode, FeatureKind), Vec<&EncodingResult>> = BTreeMap::new();
    for r in results {
        by_job.entry((&r.subject_id, r.mode, r.feature_kind)).or_default().push(r);
    }
    for ((subject, mode, kind), rs) in by_job {
        let lags = cfg.lags.lags_ms();
        let mut header = vec!["channel".to_string(), "feature".to_string()];
        header.extend(lags.iter().map(|l| l.to_string()));
        let mut rows = Vec::new();
        for r in rs {
            for (f, name) in r.feature_names.iter().enumerate() {
                let mut row = vec![r.channel_name.clone(), name.clone()];
                row.extend(r.weights.row(f).iter().map(|v| v.to_string()));
                rows.push(row);
            }
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_table(&weights_path(&cfg.output_dir, subject, mode, kind), &header, &rows)?;
    }

    let summary = Summary {
        toolkit_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        n_rows: results.len(),
        n_not_converged: results.iter().filter(|r| !r.converged).count(),
        failures,
    };
    let path = cfg.output_dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::from(e).in_file(&path))
}

pub fn weights_path(output_dir: &Path, subject: &str, mode: SpeechMode, kind: FeatureKind) -> PathBuf {
    output_dir.join("weights").join(subject).join(format!("{mode}_{kind}.tsv"))
}

#[derive(Serialize)]
struct Summary<'a> {
    toolkit_version: &'a str,
    config: &'a RunConfig,
    n_rows: usize,
    n_not_converged: usize,
    failures: Vec<String>,
}

fn synth(args: &SynthArgs) -> CmdResult {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(Error::from(e).in_file(p)))?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| Failure::Config(Error::Config(format!("{}: {e}", p.display()))))?
        }
        None => SynthSpec::default(),
    };
    if let Some(v) = args.sentences {
        spec.n_sentences = v;
    }
    if let Some(v) = args.repetitions {
        spec.repetitions = v;
    }
    if let Some(v) = args.snr_db {
        spec.snr_db = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    spec.validate().map_err(Failure::Config)?;
    if args.subjects == 0 || args.modes.is_empty() || has_duplicates(&args.modes) {
        return Err(Failure::Config(Error::Config(
            "synth needs at least one subject and distinct modes".into(),
        )));
    }
    let layout = Layout::new(&args.out);
    let width = args.subjects.to_string().len().max(2);
    let ids: Vec<String> = (1..=args.subjects).map(|i| format!("sub{i:0width$}")).collect();
    ids.par_iter()
        .map(|id| write_synth_subject(&layout, &spec, id, &args.modes, args.raw))
        .collect::<Result<Vec<()>>>()
        .map_err(Failure::Data)?;
    Ok(())
}

fn write_synth_subject(layout: &Layout, spec: &SynthSpec, id: &str, modes: &[SpeechMode], raw: bool) -> Result<()> {
    let subject = generate_subject(spec, id, modes)?;
    for t in &subject.trials {
        let key = TrialKey {
            sentence: t.sentence_id.clone(),
            repetition: t.repetition,
        };
        let file = key.file_name();
        write_series_text(&layout.sparc_dir(id).join(&file), &t.sparc)?;
        write_alignment(&layout.align_dir(id).join(&file), &t.alignment)?;
        write_series_text(&layout.envelope_dir(id, t.mode).join(&file), &t.envelope)?;
        if raw {
            let seed = derive_seed(&[spec.seed, hash_label(id), hash_label(t.mode.as_str()), hash_label(&file)]);
            let emg = synthesize_raw_emg(&t.produced, RAW_RATE_HZ, seed)?;
            write_series_text(&layout.raw_dir(id, t.mode).join(&file), &emg)?;
        }
    }
    let lags = subject.lags.lags_ms();
    let mut header = vec!["channel".to_string(), "feature".to_string()];
    header.extend(lags.iter().map(|l| l.to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (c, k) in subject.kernels.iter().enumerate() {
        for f in 0..k.nrows() {
            let mut row = vec![format!("ch{}", c + 1), crate::features::SPARC_COLUMNS[f].to_string()];
            row.extend(k.row(f).iter().map(|v| v.to_string()));
            rows.push(row);
        }
    }
    write_table(&layout.root.join(id).join("kernels.tsv"), &header, &rows)
}

//! End-to-end experiment pipeline: corpus, speaker split, d-vector and
//! i-vector systems, scoring backends, EER table and score fusion.
//!
//! Every stage draws its randomness from [`stage_seed`] applied to the
//! master seed, and nothing time- or path-dependent is written, so two runs
//! of one configuration produce byte-identical output directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{save_lda, save_plda, train_lda, train_plda, write_scores, ScoreSet};
use crate::corpus::{
    build_trials, generate_synthetic_corpus, normalize_features, oracle_posteriors, read_manifest,
    read_phone_set, write_trials, Dataset, FeatureMatrix, SyntheticSpec, TrialList, UtteranceRecord,
};
use crate::dvector::{augment_with_posteriors, extract_dvector, stack_context, ContextWindowSpec};
use crate::eval::{compute_eer, det_points, score_trials, sweep_fusion, write_det_csv, write_sweep_csv, FusionSweep, Scorer};
use crate::ivector::{accumulate_stats, save_tmatrix, save_ubm, train_tmatrix, train_ubm, BwStats, GmmUbm, IvectorExtractor, TMatrix};
use crate::neuralnet::{save_mlp, train, Activation, LabeledUtterance, MlpArchitecture, MlpParams, TrainConfig, TrainReport};
use crate::vectors::VectorArchive;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Cross-evaluate all eval utterances regardless of phrase.
    SemiTextIndependent,
    /// Restrict evaluation to one phrase.
    TextDependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Plain,
    /// Extra 100-unit bottleneck before the output layer.
    Nldr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Dvector,
    Ivector,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Dvector => "dvector",
            System::Ivector => "ivector",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Cosine,
    Lda,
    Plda,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Cosine => "cosine",
            Backend::Lda => "lda",
            Backend::Plda => "plda",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Backend::Cosine),
            "lda" => Ok(Backend::Lda),
            "plda" => Ok(Backend::Plda),
            other => Err(Error::invalid("backend", format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic(SyntheticSpec),
    /// A dataset manifest, with an optional phone list for phone labels.
    Manifest { path: PathBuf, phones: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvectorConfig {
    pub components: usize,
    pub dim: usize,
    pub ubm_iterations: usize,
    pub tv_iterations: usize,
}

impl Default for IvectorConfig {
    fn default() -> Self {
        IvectorConfig {
            components: 128,
            dim: 200,
            ubm_iterations: 20,
            tv_iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnConfig {
    pub window: usize,
    pub activation: Activation,
    /// Overrides the architecture's hidden layer widths.
    pub hidden_dims: Option<Vec<usize>>,
    /// Smoothing of the oracle phone posteriors used with `pdtr`.
    pub posterior_smoothing: f64,
    /// The training seed inside is replaced by the derived stage seed.
    pub train: TrainConfig,
}

impl Default for DnnConfig {
    fn default() -> Self {
        DnnConfig {
            window: 21,
            activation: Activation::RectifiedLinear,
            hidden_dims: None,
            posterior_smoothing: 0.05,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Evaluation phrase; required in text-dependent mode only.
    pub phrase_id: Option<String>,
    /// Phrases used for training in text-dependent mode (default: the
    /// evaluation phrase alone).
    pub train_phrases: Option<Vec<String>>,
    pub arch: Arch,
    /// Append phone posteriors to the DNN input.
    pub pdtr: bool,
    pub systems: Vec<System>,
    pub backends: Vec<Backend>,
    pub ivector: IvectorConfig,
    pub dnn: DnnConfig,
    /// Requested LDA output dimension; clamped to `speakers - 1` and the
    /// input dimension.
    pub lda_dim: usize,
    pub plda_iterations: usize,
    pub plda_length_norm_ivector: bool,
    pub plda_length_norm_dvector: bool,
    pub corpus: CorpusSource,
    /// Fraction of speakers used for training.
    pub train_fraction: f64,
    /// Per-utterance mean and variance normalisation of the features.
    pub normalize_features: bool,
    pub fusion: bool,
    pub alpha_grid: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::SemiTextIndependent,
            phrase_id: None,
            train_phrases: None,
            arch: Arch::Plain,
            pdtr: false,
            systems: vec![System::Dvector, System::Ivector],
            backends: vec![Backend::Cosine, Backend::Lda, Backend::Plda],
            ivector: IvectorConfig::default(),
            dnn: DnnConfig::default(),
            lda_dim: 80,
            plda_iterations: 10,
            plda_length_norm_ivector: true,
            plda_length_norm_dvector: false,
            corpus: CorpusSource::Synthetic(SyntheticSpec::default()),
            train_fraction: 0.8,
            normalize_features: false,
            fusion: true,
            alpha_grid: 101,
            seed: 0,
        }
    }
}

fn has_duplicates<T: Ord + Clone>(v: &[T]) -> bool {
    let mut s = v.to_vec();
    s.sort();
    s.windows(2).any(|w| w[0] == w[1])
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_string(self).expect("config serialises").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, &self.phrase_id) {
            (Mode::TextDependent, None) => {
                return Err(Error::invalid("phrase_id", "required in text-dependent mode"))
            }
            (Mode::SemiTextIndependent, Some(_)) => {
                return Err(Error::invalid("phrase_id", "only allowed in text-dependent mode"))
            }
            _ => {}
        }
        if self.train_phrases.is_some() && self.mode != Mode::TextDependent {
            return Err(Error::invalid("train_phrases", "only allowed in text-dependent mode"));
        }
        if matches!(&self.train_phrases, Some(p) if p.is_empty()) {
            return Err(Error::invalid("train_phrases", "empty list"));
        }
        if self.systems.is_empty() || has_duplicates(&self.systems) {
            return Err(Error::invalid("systems", "must be a non-empty list without repeats"));
        }
        if self.backends.is_empty() || has_duplicates(&self.backends) {
            return Err(Error::invalid("backends", "must be a non-empty list without repeats"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction", format!("{} not in (0, 1)", self.train_fraction)));
        }
        if self.lda_dim == 0 {
            return Err(Error::invalid("lda_dim", "must be >= 1"));
        }
        if self.alpha_grid < 2 {
            return Err(Error::invalid("alpha_grid", "need at least 2 points"));
        }
        let iv = &self.ivector;
        if iv.components == 0 || iv.dim == 0 {
            return Err(Error::invalid("ivector", "components and dim must be >= 1"));
        }
        let dnn = &self.dnn;
        if dnn.window == 0 || dnn.window % 2 == 0 {
            return Err(Error::invalid("dnn.window", format!("must be odd, got {}", dnn.window)));
        }
        if !(0.0..1.0).contains(&dnn.posterior_smoothing) {
            return Err(Error::invalid("dnn.posterior_smoothing", "not in [0, 1)"));
        }
        if matches!(&dnn.hidden_dims, Some(h) if h.is_empty() || h.contains(&0)) {
            return Err(Error::invalid("dnn.hidden_dims", "need at least one non-empty layer"));
        }
        dnn.train.validate()?;
        if let CorpusSource::Synthetic(spec) = &self.corpus {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Seed of a named pipeline stage, derived from the master seed.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, then a splitmix64 finaliser.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn load_corpus(config: &ExperimentConfig) -> Result<Dataset> {
    let ds = match &config.corpus {
        CorpusSource::Synthetic(spec) => generate_synthetic_corpus(spec)?,
        CorpusSource::Manifest { path, phones } => {
            let phones = phones.as_ref().map(read_phone_set).transpose()?;
            read_manifest(path, phones)?
        }
    };
    Ok(if config.normalize_features {
        ds.map_features(normalize_features)
    } else {
        ds
    })
}

/// Disjoint random speaker split. At least two speakers land on each side.
pub fn split_speakers(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.speakers().len();
    if n < 4 {
        return Err(Error::invalid("corpus", format!("need at least 4 speakers to split, got {n}")));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(2, n - 2);
    let mut order: Vec<&str> = ds.speakers().iter().map(String::as_str).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_spk: Vec<&str> = order[..n_train].to_vec();
    train_spk.sort_unstable();
    let in_train = |s: &str| train_spk.binary_search(&s).is_ok();
    Ok((
        ds.filter(|u| in_train(&u.speaker_id)),
        ds.filter(|u| !in_train(&u.speaker_id)),
    ))
}

/// Applies the phrase selection of text-dependent mode.
pub fn select_phrases(config: &ExperimentConfig, train: &Dataset, eval: &Dataset) -> Result<(Dataset, Dataset)> {
    let Some(phrase) = config.phrase_id.as_deref().filter(|_| config.mode == Mode::TextDependent) else {
        return Ok((train.clone(), eval.clone()));
    };
    let train_phrases: Vec<String> = config
        .train_phrases
        .clone()
        .unwrap_or_else(|| vec![phrase.to_owned()]);
    let eval = eval.filter(|u| u.phrase_id == phrase);
    if eval.is_empty() {
        return Err(Error::invalid("phrase_id", format!("no eval utterances of phrase {phrase:?}")));
    }
    let train = train.filter(|u| train_phrases.contains(&u.phrase_id));
    if let Some(p) = train_phrases
        .iter()
        .find(|p| !train.utterances().iter().any(|u| &&u.phrase_id == p))
    {
        return Err(Error::invalid("train_phrases", format!("no training utterances of phrase {p:?}")));
    }
    Ok((train, eval))
}

fn arch_for(config: &ExperimentConfig, input_dim: usize, output_dim: usize) -> MlpArchitecture {
    let mut arch = match config.arch {
        Arch::Plain => MlpArchitecture::plain(input_dim, output_dim),
        Arch::Nldr => MlpArchitecture::bottleneck(input_dim, output_dim),
    };
    if let Some(h) = &config.dnn.hidden_dims {
        arch.hidden_dims = match config.arch {
            Arch::Plain => h.clone(),
            Arch::Nldr => h.iter().copied().chain([100]).collect(),
        };
    }
    arch.activation = config.dnn.activation;
    arch
}

/// Network input of one utterance: spliced frames, plus phone posteriors
/// when `pdtr` is set.
pub fn dnn_input(config: &ExperimentConfig, u: &UtteranceRecord, n_phones: usize) -> Result<FeatureMatrix> {
    let stacked = stack_context(&u.features, ContextWindowSpec { window: config.dnn.window })?;
    if !config.pdtr {
        return Ok(stacked);
    }
    let post = oracle_posteriors(u, n_phones, config.dnn.posterior_smoothing)?;
    augment_with_posteriors(&stacked, Some(&post))
}

fn n_phones(ds: &Dataset) -> usize {
    ds.phone_set().len()
}

/// Trains the speaker classifier on `train` (one class per speaker).
pub fn train_dnn(config: &ExperimentConfig, train_ds: &Dataset) -> Result<(MlpParams, TrainReport)> {
    if config.pdtr && n_phones(train_ds) == 0 {
        return Err(Error::invalid("pdtr", "the corpus has no phone set"));
    }
    let utts = train_ds
        .utterances()
        .iter()
        .map(|u| {
            Ok(LabeledUtterance {
                inputs: dnn_input(config, u, n_phones(train_ds))?,
                class: train_ds.speaker_index(&u.speaker_id).expect("speaker of own dataset"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let input_dim = utts.first().map(|u| u.inputs.cols()).ok_or_else(|| Error::invalid("train", "no utterances"))?;
    let arch = arch_for(config, input_dim, train_ds.speakers().len());
    let tc = TrainConfig {
        seed: stage_seed(config.seed, "dnn"),
        ..config.dnn.train.clone()
    };
    train(&utts, &arch, &tc)
}

pub fn extract_dvectors(config: &ExperimentConfig, params: &MlpParams, ds: &Dataset) -> Result<VectorArchive> {
    let mut out = VectorArchive::new();
    for u in ds.utterances() {
        let x = dnn_input(config, u, n_phones(ds))?;
        out.insert(u.utterance_id.clone(), extract_dvector(params, &x, None)?.values)?;
    }
    Ok(out)
}

pub fn train_ubm_on(config: &ExperimentConfig, train_ds: &Dataset) -> Result<GmmUbm> {
    let frames = FeatureMatrix::vstack(train_ds.utterances().iter().map(|u| &u.features))?;
    let fit = train_ubm(
        &frames,
        config.ivector.components,
        config.ivector.ubm_iterations,
        stage_seed(config.seed, "ubm"),
    )?;
    Ok(fit.model)
}

pub fn collect_stats(ubm: &GmmUbm, ds: &Dataset) -> Result<Vec<BwStats>> {
    ds.utterances().iter().map(|u| accumulate_stats(ubm, &u.features)).collect()
}

pub fn train_tv_on(config: &ExperimentConfig, ubm: &GmmUbm, train_ds: &Dataset) -> Result<TMatrix> {
    let stats = collect_stats(ubm, train_ds)?;
    let fit = train_tmatrix(
        &stats,
        ubm,
        config.ivector.dim,
        config.ivector.tv_iterations,
        stage_seed(config.seed, "tv"),
    )?;
    Ok(fit.model)
}

pub fn extract_ivectors(ubm: &GmmUbm, t: &TMatrix, ds: &Dataset) -> Result<VectorArchive> {
    let ex = IvectorExtractor::new(ubm, t)?;
    let mut out = VectorArchive::new();
    for u in ds.utterances() {
        let stats = accumulate_stats(ubm, &u.features)?;
        out.insert(u.utterance_id.clone(), ex.extract(&stats)?.values)?;
    }
    Ok(out)
}

/// Vectors of the training utterances with their speaker indices.
pub fn labelled_vectors<'a>(archive: &'a VectorArchive, ds: &Dataset) -> Result<(Vec<&'a [f64]>, Vec<usize>)> {
    let mut vectors = Vec::with_capacity(ds.len());
    let mut labels = Vec::with_capacity(ds.len());
    let mut missing = Vec::new();
    for u in ds.utterances() {
        match archive.get(&u.utterance_id) {
            Some(v) => {
                vectors.push(v);
                labels.push(ds.speaker_index(&u.speaker_id).expect("speaker of own dataset"));
            }
            None => missing.push(u.utterance_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingIds {
            count: missing.len(),
            first: missing.into_iter().take(10).collect(),
        });
    }
    Ok((vectors, labels))
}

/// LDA output dimension actually used for a training set.
pub fn effective_lda_dim(requested: usize, n_speakers: usize, input_dim: usize) -> usize {
    requested.min(n_speakers.saturating_sub(1)).min(input_dim).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub system: System,
    pub backend: Backend,
    pub eer: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionReport {
    /// The input weighted by `alpha`.
    pub a: (System, Backend),
    pub b: (System, Backend),
    pub sweep: FusionSweep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub fusion: Option<FusionReport>,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub vector_dims: Vec<(System, usize)>,
    pub dnn_training: Option<TrainReport>,
    pub provenance: Provenance,
}

impl RunReport {
    pub fn eer(&self, system: System, backend: Backend) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.backend == backend)
            .map(|r| r.eer)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,backend,eer\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.system.name(), r.backend.name(), r.eer).unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "trials: {} target, {} nontarget", self.n_target, self.n_nontarget).unwrap();
        for (s, d) in &self.vector_dims {
            writeln!(out, "{} dim: {d}", s.name()).unwrap();
        }
        if let Some(t) = &self.dnn_training {
            let accepted = t.epochs.iter().filter(|e| e.accepted).count();
            let last_cv = t
                .epochs
                .iter()
                .rev()
                .find(|e| e.accepted)
                .map_or(t.initial_cv_loss, |e| e.cv_loss);
            writeln!(
                out,
                "dnn: {} epochs ({accepted} accepted), cv loss {:.6} -> {last_cv:.6}, stop {:?}",
                t.epochs.len(),
                t.initial_cv_loss,
                t.stop
            )
            .unwrap();
        }
        writeln!(out, "\n{:<8} {:<7} {:>8}", "system", "backend", "EER(%)").unwrap();
        for r in &self.rows {
            writeln!(out, "{:<8} {:<7} {:>8.2}", r.system.name(), r.backend.name(), 100.0 * r.eer).unwrap();
        }
        if let Some(f) = &self.fusion {
            writeln!(
                out,
                "\nfusion: alpha*{}-{} + (1-alpha)*{}-{}: best alpha {:.2}, EER {:.2}% (alpha=0: {:.2}%, alpha=1: {:.2}%)",
                f.a.0.name(),
                f.a.1.name(),
                f.b.0.name(),
                f.b.1.name(),
                f.sweep.best_alpha,
                100.0 * f.sweep.best_eer,
                100.0 * f.sweep.eers[0],
                100.0 * f.sweep.eers[f.sweep.eers.len() - 1],
            )
            .unwrap();
        }
        writeln!(
            out,
            "\nconfig sha256 {}\nseed {}\nversion {}",
            self.provenance.config_hash, self.provenance.seed, self.provenance.version
        )
        .unwrap();
        out
    }
}

fn at_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage,
            source: Box::new(other),
        },
    })
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

/// Holds the output directory for one process.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(out: &Path) -> Result<Self> {
        let p = out.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&p) {
            Ok(_) => Ok(DirLock(p)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::invalid(
                "out",
                format!("{} is locked by another run (remove {} if stale)", out.display(), p.display()),
            )),
            Err(e) => Err(Error::io(p, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Runs the full pipeline and writes every artifact under `out`.
///
/// On failure a `FAILED` file holding the error is left next to whatever
/// artifacts were already written.
pub fn run_experiment(config: &ExperimentConfig, out: impl AsRef<Path>) -> Result<RunReport> {
    config.validate()?;
    let out = out.as_ref();
    create_dir(out)?;
    let _lock = DirLock::acquire(out)?;
    let failed = out.join("FAILED");
    match run_inner(config, out) {
        Ok(r) => {
            if failed.exists() {
                fs::remove_file(&failed).map_err(|e| Error::io(&failed, e))?;
            }
            Ok(r)
        }
        Err(e) => {
            let _ = fs::write(&failed, format!("{e}\n"));
            Err(e)
        }
    }
}

struct SystemVectors {
    system: System,
    archive: VectorArchive,
}

fn run_inner(config: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let models = out.join("models");
    let vectors_dir = out.join("vectors");
    let scores_dir = out.join("scores");
    let det_dir = out.join("det");
    for d in [&models, &vectors_dir, &scores_dir, &det_dir] {
        create_dir(d)?;
    }
    write_text(&out.join("config.json"), &config.to_json())?;

    let corpus = at_stage("corpus", load_corpus(config))?;
    let (train_ds, eval_ds) = at_stage("split", {
        split_speakers(&corpus, config.train_fraction, stage_seed(config.seed, "split"))
            .and_then(|(t, e)| select_phrases(config, &t, &e))
    })?;
    log::info!(
        "split: {} train utterances ({} speakers), {} eval utterances ({} speakers)",
        train_ds.len(),
        train_ds.speakers().len(),
        eval_ds.len(),
        eval_ds.speakers().len()
    );
    let trials = at_stage("trials", build_trials(&eval_ds))?;
    at_stage("trials", write_trials(out.join("trials.tsv"), &trials))?;
    let labels = trials.labels();

    let mut systems = Vec::new();
    let mut dnn_training = None;
    for &system in &config.systems {
        let archive = match system {
            System::Dvector => {
                let (params, report) = at_stage("train-dnn", train_dnn(config, &train_ds))?;
                at_stage("train-dnn", save_mlp(models.join("dnn.mlp"), &params))?;
                dnn_training = Some(report);
                at_stage("extract-dvec", extract_all(|ds| extract_dvectors(config, &params, ds), &train_ds, &eval_ds))?
            }
            System::Ivector => {
                let ubm = at_stage("train-ubm", train_ubm_on(config, &train_ds))?;
                at_stage("train-ubm", save_ubm(models.join("ubm.bin"), &ubm))?;
                let t = at_stage("train-tv", train_tv_on(config, &ubm, &train_ds))?;
                at_stage("train-tv", save_tmatrix(models.join("tv.bin"), &t))?;
                at_stage("extract-ivec", extract_all(|ds| extract_ivectors(&ubm, &t, ds), &train_ds, &eval_ds))?
            }
        };
        at_stage(
            "extract",
            archive.save(vectors_dir.join(format!("{}s.txt", system.name()))),
        )?;
        systems.push(SystemVectors { system, archive });
    }

    let mut rows = Vec::new();
    let mut score_sets: Vec<(System, Backend, ScoreSet)> = Vec::new();
    for sv in &systems {
        for &backend in &config.backends {
            let scores = at_stage("score", score_system(config, sv, backend, &train_ds, &trials, &models))?;
            let tag = format!("{}_{}", sv.system.name(), backend.name());
            at_stage("score", write_scores(scores_dir.join(format!("{tag}.tsv")), &scores))?;
            let eer = at_stage("eer", compute_eer(scores.scores(), &labels))?;
            at_stage(
                "eer",
                write_det_csv(det_dir.join(format!("{tag}.csv")), &det_points(scores.scores(), &labels)?),
            )?;
            rows.push(ReportRow {
                system: sv.system,
                backend,
                eer: eer.eer,
                threshold: eer.threshold,
            });
            score_sets.push((sv.system, backend, scores));
        }
    }

    let fusion = if config.fusion && systems.len() == 2 {
        let best = |system: System| {
            rows.iter()
                .filter(|r| r.system == system)
                .min_by(|x, y| x.eer.total_cmp(&y.eer))
                .map(|r| r.backend)
                .expect("every system has rows")
        };
        let a = (System::Dvector, best(System::Dvector));
        let b = (System::Ivector, best(System::Ivector));
        let find = |k: (System, Backend)| &score_sets.iter().find(|s| (s.0, s.1) == k).expect("scored").2;
        let grid = crate::eval::alpha_grid(config.alpha_grid)?;
        let sweep = at_stage("fuse", sweep_fusion(find(a), find(b), &labels, &grid))?;
        at_stage("fuse", write_sweep_csv(out.join("fusion.csv"), &sweep))?;
        let fused = at_stage("fuse", crate::backend::fuse_scores(find(a), find(b), sweep.best_alpha, true))?;
        at_stage("fuse", write_scores(scores_dir.join("fusion.tsv"), &fused))?;
        Some(FusionReport { a, b, sweep })
    } else {
        None
    };

    let report = RunReport {
        rows,
        fusion,
        n_target: trials.count_targets(),
        n_nontarget: trials.count_nontargets(),
        vector_dims: systems
            .iter()
            .map(|s| (s.system, s.archive.dim().unwrap_or(0)))
            .collect(),
        dnn_training,
        provenance: Provenance {
            config_hash: config.hash(),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_owned(),
        },
    };
    write_text(&out.join("report.txt"), &report.to_text())?;
    write_text(&out.join("report.csv"), &report.to_csv())?;
    Ok(report)
}

fn extract_all(
    f: impl Fn(&Dataset) -> Result<VectorArchive>,
    train: &Dataset,
    eval: &Dataset,
) -> Result<VectorArchive> {
    let mut all = f(train)?;
    for (id, v) in f(eval)?.iter() {
        all.insert(id, v.to_vec())?;
    }
    Ok(all)
}

fn score_system(
    config: &ExperimentConfig,
    sv: &SystemVectors,
    backend: Backend,
    train_ds: &Dataset,
    trials: &TrialList,
    models: &Path,
) -> Result<ScoreSet> {
    let name = sv.system.name();
    match backend {
        Backend::Cosine => score_trials(&sv.archive, trials, Scorer::Cosine),
        Backend::Lda => {
            let (vecs, labels) = labelled_vectors(&sv.archive, train_ds)?;
            let dim = effective_lda_dim(config.lda_dim, train_ds.speakers().len(), sv.archive.dim().unwrap_or(1));
            if dim < config.lda_dim {
                log::info!("{name} LDA: output dimension clamped from {} to {dim}", config.lda_dim);
            }
            let lda = train_lda(&vecs, &labels, dim)?;
            save_lda(models.join(format!("{name}_lda.bin")), &lda)?;
            score_trials(&sv.archive, trials, Scorer::LdaCosine(&lda))
        }
        Backend::Plda => {
            let (vecs, labels) = labelled_vectors(&sv.archive, train_ds)?;
            let norm = match sv.system {
                System::Ivector => config.plda_length_norm_ivector,
                System::Dvector => config.plda_length_norm_dvector,
            };
            let fit = train_plda(&vecs, &labels, config.plda_iterations, norm)?;
            save_plda(models.join(format!("{name}_plda.bin")), &fit.model)?;
            score_trials(&sv.archive, trials, Scorer::Plda(&fit.model))
        }
    }
}

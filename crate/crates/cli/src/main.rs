//! `spkver`: command-line driver for the speaker verification toolkit.
//!
//! Exit status is 0 on success, 1 for invalid input or usage, 2 for
//! failures while running (I/O, numerics).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spkver::backend::{
    load_lda, load_plda, read_scores, save_lda, save_plda, train_lda, train_plda, write_scores,
};
use spkver::corpus::{
    build_trials, generate_synthetic_corpus, read_manifest, read_phone_set, read_trials, write_dataset,
    write_trials, Dataset, SyntheticSpec,
};
use spkver::eval::{alpha_grid, compute_eer, det_points, score_trials, sweep_fusion, write_det_csv, write_sweep_csv, Scorer};
use spkver::experiment::{
    effective_lda_dim, extract_dvectors, extract_ivectors, labelled_vectors, run_experiment, select_phrases,
    split_speakers, stage_seed, train_dnn, train_tv_on, train_ubm_on, Arch, Backend, CorpusSource,
    ExperimentConfig, Mode,
};
use spkver::ivector::{load_tmatrix, load_ubm, save_tmatrix, save_ubm};
use spkver::neuralnet::{load_mlp, save_mlp};
use spkver::vectors::VectorArchive;
use spkver::{Error, Result};

#[derive(Parser)]
#[command(name = "spkver", version, about = "Speaker verification with d-vectors and i-vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    SemiTextIndependent,
    TextDependent,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Plain,
    Nldr,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Cosine,
    Lda,
    Plda,
}

/// Experiment settings shared by the pipeline commands. Flags override the
/// JSON config file.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; each stage derives its own seed from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Evaluation phrase for text-dependent mode.
    #[arg(long)]
    phrase: Option<String>,
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    /// Append oracle phone posteriors to the DNN input.
    #[arg(long)]
    pdtr: bool,
    /// Comma-separated subset of cosine,lda,plda.
    #[arg(long, value_delimiter = ',')]
    backends: Option<Vec<String>>,
    #[arg(long)]
    ubm_size: Option<usize>,
    #[arg(long)]
    ivec_dim: Option<usize>,
    /// Number of evenly spaced fusion weights in [0, 1].
    #[arg(long)]
    alpha_grid: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(m) = self.mode {
            c.mode = match m {
                ModeArg::SemiTextIndependent => Mode::SemiTextIndependent,
                ModeArg::TextDependent => Mode::TextDependent,
            };
        }
        if let Some(p) = &self.phrase {
            c.phrase_id = Some(p.clone());
        }
        if let Some(a) = self.arch {
            c.arch = match a {
                ArchArg::Plain => Arch::Plain,
                ArchArg::Nldr => Arch::Nldr,
            };
        }
        if self.pdtr {
            c.pdtr = true;
        }
        if let Some(b) = &self.backends {
            c.backends = b.iter().map(|s| Backend::parse(s.trim())).collect::<Result<_>>()?;
        }
        if let Some(n) = self.ubm_size {
            c.ivector.components = n;
        }
        if let Some(d) = self.ivec_dim {
            c.ivector.dim = d;
        }
        if let Some(n) = self.alpha_grid {
            c.alpha_grid = n;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (features, labels, phones.txt, manifest.tsv).
    GenCorpus {
        /// Synthetic corpus parameters (JSON); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Corpus seed, overriding the one in the `--spec` file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus by speaker into train/ and eval/ datasets.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Cross-evaluate every pair of utterances in a dataset.
    MakeTrials {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the speaker classifier network.
    TrainDnn {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Extract d-vectors for every utterance of the given datasets.
    ExtractDvec {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Train the GMM-UBM on pooled training frames.
    TrainUbm {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Train the total variability matrix.
    TrainTv {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Extract i-vectors for every utterance of the given datasets.
    ExtractIvec {
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        tv: PathBuf,
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an LDA projection on labelled training vectors.
    TrainLda {
        #[arg(long)]
        vectors: PathBuf,
        /// Training dataset providing the speaker labels.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 80)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a two-covariance PLDA model on labelled training vectors.
    TrainPlda {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        /// Scale vectors to unit length before training and scoring.
        #[arg(long)]
        length_norm: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trial list.
    Score {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, value_enum, default_value = "cosine")]
        scorer: ScorerArg,
        /// LDA or PLDA model file for the matching scorer.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Equal error rate of a score file.
    Eer {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Also write DET points as far,frr CSV.
        #[arg(long)]
        det: Option<PathBuf>,
    },
    /// Sweep linear fusion weights between two score files.
    Fuse {
        /// Scores weighted by alpha.
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value_t = 101)]
        alpha_grid: usize,
        /// alpha,eer CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
}

/// Reads a manifest, picking up `phones.txt` from the manifest directory
/// when present.
fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let phones = manifest.parent().map(|d| d.join("phones.txt")).filter(|p| p.exists());
    let phones = phones.map(read_phone_set).transpose()?;
    read_manifest(manifest, phones)
}

fn check_aligned(scores: &spkver::backend::ScoreSet, trials: &spkver::corpus::TrialList) -> Result<()> {
    if scores.matches_trials(trials) {
        Ok(())
    } else {
        Err(Error::Invalid {
            field: "scores".into(),
            reason: "score file does not follow the trial list".into(),
        })
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenCorpus { spec, seed, out } => {
            let mut spec: SyntheticSpec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                    serde_json::from_str(&text).map_err(|e| Error::Invalid {
                        field: "spec".into(),
                        reason: e.to_string(),
                    })?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let ds = generate_synthetic_corpus(&spec)?;
            let manifest = write_dataset(&out, &ds)?;
            println!("{} utterances, {} speakers -> {}", ds.len(), ds.speakers().len(), manifest.display());
        }
        Command::Split { manifest, out, opts } => {
            let c = opts.resolve()?;
            let ds = load_dataset(&manifest)?;
            let (train, eval) = split_speakers(&ds, c.train_fraction, stage_seed(c.seed, "split"))?;
            let (train, eval) = select_phrases(&c, &train, &eval)?;
            write_dataset(out.join("train"), &train)?;
            write_dataset(out.join("eval"), &eval)?;
            println!(
                "train: {} utterances ({} speakers); eval: {} utterances ({} speakers)",
                train.len(),
                train.speakers().len(),
                eval.len(),
                eval.speakers().len()
            );
        }
        Command::MakeTrials { manifest, out } => {
            let trials = build_trials(&load_dataset(&manifest)?)?;
            write_trials(&out, &trials)?;
            println!("{} target, {} nontarget trials", trials.count_targets(), trials.count_nontargets());
        }
        Command::TrainDnn { manifest, out, opts } => {
            let c = opts.resolve()?;
            let (params, report) = train_dnn(&c, &load_dataset(&manifest)?)?;
            save_mlp(&out, &params)?;
            println!("{} epochs, stop: {:?}", report.epochs.len(), report.stop);
        }
        Command::ExtractDvec { model, manifests, out, opts } => {
            let c = opts.resolve()?;
            let params = load_mlp(&model)?;
            let mut all = VectorArchive::new();
            for m in &manifests {
                for (id, v) in extract_dvectors(&c, &params, &load_dataset(m)?)?.iter() {
                    all.insert(id, v.to_vec())?;
                }
            }
            all.save(&out)?;
        }
        Command::TrainUbm { manifest, out, opts } => {
            let c = opts.resolve()?;
            save_ubm(&out, &train_ubm_on(&c, &load_dataset(&manifest)?)?)?;
        }
        Command::TrainTv { manifest, ubm, out, opts } => {
            let c = opts.resolve()?;
            let ubm = load_ubm(&ubm)?;
            save_tmatrix(&out, &train_tv_on(&c, &ubm, &load_dataset(&manifest)?)?)?;
        }
        Command::ExtractIvec { ubm, tv, manifests, out } => {
            let ubm = load_ubm(&ubm)?;
            let t = load_tmatrix(&tv)?;
            let mut all = VectorArchive::new();
            for m in &manifests {
                for (id, v) in extract_ivectors(&ubm, &t, &load_dataset(m)?)?.iter() {
                    all.insert(id, v.to_vec())?;
                }
            }
            all.save(&out)?;
        }
        Command::TrainLda { vectors, manifest, dim, out } => {
            let archive = VectorArchive::load(&vectors)?;
            let ds = load_dataset(&manifest)?;
            let (vecs, labels) = labelled_vectors(&archive, &ds)?;
            let dim = effective_lda_dim(dim, ds.speakers().len(), archive.dim().unwrap_or(1));
            save_lda(&out, &train_lda(&vecs, &labels, dim)?)?;
        }
        Command::TrainPlda { vectors, manifest, iterations, length_norm, out } => {
            let archive = VectorArchive::load(&vectors)?;
            let ds = load_dataset(&manifest)?;
            let (vecs, labels) = labelled_vectors(&archive, &ds)?;
            save_plda(&out, &train_plda(&vecs, &labels, iterations, length_norm)?.model)?;
        }
        Command::Score { vectors, trials, scorer, model, out } => {
            let archive = VectorArchive::load(&vectors)?;
            let trials = read_trials(&trials)?;
            let need_model = || {
                model.clone().ok_or_else(|| Error::Invalid {
                    field: "model".into(),
                    reason: "--model is required for this scorer".into(),
                })
            };
            let scores = match scorer {
                ScorerArg::Cosine => score_trials(&archive, &trials, Scorer::Cosine)?,
                ScorerArg::Lda => {
                    let lda = load_lda(need_model()?)?;
                    score_trials(&archive, &trials, Scorer::LdaCosine(&lda))?
                }
                ScorerArg::Plda => {
                    let plda = load_plda(need_model()?)?;
                    score_trials(&archive, &trials, Scorer::Plda(&plda))?
                }
            };
            write_scores(&out, &scores)?;
        }
        Command::Eer { scores, trials, det } => {
            let s = read_scores(&scores)?;
            let t = read_trials(&trials)?;
            check_aligned(&s, &t)?;
            let labels = t.labels();
            let r = compute_eer(s.scores(), &labels)?;
            if let Some(p) = det {
                write_det_csv(&p, &det_points(s.scores(), &labels)?)?;
            }
            println!("EER {:.4}", r.eer);
            println!("threshold {:.6}", r.threshold);
            println!("trials {} target, {} nontarget", r.n_target, r.n_nontarget);
        }
        Command::Fuse { a, b, trials, alpha_grid: n, out } => {
            let sa = read_scores(&a)?;
            let sb = read_scores(&b)?;
            let t = read_trials(&trials)?;
            check_aligned(&sa, &t)?;
            check_aligned(&sb, &t)?;
            let sweep = sweep_fusion(&sa, &sb, &t.labels(), &alpha_grid(n)?)?;
            write_sweep_csv(&out, &sweep)?;
            println!("best alpha {:.4}", sweep.best_alpha);
            println!("EER {:.4}", sweep.best_eer);
        }
        Command::Run { out, opts } => {
            let c = opts.resolve()?;
            if let CorpusSource::Manifest { path, .. } = &c.corpus {
                if !path.exists() {
                    return Err(Error::Invalid {
                        field: "corpus".into(),
                        reason: format!("manifest {} does not exist", path.display()),
                    });
                }
            }
            let report = run_experiment(&c, &out)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

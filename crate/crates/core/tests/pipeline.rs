use std::fs;
use std::path::Path;

use spkver::corpus::SyntheticSpec;
use spkver::experiment::{run_experiment, Backend, CorpusSource, ExperimentConfig, Mode, System};

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        corpus: CorpusSource::Synthetic(SyntheticSpec::small()),
        backends: vec![Backend::Cosine],
        ..Default::default()
    };
    c.ivector.components = 4;
    c.ivector.dim = 6;
    c.ivector.ubm_iterations = 5;
    c.ivector.tv_iterations = 3;
    c.dnn.window = 5;
    c.dnn.hidden_dims = Some(vec![16, 16]);
    c.dnn.train.max_epochs = 3;
    c.alpha_grid = 11;
    c
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn cosine_only_run_has_one_row_per_system() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_config(), dir.path()).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!((report.rows[0].system, report.rows[0].backend), (System::Dvector, Backend::Cosine));
    assert_eq!((report.rows[1].system, report.rows[1].backend), (System::Ivector, Backend::Cosine));
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("system,backend,eer\n"));
    assert!(dir.path().join("report.txt").exists());
    assert!(dir.path().join("fusion.csv").exists());
    assert!(!dir.path().join("FAILED").exists());
    assert!(!dir.path().join(".lock").exists());
}

#[test]
fn every_backend_pair_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        backends: vec![Backend::Cosine, Backend::Lda, Backend::Plda],
        ..small_config()
    };
    let report = run_experiment(&c, dir.path()).unwrap();
    assert_eq!(report.rows.len(), 6);
    for s in [System::Dvector, System::Ivector] {
        for b in [Backend::Cosine, Backend::Lda, Backend::Plda] {
            let e = report.eer(s, b).unwrap();
            assert!((0.0..=1.0).contains(&e));
        }
    }
    let f = report.fusion.unwrap();
    assert!(f.sweep.best_eer <= f.sweep.eers[0].min(*f.sweep.eers.last().unwrap()));
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        backends: vec![Backend::Cosine, Backend::Plda],
        ..small_config()
    };
    let ra = run_experiment(&c, a.path()).unwrap();
    let rb = run_experiment(&c, b.path()).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn text_dependent_mode_filters_eval_phrase() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        mode: Mode::TextDependent,
        phrase_id: Some("P01".into()),
        systems: vec![System::Ivector],
        ..small_config()
    };
    let report = run_experiment(&c, dir.path()).unwrap();
    // 2 eval speakers x 2 recordings of P01.
    assert_eq!(report.n_target + report.n_nontarget, 6);
    let c = ExperimentConfig {
        phrase_id: Some("P99".into()),
        ..c
    };
    let err = run_experiment(&c, tempfile::tempdir().unwrap().path()).unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn failure_leaves_marker_and_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        corpus: CorpusSource::Manifest {
            path: dir.path().join("missing.tsv"),
            phones: None,
        },
        ..small_config()
    };
    let out = dir.path().join("out");
    let err = run_experiment(&c, &out).unwrap_err();
    assert!(err.to_string().contains("corpus"), "{err}");
    assert!(out.join("FAILED").exists());
    assert!(!out.join(".lock").exists());
}

#[test]
fn locked_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".lock"), "").unwrap();
    assert!(run_experiment(&small_config(), dir.path()).is_err());
}

//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any hard criterion fails.
//!
//! `ACCEPTANCE_ONLY=2,5,11` restricts the run to the listed criteria.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use spkver::backend::train_plda;
use spkver::corpus::{build_trials, SyntheticSpec};
use spkver::eval::compute_eer;
use spkver::experiment::{run_experiment, Arch, Backend, CorpusSource, ExperimentConfig, RunReport, System};
use spkver::ivector::{accumulate_stats, extract_ivector, train_tmatrix, train_ubm, BwStats, GmmUbm, TMatrix};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn pct(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|e| format!("{:.2}", 100.0 * e)).collect();
    format!("[{}]%", parts.join(", "))
}

/// The desk-scale synthetic setup: 100 speakers (80 train, 20 eval), 10
/// phrases read twice each, 20-dim features.
fn desk_config(speaker_sep: f64, phone_sep: f64, seed: u64) -> ExperimentConfig {
    let spec = SyntheticSpec {
        n_speakers: 100,
        utts_per_speaker: 20,
        feature_dim: 20,
        frames_per_phone: 3,
        speaker_separation: speaker_sep,
        phone_separation: phone_sep,
        noise_std: 1.0,
        seed,
        ..SyntheticSpec::default()
    };
    let mut c = ExperimentConfig {
        corpus: CorpusSource::Synthetic(spec),
        seed,
        ..Default::default()
    };
    c.ivector.components = 32;
    c.ivector.dim = 50;
    c.ivector.ubm_iterations = 10;
    c.ivector.tv_iterations = 5;
    c.dnn.window = 9;
    c.dnn.train.max_epochs = 10;
    c.dnn.train.initial_lr = 0.001;
    c
}

fn run(config: &ExperimentConfig) -> Result<RunReport, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_experiment(config, dir.path()).map_err(|e| e.to_string())
}

fn eer_of(r: &RunReport, s: System, b: Backend) -> f64 {
    r.eer(s, b).expect("row present")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let worst = (0..20).map(|seed| common::gradient_check(seed, 1e-5)).fold(0.0, f64::max);
    let t = start.elapsed();
    Outcome::new(
        worst < 1e-4 && t < Duration::from_secs(60),
        format!("max relative error {worst:.2e} over 20 nets in {:.1}s", t.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let mut r = common::rng(2);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let (scores, labels) = common::random_trials(&mut r, 2000, i % 2 == 1);
        let fast = compute_eer(&scores, &labels).unwrap().eer;
        worst = worst.max((fast - common::brute_force_eer(&scores, &labels)).abs());
    }
    let perfect = compute_eer(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap().eer;
    let same = compute_eer(&[0.1, 0.5, 0.9, 0.1, 0.5, 0.9], &[true, true, true, false, false, false])
        .unwrap()
        .eer;
    Outcome::new(
        worst < 1e-9 && perfect == 0.0 && (same - 0.5).abs() < 1e-12,
        format!("max |fast - oracle| {worst:.1e}; perfect {perfect}; identical {same}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let trials = build_trials(&common::tiny_dataset(20, 150)).unwrap();
    let t = start.elapsed();
    let (nt, nn) = (trials.count_targets(), trials.count_nontargets());
    Outcome::new(
        nt == 223_500 && nn == 4_275_000 && t < Duration::from_secs(30),
        format!("{nt} target / {nn} nontarget in {:.2}s", t.as_secs_f64()),
    )
}

fn criterion_4() -> Outcome {
    const SLACK: f64 = 1e-9;
    let mut notes = Vec::new();
    let mut pass = true;

    let mut r = common::rng(4);
    let centres: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| 3.0 * common::normal(&mut r)).collect()).collect();
    let n = 5000;
    let data: Vec<f64> = (0..n)
        .flat_map(|i| centres[i % 10].iter().map(|m| m + common::normal(&mut r)).collect::<Vec<_>>())
        .collect();
    let frames = spkver::corpus::FeatureMatrix::new(n, 5, data).unwrap();
    for c in [1, 8, 64] {
        let fit = train_ubm(&frames, c, 10, 1).unwrap();
        let ok = common::is_monotone(&fit.objective, SLACK);
        pass &= ok;
        notes.push(format!("UBM C={c} {}", if ok { "ok" } else { "decreased" }));
    }

    let ubm = train_ubm(&frames, 8, 5, 2).unwrap().model;
    let stats: Vec<BwStats> = (0..50)
        .map(|u| {
            let rows: Vec<&[f64]> = frames.iter_rows().skip(u * 100).take(100).collect();
            accumulate_stats(&ubm, &spkver::corpus::FeatureMatrix::from_rows(&rows).unwrap()).unwrap()
        })
        .collect();
    let tv = train_tmatrix(&stats, &ubm, 6, 10, 3).unwrap();
    let ok = common::is_monotone(&tv.objective, SLACK);
    pass &= ok;
    notes.push(format!("T-matrix {}", if ok { "ok" } else { "decreased" }));

    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for spk in 0..40 {
        let y: Vec<f64> = (0..6).map(|_| 2.0 * common::normal(&mut r)).collect();
        for _ in 0..(3 + spk % 5) {
            vectors.push(y.iter().map(|v| v + common::normal(&mut r)).collect::<Vec<f64>>());
            labels.push(spk);
        }
    }
    for length_norm in [false, true] {
        let fit = train_plda(&vectors, &labels, 10, length_norm).unwrap();
        let ok = common::is_monotone(&fit.objective, SLACK);
        pass &= ok;
        notes.push(format!("PLDA(ln={length_norm}) {}", if ok { "ok" } else { "decreased" }));
    }
    Outcome::new(pass, notes.join(", "))
}

fn criterion_5() -> Outcome {
    let mut r = common::rng(5);
    let n = 3000;
    let data: Vec<f64> = (0..n * 3).map(|i| 1.0 + (i % 3) as f64 + 0.7 * common::normal(&mut r)).collect();
    let frames = spkver::corpus::FeatureMatrix::new(n, 3, data).unwrap();
    let ubm = train_ubm(&frames, 1, 5, 0).unwrap().model;
    let mut moment_err = 0.0f64;
    for d in 0..3 {
        let col: Vec<f64> = frames.iter_rows().map(|row| row[d]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        moment_err = moment_err.max((ubm.means[(0, d)] - mean).abs());
        moment_err = moment_err.max((ubm.variances[(0, d)] - var).abs());
    }

    // C = F = D = 1, T = 2, sigma^2 = 0.5, N = 3, F~ = 1.5:
    // w = (T F~ / sigma^2) / (1 + N T^2 / sigma^2) = 6 / 25.
    let scalar = GmmUbm::new(
        DVector::from_element(1, 1.0),
        DMatrix::from_element(1, 1, 0.0),
        DMatrix::from_element(1, 1, 0.5),
    )
    .unwrap();
    let t = TMatrix::new(vec![DMatrix::from_element(1, 1, 2.0)]).unwrap();
    let stats = BwStats {
        zero: DVector::from_element(1, 3.0),
        first: DMatrix::from_element(1, 1, 1.5),
    };
    let w = extract_ivector(&scalar, &t, &stats).unwrap().values[0];
    let scalar_err = (w - 0.24).abs();

    let t3 = TMatrix::new(vec![DMatrix::from_fn(3, 4, |i, j| (i + 2 * j) as f64 - 2.5)]).unwrap();
    let zero = extract_ivector(&ubm, &t3, &BwStats::zeros(1, 3)).unwrap().values;
    let zero_ok = zero.iter().all(|&v| v == 0.0);

    Outcome::new(
        moment_err < 1e-9 && scalar_err < 1e-10 && zero_ok,
        format!("C=1 moments err {moment_err:.1e}; scalar i-vector {w} (err {scalar_err:.1e}); zero stats exact: {zero_ok}"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut high = (Vec::new(), Vec::new());
    let mut none = (Vec::new(), Vec::new());
    for seed in 1..=3 {
        for (sep, out) in [(3.0, &mut high), (0.0, &mut none)] {
            let mut c = desk_config(sep, 1.0, seed);
            c.backends = vec![Backend::Cosine];
            c.fusion = false;
            match run(&c) {
                Ok(r) => {
                    out.0.push(eer_of(&r, System::Dvector, Backend::Cosine));
                    out.1.push(eer_of(&r, System::Ivector, Backend::Cosine));
                }
                Err(e) => return Outcome::new(false, format!("seed {seed} sep {sep}: {e}")),
            }
        }
    }
    let t = start.elapsed();
    let (hd, hi) = (median(&high.0), median(&high.1));
    let (nd, ni) = (median(&none.0), median(&none.1));
    let chance = |e: f64| (0.45..=0.55).contains(&e);
    Outcome::new(
        hd < 0.10 && hi < 0.20 && chance(nd) && chance(ni) && t < Duration::from_secs(15 * 60),
        format!(
            "separated: d-vec {} i-vec {}; sep=0: d-vec {} i-vec {}; {:.0}s",
            pct(&high.0),
            pct(&high.1),
            pct(&none.0),
            pct(&none.1),
            t.as_secs_f64()
        ),
    )
}

/// Criteria 7 and 10 share the five runs on the phone-heavy corpus.
fn criteria_7_and_10() -> (Outcome, Outcome) {
    let mut icos = Vec::new();
    let mut iplda = Vec::new();
    let mut dcos = Vec::new();
    let mut dlda = Vec::new();
    let mut bounded = true;
    let mut interior_wins = 0;
    for seed in 1..=5 {
        let r = match run(&desk_config(0.4, 0.4, seed)) {
            Ok(r) => r,
            Err(e) => {
                let msg = format!("seed {seed}: {e}");
                return (Outcome::new(false, msg.clone()), Outcome::new(false, msg));
            }
        };
        icos.push(eer_of(&r, System::Ivector, Backend::Cosine));
        iplda.push(eer_of(&r, System::Ivector, Backend::Plda));
        dcos.push(eer_of(&r, System::Dvector, Backend::Cosine));
        dlda.push(eer_of(&r, System::Dvector, Backend::Lda));
        let sweep = &r.fusion.as_ref().expect("fusion enabled").sweep;
        let n = sweep.eers.len();
        let ends = sweep.eers[0].min(sweep.eers[n - 1]);
        bounded &= n == 101 && sweep.best_eer <= ends;
        let interior = sweep.eers[1..n - 1].iter().copied().fold(f64::INFINITY, f64::min);
        if interior < ends {
            interior_wins += 1;
        }
    }
    let a = median(&iplda) < median(&icos);
    let b = median(&dlda) <= median(&dcos) + 0.005;
    let seven = Outcome::new(
        a && b,
        format!(
            "(a) i-vec PLDA {} vs cosine {}: {}; (b) d-vec LDA {} vs cosine {} (+0.50 allowed): {}",
            pct(&iplda),
            pct(&icos),
            if a { "ok" } else { "violated" },
            pct(&dlda),
            pct(&dcos),
            if b { "ok" } else { "violated" },
        ),
    );
    let ten = Outcome::new(
        bounded && interior_wins >= 3,
        format!("best <= endpoints in every run: {bounded}; interior alpha wins in {interior_wins}/5"),
    );
    (seven, ten)
}

fn criterion_8() -> Outcome {
    let mut blind = Vec::new();
    let mut pdtr = Vec::new();
    for seed in 1..=5 {
        for (with_phones, out) in [(false, &mut blind), (true, &mut pdtr)] {
            let mut c = desk_config(0.4, 0.8, seed);
            c.systems = vec![System::Dvector];
            c.backends = vec![Backend::Cosine];
            c.fusion = false;
            c.pdtr = with_phones;
            match run(&c) {
                Ok(r) => out.push(eer_of(&r, System::Dvector, Backend::Cosine)),
                Err(e) => return Outcome::new(false, format!("seed {seed}: {e}")),
            }
        }
    }
    Outcome::new(
        median(&pdtr) <= median(&blind),
        format!("PDTR {} vs blind {}", pct(&pdtr), pct(&blind)),
    )
}

fn criterion_9() -> Outcome {
    let mut plain = Vec::new();
    let mut nldr = Vec::new();
    let mut dims = Vec::new();
    for seed in 1..=5 {
        for (arch, out) in [(Arch::Plain, &mut plain), (Arch::Nldr, &mut nldr)] {
            let mut c = desk_config(3.0, 1.0, seed);
            c.systems = vec![System::Dvector];
            c.backends = vec![Backend::Cosine];
            c.fusion = false;
            c.arch = arch;
            match run(&c) {
                Ok(r) => {
                    out.push(eer_of(&r, System::Dvector, Backend::Cosine));
                    if arch == Arch::Nldr {
                        dims.extend(r.vector_dims.iter().map(|&(_, d)| d));
                    }
                }
                Err(e) => return Outcome::new(false, format!("seed {seed} {arch:?}: {e}")),
            }
        }
    }
    let dim_ok = !dims.is_empty() && dims.iter().all(|&d| d == 100);
    Outcome::new(
        dim_ok && median(&nldr) <= median(&plain) + 0.01,
        format!("bottleneck {} vs plain {} (+1.00 allowed); dims {dims:?}", pct(&nldr), pct(&plain)),
    )
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

fn criterion_11() -> Outcome {
    let mut c = ExperimentConfig {
        corpus: CorpusSource::Synthetic(SyntheticSpec {
            n_speakers: 10,
            utts_per_speaker: 6,
            ..SyntheticSpec::small()
        }),
        seed: 11,
        ..Default::default()
    };
    c.ivector.components = 4;
    c.ivector.dim = 6;
    c.dnn.window = 5;
    c.dnn.hidden_dims = Some(vec![24, 24]);
    c.dnn.train.max_epochs = 4;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if let Err(e) = run_experiment(&c, a.path()).and_then(|_| run_experiment(&c, b.path())) {
        return Outcome::new(false, e.to_string());
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let files = ta.len();
    let same = ta == tb;
    let models = ta.iter().filter(|(p, _)| p.starts_with("models")).count();
    Outcome::new(
        same && models > 0,
        format!("{files} files ({models} models) byte-identical: {same}"),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));

    let mut results: Vec<(u32, bool, Outcome)> = Vec::new();
    let mut record = |n: u32, soft: bool, o: Outcome| {
        let tag = match (o.pass, soft) {
            (true, _) => "PASS",
            (false, true) => "SOFT-FAIL",
            (false, false) => "FAIL",
        };
        println!("criterion {n:>2}: {tag} {}", o.detail);
        results.push((n, soft, o));
    };

    let mut ten = None;
    for n in 1..=11 {
        if !wanted(n) {
            continue;
        }
        let outcome = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => {
                let (seven, t) = criteria_7_and_10();
                ten = Some(t);
                seven
            }
            8 => criterion_8(),
            9 => criterion_9(),
            10 => ten.take().unwrap_or_else(|| criteria_7_and_10().1),
            _ => criterion_11(),
        };
        record(n, n == 8, outcome);
    }

    let failed: Vec<u32> = results.iter().filter(|(_, soft, o)| !o.pass && !soft).map(|(n, _, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all hard criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

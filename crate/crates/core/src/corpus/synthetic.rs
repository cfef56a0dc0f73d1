//! Gaussian speaker + phone factor corpus generator.
//!
//! Every frame of an utterance is drawn as
//! `speaker_mean * speaker_separation + phone_mean * phone_separation + noise`
//! where the speaker and phone means are standard normal vectors drawn once
//! per corpus and `noise ~ N(0, noise_std^2 I)`. Values are rounded to `f32`
//! precision so a corpus written to UFM1 files reads back bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureMatrix, UtteranceRecord};
use crate::{Error, Result};

/// Phone 0 is silence; it opens and closes every generated phrase.
pub const SILENCE: u32 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    /// Phone-index sequences; utterance `i` of a speaker reads phrase
    /// `i mod phrases.len()`.
    pub phrases: Vec<Vec<u32>>,
    pub n_phones: usize,
    pub frames_per_phone: usize,
    pub feature_dim: usize,
    pub speaker_separation: f64,
    pub phone_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 100 speakers, 10 phrases recorded 15 times each, 40-dim features and
    /// 66 phones plus silence.
    fn default() -> Self {
        SyntheticSpec {
            n_speakers: 100,
            utts_per_speaker: 150,
            phrases: random_phrases(10, 67, 2..=5, 1),
            n_phones: 67,
            frames_per_phone: 3,
            feature_dim: 40,
            speaker_separation: 1.0,
            phone_separation: 1.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// A tiny configuration for unit tests and smoke runs.
    pub fn small() -> Self {
        SyntheticSpec {
            n_speakers: 6,
            utts_per_speaker: 6,
            phrases: random_phrases(3, 9, 1..=2, 1),
            n_phones: 9,
            frames_per_phone: 2,
            feature_dim: 5,
            ..SyntheticSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_speakers", self.n_speakers),
            ("utts_per_speaker", self.utts_per_speaker),
            ("phrases", self.phrases.len()),
            ("n_phones", self.n_phones),
            ("frames_per_phone", self.frames_per_phone),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        for (name, v) in [
            ("speaker_separation", self.speaker_separation),
            ("phone_separation", self.phone_separation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(
                "noise_std",
                format!("must be finite and > 0, got {}", self.noise_std),
            ));
        }
        for (i, p) in self.phrases.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::invalid("phrases", format!("phrase {i} is empty")));
            }
            if let Some(bad) = p.iter().find(|&&ph| ph as usize >= self.n_phones) {
                return Err(Error::invalid(
                    "phrases",
                    format!("phrase {i} uses phone {bad} but n_phones = {}", self.n_phones),
                ));
            }
        }
        Ok(())
    }

    pub fn total_utterances(&self) -> usize {
        self.n_speakers * self.utts_per_speaker
    }
}

/// Random phrases shaped like short Mandarin phrases: silence, then
/// `chars` syllables of two phones (initial + final), then silence.
pub fn random_phrases(
    n_phrases: usize,
    n_phones: usize,
    chars: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_phrases)
        .map(|_| {
            let n = rng.random_range(chars.clone());
            let mut p = vec![SILENCE];
            for _ in 0..2 * n {
                let ph = if n_phones > 1 {
                    rng.random_range(1..n_phones as u32)
                } else {
                    SILENCE
                };
                p.push(ph);
            }
            p.push(SILENCE);
            p
        })
        .collect()
}

/// Names for a synthetic phone set: `sil`, `ph01`, `ph02`, ...
pub fn synthetic_phone_set(n_phones: usize) -> Vec<String> {
    (0..n_phones)
        .map(|i| if i == 0 { "sil".to_owned() } else { format!("ph{i:02}") })
        .collect()
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let dim = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let speaker_means = gaussian_rows(&mut rng, spec.n_speakers, dim);
    let phone_means = gaussian_rows(&mut rng, spec.n_phones, dim);

    let spk_width = digits(spec.n_speakers - 1).max(3);
    let phrase_width = digits(spec.phrases.len()).max(2);
    let reps = spec.utts_per_speaker.div_ceil(spec.phrases.len());
    let rep_width = digits(reps).max(2);

    let mut utterances = Vec::with_capacity(spec.total_utterances());
    for (s, smean) in speaker_means.iter().enumerate() {
        let speaker_id = format!("spk{s:0spk_width$}");
        for i in 0..spec.utts_per_speaker {
            let p = i % spec.phrases.len();
            let rep = i / spec.phrases.len() + 1;
            let phrase_id = format!("P{:0phrase_width$}", p + 1);
            let phones = &spec.phrases[p];
            let frames = phones.len() * spec.frames_per_phone;
            let mut data = Vec::with_capacity(frames * dim);
            let mut labels = Vec::with_capacity(frames);
            for &ph in phones {
                let pmean = &phone_means[ph as usize];
                for _ in 0..spec.frames_per_phone {
                    for d in 0..dim {
                        let noise: f64 = rng.sample(StandardNormal);
                        let v = smean[d] * spec.speaker_separation
                            + pmean[d] * spec.phone_separation
                            + noise * spec.noise_std;
                        data.push(v as f32 as f64);
                    }
                    labels.push(ph);
                }
            }
            utterances.push(UtteranceRecord {
                utterance_id: format!("{speaker_id}_{phrase_id}_r{rep:0rep_width$}"),
                speaker_id: speaker_id.clone(),
                phrase_id,
                features: FeatureMatrix::new(frames, dim, data)?,
                feature_path: None,
                phone_labels: Some(labels),
            });
        }
    }
    Dataset::new(utterances, synthetic_phone_set(spec.n_phones))
}

fn digits(n: usize) -> usize {
    n.to_string().len()
}

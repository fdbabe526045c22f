//! Synthetic labeled corpus with speaker and age nuisance structure.
//!
//! Each senone `k` has a smooth prototype vector `μ_k`. A speaker `s`
//! contributes a per-dimension gain `g_s` and offset `o_s`; an age group `a`
//! stretches the feature axis by a factor that grows with `a`, the way
//! formants move as a vocal tract grows. A frame is
//!
//! ```text
//! x = warp_a(g_s ⊙ μ_k + o_s) + N(0, σ² I)
//! ```
//!
//! and the senone sequence of an utterance follows a first-order Markov
//! chain with self-loop probability 0.7. Speakers are split 794:158:158
//! (by default) into train/dev/test with no overlap, and ids are assigned so
//! that training speakers are `0..n_train`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng;

pub const SELF_LOOP_PROB: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub id: String,
    pub features: Matrix,
    /// One senone index per feature row.
    pub senones: Vec<usize>,
    pub speaker: usize,
    pub age_group: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitProportions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitProportions {
    fn default() -> Self {
        SplitProportions {
            train: 794.0,
            dev: 158.0,
            test: 158.0,
        }
    }
}

impl SplitProportions {
    /// Speaker counts per split: dev and test are rounded, train takes the rest.
    pub fn counts(&self, n_speakers: usize) -> Result<[usize; 3]> {
        for (name, v) in [("split.train", self.train), ("split.dev", self.dev), ("split.test", self.test)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, "proportion must be positive"));
            }
        }
        let total = self.train + self.dev + self.test;
        let n = n_speakers as f64;
        let dev = (n * self.dev / total).round() as usize;
        let test = (n * self.test / total).round() as usize;
        let train = n_speakers.saturating_sub(dev + test);
        for (name, c) in [("split.train", train), ("split.dev", dev), ("split.test", test)] {
            if c == 0 {
                return Err(Error::config(name, format!("no speakers assigned out of {n_speakers}")));
            }
        }
        Ok([train, dev, test])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_speakers: usize,
    pub n_age_groups: usize,
    pub n_senones: usize,
    pub utterances_per_speaker: usize,
    /// Inclusive `[min, max]` frame count.
    pub frames_per_utterance: [usize; 2],
    pub feature_dim: usize,
    pub speaker_scale: f64,
    pub age_scale: f64,
    pub noise_sigma: f64,
    pub split: SplitProportions,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_speakers: 42,
            n_age_groups: 3,
            n_senones: 20,
            utterances_per_speaker: 40,
            frames_per_utterance: [80, 120],
            feature_dim: 40,
            speaker_scale: 1.0,
            age_scale: 1.0,
            noise_sigma: 1.0,
            split: SplitProportions::default(),
            seed: 1234,
        }
    }
}

impl CorpusSpec {
    pub fn split_counts(&self) -> Result<[usize; 3]> {
        self.split.counts(self.n_speakers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_age_groups < 2 {
            return Err(Error::config("n_age_groups", "must be at least 2"));
        }
        if self.n_senones < 2 {
            return Err(Error::config("n_senones", "must be at least 2"));
        }
        if self.feature_dim < 2 {
            return Err(Error::config("feature_dim", "must be at least 2"));
        }
        if self.utterances_per_speaker == 0 {
            return Err(Error::config("utterances_per_speaker", "must be positive"));
        }
        let [lo, hi] = self.frames_per_utterance;
        if lo == 0 || lo > hi {
            return Err(Error::config("frames_per_utterance", "need 0 < min <= max"));
        }
        for (name, v) in [
            ("speaker_scale", self.speaker_scale),
            ("age_scale", self.age_scale),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        let counts = self.split_counts()?;
        for (split, c) in Split::ALL.iter().zip(counts) {
            if c < 2 * self.n_age_groups {
                return Err(Error::config(
                    format!("split.{split}"),
                    format!(
                        "{c} speakers cannot give every one of {} age groups two speakers",
                        self.n_age_groups
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: usize,
    pub split: Split,
    pub age_group: usize,
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
}

/// The ground-truth parameters the corpus is drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    pub prototypes: Vec<Vec<f64>>,
    pub speakers: Vec<SpeakerProfile>,
    /// Per-age linear feature-axis warp, `feature_dim × feature_dim`,
    /// applied as `y = W v`.
    pub warps: Vec<Matrix>,
    pub noise_sigma: f64,
}

fn smooth_normal<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim + 2).map(|_| StandardNormal.sample(rng)).collect();
    // 3-tap average, rescaled back to unit variance
    raw.windows(3).map(|w| (w[0] + w[1] + w[2]) / 3f64.sqrt()).collect()
}

/// Linear-interpolation resampling `y[j] = v(j · (1 + stretch))`, clamped at
/// the top edge.
fn axis_warp(dim: usize, stretch: f64) -> Matrix {
    let mut w = Matrix::zeros(dim, dim);
    let last = (dim - 1) as f64;
    for j in 0..dim {
        let pos = (j as f64 * (1.0 + stretch)).clamp(0.0, last);
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if lo + 1 < dim {
            w.set(j, lo, 1.0 - frac);
            w.set(j, lo + 1, frac);
        } else {
            w.set(j, lo, 1.0);
        }
    }
    w
}

impl GenerativeModel {
    pub fn from_spec(spec: &CorpusSpec) -> Result<Self> {
        spec.validate()?;
        let dim = spec.feature_dim;
        let mut prng = rng::stream(spec.seed, "corpus/prototypes");
        let prototypes = (0..spec.n_senones).map(|_| smooth_normal(&mut prng, dim)).collect();

        let counts = spec.split_counts()?;
        let mut speakers = Vec::with_capacity(spec.n_speakers);
        let mut id = 0;
        for (split, count) in Split::ALL.into_iter().zip(counts) {
            for j in 0..count {
                let mut srng = rng::stream(spec.seed, &format!("corpus/speaker/{id}"));
                let gain = smooth_normal(&mut srng, dim)
                    .into_iter()
                    .map(|z| (spec.speaker_scale * 0.25 * z).exp())
                    .collect();
                let offset = smooth_normal(&mut srng, dim)
                    .into_iter()
                    .map(|z| spec.speaker_scale * 0.5 * z)
                    .collect();
                speakers.push(SpeakerProfile {
                    id,
                    split,
                    age_group: j % spec.n_age_groups,
                    gain,
                    offset,
                });
                id += 1;
            }
        }

        let centre = (spec.n_age_groups - 1) as f64 / 2.0;
        let warps = (0..spec.n_age_groups)
            .map(|a| {
                let stretch = spec.age_scale * (a as f64 - centre) / spec.n_age_groups as f64;
                axis_warp(dim, stretch)
            })
            .collect();
        Ok(GenerativeModel {
            prototypes,
            speakers,
            warps,
            noise_sigma: spec.noise_sigma,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.prototypes[0].len()
    }

    /// Noise-free frame of senone `k` spoken by `speaker`.
    pub fn mean_frame(&self, speaker: usize, k: usize) -> Vec<f64> {
        let sp = &self.speakers[speaker];
        let v: Vec<f64> = self.prototypes[k]
            .iter()
            .zip(&sp.gain)
            .zip(&sp.offset)
            .map(|((m, g), o)| g * m + o)
            .collect();
        let w = &self.warps[sp.age_group];
        (0..v.len())
            .map(|j| w.row(j).iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn senone_chain<R: Rng>(&self, rng: &mut R, frames: usize) -> Vec<usize> {
        let k = self.prototypes.len();
        let mut seq = Vec::with_capacity(frames);
        let mut cur = rng.random_range(0..k);
        for _ in 0..frames {
            seq.push(cur);
            if rng.random::<f64>() >= SELF_LOOP_PROB {
                let jump = rng.random_range(0..k - 1);
                cur = if jump >= cur { jump + 1 } else { jump };
            }
        }
        seq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<LabeledUtterance>,
    pub dev: Vec<LabeledUtterance>,
    pub test: Vec<LabeledUtterance>,
}

impl Corpus {
    pub fn split(&self, which: Split) -> &[LabeledUtterance] {
        match which {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Generates the corpus and returns it with the parameters it was drawn from.
pub fn generate_with_model(spec: &CorpusSpec) -> Result<(Corpus, GenerativeModel)> {
    let model = GenerativeModel::from_spec(spec)?;
    let dim = spec.feature_dim;
    let mut corpus = Corpus {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    let means: Vec<Vec<Vec<f64>>> = (0..model.speakers.len())
        .map(|s| (0..spec.n_senones).map(|k| model.mean_frame(s, k)).collect())
        .collect();
    for sp in &model.speakers {
        let mut urng = rng::stream(spec.seed, &format!("corpus/utterances/{}", sp.id));
        for u in 0..spec.utterances_per_speaker {
            let frames = urng.random_range(spec.frames_per_utterance[0]..=spec.frames_per_utterance[1]);
            let senones = model.senone_chain(&mut urng, frames);
            let mut data = Vec::with_capacity(frames * dim);
            for &k in &senones {
                for &m in &means[sp.id][k] {
                    let z: f64 = StandardNormal.sample(&mut urng);
                    data.push(m + spec.noise_sigma * z);
                }
            }
            let utt = LabeledUtterance {
                id: format!("spk{:04}_utt{:03}", sp.id, u),
                features: Matrix::from_vec(frames, dim, data)?,
                senones,
                speaker: sp.id,
                age_group: sp.age_group,
            };
            match sp.split {
                Split::Train => corpus.train.push(utt),
                Split::Dev => corpus.dev.push(utt),
                Split::Test => corpus.test.push(utt),
            }
        }
    }
    Ok((corpus, model))
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    Ok(generate_with_model(spec)?.0)
}

/// Monte-Carlo estimate of the best achievable per-frame senone accuracy
/// when the generative parameters are known: posterior over senones with the
/// speaker marginalized out, uniform senone prior.
pub fn bayes_oracle_accuracy(model: &GenerativeModel, samples: usize, seed: u64) -> f64 {
    let mut rng = rng::stream(seed, "bayes-oracle");
    let n_spk = model.speakers.len();
    let k = model.prototypes.len();
    let means: Vec<Vec<Vec<f64>>> = (0..n_spk)
        .map(|s| (0..k).map(|c| model.mean_frame(s, c)).collect())
        .collect();
    let var = model.noise_sigma * model.noise_sigma;
    let mut correct = 0usize;
    let mut log_terms = vec![0.0; n_spk];
    for _ in 0..samples {
        let s = rng.random_range(0..n_spk);
        let truth = rng.random_range(0..k);
        let x: Vec<f64> = means[s][truth]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + model.noise_sigma * z
            })
            .collect();
        let mut best = (f64::NEG_INFINITY, 0);
        for c in 0..k {
            let score = if var > 0.0 {
                // log Σ_s exp(−‖x − m_sc‖² / 2σ²)
                for (sp, t) in log_terms.iter_mut().enumerate() {
                    let d2: f64 = x.iter().zip(&means[sp][c]).map(|(a, b)| (a - b).powi(2)).sum();
                    *t = -d2 / (2.0 * var);
                }
                let m = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + log_terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
            } else {
                -(0..n_spk)
                    .map(|sp| x.iter().zip(&means[sp][c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            };
            if score > best.0 {
                best = (score, c);
            }
        }
        if best.1 == truth {
            correct += 1;
        }
    }
    correct as f64 / samples as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: Split,
    pub utterances: usize,
    pub frames: usize,
    pub speakers: Vec<usize>,
    /// Distinct speakers per age group.
    pub speakers_per_age: Vec<usize>,
    /// Frames per age group.
    pub age_histogram: Vec<usize>,
    /// Frames per senone.
    pub senone_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub splits: Vec<SplitStats>,
    pub disjoint_speakers: bool,
}

pub fn split_stats(split: Split, utts: &[LabeledUtterance], n_senones: usize, n_age_groups: usize) -> SplitStats {
    let mut speakers: Vec<usize> = utts.iter().map(|u| u.speaker).collect();
    speakers.sort_unstable();
    speakers.dedup();
    let mut per_age: Vec<Vec<usize>> = vec![Vec::new(); n_age_groups];
    let mut age_histogram = vec![0; n_age_groups];
    let mut senone_histogram = vec![0; n_senones];
    for u in utts {
        if u.age_group < n_age_groups {
            per_age[u.age_group].push(u.speaker);
            age_histogram[u.age_group] += u.senones.len();
        }
        for &s in &u.senones {
            if s < n_senones {
                senone_histogram[s] += 1;
            }
        }
    }
    let speakers_per_age = per_age
        .into_iter()
        .map(|mut v| {
            v.sort_unstable();
            v.dedup();
            v.len()
        })
        .collect();
    SplitStats {
        split,
        utterances: utts.len(),
        frames: utts.iter().map(|u| u.features.rows()).sum(),
        speakers,
        speakers_per_age,
        age_histogram,
        senone_histogram,
    }
}

pub fn corpus_stats(corpus: &Corpus, n_senones: usize, n_age_groups: usize) -> CorpusStats {
    let splits: Vec<SplitStats> = Split::ALL
        .iter()
        .map(|&s| split_stats(s, corpus.split(s), n_senones, n_age_groups))
        .collect();
    let mut all: Vec<usize> = splits.iter().flat_map(|s| s.speakers.iter().copied()).collect();
    let total = all.len();
    all.sort_unstable();
    all.dedup();
    CorpusStats {
        disjoint_speakers: all.len() == total,
        splits,
    }
}

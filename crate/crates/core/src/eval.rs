//! Frame error rate, per-age breakdown, mode comparison, and invariance
//! probes on generator features.
//!
//! Frame error rate stands in for word error rate throughout: there is no
//! lexicon or language model here, so every report is at the frame level.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledUtterance, Split};
use crate::error::{Error, Result};
use crate::layers::{dense_backward_acc, dense_forward, glorot_uniform, relu_backward, relu_forward};
use crate::model::{AmtlModel, Mode};
use crate::numerics::{softmax_xent, Matrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeFer {
    pub age_group: usize,
    pub fer: f64,
    pub frames: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub overall_fer: f64,
    /// Age groups with at least one evaluated frame, ascending.
    pub per_age_fer: Vec<AgeFer>,
    pub n_frames: usize,
    pub n_errors: usize,
}

impl EvalReport {
    /// Builds a report from per-age `(errors, frames)` counts.
    pub fn from_counts(split: Split, counts: &BTreeMap<usize, (usize, usize)>) -> Result<Self> {
        let n_frames: usize = counts.values().map(|c| c.1).sum();
        if n_frames == 0 {
            return Err(Error::Data(format!("no frames to evaluate in {split} split")));
        }
        let n_errors: usize = counts.values().map(|c| c.0).sum();
        let per_age_fer = counts
            .iter()
            .filter(|(_, c)| c.1 > 0)
            .map(|(&age_group, &(errors, frames))| AgeFer {
                age_group,
                fer: errors as f64 / frames as f64,
                frames,
                errors,
            })
            .collect();
        Ok(EvalReport {
            split,
            overall_fer: n_errors as f64 / n_frames as f64,
            per_age_fer,
            n_frames,
            n_errors,
        })
    }
}

/// Counts argmax errors of the senone head against `predictions`.
pub fn fer_from_predictions(split: Split, utts: &[LabeledUtterance], predictions: &[Vec<usize>], truth: &[&[usize]]) -> Result<EvalReport> {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for ((utt, pred), gold) in utts.iter().zip(predictions).zip(truth) {
        if pred.len() != gold.len() {
            return Err(Error::Shape {
                op: "frame predictions",
                left: (pred.len(), 1),
                right: (gold.len(), 1),
            });
        }
        let e = counts.entry(utt.age_group).or_default();
        e.0 += pred.iter().zip(gold.iter()).filter(|(p, g)| p != g).count();
        e.1 += gold.len();
    }
    EvalReport::from_counts(split, &counts)
}

/// Frame error rate of the senone head on `utts`, evaluated on the frames
/// that survive the generator's context trim.
pub fn frame_error_rate(model: &AmtlModel, utts: &[LabeledUtterance], split: Split) -> Result<EvalReport> {
    if utts.is_empty() {
        return Err(Error::Data(format!("{split} split is empty")));
    }
    let n_senones = model.config().n_senones;
    let mut predictions = Vec::with_capacity(utts.len());
    let mut truth = Vec::with_capacity(utts.len());
    for utt in utts {
        if let Some(&bad) = utt.senones.iter().find(|&&s| s >= n_senones) {
            return Err(Error::LabelOutOfRange {
                kind: "senone",
                label: bad,
                classes: n_senones,
                location: format!("utterance `{}`", utt.id),
            });
        }
        predictions.push(model.predict_senones(&utt.features)?);
        truth.push(model.aligned_senones(utt)?);
    }
    fer_from_predictions(split, utts, &predictions, &truth)
}

/// `(base − x) / base`.
pub fn relative_reduction(base: f64, x: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(Error::Data(format!("relative reduction undefined for baseline error {base}")));
    }
    Ok((base - x) / base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: Mode,
    pub dev: EvalReport,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mode: Mode,
    pub dev_fer: f64,
    pub test_fer: f64,
    pub dev_reduction: f64,
    pub test_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_modes(results: &[ModeResult]) -> Result<ModeComparison> {
    if results.len() < 2 {
        return Err(Error::Data("mode comparison needs at least two modes".into()));
    }
    let base = results
        .iter()
        .find(|r| r.mode == Mode::Baseline)
        .ok_or_else(|| Error::Data("mode comparison needs a BASELINE run".into()))?;
    let mut rows = Vec::with_capacity(results.len());
    for mode in Mode::ALL {
        for r in results.iter().filter(|r| r.mode == mode) {
            rows.push(ComparisonRow {
                mode,
                dev_fer: r.dev.overall_fer,
                test_fer: r.test.overall_fer,
                dev_reduction: relative_reduction(base.dev.overall_fer, r.dev.overall_fer)?,
                test_reduction: relative_reduction(base.test.overall_fer, r.test.overall_fer)?,
            });
        }
    }
    Ok(ModeComparison { rows })
}

impl ModeComparison {
    /// Frame error rates in percent per mode and split, with the relative
    /// reduction against BASELINE.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>9} {:>9} {:>9} {:>9}", "mode", "dev FER", "rel", "test FER", "rel");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>8.2}% {:>8.1}% {:>8.2}% {:>8.1}%",
                r.mode.as_str(),
                100.0 * r.dev_fer,
                100.0 * r.dev_reduction,
                100.0 * r.test_fer,
                100.0 * r.test_reduction
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeTarget {
    Speaker,
    Age,
}

impl ProbeTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeTarget::Speaker => "speaker",
            ProbeTarget::Age => "age",
        }
    }

    pub fn label(self, utt: &LabeledUtterance) -> usize {
        match self {
            ProbeTarget::Speaker => utt.speaker,
            ProbeTarget::Age => utt.age_group,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden_width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_frames: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden_width: 64,
            epochs: 20,
            learning_rate: 0.05,
            batch_frames: 64,
            seed: 7,
        }
    }
}

/// Frame-level probe data. Utterances of each class alternate between the
/// fitting and held-out halves in input order, so both halves see every
/// class and no utterance contributes frames to both.
#[derive(Debug, Clone)]
pub struct ProbeDataset {
    pub target: ProbeTarget,
    pub n_classes: usize,
    pub train_x: Matrix,
    pub train_y: Vec<usize>,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
    pub test_utterances: usize,
}

/// Collects probe inputs: the generator's output frames when `generator` is
/// given, the raw input frames otherwise. Labels are remapped to
/// `0..n_classes` in ascending order.
pub fn probe_dataset(generator: Option<&AmtlModel>, utts: &[LabeledUtterance], target: ProbeTarget) -> Result<ProbeDataset> {
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = utts.iter().map(|u| target.label(u)).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    if classes.len() < 2 {
        return Err(Error::Data(format!(
            "{} probe needs at least 2 classes, found {}",
            target.as_str(),
            classes.len()
        )));
    }
    let mut seen = vec![0usize; classes.len()];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let (mut train_y, mut test_y) = (Vec::new(), Vec::new());
    let mut test_utterances = 0;
    for utt in utts {
        let class = classes.binary_search(&target.label(utt)).expect("label collected above");
        let feats = match generator {
            Some(m) => m.generator_features(&utt.features)?,
            None => utt.features.clone(),
        };
        let held_out = seen[class] % 2 == 1;
        seen[class] += 1;
        let (xs, ys) = if held_out {
            test_utterances += 1;
            (&mut test, &mut test_y)
        } else {
            (&mut train, &mut train_y)
        };
        ys.extend(std::iter::repeat_n(class, feats.rows()));
        xs.push(feats);
    }
    let stack = |parts: Vec<Matrix>| -> Result<Matrix> {
        let cols = parts.first().map_or(0, Matrix::cols);
        let rows = parts.iter().map(Matrix::rows).sum();
        Matrix::from_vec(rows, cols, parts.into_iter().flat_map(Matrix::into_data).collect())
    };
    let (train_x, test_x) = (stack(train)?, stack(test)?);
    if train_x.rows() == 0 || test_x.rows() == 0 {
        return Err(Error::Data(format!(
            "{} probe needs at least two utterances of some class",
            target.as_str()
        )));
    }
    Ok(ProbeDataset {
        target,
        n_classes: classes.len(),
        train_x,
        train_y,
        test_x,
        test_y,
        test_utterances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub target: ProbeTarget,
    pub probe_accuracy: f64,
    /// Accuracy of guessing from the held-out label distribution, `Σ p_k²`.
    pub chance_level: f64,
    pub majority_level: f64,
    pub reference_accuracy: Option<f64>,
    /// `None` until a reference accuracy is attached.
    pub invariance_score: Option<f64>,
    pub n_classes: usize,
    pub train_frames: usize,
    pub test_frames: usize,
    pub test_utterances: usize,
}

impl ProbeReport {
    pub fn with_reference(mut self, reference_accuracy: f64) -> Self {
        self.reference_accuracy = Some(reference_accuracy);
        self.invariance_score = Some(invariance_score(self.probe_accuracy, self.chance_level, reference_accuracy));
        self
    }

    /// Binomial standard error of chance accuracy over held-out utterances.
    /// Frames within an utterance share one label, so utterances are the
    /// independent unit.
    pub fn chance_std_error(&self) -> f64 {
        (self.chance_level * (1.0 - self.chance_level) / self.test_utterances.max(1) as f64).sqrt()
    }
}

/// `1 − (accuracy − chance) / (reference − chance)` clamped to `[0, 1]`.
/// A probe that does at least as well as the reference scores 0; when the
/// reference itself is at or below chance there is nothing to remove and the
/// score is 1.
pub fn invariance_score(accuracy: f64, chance: f64, reference: f64) -> f64 {
    if accuracy >= reference {
        return 0.0;
    }
    let margin = reference - chance;
    if margin <= 0.0 {
        return 1.0;
    }
    (1.0 - (accuracy - chance) / margin).clamp(0.0, 1.0)
}

fn standardize(train: &Matrix, test: &Matrix) -> (Matrix, Matrix) {
    let n = train.rows() as f64;
    let cols = train.cols();
    let mut mean = vec![0.0; cols];
    let mut var = vec![0.0; cols];
    for r in 0..train.rows() {
        for (m, v) in mean.iter_mut().zip(train.row(r)) {
            *m += v / n;
        }
    }
    for r in 0..train.rows() {
        for ((s, v), m) in var.iter_mut().zip(train.row(r)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let inv: Vec<f64> = var.iter().map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    let apply = |x: &Matrix| {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((o, m), s) in out.row_mut(r).iter_mut().zip(&mean).zip(&inv) {
                *o = (*o - m) * s;
            }
        }
        out
    };
    (apply(train), apply(test))
}

/// Fits a fresh one-hidden-layer ReLU classifier on the fitting half for a
/// fixed number of epochs and scores it on the held-out half. Inputs are
/// standardized with fitting-half statistics so a generator that merely
/// rescales its output does not look more invariant.
pub fn train_probe(data: &ProbeDataset, cfg: &ProbeConfig) -> Result<ProbeReport> {
    if cfg.hidden_width == 0 || cfg.batch_frames == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::config("probe", "hidden_width, batch_frames and learning_rate must be positive"));
    }
    let (train_x, test_x) = standardize(&data.train_x, &data.test_x);
    let d = train_x.cols();
    let k = data.n_classes;
    let mut init = rng::stream(cfg.seed, &format!("probe/{}/init", data.target.as_str()));
    let mut w1 = glorot_uniform(&mut init, d, cfg.hidden_width);
    let mut b1 = Matrix::zeros(1, cfg.hidden_width);
    let mut w2 = glorot_uniform(&mut init, cfg.hidden_width, k);
    let mut b2 = Matrix::zeros(1, k);

    let mut order: Vec<usize> = (0..train_x.rows()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle = rng::stream(cfg.seed, &format!("probe/{}/epoch{epoch}", data.target.as_str()));
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch_frames) {
            let mut x = Matrix::zeros(chunk.len(), d);
            for (i, &r) in chunk.iter().enumerate() {
                x.row_mut(i).copy_from_slice(train_x.row(r));
            }
            let y: Vec<usize> = chunk.iter().map(|&r| data.train_y[r]).collect();
            let z = dense_forward(&x, &w1, &b1)?;
            let h = relu_forward(&z);
            let logits = dense_forward(&h, &w2, &b2)?;
            let (loss, dlogits) = softmax_xent(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("{} probe loss at epoch {epoch}", data.target.as_str())));
            }
            let (mut dw2, mut db2) = (Matrix::zeros(w2.rows(), w2.cols()), Matrix::zeros(1, k));
            let dh = dense_backward_acc(&h, &w2, &dlogits, &mut dw2, &mut db2, true)?.expect("dx requested");
            let dz = relu_backward(&dh, &z)?;
            let (mut dw1, mut db1) = (Matrix::zeros(w1.rows(), w1.cols()), Matrix::zeros(1, cfg.hidden_width));
            dense_backward_acc(&x, &w1, &dz, &mut dw1, &mut db1, false)?;
            let step = -cfg.learning_rate / chunk.len() as f64;
            w1.add_scaled(&dw1, step)?;
            b1.add_scaled(&db1, step)?;
            w2.add_scaled(&dw2, step)?;
            b2.add_scaled(&db2, step)?;
        }
    }

    let logits = dense_forward(&relu_forward(&dense_forward(&test_x, &w1, &b1)?), &w2, &b2)?;
    let correct = (0..logits.rows()).filter(|&r| logits.argmax_row(r) == data.test_y[r]).count();
    let n = data.test_y.len() as f64;
    let mut hist = vec![0usize; k];
    for &y in &data.test_y {
        hist[y] += 1;
    }
    Ok(ProbeReport {
        target: data.target,
        probe_accuracy: correct as f64 / n,
        chance_level: hist.iter().map(|&c| (c as f64 / n).powi(2)).sum(),
        majority_level: *hist.iter().max().unwrap_or(&0) as f64 / n,
        reference_accuracy: None,
        invariance_score: None,
        n_classes: k,
        train_frames: data.train_y.len(),
        test_frames: data.test_y.len(),
        test_utterances: data.test_utterances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};
    use crate::model::{tests::tiny_config, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn utt(id: &str, senones: Vec<usize>, age: usize, dim: usize) -> LabeledUtterance {
        LabeledUtterance {
            id: id.into(),
            features: Matrix::zeros(senones.len(), dim),
            senones,
            speaker: 0,
            age_group: age,
        }
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let utts = vec![utt("a", vec![0, 1, 2], 0, 1), utt("b", vec![2, 2], 1, 1)];
        let truth: Vec<&[usize]> = utts.iter().map(|u| u.senones.as_slice()).collect();
        let preds: Vec<Vec<usize>> = utts.iter().map(|u| u.senones.clone()).collect();
        let r = fer_from_predictions(Split::Dev, &utts, &preds, &truth).unwrap();
        assert_eq!(r.overall_fer, 0.0);
        assert_eq!(r.n_frames, 5);
    }

    #[test]
    fn permuted_labels_reach_guess_level() {
        let k = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let senones: Vec<usize> = (0..20000).map(|_| rng.random_range(0..k)).collect();
        let utts = vec![utt("u", senones, 0, 1)];
        let preds = vec![utts[0].senones.iter().map(|_| rng.random_range(0..k)).collect::<Vec<_>>()];
        let truth = vec![utts[0].senones.as_slice()];
        let r = fer_from_predictions(Split::Test, &utts, &preds, &truth).unwrap();
        let want = (k - 1) as f64 / k as f64;
        assert!((r.overall_fer - want).abs() < 0.02, "{}", r.overall_fer);
    }

    #[test]
    fn tiny_model_matches_hand_count() {
        let model = AmtlModel::new(tiny_config(Mode::AgeSpk), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let utts: Vec<LabeledUtterance> = (0..10)
            .map(|i| {
                let t = 8 + i % 3;
                LabeledUtterance {
                    id: format!("u{i}"),
                    features: Matrix::from_vec(t, 3, (0..t * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
                    senones: (0..t).map(|_| rng.random_range(0..4)).collect(),
                    speaker: 0,
                    age_group: i % 2,
                }
            })
            .collect();
        let (left, right) = model.context();
        let (mut errors, mut frames) = ([0usize; 2], [0usize; 2]);
        for u in &utts {
            let logits = model.senone_logits(&u.features).unwrap();
            for r in 0..logits.rows() {
                let row = logits.row(r);
                // first maximal index
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                if best != u.senones[left + r] {
                    errors[u.age_group] += 1;
                }
                frames[u.age_group] += 1;
            }
            assert_eq!(logits.rows(), u.senones.len() - left - right);
        }
        let rep = frame_error_rate(&model, &utts, Split::Dev).unwrap();
        assert_eq!(rep.n_errors, errors[0] + errors[1]);
        assert_eq!(rep.n_frames, frames[0] + frames[1]);
        for a in &rep.per_age_fer {
            assert_eq!(a.errors, errors[a.age_group]);
        }
        let weighted: f64 = rep.per_age_fer.iter().map(|a| a.fer * a.frames as f64).sum::<f64>() / rep.n_frames as f64;
        assert!((weighted - rep.overall_fer).abs() < 1e-12);
    }

    #[test]
    fn empty_split_is_an_error() {
        let model = AmtlModel::new(tiny_config(Mode::Baseline), 3).unwrap();
        assert!(frame_error_rate(&model, &[], Split::Dev).is_err());
    }

    fn report(split: Split, fer: f64) -> EvalReport {
        EvalReport {
            split,
            overall_fer: fer,
            per_age_fer: vec![],
            n_frames: 1,
            n_errors: 0,
        }
    }

    fn result(mode: Mode, dev: f64, test: f64) -> ModeResult {
        ModeResult {
            mode,
            dev: report(Split::Dev, dev),
            test: report(Split::Test, test),
        }
    }

    #[test]
    fn relative_reduction_examples() {
        let r = relative_reduction(14.4, 13.26).unwrap();
        assert!((r - 0.079_166_666_666_666_6).abs() < 1e-12);
        assert_eq!(format!("{:.1}", 100.0 * r), "7.9");
        assert_eq!(relative_reduction(0.2, 0.2).unwrap(), 0.0);
        assert!(relative_reduction(0.0, 0.1).is_err());
    }

    #[test]
    fn comparison_table() {
        let c = compare_modes(&[
            result(Mode::AgeSpk, 0.126, 0.14),
            result(Mode::Baseline, 0.144, 0.16),
            result(Mode::Age, 0.1326, 0.1442),
        ])
        .unwrap();
        assert_eq!(c.rows.iter().map(|r| r.mode).collect::<Vec<_>>(), vec![Mode::Baseline, Mode::Age, Mode::AgeSpk]);
        assert_eq!(c.rows[0].dev_reduction, 0.0);
        assert_eq!(c.rows[1].dev_reduction, (0.144 - 0.1326) / 0.144);
        assert_eq!(c.rows[1].test_reduction, (0.16 - 0.1442) / 0.16);
        let table = c.to_table();
        assert!(table.contains("AGE_SPK"), "{table}");
        assert!(compare_modes(&[result(Mode::Age, 0.1, 0.1), result(Mode::Spk, 0.1, 0.1)]).is_err());
        assert!(compare_modes(&[result(Mode::Baseline, 0.1, 0.1)]).is_err());
    }

    #[test]
    fn invariance_score_edges() {
        assert_eq!(invariance_score(0.8, 0.1, 0.8), 0.0);
        assert_eq!(invariance_score(0.1, 0.1, 0.8), 1.0);
        assert!((invariance_score(0.45, 0.1, 0.8) - 0.5).abs() < 1e-12);
        assert_eq!(invariance_score(0.05, 0.1, 0.8), 1.0);
        assert_eq!(invariance_score(0.1, 0.2, 0.15), 1.0);
    }

    fn small_corpus(speaker_scale: f64, age_scale: f64) -> Vec<LabeledUtterance> {
        let spec = CorpusSpec {
            n_speakers: 42,
            utterances_per_speaker: 6,
            frames_per_utterance: [30, 40],
            speaker_scale,
            age_scale,
            ..CorpusSpec::default()
        };
        generate_corpus(&spec).unwrap().train
    }

    fn quick_probe() -> ProbeConfig {
        ProbeConfig {
            epochs: 5,
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn raw_nuisance_free_features_sit_at_chance() {
        let utts = small_corpus(0.0, 0.0);
        for target in [ProbeTarget::Speaker, ProbeTarget::Age] {
            let data = probe_dataset(None, &utts, target).unwrap();
            let rep = train_probe(&data, &quick_probe()).unwrap();
            let bound = rep.chance_level + 3.0 * rep.chance_std_error();
            assert!(rep.probe_accuracy <= bound, "{target:?}: {rep:?}");
        }
    }

    #[test]
    fn raw_features_reveal_speakers_when_present() {
        let utts = small_corpus(1.0, 1.0);
        let data = probe_dataset(None, &utts, ProbeTarget::Speaker).unwrap();
        let rep = train_probe(&data, &quick_probe()).unwrap();
        assert!(rep.probe_accuracy > 5.0 * rep.chance_level, "{rep:?}");
    }

    #[test]
    fn shuffled_labels_do_not_leak() {
        let mut utts = small_corpus(1.0, 1.0);
        let mut labels: Vec<usize> = utts.iter().map(|u| u.speaker).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
        for (u, l) in utts.iter_mut().zip(labels) {
            u.speaker = l;
        }
        let data = probe_dataset(None, &utts, ProbeTarget::Speaker).unwrap();
        let rep = train_probe(&data, &quick_probe()).unwrap();
        assert!(
            (rep.probe_accuracy - rep.chance_level).abs() <= 3.0 * rep.chance_std_error(),
            "{rep:?}"
        );
    }

    #[test]
    fn probe_is_deterministic_and_self_reference_scores_zero() {
        let utts = small_corpus(1.0, 1.0);
        let cfg = ModelConfig {
            n_speakers: 30,
            ..ModelConfig::default()
        };
        let model = AmtlModel::new(cfg, 5).unwrap();
        let data = probe_dataset(Some(&model), &utts, ProbeTarget::Age).unwrap();
        let a = train_probe(&data, &quick_probe()).unwrap();
        let b = train_probe(&data, &quick_probe()).unwrap();
        assert_eq!(a, b);
        let acc = a.probe_accuracy;
        assert_eq!(a.with_reference(acc).invariance_score, Some(0.0));
    }

    #[test]
    fn single_class_rejected() {
        let mut utts = small_corpus(1.0, 1.0);
        utts.iter_mut().for_each(|u| u.age_group = 1);
        assert!(probe_dataset(None, &utts, ProbeTarget::Age).is_err());
    }
}

//! The repeat loop: each repeat trains G+P on the senone loss, then the
//! speaker and age discriminators on frozen G features, then G alone
//! against the frozen heads with reversed discriminator gradients scaled by
//! the ramped α.
//!
//! Parameters are rounded to 32-bit floats at the end of every repeat, which
//! is the precision checkpoints store. A run resumed from a checkpoint
//! therefore continues bit-for-bit where the uninterrupted run would be.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LabeledUtterance, Split};
use crate::error::{Error, Result};
use crate::eval::{frame_error_rate, EvalReport};
use crate::model::{AmtlModel, HeadPhase, HeadUpdate, Losses, Mode, Network};
use crate::numerics::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub n_repeats: usize,
    pub epochs_per_phase: usize,
    pub alpha_max: f64,
    /// Step size at repeat 0; repeat `r` uses `learning_rate / (1 + r / lr_decay_repeats)`.
    pub learning_rate: f64,
    pub lr_decay_repeats: f64,
    /// Utterances per minibatch.
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            n_repeats: 10,
            epochs_per_phase: 2,
            alpha_max: 0.01,
            learning_rate: DEFAULT_LEARNING_RATE,
            lr_decay_repeats: 5.0,
            batch_size: 8,
            seed: 2024,
            mode: Mode::AgeSpk,
        }
    }
}

/// Losses are summed over every frame of a minibatch, so the step size is
/// per frame-gradient and much smaller than a mean-loss learning rate.
pub const DEFAULT_LEARNING_RATE: f64 = 5e-4;

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.n_repeats == 0 {
            return Err(Error::config("n_repeats", "must be at least 1"));
        }
        if self.epochs_per_phase == 0 {
            return Err(Error::config("epochs_per_phase", "must be at least 1"));
        }
        if !(self.alpha_max >= 0.0) || !self.alpha_max.is_finite() {
            return Err(Error::config("alpha_max", "must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be finite and positive"));
        }
        if !(self.lr_decay_repeats > 0.0) {
            return Err(Error::config("lr_decay_repeats", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, r: usize) -> f64 {
        self.learning_rate / (1.0 + r as f64 / self.lr_decay_repeats)
    }

    pub fn alpha_at(&self, r: usize) -> Result<f64> {
        alpha_at(r, self.n_repeats, self.alpha_max)
    }
}

/// `α_r = r / (N − 1) · α_max`, and `α_max` when `N = 1`.
pub fn alpha_at(r: usize, n_repeats: usize, alpha_max: f64) -> Result<f64> {
    if n_repeats == 0 || r >= n_repeats {
        return Err(Error::config("repeat", format!("repeat {r} outside 0..{n_repeats}")));
    }
    if n_repeats == 1 {
        return Ok(alpha_max);
    }
    if r == n_repeats - 1 {
        return Ok(alpha_max);
    }
    Ok(r as f64 / (n_repeats - 1) as f64 * alpha_max)
}

/// Per-frame mean training losses at one point in time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossSnapshot {
    pub senone: f64,
    pub speaker: Option<f64>,
    pub age: Option<f64>,
}

impl LossSnapshot {
    fn from_losses(l: &Losses) -> Self {
        let n = l.frames.max(1) as f64;
        LossSnapshot {
            senone: l.senone / n,
            speaker: l.speaker.map(|v| v / n),
            age: l.age.map(|v| v / n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// 1: G+P on L_P; 2: S and A on frozen G; 3: G against frozen heads.
    pub phase: u8,
    pub start: LossSnapshot,
    pub end: LossSnapshot,
    /// Hex FNV checksums of every network's parameters when the phase ends.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub repeat: usize,
    pub mode: Mode,
    pub alpha_effective: f64,
    pub learning_rate: f64,
    /// Only the phases that ran: BASELINE has phase 1 alone.
    pub phases: Vec<PhaseReport>,
    pub dev: EvalReport,
    pub test: EvalReport,
    /// Lowest dev frame error rate of the run so far.
    pub best_dev: bool,
    /// Kept out of serialized metrics so that reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RepeatReport {
    pub fn phase(&self, p: u8) -> Option<&PhaseReport> {
        self.phases.iter().find(|ph| ph.phase == p)
    }

    /// Training losses with which the repeat finished.
    pub fn final_losses(&self) -> LossSnapshot {
        self.phases.last().map(|p| p.end).unwrap_or_default()
    }
}

fn checksums(model: &AmtlModel) -> BTreeMap<String, String> {
    model
        .networks()
        .map(|(n, ps)| (n.tag().to_string(), format!("{:016x}", ps.checksum())))
        .collect()
}

fn ensure_finite(l: &Losses, at: impl FnOnce() -> String) -> Result<()> {
    let ok = l.senone.is_finite() && l.speaker.is_none_or(f64::is_finite) && l.age.is_none_or(f64::is_finite);
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("training loss {}", at())))
    }
}

/// Rejects data the model cannot train on before any step is taken.
pub fn check_data(model: &AmtlModel, data: &Corpus) -> Result<()> {
    if data.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let dim = model.config().input_dim;
    for split in Split::ALL {
        for utt in data.split(split) {
            if utt.features.cols() != dim {
                return Err(Error::Data(format!(
                    "utterance `{}` has {}-dimensional features, model expects {dim}",
                    utt.id,
                    utt.features.cols()
                )));
            }
            if utt.features.rows() < model.min_frames() {
                return Err(Error::TooShort {
                    required: model.min_frames(),
                    got: utt.features.rows(),
                });
            }
            if !utt.features.is_finite() {
                return Err(Error::NonFinite(format!("features of utterance `{}`", utt.id)));
            }
        }
    }
    for utt in &data.train {
        model.check_labels(utt)?;
    }
    Ok(())
}

/// G features and summed losses on every training utterance.
fn training_pass(model: &AmtlModel, utts: &[LabeledUtterance]) -> Result<(LossSnapshot, Vec<Matrix>)> {
    let mut total = Losses::default();
    let mut feats = Vec::with_capacity(utts.len());
    for utt in utts {
        let h = model.generator_features(&utt.features)?;
        total.add(&model.head_losses(&h, model.aligned_senones(utt)?, utt.speaker, utt.age_group)?);
        feats.push(h);
    }
    ensure_finite(&total, || "on the training set".into())?;
    Ok((LossSnapshot::from_losses(&total), feats))
}

fn cached_losses(model: &AmtlModel, utts: &[LabeledUtterance], feats: &[Matrix]) -> Result<LossSnapshot> {
    let mut total = Losses::default();
    for (utt, h) in utts.iter().zip(feats) {
        total.add(&model.head_losses(h, model.aligned_senones(utt)?, utt.speaker, utt.age_group)?);
    }
    Ok(LossSnapshot::from_losses(&total))
}

fn epoch_order(schedule: &TrainSchedule, n: usize, r: usize, phase: u8, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(schedule.seed, &format!("shuffle/r{r}/p{phase}/e{epoch}")));
    order
}

/// Runs the three phases of repeat `r`.
pub fn run_repeat(model: &mut AmtlModel, data: &Corpus, schedule: &TrainSchedule, r: usize) -> Result<RepeatReport> {
    run_repeat_from(model, data, schedule, r, None)
}

fn run_repeat_from(
    model: &mut AmtlModel,
    data: &Corpus,
    schedule: &TrainSchedule,
    r: usize,
    start: Option<LossSnapshot>,
) -> Result<RepeatReport> {
    schedule.validate()?;
    if schedule.mode != model.mode() {
        return Err(Error::Mode(format!(
            "schedule mode {} does not match model mode {}",
            schedule.mode,
            model.mode()
        )));
    }
    let clock = Instant::now();
    let alpha = schedule.alpha_at(r)?;
    let lr = schedule.learning_rate_at(r);
    let train = &data.train;
    let adversarial = model.mode().is_adversarial();
    let start = match start {
        Some(s) => s,
        None => training_pass(model, train)?.0,
    };
    for net in [Network::Generator, Network::Senone, Network::Speaker, Network::Age] {
        model.set_frozen(net, false);
    }

    // phase 1: G and P on the senone loss
    for epoch in 0..schedule.epochs_per_phase {
        let order = epoch_order(schedule, train.len(), r, 1, epoch);
        for (b, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let batch: Vec<LabeledUtterance> = chunk.iter().map(|&i| train[i].clone()).collect();
            if let HeadUpdate::Applied(l) = model.backward_and_update_heads(&batch, lr, HeadPhase::Senone)? {
                ensure_finite(&l, || format!("at repeat {r} phase 1 epoch {epoch} batch {b}"))?;
            }
        }
    }
    let mut phases = Vec::new();

    if adversarial {
        let (p1_end, feats) = training_pass(model, train)?;
        phases.push(PhaseReport {
            phase: 1,
            start,
            end: p1_end,
            checksums: checksums(model),
        });

        // phase 2: discriminators on frozen, cached G features
        model.set_frozen(Network::Generator, true);
        model.set_frozen(Network::Senone, true);
        for epoch in 0..schedule.epochs_per_phase {
            let order = epoch_order(schedule, train.len(), r, 2, epoch);
            for (b, chunk) in order.chunks(schedule.batch_size).enumerate() {
                let mut total = Losses::default();
                for &i in chunk {
                    let utt = &train[i];
                    total.add(&model.accumulate_discriminator_grads(&feats[i], feats[i].rows(), utt.speaker, utt.age_group)?);
                }
                ensure_finite(&total, || format!("at repeat {r} phase 2 epoch {epoch} batch {b}"))?;
                model.step_discriminators(lr);
            }
        }
        phases.push(PhaseReport {
            phase: 2,
            start: p1_end,
            end: cached_losses(model, train, &feats)?,
            checksums: checksums(model),
        });
        drop(feats);

        // phase 3: G against frozen heads, discriminator gradients reversed
        model.set_frozen(Network::Generator, false);
        for net in [Network::Senone, Network::Speaker, Network::Age] {
            model.set_frozen(net, true);
        }
        for epoch in 0..schedule.epochs_per_phase {
            let order = epoch_order(schedule, train.len(), r, 3, epoch);
            for (b, chunk) in order.chunks(schedule.batch_size).enumerate() {
                let batch: Vec<LabeledUtterance> = chunk.iter().map(|&i| train[i].clone()).collect();
                let l = model.backward_and_update_generator(&batch, lr, alpha, alpha)?;
                ensure_finite(&l, || format!("at repeat {r} phase 3 epoch {epoch} batch {b}"))?;
            }
        }
        for net in [Network::Senone, Network::Speaker, Network::Age] {
            model.set_frozen(net, false);
        }
    }

    // checksums before rounding, which touches every network
    let last_sums = checksums(model);
    model.round_to_f32();
    let (end, _) = training_pass(model, train)?;
    let (phase, start) = if adversarial { (3, phases[1].end) } else { (1, start) };
    phases.push(PhaseReport {
        phase,
        start,
        end,
        checksums: last_sums,
    });

    Ok(RepeatReport {
        repeat: r,
        mode: model.mode(),
        alpha_effective: alpha,
        learning_rate: lr,
        phases,
        dev: frame_error_rate(model, &data.dev, Split::Dev)?,
        test: frame_error_rate(model, &data.test, Split::Test)?,
        best_dev: false,
        wall_time_secs: clock.elapsed().as_secs_f64(),
    })
}

/// Runs all repeats from scratch.
pub fn run_training(model: &mut AmtlModel, data: &Corpus, schedule: &TrainSchedule) -> Result<Vec<RepeatReport>> {
    run_training_from(model, data, schedule, &[], |_, _| Ok(()))
}

/// Runs repeats `prior.len()..N`, where `prior` holds the reports of
/// repeats already completed by the model as given. `on_repeat` sees the
/// model and report after each repeat, which is where checkpoints are
/// written; an error from it stops training.
pub fn run_training_from<F>(
    model: &mut AmtlModel,
    data: &Corpus,
    schedule: &TrainSchedule,
    prior: &[RepeatReport],
    mut on_repeat: F,
) -> Result<Vec<RepeatReport>>
where
    F: FnMut(&AmtlModel, &RepeatReport) -> Result<()>,
{
    schedule.validate()?;
    check_data(model, data)?;
    if prior.len() > schedule.n_repeats {
        return Err(Error::Data(format!(
            "{} repeats already completed, schedule has {}",
            prior.len(),
            schedule.n_repeats
        )));
    }
    let mut best = prior.iter().map(|p| p.dev.overall_fer).fold(f64::INFINITY, f64::min);
    let mut start = prior.last().map(RepeatReport::final_losses);
    let mut reports = Vec::with_capacity(schedule.n_repeats - prior.len());
    for r in prior.len()..schedule.n_repeats {
        let mut report = run_repeat_from(model, data, schedule, r, start)?;
        report.best_dev = report.dev.overall_fer < best;
        if report.best_dev {
            best = report.dev.overall_fer;
        }
        start = Some(report.final_losses());
        on_repeat(model, &report)?;
        reports.push(report);
    }
    Ok(reports)
}

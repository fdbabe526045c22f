//! The four-network adversarial multi-task model.
//!
//! ```text
//!            ┌────────────► P (senones)
//! x ──► G ──►├─► GRL(α_S) ─► S (speakers)
//!            └─► GRL(α_A) ─► A (age groups)
//! ```
//!
//! G is a stack of TDNN layers with ReLU. Each head is one hidden dense layer
//! with ReLU followed by an output layer. Losses are summed softmax
//! cross-entropies over every frame that survives G's context trimming;
//! speaker and age labels are per utterance and broadcast to those frames.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledUtterance;
use crate::error::{Error, Result};
use crate::layers::{
    dense_backward_acc, dense_forward, glorot_uniform, grl_backward, receptive_field, relu_backward,
    relu_forward, tdnn_backward_acc, tdnn_forward, GrlSpec, TdnnSpec,
};
use crate::numerics::{apply_sgd_step, softmax_xent, Matrix, Parameter, ParameterSet};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "BASELINE")]
    Baseline,
    #[serde(rename = "AGE")]
    Age,
    #[serde(rename = "SPK")]
    Spk,
    #[serde(rename = "AGE_SPK")]
    AgeSpk,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Age, Mode::Spk, Mode::AgeSpk];

    pub fn has_speaker_head(self) -> bool {
        matches!(self, Mode::Spk | Mode::AgeSpk)
    }

    pub fn has_age_head(self) -> bool {
        matches!(self, Mode::Age | Mode::AgeSpk)
    }

    pub fn is_adversarial(self) -> bool {
        self != Mode::Baseline
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "BASELINE",
            Mode::Age => "AGE",
            Mode::Spk => "SPK",
            Mode::AgeSpk => "AGE_SPK",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('+', "_").as_str() {
            "BASELINE" => Ok(Mode::Baseline),
            "AGE" => Ok(Mode::Age),
            "SPK" => Ok(Mode::Spk),
            "AGE_SPK" => Ok(Mode::AgeSpk),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// The delay sets of the reference five-layer generator.
pub fn default_tdnn_delays() -> Vec<Vec<i32>> {
    vec![
        vec![-2, -1, 0, 1, 2],
        vec![-1, 2],
        vec![-3, 3],
        vec![-3, 3],
        vec![-7, 2],
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub tdnn_delays: Vec<Vec<i32>>,
    pub input_dim: usize,
    pub g_width: usize,
    pub head_hidden_width: usize,
    pub n_senones: usize,
    pub n_speakers: usize,
    pub n_age_groups: usize,
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tdnn_delays: default_tdnn_delays(),
            input_dim: 40,
            g_width: 64,
            head_hidden_width: 64,
            n_senones: 20,
            n_speakers: 30,
            n_age_groups: 3,
            mode: Mode::AgeSpk,
        }
    }
}

impl ModelConfig {
    /// Full-size topology: 1024-wide layers, 1360 senones, 794 training
    /// speakers, 11 age groups.
    pub fn full_scale(mode: Mode) -> Self {
        ModelConfig {
            g_width: 1024,
            head_hidden_width: 1024,
            n_senones: 1360,
            n_speakers: 794,
            n_age_groups: 11,
            mode,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tdnn_delays.is_empty() {
            return Err(Error::config("tdnn_delays", "need at least one TDNN layer"));
        }
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("g_width", self.g_width),
            ("head_hidden_width", self.head_hidden_width),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        for (name, v) in [
            ("n_senones", self.n_senones),
            ("n_speakers", self.n_speakers),
            ("n_age_groups", self.n_age_groups),
        ] {
            if v < 2 {
                return Err(Error::config(name, "must be at least 2"));
            }
        }
        self.tdnn_specs().map(|_| ())
    }

    pub fn tdnn_specs(&self) -> Result<Vec<TdnnSpec>> {
        let mut in_dim = self.input_dim;
        let mut specs = Vec::with_capacity(self.tdnn_delays.len());
        for delays in &self.tdnn_delays {
            specs.push(TdnnSpec::new(delays.clone(), in_dim, self.g_width)?);
            in_dim = self.g_width;
        }
        Ok(specs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Network {
    Generator,
    Senone,
    Speaker,
    Age,
}

impl Network {
    pub fn tag(self) -> &'static str {
        match self {
            Network::Generator => "g",
            Network::Senone => "p",
            Network::Speaker => "s",
            Network::Age => "a",
        }
    }
}

/// Which heads `backward_and_update_heads` trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadPhase {
    /// P on L_P. G also moves unless frozen.
    Senone,
    /// S on L_S and A on L_A, G frozen.
    Discriminators,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub senone: f64,
    pub speaker: Option<f64>,
    pub age: Option<f64>,
    pub frames: usize,
}

impl Losses {
    pub fn add(&mut self, other: &Losses) {
        self.senone += other.senone;
        self.frames += other.frames;
        if let Some(s) = other.speaker {
            *self.speaker.get_or_insert(0.0) += s;
        }
        if let Some(a) = other.age {
            *self.age.get_or_insert(0.0) += a;
        }
    }
}

/// Outcome of a head update.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadUpdate {
    Applied(Losses),
    /// Nothing to train in this mode.
    Skipped(&'static str),
}

/// Which losses feed a backward pass and where gradients go.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradRequest {
    pub senone: bool,
    pub speaker: bool,
    pub age: bool,
    /// Backpropagate into θ_G.
    pub generator: bool,
    /// Accumulate gradients of the included heads.
    pub heads: bool,
}

/// Activations kept from a generator forward pass.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    output: Matrix,
}

impl GeneratorTrace {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

struct HeadTrace {
    pre_hidden: Matrix,
    hidden: Matrix,
    logits: Matrix,
}

fn head_params(name: &str, rng: &mut impl rand::Rng, in_dim: usize, hidden: usize, out: usize) -> ParameterSet {
    let mut ps = ParameterSet::new();
    let entries = [
        (format!("{name}.hidden.w"), glorot_uniform(rng, in_dim, hidden)),
        (format!("{name}.hidden.b"), Matrix::zeros(1, hidden)),
        (format!("{name}.out.w"), glorot_uniform(rng, hidden, out)),
        (format!("{name}.out.b"), Matrix::zeros(1, out)),
    ];
    for (n, v) in entries {
        ps.push(Parameter::new(n, v)).expect("names are distinct");
    }
    ps
}

fn head_forward(ps: &ParameterSet, h: &Matrix) -> Result<HeadTrace> {
    let pre_hidden = dense_forward(h, &ps.at(0).value, &ps.at(1).value)?;
    let hidden = relu_forward(&pre_hidden);
    let logits = dense_forward(&hidden, &ps.at(2).value, &ps.at(3).value)?;
    Ok(HeadTrace {
        pre_hidden,
        hidden,
        logits,
    })
}

/// Backward through one head. Accumulates into the head's grads when
/// `accumulate` is set; always returns the gradient at the head's input.
fn head_backward(ps: &mut ParameterSet, h: &Matrix, trace: &HeadTrace, dlogits: &Matrix, accumulate: bool) -> Result<Matrix> {
    let dhidden = {
        let (wv, mut gw, mut gb) = take_grads(ps, 2, 3, accumulate);
        let out = dense_backward_acc(&trace.hidden, &wv, dlogits, &mut gw, &mut gb, true)?;
        restore_grads(ps, 2, 3, gw, gb, accumulate);
        out.expect("dx requested")
    };
    let dpre = relu_backward(&dhidden, &trace.pre_hidden)?;
    let (wv, mut gw, mut gb) = take_grads(ps, 0, 1, accumulate);
    let dh = dense_backward_acc(h, &wv, &dpre, &mut gw, &mut gb, true)?;
    restore_grads(ps, 0, 1, gw, gb, accumulate);
    Ok(dh.expect("dx requested"))
}

fn take_grads(ps: &mut ParameterSet, wi: usize, bi: usize, accumulate: bool) -> (Matrix, Matrix, Matrix) {
    let w = ps.at(wi).value.clone();
    let (gw, gb) = if accumulate {
        (
            std::mem::replace(&mut ps.at_mut(wi).grad, Matrix::zeros(0, 0)),
            std::mem::replace(&mut ps.at_mut(bi).grad, Matrix::zeros(0, 0)),
        )
    } else {
        (Matrix::zeros(w.rows(), w.cols()), Matrix::zeros(1, w.cols()))
    };
    (w, gw, gb)
}

fn restore_grads(ps: &mut ParameterSet, wi: usize, bi: usize, gw: Matrix, gb: Matrix, accumulate: bool) {
    if accumulate {
        ps.at_mut(wi).grad = gw;
        ps.at_mut(bi).grad = gb;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmtlModel {
    config: ModelConfig,
    specs: Vec<TdnnSpec>,
    g: ParameterSet,
    p: ParameterSet,
    s: Option<ParameterSet>,
    a: Option<ParameterSet>,
    pub grl_s: GrlSpec,
    pub grl_a: GrlSpec,
}

impl AmtlModel {
    /// Fresh model. Each network draws from its own seeded stream, so θ_G and
    /// θ_P start identical across modes for the same seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = config.tdnn_specs()?;
        let mut g = ParameterSet::new();
        let mut grng = rng::stream(seed, "init/g");
        for (i, spec) in specs.iter().enumerate() {
            let w = glorot_uniform(&mut grng, spec.weight_rows(), spec.out_dim());
            g.push(Parameter::new(format!("g.tdnn{i}.w"), w))?;
            g.push(Parameter::new(format!("g.tdnn{i}.b"), Matrix::zeros(1, spec.out_dim())))?;
        }
        let hw = config.head_hidden_width;
        let p = head_params("p", &mut rng::stream(seed, "init/p"), config.g_width, hw, config.n_senones);
        let s = config
            .mode
            .has_speaker_head()
            .then(|| head_params("s", &mut rng::stream(seed, "init/s"), config.g_width, hw, config.n_speakers));
        let a = config
            .mode
            .has_age_head()
            .then(|| head_params("a", &mut rng::stream(seed, "init/a"), config.g_width, hw, config.n_age_groups));
        Ok(AmtlModel {
            config,
            specs,
            g,
            p,
            s,
            a,
            grl_s: GrlSpec::default(),
            grl_a: GrlSpec::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn tdnn_specs(&self) -> &[TdnnSpec] {
        &self.specs
    }

    /// Total (left, right) frame context of G.
    pub fn context(&self) -> (usize, usize) {
        receptive_field(&self.specs)
    }

    pub fn min_frames(&self) -> usize {
        let (l, r) = self.context();
        l + r + 1
    }

    pub fn network(&self, which: Network) -> Option<&ParameterSet> {
        match which {
            Network::Generator => Some(&self.g),
            Network::Senone => Some(&self.p),
            Network::Speaker => self.s.as_ref(),
            Network::Age => self.a.as_ref(),
        }
    }

    pub fn network_mut(&mut self, which: Network) -> Option<&mut ParameterSet> {
        match which {
            Network::Generator => Some(&mut self.g),
            Network::Senone => Some(&mut self.p),
            Network::Speaker => self.s.as_mut(),
            Network::Age => self.a.as_mut(),
        }
    }

    /// Networks present in this mode, in G, P, S, A order.
    pub fn networks(&self) -> impl Iterator<Item = (Network, &ParameterSet)> {
        [Network::Generator, Network::Senone, Network::Speaker, Network::Age]
            .into_iter()
            .filter_map(move |n| self.network(n).map(|ps| (n, ps)))
    }

    pub fn networks_mut(&mut self) -> Vec<(Network, &mut ParameterSet)> {
        let mut out = vec![(Network::Generator, &mut self.g), (Network::Senone, &mut self.p)];
        if let Some(s) = self.s.as_mut() {
            out.push((Network::Speaker, s));
        }
        if let Some(a) = self.a.as_mut() {
            out.push((Network::Age, a));
        }
        out
    }

    pub fn set_frozen(&mut self, which: Network, frozen: bool) {
        if let Some(ps) = self.network_mut(which) {
            ps.set_frozen(frozen);
        }
    }

    pub fn is_frozen(&self, which: Network) -> bool {
        self.network(which)
            .map_or(true, |ps| ps.iter().all(|p| p.frozen))
    }

    pub fn checksum(&self, which: Network) -> Option<u64> {
        self.network(which).map(ParameterSet::checksum)
    }

    pub fn set_alphas(&mut self, alpha_s: f64, alpha_a: f64) -> Result<()> {
        self.grl_s = GrlSpec::new(alpha_s)?;
        self.grl_a = GrlSpec::new(alpha_a)?;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for (_, ps) in self.networks_mut() {
            ps.zero_grads();
        }
    }

    pub fn round_to_f32(&mut self) {
        for (_, ps) in self.networks_mut() {
            ps.round_to_f32();
        }
    }

    pub fn generator_forward(&self, x: &Matrix) -> Result<GeneratorTrace> {
        if x.cols() != self.config.input_dim {
            return Err(Error::Shape {
                op: "generator_forward",
                left: x.shape(),
                right: (x.rows(), self.config.input_dim),
            });
        }
        if x.rows() < self.min_frames() {
            return Err(Error::TooShort {
                required: self.min_frames(),
                got: x.rows(),
            });
        }
        let mut inputs = Vec::with_capacity(self.specs.len());
        let mut pre = Vec::with_capacity(self.specs.len());
        let mut cur = x.clone();
        for (i, spec) in self.specs.iter().enumerate() {
            let z = tdnn_forward(&cur, spec, &self.g.at(2 * i).value, &self.g.at(2 * i + 1).value)?;
            let next = relu_forward(&z);
            inputs.push(cur);
            pre.push(z);
            cur = next;
        }
        Ok(GeneratorTrace {
            inputs,
            pre,
            output: cur,
        })
    }

    /// G's output features for one utterance.
    pub fn generator_features(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.generator_forward(x)?.output)
    }

    fn generator_backward(&mut self, trace: &GeneratorTrace, dh: &Matrix) -> Result<()> {
        let mut d = dh.clone();
        for i in (0..self.specs.len()).rev() {
            let dz = relu_backward(&d, &trace.pre[i])?;
            let w = self.g.at(2 * i).value.clone();
            let mut gw = std::mem::replace(&mut self.g.at_mut(2 * i).grad, Matrix::zeros(0, 0));
            let mut gb = std::mem::replace(&mut self.g.at_mut(2 * i + 1).grad, Matrix::zeros(0, 0));
            let dx = tdnn_backward_acc(&trace.inputs[i], &self.specs[i], &w, &dz, &mut gw, &mut gb, i > 0);
            self.g.at_mut(2 * i).grad = gw;
            self.g.at_mut(2 * i + 1).grad = gb;
            if let Some(dx) = dx? {
                d = dx;
            }
        }
        Ok(())
    }

    /// Senone labels aligned with G's surviving output frames.
    pub fn aligned_senones<'u>(&self, utt: &'u LabeledUtterance) -> Result<&'u [usize]> {
        let (left, right) = self.context();
        let t = utt.senones.len();
        if t < left + right + 1 {
            return Err(Error::TooShort {
                required: left + right + 1,
                got: t,
            });
        }
        Ok(&utt.senones[left..t - right])
    }

    pub fn check_labels(&self, utt: &LabeledUtterance) -> Result<()> {
        let err = |kind, label, classes| Error::LabelOutOfRange {
            kind,
            label,
            classes,
            location: format!("utterance `{}`", utt.id),
        };
        if utt.senones.len() != utt.features.rows() {
            return Err(Error::Shape {
                op: "labels",
                left: utt.features.shape(),
                right: (utt.senones.len(), 1),
            });
        }
        if let Some(&bad) = utt.senones.iter().find(|&&s| s >= self.config.n_senones) {
            return Err(err("senone", bad, self.config.n_senones));
        }
        if self.s.is_some() && utt.speaker >= self.config.n_speakers {
            return Err(err("speaker", utt.speaker, self.config.n_speakers));
        }
        if self.a.is_some() && utt.age_group >= self.config.n_age_groups {
            return Err(err("age", utt.age_group, self.config.n_age_groups));
        }
        Ok(())
    }

    /// Senone logits on G's surviving frames.
    pub fn senone_logits(&self, x: &Matrix) -> Result<Matrix> {
        let h = self.generator_features(x)?;
        Ok(head_forward(&self.p, &h)?.logits)
    }

    /// Argmax senone per surviving frame.
    pub fn predict_senones(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.senone_logits(x)?;
        Ok((0..logits.rows()).map(|r| logits.argmax_row(r)).collect())
    }

    /// Summed L_P, L_S, L_A over the batch. Heads absent in this mode report
    /// `None`.
    pub fn forward_losses(&self, batch: &[LabeledUtterance]) -> Result<Losses> {
        let mut total = Losses::default();
        for utt in batch {
            self.check_labels(utt)?;
            let h = self.generator_features(&utt.features)?;
            let labels = self.aligned_senones(utt)?;
            total.add(&self.head_losses(&h, labels, utt.speaker, utt.age_group)?);
        }
        Ok(total)
    }

    /// Losses of the heads on precomputed G features.
    pub fn head_losses(&self, h: &Matrix, senones: &[usize], speaker: usize, age: usize) -> Result<Losses> {
        let n = h.rows();
        let senone = softmax_xent(&head_forward(&self.p, h)?.logits, senones)?.0;
        let speaker = match &self.s {
            Some(s) => Some(softmax_xent(&head_forward(s, h)?.logits, &vec![speaker; n])?.0),
            None => None,
        };
        let age = match &self.a {
            Some(a) => Some(softmax_xent(&head_forward(a, h)?.logits, &vec![age; n])?.0),
            None => None,
        };
        Ok(Losses {
            senone,
            speaker,
            age,
            frames: n,
        })
    }

    /// Accumulates gradients for `batch` into the parameter grad slots
    /// without applying them.
    ///
    /// Reversed branches go through GRL backward with the current
    /// `grl_s` / `grl_a`, so the G gradient is
    /// `∂L_P/∂θ_G − α_S ∂L_S/∂θ_G − α_A ∂L_A/∂θ_G` for the included losses.
    pub fn accumulate_grads(&mut self, batch: &[LabeledUtterance], req: GradRequest) -> Result<Losses> {
        let mut total = Losses::default();
        for utt in batch {
            self.check_labels(utt)?;
            let trace = self.generator_forward(&utt.features)?;
            let labels = self.aligned_senones(utt)?.to_vec();
            let (losses, dh) = self.heads_backward(trace.output(), &labels, utt.speaker, utt.age_group, req)?;
            total.add(&losses);
            if req.generator {
                self.generator_backward(&trace, &dh)?;
            }
        }
        Ok(total)
    }

    /// Forward and backward through the heads on G features `h`. Returns the
    /// losses computed and the combined gradient at `h`.
    fn heads_backward(
        &mut self,
        h: &Matrix,
        senones: &[usize],
        speaker: usize,
        age: usize,
        req: GradRequest,
    ) -> Result<(Losses, Matrix)> {
        let n = h.rows();
        let mut losses = Losses {
            frames: n,
            ..Losses::default()
        };
        let mut dh = Matrix::zeros(n, h.cols());
        if req.senone {
            let trace = head_forward(&self.p, h)?;
            let (loss, dlogits) = softmax_xent(&trace.logits, senones)?;
            losses.senone = loss;
            let d = head_backward(&mut self.p, h, &trace, &dlogits, req.heads)?;
            dh.add_scaled(&d, 1.0)?;
        }
        if req.speaker {
            let grl = self.grl_s;
            let s = self
                .s
                .as_mut()
                .ok_or_else(|| Error::Mode("speaker head not present in this mode".into()))?;
            let trace = head_forward(s, h)?;
            let (loss, dlogits) = softmax_xent(&trace.logits, &vec![speaker; n])?;
            losses.speaker = Some(loss);
            let d = head_backward(s, h, &trace, &dlogits, req.heads)?;
            dh.add_scaled(&grl_backward(&d, &grl), 1.0)?;
        }
        if req.age {
            let grl = self.grl_a;
            let a = self
                .a
                .as_mut()
                .ok_or_else(|| Error::Mode("age head not present in this mode".into()))?;
            let trace = head_forward(a, h)?;
            let (loss, dlogits) = softmax_xent(&trace.logits, &vec![age; n])?;
            losses.age = Some(loss);
            let d = head_backward(a, h, &trace, &dlogits, req.heads)?;
            dh.add_scaled(&grl_backward(&d, &grl), 1.0)?;
        }
        Ok((losses, dh))
    }

    /// Trains the heads of `phase` by one SGD step on `batch`.
    ///
    /// `Senone` also steps θ_G unless G is frozen. `Discriminators` requires
    /// G frozen and is a no-op (with notice) in BASELINE mode.
    pub fn backward_and_update_heads(&mut self, batch: &[LabeledUtterance], lr: f64, phase: HeadPhase) -> Result<HeadUpdate> {
        match phase {
            HeadPhase::Senone => {
                let g_trains = !self.is_frozen(Network::Generator);
                let losses = self.accumulate_grads(
                    batch,
                    GradRequest {
                        senone: true,
                        generator: g_trains,
                        heads: true,
                        ..GradRequest::default()
                    },
                )?;
                if g_trains {
                    apply_sgd_step(&mut self.g, lr);
                }
                apply_sgd_step(&mut self.p, lr);
                Ok(HeadUpdate::Applied(losses))
            }
            HeadPhase::Discriminators => {
                if !self.mode().is_adversarial() {
                    return Ok(HeadUpdate::Skipped("BASELINE mode has no speaker or age head"));
                }
                if !self.is_frozen(Network::Generator) {
                    return Err(Error::Mode("discriminator update requires a frozen generator".into()));
                }
                let mut total = Losses::default();
                for utt in batch {
                    self.check_labels(utt)?;
                    let h = self.generator_features(&utt.features)?;
                    let labels = self.aligned_senones(utt)?;
                    total.add(&self.accumulate_discriminator_grads(&h, labels.len(), utt.speaker, utt.age_group)?);
                }
                self.step_discriminators(lr);
                Ok(HeadUpdate::Applied(total))
            }
        }
    }

    /// Accumulates S and A gradients on precomputed G features. Used by the
    /// trainer, which caches G's output while G is frozen.
    pub fn accumulate_discriminator_grads(&mut self, h: &Matrix, frames: usize, speaker: usize, age: usize) -> Result<Losses> {
        if h.rows() != frames {
            return Err(Error::Shape {
                op: "discriminator features",
                left: h.shape(),
                right: (frames, h.cols()),
            });
        }
        let req = GradRequest {
            speaker: self.s.is_some(),
            age: self.a.is_some(),
            heads: true,
            ..GradRequest::default()
        };
        let dummy = vec![0; frames];
        Ok(self.heads_backward(h, &dummy, speaker, age, req)?.0)
    }

    pub fn step_discriminators(&mut self, lr: f64) {
        if let Some(s) = self.s.as_mut() {
            apply_sgd_step(s, lr);
        }
        if let Some(a) = self.a.as_mut() {
            apply_sgd_step(a, lr);
        }
    }

    /// One adversarial SGD step on θ_G:
    /// `θ_G ← θ_G − lr (∂L_P/∂θ_G − α_S ∂L_S/∂θ_G − α_A ∂L_A/∂θ_G)`.
    ///
    /// The reversal is realized by the GRLs; heads are left untouched.
    /// Branches absent in this mode drop out.
    pub fn backward_and_update_generator(&mut self, batch: &[LabeledUtterance], lr: f64, alpha_s: f64, alpha_a: f64) -> Result<Losses> {
        self.set_alphas(alpha_s, alpha_a)?;
        let req = GradRequest {
            senone: true,
            speaker: self.s.is_some(),
            age: self.a.is_some(),
            generator: true,
            heads: false,
        };
        let losses = self.accumulate_grads(batch, req)?;
        apply_sgd_step(&mut self.g, lr);
        Ok(losses)
    }

    /// Number of scalars in each present network.
    pub fn scalar_counts(&self) -> Vec<(Network, usize)> {
        self.networks().map(|(n, ps)| (n, ps.scalar_count())).collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config(mode: Mode) -> ModelConfig {
        ModelConfig {
            tdnn_delays: vec![vec![-1, 0, 1], vec![-2, 1]],
            input_dim: 3,
            g_width: 8,
            head_hidden_width: 6,
            n_senones: 4,
            n_speakers: 3,
            n_age_groups: 2,
            mode,
        }
    }

    fn utterance(rng: &mut ChaCha8Rng, id: &str, frames: usize, cfg: &ModelConfig) -> LabeledUtterance {
        let feats = (0..frames * cfg.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        LabeledUtterance {
            id: id.into(),
            features: Matrix::from_vec(frames, cfg.input_dim, feats).unwrap(),
            senones: (0..frames).map(|_| rng.random_range(0..cfg.n_senones)).collect(),
            speaker: rng.random_range(0..cfg.n_speakers),
            age_group: rng.random_range(0..cfg.n_age_groups),
        }
    }

    fn batch(mode: Mode, seed: u64, n: usize) -> (AmtlModel, Vec<LabeledUtterance>) {
        let cfg = tiny_config(mode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let utts = (0..n).map(|i| utterance(&mut rng, &format!("u{i}"), 12 + i, &cfg)).collect();
        (AmtlModel::new(cfg, seed).unwrap(), utts)
    }

    #[test]
    fn default_config_context() {
        let m = AmtlModel::new(ModelConfig::default(), 0).unwrap();
        assert_eq!(m.context(), (16, 12));
        assert_eq!(m.min_frames(), 29);
    }

    #[test]
    fn full_scale_sizes() {
        let c = ModelConfig::full_scale(Mode::AgeSpk);
        assert_eq!((c.n_senones, c.n_speakers, c.n_age_groups), (1360, 794, 11));
        c.validate().unwrap();
    }

    #[test]
    fn config_rejects_single_class() {
        let mut c = ModelConfig::default();
        c.n_age_groups = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn baseline_has_no_discriminator_losses() {
        let (m, utts) = batch(Mode::Baseline, 1, 2);
        let l = m.forward_losses(&utts).unwrap();
        assert!(l.speaker.is_none() && l.age.is_none());
        assert!(l.senone > 0.0);
    }

    #[test]
    fn untrained_loss_near_uniform() {
        let mut cfg = ModelConfig::default();
        cfg.mode = Mode::Baseline;
        let m = AmtlModel::new(cfg.clone(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let utt = utterance(&mut rng, "x", 60, &cfg);
        let l = m.forward_losses(std::slice::from_ref(&utt)).unwrap();
        let per_frame = l.senone / l.frames as f64;
        let uniform = (cfg.n_senones as f64).ln();
        assert!((per_frame - uniform).abs() < 0.2 * uniform, "{per_frame} vs {uniform}");
    }

    #[test]
    fn out_of_range_label_names_utterance_and_kind() {
        let (m, mut utts) = batch(Mode::AgeSpk, 2, 1);
        utts[0].speaker = 99;
        let msg = m.forward_losses(&utts).unwrap_err().to_string();
        assert!(msg.contains("speaker") && msg.contains("u0"), "{msg}");
        utts[0].speaker = 0;
        utts[0].senones[3] = 4;
        let msg = m.forward_losses(&utts).unwrap_err().to_string();
        assert!(msg.contains("senone") && msg.contains("u0"), "{msg}");
    }

    #[test]
    fn baseline_discriminator_phase_is_a_noop() {
        let (mut m, utts) = batch(Mode::Baseline, 3, 2);
        m.set_frozen(Network::Generator, true);
        let before = m.clone();
        let r = m.backward_and_update_heads(&utts, 0.01, HeadPhase::Discriminators).unwrap();
        assert!(matches!(r, HeadUpdate::Skipped(_)));
        assert_eq!(m, before);
    }

    #[test]
    fn discriminator_phase_keeps_generator_and_lowers_speaker_loss() {
        let (mut m, utts) = batch(Mode::AgeSpk, 4, 3);
        m.set_frozen(Network::Generator, true);
        let g_before = m.checksum(Network::Generator);
        let l0 = m.forward_losses(&utts).unwrap();
        m.backward_and_update_heads(&utts, 1e-3, HeadPhase::Discriminators).unwrap();
        let l1 = m.forward_losses(&utts).unwrap();
        assert_eq!(m.checksum(Network::Generator), g_before);
        assert!(l1.speaker.unwrap() < l0.speaker.unwrap());
        assert!(l1.age.unwrap() < l0.age.unwrap());
    }

    #[test]
    fn discriminator_phase_requires_frozen_generator() {
        let (mut m, utts) = batch(Mode::Spk, 4, 1);
        assert!(m.backward_and_update_heads(&utts, 1e-3, HeadPhase::Discriminators).is_err());
    }

    #[test]
    fn generator_update_leaves_heads_alone() {
        let (mut m, utts) = batch(Mode::AgeSpk, 5, 2);
        let sums: Vec<_> = [Network::Senone, Network::Speaker, Network::Age].iter().map(|&n| m.checksum(n)).collect();
        let g = m.checksum(Network::Generator);
        m.backward_and_update_generator(&utts, 1e-2, 0.3, 0.2).unwrap();
        let after: Vec<_> = [Network::Senone, Network::Speaker, Network::Age].iter().map(|&n| m.checksum(n)).collect();
        assert_eq!(sums, after);
        assert_ne!(m.checksum(Network::Generator), g);
    }

    /// Gradient of one network's parameters for one loss, with no reversal.
    fn plain_grad(m: &AmtlModel, utts: &[LabeledUtterance], req: GradRequest) -> ParameterSet {
        let mut m = m.clone();
        m.set_alphas(0.0, 0.0).unwrap();
        // With α = 0 the reversed branches vanish, so compute reversed terms
        // through α = −1 semantics by hand: backprop the loss as if it were P.
        m.zero_grads();
        m.accumulate_grads(utts, req).unwrap();
        m.network(Network::Generator).unwrap().clone()
    }

    #[test]
    fn explicit_combination_matches_grl_update() {
        let (m, utts) = batch(Mode::AgeSpk, 6, 3);
        let (alpha_s, alpha_a) = (0.7, 0.4);
        // ∂L_P/∂θ_G alone
        let gp = plain_grad(
            &m,
            &utts,
            GradRequest {
                senone: true,
                generator: true,
                ..GradRequest::default()
            },
        );
        // ∂L_S/∂θ_G and ∂L_A/∂θ_G without reversal: GRL with α = 1 gives −∂L/∂θ_G
        let mut ms = m.clone();
        ms.set_alphas(1.0, 1.0).unwrap();
        ms.zero_grads();
        ms.accumulate_grads(&utts, GradRequest { speaker: true, generator: true, ..GradRequest::default() }).unwrap();
        let gs = ms.network(Network::Generator).unwrap().clone();
        let mut ma = m.clone();
        ma.set_alphas(1.0, 1.0).unwrap();
        ma.zero_grads();
        ma.accumulate_grads(&utts, GradRequest { age: true, generator: true, ..GradRequest::default() }).unwrap();
        let ga = ma.network(Network::Generator).unwrap().clone();

        let mut mc = m.clone();
        mc.set_alphas(alpha_s, alpha_a).unwrap();
        mc.zero_grads();
        mc.accumulate_grads(
            &utts,
            GradRequest {
                senone: true,
                speaker: true,
                age: true,
                generator: true,
                heads: false,
            },
        )
        .unwrap();
        let combined = mc.network(Network::Generator).unwrap();
        for (((c, p), s), a) in combined.iter().zip(gp.iter()).zip(gs.iter()).zip(ga.iter()) {
            for i in 0..c.grad.data().len() {
                // gs, ga already carry the minus sign
                let want = p.grad.data()[i] + alpha_s * s.grad.data()[i] + alpha_a * a.grad.data()[i];
                assert!((c.grad.data()[i] - want).abs() < 1e-10);
            }
        }
    }

    fn loss_with(m: &AmtlModel, which: Network, ps: &ParameterSet, utts: &[LabeledUtterance], weights: (f64, f64, f64)) -> Result<f64> {
        let mut m = m.clone();
        *m.network_mut(which).unwrap() = ps.clone();
        let l = m.forward_losses(utts)?;
        Ok(weights.0 * l.senone + weights.1 * l.speaker.unwrap_or(0.0) + weights.2 * l.age.unwrap_or(0.0))
    }

    #[test]
    fn full_model_gradient_check() {
        let (mut m, utts) = batch(Mode::AgeSpk, 7, 2);
        let (alpha_s, alpha_a) = (0.3, 0.6);
        m.set_alphas(alpha_s, alpha_a).unwrap();
        m.zero_grads();
        m.accumulate_grads(
            &utts,
            GradRequest {
                senone: true,
                speaker: true,
                age: true,
                generator: true,
                heads: true,
            },
        )
        .unwrap();
        for which in [Network::Generator, Network::Senone, Network::Speaker, Network::Age] {
            // G sees L_P − α_S L_S − α_A L_A; each head only sees its own loss.
            let weights = match which {
                Network::Generator => (1.0, -alpha_s, -alpha_a),
                _ => (1.0, 1.0, 1.0),
            };
            let mut ps = m.network(which).unwrap().clone();
            let err = finite_diff_check(|p| loss_with(&m, which, p, &utts, weights), &mut ps, 1e-6).unwrap();
            assert!(err < 1e-5, "{which:?}: {err}");
        }
    }
}

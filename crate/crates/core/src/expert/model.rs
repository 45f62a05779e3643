use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{glorot, zero_bias, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::evidential::{EvidentialOutput, NUM_CLASSES};
use crate::simdata::FeatureBag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Softplus evidence parameterizing a Dirichlet.
    Evidential,
    Softmax,
}

/// Which reader's score an expert is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Local,
    Central,
    Adjudicator,
    Final,
}

impl LabelSource {
    pub fn label(self, bag: &FeatureBag) -> Result<usize> {
        let grade = match self {
            LabelSource::Local => Some(bag.labels.local),
            LabelSource::Central => Some(bag.labels.central),
            LabelSource::Adjudicator => bag.labels.adjudicator,
            LabelSource::Final => Some(bag.final_label),
        };
        match grade {
            Some(g) if (g as usize) < NUM_CLASSES => Ok(g as usize),
            Some(g) => Err(Error::Config(format!(
                "bag {}: {self:?} grade {g} out of range",
                bag.bag_id
            ))),
            None => Err(Error::Config(format!(
                "bag {} has no {self:?} score",
                bag.bag_id
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// `wᵀ(tanh(V h) ⊙ sigmoid(U h))`
    Gated,
    /// `wᵀ tanh(V h)`
    Plain,
}

/// Architecture and training identity of one expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertSpec {
    pub name: String,
    pub head: HeadKind,
    pub label_source: LabelSource,
    /// Per-frame encoder width `h`.
    pub hidden: usize,
    /// Attention width `a`.
    pub attention: usize,
    /// Penultimate feature width `d` exposed to the gate.
    pub feature: usize,
    pub dropout: f64,
    #[serde(default = "default_attention_kind")]
    pub attention_kind: AttentionKind,
    pub seed: u64,
}

fn default_attention_kind() -> AttentionKind {
    AttentionKind::Gated
}

impl ExpertSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.attention == 0 || self.feature == 0 {
            return Err(Error::Config(format!("expert {}: widths must be positive", self.name)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "expert {}: dropout {} outside [0, 1)",
                self.name, self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    Eval,
}

/// Class distribution produced by an expert head.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertOutput {
    Evidential(EvidentialOutput),
    Softmax(Vec<f64>),
}

impl ExpertOutput {
    pub fn probs(&self) -> &[f64] {
        match self {
            ExpertOutput::Evidential(e) => &e.probs,
            ExpertOutput::Softmax(p) => p,
        }
    }

    pub fn evidential(&self) -> Option<&EvidentialOutput> {
        match self {
            ExpertOutput::Evidential(e) => Some(e),
            ExpertOutput::Softmax(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertForward {
    pub output: ExpertOutput,
    /// Penultimate activation `g` (length `d`).
    pub features: Vec<f64>,
    /// Attention weight per frame.
    pub attention: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Handles into a recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TapeForward {
    pub logits: Var,
    pub features: Var,
    pub attention: Var,
}

pub(crate) const ENC_W: usize = 0;
pub(crate) const ENC_B: usize = 1;
pub(crate) const ATT_V: usize = 2;
pub(crate) const ATT_W: usize = 3;
pub(crate) const PEN_W: usize = 4;
pub(crate) const PEN_B: usize = 5;
pub(crate) const HEAD_W: usize = 6;
pub(crate) const HEAD_B: usize = 7;
pub(crate) const ATT_U: usize = 8;

/// Attention-MIL classifier over a bag of frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertModel {
    pub spec: ExpertSpec,
    pub input_dim: usize,
    pub params: ParamSet,
}

fn layout(spec: &ExpertSpec, input_dim: usize) -> Vec<(&'static str, Vec<usize>)> {
    let (h, a, d) = (spec.hidden, spec.attention, spec.feature);
    let mut v = vec![
        ("encoder.weight", vec![input_dim, h]),
        ("encoder.bias", vec![1, h]),
        ("attention.v", vec![h, a]),
        ("attention.w", vec![a, 1]),
        ("penultimate.weight", vec![h, d]),
        ("penultimate.bias", vec![1, d]),
        ("head.weight", vec![d, NUM_CLASSES]),
        ("head.bias", vec![1, NUM_CLASSES]),
    ];
    if spec.attention_kind == AttentionKind::Gated {
        v.push(("attention.u", vec![h, a]));
    }
    v
}

impl ExpertModel {
    /// Glorot-initialized weights and zero biases drawn from `spec.seed`.
    pub fn new(spec: ExpertSpec, input_dim: usize) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = ParamSet::new();
        for (name, shape) in layout(&spec, input_dim) {
            let t = if name.ends_with("bias") {
                zero_bias(shape[1])
            } else {
                glorot(shape[0], shape[1], &mut rng)
            };
            params.push(name, t);
        }
        Ok(Self {
            spec,
            input_dim,
            params,
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(spec: ExpertSpec, input_dim: usize, params: ParamSet) -> Result<Self> {
        let template = Self::new(spec, input_dim)?;
        template.params.ensure_same_layout(&params)?;
        Ok(Self { params, ..template })
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature
    }

    /// Records the forward pass given parameter handles laid out like
    /// `self.params`.
    pub fn forward_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        frames: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<TapeForward> {
        let (_, dim) = frames
            .dims2()
            .ok_or_else(|| Error::Shape("frames must be a matrix".into()))?;
        if dim != self.input_dim {
            return Err(Error::Shape(format!(
                "frame dim {dim} but expert expects {}",
                self.input_dim
            )));
        }
        if frames.is_empty() {
            return Err(Error::Shape("bag has no frames".into()));
        }
        let rate = if mode == Mode::Train { self.spec.dropout } else { 0.0 };

        let x = tape.constant(frames.clone());
        let pre = tape.matmul(x, vars[ENC_W])?;
        let pre = tape.add(pre, vars[ENC_B])?;
        let hidden = tape.relu(pre)?;
        let hidden = tape.dropout(hidden, rate, rng)?;

        let gated_u = (self.spec.attention_kind == AttentionKind::Gated).then(|| vars[ATT_U]);
        let (embedding, attention) =
            abmil_on_tape(tape, hidden, vars[ATT_V], gated_u, vars[ATT_W])?;

        let pen = tape.matmul(embedding, vars[PEN_W])?;
        let pen = tape.add(pen, vars[PEN_B])?;
        let features = tape.relu(pen)?;
        let dropped = tape.dropout(features, rate, rng)?;
        let logits = tape.matmul(dropped, vars[HEAD_W])?;
        let logits = tape.add(logits, vars[HEAD_B])?;
        Ok(TapeForward {
            logits,
            features,
            attention,
        })
    }

    /// Forward pass for one bag. `rng` is only drawn from in train mode
    /// with a positive dropout rate.
    pub fn forward_with_rng<R: Rng + ?Sized>(
        &self,
        bag: &FeatureBag,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ExpertForward> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let fwd = self.forward_on_tape(&mut tape, &vars, &bag.frames, mode, rng)?;
        let logits = tape.value(fwd.logits).data().to_vec();
        let output = match self.spec.head {
            HeadKind::Evidential => ExpertOutput::Evidential(EvidentialOutput::from_logits(&logits)?),
            HeadKind::Softmax => {
                let p = tape.softmax(fwd.logits)?;
                ExpertOutput::Softmax(tape.value(p).data().to_vec())
            }
        };
        Ok(ExpertForward {
            output,
            features: tape.value(fwd.features).data().to_vec(),
            attention: tape.value(fwd.attention).data().to_vec(),
            logits,
        })
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn forward(&self, bag: &FeatureBag) -> Result<ExpertForward> {
        self.forward_with_rng(bag, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
    }
}

/// Attention-MIL pooling of an `N×h` hidden matrix: per-frame scores
/// `wᵀ(tanh(V h_j) ⊙ sigmoid(U h_j))` (or `wᵀ tanh(V h_j)` without `U`),
/// softmax-normalized over frames. Returns the `1×h` weighted embedding and
/// the `1×N` weights.
pub fn abmil_on_tape(
    tape: &mut Tape,
    hidden: Var,
    v: Var,
    u: Option<Var>,
    w: Var,
) -> Result<(Var, Var)> {
    let hv = tape.matmul(hidden, v)?;
    let mut gate = tape.tanh(hv)?;
    if let Some(u) = u {
        let hu = tape.matmul(hidden, u)?;
        let s = tape.sigmoid(hu)?;
        gate = tape.mul(gate, s)?;
    }
    let scores = tape.matmul(gate, w)?;
    let scores = tape.transpose(scores)?;
    let weights = tape.softmax(scores)?;
    let embedding = tape.matmul(weights, hidden)?;
    Ok((embedding, weights))
}

/// Attention parameters for [`abmil_pool`].
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub v: Tensor,
    pub u: Option<Tensor>,
    pub w: Tensor,
}

/// Pools `hidden` (`N×h`) into an embedding of length `h`; also returns the
/// `N` attention weights.
pub fn abmil_pool(hidden: &Tensor, params: &AttentionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if hidden.dims2().is_none_or(|(n, _)| n == 0) {
        return Err(Error::Shape("abmil_pool needs at least one frame".into()));
    }
    let mut tape = Tape::new();
    let h = tape.constant(hidden.clone());
    let v = tape.constant(params.v.clone());
    let u = params.u.clone().map(|u| tape.constant(u));
    let w = tape.constant(params.w.clone());
    let (emb, weights) = abmil_on_tape(&mut tape, h, v, u, w)?;
    Ok((tape.value(emb).data().to_vec(), tape.value(weights).data().to_vec()))
}

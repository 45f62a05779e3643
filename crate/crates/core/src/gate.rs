//! Gating network that fuses frozen evidential experts into one class
//! distribution and one scalar uncertainty.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::{glorot, zero_bias, AdamW, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::evidential::{argmax, NUM_CLASSES};
use crate::expert::{epoch_order, ExpertForward, ExpertModel, Mode, TrainConfig, TrainReport};
use crate::simdata::FeatureBag;

/// What the gate sees of one expert on one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertView {
    pub probs: Vec<f64>,
    pub uncertainty: f64,
    pub features: Vec<f64>,
}

impl ExpertView {
    pub fn from_forward(fwd: &ExpertForward) -> Result<Self> {
        let ev = fwd.output.evidential().ok_or_else(|| {
            Error::Config("gate inputs must come from evidential experts".into())
        })?;
        Ok(Self {
            probs: ev.probs.clone(),
            uncertainty: ev.uncertainty,
            features: fwd.features.clone(),
        })
    }
}

/// Eval-mode views of every expert on `bag`.
pub fn expert_views(experts: &[ExpertModel], bag: &FeatureBag) -> Result<Vec<ExpertView>> {
    check_feature_dims(experts)?;
    experts
        .iter()
        .map(|m| ExpertView::from_forward(&m.forward(bag)?))
        .collect()
}

fn check_feature_dims(experts: &[ExpertModel]) -> Result<()> {
    if let Some(first) = experts.first() {
        if let Some(bad) = experts.iter().find(|m| m.feature_dim() != first.feature_dim()) {
            return Err(Error::Config(format!(
                "expert {} has feature dim {}, expected {}",
                bad.spec.name,
                bad.feature_dim(),
                first.feature_dim()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    /// Number of experts `K`.
    pub experts: usize,
    /// Expert feature width `d`.
    pub feature_dim: usize,
    /// Shared representation width `d_s`.
    pub shared_dim: usize,
    /// Hidden width of the probability, uncertainty and epsilon heads.
    pub head_hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl GateSpec {
    pub fn new(experts: usize, feature_dim: usize, seed: u64) -> Self {
        Self {
            experts,
            feature_dim,
            shared_dim: 32,
            head_hidden: 16,
            dropout: 0.25,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experts < 2 {
            return Err(Error::Config("gate needs at least 2 experts".into()));
        }
        if self.feature_dim == 0 || self.shared_dim == 0 || self.head_hidden == 0 {
            return Err(Error::Config("gate widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("gate dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateLossConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for GateLossConfig {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 5.0,
            gamma1: 1.0,
            gamma2: 5.0,
        }
    }
}

impl GateLossConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.beta1, self.beta2, self.gamma1, self.gamma2];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("gate loss weights must be finite and ≥ 0".into()));
        }
        if self.beta1 + self.beta2 == 0.0 || self.gamma1 + self.gamma2 == 0.0 {
            return Err(Error::Config("each gate loss pair needs a positive weight".into()));
        }
        Ok(())
    }
}

/// Fused prediction for one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedOutput {
    pub probs: Vec<f64>,
    pub uncertainty: f64,
    pub w_p: Vec<f64>,
    pub w_u: Vec<f64>,
    pub epsilon: f64,
}

impl FusedOutput {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn confidence(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn correct(&self, label: usize) -> bool {
        self.predicted_class() == label
    }
}

/// Handles into a recorded gate pass.
#[derive(Debug, Clone, Copy)]
pub struct FusedVars {
    pub probs: Var,
    pub uncertainty: Var,
    pub w_p: Var,
    pub w_u: Var,
    pub epsilon: Var,
}

const PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    pub spec: GateSpec,
    pub params: ParamSet,
}

const SHARED: usize = 0;
const PROB: usize = 4;
const UNC: usize = 8;
const EPS: usize = 12;

fn layout(spec: &GateSpec) -> Vec<(String, [usize; 2])> {
    let (d, s, h) = (spec.feature_dim, spec.shared_dim, spec.head_hidden);
    let mut v = vec![
        ("shared.0.weight".to_string(), [d, s]),
        ("shared.0.bias".to_string(), [1, s]),
        ("shared.1.weight".to_string(), [s, s]),
        ("shared.1.bias".to_string(), [1, s]),
    ];
    for head in ["prob", "unc", "eps"] {
        v.push((format!("{head}.0.weight"), [s, h]));
        v.push((format!("{head}.0.bias"), [1, h]));
        v.push((format!("{head}.1.weight"), [h, 1]));
        v.push((format!("{head}.1.bias"), [1, 1]));
    }
    v
}

/// Initial output bias of the probability head, so that every expert
/// starts with `w_p = tanh(1) > 0`.
const PROB_BIAS_INIT: f64 = 1.0;

impl GateModel {
    pub fn new(spec: GateSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = ParamSet::new();
        for (name, [rows, cols]) in layout(&spec) {
            let t = if name == "prob.1.bias" {
                Tensor::filled(&[1, 1], PROB_BIAS_INIT)
            } else if name.ends_with("bias") {
                zero_bias(cols)
            } else {
                glorot(rows, cols, &mut rng)
            };
            params.push(name, t);
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: GateSpec, params: ParamSet) -> Result<Self> {
        let template = Self::new(spec)?;
        template.params.ensure_same_layout(&params)?;
        Ok(Self { params, ..template })
    }

    fn check_views(&self, views: &[ExpertView]) -> Result<()> {
        if views.len() != self.spec.experts {
            return Err(Error::Shape(format!(
                "gate built for {} experts, got {}",
                self.spec.experts,
                views.len()
            )));
        }
        for (k, v) in views.iter().enumerate() {
            if v.features.len() != self.spec.feature_dim {
                return Err(Error::Shape(format!(
                    "expert {k} feature dim {} but gate expects {}",
                    v.features.len(),
                    self.spec.feature_dim
                )));
            }
            if v.probs.len() != NUM_CLASSES {
                return Err(Error::Shape(format!(
                    "expert {k} has {} classes, expected {NUM_CLASSES}",
                    v.probs.len()
                )));
            }
        }
        Ok(())
    }

    /// Records the fused forward pass given handles laid out like
    /// `self.params`.
    pub fn forward_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        views: &[ExpertView],
        mode: Mode,
        rng: &mut R,
    ) -> Result<FusedVars> {
        self.check_views(views)?;
        let k = views.len();
        let rate = if mode == Mode::Train { self.spec.dropout } else { 0.0 };

        let g = tape.constant(Tensor::from_rows(
            &views.iter().map(|v| v.features.clone()).collect::<Vec<_>>(),
        )?);
        let h = tape.matmul(g, vars[SHARED])?;
        let h = tape.add(h, vars[SHARED + 1])?;
        let h = tape.relu(h)?;
        let h = tape.dropout(h, rate, rng)?;
        let h = tape.matmul(h, vars[SHARED + 2])?;
        let h = tape.add(h, vars[SHARED + 3])?;
        let shared = tape.relu(h)?;

        let raw_p = head(tape, shared, &vars[PROB..PROB + 4])?;
        let w_p = tape.tanh(raw_p)?;
        let raw_u = head(tape, shared, &vars[UNC..UNC + 4])?;
        let w_u = tape.sigmoid(raw_u)?;
        let pooled = tape.sum_axis(shared, 0)?;
        let pooled = tape.scale(pooled, 1.0 / k as f64)?;
        let raw_e = head(tape, pooled, &vars[EPS..EPS + 4])?;
        let epsilon = tape.tanh(raw_e)?;

        let p = tape.constant(Tensor::from_rows(
            &views.iter().map(|v| v.probs.clone()).collect::<Vec<_>>(),
        )?);
        let weighted = tape.mul(p, w_p)?;
        let mixed = tape.sum_axis(weighted, 0)?;
        let mixed = tape.scale(mixed, 1.0 / k as f64)?;
        let lift: Vec<f64> = tape
            .value(mixed)
            .data()
            .iter()
            .map(|&x| x.max(PROB_FLOOR) - x)
            .collect();
        let lift = tape.constant(Tensor::row(lift)?);
        let floored = tape.add(mixed, lift)?;
        let total = tape.sum(floored)?;
        let probs = tape.div(floored, total)?;

        let u = tape.constant(Tensor::matrix(
            k,
            1,
            views.iter().map(|v| v.uncertainty).collect(),
        )?);
        // Σ σ(r)u / Σ σ(r) as softmax(log σ(r))·u, finite even when every σ(r) underflows.
        let neg = tape.scale(raw_u, -1.0)?;
        let log_w = tape.softplus(neg)?;
        let log_w = tape.scale(log_w, -1.0)?;
        let log_w = tape.transpose(log_w)?;
        let norm_w = tape.softmax(log_w)?;
        let mean_u = tape.matmul(norm_w, u)?;
        let raw = tape.add(mean_u, epsilon)?;
        let uncertainty = tape.clamp(raw, 0.0, 1.0)?;

        Ok(FusedVars {
            probs,
            uncertainty,
            w_p,
            w_u,
            epsilon,
        })
    }

    /// Deterministic fused output with dropout off.
    pub fn forward(&self, views: &[ExpertView]) -> Result<FusedOutput> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = self.forward_on_tape(&mut tape, &vars, views, Mode::Eval, &mut rng)?;
        Ok(read_fused(&tape, &f))
    }
}

fn head(tape: &mut Tape, x: Var, vars: &[Var]) -> Result<Var> {
    let h = tape.matmul(x, vars[0])?;
    let h = tape.add(h, vars[1])?;
    let h = tape.relu(h)?;
    let out = tape.matmul(h, vars[2])?;
    tape.add(out, vars[3])
}

fn read_fused(tape: &Tape, f: &FusedVars) -> FusedOutput {
    FusedOutput {
        probs: tape.value(f.probs).data().to_vec(),
        uncertainty: tape.scalar_value(f.uncertainty),
        w_p: tape.value(f.w_p).data().to_vec(),
        w_u: tape.value(f.w_u).data().to_vec(),
        epsilon: tape.scalar_value(f.epsilon),
    }
}

/// Eval-mode gate output for one bag.
pub fn gate_forward(gate: &GateModel, views: &[ExpertView]) -> Result<FusedOutput> {
    gate.forward(views)
}

/// Unweighted mean of expert probabilities and uncertainties. Each sum is
/// taken over sorted terms so the result does not depend on expert order.
pub fn naive_fuse(views: &[ExpertView]) -> Result<FusedOutput> {
    if views.len() < 2 {
        return Err(Error::Shape(format!("naive fusion needs ≥ 2 experts, got {}", views.len())));
    }
    let c = views[0].probs.len();
    if views.iter().any(|v| v.probs.len() != c) {
        return Err(Error::Shape("experts disagree on class count".into()));
    }
    let k = views.len() as f64;
    let sorted_mean = |mut xs: Vec<f64>| {
        xs.sort_by(f64::total_cmp);
        xs.iter().sum::<f64>() / k
    };
    let probs = (0..c)
        .map(|j| sorted_mean(views.iter().map(|v| v.probs[j]).collect()))
        .collect();
    let uncertainty = sorted_mean(views.iter().map(|v| v.uncertainty).collect());
    Ok(FusedOutput {
        probs,
        uncertainty,
        w_p: vec![1.0; views.len()],
        w_u: vec![1.0; views.len()],
        epsilon: 0.0,
    })
}

/// Per-sample composite loss with the correctness indicator `correct`
/// supplied from outside so that it carries no gradient.
pub fn gate_loss_on_tape(
    tape: &mut Tape,
    fused: &FusedVars,
    label: usize,
    correct: bool,
    cfg: &GateLossConfig,
) -> Result<Var> {
    let c = tape.value(fused.probs).len();
    if label >= c {
        return Err(Error::Shape(format!("label {label} out of range for {c} classes")));
    }
    let mut onehot = vec![0.0; c];
    onehot[label] = 1.0;
    let y = tape.constant(Tensor::row(onehot)?);
    let picked = tape.mul(y, fused.probs)?;
    let py = tape.sum(picked)?;
    let log_py = tape.ln(py)?;
    let cls = tape.scale(log_py, -1.0)?;

    let (unc, eps) = if correct {
        let unc = tape.scale(fused.uncertainty, cfg.beta1)?;
        let pos = tape.relu(fused.epsilon)?;
        (unc, tape.scale(pos, cfg.gamma1)?)
    } else {
        let unc = tape.affine(fused.uncertainty, -cfg.beta2, cfg.beta2)?;
        let flipped = tape.scale(fused.epsilon, -1.0)?;
        let neg = tape.relu(flipped)?;
        (unc, tape.scale(neg, cfg.gamma2)?)
    };
    let reg = tape.add(unc, eps)?;
    let reg = tape.sum(reg)?;
    tape.add(cls, reg)
}

/// Batch-mean composite loss on already computed fused outputs.
pub fn gate_loss(batch: &[(FusedOutput, usize)], cfg: &GateLossConfig) -> Result<f64> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty gate batch".into()));
    }
    let mut total = 0.0;
    for (f, y) in batch {
        if *y >= f.probs.len() {
            return Err(Error::Shape(format!("label {y} out of range")));
        }
        let c = f.correct(*y);
        let mut l = -f.probs[*y].ln();
        if c {
            l += cfg.beta1 * f.uncertainty + cfg.gamma1 * f.epsilon.max(0.0);
        } else {
            l += cfg.beta2 * (1.0 - f.uncertainty) + cfg.gamma2 * (-f.epsilon).max(0.0);
        }
        total += l;
    }
    Ok(total / batch.len() as f64)
}

/// Precomputed expert views and the trial label for one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSample {
    pub views: Vec<ExpertView>,
    pub label: usize,
}

/// Expert views for every bag, labelled with the final trial score.
pub fn gate_samples(experts: &[ExpertModel], data: &[FeatureBag]) -> Result<Vec<GateSample>> {
    check_feature_dims(experts)?;
    data.par_iter()
        .map(|bag| {
            Ok(GateSample {
                views: expert_views(experts, bag)?,
                label: bag.final_label as usize,
            })
        })
        .collect()
}

fn sample_rng(seed: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6A7E_5EED_0F0F_1234);
    rng.set_stream(counter);
    rng
}

fn sample_gradient(
    gate: &GateModel,
    sample: &GateSample,
    cfg: &GateLossConfig,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = gate.params.record(&mut tape);
    let fused = gate.forward_on_tape(&mut tape, &vars, &sample.views, Mode::Train, rng)?;
    let correct = argmax(tape.value(fused.probs).data()) == sample.label;
    let loss = gate_loss_on_tape(&mut tape, &fused, sample.label, correct, cfg)?;
    let value = tape.scalar_value(loss);
    let scaled = tape.scale(loss, scale)?;
    let mut grads = tape.backward(scaled)?;
    let g = vars
        .iter()
        .map(|&v| grads.take(v).expect("parameter gradient"))
        .collect();
    Ok((value, g))
}

/// Trains the gate on precomputed expert views.
pub fn train_gate_on_samples(
    gate: &mut GateModel,
    samples: &[GateSample],
    cfg: &TrainConfig,
    loss: &GateLossConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    loss.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("no gate training samples".into()));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    if let Some(bad) = labels.iter().find(|&&y| y >= NUM_CLASSES) {
        return Err(Error::Config(format!("label {bad} out of range")));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(gate.spec.seed.wrapping_add(0x5EED));
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut report = TrainReport::default();
    let mut counter = 0u64;
    for _ in 0..cfg.epochs {
        let order = epoch_order(&labels, cfg.weighted_sampling, &mut order_rng)?;
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let base = counter;
            counter += batch.len() as u64;
            let frozen = &*gate;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut rng = sample_rng(frozen.spec.seed, base + j as u64);
                    sample_gradient(frozen, &samples[i], loss, scale, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut total: Vec<Tensor> = gate
                .params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for (value, grads) in results {
                epoch_loss += value;
                for (acc, g) in total.iter_mut().zip(&grads) {
                    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
            }
            opt.step(gate.params.tensors_mut(), &total)?;
        }
        report.epoch_losses.push(epoch_loss / order.len() as f64);
    }
    Ok(report)
}

/// Trains the gate on the final trial labels of `data` with `experts` held
/// fixed. Fails if any expert's parameters change.
pub fn train_gate(
    gate: &mut GateModel,
    experts: &[ExpertModel],
    data: &[FeatureBag],
    cfg: &TrainConfig,
    loss: &GateLossConfig,
) -> Result<TrainReport> {
    if experts.len() != gate.spec.experts {
        return Err(Error::Shape(format!(
            "gate built for {} experts, got {}",
            gate.spec.experts,
            experts.len()
        )));
    }
    let before: Vec<String> = experts.iter().map(|m| m.params.fingerprint()).collect();
    let samples = gate_samples(experts, data)?;
    let report = train_gate_on_samples(gate, &samples, cfg, loss)?;
    let after: Vec<String> = experts.iter().map(|m| m.params.fingerprint()).collect();
    if before != after {
        return Err(Error::State("expert parameters changed during gate training".into()));
    }
    Ok(report)
}

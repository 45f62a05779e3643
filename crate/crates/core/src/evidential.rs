//! Dirichlet evidence: per-sample evidence, concentration, strength,
//! expected class probabilities and vacuity uncertainty, plus the
//! digamma classification loss with an annealed KL regularizer.

use serde::{Deserialize, Serialize};

use crate::diff::special::{digamma, ln_gamma, softplus};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Number of ordinal severity grades.
pub const NUM_CLASSES: usize = 4;

/// Evidence-derived quantities for one sample.
///
/// `alpha[c] = evidence[c] + 1`, `strength = Σ alpha`,
/// `probs[c] = alpha[c] / strength`, `uncertainty = C / strength`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidentialOutput {
    pub evidence: Vec<f64>,
    pub alpha: Vec<f64>,
    pub strength: f64,
    pub probs: Vec<f64>,
    pub uncertainty: f64,
}

impl EvidentialOutput {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::EmptyInput("no logits".into()));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::Domain("non-finite logit".into()));
        }
        Self::from_evidence(logits.iter().map(|&z| softplus(z)).collect())
    }

    pub fn from_evidence(evidence: Vec<f64>) -> Result<Self> {
        if evidence.is_empty() {
            return Err(Error::EmptyInput("no evidence".into()));
        }
        if evidence.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Domain("evidence must be finite and non-negative".into()));
        }
        let alpha: Vec<f64> = evidence.iter().map(|e| e + 1.0).collect();
        let strength: f64 = alpha.iter().sum();
        let probs = alpha.iter().map(|a| a / strength).collect();
        let uncertainty = alpha.len() as f64 / strength;
        Ok(Self {
            evidence,
            alpha,
            strength,
            probs,
            uncertainty,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn confidence(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::MIN, f64::max)
    }
}

/// Index of the first maximal entry.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(class: usize, num_classes: usize) -> Result<Vec<f64>> {
    if class >= num_classes {
        return Err(Error::Shape(format!(
            "class {class} out of range for {num_classes} classes"
        )));
    }
    let mut y = vec![0.0; num_classes];
    y[class] = 1.0;
    Ok(y)
}

pub fn evidential_from_logits(logits: &[f64]) -> Result<EvidentialOutput> {
    EvidentialOutput::from_logits(logits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdlLossConfig {
    /// Epoch at which the KL weight reaches 1.
    pub annealing_threshold: u32,
    /// Replace the true-class concentration by 1 before the KL term.
    pub kl_evidence_adjustment: bool,
}

impl Default for EdlLossConfig {
    fn default() -> Self {
        Self {
            annealing_threshold: 10,
            kl_evidence_adjustment: true,
        }
    }
}

impl EdlLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.annealing_threshold == 0 {
            return Err(Error::Config("annealing_threshold must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// `min(1, t / T)`.
pub fn annealing_coefficient(epoch: u32, threshold: u32) -> f64 {
    (epoch as f64 / threshold.max(1) as f64).min(1.0)
}

/// Closed-form KL[Dir(α) ‖ Dir(1)].
pub fn kl_dirichlet_vs_uniform(alpha: &[f64]) -> Result<f64> {
    if alpha.is_empty() {
        return Err(Error::EmptyInput("empty concentration vector".into()));
    }
    if let Some(a) = alpha.iter().find(|&&a| !(a >= 1.0 - 1e-12) || !a.is_finite()) {
        return Err(Error::Domain(format!("concentration {a} below 1")));
    }
    if alpha.iter().all(|&a| a == 1.0) {
        return Ok(0.0);
    }
    let c = alpha.len() as f64;
    let s: f64 = alpha.iter().sum();
    let psi_s = digamma(s)?;
    let mut kl = ln_gamma(s)? - ln_gamma(c)?;
    for &a in alpha {
        kl += -ln_gamma(a)? + (a - 1.0) * (digamma(a)? - psi_s);
    }
    // Rounding can leave a tiny negative at α ≈ 1.
    Ok(kl.max(0.0))
}

fn kl_target(alpha: &[f64], y: &[f64], cfg: &EdlLossConfig) -> Vec<f64> {
    if cfg.kl_evidence_adjustment {
        alpha
            .iter()
            .zip(y)
            .map(|(a, yc)| yc + (1.0 - yc) * a)
            .collect()
    } else {
        alpha.to_vec()
    }
}

/// Batch-mean evidential loss: per sample
/// `Σ_c y_c [ψ(S) − ψ(α_c)] + λ_t · KL[Dir(α̃) ‖ Dir(1)]`.
pub fn edl_loss(
    batch: &[(EvidentialOutput, Vec<f64>)],
    epoch: u32,
    cfg: &EdlLossConfig,
) -> Result<f64> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let lambda = annealing_coefficient(epoch, cfg.annealing_threshold);
    let mut total = 0.0;
    for (out, y) in batch {
        if y.len() != out.num_classes() {
            return Err(Error::Shape(format!(
                "label has {} entries, output has {} classes",
                y.len(),
                out.num_classes()
            )));
        }
        let psi_s = digamma(out.strength)?;
        for (yc, &a) in y.iter().zip(&out.alpha) {
            if *yc != 0.0 {
                total += yc * (psi_s - digamma(a)?);
            }
        }
        if lambda > 0.0 {
            total += lambda * kl_dirichlet_vs_uniform(&kl_target(&out.alpha, y, cfg))?;
        }
    }
    Ok(total / batch.len() as f64)
}

/// Differentiable handles for the quantities of [`EvidentialOutput`].
#[derive(Debug, Clone, Copy)]
pub struct EvidentialVars {
    pub evidence: Var,
    pub alpha: Var,
    pub strength: Var,
    pub probs: Var,
    pub uncertainty: Var,
}

/// Records softplus evidence and the derived Dirichlet quantities for a
/// `1×C` logit row.
pub fn evidential_on_tape(tape: &mut Tape, logits: Var) -> Result<EvidentialVars> {
    let classes = tape.value(logits).len() as f64;
    let evidence = tape.softplus(logits)?;
    let alpha = tape.affine(evidence, 1.0, 1.0)?;
    let strength = tape.sum(alpha)?;
    let probs = tape.div(alpha, strength)?;
    let c = tape.constant(Tensor::from_parts(vec![], vec![classes]));
    let uncertainty = tape.div(c, strength)?;
    Ok(EvidentialVars {
        evidence,
        alpha,
        strength,
        probs,
        uncertainty,
    })
}

/// KL[Dir(α) ‖ Dir(1)] for a `1×C` concentration row.
pub fn kl_uniform_on_tape(tape: &mut Tape, alpha: Var) -> Result<Var> {
    let c = tape.value(alpha).len();
    let s = tape.sum(alpha)?;
    let lg_s = tape.ln_gamma(s)?;
    let lg_a = tape.ln_gamma(alpha)?;
    let sum_lg_a = tape.sum(lg_a)?;
    let psi_a = tape.digamma(alpha)?;
    let psi_s = tape.digamma(s)?;
    let diff = tape.sub(psi_a, psi_s)?;
    let am1 = tape.affine(alpha, 1.0, -1.0)?;
    let weighted = tape.mul(am1, diff)?;
    let sum_w = tape.sum(weighted)?;
    let head = tape.sub(lg_s, sum_lg_a)?;
    let total = tape.add(head, sum_w)?;
    tape.affine(total, 1.0, -crate::diff::special::ln_gamma(c as f64)?)
}

/// Per-sample evidential loss on the tape (not divided by batch size).
pub fn edl_loss_on_tape(
    tape: &mut Tape,
    alpha: Var,
    y: &[f64],
    epoch: u32,
    cfg: &EdlLossConfig,
) -> Result<Var> {
    let c = tape.value(alpha).len();
    if y.len() != c {
        return Err(Error::Shape(format!(
            "label has {} entries, output has {c} classes",
            y.len()
        )));
    }
    let yv = tape.constant(Tensor::from_parts(vec![1, c], y.to_vec()));
    let s = tape.sum(alpha)?;
    let psi_s = tape.digamma(s)?;
    let psi_a = tape.digamma(alpha)?;
    let gap = tape.sub(psi_s, psi_a)?;
    let weighted = tape.mul(yv, gap)?;
    let cls = tape.sum(weighted)?;

    let lambda = annealing_coefficient(epoch, cfg.annealing_threshold);
    if lambda == 0.0 {
        return Ok(cls);
    }
    let target = if cfg.kl_evidence_adjustment {
        let keep = tape.constant(Tensor::from_parts(
            vec![1, c],
            y.iter().map(|v| 1.0 - v).collect(),
        ));
        let masked = tape.mul(alpha, keep)?;
        tape.add(masked, yv)?
    } else {
        alpha
    };
    let kl = kl_uniform_on_tape(tape, target)?;
    let reg = tape.scale(kl, lambda)?;
    tape.add(cls, reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::grad_check;
    use proptest::prelude::*;

    #[test]
    fn zero_evidence_limit_is_uniform_and_vacuous() {
        let out = EvidentialOutput::from_logits(&[-800.0; 4]).unwrap();
        assert_eq!(out.uncertainty, 1.0);
        assert_eq!(out.probs, vec![0.25; 4]);
    }

    #[test]
    fn direct_arithmetic_example() {
        let out = EvidentialOutput::from_evidence(vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(out.alpha, vec![5.0, 1.0, 1.0, 1.0]);
        assert_eq!(out.strength, 8.0);
        assert_eq!(out.uncertainty, 0.5);
        assert_eq!(out.probs, vec![0.625, 0.125, 0.125, 0.125]);
    }

    #[test]
    fn zero_logits_example() {
        let out = EvidentialOutput::from_logits(&[0.0; 4]).unwrap();
        let ln2 = 2f64.ln();
        assert!(out.evidence.iter().all(|e| (e - ln2).abs() < 1e-15));
        assert!((out.strength - 6.772_588_722_239_781).abs() < 1e-12);
        assert!((out.uncertainty - 0.590_616_109_149_641_2).abs() < 1e-12);
        assert!(out.probs.iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_dirichlet_vs_uniform(&[1.0; 4]).unwrap(), 0.0);
        let kl = kl_dirichlet_vs_uniform(&[2.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((kl - 0.302_961).abs() < 1e-6, "{kl}");
        assert!(
            kl_dirichlet_vs_uniform(&[10.0; 4]).unwrap()
                > kl_dirichlet_vs_uniform(&[2.0; 4]).unwrap()
        );
        assert!(matches!(
            kl_dirichlet_vs_uniform(&[0.5, 1.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn annealing_examples() {
        assert_eq!(annealing_coefficient(0, 10), 0.0);
        assert_eq!(annealing_coefficient(10, 10), 1.0);
        assert!((annealing_coefficient(3, 10) - 0.3).abs() < 1e-15);
        assert_eq!(annealing_coefficient(25, 10), 1.0);
    }

    #[test]
    fn loss_at_zero_evidence_and_epoch_zero() {
        let cfg = EdlLossConfig::default();
        let out = EvidentialOutput::from_evidence(vec![0.0; 4]).unwrap();
        for class in 0..4 {
            let loss = edl_loss(&[(out.clone(), one_hot(class, 4).unwrap())], 0, &cfg).unwrap();
            assert!((loss - 11.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_with_adjusted_kl_after_annealing() {
        let cfg = EdlLossConfig::default();
        let out = EvidentialOutput::from_evidence(vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        let loss = edl_loss(&[(out, one_hot(0, 4).unwrap())], 12, &cfg).unwrap();
        let expected = 1.0 / 5.0 + 1.0 / 6.0 + 1.0 / 7.0;
        assert!((loss - expected).abs() < 1e-12, "{loss}");
        assert!((expected - 0.509_524).abs() < 1e-6);
    }

    #[test]
    fn loss_rejects_label_mismatch() {
        let out = EvidentialOutput::from_evidence(vec![0.0; 4]).unwrap();
        let r = edl_loss(&[(out, vec![1.0, 0.0])], 0, &EdlLossConfig::default());
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn tape_loss_matches_plain_loss() {
        let logits = [0.7, -1.3, 2.1, 0.05];
        for adjust in [false, true] {
            let cfg = EdlLossConfig {
                annealing_threshold: 10,
                kl_evidence_adjustment: adjust,
            };
            for epoch in [0, 5, 10] {
                let y = one_hot(2, 4).unwrap();
                let plain = edl_loss(
                    &[(EvidentialOutput::from_logits(&logits).unwrap(), y.clone())],
                    epoch,
                    &cfg,
                )
                .unwrap();
                let mut tape = Tape::new();
                let z = tape.param(Tensor::row(logits.to_vec()).unwrap());
                let ev = evidential_on_tape(&mut tape, z).unwrap();
                let l = edl_loss_on_tape(&mut tape, ev.alpha, &y, epoch, &cfg).unwrap();
                assert!((tape.scalar_value(l) - plain).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_loss_gradient_matches_finite_differences() {
        let cfg = EdlLossConfig::default();
        let logits = Tensor::row(vec![0.4, -0.2, 1.1, -2.0]).unwrap();
        let err = grad_check(
            |tape, p| {
                let ev = evidential_on_tape(tape, p[0])?;
                edl_loss_on_tape(tape, ev.alpha, &[0.0, 1.0, 0.0, 0.0], 7, &cfg)
            },
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    proptest! {
        #[test]
        fn outputs_stay_valid(z in prop::collection::vec(-60.0f64..60.0, 4)) {
            let out = EvidentialOutput::from_logits(&z).unwrap();
            prop_assert!(out.uncertainty > 0.0 && out.uncertainty <= 1.0);
            prop_assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (a, e) in out.alpha.iter().zip(&out.evidence) {
                prop_assert_eq!(*a, e + 1.0);
            }
        }

        #[test]
        fn raising_true_logit_never_raises_classification_term(
            z in prop::collection::vec(-10.0f64..10.0, 4),
            class in 0usize..4,
            bump in 0.0f64..5.0,
        ) {
            let cfg = EdlLossConfig::default();
            let y = one_hot(class, 4).unwrap();
            let base = edl_loss(&[(EvidentialOutput::from_logits(&z).unwrap(), y.clone())], 0, &cfg).unwrap();
            let mut z2 = z.clone();
            z2[class] += bump;
            let raised = edl_loss(&[(EvidentialOutput::from_logits(&z2).unwrap(), y)], 0, &cfg).unwrap();
            prop_assert!(raised <= base + 1e-12);
        }

        #[test]
        fn kl_positive_away_from_ones(alpha in prop::collection::vec(1.0f64..20.0, 4)) {
            let kl = kl_dirichlet_vs_uniform(&alpha).unwrap();
            if alpha.iter().any(|&a| a > 1.0 + 1e-6) {
                prop_assert!(kl > 0.0);
            }
        }

        #[test]
        fn annealing_monotone(t in 0u32..100, big_t in 1u32..50) {
            let a = annealing_coefficient(t, big_t);
            let b = annealing_coefficient(t + 1, big_t);
            prop_assert!(b >= a && b <= 1.0);
        }

        #[test]
        fn batch_permutation_invariant(
            zs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..6),
            epoch in 0u32..20,
        ) {
            let cfg = EdlLossConfig::default();
            let batch: Vec<_> = zs
                .iter()
                .enumerate()
                .map(|(i, z)| (EvidentialOutput::from_logits(z).unwrap(), one_hot(i % 4, 4).unwrap()))
                .collect();
            let mut rev = batch.clone();
            rev.reverse();
            let a = edl_loss(&batch, epoch, &cfg).unwrap();
            let b = edl_loss(&rev, epoch, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

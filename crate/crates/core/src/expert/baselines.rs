use rand::Rng;

use super::model::{ExpertModel, Mode};
use crate::error::{Error, Result};
use crate::simdata::FeatureBag;

/// Predictive distribution with a scalar uncertainty in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub probs: Vec<f64>,
    pub uncertainty: f64,
}

/// Entropy of `p` divided by `ln C`.
pub fn normalized_entropy(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return 0.0;
    }
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    (h / (p.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Single deterministic pass, uncertainty from the entropy of its output.
pub fn softmax_predict(model: &ExpertModel, bag: &FeatureBag) -> Result<ScoredPrediction> {
    let probs = model.forward(bag)?.output.probs().to_vec();
    let uncertainty = normalized_entropy(&probs);
    Ok(ScoredPrediction { probs, uncertainty })
}

/// Averages `passes` stochastic forward passes with dropout kept on.
pub fn mc_dropout_predict<R: Rng + ?Sized>(
    model: &ExpertModel,
    bag: &FeatureBag,
    passes: usize,
    rng: &mut R,
) -> Result<ScoredPrediction> {
    if passes == 0 {
        return Err(Error::Config("mc dropout needs at least one pass".into()));
    }
    let mut mean = vec![0.0; crate::evidential::NUM_CLASSES];
    for _ in 0..passes {
        let out = model.forward_with_rng(bag, Mode::Train, rng)?;
        for (m, p) in mean.iter_mut().zip(out.output.probs()) {
            *m += p / passes as f64;
        }
    }
    let uncertainty = normalized_entropy(&mean);
    Ok(ScoredPrediction {
        probs: mean,
        uncertainty,
    })
}

/// Mean of independently trained members' eval-mode outputs.
pub fn ensemble_predict(models: &[ExpertModel], bag: &FeatureBag) -> Result<ScoredPrediction> {
    if models.len() < 2 {
        return Err(Error::Config(format!(
            "ensemble needs at least 2 members, got {}",
            models.len()
        )));
    }
    let mut mean = vec![0.0; crate::evidential::NUM_CLASSES];
    for m in models {
        let out = m.forward(bag)?;
        for (acc, p) in mean.iter_mut().zip(out.output.probs()) {
            *acc += p / models.len() as f64;
        }
    }
    let uncertainty = normalized_entropy(&mean);
    Ok(ScoredPrediction {
        probs: mean,
        uncertainty,
    })
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evidential::EdlLossConfig;
use crate::expert::{
    baseline_roster, default_roster, derive_seed, ExpertSpec, TrainConfig, DEFAULT_FEATURE_DIM,
};
use crate::gate::{GateLossConfig, GateSpec};
use crate::metrics::ThresholdConfig;
use crate::simdata::{GeneratorConfig, RaterPanel, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatersConfig {
    /// Readers of the train, val and test splits.
    pub development: RaterPanel,
    /// Readers of the unseen split.
    pub prospective: RaterPanel,
}

impl Default for RatersConfig {
    fn default() -> Self {
        Self {
            development: RaterPanel::development(),
            prospective: RaterPanel::prospective(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Softmax ensemble size; member 0 is also the single softmax and MC
    /// dropout network.
    pub members: usize,
    pub mc_passes: usize,
    pub hidden: usize,
    pub attention: usize,
    pub dropout: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            members: 4,
            mc_passes: 40,
            hidden: 64,
            attention: 32,
            dropout: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    pub shared_dim: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    /// Split whose final labels the gate is trained on.
    pub train_split: Split,
    pub loss: GateLossConfig,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            shared_dim: 32,
            head_hidden: 16,
            dropout: 0.25,
            train_split: Split::Train,
            loss: GateLossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub experts: TrainConfig,
    pub gate: TrainConfig,
    pub edl: EdlLossConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            experts: TrainConfig {
                batch_size: 1,
                ..TrainConfig::default()
            },
            gate: TrainConfig::default(),
            edl: EdlLossConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub bins: usize,
    pub thresholds: ThresholdConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            bins: 10,
            thresholds: ThresholdConfig::default(),
        }
    }
}

/// Everything a pipeline run depends on besides the run seed.
///
/// Every `seed` field inside is a salt: the effective seed of a component is
/// derived from it and the run seed, so one config serves many runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub generator: GeneratorConfig,
    pub raters: RatersConfig,
    pub experts: Vec<ExpertSpec>,
    pub baselines: BaselineConfig,
    pub gate: GateConfig,
    pub training: TrainingConfig,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            generator: GeneratorConfig::default(),
            raters: RatersConfig::default(),
            experts: default_roster(0)
                .into_iter()
                .enumerate()
                .map(|(k, s)| ExpertSpec { seed: k as u64, ..s })
                .collect(),
            baselines: BaselineConfig::default(),
            gate: GateConfig::default(),
            training: TrainingConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

const GENERATOR_SALT: u64 = 0xDA7A;
const GATE_SALT: u64 = 0x6A7E;
const BASELINE_SALT: u64 = 0xBA5E;
const MC_SALT: u64 = 0x3C;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(reason) => Error::Config(format!("{}: {reason}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.raters.development.validate()?;
        self.raters.prospective.validate()?;
        if self.experts.len() < 2 {
            return Err(Error::Config("at least 2 experts are required".into()));
        }
        let d = self.experts[0].feature;
        for s in &self.experts {
            s.validate()?;
            if s.feature != d {
                return Err(Error::Config(format!(
                    "expert {} has feature width {}, expected {d}",
                    s.name, s.feature
                )));
            }
            if s.head != crate::expert::HeadKind::Evidential {
                return Err(Error::Config(format!("expert {} must use an evidential head", s.name)));
            }
        }
        let mut names: Vec<&str> = self.experts.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("expert names must be unique".into()));
        }
        if self.baselines.members < 2 {
            return Err(Error::Config("baseline ensemble needs at least 2 members".into()));
        }
        if self.baselines.mc_passes == 0 {
            return Err(Error::Config("mc_passes must be ≥ 1".into()));
        }
        self.gate_spec(0).validate()?;
        self.gate.loss.validate()?;
        self.training.experts.validate()?;
        self.training.gate.validate()?;
        self.training.edl.validate()?;
        if self.metrics.bins == 0 {
            return Err(Error::Config("metrics.bins must be ≥ 1".into()));
        }
        self.metrics.thresholds.validate()?;
        for spec in self.baseline_specs(0) {
            spec.validate()?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the parsed config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn generator_for(&self, run_seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            seed: derive_seed(run_seed, self.generator.seed ^ GENERATOR_SALT),
            ..self.generator.clone()
        }
    }

    pub fn expert_specs(&self, run_seed: u64) -> Vec<ExpertSpec> {
        self.experts
            .iter()
            .map(|s| ExpertSpec {
                seed: derive_seed(run_seed, s.seed),
                ..s.clone()
            })
            .collect()
    }

    pub fn baseline_specs(&self, run_seed: u64) -> Vec<ExpertSpec> {
        let b = &self.baselines;
        baseline_roster(derive_seed(run_seed, BASELINE_SALT), b.members)
            .into_iter()
            .map(|s| ExpertSpec {
                hidden: b.hidden,
                attention: b.attention,
                dropout: b.dropout,
                feature: self.experts.first().map_or(DEFAULT_FEATURE_DIM, |e| e.feature),
                ..s
            })
            .collect()
    }

    pub fn gate_spec(&self, run_seed: u64) -> GateSpec {
        GateSpec {
            experts: self.experts.len(),
            feature_dim: self.experts.first().map_or(DEFAULT_FEATURE_DIM, |e| e.feature),
            shared_dim: self.gate.shared_dim,
            head_hidden: self.gate.head_hidden,
            dropout: self.gate.dropout,
            seed: derive_seed(run_seed, GATE_SALT),
        }
    }

    pub fn mc_seed(&self, run_seed: u64) -> u64 {
        derive_seed(run_seed, MC_SALT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ExperimentConfig::default().to_toml().unwrap();
        text = text.replacen("seed = 0\n", "seed = 0\nsurprise = 1\n", 1);
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert_eq!(err.kind(), "config");
        assert!(err.to_string().contains("surprise"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.training.experts.epochs = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn run_seed_changes_component_seeds() {
        let cfg = ExperimentConfig::default();
        let a = cfg.expert_specs(1);
        let b = cfg.expert_specs(2);
        assert!(a.iter().zip(&b).all(|(x, y)| x.seed != y.seed));
        assert_ne!(cfg.generator_for(1).seed, cfg.generator_for(2).seed);
        assert_eq!(cfg.expert_specs(1), a);
    }

    #[test]
    fn mismatched_feature_widths_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.experts[1].feature = 16;
        assert_eq!(cfg.validate().unwrap_err().kind(), "config");
    }
}

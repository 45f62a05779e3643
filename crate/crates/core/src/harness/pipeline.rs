use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::expert::{
    ensemble_predict, mc_dropout_predict, softmax_predict, train_expert, ExpertLoss, ExpertModel,
    TrainReport,
};
use crate::gate::{expert_views, gate_samples, naive_fuse, train_gate_on_samples, ExpertView, GateModel};
use crate::metrics::{
    ece_from_bins, fit_thresholds, reliability_diagram, stratify, weighted_f1, ClassThresholds,
    ReliabilityBin, StratificationTable, UncertainPrediction,
};
use crate::simdata::{bag_rng, generate_dataset, Dataset, FeatureBag, Split};

/// Evaluated prediction methods, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Softmax,
    McDropout,
    Ensemble,
    Edl,
    Naive,
    Gated,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Softmax,
        Method::McDropout,
        Method::Ensemble,
        Method::Edl,
        Method::Naive,
        Method::Gated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Softmax => "softmax",
            Method::McDropout => "mc_dropout",
            Method::Ensemble => "ensemble",
            Method::Edl => "edl",
            Method::Naive => "naive",
            Method::Gated => "gated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown method {s:?}; expected one of {}", known.join(", ")))
            })
    }

    /// Parses a comma-separated list into a sorted, deduplicated set.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut out = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(Self::parse)
            .collect::<Result<Vec<_>>>()?;
        out.sort_unstable();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        Ok(out)
    }

    pub fn uses_baselines(self) -> bool {
        matches!(self, Method::Softmax | Method::McDropout | Method::Ensemble)
    }
}

/// Splits reported by evaluation.
pub const EVAL_SPLITS: [Split; 3] = [Split::Val, Split::Test, Split::Unseen];

/// Trained models of one run. `baselines` is empty and `gate` is `None`
/// when no selected method needs them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub experts: Vec<ExpertModel>,
    pub baselines: Vec<ExpertModel>,
    pub gate: Option<GateModel>,
}

pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    generate_dataset(
        &cfg.generator_for(seed),
        &cfg.raters.development,
        &cfg.raters.prospective,
    )
}

fn train_all(
    specs: Vec<crate::expert::ExpertSpec>,
    input_dim: usize,
    data: &[FeatureBag],
    cfg: &ExperimentConfig,
) -> Result<Vec<(ExpertModel, TrainReport)>> {
    specs
        .into_par_iter()
        .map(|spec| {
            let loss = ExpertLoss::for_head(spec.head, cfg.training.edl);
            let mut model = ExpertModel::new(spec, input_dim)?;
            let report = train_expert(&mut model, data, &cfg.training.experts, &loss)?;
            Ok((model, report))
        })
        .collect()
}

fn input_dim(ds: &Dataset) -> Result<usize> {
    ds.feature_dim()
        .ok_or_else(|| Error::EmptyInput("dataset has no bags".into()))
}

/// Trains the evidential roster on the train split.
pub fn train_experts(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    seed: u64,
) -> Result<Vec<(ExpertModel, TrainReport)>> {
    train_all(cfg.expert_specs(seed), input_dim(ds)?, &ds.train, cfg)
}

/// Trains the softmax baseline members on the train split.
pub fn train_baselines(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    seed: u64,
) -> Result<Vec<(ExpertModel, TrainReport)>> {
    train_all(cfg.baseline_specs(seed), input_dim(ds)?, &ds.train, cfg)
}

/// Trains the gate on final labels of the configured split, experts fixed.
pub fn train_gate_stage(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    experts: &[ExpertModel],
    seed: u64,
) -> Result<(GateModel, TrainReport)> {
    let mut gate = GateModel::new(cfg.gate_spec(seed))?;
    let before: Vec<String> = experts.iter().map(|m| m.params.fingerprint()).collect();
    let samples = gate_samples(experts, ds.split(cfg.gate.train_split))?;
    let report = train_gate_on_samples(&mut gate, &samples, &cfg.training.gate, &cfg.gate.loss)?;
    let after: Vec<String> = experts.iter().map(|m| m.params.fingerprint()).collect();
    if before != after {
        return Err(Error::State("expert parameters changed during gate training".into()));
    }
    Ok((gate, report))
}

/// A method's class distribution and uncertainty for one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub uncertainty: f64,
    pub label: usize,
}

impl Prediction {
    pub fn pred(&self) -> usize {
        crate::evidential::argmax(&self.probs)
    }

    pub fn confidence(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn uncertain(&self) -> UncertainPrediction {
        UncertainPrediction {
            pred: self.pred(),
            uncertainty: self.uncertainty,
            label: self.label,
        }
    }
}

/// Produces predictions of every selected method on one split. Expert views
/// are computed once and shared by the fusion methods.
pub fn predict_split(
    cfg: &ExperimentConfig,
    models: &TrainedModels,
    methods: &[Method],
    bags: &[FeatureBag],
    seed: u64,
) -> Result<Vec<(Method, Vec<Prediction>)>> {
    let needs_views = methods.iter().any(|m| matches!(m, Method::Naive | Method::Gated));
    let views: Vec<Vec<ExpertView>> = if needs_views {
        bags.par_iter()
            .map(|b| expert_views(&models.experts, b))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mc_seed = cfg.mc_seed(seed);
    let baseline = |name: &str| -> Result<&ExpertModel> {
        models
            .baselines
            .first()
            .ok_or_else(|| Error::State(format!("{name} needs trained baseline networks")))
    };

    methods
        .iter()
        .map(|&method| {
            let preds = (0..bags.len())
                .into_par_iter()
                .map(|i| {
                    let bag = &bags[i];
                    let (probs, uncertainty) = match method {
                        Method::Softmax => {
                            let s = softmax_predict(baseline("softmax")?, bag)?;
                            (s.probs, s.uncertainty)
                        }
                        Method::McDropout => {
                            let mut rng = bag_rng(mc_seed, bag.bag_id);
                            let s = mc_dropout_predict(
                                baseline("mc_dropout")?,
                                bag,
                                cfg.baselines.mc_passes,
                                &mut rng,
                            )?;
                            (s.probs, s.uncertainty)
                        }
                        Method::Ensemble => {
                            let s = ensemble_predict(&models.baselines, bag)?;
                            (s.probs, s.uncertainty)
                        }
                        Method::Edl => {
                            let out = models.experts[0].forward(bag)?;
                            let ev = out.output.evidential().ok_or_else(|| {
                                Error::State("first expert is not evidential".into())
                            })?;
                            (ev.probs.clone(), ev.uncertainty)
                        }
                        Method::Naive => {
                            let f = naive_fuse(&views[i])?;
                            (f.probs, f.uncertainty)
                        }
                        Method::Gated => {
                            let gate = models
                                .gate
                                .as_ref()
                                .ok_or_else(|| Error::State("gated needs a trained gate".into()))?;
                            let f = gate.forward(&views[i])?;
                            (f.probs, f.uncertainty)
                        }
                    };
                    Ok(Prediction {
                        probs,
                        uncertainty,
                        label: bag.final_label as usize,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((method, preds))
        })
        .collect()
}

/// Metrics of one method on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: Method,
    pub split: Split,
    pub seed: u64,
    pub weighted_f1: f64,
    pub ece: f64,
    pub reliability: Vec<ReliabilityBin>,
    pub stratification: StratificationTable,
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub split: Split,
    pub seed: u64,
    pub weighted_f1: f64,
    pub ece: f64,
    pub retention: f64,
    pub confident_f1: Option<f64>,
    pub uncertain_f1: Option<f64>,
}

impl MethodReport {
    pub fn row(&self) -> ResultRow {
        ResultRow {
            method: self.method,
            split: self.split,
            seed: self.seed,
            weighted_f1: self.weighted_f1,
            ece: self.ece,
            retention: self.stratification.retention,
            confident_f1: self.stratification.confident_f1,
            uncertain_f1: self.stratification.uncertain_f1,
        }
    }
}

fn score(
    method: Method,
    split: Split,
    seed: u64,
    preds: &[Prediction],
    thresholds: &ClassThresholds,
    bins: usize,
) -> Result<MethodReport> {
    let p: Vec<usize> = preds.iter().map(Prediction::pred).collect();
    let y: Vec<usize> = preds.iter().map(|x| x.label).collect();
    let conf: Vec<f64> = preds.iter().map(Prediction::confidence).collect();
    let correct: Vec<bool> = p.iter().zip(&y).map(|(a, b)| a == b).collect();
    let reliability = reliability_diagram(&conf, &correct, bins)?;
    let unc: Vec<UncertainPrediction> = preds.iter().map(Prediction::uncertain).collect();
    Ok(MethodReport {
        method,
        split,
        seed,
        weighted_f1: weighted_f1(&p, &y)?,
        ece: ece_from_bins(&reliability),
        reliability,
        stratification: stratify(&unc, thresholds)?,
    })
}

/// Scores every selected method on val, test and unseen. Thresholds are fit
/// per method on its validation predictions.
pub fn evaluate(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    models: &TrainedModels,
    methods: &[Method],
    seed: u64,
) -> Result<Vec<MethodReport>> {
    let per_split: Vec<(Split, Vec<(Method, Vec<Prediction>)>)> = EVAL_SPLITS
        .iter()
        .map(|&s| Ok((s, predict_split(cfg, models, methods, ds.split(s), seed)?)))
        .collect::<Result<_>>()?;
    let mut reports = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        let val = &per_split[0].1[mi].1;
        let unc: Vec<UncertainPrediction> = val.iter().map(Prediction::uncertain).collect();
        let thresholds = fit_thresholds(&unc, &cfg.metrics.thresholds)?;
        for (split, preds) in &per_split {
            reports.push(score(method, *split, seed, &preds[mi].1, &thresholds, cfg.metrics.bins)?);
        }
    }
    Ok(reports)
}

/// Trains whatever `methods` need.
pub fn train_models(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    methods: &[Method],
    seed: u64,
) -> Result<(TrainedModels, Vec<(String, TrainReport)>)> {
    let mut curves = Vec::new();
    let experts: Vec<ExpertModel> = train_experts(cfg, ds, seed)?
        .into_iter()
        .map(|(m, r)| {
            curves.push((m.spec.name.clone(), r));
            m
        })
        .collect();
    let baselines: Vec<ExpertModel> = if methods.iter().any(|m| m.uses_baselines()) {
        train_baselines(cfg, ds, seed)?
            .into_iter()
            .map(|(m, r)| {
                curves.push((m.spec.name.clone(), r));
                m
            })
            .collect()
    } else {
        Vec::new()
    };
    let gate = if methods.contains(&Method::Gated) {
        let (g, r) = train_gate_stage(cfg, ds, &experts, seed)?;
        curves.push(("gate".to_string(), r));
        Some(g)
    } else {
        None
    };
    Ok((
        TrainedModels {
            experts,
            baselines,
            gate,
        },
        curves,
    ))
}

/// Generate, train and evaluate one seed entirely in memory.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, methods: &[Method]) -> Result<Vec<MethodReport>> {
    let ds = generate(cfg, seed)?;
    let (models, _) = train_models(cfg, &ds, methods, seed)?;
    evaluate(cfg, &ds, &models, methods, seed)
}

//! Weighted F1, expected calibration error with reliability bins, and
//! uncertainty-threshold stratification into confident / uncertain subsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::NUM_CLASSES;

/// Support-weighted mean of per-class F1 over the classes present in
/// `labels`. A class with zero precision and recall scores 0.
pub fn weighted_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("weighted_f1 on no samples".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let classes = preds.iter().chain(labels).max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; classes];
    let mut pred_count = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        pred_count[p] += 1;
        support[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let mut total = 0.0;
    for c in 0..classes {
        if support[c] == 0 {
            continue;
        }
        // 2·tp / (|pred = c| + |label = c|) is F1 without the 0/0 cases.
        let f1 = 2.0 * tp[c] as f64 / (pred_count[c] + support[c]) as f64;
        total += f1 * support[c] as f64;
    }
    Ok(total / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Fraction correct; 0 for an empty bin.
    pub accuracy: f64,
    /// Mean confidence; 0 for an empty bin.
    pub confidence: f64,
}

/// Index of the right-closed bin `(m/M, (m+1)/M]` holding `c`; 0 goes to
/// the first bin.
fn bin_index(c: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut idx = ((c * m).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
    if idx > 0 && c <= idx as f64 / m {
        idx -= 1;
    } else if idx + 1 < bins && c > (idx + 1) as f64 / m {
        idx += 1;
    }
    idx
}

fn check_calibration_input(confidences: &[f64], correct: &[bool], bins: usize) -> Result<()> {
    if confidences.is_empty() {
        return Err(Error::EmptyInput("no confidences".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::Shape(format!(
            "{} confidences vs {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Config("need at least one bin".into()));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Domain(format!("confidence {c} outside [0, 1]")));
    }
    Ok(())
}

/// `Σ_m |B_m|/N · |acc(B_m) − conf(B_m)|` over `bins` equal-width bins.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    check_calibration_input(confidences, correct, bins)?;
    let mut count = vec![0usize; bins];
    let mut hits = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += ok as usize;
    }
    let n = confidences.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let k = count[b] as f64;
        total += k / n * (hits[b] as f64 / k - conf_sum[b] / k).abs();
    }
    Ok(total)
}

pub fn reliability_diagram(
    confidences: &[f64],
    correct: &[bool],
    bins: usize,
) -> Result<Vec<ReliabilityBin>> {
    check_calibration_input(confidences, correct, bins)?;
    let mut out: Vec<ReliabilityBin> = (0..bins)
        .map(|b| ReliabilityBin {
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            count: 0,
            accuracy: 0.0,
            confidence: 0.0,
        })
        .collect();
    for (&c, &ok) in confidences.iter().zip(correct) {
        let bin = &mut out[bin_index(c, bins)];
        bin.count += 1;
        bin.confidence += c;
        bin.accuracy += ok as u8 as f64;
    }
    for bin in &mut out {
        if bin.count > 0 {
            bin.confidence /= bin.count as f64;
            bin.accuracy /= bin.count as f64;
        }
    }
    Ok(out)
}

/// ECE recomputed from reliability bins.
pub fn ece_from_bins(bins: &[ReliabilityBin]) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    if n == 0 {
        return 0.0;
    }
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n as f64 * (b.accuracy - b.confidence).abs())
        .sum()
}

/// A prediction with its scalar uncertainty and reference label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertainPrediction {
    pub pred: usize,
    pub uncertainty: f64,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Quantile levels of the per-class validation uncertainties searched
    /// as candidate thresholds.
    pub grid: Vec<f64>,
    /// Smallest fraction of a class's validation samples a threshold must
    /// keep.
    pub min_retention: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            grid: (1..=10).map(|i| i as f64 / 10.0).collect(),
            min_retention: 0.5,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.iter().any(|q| !(*q > 0.0 && *q <= 1.0)) {
            return Err(Error::Config("threshold grid levels must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.min_retention) {
            return Err(Error::Config("min_retention must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Class-specific uncertainty thresholds `t_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    pub per_class: Vec<f64>,
    /// Fitted on all classes pooled; used for classes absent from
    /// validation predictions.
    pub global: f64,
}

impl ClassThresholds {
    pub fn for_class(&self, class: usize) -> f64 {
        self.per_class.get(class).copied().unwrap_or(self.global)
    }
}

/// Nearest-rank quantile of an ascending slice.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn fit_one(samples: &[UncertainPrediction], cfg: &ThresholdConfig) -> Result<f64> {
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.uncertainty).collect();
    sorted.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut best: Option<(f64, f64, f64)> = None; // (score, retention, threshold)
    for &q in &cfg.grid {
        let t = nearest_rank(&sorted, q);
        let kept: Vec<&UncertainPrediction> = samples.iter().filter(|s| s.uncertainty <= t).collect();
        let retention = kept.len() as f64 / n;
        if retention + 1e-12 < cfg.min_retention {
            continue;
        }
        let preds: Vec<usize> = kept.iter().map(|s| s.pred).collect();
        let labels: Vec<usize> = kept.iter().map(|s| s.label).collect();
        let score = weighted_f1(&preds, &labels)?;
        let better = match best {
            None => true,
            Some((bs, br, _)) => score > bs + 1e-12 || ((score - bs).abs() <= 1e-12 && retention > br),
        };
        if better {
            best = Some((score, retention, t));
        }
    }
    Ok(best.map_or(sorted[sorted.len() - 1], |b| b.2))
}

/// Per predicted class, the grid quantile of validation uncertainty that
/// maximizes weighted F1 of the retained (`u ≤ t_c`) samples while keeping
/// at least `min_retention` of them; ties go to the higher retention.
pub fn fit_thresholds(val: &[UncertainPrediction], cfg: &ThresholdConfig) -> Result<ClassThresholds> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::EmptyInput("no validation predictions".into()));
    }
    let global = fit_one(val, cfg)?;
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    for c in 0..NUM_CLASSES {
        let subset: Vec<UncertainPrediction> = val.iter().filter(|s| s.pred == c).copied().collect();
        per_class.push(if subset.is_empty() {
            global
        } else {
            fit_one(&subset, cfg)?
        });
    }
    Ok(ClassThresholds { per_class, global })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationTable {
    pub thresholds: Vec<f64>,
    pub total: usize,
    pub confident_count: usize,
    pub confident_f1: Option<f64>,
    pub uncertain_count: usize,
    pub uncertain_f1: Option<f64>,
    pub retention: f64,
    pub overall_f1: f64,
}

fn subset_f1(samples: &[&UncertainPrediction]) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let preds: Vec<usize> = samples.iter().map(|s| s.pred).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    weighted_f1(&preds, &labels).map(Some)
}

/// Splits predictions into confident (`u ≤ t_c` for the predicted class)
/// and uncertain subsets.
pub fn stratify(preds: &[UncertainPrediction], thresholds: &ClassThresholds) -> Result<StratificationTable> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("no predictions to stratify".into()));
    }
    let (confident, uncertain): (Vec<&UncertainPrediction>, Vec<&UncertainPrediction>) = preds
        .iter()
        .partition(|p| p.uncertainty <= thresholds.for_class(p.pred));
    let all: Vec<&UncertainPrediction> = preds.iter().collect();
    Ok(StratificationTable {
        thresholds: thresholds.per_class.clone(),
        total: preds.len(),
        confident_count: confident.len(),
        confident_f1: subset_f1(&confident)?,
        uncertain_count: uncertain.len(),
        uncertain_f1: subset_f1(&uncertain)?,
        retention: confident.len() as f64 / preds.len() as f64,
        overall_f1: subset_f1(&all)?.unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weighted_f1_examples() {
        assert_eq!(weighted_f1(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap(), 1.0);
        let f = weighted_f1(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert!((f - (0.5 * (2.0 / 3.0) + 0.5 * 0.8)).abs() < 1e-12);
        assert_eq!(weighted_f1(&[3, 3, 3], &[0, 1, 2]).unwrap(), 0.0);
        assert!(matches!(weighted_f1(&[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece(&[1.0; 5], &[true; 5], 10).unwrap(), 0.0);
        let e = ece(&[0.9, 0.9, 0.6, 0.6], &[true, false, true, false], 10).unwrap();
        assert!((e - 0.25).abs() < 1e-12, "{e}");
        assert!(matches!(ece(&[], &[], 10), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn bin_edges_are_right_closed() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.1000001, 10), 1);
        assert_eq!(bin_index(0.6, 10), 5);
        assert_eq!(bin_index(0.7, 10), 6);
        assert_eq!(bin_index(1.0, 10), 9);
        for m in 1..40 {
            for k in 1..=m {
                let edge = k as f64 / m as f64;
                assert_eq!(bin_index(edge, m), k - 1, "edge {k}/{m}");
            }
        }
    }

    #[test]
    fn reliability_single_sample() {
        let bins = reliability_diagram(&[0.95], &[true], 10).unwrap();
        let filled: Vec<_> = bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(filled.len(), 1);
        assert_eq!(filled[0].accuracy, 1.0);
        assert!((filled[0].confidence - 0.95).abs() < 1e-15);
    }

    #[test]
    fn reliability_uniform_counts() {
        let n = 1000;
        let conf: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let correct = vec![true; n];
        for b in reliability_diagram(&conf, &correct, 10).unwrap() {
            assert!((b.count as i64 - 100).abs() <= 1);
        }
    }

    #[test]
    fn thresholds_all_correct_keep_everything() {
        let val: Vec<UncertainPrediction> = (0..40)
            .map(|i| UncertainPrediction {
                pred: i % 4,
                uncertainty: (i as f64 * 0.37) % 1.0,
                label: i % 4,
            })
            .collect();
        let t = fit_thresholds(&val, &ThresholdConfig::default()).unwrap();
        for c in 0..4 {
            let max = val
                .iter()
                .filter(|s| s.pred == c)
                .map(|s| s.uncertainty)
                .fold(f64::MIN, f64::max);
            assert_eq!(t.per_class[c], max);
        }
    }

    #[test]
    fn thresholds_separable_ranking_reach_perfect_retained_f1() {
        // Per class: 6 correct with low u, 4 errors with higher u.
        let mut val = Vec::new();
        for c in 0..4 {
            for k in 0..6 {
                val.push(UncertainPrediction { pred: c, uncertainty: 0.1 + 0.01 * k as f64, label: c });
            }
            for k in 0..4 {
                val.push(UncertainPrediction { pred: c, uncertainty: 0.6 + 0.01 * k as f64, label: (c + 1) % 4 });
            }
        }
        let t = fit_thresholds(&val, &ThresholdConfig::default()).unwrap();
        let table = stratify(&val, &t).unwrap();
        assert_eq!(table.confident_f1, Some(1.0));
        assert_eq!(table.confident_count, 24);
    }

    #[test]
    fn full_retention_floor_uses_max_uncertainty() {
        let val: Vec<UncertainPrediction> = (0..20)
            .map(|i| UncertainPrediction { pred: 1, uncertainty: i as f64 / 20.0, label: i % 2 })
            .collect();
        let cfg = ThresholdConfig { grid: vec![0.1, 0.5, 0.9], min_retention: 1.0 };
        let t = fit_thresholds(&val, &cfg).unwrap();
        assert_eq!(t.per_class[1], 19.0 / 20.0);
        let table = stratify(&val, &t).unwrap();
        assert_eq!(table.retention, 1.0);
    }

    #[test]
    fn missing_class_falls_back_to_global() {
        let val: Vec<UncertainPrediction> = (0..10)
            .map(|i| UncertainPrediction { pred: 0, uncertainty: i as f64 / 10.0, label: 0 })
            .collect();
        let t = fit_thresholds(&val, &ThresholdConfig::default()).unwrap();
        assert_eq!(t.per_class[3], t.global);
    }

    #[test]
    fn stratify_extremes() {
        let preds: Vec<UncertainPrediction> = (0..30)
            .map(|i| UncertainPrediction { pred: i % 4, uncertainty: 0.2 + i as f64 / 100.0, label: (i * 7) % 4 })
            .collect();
        let overall = weighted_f1(
            &preds.iter().map(|p| p.pred).collect::<Vec<_>>(),
            &preds.iter().map(|p| p.label).collect::<Vec<_>>(),
        )
        .unwrap();
        let hi = ClassThresholds { per_class: vec![10.0; 4], global: 10.0 };
        let t = stratify(&preds, &hi).unwrap();
        assert_eq!(t.retention, 1.0);
        assert_eq!(t.confident_f1, Some(overall));
        let lo = ClassThresholds { per_class: vec![-1.0; 4], global: -1.0 };
        let t = stratify(&preds, &lo).unwrap();
        assert_eq!(t.retention, 0.0);
        assert_eq!(t.uncertain_f1, Some(overall));
    }

    fn arb_preds() -> impl Strategy<Value = Vec<UncertainPrediction>> {
        prop::collection::vec((0usize..4, 0.0f64..1.0, 0usize..4), 1..80).prop_map(|v| {
            v.into_iter()
                .map(|(pred, uncertainty, label)| UncertainPrediction { pred, uncertainty, label })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn f1_invariant_under_relabeling(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60), shift in 1usize..4) {
            let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let perm = |c: usize| (c + shift) % 4;
            let a = weighted_f1(&preds, &labels).unwrap();
            let b = weighted_f1(
                &preds.iter().map(|&c| perm(c)).collect::<Vec<_>>(),
                &labels.iter().map(|&c| perm(c)).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn ece_bounds_and_bins_agree(samples in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200), bins in 1usize..25) {
            let conf: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let ok: Vec<bool> = samples.iter().map(|s| s.1).collect();
            let e = ece(&conf, &ok, bins).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            let from_bins = ece_from_bins(&reliability_diagram(&conf, &ok, bins).unwrap());
            prop_assert!((e - from_bins).abs() < 1e-12);
            let doubled_c: Vec<f64> = conf.iter().chain(&conf).copied().collect();
            let doubled_o: Vec<bool> = ok.iter().chain(&ok).copied().collect();
            prop_assert!((ece(&doubled_c, &doubled_o, bins).unwrap() - e).abs() < 1e-12);
        }

        #[test]
        fn stratify_partitions(preds in arb_preds(), val in arb_preds()) {
            let t = fit_thresholds(&val, &ThresholdConfig::default()).unwrap();
            let lo = val.iter().map(|v| v.uncertainty).fold(f64::MAX, f64::min);
            let hi = val.iter().map(|v| v.uncertainty).fold(f64::MIN, f64::max);
            for &tc in t.per_class.iter().chain(std::iter::once(&t.global)) {
                prop_assert!(tc >= lo && tc <= hi);
            }
            let table = stratify(&preds, &t).unwrap();
            prop_assert_eq!(table.confident_count + table.uncertain_count, preds.len());
            prop_assert!((0.0..=1.0).contains(&table.retention));
            let direct = weighted_f1(
                &preds.iter().map(|p| p.pred).collect::<Vec<_>>(),
                &preds.iter().map(|p| p.label).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert!((table.overall_f1 - direct).abs() < 1e-12);
        }
    }
}

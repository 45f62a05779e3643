//! Fits class-specific uncertainty thresholds on validation predictions and
//! splits held-out predictions into confident and uncertain subsets.
//!
//! The first part uses hand-built predictions; the second runs a reduced
//! pipeline and prints the table for every uncertainty-aware method.
//!
//! cargo run --release --example stratify

use evfuse::harness::{evaluate, generate, train_models, ExperimentConfig, Method};
use evfuse::metrics::{fit_thresholds, stratify, ThresholdConfig, UncertainPrediction};
use evfuse::simdata::Split;

fn main() -> evfuse::Result<()> {
    // Wrong predictions carry more uncertainty than right ones.
    let val: Vec<UncertainPrediction> = (0..200)
        .map(|i| {
            let label = i % 4;
            let wrong = i % 5 == 0;
            UncertainPrediction {
                pred: if wrong { (label + 1) % 4 } else { label },
                uncertainty: if wrong { 0.6 + 0.002 * i as f64 } else { 0.1 + 0.002 * i as f64 },
                label,
            }
        })
        .collect();
    let t = fit_thresholds(&val, &ThresholdConfig::default())?;
    let table = stratify(&val, &t)?;
    println!("thresholds per class {:.3?}", t.per_class);
    println!(
        "retention {:.3}: confident F1 {:?}, uncertain F1 {:?}",
        table.retention, table.confident_f1, table.uncertain_f1
    );

    let mut cfg = ExperimentConfig::default();
    cfg.generator.videos.train = 800;
    cfg.generator.videos.val = 300;
    cfg.generator.videos.test = 300;
    cfg.generator.videos.unseen = 300;
    cfg.training.experts.epochs = 10;
    let methods = [Method::Edl, Method::Naive, Method::Gated];
    let ds = generate(&cfg, 0)?;
    let (models, _) = train_models(&cfg, &ds, &methods, 0)?;
    let reports = evaluate(&cfg, &ds, &models, &methods, 0)?;

    println!("\nmethod  split   retention  confident (n, F1)  uncertain (n, F1)");
    for r in reports.iter().filter(|r| r.split != Split::Val) {
        let s = &r.stratification;
        println!(
            "{:<7} {:<7} {:>9.3}  {:>4}  {:>10}  {:>4}  {:>10}",
            r.method.as_str(),
            r.split.as_str(),
            s.retention,
            s.confident_count,
            s.confident_f1.map_or("-".into(), |f| format!("{f:.3}")),
            s.uncertain_count,
            s.uncertain_f1.map_or("-".into(), |f| format!("{f:.3}")),
        );
    }
    Ok(())
}

//! Trains a reduced pipeline on one seed and prints reliability diagrams for
//! a single evidential expert, the plain average and the gated fusion.
//!
//! cargo run --release --example calibration_report -- [seed]

use evfuse::harness::{evaluate, generate, train_models, ExperimentConfig, Method};
use evfuse::simdata::Split;

fn main() -> evfuse::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = ExperimentConfig::default();
    cfg.generator.videos.train = 800;
    cfg.generator.videos.val = 300;
    cfg.generator.videos.test = 300;
    cfg.generator.videos.unseen = 300;
    cfg.training.experts.epochs = 10;

    let methods = [Method::Edl, Method::Naive, Method::Gated];
    let ds = generate(&cfg, seed)?;
    let (models, _) = train_models(&cfg, &ds, &methods, seed)?;
    let reports = evaluate(&cfg, &ds, &models, &methods, seed)?;

    for r in reports.iter().filter(|r| r.split == Split::Test) {
        println!("\n{} on test: ECE {:.4}, weighted F1 {:.4}", r.method.as_str(), r.ece, r.weighted_f1);
        println!("  bin           count  accuracy  confidence  gap");
        for b in r.reliability.iter().filter(|b| b.count > 0) {
            let bar = "#".repeat((b.count as f64 / 5.0).ceil() as usize);
            println!(
                "  ({:.1}, {:.1}]  {:>5}  {:>8.3}  {:>10.3}  {:+.3} {bar}",
                b.lower,
                b.upper,
                b.count,
                b.accuracy,
                b.confidence,
                b.accuracy - b.confidence
            );
        }
    }
    Ok(())
}

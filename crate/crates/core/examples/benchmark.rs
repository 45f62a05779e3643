//! Multi-seed benchmark of every method on a reduced configuration, written
//! to a directory and summarised as mean ± sd per method and split.
//!
//! cargo run --release --example benchmark -- [out-dir] [seeds]
//!
//! `seeds` is a comma-separated list, default `0,1`.

use std::path::PathBuf;

use evfuse::harness::{cmd_benchmark, ExperimentConfig, Method};

fn main() -> evfuse::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("evfuse-benchmark-demo"));
    let seeds: Vec<u64> = std::env::args()
        .nth(2)
        .unwrap_or_else(|| "0,1".into())
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .collect();

    let mut cfg = ExperimentConfig::default();
    cfg.generator.videos.train = 600;
    cfg.generator.videos.val = 200;
    cfg.generator.videos.test = 200;
    cfg.generator.videos.unseen = 200;
    cfg.training.experts.epochs = 8;
    cfg.baselines.mc_passes = 10;

    let outcome = cmd_benchmark(&cfg, &seeds, &Method::ALL, &out)?;
    println!("wrote {}", out.display());
    println!("\nmethod      split    metric        n   mean     sd");
    for s in outcome.summary.iter().filter(|s| s.metric == "weighted_f1" || s.metric == "ece") {
        println!(
            "{:<11} {:<8} {:<12} {:>2}  {:.4}  {:.4}",
            s.method.as_str(),
            s.split.as_str(),
            s.metric,
            s.n,
            s.mean,
            s.sd
        );
    }
    Ok(())
}

//! Generates a synthetic trial and summarises reader agreement, how often the
//! adjudicator is needed, and the final-label class balance per split.
//!
//! cargo run --release --example simulate_trial

use evfuse::simdata::{generate_dataset, trial_label, GeneratorConfig, RaterPanel, Split};

fn main() -> evfuse::Result<()> {
    let cfg = GeneratorConfig::default();
    let data = generate_dataset(&cfg, &RaterPanel::development(), &RaterPanel::prospective())?;

    println!("split   videos  local=central  adjudicated  final=true  final classes");
    for split in Split::ALL {
        let bags = data.split(split);
        let n = bags.len() as f64;
        let agree = bags.iter().filter(|b| b.labels.local == b.labels.central).count();
        let adjudicated = bags.iter().filter(|b| b.labels.adjudicator.is_some()).count();
        let exact = bags.iter().filter(|b| b.final_label == b.true_class).count();
        let mut counts = [0usize; 4];
        for b in bags {
            counts[b.final_label as usize] += 1;
        }
        println!(
            "{:<7} {:>6}  {:>13.3}  {:>11.3}  {:>10.3}  {counts:?}",
            split.as_str(),
            bags.len(),
            agree as f64 / n,
            adjudicated as f64 / n,
            exact as f64 / n,
        );
    }

    let frames: Vec<usize> = data.train.iter().map(|b| b.frames.shape()[0]).collect();
    let mean = frames.iter().sum::<usize>() as f64 / frames.len() as f64;
    println!("\nframes per video: mean {mean:.1}, feature dim {}", cfg.feature_dim);

    println!("\nmedian rule on a few reader triples:");
    for (l, c, a) in [(2, 2, 0), (1, 3, 2), (0, 1, 1), (3, 0, 3)] {
        let (fin, adj) = trial_label(l, c, || a);
        println!("  local {l} central {c} adjudicator {a} -> final {fin} (adjudicated: {adj})");
    }
    Ok(())
}

//! Trains one evidential expert on simulated data and reports held-out
//! accuracy and calibration.
//!
//! cargo run --release --example train_expert -- [epochs] [hidden] [batch] [lr]

use std::time::Instant;

use evfuse::expert::{train_expert, ExpertLoss, ExpertModel, ExpertSpec, HeadKind, TrainConfig};
use evfuse::metrics::{ece, weighted_f1};
use evfuse::simdata::{generate_dataset, GeneratorConfig, RaterPanel};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> evfuse::Result<()> {
    let epochs: u32 = arg(1, 20);
    let hidden: usize = arg(2, 64);
    let batch: usize = arg(3, 8);
    let lr: f64 = arg(4, 1e-4);

    let data = generate_dataset(
        &GeneratorConfig::default(),
        &RaterPanel::development(),
        &RaterPanel::prospective(),
    )?;
    let spec = ExpertSpec {
        name: "demo".into(),
        head: HeadKind::Evidential,
        label_source: evfuse::expert::LabelSource::Central,
        hidden,
        attention: hidden / 2,
        feature: 32,
        dropout: 0.1,
        attention_kind: evfuse::expert::AttentionKind::Gated,
        seed: 7,
    };
    let mut model = ExpertModel::new(spec, data.feature_dim().unwrap_or(32))?;
    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        batch_size: batch,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = train_expert(&mut model, &data.train, &cfg, &ExpertLoss::Evidential(Default::default()))?;
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  loss {l:.4}", e + 1);
    }

    for (name, split) in [("val", &data.val), ("unseen", &data.unseen)] {
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        let mut conf = Vec::new();
        let mut correct = Vec::new();
        for bag in split.iter() {
            let out = model.forward(bag)?;
            let ev = out.output.evidential().expect("evidential head");
            preds.push(ev.predicted_class());
            labels.push(bag.final_label as usize);
            conf.push(ev.confidence());
            correct.push(ev.predicted_class() == bag.final_label as usize);
        }
        println!(
            "{name:>6}: weighted F1 {:.4}  ECE {:.4}",
            weighted_f1(&preds, &labels)?,
            ece(&conf, &correct, 10)?
        );
    }
    Ok(())
}

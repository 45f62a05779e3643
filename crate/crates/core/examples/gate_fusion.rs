//! Fuses three hand-made expert outputs by plain averaging and through an
//! untrained gate, then trains the gate on a small synthetic problem where
//! one expert is reliable and the others are noise.
//!
//! cargo run --release --example gate_fusion

use evfuse::expert::TrainConfig;
use evfuse::gate::{
    gate_forward, naive_fuse, train_gate_on_samples, ExpertView, GateLossConfig, GateModel,
    GateSample, GateSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn view(probs: [f64; 4], u: f64, features: Vec<f64>) -> ExpertView {
    ExpertView {
        probs: probs.to_vec(),
        uncertainty: u,
        features,
    }
}

fn noisy_probs(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let raw: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.05..1.0));
    let s: f64 = raw.iter().sum();
    raw.map(|x| x / s)
}

fn main() -> evfuse::Result<()> {
    let views = vec![
        view([0.7, 0.1, 0.1, 0.1], 0.2, vec![1.0, 0.0, 0.5, 0.0]),
        view([0.4, 0.3, 0.2, 0.1], 0.5, vec![0.0, 1.0, 0.5, 0.0]),
        view([0.1, 0.6, 0.2, 0.1], 0.6, vec![0.0, 0.0, 0.5, 1.0]),
    ];
    let naive = naive_fuse(&views)?;
    println!("naive  p̂ = {:.3?}  û = {:.3}", naive.probs, naive.uncertainty);

    let mut gate = GateModel::new(GateSpec::new(3, 4, 11))?;
    let fused = gate_forward(&gate, &views)?;
    println!("gated  p̂ = {:.3?}  û = {:.3}", fused.probs, fused.uncertainty);
    println!("       w_p = {:.3?}  w_u = {:.3?}  ε = {:.3}", fused.w_p, fused.w_u, fused.epsilon);

    // Expert 0 sees the label; experts 1 and 2 emit noise. Each expert's
    // features carry its identity so the gate can tell them apart.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<GateSample> = (0..400)
        .map(|i| {
            let label = i % 4;
            let mut sharp = [0.1; 4];
            sharp[label] = 0.7;
            let views = (0..3)
                .map(|k| {
                    let mut f = vec![0.0; 4];
                    f[k] = 1.0;
                    let (p, u) = if k == 0 { (sharp, 0.2) } else { (noisy_probs(&mut rng), 0.7) };
                    view(p, u, f)
                })
                .collect();
            GateSample { views, label }
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 1e-2,
        weight_decay: 1e-5,
        batch_size: 16,
        weighted_sampling: false,
    };
    let report = train_gate_on_samples(&mut gate, &samples, &cfg, &GateLossConfig::default())?;
    println!(
        "\ntrained gate: loss {:.3} -> {:.3}",
        report.epoch_losses[0],
        report.epoch_losses[report.epoch_losses.len() - 1]
    );
    let mut mean_wp = [0.0; 3];
    let mut hits = [0usize; 2];
    for s in &samples {
        let g = gate_forward(&gate, &s.views)?;
        let n = naive_fuse(&s.views)?;
        for (m, w) in mean_wp.iter_mut().zip(&g.w_p) {
            *m += w / samples.len() as f64;
        }
        hits[0] += n.correct(s.label) as usize;
        hits[1] += g.correct(s.label) as usize;
    }
    println!("mean w_p per expert {mean_wp:.3?}");
    println!("accuracy: naive {}/{}  gated {}/{}", hits[0], samples.len(), hits[1], samples.len());
    Ok(())
}

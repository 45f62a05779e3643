//! Logits to evidence, Dirichlet parameters, probabilities and uncertainty,
//! and how the evidential loss reacts to the annealing schedule.
//!
//! cargo run --example evidential_head

use evfuse::evidential::{
    annealing_coefficient, edl_loss, one_hot, EdlLossConfig, EvidentialOutput,
};

fn show(z: &[f64]) -> evfuse::Result<EvidentialOutput> {
    let out = EvidentialOutput::from_logits(z)?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    println!("z = {z:?}");
    println!("  e = [{}]", fmt(&out.evidence));
    println!("  α = [{}]  S = {:.4}", fmt(&out.alpha), out.strength);
    println!("  p = [{}]  u = {:.4}", fmt(&out.probs), out.uncertainty);
    Ok(out)
}

fn main() -> evfuse::Result<()> {
    show(&[0.0; 4])?;
    show(&[-50.0; 4])?;
    show(&[4.0, 0.0, -1.0, -2.0])?;
    let confident = show(&[12.0, -3.0, -3.0, -3.0])?;

    let cfg = EdlLossConfig::default();
    println!("\nloss of the last output, true class 0 vs class 2:");
    println!("epoch  λ_t    y=0      y=2");
    for t in [0, 2, 5, 10, 15] {
        let right = edl_loss(&[(confident.clone(), one_hot(0, 4)?)], t, &cfg)?;
        let wrong = edl_loss(&[(confident.clone(), one_hot(2, 4)?)], t, &cfg)?;
        println!(
            "{t:>5}  {:.2}  {right:.4}  {wrong:.4}",
            annealing_coefficient(t, cfg.annealing_threshold)
        );
    }
    Ok(())
}

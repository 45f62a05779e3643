//! Log-gamma, digamma and the Dirichlet KL term next to known values.
//!
//! cargo run --example special_functions

use evfuse::diff::special::{digamma, ln_gamma, trigamma, EULER_MASCHERONI};
use evfuse::evidential::kl_dirichlet_vs_uniform;

fn main() -> evfuse::Result<()> {
    println!("lnΓ(5)      = {:.9}  (ln 24 = {:.9})", ln_gamma(5.0)?, 24f64.ln());
    println!("lnΓ(0.5)    = {:.9}  (ln √π = {:.9})", ln_gamma(0.5)?, std::f64::consts::PI.sqrt().ln());
    println!("ψ(1)        = {:.12}  (−γ = {:.12})", digamma(1.0)?, -EULER_MASCHERONI);
    println!("ψ'(1)       = {:.12}  (π²/6 = {:.12})", trigamma(1.0)?, std::f64::consts::PI.powi(2) / 6.0);

    println!("\n  n   ψ(n+1) − ψ(1)   H_n");
    let mut h = 0.0;
    for n in 1..=10 {
        h += 1.0 / n as f64;
        println!("{n:>3}   {:.12}  {h:.12}", digamma(n as f64 + 1.0)? - digamma(1.0)?);
    }

    println!();
    for alpha in [[1.0, 1.0, 1.0, 1.0], [2.0, 1.0, 1.0, 1.0], [5.0, 1.0, 1.0, 1.0], [3.0, 3.0, 1.0, 1.0]] {
        println!("KL[Dir({alpha:?}) ‖ Dir(1)] = {:.6}", kl_dirichlet_vs_uniform(&alpha)?);
    }
    Ok(())
}

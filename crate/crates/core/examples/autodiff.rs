//! Reverse-mode gradients on the tape, checked against central differences,
//! first for a small expression and then for a full hurdle-model posterior.
//!
//! cargo run --release --example autodiff

use psweave::diff::{check_gradient, gradient, log_sum_exp, Var};
use psweave::model::{build_model, ModelSpec};
use psweave::synth::{amputate, default_truth, generate, Amputation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mixture(x: &[Var]) -> Var {
    // log of a two-component mixture weight w = invlogit(x0) on N(x1, e^x2)
    let w = x[0];
    let (mu, log_s) = (x[1], x[2]);
    let z = (Var::constant(0.7) - mu) * (-log_s).exp();
    let normal = Var::constant(-0.5) * z * z - log_s;
    log_sum_exp(&[w.log_inv_logit() + normal, w.log1m_inv_logit() + Var::constant(-1.0)])
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = [0.3, -0.2, 0.1];
    let (v, g) = gradient(&x, mixture);
    println!("f = {v:.6}, grad = {g:.6?}");
    let c = check_gradient(mixture, &x, 1e-5);
    println!("max relative error against central differences: {:.2e}\n", c.max_rel_error);

    for spec in [ModelSpec::original(), ModelSpec::alternative()] {
        let complete = generate(&default_truth(&spec), 40, 1)?;
        let (d, _) = amputate(&complete, &Amputation::uniform(0.25), 2)?;
        let m = build_model(&spec, &d.arm(1))?;
        let x = m.initial_point(&mut ChaCha8Rng::seed_from_u64(3), 0.5);
        let c = m.check_gradient(&x, 1e-4);
        println!(
            "{}: {} coordinates ({} latent), max relative error {:.2e}, {} flagged",
            spec.label(),
            x.len(),
            m.latents().len(),
            c.max_rel_error,
            c.flagged.len()
        );
    }
    Ok(())
}

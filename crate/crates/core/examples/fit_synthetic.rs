//! Simulates a trial from known parameters, fits both arms and prints
//! convergence diagnostics next to the generating values.
//!
//! cargo run --release --example fit_synthetic -- [n_per_arm] [iterations]

use std::time::Instant;

use psweave::diagnostics::summarize;
use psweave::model::{build_model, ModelSpec};
use psweave::sampler::{sample, SamplerConfig};
use psweave::synth::{amputate, default_truth, generate, Amputation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(150);
    let iterations = args.get(1).copied().unwrap_or(2000);

    let spec = ModelSpec::original();
    let truth = default_truth(&spec);
    let complete = generate(&truth, n, 7)?;
    let (data, shares) = amputate(&complete, &Amputation::uniform(0.2), 8)?;
    println!("missing share arm 1: {:?}", shares.arm1);

    let config = SamplerConfig { iterations, warmup: iterations / 4, seed: 11, ..SamplerConfig::default() };
    for arm in [1u8, 2] {
        let m = build_model(&spec, &data.arm(arm))?;
        let start = Instant::now();
        let chains = sample(&m, &config)?;
        println!(
            "arm {arm}: {} parameters, {} latents, {:.1}s, {} divergent",
            m.n_params(),
            m.latents().len(),
            start.elapsed().as_secs_f64(),
            chains.divergent_count()
        );
        let truth_c = m.constrained_from_params(&truth.arms[arm as usize - 1], &vec![0.0; m.latents().len()])?;
        println!("{:<18} {:>10} {:>8} {:>8} {:>22}", "param", "truth", "rhat", "ess", "hpd95");
        for (j, row) in summarize(&chains).iter().enumerate().take(m.n_params()) {
            let (lo, hi) = row.hpd95.unwrap_or((f64::NAN, f64::NAN));
            println!(
                "{:<18} {:>10.4} {:>8.3} {:>8.0} {:>10.4} {:>10.4}",
                row.param,
                truth_c[j],
                row.rhat.unwrap_or(f64::NAN),
                row.ess.unwrap_or(f64::NAN),
                lo,
                hi
            );
        }
    }
    Ok(())
}

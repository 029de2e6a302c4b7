//! Posterior cost-effectiveness of a simulated trial: marginal means by
//! Monte Carlo integration, increments, ICER, the plane at k = 55000 and
//! the acceptability curve. SVGs go to the directory given as argument.
//!
//! cargo run --release --example cost_effectiveness -- [out_dir]

use std::path::PathBuf;

use psweave::econ::{self, component_means, marginal_means, Evaluation};
use psweave::model::{build_model, ModelSpec};
use psweave::sampler::{sample, stream_rng, SamplerConfig};
use psweave::synth::{amputate, default_truth, generate, Amputation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/cost_effectiveness".into()));
    std::fs::create_dir_all(&out)?;

    let spec = ModelSpec::original();
    let truth = default_truth(&spec);
    let (data, _) = amputate(&generate(&truth, 200, 3)?, &Amputation::uniform(0.2), 4)?;
    let config = SamplerConfig { iterations: 2000, warmup: 500, seed: 5, ..SamplerConfig::default() };

    let mut arms = Vec::new();
    for arm in [1u8, 2] {
        let m = build_model(&spec, &data.arm(arm))?;
        let draws = sample(&m, &config)?;
        let summary = marginal_means(&m, &draws, 1000, 100 + arm as u64)?;
        let t = component_means(&m, &truth.arms[arm as usize - 1], &[], 200_000, &mut stream_rng(9, arm as u64));
        println!(
            "arm {arm}: true mu_e {:.4}, mu_c {:.0}; posterior mean mu_e {:.4}, mu_c {:.0}",
            t[0] + t[1],
            t[2] + t[3] + t[4],
            mean(&summary.mu_e()),
            mean(&summary.mu_c())
        );
        arms.push(summary);
    }
    let arm2 = arms.pop().expect("two arms");
    let arm1 = arms.pop().expect("two arms");
    let eval = Evaluation::new(arm1, arm2)?;
    for r in eval.rows() {
        println!("{:<8} mean {:>12.4} median {:>12.4} sd {:>12.4}", r.quantity, r.mean, r.median, r.sd);
    }
    match eval.icer {
        Some(icer) => println!("ICER {icer:.1}"),
        None => println!("ICER undefined"),
    }

    let k = 55_000.0;
    println!("P(cost-effective at k = {k}) = {:.3}", econ::sustainability(&eval.increments, k));
    let curve = econ::ceac(&eval.increments, &econ::default_k_grid())?;
    for (k, p) in curve.iter().step_by(25) {
        println!("  CEAC k = {k:>8}: {p:.3}");
    }
    std::fs::write(out.join("cep.svg"), econ::cep_svg(&eval.increments, k))?;
    std::fs::write(out.join("ceac.svg"), econ::ceac_svg(&curve))?;
    eval.write_summary(std::fs::File::create(out.join("summary.csv"))?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

//! Fits two model specifications to the same simulated trial and compares
//! them by WAIC and PSIS-LOO, variable by variable, then runs posterior
//! predictive checks for the better one.
//!
//! cargo run --release --example model_assessment -- [out_dir]

use std::path::PathBuf;

use psweave::assess::{assess_fit, ppc_replicate, ppc_svg, write_table};
use psweave::data::Variable;
use psweave::model::{build_model, ModelSpec};
use psweave::sampler::{sample, SamplerConfig};
use psweave::synth::{amputate, default_truth, generate, Amputation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/model_assessment".into()));
    std::fs::create_dir_all(&out)?;

    // data come from the original specification
    let (data, _) = amputate(&generate(&default_truth(&ModelSpec::original()), 150, 21)?, &Amputation::uniform(0.2), 22)?;
    let config = SamplerConfig { iterations: 1500, warmup: 500, seed: 23, ..SamplerConfig::default() };

    let mut fits = Vec::new();
    let mut best = None;
    for spec in [ModelSpec::original(), ModelSpec::alternative()] {
        let models = [build_model(&spec, &data.arm(1))?, build_model(&spec, &data.arm(2))?];
        let draws = [sample(&models[0], &config)?, sample(&models[1], &config)?];
        let fit = assess_fit(&spec.label(), &[(&models[0], &draws[0]), (&models[1], &draws[1])])?;
        println!("{}: WAIC {:.1}, LOOIC {:.1}", fit.model, fit.total_waic(), fit.total_looic());
        if best.as_ref().is_none_or(|(w, _, _)| fit.total_waic() < *w) {
            best = Some((fit.total_waic(), models, draws));
        }
        fits.push(fit);
    }
    println!();
    write_table(&fits, std::io::stdout())?;

    let (_, models, draws) = best.expect("two fits");
    println!("\nposterior predictive checks for {}", models[0].spec().label());
    for (a, (m, d)) in models.iter().zip(&draws).enumerate() {
        let ppc = ppc_replicate(m, d, 200, 24 + a as u64)?;
        for (k, v) in Variable::ALL.iter().enumerate() {
            let obs = &ppc.observed[k];
            let obs_mean = obs.iter().sum::<f64>() / obs.len().max(1) as f64;
            let reps = &ppc.stats[k].means;
            let p = reps.iter().filter(|&&r| r >= obs_mean).count() as f64 / reps.len() as f64;
            println!("  arm {} {:<7} observed mean {:>10.3}, P(replicate >= observed) {:.2}", a + 1, v.name(), obs_mean, p);
            std::fs::write(out.join(format!("ppc_{}_arm{}.svg", v.name(), a + 1)), ppc_svg(&ppc, *v))?;
        }
    }
    println!("\nplots in {}", out.display());
    Ok(())
}

//! Runs NUTS on a user-defined density and reads the chains the way one
//! would for any model: split R-hat, effective sample size, HPD intervals,
//! divergences and a trace/density plot.
//!
//! cargo run --release --example convergence_diagnostics -- [out_dir]

use std::path::PathBuf;

use psweave::diagnostics::{summarize, trace_density_svg, write_table};
use psweave::diff::{gradient_into, Var};
use psweave::sampler::{sample, LogDensity, SamplerConfig};

/// A banana-shaped density, with a positive scale parameter sampled on the
/// log scale.
struct Banana {
    curvature: f64,
}

impl LogDensity for Banana {
    fn dim(&self) -> usize {
        3
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let b = self.curvature;
        gradient_into(x, grad, |v| {
            let (a, y, log_s) = (v[0], v[1], v[2]);
            let bend = y - (a * a - Var::constant(1.0)) * b;
            let s = log_s.exp();
            // scale ~ Gamma(2, 1) plus the log-scale Jacobian
            let prior_s = log_s - s + log_s;
            Var::constant(-0.5) * a * a - Var::constant(0.5) * bend * bend / (s * s) - log_s + prior_s
        })
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0], x[1], x[2].exp()]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["a".into(), "y".into(), "scale".into()]
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/convergence_diagnostics".into()));
    std::fs::create_dir_all(&out)?;

    for (curvature, iterations) in [(0.5, 2000), (3.0, 200)] {
        let config = SamplerConfig { chains: 4, iterations, warmup: iterations / 2, seed: 17, ..SamplerConfig::default() };
        let chains = sample(&Banana { curvature }, &config)?;
        println!(
            "curvature {curvature}, {} x {iterations}: {} divergent, step sizes {:.3?}",
            config.chains,
            chains.divergent_count(),
            chains.chains.iter().map(|c| c.step_size).collect::<Vec<_>>()
        );
        let rows = summarize(&chains);
        write_table(&rows, std::io::stdout())?;
        let unconverged: Vec<&str> =
            rows.iter().filter(|r| r.rhat.is_none_or(|v| v > 1.01)).map(|r| r.param.as_str()).collect();
        println!("R-hat above 1.01: {unconverged:?}\n");
        std::fs::write(out.join(format!("banana_{curvature}.svg")), trace_density_svg(&chains, &["a", "y", "scale"])?)?;
    }
    println!("plots in {}", out.display());
    Ok(())
}

//! The configuration-driven pipeline behind the `psweave` binary: one JSON
//! config, then simulate, fit, diagnose, assess, evaluate and an index page.
//! Every step is reproducible from the config seed.
//!
//! cargo run --release --example config_pipeline -- [out_dir]

use std::path::PathBuf;

use psweave::cli::{self, RunConfig};
use psweave::sampler::SamplerConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/config_pipeline".into()));
    std::fs::create_dir_all(&out)?;

    let mut config = RunConfig {
        seed: 2024,
        sampler: SamplerConfig { iterations: 1000, warmup: 300, ..SamplerConfig::default() },
        ppc_replicates: 50,
        ..RunConfig::default()
    };
    config.simulate.n_per_arm = 120;
    // paths inside a config file are relative to the file itself
    config.out = PathBuf::from("run");
    let path = out.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config)?)?;

    let config = RunConfig::load(&path)?;
    println!("config {} writes to {}", path.display(), config.out.display());
    let written = match cli::report(&config) {
        Ok(w) => w,
        Err(e) => {
            // the binary prints the same line and exits with e.exit_code()
            eprintln!("{}", e.line());
            std::process::exit(e.exit_code());
        }
    };
    for p in written {
        println!("  {}", p.display());
    }
    println!("\n{}", std::fs::read_to_string(config.out.join("evaluate/summary.csv"))?);
    Ok(())
}

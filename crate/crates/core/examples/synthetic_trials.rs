//! Generates a complete two-arm trial from the default generating values,
//! then removes cells completely at random and with missingness driven by
//! arm and covariates. Writes both versions as CSV.
//!
//! cargo run --example synthetic_trials -- [out_dir]

use std::path::PathBuf;

use psweave::data::{missingness_patterns, Variable};
use psweave::model::ModelSpec;
use psweave::synth::{amputate, default_truth, generate, Amputation, Truth};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/synthetic_trials".into()));
    std::fs::create_dir_all(&out)?;

    let mut truth = default_truth(&ModelSpec::original());
    // two covariates: small effects on efficacy and costs
    truth.n_covariates = 2;
    for p in truth.arms.iter_mut() {
        p.pfs_mean.extend([0.03, -0.02]);
        p.pps_zero.extend([0.2, 0.0]);
        p.pps_mean.extend([0.1, 0.0]);
        for c in p.costs.iter_mut() {
            c.zero.extend([0.0, 0.3]);
            c.mean.extend([0.15, 0.1]);
        }
    }
    truth.save(&out.join("truth.json"))?;
    let reloaded = Truth::load(&out.join("truth.json"))?;
    assert_eq!(reloaded.spec, truth.spec);

    let complete = generate(&truth, 250, 42)?;
    complete.write_csv(std::fs::File::create(out.join("complete.csv"))?)?;
    for arm in [1u8, 2] {
        let a = complete.arm(arm);
        let zeros = |k: usize| a.records.iter().filter(|r| r.outcomes[k] == Some(0.0)).count() as f64 / a.records.len() as f64;
        println!(
            "arm {arm}: {} patients, structural zeros e_pps {:.2}, c_drug {:.2}, c_hos {:.2}, c_ae {:.2}",
            a.records.len(),
            zeros(1),
            zeros(2),
            zeros(3),
            zeros(4)
        );
    }

    let mcar = Amputation::uniform(0.2);
    let (d, shares) = amputate(&complete, &mcar, 43)?;
    d.write_csv(std::fs::File::create(out.join("mcar.csv"))?)?;
    println!("\ncompletely at random, target 0.20");
    print_shares(&shares.arm1, &shares.arm2);

    let mar = Amputation {
        rates: [0.1, 0.3, 0.2, 0.2, 0.2],
        arm_effect: 0.8,
        covariate_effects: vec![1.0, -0.5],
    };
    let (d, shares) = amputate(&complete, &mar, 44)?;
    d.write_csv(std::fs::File::create(out.join("mar.csv"))?)?;
    println!("\ndepending on arm and covariates");
    print_shares(&shares.arm1, &shares.arm2);

    println!("\nmissingness patterns");
    missingness_patterns(&d).write_csv(std::io::stdout())?;
    println!("\nwritten to {}", out.display());
    Ok(())
}

fn print_shares(arm1: &[f64; 5], arm2: &[f64; 5]) {
    for (k, v) in Variable::ALL.iter().enumerate() {
        println!("  {:<7} arm 1 {:.3}  arm 2 {:.3}", v.name(), arm1[k], arm2[k]);
    }
}

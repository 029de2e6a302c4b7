//! Turns long-format utility series and per-patient costs into the wide
//! outcome table the models consume: quality-adjusted survival before and
//! after progression for each patient, with costs joined by id.
//!
//! cargo run --example qas_derivation

use psweave::data::Variable;
use psweave::qas::{auc_qaly, derive_dataset, parse_cost_csv, parse_series_csv, partition_qas, qas};

const SERIES: &str = "\
id,arm,time_years,utility,survival_weight,progressed,dead
p1,1,0.0,0.80,1.00,0,0
p1,1,0.5,0.78,0.95,0,0
p1,1,1.0,0.60,0.90,1,0
p1,1,1.5,0.45,0.80,0,0
p2,1,0.0,0.70,1.00,0,0
p2,1,0.5,NA,0.97,0,0
p2,1,1.0,0.65,0.93,0,0
p3,2,0.0,0.85,1.00,0,0
p3,2,0.5,0.82,0.98,0,0
p3,2,1.0,0.80,0.96,0,0
p3,2,1.5,0.55,0.90,1,0
p3,2,2.0,0.00,0.85,0,1
";

const COSTS: &str = "\
id,c_drug,c_hos,c_ae
p1,1800,420,0
p2,NA,310,75
p3,2600,0,120
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let series = parse_series_csv(SERIES.as_bytes())?;
    for p in &series {
        let (pre, post) = partition_qas(&p.series, 1.0)?;
        println!(
            "{} arm {}: auc {:.4}, qas {:.4} = pre {:.4} + post {:.4}{}",
            p.id,
            p.arm,
            auc_qaly(&p.series, 1.0)?,
            qas(&p.series, 1.0)?,
            pre,
            post,
            if p.missing_pre || p.missing_post { " (utility missing)" } else { "" }
        );
    }

    let costs = parse_cost_csv(COSTS.as_bytes())?;
    let d = derive_dataset(&series, &costs, 1.0)?;
    println!();
    print!("{:<4}", "id");
    for v in Variable::ALL {
        print!("{:>10}", v.name());
    }
    println!();
    for r in d.records() {
        print!("{:<4}", r.id);
        for o in r.outcomes {
            match o {
                Some(x) => print!("{x:>10.3}"),
                None => print!("{:>10}", "NA"),
            }
        }
        println!();
    }
    Ok(())
}

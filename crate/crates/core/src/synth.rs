//! Synthetic trials from known parameters and MAR amputation.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, PatientRecord, TrialDataset, Variable};
use crate::diff::inv_logit;
use crate::model::{CostFamily, ModelSpec, PpsFamily};
use crate::model::{simulate_record, ArmParams, CostParams};
use crate::sampler::stream_rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("arm {arm}: {message}")]
    Truth { arm: u8, message: String },
    #[error("missingness rate {0} outside [0, 1)")]
    Rate(f64),
    #[error("{0} covariate effects given, dataset has {1} covariates")]
    CovariateEffects(usize, usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("truth file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Generating parameters of a synthetic trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: ModelSpec,
    /// Arm 1 and arm 2 parameters.
    pub arms: [ArmParams; 2],
    /// Number of standard-normal covariates; every coefficient vector then
    /// carries that many trailing covariate coefficients.
    #[serde(default)]
    pub n_covariates: usize,
}

impl Truth {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (a, p) in self.arms.iter().enumerate() {
            let arm = a as u8 + 1;
            let bad = |message: String| SynthError::Truth { arm, message };
            let k = self.n_covariates;
            let lens = [
                ("pfs_mean", p.pfs_mean.len(), 1),
                ("pps_zero", p.pps_zero.len(), 2),
                ("pps_mean", p.pps_mean.len(), 2),
                ("drug zero", p.costs[0].zero.len(), 3),
                ("drug mean", p.costs[0].mean.len(), 3),
                ("hos zero", p.costs[1].zero.len(), 4),
                ("hos mean", p.costs[1].mean.len(), 4),
                ("ae zero", p.costs[2].zero.len(), 5),
                ("ae mean", p.costs[2].mean.len(), 5),
            ];
            for (name, found, base) in lens {
                if found != base + k {
                    return Err(bad(format!("{name} has {found} coefficients, expected {}", base + k)));
                }
            }
            let sds = [p.pfs_sd, p.costs[0].sd, p.costs[1].sd, p.costs[2].sd];
            if sds.iter().any(|s| !(*s > 0.0 && *s <= self.spec.sd_upper)) {
                return Err(bad(format!("standard deviations must lie in (0, {}]", self.spec.sd_upper)));
            }
            let needs_anc = self.spec.family_e_pps != PpsFamily::Exponential;
            match p.pps_ancillary {
                Some(a) if needs_anc && !(a > 0.0 && a <= self.spec.sd_upper) => {
                    return Err(bad(format!("e_pps ancillary {a} out of range")))
                }
                None if needs_anc => return Err(bad("e_pps family needs an ancillary parameter".into())),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Truth, SynthError> {
        let text = std::fs::read_to_string(path)?;
        let t: Truth = serde_json::from_str(&text)?;
        t.validate()?;
        Ok(t)
    }
}

/// Parameters of a plausible two-arm trial under `spec`, arm 2 more
/// effective and more costly than arm 1.
pub fn default_truth(spec: &ModelSpec) -> Truth {
    let arm = |pfs: f64, drug: f64| {
        let cost = |zero: Vec<f64>, mean: Vec<f64>, log_sd: f64, typical_log_mean: f64| {
            let sd = match spec.family_costs {
                CostFamily::Lognormal => log_sd,
                CostFamily::Gamma => log_sd * typical_log_mean.exp(),
            };
            CostParams { zero, mean, sd }
        };
        ArmParams {
            pfs_mean: vec![pfs],
            pfs_sd: 0.15,
            pps_zero: vec![-1.0, 0.8],
            pps_mean: vec![-1.2, 0.8],
            pps_ancillary: match spec.family_e_pps {
                PpsFamily::Exponential => None,
                PpsFamily::Weibull => Some(1.5),
                PpsFamily::Normal => Some(0.3),
            },
            costs: [
                cost(vec![-2.0, 0.5, 0.3], vec![drug, 0.5, 0.3], 0.5, drug + 0.4),
                cost(vec![-1.5, 0.3, 0.2, 0.05], vec![5.0, 0.4, 0.3, 0.1], 0.6, 6.0),
                cost(vec![-0.5, 0.2, 0.2, 0.02, 0.02], vec![4.0, 0.3, 0.2, 0.05, 0.05], 0.7, 4.9),
            ],
        }
    };
    Truth { spec: spec.clone(), arms: [arm(0.45, 7.5), arm(0.55, 8.2)], n_covariates: 0 }
}

/// Draws `n_per_arm` complete records per arm; deterministic per seed.
pub fn generate(truth: &Truth, n_per_arm: usize, seed: u64) -> Result<TrialDataset, SynthError> {
    truth.validate()?;
    let mut records = Vec::with_capacity(2 * n_per_arm);
    for (a, p) in truth.arms.iter().enumerate() {
        let mut rng = stream_rng(seed, a as u64);
        for i in 0..n_per_arm {
            let cov: Vec<f64> = (0..truth.n_covariates).map(|_| rng.sample(StandardNormal)).collect();
            let v = simulate_record(&truth.spec, p, 0.0, &cov, &mut rng);
            records.push(PatientRecord {
                id: format!("a{}_{:05}", a + 1, i + 1),
                arm: a as u8 + 1,
                outcomes: v.map(Some),
                covariates: cov,
            });
        }
    }
    let names = (1..=truth.n_covariates).map(|j| format!("x{j}")).collect();
    Ok(TrialDataset::new(records, names)?)
}

/// MAR missingness: cell `(i, v)` goes missing with probability
/// `logit⁻¹(logit(rate_v) + arm_effect·[arm = 2] + Σ covariate_effects·x_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Amputation {
    /// Base rates for e_pfs, e_pps, c_drug, c_hos, c_ae.
    pub rates: [f64; 5],
    #[serde(default)]
    pub arm_effect: f64,
    #[serde(default)]
    pub covariate_effects: Vec<f64>,
}

impl Amputation {
    pub fn uniform(rate: f64) -> Amputation {
        Amputation { rates: [rate; 5], arm_effect: 0.0, covariate_effects: Vec::new() }
    }

    fn probability(&self, v: usize, r: &PatientRecord) -> f64 {
        let rate = self.rates[v];
        if rate == 0.0 {
            return 0.0;
        }
        let mut eta = (rate / (1.0 - rate)).ln();
        if r.arm == 2 {
            eta += self.arm_effect;
        }
        eta += self.covariate_effects.iter().zip(&r.covariates).map(|(b, x)| b * x).sum::<f64>();
        inv_logit(eta)
    }
}

/// Realized share of missing cells per arm and variable.
#[derive(Clone, Debug, PartialEq)]
pub struct MissingShares {
    pub arm1: [f64; 5],
    pub arm2: [f64; 5],
}

/// Removes cells under `amp`; missingness depends only on arm and
/// covariates, never on outcome values.
pub fn amputate(d: &TrialDataset, amp: &Amputation, seed: u64) -> Result<(TrialDataset, MissingShares), SynthError> {
    if let Some(r) = amp.rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(SynthError::Rate(*r));
    }
    if amp.covariate_effects.len() > d.covariate_names().len() {
        return Err(SynthError::CovariateEffects(amp.covariate_effects.len(), d.covariate_names().len()));
    }
    let mut rng: ChaCha8Rng = stream_rng(seed, 0);
    let out = d.map_records(|r| {
        let mut r = r.clone();
        for v in 0..5 {
            // always draw, so each cell's uniform is fixed by its position
            let u: f64 = rng.random();
            if u < amp.probability(v, &r) {
                r.outcomes[v] = None;
            }
        }
        r
    })?;
    let shares = |arm: u8| {
        let recs: Vec<&PatientRecord> = out.records().iter().filter(|r| r.arm == arm).collect();
        Variable::ALL.map(|v| recs.iter().filter(|r| r.get(v).is_none()).count() as f64 / recs.len() as f64)
    };
    Ok((out.clone(), MissingShares { arm1: shares(1), arm2: shares(2) }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{is_structural_zero, summarize_values};
    use crate::model::family::{family_lpdf, sample, Family};
    use crate::quadrature::integrate;
    use rand::SeedableRng;

    #[test]
    fn forced_zero_hurdle() {
        let mut t = default_truth(&ModelSpec::original());
        t.arms[0].pps_zero = vec![60.0, 0.0];
        let d = generate(&t, 200, 1).unwrap();
        assert!(d.arm(1).observed(Variable::EPps).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_share_and_pfs_mean() {
        let t = default_truth(&ModelSpec::original());
        let n = 10000;
        let d = generate(&t, n, 2).unwrap();
        let a = d.arm(1);
        let pfs = a.observed(Variable::EPfs);
        let pps = a.observed(Variable::EPps);
        let p = &t.arms[0];
        let mean_pi = pfs.iter().map(|e| inv_logit(p.pps_zero[0] + p.pps_zero[1] * e)).sum::<f64>() / n as f64;
        let share = pps.iter().filter(|&&x| is_structural_zero(x)).count() as f64 / n as f64;
        let se = (mean_pi * (1.0 - mean_pi) / n as f64).sqrt();
        assert!((share - mean_pi).abs() < 3.0 * se, "{share} {mean_pi}");
        let (m, sd) = summarize_values(&pfs);
        assert!((m.unwrap() - p.pfs_mean[0]).abs() < 3.0 * sd.unwrap() / (n as f64).sqrt());
        assert_eq!(d, generate(&t, n, 2).unwrap());
    }

    #[test]
    fn truth_validation() {
        let mut t = default_truth(&ModelSpec::alternative());
        t.validate().unwrap();
        t.arms[1].pps_ancillary = None;
        assert!(matches!(t.validate(), Err(SynthError::Truth { arm: 2, .. })));
        let mut t = default_truth(&ModelSpec::original());
        t.arms[0].costs[1].mean.pop();
        assert!(matches!(generate(&t, 5, 1), Err(SynthError::Truth { arm: 1, .. })));
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        let t = default_truth(&ModelSpec::alternative());
        t.save(&path).unwrap();
        assert_eq!(Truth::load(&path).unwrap(), t);
    }

    #[test]
    fn amputation_rates() {
        let t = default_truth(&ModelSpec::original());
        let d = generate(&t, 1000, 3).unwrap();
        let (same, shares) = amputate(&d, &Amputation::uniform(0.0), 1).unwrap();
        assert_eq!(same, d);
        assert_eq!(shares.arm1, [0.0; 5]);
        let mut amp = Amputation::uniform(0.0);
        amp.rates[0] = 0.2;
        let (_, s) = amputate(&d, &amp, 4).unwrap();
        let se = (0.2f64 * 0.8 / 1000.0).sqrt();
        assert!((s.arm1[0] - 0.2).abs() < 3.0 * se && (s.arm2[0] - 0.2).abs() < 3.0 * se);
        assert_eq!(s.arm1[1], 0.0);
        amp.arm_effect = 1.5;
        let (_, s) = amputate(&d, &amp, 4).unwrap();
        let p2 = inv_logit((0.25f64).ln() + 1.5);
        assert!((s.arm2[0] - p2).abs() < 3.0 * (p2 * (1.0 - p2) / 1000.0).sqrt(), "{}", s.arm2[0]);
        assert!(s.arm2[0] > s.arm1[0] + 0.1);
        assert!(matches!(amputate(&d, &Amputation::uniform(1.0), 1), Err(SynthError::Rate(_))));
    }

    #[test]
    fn covariate_dependent_missingness() {
        let mut t = default_truth(&ModelSpec::original());
        t.n_covariates = 1;
        for p in t.arms.iter_mut() {
            p.pfs_mean.push(0.05);
            p.pps_zero.push(0.0);
            p.pps_mean.push(0.0);
            for c in p.costs.iter_mut() {
                c.zero.push(0.0);
                c.mean.push(0.1);
            }
        }
        let d = generate(&t, 2000, 5).unwrap();
        let amp = Amputation { rates: [0.3; 5], arm_effect: 0.0, covariate_effects: vec![2.0] };
        let (a, _) = amputate(&d, &amp, 6).unwrap();
        let miss_hi = a.records().iter().filter(|r| r.covariates[0] > 0.0 && r.outcomes[3].is_none()).count();
        let miss_lo = a.records().iter().filter(|r| r.covariates[0] <= 0.0 && r.outcomes[3].is_none()).count();
        assert!(miss_hi > 2 * miss_lo);
    }

    /// Kolmogorov–Smirnov distance between samples and the distribution
    /// whose density is `exp(family_lpdf)`, integrated numerically.
    fn ks_against_density(family: Family, eta: f64, anc: f64, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs: Vec<f64> = (0..n).map(|_| sample(family, eta, anc, &mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let loc = if family.log_link() { eta.exp() } else { eta };
        let dens = |x: f64| family_lpdf(family, x, loc, anc).exp();
        let lower = if family.is_positive() { 0.0 } else { xs[0] - 50.0 * anc };
        let mut cdf = integrate(dens, lower, xs[0], 1e-12, 1e-14);
        let mut d: f64 = 0.0;
        for i in 0..n {
            if i > 0 {
                cdf += integrate(dens, xs[i - 1], xs[i], 1e-12, 1e-15);
            }
            d = d.max((cdf - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - cdf).abs());
        }
        d
    }

    #[test]
    fn samplers_match_densities() {
        let n = 10000;
        let critical = 1.628 / (n as f64).sqrt();
        let cases = [
            (Family::Gumbel, 0.5, 0.2),
            (Family::Logistic, 0.5, 0.2),
            (Family::Normal, 0.5, 0.2),
            (Family::Exponential, -0.7, 1.0),
            (Family::Weibull, -0.7, 1.5),
            (Family::TruncatedNormal, -0.7, 0.4),
            (Family::Lognormal, 6.0, 0.6),
            (Family::Gamma, 6.0, 300.0),
        ];
        for (k, (f, eta, anc)) in cases.into_iter().enumerate() {
            let d = ks_against_density(f, eta, anc, n, 10 + k as u64);
            assert!(d < critical, "{}: {d}", f.name());
        }
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::PatientRecord;
use crate::quadrature::{integrate_real_line, integrate_upper};

fn record(id: &str, outcomes: [Option<f64>; 5]) -> PatientRecord {
    PatientRecord { id: id.into(), arm: 1, outcomes, covariates: Vec::new() }
}

fn arm(records: Vec<PatientRecord>) -> ArmData {
    ArmData { arm: 1, records, covariate_names: Vec::new() }
}

fn full(id: &str, v: [f64; 5]) -> PatientRecord {
    record(id, v.map(Some))
}

fn truth(spec: &ModelSpec) -> ArmParams {
    let cost = |zero: Vec<f64>, mean: Vec<f64>, sd_log: f64| {
        let m0 = mean[0];
        CostParams {
            zero,
            mean,
            sd: match spec.family_costs {
                CostFamily::Lognormal => sd_log,
                CostFamily::Gamma => sd_log * m0.exp(),
            },
        }
    };
    ArmParams {
        pfs_mean: vec![0.5],
        pfs_sd: 0.2,
        pps_zero: vec![-1.0, 0.5],
        pps_mean: vec![-0.5, 0.3],
        pps_ancillary: match spec.family_e_pps {
            PpsFamily::Exponential => None,
            PpsFamily::Weibull => Some(1.5),
            PpsFamily::Normal => Some(0.5),
        },
        costs: [
            cost(vec![-0.5, 0.2, 0.1], vec![7.0, 0.1, 0.1], 0.8),
            cost(vec![-1.0, 0.1, 0.1, 0.05], vec![6.0, 0.2, 0.1, 0.05], 0.6),
            cost(vec![0.0, 0.1, 0.1, 0.02, 0.02], vec![5.0, 0.1, 0.1, 0.02, 0.02], 0.7),
        ],
    }
}

/// Small simulated arm with a mix of missing patterns.
fn small_arm(spec: &ModelSpec, seed: u64) -> ArmData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = truth(spec);
    let patterns: [[bool; 5]; 8] = [
        [true; 5],
        [true; 5],
        [false, true, true, true, true],
        [true, false, true, true, true],
        [true, true, false, false, true],
        [true, false, false, true, false],
        [false, false, true, true, true],
        [true, true, true, true, false],
    ];
    let records = patterns
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            let v = simulate_record(spec, &p, 0.0, &[], &mut rng);
            let mut out = [None; 5];
            for k in 0..5 {
                if obs[k] {
                    out[k] = Some(v[k]);
                }
            }
            record(&format!("r{i}"), out)
        })
        .collect();
    arm(records)
}

fn complete_arm(n: usize) -> ArmData {
    let spec = ModelSpec::original();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = truth(&spec);
    arm((0..n).map(|i| full(&format!("p{i}"), simulate_record(&spec, &p, 0.0, &[], &mut rng))).collect())
}

#[test]
fn dimension_counts_parameters_and_latents() {
    let spec = ModelSpec::original();
    let mut a = complete_arm(150);
    let m = build_model(&spec, &a).unwrap();
    assert_eq!(m.n_params(), 33);
    assert_eq!(m.dimension(), 33);
    for r in a.records.iter_mut().take(5) {
        r.outcomes[0] = None;
    }
    let m = build_model(&spec, &a).unwrap();
    assert_eq!(m.dimension(), 38);
    assert_eq!(m.latents().len(), 5);
    let normal = ModelSpec { family_e_pps: PpsFamily::Normal, ..spec };
    assert_eq!(build_model(&normal, &a).unwrap().n_params(), 34);
}

#[test]
fn build_errors() {
    let spec = ModelSpec::original();
    assert_eq!(build_model(&spec, &arm(Vec::new())).unwrap_err(), ModelError::EmptyArm(1));
    let with_cov = ModelSpec { include_covariates: true, ..spec };
    assert_eq!(build_model(&with_cov, &complete_arm(3)).unwrap_err(), ModelError::NoCovariates);
    let bad = ModelSpec { sd_upper: -1.0, ..ModelSpec::original() };
    assert!(matches!(build_model(&bad, &complete_arm(3)), Err(ModelError::Spec(_))));
}

#[test]
fn names_and_index_map() {
    let m = build_model(&ModelSpec::original(), &small_arm(&ModelSpec::original(), 2)).unwrap();
    let names = m.names();
    assert_eq!(names[0], "alpha_pfs_0");
    assert_eq!(names[1], "sigma_pfs");
    assert!(names.contains(&"beta_hos_3".to_string()));
    assert!(names.contains(&"delta_ae_4".to_string()));
    assert!(names.contains(&"z_e_pfs_r2".to_string()));
    assert!(names.contains(&"z_c_hos_r4".to_string()));
    let mut buf = Vec::new();
    m.write_index_map(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("index,name,kind\n0,alpha_pfs_0,regression\n1,sigma_pfs,bounded_positive\n"));
    assert!(text.contains("z_e_pps_r3,latent_positive"));
}

#[test]
fn hurdle_probability_examples() {
    assert_eq!(hurdle_logit_prob(&[0.0, 0.0], &[1.0, 0.7]), 0.5);
    let p = hurdle_logit_prob(&[1.0, 2.0], &[1.0, 0.5]);
    assert!((p - 0.880_797_077_977_882_3).abs() < 1e-15);
    let p = hurdle_logit_prob(&[1e6, 0.0], &[1.0, 0.0]);
    assert_eq!(p, 1.0);
    let p = hurdle_logit_prob(&[-1e6, 0.0], &[1.0, 0.0]);
    assert!(p >= 0.0 && p < 1e-300);
}

#[test]
fn hospital_predictor_example() {
    let regs = base_regressors(Variable::CHos, 1.0, 2.0, 1f64.exp(), 0.0);
    let eta = linear_predictor(&[1.0, 0.1, 0.2, 0.3], &regs);
    assert!((eta - 1.8).abs() < 1e-15);
    let regs = base_regressors(Variable::CAe, 1.0, 2.0, 0.0, 5.0);
    assert_eq!(regs[3], 0.0);
    assert_eq!(regs[4], 5f64.ln());
    assert_eq!(linear_predictor(&[3.0, 0.0, 0.0], &[1.0, 9.0, 4.0]), 3.0);
}

#[test]
fn constrain_round_trip() {
    let spec = ModelSpec::alternative();
    let m = build_model(&spec, &small_arm(&spec, 4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..m.dimension()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let c = m.constrain(&x);
    for &i in &m.layout().bounded {
        assert!(c[i] > 0.0 && c[i] < spec.sd_upper);
    }
    let back = m.unconstrain(&c);
    for (a, b) in x.iter().zip(&back) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    let p = m.arm_params(&c);
    let latents: Vec<f64> = c[m.n_params()..].to_vec();
    assert_eq!(m.constrained_from_params(&p, &latents).unwrap(), c);
}

#[test]
fn bounded_transform_jacobian_matches_finite_difference() {
    for &u in &[-8.0, -2.0, -0.3, 0.0, 0.7, 3.0, 9.0] {
        let h = 1e-6;
        let fd = (bounded_transform(u + h, 10_000.0).0 - bounded_transform(u - h, 10_000.0).0) / (2.0 * h);
        let (_, lj) = bounded_transform(u, 10_000.0);
        assert!((fd.ln() - lj).abs() < 1e-6, "u={u}: {} vs {lj}", fd.ln());
    }
}

/// Regression priors and bounded-parameter Jacobians, computed directly.
fn prior_and_jacobian(m: &ModelInstance, c: &[f64]) -> f64 {
    let spec = m.spec();
    let sd = spec.prior_sd_regression;
    let mut lp = 0.0;
    for &i in &m.layout().regression {
        lp += -0.5 * (c[i] / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    }
    for &i in &m.layout().bounded {
        let r = c[i] / spec.sd_upper;
        // Uniform(0, U) density times |dσ/du| = U r (1 - r)
        lp += -spec.sd_upper.ln() + (spec.sd_upper * r * (1.0 - r)).ln();
    }
    lp
}

/// Log-likelihood of one fully observed record from the natural-parameter
/// densities.
fn record_loglik(spec: &ModelSpec, p: &ArmParams, v: [f64; 5]) -> f64 {
    let lin = |c: &[f64], r: &[f64]| c.iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
    let logit_inv = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut lp = family_lpdf(spec.family_e_pfs.family(), v[0], p.pfs_mean[0], p.pfs_sd);
    let pi = logit_inv(lin(&p.pps_zero, &[1.0, v[0]]));
    let pps_fam = spec.family_e_pps.family();
    lp += if v[1] == 0.0 {
        pi.ln()
    } else {
        (1.0 - pi).ln()
            + family_lpdf(pps_fam, v[1], lin(&p.pps_mean, &[1.0, v[0]]).exp(), p.pps_ancillary.unwrap_or(1.0))
    };
    let lc = |c: f64| if c == 0.0 { 0.0 } else { c.ln() };
    let regs: [Vec<f64>; 3] = [
        vec![1.0, v[0], v[1]],
        vec![1.0, v[0], v[1], lc(v[2])],
        vec![1.0, v[0], v[1], lc(v[2]), lc(v[3])],
    ];
    for k in 0..3 {
        let c = &p.costs[k];
        let pi = logit_inv(lin(&c.zero, &regs[k]));
        let eta = lin(&c.mean, &regs[k]);
        lp += if v[k + 2] == 0.0 {
            pi.ln()
        } else {
            let location = match spec.family_costs {
                CostFamily::Lognormal => eta,
                CostFamily::Gamma => eta.exp(),
            };
            (1.0 - pi).ln() + family_lpdf(spec.family_costs.family(), v[k + 2], location, c.sd)
        };
    }
    lp
}

#[test]
fn single_record_matches_term_by_term_oracle() {
    for spec in ModelSpec::all_combinations() {
        for v in [[0.4, 0.3, 900.0, 300.0, 0.0], [-0.1, 0.0, 0.0, 120.0, 40.0]] {
            let a = arm(vec![full("a", v)]);
            let m = build_model(&spec, &a).unwrap();
            let p = truth(&spec);
            let c = m.constrained_from_params(&p, &[]).unwrap();
            let x = m.unconstrain(&c);
            let lp = m.log_posterior(&x);
            assert!(!lp.diverged);
            let expected = prior_and_jacobian(&m, &c) + record_loglik(&spec, &p, v);
            assert!(
                (lp.value - expected).abs() < 1e-9 * expected.abs().max(1.0),
                "{}: {} vs {}",
                spec.label(),
                lp.value,
                expected
            );
            assert!((m.log_posterior_value(&x) - lp.value).abs() < 1e-12 * lp.value.abs().max(1.0));
        }
    }
}

#[test]
fn missing_pps_approaches_zero_branch_as_pi_goes_to_one() {
    let spec = ModelSpec::original();
    let a = arm(vec![record("a", [Some(0.4), None, Some(900.0), Some(300.0), Some(50.0)])]);
    let m = build_model(&spec, &a).unwrap();
    let mut p = truth(&spec);
    p.pps_zero = vec![30.0, 0.0];
    let z = -0.7f64;
    let c = m.constrained_from_params(&p, &[z.exp()]).unwrap();
    let x = m.unconstrain(&c);
    let value = m.log_posterior(&x).value;
    // the latent's positive-part density is carried in both branches
    let eta = p.pps_mean[0] + p.pps_mean[1] * 0.4;
    let g = family_lpdf(Family::Exponential, z.exp(), eta.exp(), 1.0) + z;
    let zero_branch = record_loglik(&spec, &p, [0.4, 0.0, 900.0, 300.0, 50.0]);
    let expected = prior_and_jacobian(&m, &c) + g + zero_branch;
    assert!((value - expected).abs() < 1e-9, "{value} vs {expected}");
}

#[test]
fn marginalization_integrates_to_hurdle_mixture() {
    let spec = ModelSpec::original();
    let e_pfs = 0.4;
    let costs = [900.0, 300.0, 50.0];
    let a = arm(vec![record("a", [Some(e_pfs), None, Some(costs[0]), Some(costs[1]), Some(costs[2])])]);
    let m = build_model(&spec, &a).unwrap();
    let p = truth(&spec);
    let c0 = m.constrained_from_params(&p, &[1.0]).unwrap();
    let base = prior_and_jacobian(&m, &c0);
    let x0 = m.unconstrain(&c0);
    let zi = m.latents()[0].index;
    let lhs = integrate_real_line(
        |z| {
            let mut x = x0.clone();
            x[zi] = z;
            (m.log_posterior_value(&x) - base).exp()
        },
        1e-11,
        0.0,
    );
    let lik = |y: f64| record_loglik(&spec, &p, [e_pfs, y, costs[0], costs[1], costs[2]]).exp();
    let zero = lik(0.0);
    let positive = integrate_upper(lik, 0.0, 1e-11, 0.0);
    let rhs = zero + positive;
    assert!(((lhs - rhs) / rhs).abs() < 1e-6, "{lhs} vs {rhs}");
}

#[test]
fn latent_at_true_value_reproduces_observed_terms() {
    let spec = ModelSpec::original();
    let v = [0.35, 0.8, 700.0, 200.0, 30.0];
    let observed = build_model(&spec, &arm(vec![full("a", v)])).unwrap();
    let p = truth(&spec);
    let c = observed.constrained_from_params(&p, &[]).unwrap();
    let obs_leaf = &observed.record_branch_terms(&observed.unconstrain(&c))[0][0];

    let mut pfs_missing = [Some(v[0]), Some(v[1]), Some(v[2]), Some(v[3]), Some(v[4])];
    pfs_missing[0] = None;
    let m = build_model(&spec, &arm(vec![record("a", pfs_missing)])).unwrap();
    let x = m.unconstrain(&m.constrained_from_params(&p, &[v[0]]).unwrap());
    let leaf = &m.record_branch_terms(&x)[0][0];
    for j in 0..5 {
        assert!((leaf[j] - obs_leaf[j]).abs() < 1e-10, "term {j}: {} vs {}", leaf[j], obs_leaf[j]);
    }

    for k in 1..5 {
        let mut o = v.map(Some);
        o[k] = None;
        let m = build_model(&spec, &arm(vec![record("a", o)])).unwrap();
        let x = m.unconstrain(&m.constrained_from_params(&p, &[v[k]]).unwrap());
        let leaves = &m.record_branch_terms(&x)[0];
        assert_eq!(leaves.len(), 2);
        let positive = &leaves[1];
        for j in 0..5 {
            let expected = if j == k { obs_leaf[j] + v[k].ln() } else { obs_leaf[j] };
            assert!((positive[j] - expected).abs() < 1e-10, "var {k} term {j}: {} vs {expected}", positive[j]);
        }
    }
}

#[test]
fn branches_multiply_with_missing_hurdle_cells() {
    let spec = ModelSpec::original();
    let m = build_model(&spec, &small_arm(&spec, 3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = m.initial_point(&mut rng, 0.5);
    let terms = m.record_branch_terms(&x);
    let missing_hurdles: Vec<usize> = m
        .arm()
        .records
        .iter()
        .map(|r| Variable::ALL.iter().filter(|v| v.is_hurdle() && r.get(**v).is_none()).count())
        .collect();
    for (t, k) in terms.iter().zip(missing_hurdles) {
        assert_eq!(t.len(), 1 << k);
    }
}

/// Data-informed centre plus U(-1, 1) jitter, U(-0.2, 0.2) on slopes.
fn random_point(m: &ModelInstance, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = m.initial_point(rng, 0.0);
    for (i, v) in x.iter_mut().enumerate() {
        let w = if m.layout().is_slope(i) { 0.2 } else { 1.0 };
        *v += rng.random_range(-w..w);
    }
    x
}

#[test]
fn gradients_match_finite_differences() {
    for (k, spec) in ModelSpec::all_combinations().into_iter().enumerate() {
        let m = build_model(&spec, &small_arm(&spec, 6 + k as u64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let x = random_point(&m, &mut rng);
            let lp = m.log_posterior(&x);
            assert!(!lp.diverged);
            let terms: f64 = m.log_posterior_terms(&x).iter().sum();
            assert!((terms - lp.value).abs() < 1e-9 * lp.value.abs().max(1.0));
            let check = m.check_gradient(&x, 1e-3);
            assert!(check.flagged.is_empty());
            assert!(check.max_rel_error < 1e-5, "{}: {}", spec.label(), check.max_rel_error);
        }
    }
}

#[test]
fn overflow_is_reported_as_divergence() {
    let spec = ModelSpec::original();
    let m = build_model(&spec, &small_arm(&spec, 1)).unwrap();
    let mut x = vec![0.0; m.dimension()];
    let z = m.latents().iter().find(|c| c.variable == Variable::EPps).expect("missing e_pps cell").index;
    x[z] = 800.0;
    x[m.layout().cost_mean[0].start + 2] = 1.0;
    let lp = m.log_posterior(&x);
    assert!(lp.diverged);
    assert_eq!(lp.value, f64::NEG_INFINITY);
}

#[test]
fn simulate_respects_forced_hurdles() {
    let spec = ModelSpec::original();
    let mut p = truth(&spec);
    p.pps_zero = vec![50.0, 0.0];
    p.costs[0].zero = vec![-50.0, 0.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let v = simulate_record(&spec, &p, 0.0, &[], &mut rng);
        assert_eq!(v[1], 0.0);
        assert!(v[2] > 0.0);
    }
}

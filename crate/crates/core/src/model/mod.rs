//! The joint effectiveness/cost model for one treatment arm.
//!
//! `e_pfs` has a real-line distribution with an identity-link mean. `e_pps`
//! and each cost component are hurdle variables: a logit regression for the
//! probability of an exact zero and a log-link (log-scale for Lognormal)
//! regression for the positive part. Costs enter the chain sequentially:
//! drug given effects, hospital given effects and drug, adverse events given
//! effects, drug and hospital. Upstream costs are regressors on the log scale.
//!
//! Missing cells become latent coordinates. A missing hurdle variable keeps
//! its zero/positive membership marginalized: the record's likelihood is a
//! log-sum-exp over all membership combinations of its missing hurdle cells,
//! and the latent (the log of the positive value) carries the positive-part
//! density in every branch so the joint density stays normalizable.

pub mod family;
pub mod spec;

use std::io::Write;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{is_structural_zero, ArmData, Variable};
use crate::diff::{self, dot, log_sum_exp, sum, Var};
use crate::sampler::LogDensity;

pub use family::{family_lpdf, Family};
pub use spec::{CostFamily, ModelSpec, PfsFamily, PpsFamily, SpecError};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Cost variables in chain order.
pub const COSTS: [Variable; 3] = [Variable::CDrug, Variable::CHos, Variable::CAe];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("arm {0} has no records")]
    EmptyArm(u8),
    #[error("covariates requested but the data has none")]
    NoCovariates,
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("parameter vector has length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
}

/// Regressor for an upstream cost: `log c` when positive, 0 for a structural
/// zero.
#[inline]
pub fn log_cost_regressor(c: f64) -> f64 {
    if is_structural_zero(c) {
        0.0
    } else {
        c.ln()
    }
}

/// Regressors (intercept first, no covariates) of the stage that models `v`.
pub fn base_regressors(v: Variable, e_pfs: f64, e_pps: f64, c_drug: f64, c_hos: f64) -> Vec<f64> {
    let all = [1.0, e_pfs, e_pps, log_cost_regressor(c_drug), log_cost_regressor(c_hos)];
    all[..n_base(v)].to_vec()
}

/// Number of non-covariate regressors for the stage that models `v`.
pub fn n_base(v: Variable) -> usize {
    match v {
        Variable::EPfs => 1,
        Variable::EPps => 2,
        Variable::CDrug => 3,
        Variable::CHos => 4,
        Variable::CAe => 5,
    }
}

pub fn linear_predictor(coefs: &[f64], regressors: &[f64]) -> f64 {
    coefs.iter().zip(regressors).map(|(c, r)| c * r).sum()
}

/// Probability of an exact zero under a logit regression.
pub fn hurdle_logit_prob(coefs: &[f64], regressors: &[f64]) -> f64 {
    assert_eq!(coefs.len(), regressors.len(), "coefficient/regressor length mismatch");
    diff::inv_logit(linear_predictor(coefs, regressors))
}

/// Maps `u` to `upper * logit⁻¹(u)`; returns the value and the log
/// derivative `log(d value / d u)`.
pub fn bounded_transform(u: f64, upper: f64) -> (f64, f64) {
    let value = upper * diff::inv_logit(u);
    let log_jac = upper.ln() - diff::softplus(-u) - diff::softplus(u);
    (value, log_jac)
}

/// Constrained parameters of one hurdle cost component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Logit-scale coefficients for `P(c = 0)`.
    pub zero: Vec<f64>,
    /// Coefficients of the positive-part location.
    pub mean: Vec<f64>,
    pub sd: f64,
}

/// All structural parameters of one arm, on the constrained scale.
/// Covariate slopes, when present, trail each coefficient vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub pfs_mean: Vec<f64>,
    pub pfs_sd: f64,
    pub pps_zero: Vec<f64>,
    pub pps_mean: Vec<f64>,
    /// Weibull shape or truncated-normal sd; absent for Exponential.
    pub pps_ancillary: Option<f64>,
    pub costs: [CostParams; 3],
}

/// Draws one `(e_pfs, e_pps, c_drug, c_hos, c_ae)` vector.
///
/// `covariates` must already be centred; `e_pfs_center` is subtracted from
/// `e_pfs` in the zero-probability regressions when the spec asks for it.
pub fn simulate_record<R: Rng + ?Sized>(
    spec: &ModelSpec,
    p: &ArmParams,
    e_pfs_center: f64,
    covariates: &[f64],
    rng: &mut R,
) -> [f64; 5] {
    let center = if spec.center_e_pfs_in_hurdles { e_pfs_center } else { 0.0 };
    let with_cov = |coefs: &[f64], base: &[f64]| -> f64 {
        let k = base.len();
        linear_predictor(&coefs[..k], base) + linear_predictor(&coefs[k..], covariates)
    };
    let e_pfs = family::sample(spec.family_e_pfs.family(), with_cov(&p.pfs_mean, &[1.0]), p.pfs_sd, rng);
    let mut out = [e_pfs, 0.0, 0.0, 0.0, 0.0];
    let pps_fam = spec.family_e_pps.family();
    let pi = diff::inv_logit(with_cov(&p.pps_zero, &[1.0, e_pfs - center]));
    if rng.random::<f64>() >= pi {
        let eta = with_cov(&p.pps_mean, &[1.0, e_pfs]);
        out[1] = family::sample(pps_fam, eta, p.pps_ancillary.unwrap_or(1.0), rng);
    }
    let cost_fam = spec.family_costs.family();
    for (k, v) in COSTS.into_iter().enumerate() {
        let mut regs = base_regressors(v, e_pfs, out[1], out[2], out[3]);
        let pi = {
            regs[1] = e_pfs - center;
            let eta = with_cov(&p.costs[k].zero, &regs);
            regs[1] = e_pfs;
            diff::inv_logit(eta)
        };
        if rng.random::<f64>() >= pi {
            let eta = with_cov(&p.costs[k].mean, &regs);
            out[k + 2] = family::sample(cost_fam, eta, p.costs[k].sd, rng);
        }
    }
    out
}

/// Where each parameter block lives in the flat unconstrained vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub pfs_mean: Range<usize>,
    pub pfs_sd: usize,
    pub pps_zero: Range<usize>,
    pub pps_mean: Range<usize>,
    pub pps_ancillary: Option<usize>,
    pub cost_zero: [Range<usize>; 3],
    pub cost_mean: [Range<usize>; 3],
    pub cost_sd: [usize; 3],
    /// Structural parameter count (latents follow).
    pub n_params: usize,
    /// Indices of positive parameters mapped through a bounded transform.
    pub bounded: Vec<usize>,
    /// Indices of regression coefficients.
    pub regression: Vec<usize>,
}

impl Layout {
    /// True for regression coefficients other than intercepts.
    pub fn is_slope(&self, i: usize) -> bool {
        let intercepts = [&self.pfs_mean, &self.pps_zero, &self.pps_mean]
            .into_iter()
            .chain(self.cost_zero.iter())
            .chain(self.cost_mean.iter());
        self.regression.contains(&i) && !intercepts.map(|r| r.start).any(|s| s == i)
    }

    fn new(spec: &ModelSpec, n_cov: usize) -> Layout {
        let mut next = 0usize;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let mut regression = Vec::new();
        let mut bounded = Vec::new();
        let pfs_mean = take(1 + n_cov);
        regression.extend(pfs_mean.clone());
        let pfs_sd = take(1).start;
        bounded.push(pfs_sd);
        let pps_zero = take(2 + n_cov);
        regression.extend(pps_zero.clone());
        let pps_mean = take(2 + n_cov);
        regression.extend(pps_mean.clone());
        let pps_ancillary = if spec.family_e_pps.family().has_ancillary() {
            let i = take(1).start;
            bounded.push(i);
            Some(i)
        } else {
            None
        };
        let mut cost_zero: [Range<usize>; 3] = [0..0, 0..0, 0..0];
        let mut cost_mean = cost_zero.clone();
        let mut cost_sd = [0; 3];
        for (k, v) in COSTS.into_iter().enumerate() {
            cost_zero[k] = take(n_base(v) + n_cov);
            regression.extend(cost_zero[k].clone());
            cost_mean[k] = take(n_base(v) + n_cov);
            regression.extend(cost_mean[k].clone());
            cost_sd[k] = take(1).start;
            bounded.push(cost_sd[k]);
        }
        Layout {
            pfs_mean,
            pfs_sd,
            pps_zero,
            pps_mean,
            pps_ancillary,
            cost_zero,
            cost_mean,
            cost_sd,
            n_params: next,
            bounded,
            regression,
        }
    }
}

/// One missing outcome cell and its coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCell {
    pub record: usize,
    pub variable: Variable,
    pub index: usize,
}

#[derive(Clone, Debug)]
struct RecordInfo {
    values: [Option<f64>; 5],
    latent: [Option<usize>; 5],
    covariates: Vec<Var>,
}

/// Value, gradient and a divergence marker from one log-posterior call.
#[derive(Clone, Debug, PartialEq)]
pub struct LogPosterior {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Set when an intermediate quantity was not finite; `value` is `-inf`.
    pub diverged: bool,
}

/// Parameter views used while evaluating one point.
struct Params<'a> {
    pfs_mean: &'a [Var],
    pfs_sd: Var,
    pps_zero: &'a [Var],
    pps_mean: &'a [Var],
    pps_anc: Var,
    cost_zero: [&'a [Var]; 3],
    cost_mean: [&'a [Var]; 3],
    cost_sd: [Var; 3],
}

/// Upstream values along one branch of a record.
#[derive(Clone, Copy)]
struct Upstream {
    e_pfs: Var,
    e_pfs_hurdle: Var,
    e_pps: Var,
    log_costs: [Var; 2],
}

/// The model bound to one arm's data.
#[derive(Clone, Debug)]
pub struct ModelInstance {
    spec: ModelSpec,
    arm: ArmData,
    n_cov: usize,
    layout: Layout,
    latents: Vec<LatentCell>,
    records: Vec<RecordInfo>,
    names: Vec<String>,
    e_pfs_center: f64,
    covariate_means: Vec<f64>,
    shifts: Vec<Shift>,
}

/// Internal intercept coordinate of one regression: the sampler sees
/// `y_0 = b_0 + Σ c_j b_j` with `c_j` the arm mean of regressor `j`, which
/// removes most of the intercept/slope correlation. Unit Jacobian.
#[derive(Clone, Debug)]
struct Shift {
    intercept: usize,
    slopes: Vec<(usize, f64)>,
}

pub fn build_model(spec: &ModelSpec, arm: &ArmData) -> Result<ModelInstance, ModelError> {
    ModelInstance::new(spec, arm)
}

impl ModelInstance {
    pub fn new(spec: &ModelSpec, arm: &ArmData) -> Result<Self, ModelError> {
        spec.validate()?;
        if arm.is_empty() {
            return Err(ModelError::EmptyArm(arm.arm));
        }
        let n_cov = if spec.include_covariates {
            if arm.covariate_names.is_empty() {
                return Err(ModelError::NoCovariates);
            }
            arm.covariate_names.len()
        } else {
            0
        };
        let layout = Layout::new(spec, n_cov);
        let covariate_means: Vec<f64> = (0..n_cov)
            .map(|j| arm.records.iter().map(|r| r.covariates[j]).sum::<f64>() / arm.len() as f64)
            .collect();
        let obs_pfs = arm.observed(Variable::EPfs);
        let e_pfs_center = if obs_pfs.is_empty() { 0.0 } else { obs_pfs.iter().sum::<f64>() / obs_pfs.len() as f64 };

        let mut next = layout.n_params;
        let mut latents = Vec::new();
        let mut records = Vec::with_capacity(arm.len());
        for (i, r) in arm.records.iter().enumerate() {
            let mut latent = [None; 5];
            for v in Variable::ALL {
                if r.get(v).is_none() {
                    latent[v.index()] = Some(next);
                    latents.push(LatentCell { record: i, variable: v, index: next });
                    next += 1;
                }
            }
            let values = r.outcomes.map(|o| o.map(|x| if is_structural_zero(x) { 0.0 } else { x }));
            records.push(RecordInfo {
                values,
                latent,
                covariates: (0..n_cov).map(|j| Var::constant(r.covariates[j] - covariate_means[j])).collect(),
            });
        }
        let mut m = ModelInstance {
            spec: spec.clone(),
            arm: arm.clone(),
            n_cov,
            layout,
            latents,
            records,
            names: Vec::new(),
            e_pfs_center,
            covariate_means,
            shifts: Vec::new(),
        };
        m.shifts = m.build_shifts();
        m.names = m.build_names();
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn arm(&self) -> &ArmData {
        &self.arm
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn latents(&self) -> &[LatentCell] {
        &self.latents
    }

    pub fn dimension(&self) -> usize {
        self.layout.n_params + self.latents.len()
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn e_pfs_center(&self) -> f64 {
        self.e_pfs_center
    }

    /// Centred covariate rows of the arm's records.
    pub fn centred_covariates(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.covariates.iter().map(|v| v.value()).collect()).collect()
    }

    /// Arm means used to centre the covariates.
    pub fn covariate_means(&self) -> &[f64] {
        &self.covariate_means
    }

    pub fn n_covariates(&self) -> usize {
        self.n_cov
    }

    fn build_shifts(&self) -> Vec<Shift> {
        let mean = |v: Variable, f: fn(f64) -> f64| {
            let obs = self.arm.observed(v);
            if obs.is_empty() {
                0.0
            } else {
                obs.iter().map(|&x| f(x)).sum::<f64>() / obs.len() as f64
            }
        };
        let zeroed = |x: f64| if is_structural_zero(x) { 0.0 } else { x };
        let centres = [
            0.0,
            self.e_pfs_center,
            mean(Variable::EPps, zeroed),
            mean(Variable::CDrug, log_cost_regressor),
            mean(Variable::CHos, log_cost_regressor),
        ];
        let mut hurdle = centres;
        if self.spec.center_e_pfs_in_hurdles {
            hurdle[1] = 0.0;
        }
        let l = &self.layout;
        let mut blocks = vec![(l.pps_zero.clone(), 2, hurdle), (l.pps_mean.clone(), 2, centres)];
        for (k, v) in COSTS.into_iter().enumerate() {
            blocks.push((l.cost_zero[k].clone(), n_base(v), hurdle));
            blocks.push((l.cost_mean[k].clone(), n_base(v), centres));
        }
        blocks
            .into_iter()
            .map(|(r, nb, c)| Shift {
                intercept: r.start,
                slopes: (1..nb).map(|j| (r.start + j, c[j])).filter(|s| s.1 != 0.0).collect(),
            })
            .collect()
    }

    /// Replaces the internal intercept coordinates by the model's intercepts.
    fn raw_coefficients(&self, x: &[Var]) -> Vec<Var> {
        let mut out = x[..self.layout.n_params].to_vec();
        let mut edges = Vec::new();
        for s in &self.shifts {
            edges.clear();
            let y = x[s.intercept];
            edges.push((y, 1.0));
            let mut value = y.value();
            for &(j, c) in &s.slopes {
                value -= c * x[j].value();
                edges.push((x[j], -c));
            }
            out[s.intercept] = Var::custom(value, &edges);
        }
        out
    }

    fn build_names(&self) -> Vec<String> {
        let l = &self.layout;
        let mut names = vec![String::new(); self.dimension()];
        let cov = |base: &str, n_base: usize, range: &Range<usize>, names: &mut Vec<String>| {
            for (j, i) in range.clone().enumerate() {
                names[i] = if j < n_base {
                    format!("{base}_{j}")
                } else {
                    format!("{base}_x{}", j - n_base + 1)
                };
            }
        };
        cov("alpha_pfs", 1, &l.pfs_mean, &mut names);
        names[l.pfs_sd] = "sigma_pfs".into();
        cov("gamma_pps", 2, &l.pps_zero, &mut names);
        cov("alpha_pps", 2, &l.pps_mean, &mut names);
        if let Some(i) = l.pps_ancillary {
            names[i] = match self.spec.family_e_pps {
                PpsFamily::Weibull => "shape_pps".into(),
                _ => "sigma_pps".into(),
            };
        }
        for (k, v) in COSTS.into_iter().enumerate() {
            let tag = &v.name()[2..];
            cov(&format!("delta_{tag}"), n_base(v), &l.cost_zero[k], &mut names);
            cov(&format!("beta_{tag}"), n_base(v), &l.cost_mean[k], &mut names);
            names[l.cost_sd[k]] = format!("sigma_{tag}");
        }
        for c in &self.latents {
            names[c.index] = format!("z_{}_{}", c.variable.name(), self.arm.records[c.record].id);
        }
        names
    }

    /// Writes `index,name,kind` for every coordinate.
    pub fn write_index_map<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "name", "kind"])?;
        for (i, n) in self.names.iter().enumerate() {
            let kind = if i >= self.layout.n_params {
                if self.latents[i - self.layout.n_params].variable == Variable::EPfs {
                    "latent"
                } else {
                    "latent_positive"
                }
            } else if self.layout.bounded.contains(&i) {
                "bounded_positive"
            } else {
                "regression"
            };
            out.write_record([i.to_string(), n.clone(), kind.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    fn bounded_value(&self, u: f64) -> f64 {
        self.spec.sd_upper * diff::inv_logit(u)
    }

    fn bounded_inverse(&self, s: f64) -> f64 {
        let p = (s / self.spec.sd_upper).clamp(1e-300, 1.0 - 1e-16);
        (p / (1.0 - p)).ln()
    }

    /// Maps an unconstrained point to the constrained view: bounded
    /// parameters in `(0, sd_upper)`, positive latents on the natural scale.
    pub fn constrain(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for s in &self.shifts {
            out[s.intercept] -= s.slopes.iter().map(|&(j, c)| c * x[j]).sum::<f64>();
        }
        for &i in &self.layout.bounded {
            out[i] = self.bounded_value(x[i]);
        }
        for c in &self.latents {
            if c.variable != Variable::EPfs {
                out[c.index] = x[c.index].exp();
            }
        }
        out
    }

    pub fn unconstrain(&self, c: &[f64]) -> Vec<f64> {
        let mut out = c.to_vec();
        for s in &self.shifts {
            out[s.intercept] += s.slopes.iter().map(|&(j, b)| b * c[j]).sum::<f64>();
        }
        for &i in &self.layout.bounded {
            out[i] = self.bounded_inverse(c[i]);
        }
        for cell in &self.latents {
            if cell.variable != Variable::EPfs {
                out[cell.index] = c[cell.index].ln();
            }
        }
        out
    }

    /// Structural parameters from a constrained vector.
    pub fn arm_params(&self, constrained: &[f64]) -> ArmParams {
        let l = &self.layout;
        let cost = |k: usize| CostParams {
            zero: constrained[l.cost_zero[k].clone()].to_vec(),
            mean: constrained[l.cost_mean[k].clone()].to_vec(),
            sd: constrained[l.cost_sd[k]],
        };
        ArmParams {
            pfs_mean: constrained[l.pfs_mean.clone()].to_vec(),
            pfs_sd: constrained[l.pfs_sd],
            pps_zero: constrained[l.pps_zero.clone()].to_vec(),
            pps_mean: constrained[l.pps_mean.clone()].to_vec(),
            pps_ancillary: l.pps_ancillary.map(|i| constrained[i]),
            costs: [cost(0), cost(1), cost(2)],
        }
    }

    /// Inverse of [`arm_params`](Self::arm_params) for the structural part;
    /// latent coordinates are left at `latent_fill` (constrained scale).
    pub fn constrained_from_params(&self, p: &ArmParams, latent_fill: &[f64]) -> Result<Vec<f64>, ModelError> {
        let l = &self.layout;
        let mut out = vec![0.0; self.dimension()];
        let mut put = |r: &Range<usize>, v: &[f64]| -> Result<(), ModelError> {
            if r.len() != v.len() {
                return Err(ModelError::Dimension { expected: r.len(), found: v.len() });
            }
            out[r.clone()].copy_from_slice(v);
            Ok(())
        };
        put(&l.pfs_mean, &p.pfs_mean)?;
        put(&l.pps_zero, &p.pps_zero)?;
        put(&l.pps_mean, &p.pps_mean)?;
        for k in 0..3 {
            put(&l.cost_zero[k], &p.costs[k].zero)?;
            put(&l.cost_mean[k], &p.costs[k].mean)?;
        }
        out[l.pfs_sd] = p.pfs_sd;
        if let Some(i) = l.pps_ancillary {
            out[i] = p.pps_ancillary.unwrap_or(1.0);
        }
        for k in 0..3 {
            out[l.cost_sd[k]] = p.costs[k].sd;
        }
        if latent_fill.len() != self.latents.len() {
            return Err(ModelError::Dimension { expected: self.latents.len(), found: latent_fill.len() });
        }
        out[l.n_params..].copy_from_slice(latent_fill);
        Ok(out)
    }

    /// Log posterior (up to a constant) and its exact gradient.
    pub fn log_posterior(&self, x: &[f64]) -> LogPosterior {
        let mut gradient = vec![0.0; x.len()];
        let value = self.logp_grad(x, &mut gradient);
        let diverged = !value.is_finite();
        if diverged {
            gradient.iter_mut().for_each(|g| *g = 0.0);
        }
        LogPosterior { value: if diverged { f64::NEG_INFINITY } else { value }, gradient, diverged }
    }

    /// Log posterior value only, without recording derivatives.
    pub fn log_posterior_value(&self, x: &[f64]) -> f64 {
        let v = diff::value(x, |v| self.log_density(v));
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    }

    /// `x` is the unconstrained point, `raw` its structural part with model
    /// intercepts.
    fn params<'a>(&self, x: &[Var], raw: &'a [Var], scratch: &mut [Var; 5]) -> (Params<'a>, Var) {
        let l = &self.layout;
        let upper = self.spec.sd_upper;
        let mut jac = Vec::with_capacity(l.bounded.len());
        for (slot, &i) in l.bounded.iter().enumerate() {
            let u = x[i];
            let p = diff::inv_logit(u.value());
            let (value, lj) = bounded_transform(u.value(), upper);
            scratch[slot] = Var::custom(value, &[(u, upper * p * (1.0 - p))]);
            // the uniform prior's -log(upper) cancels the Jacobian's +log(upper)
            jac.push(Var::custom(lj - upper.ln(), &[(u, 1.0 - 2.0 * p)]));
        }
        let has_anc = l.pps_ancillary.is_some();
        let sd_at = |k: usize| scratch[k + 1 + has_anc as usize];
        let params = Params {
            pfs_mean: &raw[l.pfs_mean.clone()],
            pfs_sd: scratch[0],
            pps_zero: &raw[l.pps_zero.clone()],
            pps_mean: &raw[l.pps_mean.clone()],
            pps_anc: if has_anc { scratch[1] } else { Var::constant(1.0) },
            cost_zero: [
                &raw[l.cost_zero[0].clone()],
                &raw[l.cost_zero[1].clone()],
                &raw[l.cost_zero[2].clone()],
            ],
            cost_mean: [
                &raw[l.cost_mean[0].clone()],
                &raw[l.cost_mean[1].clone()],
                &raw[l.cost_mean[2].clone()],
            ],
            cost_sd: [sd_at(0), sd_at(1), sd_at(2)],
        };
        (params, sum(&jac))
    }

    fn regression_prior(&self, raw: &[Var]) -> Var {
        let sd = self.spec.prior_sd_regression;
        let inv_var = 1.0 / (sd * sd);
        let mut value = 0.0;
        let mut edges = Vec::with_capacity(self.layout.regression.len());
        for &i in &self.layout.regression {
            let c = raw[i];
            value += -0.5 * c.value() * c.value() * inv_var - sd.ln() - HALF_LN_2PI;
            edges.push((c, -c.value() * inv_var));
        }
        Var::custom(value, &edges)
    }

    /// Full log density as a differentiable expression.
    pub fn log_density(&self, x: &[Var]) -> Var {
        let mut scratch = [Var::constant(0.0); 5];
        let raw = self.raw_coefficients(x);
        let (p, jac) = self.params(x, &raw, &mut scratch);
        let mut terms = Vec::with_capacity(self.records.len() + 2);
        terms.push(jac);
        terms.push(self.regression_prior(&raw));
        let mut leaves = Vec::new();
        for r in &self.records {
            leaves.clear();
            self.record_leaves(r, &p, x, &mut leaves);
            terms.push(collapse(&leaves));
        }
        sum(&terms)
    }

    fn eta(&self, coefs: &[Var], base: &[Var], cov: &[Var]) -> Var {
        let k = base.len();
        let b = dot(&coefs[..k], base);
        if cov.is_empty() {
            b
        } else {
            b + dot(&coefs[k..], cov)
        }
    }

    /// Enumerates the membership branches of a record's missing hurdle cells;
    /// each leaf holds the per-variable log terms along one branch.
    fn record_leaves(&self, r: &RecordInfo, p: &Params, x: &[Var], leaves: &mut Vec<[Var; 5]>) {
        let one = Var::constant(1.0);
        let e_pfs = match r.values[0] {
            Some(v) => Var::constant(v),
            None => x[r.latent[0].expect("latent for missing e_pfs")],
        };
        let eta = self.eta(p.pfs_mean, &[one], &r.covariates);
        let pfs_term = family::lpdf_var(self.spec.family_e_pfs.family(), e_pfs, eta, p.pfs_sd);
        let e_pfs_hurdle = if self.spec.center_e_pfs_in_hurdles {
            e_pfs - self.e_pfs_center
        } else {
            e_pfs
        };
        let up = Upstream { e_pfs, e_pfs_hurdle, e_pps: Var::constant(0.0), log_costs: [Var::constant(0.0); 2] };
        let mut terms = [Var::constant(0.0); 5];
        terms[0] = pfs_term;
        self.walk(r, p, x, 1, up, terms, leaves);
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        &self,
        r: &RecordInfo,
        p: &Params,
        x: &[Var],
        stage: usize,
        up: Upstream,
        terms: [Var; 5],
        leaves: &mut Vec<[Var; 5]>,
    ) {
        if stage == 5 {
            leaves.push(terms);
            return;
        }
        let v = Variable::ALL[stage];
        let one = Var::constant(1.0);
        let all = [one, up.e_pfs, up.e_pps, up.log_costs[0], up.log_costs[1]];
        let mut hurdle_regs = all;
        hurdle_regs[1] = up.e_pfs_hurdle;
        let nb = n_base(v);
        let (zero_coefs, mean_coefs, anc, fam) = if stage == 1 {
            (p.pps_zero, p.pps_mean, p.pps_anc, self.spec.family_e_pps.family())
        } else {
            let k = stage - 2;
            (p.cost_zero[k], p.cost_mean[k], p.cost_sd[k], self.spec.family_costs.family())
        };
        let eta_zero = self.eta(zero_coefs, &hurdle_regs[..nb], &r.covariates);
        let eta_mean = self.eta(mean_coefs, &all[..nb], &r.covariates);
        let next = |value: Var, log_value: Var| {
            let mut u = up;
            match stage {
                1 => u.e_pps = value,
                2 => u.log_costs[0] = log_value,
                3 => u.log_costs[1] = log_value,
                _ => {}
            }
            u
        };
        let zero = Var::constant(0.0);
        match r.values[stage] {
            Some(val) if val == 0.0 => {
                let mut t = terms;
                t[stage] = eta_zero.log_inv_logit();
                self.walk(r, p, x, stage + 1, next(zero, zero), t, leaves);
            }
            Some(val) => {
                let mut t = terms;
                t[stage] = eta_zero.log1m_inv_logit() + family::lpdf_var(fam, Var::constant(val), eta_mean, anc);
                self.walk(r, p, x, stage + 1, next(Var::constant(val), Var::constant(val.ln())), t, leaves);
            }
            None => {
                let z = x[r.latent[stage].expect("latent for missing cell")];
                let g = family::lpdf_log_var(fam, z, eta_mean, anc);
                let mut t = terms;
                t[stage] = eta_zero.log_inv_logit() + g;
                self.walk(r, p, x, stage + 1, next(zero, zero), t, leaves);
                let mut t = terms;
                t[stage] = eta_zero.log1m_inv_logit() + g;
                let value = if stage == 1 { z.exp() } else { zero };
                self.walk(r, p, x, stage + 1, next(value, z), t, leaves);
            }
        }
    }

    /// Per-record branch leaves at an unconstrained point, as plain numbers.
    /// Each leaf is the per-variable log terms of one membership branch.
    pub fn record_branch_terms(&self, x: &[f64]) -> Vec<Vec<[f64; 5]>> {
        let xs: Vec<Var> = x.iter().map(|&v| Var::constant(v)).collect();
        let mut scratch = [Var::constant(0.0); 5];
        let raw = self.raw_coefficients(&xs);
        let (p, _) = self.params(&xs, &raw, &mut scratch);
        let mut leaves = Vec::new();
        self.records
            .iter()
            .map(|r| {
                leaves.clear();
                self.record_leaves(r, &p, &xs, &mut leaves);
                leaves.iter().map(|l| l.map(|v| v.value())).collect()
            })
            .collect()
    }

    /// Additive pieces of the log posterior at `x`: Jacobian, prior, then per
    /// record the terms shared by all its branches followed by the
    /// log-sum-exp of the branch-specific remainders. Their sum equals
    /// [`log_posterior_value`](Self::log_posterior_value) up to rounding;
    /// differencing piece by piece keeps finite differences accurate when
    /// some pieces are very large.
    pub fn log_posterior_terms(&self, x: &[f64]) -> Vec<f64> {
        let xs: Vec<Var> = x.iter().map(|&v| Var::constant(v)).collect();
        let mut scratch = [Var::constant(0.0); 5];
        let raw = self.raw_coefficients(&xs);
        let (_, jac) = self.params(&xs, &raw, &mut scratch);
        let sd = self.spec.prior_sd_regression;
        let mut out = vec![jac.value(), -(self.layout.regression.len() as f64) * (sd.ln() + HALF_LN_2PI)];
        out.extend(self.layout.regression.iter().map(|&i| -0.5 * (raw[i].value() / sd).powi(2)));
        for leaves in self.record_branch_terms(x) {
            let shared: Vec<bool> = (0..5).map(|j| leaves.iter().all(|l| l[j] == leaves[0][j])).collect();
            for j in 0..5 {
                if shared[j] {
                    out.push(leaves[0][j]);
                }
            }
            if shared.iter().all(|&s| s) {
                continue;
            }
            let rest: Vec<f64> = leaves
                .iter()
                .map(|l| (0..5).filter(|&j| !shared[j]).map(|j| l[j]).sum())
                .collect();
            let m = rest.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            out.push(if m == f64::NEG_INFINITY { m } else { m + rest.iter().map(|r| (r - m).exp()).sum::<f64>().ln() });
        }
        out
    }

    /// Compares the exact gradient at `x` with Ridders-extrapolated central
    /// differences starting from step `h`. Each difference is taken piece by
    /// piece over [`log_posterior_terms`](Self::log_posterior_terms).
    pub fn check_gradient(&self, x: &[f64], h: f64) -> diff::GradientCheck {
        let lp = self.log_posterior(x);
        let mut worst: f64 = 0.0;
        let mut flagged = Vec::new();
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            let mut central = |step: f64| -> Option<f64> {
                probe[i] = x[i] + step;
                let up = self.log_posterior_terms(&probe);
                probe[i] = x[i] - step;
                let down = self.log_posterior_terms(&probe);
                probe[i] = x[i];
                if up.iter().chain(&down).any(|t| !t.is_finite()) {
                    return None;
                }
                let mut d: Vec<f64> = up.iter().zip(&down).map(|(a, b)| a - b).collect();
                d.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
                Some(d.iter().sum::<f64>() / (2.0 * step))
            };
            let mut estimate = diff::ridders(&mut central, h);
            // very high curvature: restart from a smaller step when the
            // extrapolation reports a loose error bound
            if let Some((fd, err)) = estimate {
                if err > 1e-7 * fd.abs() {
                    if let Some(retry) = diff::ridders(&mut central, 0.1 * h) {
                        if retry.1 < err {
                            estimate = Some(retry);
                        }
                    }
                }
            }
            match estimate {
                Some((fd, _)) if !lp.diverged => {
                    let g = lp.gradient[i];
                    worst = worst.max((g - fd).abs() / g.abs().max(1e-8));
                }
                _ => flagged.push(i),
            }
        }
        diff::GradientCheck { max_rel_error: worst, flagged }
    }

    /// Data-informed starting point with jitter of `jitter` on the
    /// unconstrained scale.
    pub fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R, jitter: f64) -> Vec<f64> {
        let l = &self.layout;
        let mut c = vec![0.0; self.dimension()];
        let stats = |v: Variable| -> (f64, f64, f64, f64) {
            // zero share, mean of positives, mean and sd of log positives
            let obs = self.arm.observed(v);
            let pos: Vec<f64> = obs.iter().copied().filter(|&x| !is_structural_zero(x) && x > 0.0).collect();
            let zero = if obs.is_empty() { 0.5 } else { (obs.len() - pos.len()) as f64 / obs.len() as f64 };
            let mean = if pos.is_empty() { 1.0 } else { pos.iter().sum::<f64>() / pos.len() as f64 };
            let logs: Vec<f64> = pos.iter().map(|x| x.ln()).collect();
            let (lm, lsd) = crate::data::summarize_values(&logs);
            (zero, mean, lm.unwrap_or(0.0), lsd.unwrap_or(1.0).max(0.05))
        };
        let logit = |p: f64| {
            let p = p.clamp(0.05, 0.95);
            (p / (1.0 - p)).ln()
        };
        let pfs = self.arm.observed(Variable::EPfs);
        let (pfs_mean, pfs_sd) = crate::data::summarize_values(&pfs);
        c[l.pfs_mean.start] = pfs_mean.unwrap_or(0.0);
        c[l.pfs_sd] = pfs_sd.unwrap_or(0.1).max(0.01);
        let (z, m, _, _) = stats(Variable::EPps);
        c[l.pps_zero.start] = logit(z);
        c[l.pps_mean.start] = m.ln();
        if let Some(i) = l.pps_ancillary {
            c[i] = match self.spec.family_e_pps {
                PpsFamily::Weibull => 1.0,
                _ => m,
            };
        }
        let mut latent_fill = Vec::with_capacity(self.latents.len());
        for (k, v) in COSTS.into_iter().enumerate() {
            let (z, m, lm, lsd) = stats(v);
            c[l.cost_zero[k].start] = logit(z);
            match self.spec.family_costs {
                CostFamily::Lognormal => {
                    c[l.cost_mean[k].start] = lm;
                    c[l.cost_sd[k]] = lsd;
                }
                CostFamily::Gamma => {
                    c[l.cost_mean[k].start] = m.ln();
                    c[l.cost_sd[k]] = m * lsd.min(2.0);
                }
            }
        }
        for cell in &self.latents {
            let v = cell.variable;
            latent_fill.push(match v {
                Variable::EPfs => pfs_mean.unwrap_or(0.0),
                _ => stats(v).1,
            });
        }
        c[l.n_params..].copy_from_slice(&latent_fill);
        for &i in &l.bounded {
            c[i] = c[i].min(0.5 * self.spec.sd_upper);
        }
        let mut x = self.unconstrain(&c);
        let slopes: Vec<bool> = (0..self.dimension())
            .map(|i| {
                l.regression.contains(&i)
                    && ![l.pfs_mean.start, l.pps_zero.start, l.pps_mean.start]
                        .into_iter()
                        .chain(l.cost_zero.iter().map(|r| r.start))
                        .chain(l.cost_mean.iter().map(|r| r.start))
                        .any(|s| s == i)
            })
            .collect();
        for (i, xi) in x.iter_mut().enumerate() {
            let scale = if slopes[i] { 0.2 * jitter } else { jitter };
            *xi += scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        x
    }
}

/// Sums a single leaf, or log-sum-exps the leaf totals of a branched record.
/// Terms common to every branch are added outside the log-sum-exp so a
/// large shared term cannot swamp the differences between branches.
fn collapse(leaves: &[[Var; 5]]) -> Var {
    if leaves.len() == 1 {
        return sum(&leaves[0]);
    }
    let shared: Vec<bool> = (0..5).map(|j| leaves.iter().all(|l| l[j].same_node(leaves[0][j]))).collect();
    let totals: Vec<Var> = leaves
        .iter()
        .map(|l| sum(&(0..5).filter(|&j| !shared[j]).map(|j| l[j]).collect::<Vec<_>>()))
        .collect();
    let mut parts: Vec<Var> = (0..5).filter(|&j| shared[j]).map(|j| leaves[0][j]).collect();
    parts.push(log_sum_exp(&totals));
    sum(&parts)
}

impl LogDensity for ModelInstance {
    fn dim(&self) -> usize {
        self.dimension()
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let v = diff::gradient_into(x, grad, |v| self.log_density(v));
        if v.is_finite() && grad.iter().all(|g| g.is_finite()) {
            v
        } else {
            f64::NEG_INFINITY
        }
    }

    fn initial_point(&self, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        ModelInstance::initial_point(self, rng, 0.5)
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        ModelInstance::constrain(self, x)
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }
}

#[cfg(test)]
mod tests;

//! Predictive accuracy (WAIC, PSIS-LOO) and posterior predictive checks.

use std::io::Write;

use thiserror::Error;

use crate::data::{format_value, is_structural_zero, Variable};
use crate::model::{simulate_record, ModelInstance};
use crate::plot::{self, Mark, Panel, Series, PALETTE};
use crate::sampler::{parallel_map, stream_rng, Chains};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssessError {
    #[error("need at least {needed} draws, found {found}")]
    TooFewDraws { needed: usize, found: usize },
    #[error("GPD fit needs at least 5 exceedances, found {0}")]
    TooFewExceedances(usize),
    #[error("GPD exceedances must be positive and finite")]
    BadExceedance,
    #[error("degenerate tail: all exceedances equal")]
    DegenerateTail,
    #[error("draws do not match the model ({expected} coordinates expected, found {found})")]
    DrawShape { expected: usize, found: usize },
    #[error("non-finite log-likelihood for draw {draw}, unit {unit}")]
    NonFinite { draw: usize, unit: usize },
}

/// Pointwise log-likelihood of one variable: `values[s][i]` for draw `s`
/// and unit `i`; `units[i]` is the record index within the arm.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikMatrix {
    pub variable: Variable,
    pub units: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl LogLikMatrix {
    pub fn from_rows(variable: Variable, values: Vec<Vec<f64>>) -> LogLikMatrix {
        let n = values.first().map_or(0, |r| r.len());
        LogLikMatrix { variable, units: (0..n).collect(), values }
    }

    pub fn n_draws(&self) -> usize {
        self.values.len()
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[i]).collect()
    }

    /// Concatenates the units of two matrices with the same draws.
    pub fn concat(&self, other: &LogLikMatrix) -> LogLikMatrix {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| [a.as_slice(), b].concat()).collect();
        let units = self.units.iter().chain(&other.units).copied().collect();
        LogLikMatrix { variable: self.variable, units, values }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_mean_exp(v: &[f64]) -> f64 {
    log_sum_exp(v) - (v.len() as f64).ln()
}

/// Unconstrained draw vectors, recovered from the constrained view when the
/// chains were read back from a draw file.
fn unconstrained_draws(m: &ModelInstance, draws: &Chains) -> Result<Vec<Vec<f64>>, AssessError> {
    let pooled = draws.pooled_unconstrained();
    let out: Vec<Vec<f64>> = if pooled.len() == draws.total_draws() {
        pooled.iter().map(|d| d.to_vec()).collect()
    } else {
        draws.pooled_draws().iter().map(|d| m.unconstrain(d)).collect()
    };
    if let Some(d) = out.iter().find(|d| d.len() != m.dimension()) {
        return Err(AssessError::DrawShape { expected: m.dimension(), found: d.len() });
    }
    Ok(out)
}

/// Pointwise log-likelihood of `variable` for every record where it is
/// observed.
///
/// The entry is the log predictive density of the observed value given the
/// record's upstream values at that draw. Upstream missing hurdle cells
/// enter through the draw's latent values, with their zero/positive
/// membership weighted by its conditional probability given the upstream
/// terms; with no missing upstream cells this is the plain hurdle density.
pub fn pointwise_loglik(m: &ModelInstance, draws: &Chains, variable: Variable) -> Result<LogLikMatrix, AssessError> {
    let xs = unconstrained_draws(m, draws)?;
    let stage = variable.index();
    let units: Vec<usize> =
        m.arm().records.iter().enumerate().filter(|(_, r)| r.outcomes[stage].is_some()).map(|(i, _)| i).collect();
    let values = parallel_map(xs.len(), |s| {
        let branches = m.record_branch_terms(&xs[s]);
        units
            .iter()
            .map(|&i| {
                let leaves = &branches[i];
                let upto: Vec<f64> = leaves.iter().map(|l| l[..=stage].iter().sum()).collect();
                if leaves.len() == 1 {
                    return leaves[0][stage];
                }
                let before: Vec<f64> = leaves.iter().map(|l| l[..stage].iter().sum()).collect();
                log_sum_exp(&upto) - log_sum_exp(&before)
            })
            .collect::<Vec<f64>>()
    });
    for (s, row) in values.iter().enumerate() {
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(AssessError::NonFinite { draw: s, unit: i });
        }
    }
    Ok(LogLikMatrix { variable, units, values })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waic {
    pub waic: f64,
    pub p_d: f64,
    pub lppd: f64,
}

/// WAIC with the variance-based effective number of parameters.
pub fn waic(ll: &LogLikMatrix) -> Result<Waic, AssessError> {
    let s = ll.n_draws();
    if s < 2 {
        return Err(AssessError::TooFewDraws { needed: 2, found: s });
    }
    let mut lppd = 0.0;
    let mut p_d = 0.0;
    for i in 0..ll.n_units() {
        let col = ll.column(i);
        lppd += log_mean_exp(&col);
        let mean = col.iter().sum::<f64>() / s as f64;
        p_d += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1) as f64;
    }
    Ok(Waic { waic: -2.0 * (lppd - p_d), p_d, lppd })
}

/// Generalized Pareto shape `k` and scale `sigma` for positive exceedances,
/// by maximizing the profile likelihood in `b = k / sigma` from a
/// method-of-moments start.
pub fn gpd_fit(tail: &[f64]) -> Result<(f64, f64), AssessError> {
    let n = tail.len();
    if n < 5 {
        return Err(AssessError::TooFewExceedances(n));
    }
    if tail.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(AssessError::BadExceedance);
    }
    let xmax = tail.iter().cloned().fold(0.0, f64::max);
    let xmin = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    if xmax - xmin <= 1e-12 * xmax {
        return Err(AssessError::DegenerateTail);
    }
    let nf = n as f64;
    let k_of = |b: f64| tail.iter().map(|x| (b * x).ln_1p()).sum::<f64>() / nf;
    let profile = |b: f64| {
        let k = k_of(b);
        if b.abs() < 1e-300 || !k.is_finite() {
            return f64::NEG_INFINITY;
        }
        nf * ((b / k).ln() - k - 1.0)
    };
    let mean = tail.iter().sum::<f64>() / nf;
    let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let k0 = (0.5 * (1.0 - mean * mean / var)).clamp(-0.45, 0.45);
    let b_lo = -1.0 / xmax;
    let mut b0 = k0 / (mean * (1.0 - k0));
    if b0 <= b_lo {
        b0 = 0.5 * b_lo;
    }
    // b = b_lo + exp(t): coarse scan around the start, then golden section
    let f = |t: f64| profile(b_lo + t.exp());
    let t0 = (b0 - b_lo).ln();
    let grid: Vec<f64> = (0..=240).map(|j| t0 - 12.0 + 0.1 * j as f64).collect();
    let (best, _) = grid
        .iter()
        .map(|&t| (t, f(t)))
        .fold((t0, f64::NEG_INFINITY), |acc, (t, v)| if v > acc.1 { (t, v) } else { acc });
    let (mut a, mut c) = (best - 0.1, best + 0.1);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = c - g * (c - a);
    let mut x2 = a + g * (c - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if f1 >= f2 {
            c = x2;
            x2 = x1;
            f2 = f1;
            x1 = c - g * (c - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (c - a);
            f2 = f(x2);
        }
    }
    let b = b_lo + (0.5 * (a + c)).exp();
    let k = k_of(b);
    Ok((k, k / b))
}

/// GPD quantile at probability `p`.
fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * ((-p).ln_1p() * -k).exp_m1() / k
    }
}

/// Threshold above which a Pareto-k̂ marks an unreliable unit.
pub const KHAT_THRESHOLD: f64 = 0.7;

#[derive(Clone, Debug, PartialEq)]
pub struct Loo {
    pub looic: f64,
    pub p_d: f64,
    pub elpd: Vec<f64>,
    /// `None` where the tail fit was undefined.
    pub khats: Vec<Option<f64>>,
}

impl Loo {
    /// Units with k̂ above the threshold or undefined.
    pub fn flagged(&self) -> Vec<usize> {
        self.khats.iter().enumerate().filter(|(_, k)| k.is_none_or(|k| k > KHAT_THRESHOLD)).map(|(i, _)| i).collect()
    }
}

/// Pareto-smoothed log weights for one unit and the tail shape estimate.
pub fn psis_smooth(log_ratios: &[f64]) -> (Vec<f64>, Option<f64>) {
    let s = log_ratios.len();
    let max = log_ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|r| r - max).collect();
    let m = ((0.2 * s as f64).ceil() as usize).min((3.0 * (s as f64).sqrt()).ceil() as usize);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    let mut khat = None;
    if m >= 5 && m < s {
        let cutoff = lw[order[s - m - 1]];
        let tail_idx = &order[s - m..];
        let exceed: Vec<f64> = tail_idx.iter().map(|&i| lw[i].exp() - cutoff.exp()).collect();
        if let Ok((k, sigma)) = gpd_fit(&exceed) {
            for (z, &i) in tail_idx.iter().enumerate() {
                let q = gpd_quantile((z as f64 + 0.5) / m as f64, k, sigma);
                lw[i] = (cutoff.exp() + q).ln().min(0.0);
            }
            khat = Some(k);
        }
    }
    // truncate at S^(3/4) times the mean weight
    let lse = log_sum_exp(&lw);
    let cap = lse - (s as f64).ln() + 0.75 * (s as f64).ln();
    for v in lw.iter_mut() {
        *v = v.min(cap);
    }
    (lw, khat)
}

/// PSIS-LOO: leave-one-out expected log predictive density per unit.
pub fn psis_loo(ll: &LogLikMatrix) -> Result<Loo, AssessError> {
    let s = ll.n_draws();
    if s < 25 {
        return Err(AssessError::TooFewDraws { needed: 25, found: s });
    }
    let mut elpd = Vec::with_capacity(ll.n_units());
    let mut khats = Vec::with_capacity(ll.n_units());
    let mut lppd = 0.0;
    for i in 0..ll.n_units() {
        let col = ll.column(i);
        lppd += log_mean_exp(&col);
        let constant = col.iter().all(|v| *v == col[0]);
        let ratios: Vec<f64> = col.iter().map(|v| -v).collect();
        let (lw, k) = if constant { (vec![0.0; s], None) } else { psis_smooth(&ratios) };
        let num: Vec<f64> = lw.iter().zip(&col).map(|(w, v)| w + v).collect();
        elpd.push(log_sum_exp(&num) - log_sum_exp(&lw));
        khats.push(k);
    }
    let total: f64 = elpd.iter().sum();
    Ok(Loo { looic: -2.0 * total, p_d: lppd - total, elpd, khats })
}

/// Per-variable fit criteria.
#[derive(Clone, Debug, PartialEq)]
pub struct VariableFit {
    pub variable: Variable,
    pub family: String,
    pub waic: Waic,
    pub loo: Loo,
}

/// Per-variable and total criteria of one model specification.
#[derive(Clone, Debug, PartialEq)]
pub struct FitAssessment {
    pub model: String,
    pub variables: Vec<VariableFit>,
}

impl FitAssessment {
    pub fn total_waic(&self) -> f64 {
        self.variables.iter().map(|v| v.waic.waic).sum()
    }

    pub fn total_p_waic(&self) -> f64 {
        self.variables.iter().map(|v| v.waic.p_d).sum()
    }

    pub fn total_looic(&self) -> f64 {
        self.variables.iter().map(|v| v.loo.looic).sum()
    }

    pub fn total_p_loo(&self) -> f64 {
        self.variables.iter().map(|v| v.loo.p_d).sum()
    }
}

/// Criteria for all five variables, pooling the units of every arm. Each
/// arm contributes its own model and draws; draws are paired by index.
pub fn assess_fit(model: &str, arms: &[(&ModelInstance, &Chains)]) -> Result<FitAssessment, AssessError> {
    let mut variables = Vec::new();
    for v in Variable::ALL {
        let mut ll: Option<LogLikMatrix> = None;
        for (m, draws) in arms {
            let part = pointwise_loglik(m, draws, v)?;
            ll = Some(match ll {
                None => part,
                Some(prev) => prev.concat(&part),
            });
        }
        let ll = ll.expect("at least one arm");
        let spec = arms[0].0.spec();
        let family = match v {
            Variable::EPfs => spec.family_e_pfs.family(),
            Variable::EPps => spec.family_e_pps.family(),
            _ => spec.family_costs.family(),
        };
        let family = if v.is_hurdle() { format!("hurdle {}", family.name()) } else { family.name().to_string() };
        variables.push(VariableFit { variable: v, family, waic: waic(&ll)?, loo: psis_loo(&ll)? });
    }
    Ok(FitAssessment { model: model.to_string(), variables })
}

pub const TABLE_HEADER: &str = "model,variable,family,waic,p_waic,looic,p_loo,khat_flagged";

/// Comparison table: one block of variable rows plus a total per model.
pub fn write_table<W: Write>(fits: &[FitAssessment], w: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(w);
    writeln!(out, "{TABLE_HEADER}")?;
    for f in fits {
        for v in &f.variables {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                f.model,
                v.variable,
                v.family,
                format_value(v.waic.waic),
                format_value(v.waic.p_d),
                format_value(v.loo.looic),
                format_value(v.loo.p_d),
                v.loo.flagged().len()
            )?;
        }
        let flagged: usize = f.variables.iter().map(|v| v.loo.flagged().len()).sum();
        writeln!(
            out,
            "{},total,,{},{},{},{},{}",
            f.model,
            format_value(f.total_waic()),
            format_value(f.total_p_waic()),
            format_value(f.total_looic()),
            format_value(f.total_p_loo()),
            flagged
        )?;
    }
    out.flush()
}

/// Replicate statistics for one variable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplicateStats {
    pub means: Vec<f64>,
    pub zero_shares: Vec<f64>,
}

/// Posterior predictive replicates of one arm.
#[derive(Clone, Debug, PartialEq)]
pub struct PpcSummary {
    /// Observed (non-missing) values per variable.
    pub observed: [Vec<f64>; 5],
    pub stats: [ReplicateStats; 5],
    /// A few complete replicate datasets for overlays, per variable.
    pub datasets: Vec<[Vec<f64>; 5]>,
}

/// Number of replicate datasets kept whole for plotting.
pub const KEPT_DATASETS: usize = 20;

/// Draws `n_rep` synthetic datasets of the arm's size, each at a posterior
/// draw cycled in order, including hurdle zeros.
pub fn ppc_replicate(m: &ModelInstance, draws: &Chains, n_rep: usize, seed: u64) -> Result<PpcSummary, AssessError> {
    if n_rep == 0 || draws.total_draws() == 0 {
        return Err(AssessError::TooFewDraws { needed: 1, found: draws.total_draws().min(n_rep) });
    }
    let pooled = draws.pooled_draws();
    if pooled[0].len() != m.dimension() {
        return Err(AssessError::DrawShape { expected: m.dimension(), found: pooled[0].len() });
    }
    let covs = m.centred_covariates();
    let reps: Vec<[Vec<f64>; 5]> = parallel_map(n_rep, |r| {
        let p = m.arm_params(pooled[r % pooled.len()]);
        let mut rng = stream_rng(seed, r as u64);
        let mut data: [Vec<f64>; 5] = Default::default();
        for cov in &covs {
            let rec = simulate_record(m.spec(), &p, m.e_pfs_center(), cov, &mut rng);
            for (j, v) in rec.into_iter().enumerate() {
                data[j].push(v);
            }
        }
        data
    });
    let mut stats: [ReplicateStats; 5] = Default::default();
    for d in &reps {
        for j in 0..5 {
            let n = d[j].len() as f64;
            stats[j].means.push(d[j].iter().sum::<f64>() / n);
            stats[j].zero_shares.push(d[j].iter().filter(|&&x| is_structural_zero(x)).count() as f64 / n);
        }
    }
    let observed = Variable::ALL.map(|v| m.arm().observed(v));
    Ok(PpcSummary { observed, stats, datasets: reps.into_iter().take(KEPT_DATASETS).collect() })
}

/// Density, empirical-CDF and replicate-mean panels for one variable.
pub fn ppc_svg(ppc: &PpcSummary, v: Variable) -> String {
    let j = v.index();
    let name = v.name();
    let mut density = Panel::new(format!("{name}: density"), name, "density");
    let mut cdf = Panel::new(format!("{name}: empirical CDF"), name, "F");
    for (r, d) in ppc.datasets.iter().enumerate() {
        let label = if r == 0 { "replicates" } else { "" };
        density.push(Series::new(label, Mark::Line, PALETTE[0], plot::kde(&d[j], 96)).with_opacity(0.25));
        cdf.push(Series::new(label, Mark::Steps, PALETTE[0], plot::ecdf(&d[j])).with_opacity(0.25));
    }
    density.push(Series::new("observed", Mark::Line, PALETTE[1], plot::kde(&ppc.observed[j], 96)));
    cdf.push(Series::new("observed", Mark::Steps, PALETTE[1], plot::ecdf(&ppc.observed[j])));
    let mut means = Panel::new(format!("{name}: replicate means"), "mean", "density");
    means.push(Series::new("replicates", Mark::Steps, PALETTE[0], plot::histogram(&ppc.stats[j].means, 30)));
    let obs = &ppc.observed[j];
    if !obs.is_empty() {
        let obs_mean = obs.iter().sum::<f64>() / obs.len() as f64;
        means.guides.push(plot::Guide::Vertical { x: obs_mean, label: "observed mean".into() });
    }
    plot::render(&[density, cdf, means], 3)
}

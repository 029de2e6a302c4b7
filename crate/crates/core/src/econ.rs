//! Marginal means by Monte Carlo integration, increments between arms, ICER,
//! cost-effectiveness plane and acceptability curve.

use std::io::Write;

use rand::Rng;
use thiserror::Error;

use crate::data::format_value;
use crate::diagnostics::hpd;
use crate::model::{simulate_record, ArmParams, ModelInstance};
use crate::plot::{self, Guide, Mark, Panel, Series, PALETTE};
use crate::sampler::{parallel_map, stream_rng, Chains};

/// Smallest Monte Carlo sample per draw accepted by [`marginal_means`].
pub const MIN_MC: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EconError {
    #[error("n_mc must be at least {MIN_MC}, found {0}")]
    TooFewSimulations(usize),
    #[error("arms have different numbers of draws ({0} vs {1})")]
    DrawCountMismatch(usize, usize),
    #[error("mean effectiveness increment is zero: ICER undefined")]
    ZeroEffect,
    #[error("no draws")]
    NoDraws,
    #[error("willingness-to-pay grid must be non-negative and ascending")]
    BadGrid,
    #[error("draws do not match the model ({expected} coordinates expected, found {found})")]
    DrawShape { expected: usize, found: usize },
}

/// Component means at one posterior draw: e_pfs, e_pps, c_drug, c_hos, c_ae.
pub type ComponentMeans = [f64; 5];

/// Per-draw component means of one arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub components: Vec<ComponentMeans>,
}

impl ArmSummary {
    /// `μ_e = μ_pfs + μ_pps` per draw.
    pub fn mu_e(&self) -> Vec<f64> {
        self.components.iter().map(|c| c[0] + c[1]).collect()
    }

    /// `μ_c = μ_drug + μ_hos + μ_ae` per draw.
    pub fn mu_c(&self) -> Vec<f64> {
        self.components.iter().map(|c| c[2] + c[3] + c[4]).collect()
    }
}

/// Monte Carlo mean of each component at fixed parameters. Covariate rows,
/// if any, are resampled from `covariates`.
pub fn component_means<R: Rng + ?Sized>(
    m: &ModelInstance,
    p: &ArmParams,
    covariates: &[Vec<f64>],
    n_mc: usize,
    rng: &mut R,
) -> ComponentMeans {
    let mut sum = [0.0; 5];
    for _ in 0..n_mc {
        let cov: &[f64] = if m.n_covariates() == 0 || covariates.is_empty() {
            &[]
        } else {
            &covariates[rng.random_range(0..covariates.len())]
        };
        let r = simulate_record(m.spec(), p, m.e_pfs_center(), cov, rng);
        for j in 0..5 {
            sum[j] += r[j];
        }
    }
    sum.map(|s| s / n_mc as f64)
}

/// Component means at every retained draw (pooled in chain order), each
/// draw on its own RNG stream.
pub fn marginal_means(m: &ModelInstance, draws: &Chains, n_mc: usize, seed: u64) -> Result<ArmSummary, EconError> {
    if n_mc < MIN_MC {
        return Err(EconError::TooFewSimulations(n_mc));
    }
    let pooled = draws.pooled_draws();
    if pooled.is_empty() {
        return Err(EconError::NoDraws);
    }
    if pooled[0].len() != m.dimension() {
        return Err(EconError::DrawShape { expected: m.dimension(), found: pooled[0].len() });
    }
    let covs = m.centred_covariates();
    let components = parallel_map(pooled.len(), |s| {
        let p = m.arm_params(pooled[s]);
        component_means(m, &p, &covs, n_mc, &mut stream_rng(seed, s as u64))
    });
    Ok(ArmSummary { components })
}

/// Per-draw increments of arm 2 over arm 1, paired by draw index.
#[derive(Clone, Debug, PartialEq)]
pub struct Increments {
    pub delta_e: Vec<f64>,
    pub delta_c: Vec<f64>,
}

impl Increments {
    pub fn len(&self) -> usize {
        self.delta_e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_e.is_empty()
    }

    pub fn mean_delta_e(&self) -> f64 {
        mean(&self.delta_e)
    }

    pub fn mean_delta_c(&self) -> f64 {
        mean(&self.delta_c)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn increments(arm1: &ArmSummary, arm2: &ArmSummary) -> Result<Increments, EconError> {
    let (n1, n2) = (arm1.components.len(), arm2.components.len());
    if n1 != n2 {
        return Err(EconError::DrawCountMismatch(n1, n2));
    }
    if n1 == 0 {
        return Err(EconError::NoDraws);
    }
    let diff = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(x, y)| y - x).collect();
    Ok(Increments { delta_e: diff(arm1.mu_e(), arm2.mu_e()), delta_c: diff(arm1.mu_c(), arm2.mu_c()) })
}

/// Incremental cost-effectiveness ratio from mean increments.
pub fn icer(delta_e_mean: f64, delta_c_mean: f64) -> Result<f64, EconError> {
    if delta_e_mean == 0.0 {
        return Err(EconError::ZeroEffect);
    }
    Ok(delta_c_mean / delta_e_mean)
}

/// Share of draws in the sustainability area `k·Δe − Δc > 0`.
pub fn sustainability(inc: &Increments, k: f64) -> f64 {
    let n = inc.delta_e.iter().zip(&inc.delta_c).filter(|(e, c)| k * *e - *c > 0.0).count();
    n as f64 / inc.len() as f64
}

/// Cost-effectiveness plane: the draws and the sustainability share at `k`.
pub fn cep(inc: &Increments, k: f64) -> Result<(Vec<(f64, f64)>, f64), EconError> {
    if inc.is_empty() {
        return Err(EconError::NoDraws);
    }
    let points = inc.delta_e.iter().copied().zip(inc.delta_c.iter().copied()).collect();
    Ok((points, sustainability(inc, k)))
}

/// Default willingness-to-pay grid: 0 to 200000 in steps of 1000.
pub fn default_k_grid() -> Vec<f64> {
    (0..=200).map(|i| 1000.0 * i as f64).collect()
}

/// Acceptability curve over `grid`.
pub fn ceac(inc: &Increments, grid: &[f64]) -> Result<Vec<(f64, f64)>, EconError> {
    if inc.is_empty() {
        return Err(EconError::NoDraws);
    }
    if grid.iter().any(|k| !(*k >= 0.0)) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(EconError::BadGrid);
    }
    Ok(grid.iter().map(|&k| (k, sustainability(inc, k))).collect())
}

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub quantity: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub hpd95: Option<(f64, f64)>,
}

impl SummaryRow {
    pub fn of(quantity: &str, v: &[f64]) -> SummaryRow {
        let m = mean(v);
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        } else {
            f64::NAN
        };
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        SummaryRow { quantity: quantity.into(), mean: m, median, sd, hpd95: hpd(v, 0.95).ok() }
    }
}

/// Economic evaluation of two arms.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub arm1: ArmSummary,
    pub arm2: ArmSummary,
    pub increments: Increments,
    /// Full-precision ratio of mean increments; `None` when `Δe` averages 0.
    pub icer: Option<f64>,
}

impl Evaluation {
    pub fn new(arm1: ArmSummary, arm2: ArmSummary) -> Result<Evaluation, EconError> {
        let inc = increments(&arm1, &arm2)?;
        let icer = icer(inc.mean_delta_e(), inc.mean_delta_c()).ok();
        Ok(Evaluation { arm1, arm2, increments: inc, icer })
    }

    pub fn rows(&self) -> Vec<SummaryRow> {
        vec![
            SummaryRow::of("mu_e1", &self.arm1.mu_e()),
            SummaryRow::of("mu_c1", &self.arm1.mu_c()),
            SummaryRow::of("mu_e2", &self.arm2.mu_e()),
            SummaryRow::of("mu_c2", &self.arm2.mu_c()),
            SummaryRow::of("delta_e", &self.increments.delta_e),
            SummaryRow::of("delta_c", &self.increments.delta_c),
        ]
    }

    /// Summary table: one row per quantity, then the ICER (mean column only).
    pub fn write_summary<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(w);
        writeln!(out, "quantity,mean,median,sd,hpd95_lo,hpd95_hi")?;
        for r in self.rows() {
            let (lo, hi) = r.hpd95.map_or(("NA".into(), "NA".into()), |h| (format_value(h.0), format_value(h.1)));
            writeln!(out, "{},{},{},{},{lo},{hi}", r.quantity, format_value(r.mean), format_value(r.median), format_value(r.sd))?;
        }
        writeln!(out, "icer,{},NA,NA,NA,NA", self.icer.map_or("NA".into(), format_value))?;
        out.flush()
    }

    pub fn write_cep<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(w);
        writeln!(out, "draw,delta_e,delta_c")?;
        for (i, (e, c)) in self.increments.delta_e.iter().zip(&self.increments.delta_c).enumerate() {
            writeln!(out, "{},{},{}", i + 1, format_value(*e), format_value(*c))?;
        }
        out.flush()
    }
}

pub fn write_ceac<W: Write>(curve: &[(f64, f64)], w: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(w);
    writeln!(out, "k,probability")?;
    for (k, p) in curve {
        writeln!(out, "{},{}", format_value(*k), format_value(*p))?;
    }
    out.flush()
}

/// Plane scatter with the willingness-to-pay line through the origin.
pub fn cep_svg(inc: &Increments, k: f64) -> String {
    let share = sustainability(inc, k);
    let mut p = Panel::new(
        format!("Cost-effectiveness plane (k = {}, {:.1}% sustainable)", format_value(k), 100.0 * share),
        "delta_e",
        "delta_c",
    );
    let pts = inc.delta_e.iter().copied().zip(inc.delta_c.iter().copied()).collect();
    p.push(Series::new("", Mark::Points, PALETTE[0], pts).with_opacity(0.3));
    p.guides.push(Guide::Slope { intercept: 0.0, slope: k, label: format!("k = {}", format_value(k)) });
    plot::render(&[p], 1)
}

pub fn ceac_svg(curve: &[(f64, f64)]) -> String {
    let mut p = Panel::new("Cost-effectiveness acceptability curve", "willingness to pay k", "P(cost-effective)");
    p.y_range = Some((0.0, 1.0));
    p.push(Series::new("", Mark::Line, PALETTE[0], curve.to_vec()));
    plot::render(&[p], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ArmData, PatientRecord};
    use crate::model::spec::{CostFamily, ModelSpec, PfsFamily, PpsFamily};
    use crate::model::{build_model, CostParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inc(e: &[f64], c: &[f64]) -> Increments {
        Increments { delta_e: e.to_vec(), delta_c: c.to_vec() }
    }

    fn model() -> ModelInstance {
        let spec = ModelSpec::with_families(PfsFamily::Gumbel, PpsFamily::Exponential, CostFamily::Lognormal);
        let records = (0..5)
            .map(|i| PatientRecord {
                id: format!("r{i}"),
                arm: 1,
                outcomes: [Some(0.5), Some(0.2), Some(10.0), Some(20.0), Some(5.0)],
                covariates: vec![],
            })
            .collect();
        build_model(&spec, &ArmData { arm: 1, records, covariate_names: vec![] }).unwrap()
    }

    fn params(pi_drug_logit: f64) -> ArmParams {
        ArmParams {
            pfs_mean: vec![0.6],
            pfs_sd: 0.2,
            pps_zero: vec![-1.0, 0.5],
            pps_mean: vec![-0.5, 0.3],
            pps_ancillary: None,
            costs: [
                CostParams { zero: vec![pi_drug_logit, 0.0, 0.0], mean: vec![7.0, 0.0, 0.0], sd: 0.8 },
                CostParams { zero: vec![-1.0, 0.1, 0.1, 0.05], mean: vec![6.0, 0.2, 0.1, 0.05], sd: 0.6 },
                CostParams { zero: vec![0.0, 0.1, 0.1, 0.02, 0.02], mean: vec![5.0, 0.1, 0.1, 0.02, 0.02], sd: 0.7 },
            ],
        }
    }

    #[test]
    fn hurdle_lognormal_mean() {
        let m = model();
        let logit = (0.3f64 / 0.7).ln();
        let p = params(logit);
        let n = 20000;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            draws.push(simulate_record(m.spec(), &p, 0.0, &[], &mut rng)[2]);
        }
        let mc = draws.iter().sum::<f64>() / n as f64;
        let se = (draws.iter().map(|x| (x - mc).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
        let exact = 0.7 * (7.0f64 + 0.5 * 0.8 * 0.8).exp();
        assert!((mc - exact).abs() < 3.0 * se, "{mc} {exact} {se}");
        let c = component_means(&m, &p, &[], n, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(c[2], mc);
        // gumbel e_pfs is parameterized by its mean
        assert!((c[0] - 0.6).abs() < 3.0 * 0.2 / (n as f64).sqrt());
        let c = component_means(&m, &params(60.0), &[], 1000, &mut rng);
        assert_eq!(c[2], 0.0);
    }

    #[test]
    fn mc_error_halves_when_n_quadruples() {
        let m = model();
        let p = params(0.0);
        let exact = 0.5 * (7.0f64 + 0.32).exp();
        let rmse = |n: usize| {
            let e: f64 = (0..200)
                .map(|s| (component_means(&m, &p, &[], n, &mut stream_rng(5, s))[2] - exact).powi(2))
                .sum::<f64>()
                / 200.0;
            e.sqrt()
        };
        let ratio = rmse(500) / rmse(2000);
        assert!((1.6..2.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn aggregation_is_exact() {
        let a = ArmSummary { components: vec![[0.1, 0.2, 1.0, 2.0, 3.0], [0.3, 0.7, 5.0, 6.0, 7.5]] };
        let b = ArmSummary { components: vec![[0.2, 0.2, 1.5, 2.0, 3.0], [0.3, 0.9, 5.0, 6.5, 7.0]] };
        for (c, (e, t)) in a.components.iter().zip(a.mu_e().iter().zip(a.mu_c())) {
            assert_eq!(*e, c[0] + c[1]);
            assert_eq!(t, c[2] + c[3] + c[4]);
        }
        let d = increments(&a, &b).unwrap();
        assert_eq!(d.delta_e, vec![(0.2 + 0.2) - (0.1 + 0.2), (0.3 + 0.9) - (0.3 + 0.7)]);
        assert_eq!(d.delta_c, vec![6.5 - 6.0, 18.5 - 18.5]);
        let same = increments(&a, &a).unwrap();
        assert!(same.delta_e.iter().chain(&same.delta_c).all(|&x| x == 0.0));
        let short = ArmSummary { components: vec![[0.0; 5]] };
        assert_eq!(increments(&a, &short), Err(EconError::DrawCountMismatch(2, 1)));
    }

    #[test]
    fn icer_cases() {
        assert!((icer(0.14, 11460.0).unwrap() - 81857.142857142857).abs() < 1e-6);
        assert_eq!(icer(0.5, 0.0).unwrap(), 0.0);
        assert_eq!(icer(0.0, 10.0), Err(EconError::ZeroEffect));
    }

    #[test]
    fn cep_and_ceac() {
        let all_east = inc(&[1.0; 4], &[0.0; 4]);
        assert_eq!(cep(&all_east, 1.0).unwrap().1, 1.0);
        // draws cross the line k·Δe = Δc at k = 1000, 2000, 3000, 4000
        let d = inc(&[1.0, 1.0, 2.0, 0.5], &[1000.0, 2000.0, 6000.0, 2000.0]);
        let curve = ceac(&d, &[0.0, 999.0, 1000.0, 1500.0, 2500.0, 3500.0, 4500.0]).unwrap();
        let probs: Vec<f64> = curve.iter().map(|c| c.1).collect();
        assert_eq!(probs, vec![0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0]);
        for &(k, p) in &curve {
            assert_eq!(p, cep(&d, k).unwrap().1);
        }
        assert_eq!(ceac(&d, &[2.0, 1.0]), Err(EconError::BadGrid));
        assert_eq!(ceac(&d, &[-1.0]), Err(EconError::BadGrid));
        let grid = default_k_grid();
        assert_eq!((grid.len(), grid[1], grid[200]), (201, 1000.0, 200000.0));
    }

    #[test]
    fn symmetric_cloud_is_half_sustainable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20000;
        let mut e = Vec::new();
        let mut c = Vec::new();
        for _ in 0..n {
            let x: f64 = rng.random_range(-1.0..1.0);
            let y: f64 = rng.random_range(-1.0..1.0);
            e.push(x);
            c.push(2.0 * x + y);
        }
        let p = sustainability(&inc(&e, &c), 2.0);
        assert!((p - 0.5).abs() < 0.015, "{p}");
    }

    #[test]
    fn summary_table_layout() {
        let a = ArmSummary { components: (0..40).map(|i| [0.1 * i as f64, 0.2, 1.0, 2.0, 3.0]).collect() };
        let b = ArmSummary { components: (0..40).map(|i| [0.1 * i as f64, 0.4, 1.5, 2.0, 3.0]).collect() };
        let ev = Evaluation::new(a, b).unwrap();
        assert!((ev.icer.unwrap() - 2.5).abs() < 1e-12);
        let mut buf = Vec::new();
        ev.write_summary(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "quantity,mean,median,sd,hpd95_lo,hpd95_hi");
        assert_eq!(lines.len(), 8);
        assert!(lines[7].starts_with("icer,2.5"));
        let svg = cep_svg(&ev.increments, 55000.0);
        assert!(svg.contains("k = 55000"));
    }
}

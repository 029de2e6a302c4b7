//! Convergence diagnostics: split R̂, effective sample size, HPD intervals,
//! the diagnostics table and trace/density plots.

use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::data::format_value;
use crate::plot::{self, Mark, Panel, Series, PALETTE};
use crate::sampler::Chains;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticError {
    #[error("need at least {needed} draws per split half, found {found}")]
    TooFewDraws { needed: usize, found: usize },
    #[error("chains have unequal lengths")]
    Ragged,
    #[error("zero within-chain variance: diagnostic undefined")]
    ZeroVariance,
    #[error("HPD needs at least 20 samples, found {0}")]
    TooFewSamples(usize),
    #[error("mass {0} outside (0, 1]")]
    Mass(f64),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Splits each chain into halves, dropping the middle draw of odd chains.
fn split(chains: &[Vec<f64>]) -> Result<Vec<&[f64]>, DiagnosticError> {
    let n = chains.first().map_or(0, |c| c.len());
    if chains.iter().any(|c| c.len() != n) {
        return Err(DiagnosticError::Ragged);
    }
    let half = n / 2;
    if half < 4 {
        return Err(DiagnosticError::TooFewDraws { needed: 4, found: half });
    }
    Ok(chains.iter().flat_map(|c| [&c[..half], &c[n - half..]]).collect())
}

/// Within-chain and between-chain variance of equal-length sequences.
fn w_and_b(parts: &[&[f64]]) -> (f64, f64) {
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = mean(&parts.iter().map(|p| variance(p)).collect::<Vec<_>>());
    let b = n * variance(&means);
    (w, b)
}

/// Classic split R̂ over the halves of each chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64, DiagnosticError> {
    let parts = split(chains)?;
    let (w, b) = w_and_b(&parts);
    if !(w > 0.0) {
        return Err(DiagnosticError::ZeroVariance);
    }
    let n = parts[0].len() as f64;
    Ok((((n - 1.0) / n * w + b / n) / w).sqrt())
}

/// Biased autocovariance at all lags via FFT.
fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Effective sample size over split chains, with Geyer's initial positive
/// and initial monotone sequence truncation of the combined autocorrelation.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64, DiagnosticError> {
    let parts = split(chains)?;
    let m = parts.len();
    let n = parts[0].len();
    let acov: Vec<Vec<f64>> = parts.iter().map(|p| autocovariance(p)).collect();
    let nf = n as f64;
    let chain_var: Vec<f64> = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).collect();
    let w = mean(&chain_var);
    if !(w > 0.0) {
        return Err(DiagnosticError::ZeroVariance);
    }
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let b_over_n = if m > 1 { variance(&means) } else { 0.0 };
    let var_plus = w * (nf - 1.0) / nf + b_over_n;
    let rho = |t: usize| 1.0 - (w - mean(&acov.iter().map(|a| a[t]).collect::<Vec<_>>())) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    rho_hat[1] = rho(1);
    let antithetic = rho_hat[0] + rho_hat[1] <= 0.0;
    let mut even = rho_hat[0];
    let mut odd = rho_hat[1];
    let mut t = 0;
    // initial positive sequence
    while t + 3 < n && even + odd > 0.0 {
        even = rho(t + 2);
        odd = rho(t + 3);
        if even + odd >= 0.0 {
            rho_hat[t + 2] = even;
            rho_hat[t + 3] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 {
        rho_hat[max_t + 1] = even;
    }
    // initial monotone sequence
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let sum: f64 = rho_hat[..=max_t].iter().sum();
    let mut tau = if antithetic {
        // first autocorrelation pair already non-positive
        -1.0 + 2.0 * (1.0 + rho(1))
    } else {
        -1.0 + 2.0 * sum + rho_hat[max_t + 1]
    };
    // super-efficient chains: floor as in common practice
    tau = tau.max(1.0 / total.log10());
    Ok(total / tau)
}

/// Shortest window of sorted samples holding `⌈mass·S⌉` of them; ties go
/// to the lowest lower bound.
pub fn hpd(samples: &[f64], mass: f64) -> Result<(f64, f64), DiagnosticError> {
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(DiagnosticError::Mass(mass));
    }
    if samples.len() < 20 {
        return Err(DiagnosticError::TooFewSamples(samples.len()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = 0;
    for i in 1..=n - k {
        if s[i + k - 1] - s[i] < s[best + k - 1] - s[best] {
            best = i;
        }
    }
    Ok((s[best], s[best + k - 1]))
}

/// One row of the diagnostics table; `None` marks an undefined diagnostic.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticRow {
    pub param: String,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    pub mean: f64,
    pub sd: f64,
    pub hpd50: Option<(f64, f64)>,
    pub hpd95: Option<(f64, f64)>,
}

impl DiagnosticRow {
    pub fn for_draws(param: &str, chains: &[Vec<f64>]) -> DiagnosticRow {
        let pooled = chains.concat();
        let sd = if pooled.len() > 1 { variance(&pooled).sqrt() } else { f64::NAN };
        DiagnosticRow {
            param: param.to_string(),
            rhat: split_rhat(chains).ok(),
            ess: ess(chains).ok(),
            mean: if pooled.is_empty() { f64::NAN } else { mean(&pooled) },
            sd,
            hpd50: hpd(&pooled, 0.5).ok(),
            hpd95: hpd(&pooled, 0.95).ok(),
        }
    }
}

/// Diagnostics for every parameter of `chains`.
pub fn summarize(chains: &Chains) -> Vec<DiagnosticRow> {
    (0..chains.names.len()).map(|j| DiagnosticRow::for_draws(&chains.names[j], &chains.param(j))).collect()
}

pub const TABLE_HEADER: &str = "param,rhat,ess_bulk,mean,sd,hpd50_lo,hpd50_hi,hpd95_lo,hpd95_hi";

/// Writes the diagnostics table; undefined entries are written as `NA`.
pub fn write_table<W: Write>(rows: &[DiagnosticRow], w: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(w);
    writeln!(out, "{TABLE_HEADER}")?;
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), format_value);
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.param,
            opt(r.rhat),
            opt(r.ess),
            format_value(r.mean),
            format_value(r.sd),
            opt(r.hpd50.map(|h| h.0)),
            opt(r.hpd50.map(|h| h.1)),
            opt(r.hpd95.map(|h| h.0)),
            opt(r.hpd95.map(|h| h.1)),
        )?;
    }
    out.flush()
}

/// Trace and density panels (one row per parameter, chains overlaid).
pub fn trace_density_svg(chains: &Chains, params: &[&str]) -> Result<String, DiagnosticError> {
    let mut panels = Vec::new();
    for &name in params {
        let j = chains.index_of(name).ok_or_else(|| DiagnosticError::UnknownParameter(name.to_string()))?;
        let draws = chains.param(j);
        let mut trace = Panel::new(format!("{name}: trace"), "iteration", name);
        let mut density = Panel::new(format!("{name}: density"), name, "density");
        for (c, d) in draws.iter().enumerate() {
            let color = PALETTE[c % PALETTE.len()];
            let label = format!("chain {}", c + 1);
            let pts = d.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect();
            trace.push(Series::new(label.clone(), Mark::Line, color, pts).with_opacity(0.7));
            density.push(Series::new(label, Mark::Line, color, plot::kde(d, 128)));
        }
        panels.push(trace);
        panels.push(density);
    }
    Ok(plot::render(&panels, 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn rhat_brute(chains: &[Vec<f64>]) -> f64 {
        let mut halves = Vec::new();
        for c in chains {
            let h = c.len() / 2;
            halves.push(c[..h].to_vec());
            halves.push(c[c.len() - h..].to_vec());
        }
        let n = halves[0].len() as f64;
        let m = halves.len() as f64;
        let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
        let grand = means.iter().sum::<f64>() / m;
        let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
        let w = halves
            .iter()
            .zip(&means)
            .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
            .sum::<f64>()
            / m;
        (((n - 1.0) / n * w + b / n) / w).sqrt()
    }

    #[test]
    fn rhat_same_distribution() {
        let c = vec![normals(1, 5000), normals(2, 5000)];
        let r = split_rhat(&c).unwrap();
        assert!((1.0 - 1e-3..=1.01).contains(&r), "{r}");
        assert!((r - rhat_brute(&c)).abs() < 1e-12);
    }

    #[test]
    fn rhat_separated_means() {
        let c = vec![normals(1, 1000), normals(2, 1000).iter().map(|x| x + 10.0).collect()];
        let r = split_rhat(&c).unwrap();
        assert!(r > 1.1);
        assert!((r - rhat_brute(&c)).abs() < 1e-10 * r);
    }

    #[test]
    fn rhat_identical_halves() {
        let half = normals(3, 100);
        let c = vec![[half.clone(), half].concat()];
        assert!((split_rhat(&c).unwrap() - (99.0f64 / 100.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rhat_affine_invariant() {
        let c = vec![normals(4, 300), normals(5, 300).iter().map(|x| x + 0.3).collect()];
        let t: Vec<Vec<f64>> = c.iter().map(|v| v.iter().map(|x| 3.0 * x - 7.0).collect()).collect();
        assert!((split_rhat(&c).unwrap() - split_rhat(&t).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn zero_variance_is_undefined() {
        let c = vec![vec![1.0; 100], vec![1.0; 100]];
        assert_eq!(split_rhat(&c), Err(DiagnosticError::ZeroVariance));
        assert_eq!(ess(&c), Err(DiagnosticError::ZeroVariance));
        assert!(matches!(split_rhat(&[vec![1.0, 2.0, 3.0]]), Err(DiagnosticError::TooFewDraws { .. })));
    }

    #[test]
    fn ess_of_independent_draws() {
        let c = vec![normals(6, 4000), normals(7, 4000)];
        let e = ess(&c).unwrap();
        assert!((e / 8000.0 - 1.0).abs() < 0.1, "{e}");
    }

    #[test]
    fn ess_of_ar1() {
        let rho: f64 = 0.9;
        let ar = |seed| {
            let z = normals(seed, 20000);
            let mut x = vec![0.0; z.len()];
            for i in 1..z.len() {
                x[i] = rho * x[i - 1] + (1.0 - rho * rho).sqrt() * z[i];
            }
            x
        };
        let c = vec![ar(8), ar(9)];
        let e = ess(&c).unwrap();
        let want = 40000.0 * (1.0 - rho) / (1.0 + rho);
        assert!((e / want - 1.0).abs() < 0.25, "{e} vs {want}");
    }

    #[test]
    fn ess_of_alternating_chain_exceeds_draws() {
        let c: Vec<Vec<f64>> = (0..2).map(|k| (0..1000).map(|i| if (i + k) % 2 == 0 { 1.0 } else { -1.0 }).collect()).collect();
        let e = ess(&c).unwrap();
        assert!(e > 2000.0, "{e}");
    }

    #[test]
    fn hpd_on_integers() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(hpd(&s, 0.95).unwrap(), (1.0, 95.0));
        assert_eq!(hpd(&s, 1.0).unwrap(), (1.0, 100.0));
        assert_eq!(hpd(&s, 0.0), Err(DiagnosticError::Mass(0.0)));
        assert_eq!(hpd(&s, 1.5), Err(DiagnosticError::Mass(1.5)));
        assert_eq!(hpd(&s[..10], 0.5), Err(DiagnosticError::TooFewSamples(10)));
    }

    #[test]
    fn hpd_matches_equal_tail_for_symmetric_samples() {
        let s = normals(10, 20000);
        let (lo, hi) = hpd(&s, 0.95).unwrap();
        assert!((lo + 1.96).abs() < 0.08 && (hi - 1.96).abs() < 0.08, "{lo} {hi}");
    }

    #[test]
    fn trace_plot_overlays_chains() {
        use crate::sampler::ChainOutput;
        let chain = |v: f64| ChainOutput {
            unconstrained: vec![],
            constrained: vec![vec![v]; 50],
            divergent: vec![false; 50],
            energy: vec![0.0; 50],
            accept_stat: vec![],
            n_leapfrog: vec![],
            step_size: 1.0,
            inv_metric: vec![],
            warmup_divergent: 0,
            warmup_leapfrog: 0,
        };
        let c = Chains { names: vec!["a".into()], chains: vec![chain(1.0), chain(2.0)] };
        let svg = trace_density_svg(&c, &["a"]).unwrap();
        assert_eq!(svg, trace_density_svg(&c, &["a"]).unwrap());
        assert!(svg.contains(PALETTE[0]) && svg.contains(PALETTE[1]));
        assert!(trace_density_svg(&c, &["b"]).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn hpd_window_is_shortest(v in prop::collection::vec(-100.0..100.0f64, 20..80), mass in 0.05..1.0f64) {
            let (lo, hi) = hpd(&v, mass).unwrap();
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            let k = (mass * s.len() as f64).ceil() as usize;
            let inside = s.iter().filter(|&&x| x >= lo && x <= hi).count();
            prop_assert!(inside >= k);
            for i in 0..=s.len() - k {
                prop_assert!(s[i + k - 1] - s[i] >= hi - lo);
            }
        }
    }
}

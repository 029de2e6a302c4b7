//! Adaptive Hamiltonian Monte Carlo: multinomial no-U-turn trajectories (or
//! fixed-length HMC) with a diagonal metric, dual-averaging step size and
//! windowed metric adaptation during warmup.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::format_value;

/// Energy error beyond which a trajectory is declared divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

/// Share of divergent post-warmup transitions above which a run is marked
/// unreliable.
pub const UNRELIABLE_DIVERGENCE_SHARE: f64 = 0.10;

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns `log p(x)` and writes its gradient; non-finite values are
    /// treated as outside the support.
    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("chain {chain}: no finite initial point after {attempts} attempts")]
    Initialization { chain: usize, attempts: usize },
    #[error("chain {chain}: step size search failed")]
    StepSize { chain: usize },
    #[error("draw file: {0}")]
    DrawFile(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Nuts,
    /// Fixed number of leapfrog steps per transition.
    Hmc { steps: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Iterations per chain, warmup included.
    pub iterations: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub init_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 2,
            iterations: 15_000,
            warmup: 3_000,
            target_accept: 0.8,
            max_depth: 10,
            seed: 1,
            algorithm: Algorithm::Nuts,
            init_attempts: 100,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::Config(m.to_string()));
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.warmup >= self.iterations {
            return bad("warmup must be smaller than iterations");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if let Algorithm::Hmc { steps: 0 } = self.algorithm {
            return bad("HMC needs at least one leapfrog step");
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations - self.warmup
    }
}

/// Position, momentum and cached log density/gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    pub fn new<D: LogDensity + ?Sized>(target: &D, q: Vec<f64>, p: Vec<f64>) -> PhasePoint {
        let mut grad = vec![0.0; q.len()];
        let logp = target.logp_grad(&q, &mut grad);
        PhasePoint { q, p, grad, logp }
    }

    pub fn kinetic(&self, inv_metric: &[f64]) -> f64 {
        0.5 * self.p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    /// Hamiltonian; `+inf` outside the support.
    pub fn hamiltonian(&self, inv_metric: &[f64]) -> f64 {
        let h = -self.logp + self.kinetic(inv_metric);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }
}

/// `steps` leapfrog steps of size `eps` under the diagonal metric.
/// Returns false if the log density became non-finite.
pub fn leapfrog<D: LogDensity + ?Sized>(
    target: &D,
    z: &mut PhasePoint,
    inv_metric: &[f64],
    eps: f64,
    steps: usize,
) -> bool {
    for _ in 0..steps {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(inv_metric) {
            *q += eps * m * p;
        }
        z.logp = target.logp_grad(&z.q, &mut z.grad);
        if !z.logp.is_finite() {
            return false;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }
    true
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_to(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn sharp(p: &[f64], inv_metric: &[f64]) -> Vec<f64> {
    p.iter().zip(inv_metric).map(|(p, m)| p * m).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Outcome of one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub accept_stat: f64,
    pub divergent: bool,
    pub energy: f64,
    pub n_leapfrog: usize,
    pub depth: usize,
}

struct TreeStats {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
    h0: f64,
}

struct Nuts<'a, D: LogDensity + ?Sized> {
    target: &'a D,
    inv_metric: &'a [f64],
    eps: f64,
}

/// Slots filled by a subtree: its proposal, edge momenta and summed momenta.
struct Subtree {
    propose: PhasePoint,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    rho: Vec<f64>,
    log_sum_weight: f64,
}

impl<D: LogDensity + ?Sized> Nuts<'_, D> {
    /// Extends the trajectory from `z` by `2^depth` leapfrog steps in
    /// direction `sign`; `None` when the subtree diverged or turned.
    fn build_tree(
        &self,
        depth: usize,
        z: &mut PhasePoint,
        sign: f64,
        stats: &mut TreeStats,
        rng: &mut ChaCha8Rng,
    ) -> Option<Subtree> {
        if depth == 0 {
            let ok = leapfrog(self.target, z, self.inv_metric, sign * self.eps, 1);
            stats.n_leapfrog += 1;
            let h = if ok { z.hamiltonian(self.inv_metric) } else { f64::INFINITY };
            if h - stats.h0 > MAX_DELTA_H || !ok {
                stats.divergent = true;
            }
            let lw = stats.h0 - h;
            stats.sum_metro_prob += if lw > 0.0 { 1.0 } else { lw.exp() };
            if stats.divergent {
                return None;
            }
            let ps = sharp(&z.p, self.inv_metric);
            return Some(Subtree {
                propose: z.clone(),
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
                p_sharp_beg: ps.clone(),
                p_sharp_end: ps,
                rho: z.p.clone(),
                log_sum_weight: lw,
            });
        }
        let init = self.build_tree(depth - 1, z, sign, stats, rng)?;
        let fin = self.build_tree(depth - 1, z, sign, stats, rng)?;
        let lsw = log_add(init.log_sum_weight, fin.log_sum_weight);
        let take_final = if fin.log_sum_weight > lsw {
            true
        } else {
            rng.random::<f64>() < (fin.log_sum_weight - lsw).exp()
        };
        let mut rho = init.rho.clone();
        add_to(&mut rho, &fin.rho);
        let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho);
        let mut ext = init.rho.clone();
        add_to(&mut ext, &fin.p_beg);
        persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &ext);
        let mut ext = fin.rho.clone();
        add_to(&mut ext, &init.p_end);
        persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &ext);
        if !persist {
            return None;
        }
        Some(Subtree {
            propose: if take_final { fin.propose } else { init.propose },
            p_beg: init.p_beg,
            p_end: fin.p_end,
            p_sharp_beg: init.p_sharp_beg,
            p_sharp_end: fin.p_sharp_end,
            rho,
            log_sum_weight: lsw,
        })
    }

    fn transition(&self, z0: &mut PhasePoint, max_depth: usize, rng: &mut ChaCha8Rng) -> Transition {
        for (p, m) in z0.p.iter_mut().zip(self.inv_metric) {
            *p = rng.sample::<f64, _>(StandardNormal) / m.sqrt();
        }
        let h0 = z0.hamiltonian(self.inv_metric);
        let mut stats = TreeStats { n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false, h0 };
        let mut z_fwd = z0.clone();
        let mut z_bwd = z0.clone();
        let mut sample = z0.clone();
        // momenta (and metric-scaled momenta) at the two trajectory edges
        let mut p_fwd = z0.p.clone();
        let mut p_bwd = z0.p.clone();
        let mut ps_fwd = sharp(&z0.p, self.inv_metric);
        let mut ps_bwd = ps_fwd.clone();
        let mut rho = z0.p.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;
        while depth < max_depth {
            let forward = rng.random::<f64>() > 0.5;
            let z_edge = if forward { &mut z_fwd } else { &mut z_bwd };
            let Some(t) = self.build_tree(depth, z_edge, if forward { 1.0 } else { -1.0 }, &mut stats, rng) else {
                break;
            };
            depth += 1;
            // the old trajectory edge adjacent to the new subtree, and the far one
            let (p_near, ps_near, ps_far) = if forward { (&p_fwd, &ps_fwd, &ps_bwd) } else { (&p_bwd, &ps_bwd, &ps_fwd) };
            let mut total = rho.clone();
            add_to(&mut total, &t.rho);
            let mut persist = no_u_turn(ps_far, &t.p_sharp_end, &total);
            let mut ext = rho.clone();
            add_to(&mut ext, &t.p_beg);
            persist &= no_u_turn(ps_far, &t.p_sharp_beg, &ext);
            let mut ext = t.rho.clone();
            add_to(&mut ext, p_near);
            persist &= no_u_turn(ps_near, &t.p_sharp_end, &ext);

            if t.log_sum_weight > log_sum_weight
                || rng.random::<f64>() < (t.log_sum_weight - log_sum_weight).exp()
            {
                sample = t.propose;
            }
            log_sum_weight = log_add(log_sum_weight, t.log_sum_weight);
            rho = total;
            if forward {
                p_fwd = t.p_end;
                ps_fwd = t.p_sharp_end;
            } else {
                p_bwd = t.p_end;
                ps_bwd = t.p_sharp_end;
            }
            if !persist {
                break;
            }
        }
        let energy = sample.hamiltonian(self.inv_metric);
        *z0 = sample;
        Transition {
            accept_stat: if stats.n_leapfrog > 0 { stats.sum_metro_prob / stats.n_leapfrog as f64 } else { 0.0 },
            divergent: stats.divergent,
            energy,
            n_leapfrog: stats.n_leapfrog,
            depth,
        }
    }
}

fn hmc_transition<D: LogDensity + ?Sized>(
    target: &D,
    z0: &mut PhasePoint,
    inv_metric: &[f64],
    eps: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Transition {
    for (p, m) in z0.p.iter_mut().zip(inv_metric) {
        *p = rng.sample::<f64, _>(StandardNormal) / m.sqrt();
    }
    let h0 = z0.hamiltonian(inv_metric);
    let mut z = z0.clone();
    let ok = leapfrog(target, &mut z, inv_metric, eps, steps);
    let h = if ok { z.hamiltonian(inv_metric) } else { f64::INFINITY };
    let divergent = h - h0 > MAX_DELTA_H || !ok;
    let accept = if h.is_finite() { (h0 - h).exp().min(1.0) } else { 0.0 };
    if rng.random::<f64>() < accept {
        *z0 = z;
    }
    Transition { accept_stat: accept, divergent, energy: z0.hamiltonian(inv_metric), n_leapfrog: steps, depth: 0 }
}

/// Dual averaging of `log eps` towards a target acceptance statistic.
#[derive(Clone, Debug)]
pub struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(eps: f64, target: f64) -> Self {
        DualAveraging { mu: (10.0 * eps).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0, target }
    }

    /// Updates with one acceptance statistic and returns the next step size.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = w * x + (1.0 - w) * self.x_bar;
        x.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean/variance (Welford) for metric estimation.
#[derive(Clone, Debug)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Welford { n: 0.0, mean: vec![0.0; d], m2: vec![0.0; d] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Variance shrunk towards 1e-3, as used for the inverse metric.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = if n > 1.0 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Metric-adaptation windows `[start, end)` inside warmup: a 30-iteration
/// initial buffer, doubling slow windows from 20, and a 50-iteration final
/// step-size buffer. Short warmups scale these to 15% / 75% / 10%.
pub fn adaptation_windows(warmup: usize) -> Vec<(usize, usize)> {
    let (mut init, mut term, mut base) = (30usize, 50usize, 20usize);
    if warmup < 20 {
        return Vec::new();
    }
    if init + term + base > warmup {
        init = (0.15 * warmup as f64) as usize;
        term = (0.1 * warmup as f64) as usize;
        base = warmup - init - term;
    }
    let slow_end = warmup - term;
    let mut out = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < slow_end {
        let mut end = start + size;
        if end + 2 * size > slow_end {
            end = slow_end;
        }
        out.push((start, end));
        start = end;
        size *= 2;
    }
    out
}

/// Doubles or halves `eps` until a one-step acceptance crosses 0.8.
fn initial_step_size<D: LogDensity + ?Sized>(
    target: &D,
    z: &PhasePoint,
    inv_metric: &[f64],
    mut eps: f64,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let mut direction = 0.0;
    for _ in 0..200 {
        let mut w = z.clone();
        for (p, m) in w.p.iter_mut().zip(inv_metric) {
            *p = rng.sample::<f64, _>(StandardNormal) / m.sqrt();
        }
        let h0 = w.hamiltonian(inv_metric);
        let ok = leapfrog(target, &mut w, inv_metric, eps, 1);
        let h = if ok { w.hamiltonian(inv_metric) } else { f64::INFINITY };
        let delta = h0 - h;
        let accept_high = delta > 0.8f64.ln();
        if direction == 0.0 {
            direction = if accept_high { 1.0 } else { -1.0 };
        }
        if direction > 0.0 && !accept_high {
            return Some(eps);
        }
        if direction < 0.0 && accept_high {
            return Some(eps);
        }
        eps = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if eps > 1e7 || eps < 1e-300 {
            return None;
        }
    }
    Some(eps)
}

/// Per-chain output.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainOutput {
    /// Post-warmup draws on the unconstrained scale.
    pub unconstrained: Vec<Vec<f64>>,
    /// Post-warmup draws on the constrained scale.
    pub constrained: Vec<Vec<f64>>,
    pub divergent: Vec<bool>,
    pub energy: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub n_leapfrog: Vec<usize>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub warmup_divergent: usize,
    /// Leapfrog steps spent in warmup.
    pub warmup_leapfrog: usize,
}

/// Draws from all chains, ordered by chain index.
#[derive(Clone, Debug, PartialEq)]
pub struct Chains {
    pub names: Vec<String>,
    pub chains: Vec<ChainOutput>,
}

impl Chains {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.first().map_or(0, |c| c.constrained.len())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.constrained.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Constrained draws of coordinate `j`, one vector per chain.
    pub fn param(&self, j: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.constrained.iter().map(|d| d[j]).collect()).collect()
    }

    /// Constrained draws of coordinate `j` pooled across chains in chain order.
    pub fn pooled(&self, j: usize) -> Vec<f64> {
        self.param(j).concat()
    }

    /// Constrained draw vectors pooled in chain order.
    pub fn pooled_draws(&self) -> Vec<&[f64]> {
        self.chains.iter().flat_map(|c| c.constrained.iter().map(|d| d.as_slice())).collect()
    }

    pub fn pooled_unconstrained(&self) -> Vec<&[f64]> {
        self.chains.iter().flat_map(|c| c.unconstrained.iter().map(|d| d.as_slice())).collect()
    }

    pub fn divergent_count(&self) -> usize {
        self.chains.iter().map(|c| c.divergent.iter().filter(|&&d| d).count()).sum()
    }

    pub fn divergent_share(&self) -> f64 {
        let n = self.total_draws();
        if n == 0 {
            0.0
        } else {
            self.divergent_count() as f64 / n as f64
        }
    }

    pub fn is_reliable(&self) -> bool {
        self.divergent_share() <= UNRELIABLE_DIVERGENCE_SHARE
    }

    /// Writes `chain,iter,divergent,energy,<names...>` with constrained values.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(w);
        let mut header = vec!["chain".to_string(), "iter".into(), "divergent".into(), "energy".into()];
        header.extend(self.names.iter().cloned());
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for (ci, c) in self.chains.iter().enumerate() {
            for (i, d) in c.constrained.iter().enumerate() {
                line.clear();
                line.push_str(&format!("{},{},{},{}", ci + 1, i + 1, c.divergent[i] as u8, format_value(c.energy[i])));
                for v in d {
                    line.push(',');
                    line.push_str(&format_value(*v));
                }
                writeln!(out, "{line}")?;
            }
        }
        out.flush()
    }

    /// Reads a draw file written by [`write_csv`](Self::write_csv). Only the
    /// constrained view is available; the unconstrained view is left empty.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Chains, SamplerError> {
        let err = |m: String| SamplerError::DrawFile(m);
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| err("empty file".into()))?.map_err(|e| err(e.to_string()))?;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.len() < 4 || cols[..4] != ["chain", "iter", "divergent", "energy"] {
            return Err(err("header must start with chain,iter,divergent,energy".into()));
        }
        let names: Vec<String> = cols[4..].iter().map(|s| s.to_string()).collect();
        let mut chains: Vec<ChainOutput> = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != cols.len() {
                return Err(err(format!("row {} has {} fields, expected {}", row + 1, fields.len(), cols.len())));
            }
            let num = |s: &str| -> Result<f64, SamplerError> {
                s.parse::<f64>().map_err(|_| err(format!("row {}: non-numeric value {s:?}", row + 1)))
            };
            let chain = fields[0].parse::<usize>().map_err(|_| err(format!("row {}: bad chain index", row + 1)))?;
            if chain == 0 || chain > chains.len() + 1 {
                return Err(err(format!("row {}: chains must be numbered 1, 2, ...", row + 1)));
            }
            if chain > chains.len() {
                chains.push(ChainOutput {
                    unconstrained: Vec::new(),
                    constrained: Vec::new(),
                    divergent: Vec::new(),
                    energy: Vec::new(),
                    accept_stat: Vec::new(),
                    n_leapfrog: Vec::new(),
                    step_size: f64::NAN,
                    inv_metric: Vec::new(),
                    warmup_divergent: 0,
                    warmup_leapfrog: 0,
                });
            }
            let c = &mut chains[chain - 1];
            c.divergent.push(fields[2] == "1");
            c.energy.push(num(fields[3])?);
            c.constrained.push(fields[4..].iter().map(|s| num(s)).collect::<Result<_, _>>()?);
        }
        Ok(Chains { names, chains })
    }
}

fn thread_cap() -> usize {
    std::env::var("PSWEAVE_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f(i)` for `i in 0..n` on at most `PSWEAVE_THREADS` workers and
/// returns the results in index order.
pub fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    let workers = thread_cap().min(n).max(1);
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                results.lock().expect("result slot lock")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("result slot lock").into_iter().map(|r| r.expect("every index computed")).collect()
}

/// Independent RNG stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs all chains; deterministic given `config.seed`.
pub fn sample<D: LogDensity + ?Sized>(target: &D, config: &SamplerConfig) -> Result<Chains, SamplerError> {
    config.validate()?;
    if target.dim() == 0 {
        return Err(SamplerError::Config("target has dimension 0".into()));
    }
    let results = parallel_map(config.chains, |c| run_chain(target, config, c));
    let chains = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Chains { names: target.param_names(), chains })
}

fn run_chain<D: LogDensity + ?Sized>(target: &D, config: &SamplerConfig, chain: usize) -> Result<ChainOutput, SamplerError> {
    let mut rng = stream_rng(config.seed, chain as u64);
    let d = target.dim();
    let mut z = None;
    for _ in 0..config.init_attempts {
        let q = target.initial_point(&mut rng);
        let pt = PhasePoint::new(target, q, vec![0.0; d]);
        if pt.logp.is_finite() && pt.grad.iter().all(|g| g.is_finite()) {
            z = Some(pt);
            break;
        }
    }
    let mut z = z.ok_or(SamplerError::Initialization { chain, attempts: config.init_attempts })?;
    let mut inv_metric = vec![1.0; d];
    let mut eps = initial_step_size(target, &z, &inv_metric, 1.0, &mut rng).ok_or(SamplerError::StepSize { chain })?;
    let mut da = DualAveraging::new(eps, config.target_accept);
    let windows = adaptation_windows(config.warmup);
    let mut window = 0usize;
    let mut welford = Welford::new(d);

    let retained = config.retained();
    let mut out = ChainOutput {
        unconstrained: Vec::with_capacity(retained),
        constrained: Vec::with_capacity(retained),
        divergent: Vec::with_capacity(retained),
        energy: Vec::with_capacity(retained),
        accept_stat: Vec::with_capacity(retained),
        n_leapfrog: Vec::with_capacity(retained),
        step_size: eps,
        inv_metric: Vec::new(),
        warmup_divergent: 0,
        warmup_leapfrog: 0,
    };

    for it in 0..config.iterations {
        let t = match config.algorithm {
            Algorithm::Nuts => Nuts { target, inv_metric: &inv_metric, eps }.transition(&mut z, config.max_depth, &mut rng),
            Algorithm::Hmc { steps } => hmc_transition(target, &mut z, &inv_metric, eps, steps, &mut rng),
        };
        if it < config.warmup {
            out.warmup_divergent += t.divergent as usize;
            out.warmup_leapfrog += t.n_leapfrog;
            eps = da.learn(t.accept_stat);
            if let Some(&(start, end)) = windows.get(window) {
                if it >= start && it < end {
                    welford.add(&z.q);
                }
                if it + 1 == end {
                    inv_metric = welford.regularized_variance();
                    welford = Welford::new(d);
                    window += 1;
                    eps = initial_step_size(target, &z, &inv_metric, eps, &mut rng)
                        .ok_or(SamplerError::StepSize { chain })?;
                    da = DualAveraging::new(eps, config.target_accept);
                }
            }
            if it + 1 == config.warmup {
                eps = da.final_step_size();
            }
        } else {
            out.constrained.push(target.constrain(&z.q));
            out.unconstrained.push(z.q.clone());
            out.divergent.push(t.divergent);
            out.energy.push(t.energy);
            out.accept_stat.push(t.accept_stat);
            out.n_leapfrog.push(t.n_leapfrog);
        }
    }
    out.step_size = eps;
    out.inv_metric = inv_metric;
    Ok(out)
}

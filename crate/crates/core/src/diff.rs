//! Reverse-mode automatic differentiation for scalar functions of many reals.
//!
//! Every thread owns one tape. [`gradient`] clears it, seeds one input node per
//! coordinate, runs the closure and sweeps the recorded edges backwards. A
//! [`Var`] that does not live on the tape is a constant: operations on
//! constants only compute values, so the same closure doubles as a plain `f64`
//! evaluator (see [`value`]).
//!
//! Besides the usual arithmetic, the tape accepts fused nodes with caller
//! supplied partial derivatives ([`Var::custom`]). The model uses these for
//! whole log-density terms, which keeps the tape short.

use std::cell::RefCell;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

const CONST: u32 = u32::MAX;

#[derive(Default)]
struct Tape {
    offsets: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    adjoints: Vec<f64>,
    active: bool,
}

impl Tape {
    fn clear(&mut self) {
        self.offsets.clear();
        self.offsets.push(0);
        self.parents.clear();
        self.partials.clear();
    }

    #[inline]
    fn push(&mut self, edges: &[(Var, f64)]) -> u32 {
        for &(v, d) in edges {
            if v.idx != CONST {
                self.parents.push(v.idx);
                self.partials.push(d);
            }
        }
        let idx = self.offsets.len() - 1;
        self.offsets.push(self.parents.len() as u32);
        idx as u32
    }
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::default());
}

/// A differentiable scalar: its value plus a slot on the thread's tape.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    val: f64,
    idx: u32,
}

impl Var {
    /// A value that carries no derivative.
    #[inline]
    pub fn constant(val: f64) -> Self {
        Var { val, idx: CONST }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.val
    }

    #[inline]
    pub fn is_constant(self) -> bool {
        self.idx == CONST
    }

    /// True when both refer to the same tape node (or are equal constants).
    #[inline]
    pub fn same_node(self, other: Var) -> bool {
        self.idx == other.idx && (self.idx != CONST || self.val.to_bits() == other.val.to_bits())
    }

    /// A node whose value and local partials are computed by the caller.
    ///
    /// Constant parents are dropped; if every parent is constant the result is
    /// constant too.
    #[inline]
    pub fn custom(val: f64, edges: &[(Var, f64)]) -> Var {
        if edges.iter().all(|(v, _)| v.idx == CONST) {
            return Var::constant(val);
        }
        let idx = TAPE.with(|t| t.borrow_mut().push(edges));
        Var { val, idx }
    }

    #[inline]
    fn unary(self, val: f64, d: f64) -> Var {
        if self.idx == CONST {
            Var::constant(val)
        } else {
            Var::custom(val, &[(self, d)])
        }
    }

    pub fn exp(self) -> Var {
        let e = self.val.exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Var {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    pub fn ln_1p(self) -> Var {
        self.unary(self.val.ln_1p(), 1.0 / (1.0 + self.val))
    }

    pub fn sqrt(self) -> Var {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }

    pub fn tanh(self) -> Var {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }

    pub fn powf(self, p: f64) -> Var {
        self.unary(self.val.powf(p), p * self.val.powf(p - 1.0))
    }

    /// `self^p` with a differentiable exponent; requires a positive base.
    pub fn pow(self, p: Var) -> Var {
        let v = self.val.powf(p.val);
        Var::custom(
            v,
            &[(self, p.val * self.val.powf(p.val - 1.0)), (p, v * self.val.ln())],
        )
    }

    /// `log(1 + exp(x))` without overflow.
    pub fn softplus(self) -> Var {
        self.unary(softplus(self.val), inv_logit(self.val))
    }

    /// `log(inv_logit(x))`.
    pub fn log_inv_logit(self) -> Var {
        self.unary(-softplus(-self.val), inv_logit(-self.val))
    }

    /// `log(1 - inv_logit(x))`.
    pub fn log1m_inv_logit(self) -> Var {
        self.unary(-softplus(self.val), -inv_logit(self.val))
    }

    pub fn inv_logit(self) -> Var {
        let p = inv_logit(self.val);
        self.unary(p, p * (1.0 - p))
    }
}

impl From<f64> for Var {
    fn from(v: f64) -> Self {
        Var::constant(v)
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, rhs: Var) -> Var {
        Var::custom(self.val + rhs.val, &[(self, 1.0), (rhs, 1.0)])
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, rhs: Var) -> Var {
        Var::custom(self.val - rhs.val, &[(self, 1.0), (rhs, -1.0)])
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, rhs: Var) -> Var {
        Var::custom(self.val * rhs.val, &[(self, rhs.val), (rhs, self.val)])
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, rhs: Var) -> Var {
        let q = self.val / rhs.val;
        Var::custom(q, &[(self, 1.0 / rhs.val), (rhs, -q / rhs.val)])
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        self.unary(-self.val, -1.0)
    }
}

impl AddAssign for Var {
    fn add_assign(&mut self, rhs: Var) {
        *self = *self + rhs;
    }
}

macro_rules! scalar_ops {
    ($($tr:ident $f:ident),*) => {$(
        impl $tr<f64> for Var {
            type Output = Var;
            #[inline]
            fn $f(self, rhs: f64) -> Var { $tr::$f(self, Var::constant(rhs)) }
        }
        impl $tr<Var> for f64 {
            type Output = Var;
            #[inline]
            fn $f(self, rhs: Var) -> Var { $tr::$f(Var::constant(self), rhs) }
        }
    )*};
}
scalar_ops!(Add add, Sub sub, Mul mul, Div div);

/// Sum of many terms as one node.
pub fn sum(terms: &[Var]) -> Var {
    let val = terms.iter().map(|v| v.val).sum();
    if terms.iter().all(|v| v.idx == CONST) {
        return Var::constant(val);
    }
    let idx = TAPE.with(|t| {
        let mut t = t.borrow_mut();
        for v in terms {
            if v.idx != CONST {
                t.parents.push(v.idx);
                t.partials.push(1.0);
            }
        }
        let idx = t.offsets.len() - 1;
        let end = t.parents.len() as u32;
        t.offsets.push(end);
        idx as u32
    });
    Var { val, idx }
}

/// Inner product `Σ a_i b_i` as one node.
pub fn dot(a: &[Var], b: &[Var]) -> Var {
    debug_assert_eq!(a.len(), b.len());
    let val = a.iter().zip(b).map(|(x, y)| x.val * y.val).sum();
    if a.iter().chain(b).all(|v| v.idx == CONST) {
        return Var::constant(val);
    }
    let idx = TAPE.with(|t| {
        let mut t = t.borrow_mut();
        for (x, y) in a.iter().zip(b) {
            if x.idx != CONST {
                t.parents.push(x.idx);
                t.partials.push(y.val);
            }
            if y.idx != CONST {
                t.parents.push(y.idx);
                t.partials.push(x.val);
            }
        }
        let idx = t.offsets.len() - 1;
        let end = t.parents.len() as u32;
        t.offsets.push(end);
        idx as u32
    });
    Var { val, idx }
}

/// Stable `log Σ exp(x_i)` with the max-shift form.
///
/// Returns `-inf` (constant) for an empty slice or when every term is `-inf`.
pub fn log_sum_exp(terms: &[Var]) -> Var {
    let m = terms.iter().map(|v| v.val).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Var::constant(f64::NEG_INFINITY);
    }
    if m == f64::INFINITY || m.is_nan() {
        return Var::constant(m);
    }
    let s: f64 = terms.iter().map(|v| (v.val - m).exp()).sum();
    let val = m + s.ln();
    if terms.iter().all(|v| v.idx == CONST) {
        return Var::constant(val);
    }
    let idx = TAPE.with(|t| {
        let mut t = t.borrow_mut();
        for v in terms {
            if v.idx != CONST {
                t.parents.push(v.idx);
                t.partials.push((v.val - m).exp() / s);
            }
        }
        let idx = t.offsets.len() - 1;
        let end = t.parents.len() as u32;
        t.offsets.push(end);
        idx as u32
    });
    Var { val, idx }
}

/// Evaluates `f` at `x` and writes `∂f/∂x` into `grad`; returns the value.
///
/// Panics if called re-entrantly on the same thread.
pub fn gradient_into<F>(x: &[f64], grad: &mut [f64], f: F) -> f64
where
    F: FnOnce(&[Var]) -> Var,
{
    assert_eq!(x.len(), grad.len());
    let inputs: Vec<Var> = TAPE.with(|t| {
        let mut t = t.borrow_mut();
        assert!(!t.active, "nested gradient evaluation on one thread");
        t.active = true;
        t.clear();
        x.iter()
            .map(|&v| Var {
                val: v,
                idx: t.push(&[]),
            })
            .collect()
    });
    let out = f(&inputs);
    TAPE.with(|t| {
        let mut guard = t.borrow_mut();
        let t = &mut *guard;
        t.active = false;
        grad.iter_mut().for_each(|g| *g = 0.0);
        if out.idx == CONST {
            return;
        }
        let n = out.idx as usize + 1;
        t.adjoints.clear();
        t.adjoints.resize(n, 0.0);
        t.adjoints[n - 1] = 1.0;
        for i in (0..n).rev() {
            let a = t.adjoints[i];
            if a == 0.0 {
                continue;
            }
            let (lo, hi) = (t.offsets[i] as usize, t.offsets[i + 1] as usize);
            for e in lo..hi {
                t.adjoints[t.parents[e] as usize] += t.partials[e] * a;
            }
        }
        let k = x.len().min(n);
        grad[..k].copy_from_slice(&t.adjoints[..k]);
    });
    out.val
}

/// Value and gradient of `f` at `x`.
pub fn gradient<F>(x: &[f64], f: F) -> (f64, Vec<f64>)
where
    F: FnOnce(&[Var]) -> Var,
{
    let mut g = vec![0.0; x.len()];
    let v = gradient_into(x, &mut g, f);
    (v, g)
}

/// Evaluates `f` without recording anything.
pub fn value<F>(x: &[f64], f: F) -> f64
where
    F: FnOnce(&[Var]) -> Var,
{
    let inputs: Vec<Var> = x.iter().map(|&v| Var::constant(v)).collect();
    f(&inputs).val
}

/// Outcome of comparing an analytic gradient to central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    /// Worst `|g - fd| / max(|g|, 1e-8)` over compared components.
    pub max_rel_error: f64,
    /// Components skipped because a perturbed evaluation was not finite.
    pub flagged: Vec<usize>,
}

/// Compares `grad` against central differences of `value_at` around `x`.
pub fn compare_central<F>(x: &[f64], grad: &[f64], h: f64, mut value_at: F) -> GradientCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let mut worst: f64 = 0.0;
    let mut flagged = Vec::new();
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = value_at(&probe);
        probe[i] = x[i] - h;
        let down = value_at(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() || !grad[i].is_finite() {
            flagged.push(i);
            continue;
        }
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(1e-8);
        worst = worst.max(rel);
    }
    GradientCheck {
        max_rel_error: worst,
        flagged,
    }
}

/// Checks the tape gradient of `f` at `x` against central differences.
pub fn check_gradient<F>(f: F, x: &[f64], h: f64) -> GradientCheck
where
    F: Fn(&[Var]) -> Var,
{
    let (_, g) = gradient(x, &f);
    compare_central(x, &g, h, |p| value(p, &f))
}

#[inline]
pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative estimate by Ridders' extrapolation of central differences.
///
/// `central(h)` must return the central-difference quotient at step `h`;
/// steps shrink geometrically from `h0`. Returns the estimate and its error
/// bound, or `None` if any quotient was not finite.
pub fn ridders<F: FnMut(f64) -> Option<f64>>(mut central: F, h0: f64) -> Option<(f64, f64)> {
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    const NTAB: usize = 10;
    const SAFE: f64 = 2.0;
    let mut a = [[0.0f64; NTAB]; NTAB];
    let mut h = h0;
    a[0][0] = central(h)?;
    let mut err = f64::INFINITY;
    let mut ans = a[0][0];
    for i in 1..NTAB {
        h /= CON;
        a[0][i] = central(h)?;
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let errt = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if errt <= err {
                err = errt;
                ans = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    Some((ans, err))
}

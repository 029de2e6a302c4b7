//! Outcome distributions in mean/spread parameterizations.
//!
//! Every density is written in terms of a linear predictor `eta`:
//! identity link for the real-line families (`eta` is the mean), log link for
//! the positive families (`exp(eta)` is the mean, or for `TruncatedNormal` the
//! location of the parent normal), and for `Lognormal` `eta` is the mean of
//! `log x`. The ancillary argument is the standard deviation, except for
//! `Weibull` where it is the shape.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::diff::Var;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.5772156649015329;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gumbel,
    Logistic,
    Normal,
    Exponential,
    Weibull,
    /// Normal restricted to `(0, ∞)`.
    TruncatedNormal,
    Lognormal,
    Gamma,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gumbel => "gumbel",
            Family::Logistic => "logistic",
            Family::Normal => "normal",
            Family::Exponential => "exponential",
            Family::Weibull => "weibull",
            Family::TruncatedNormal => "truncated_normal",
            Family::Lognormal => "lognormal",
            Family::Gamma => "gamma",
        }
    }

    /// Support is `(0, ∞)`.
    pub fn is_positive(self) -> bool {
        !matches!(self, Family::Gumbel | Family::Logistic | Family::Normal)
    }

    pub fn has_ancillary(self) -> bool {
        self != Family::Exponential
    }

    pub fn log_link(self) -> bool {
        matches!(self, Family::Exponential | Family::Weibull | Family::TruncatedNormal | Family::Gamma)
    }
}

/// Log-density and its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpdfParts {
    pub value: f64,
    pub d_x: f64,
    pub d_eta: f64,
    pub d_anc: f64,
}

impl LpdfParts {
    const OUT: LpdfParts = LpdfParts { value: f64::NEG_INFINITY, d_x: 0.0, d_eta: 0.0, d_anc: 0.0 };
}

/// `log Φ(z)` for the standard normal CDF, accurate far into the lower tail.
pub fn log_ndtr(z: f64) -> f64 {
    if z > -30.0 {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        // asymptotic series of the Mills ratio
        let z2 = z * z;
        -0.5 * z2 - HALF_LN_2PI - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// `φ(z) / Φ(z)`.
pub fn inverse_mills(z: f64) -> f64 {
    (-0.5 * z * z - HALF_LN_2PI - log_ndtr(z)).exp()
}

/// Log-density in the `eta` parameterization, with partials.
pub fn lpdf_parts(family: Family, x: f64, eta: f64, anc: f64) -> LpdfParts {
    if family.has_ancillary() && !(anc > 0.0) {
        return LpdfParts::OUT;
    }
    if family.is_positive() && !(x > 0.0) {
        return LpdfParts::OUT;
    }
    match family {
        Family::Gumbel => {
            let c = 6f64.sqrt() / PI;
            let b = c * anc;
            let z = (x - eta) / b + EULER_GAMMA;
            let ez = (-z).exp();
            let dz = -1.0 + ez;
            let db = -1.0 / b + dz * (-(x - eta) / (b * b));
            LpdfParts { value: -b.ln() - z - ez, d_x: dz / b, d_eta: -dz / b, d_anc: c * db }
        }
        Family::Logistic => {
            let c = 3f64.sqrt() / PI;
            let s = c * anc;
            let z = (x - eta) / s;
            let dz = -1.0 + 2.0 * crate::diff::inv_logit(-z);
            let ds = -1.0 / s - dz * z / s;
            LpdfParts {
                value: -s.ln() - z - 2.0 * crate::diff::softplus(-z),
                d_x: dz / s,
                d_eta: -dz / s,
                d_anc: c * ds,
            }
        }
        Family::Normal => {
            let z = (x - eta) / anc;
            LpdfParts {
                value: -anc.ln() - HALF_LN_2PI - 0.5 * z * z,
                d_x: -z / anc,
                d_eta: z / anc,
                d_anc: (z * z - 1.0) / anc,
            }
        }
        Family::Exponential => {
            let r = (-eta).exp();
            LpdfParts { value: -eta - x * r, d_x: -r, d_eta: -1.0 + x * r, d_anc: 0.0 }
        }
        Family::Weibull => {
            let k = anc;
            let g = digamma(1.0 + 1.0 / k) / (k * k);
            let log_lambda = eta - ln_gamma(1.0 + 1.0 / k);
            let lx = x.ln();
            let u = lx - log_lambda;
            let t = (k * u).exp();
            LpdfParts {
                value: k.ln() - log_lambda + (k - 1.0) * u - t,
                d_x: ((k - 1.0) - t * k) / x,
                d_eta: -k + k * t,
                d_anc: 1.0 / k + u - k * g - t * (u - k * g),
            }
        }
        Family::TruncatedNormal => {
            let m = eta.exp();
            let sd = anc;
            let z = (x - m) / sd;
            let w = m / sd;
            let mills = inverse_mills(w);
            let d_m = z / sd - mills / sd;
            LpdfParts {
                value: -sd.ln() - HALF_LN_2PI - 0.5 * z * z - log_ndtr(w),
                d_x: -z / sd,
                d_eta: m * d_m,
                d_anc: (z * z - 1.0) / sd + mills * w / sd,
            }
        }
        Family::Lognormal => {
            let lx = x.ln();
            let z = (lx - eta) / anc;
            LpdfParts {
                value: -lx - anc.ln() - HALF_LN_2PI - 0.5 * z * z,
                d_x: (-1.0 - z / anc) / x,
                d_eta: z / anc,
                d_anc: (z * z - 1.0) / anc,
            }
        }
        Family::Gamma => {
            let m = eta.exp();
            let sd = anc;
            let shape = (m / sd) * (m / sd);
            let rate = m / (sd * sd);
            let lr = rate.ln();
            let lx = x.ln();
            let core = lr - digamma(shape) + lx;
            LpdfParts {
                value: shape * lr - ln_gamma(shape) + (shape - 1.0) * lx - rate * x,
                d_x: (shape - 1.0) / x - rate,
                d_eta: 2.0 * shape * core + shape - rate * x,
                d_anc: 2.0 * (rate * x - shape * core - shape) / sd,
            }
        }
    }
}

/// Log-density at `x` given the family's natural location parameter: the
/// mean for real-line families, `Exponential`, `Weibull` and `Gamma`; the
/// parent-normal location for `TruncatedNormal`; the log-scale mean for
/// `Lognormal`.
pub fn family_lpdf(family: Family, x: f64, location: f64, ancillary: f64) -> f64 {
    let eta = if family.log_link() {
        if !(location > 0.0) {
            return f64::NEG_INFINITY;
        }
        location.ln()
    } else {
        location
    };
    lpdf_parts(family, x, eta, ancillary).value
}

/// Differentiable log-density of `x`.
pub fn lpdf_var(family: Family, x: Var, eta: Var, anc: Var) -> Var {
    let p = lpdf_parts(family, x.value(), eta.value(), anc.value());
    if p.value == f64::NEG_INFINITY || p.value.is_nan() {
        return Var::constant(p.value);
    }
    Var::custom(p.value, &[(x, p.d_x), (eta, p.d_eta), (anc, p.d_anc)])
}

/// Differentiable log-density of `exp(log_x)` on the log scale, i.e.
/// including the `+log_x` Jacobian of the change of variables.
pub fn lpdf_log_var(family: Family, log_x: Var, eta: Var, anc: Var) -> Var {
    let x = log_x.value().exp();
    let p = lpdf_parts(family, x, eta.value(), anc.value());
    if !p.value.is_finite() {
        return Var::constant(f64::NEG_INFINITY);
    }
    let d_log_x = match family {
        // avoids x * (1/x) round-off on the dominant path
        Family::Lognormal => -(log_x.value() - eta.value()) / (anc.value() * anc.value()),
        _ => x * p.d_x + 1.0,
    };
    Var::custom(p.value + log_x.value(), &[(log_x, d_log_x), (eta, p.d_eta), (anc, p.d_anc)])
}

/// Mean of the (positive-branch) distribution.
pub fn family_mean(family: Family, eta: f64, anc: f64) -> f64 {
    match family {
        Family::Gumbel | Family::Logistic | Family::Normal => eta,
        Family::Exponential | Family::Weibull | Family::Gamma => eta.exp(),
        Family::TruncatedNormal => {
            let m = eta.exp();
            m + anc * inverse_mills(m / anc)
        }
        Family::Lognormal => (eta + 0.5 * anc * anc).exp(),
    }
}

/// Draws one value from the family.
pub fn sample<R: Rng + ?Sized>(family: Family, eta: f64, anc: f64, rng: &mut R) -> f64 {
    match family {
        Family::Gumbel => {
            let b = anc * 6f64.sqrt() / PI;
            let a = eta - b * EULER_GAMMA;
            a - b * (-open_unit(rng).ln()).ln()
        }
        Family::Logistic => {
            let s = anc * 3f64.sqrt() / PI;
            let p = open_unit(rng);
            eta + s * (p / (1.0 - p)).ln()
        }
        Family::Normal => eta + anc * rng.sample::<f64, _>(StandardNormal),
        Family::Exponential => -eta.exp() * open_unit(rng).ln(),
        Family::Weibull => {
            let lambda = (eta - ln_gamma(1.0 + 1.0 / anc)).exp();
            lambda * (-open_unit(rng).ln()).powf(1.0 / anc)
        }
        Family::TruncatedNormal => {
            let m = eta.exp();
            m + anc * std_normal_above(-m / anc, rng)
        }
        Family::Lognormal => (eta + anc * rng.sample::<f64, _>(StandardNormal)).exp(),
        Family::Gamma => {
            let m = eta.exp();
            let shape = (m / anc).powi(2);
            let scale = anc * anc / m;
            rand_distr::Gamma::new(shape, scale)
                .map(|g| g.sample(rng))
                .unwrap_or(f64::NAN)
        }
    }
}

/// Uniform on the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard normal conditioned on `z > a`.
fn std_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a < 0.3 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a {
                return z;
            }
        }
    }
    // exponential proposal with the optimal rate
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - open_unit(rng).ln() / rate;
        let accept = (-0.5 * (z - rate) * (z - rate)).exp();
        if rng.random::<f64>() <= accept {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ALL: [Family; 8] = [
        Family::Gumbel,
        Family::Logistic,
        Family::Normal,
        Family::Exponential,
        Family::Weibull,
        Family::TruncatedNormal,
        Family::Lognormal,
        Family::Gamma,
    ];

    #[test]
    fn gumbel_unit_scale() {
        // sd = π/√6 gives canonical scale 1 and location mean - κ
        let sd = PI / 6f64.sqrt();
        let x = 0.4;
        let a = 1.0 - EULER_GAMMA;
        let z = x - a;
        let want = -z - (-z).exp();
        assert!((family_lpdf(Family::Gumbel, x, 1.0, sd) - want).abs() < 1e-14);
    }

    #[test]
    fn exponential_mean_two() {
        let v = family_lpdf(Family::Exponential, 2.0, 2.0, f64::NAN);
        assert!((v - (0.5f64.ln() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn lognormal_standard_at_one() {
        let v = family_lpdf(Family::Lognormal, 1.0, 0.0, 1.0);
        assert!((v + (2.0 * PI).sqrt().ln()).abs() < 1e-15);
    }

    #[test]
    fn domain_violations() {
        assert_eq!(family_lpdf(Family::Lognormal, -1.0, 0.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(family_lpdf(Family::Gamma, 0.0, 1.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(family_lpdf(Family::Normal, 0.0, 0.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(family_lpdf(Family::Weibull, 1.0, 1.0, -2.0), f64::NEG_INFINITY);
        assert!(family_lpdf(Family::Gumbel, -3.0, 0.0, 1.0).is_finite());
    }

    #[test]
    fn weibull_shape_one_is_exponential() {
        for &x in &[0.1, 1.0, 3.7] {
            let w = family_lpdf(Family::Weibull, x, 1.3, 1.0);
            let e = family_lpdf(Family::Exponential, x, 1.3, f64::NAN);
            assert!((w - e).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_matches_shape_rate_form() {
        let (mean, sd, x) = (3.0f64, 1.5f64, 2.2f64);
        let shape = (mean / sd).powi(2);
        let rate = mean / (sd * sd);
        let want = shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x;
        assert!((family_lpdf(Family::Gamma, x, mean, sd) - want).abs() < 1e-12);
    }

    #[test]
    fn partials_match_central_differences() {
        let h = 1e-6;
        for fam in ALL {
            for &(x, eta, anc) in &[(0.7, 0.2, 0.9), (2.5, 1.1, 0.4), (0.05, -0.5, 2.0), (4.0, 1.5, 1.7)] {
                let p = lpdf_parts(fam, x, eta, anc);
                let fd = |dx: f64, de: f64, da: f64| {
                    (lpdf_parts(fam, x + dx, eta + de, anc + da).value
                        - lpdf_parts(fam, x - dx, eta - de, anc - da).value)
                        / (2.0 * h)
                };
                let checks = [(p.d_x, fd(h, 0.0, 0.0)), (p.d_eta, fd(0.0, h, 0.0))];
                for (a, b) in checks {
                    assert!((a - b).abs() < 1e-6 * a.abs().max(1.0), "{fam:?} {a} {b}");
                }
                if fam.has_ancillary() {
                    let b = fd(0.0, 0.0, h);
                    assert!((p.d_anc - b).abs() < 1e-6 * p.d_anc.abs().max(1.0), "{fam:?} anc {} {b}", p.d_anc);
                }
            }
        }
    }

    #[test]
    fn log_scale_density_partials() {
        let h = 1e-6;
        for fam in ALL.into_iter().filter(|f| f.is_positive()) {
            let f = |lx: f64| lpdf_parts(fam, lx.exp(), 0.4, 1.2).value + lx;
            let lx = 0.3;
            let (_, g) = crate::diff::gradient(&[lx], |v| lpdf_log_var(fam, v[0], Var::constant(0.4), Var::constant(1.2)));
            let fd = (f(lx + h) - f(lx - h)) / (2.0 * h);
            assert!((g[0] - fd).abs() < 1e-6, "{fam:?}");
        }
    }

    #[test]
    fn log_ndtr_tails() {
        assert!((log_ndtr(0.0) - 0.5f64.ln()).abs() < 1e-15);
        // Φ(-40) ≈ 3.655893540915e-350 underflows; compare logs
        assert!((log_ndtr(-40.0) - (-804.608_442_013_754_7)).abs() < 1e-6);
        assert!(log_ndtr(-29.9).is_finite());
        assert!((log_ndtr(-29.999) - log_ndtr(-30.001)).abs() < 0.07);
        assert!(log_ndtr(10.0).abs() < 1e-20);
    }

    #[test]
    fn sample_means_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        for fam in ALL {
            let (eta, anc) = if fam == Family::TruncatedNormal { (0.0, 2.0) } else { (0.5, 0.8) };
            let xs: Vec<f64> = (0..n).map(|_| sample(fam, eta, anc, &mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            let want = family_mean(fam, eta, anc);
            assert!((m - want).abs() < 4.0 * sd / (n as f64).sqrt(), "{fam:?}: {m} vs {want}");
            if fam.is_positive() {
                assert!(xs.iter().all(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn mean_sd_parameterization_holds() {
        // the ancillary is the sd for these families
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        for fam in [Family::Gumbel, Family::Logistic, Family::Normal, Family::Gamma] {
            let xs: Vec<f64> = (0..n).map(|_| sample(fam, 1.0, 0.7, &mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!((sd - 0.7).abs() < 0.01, "{fam:?} {sd}");
        }
    }
}

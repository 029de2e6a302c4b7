use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::family::Family;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfsFamily {
    Gumbel,
    Logistic,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpsFamily {
    Exponential,
    Weibull,
    /// Normal truncated to the positive half-line.
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    Lognormal,
    Gamma,
}

impl PfsFamily {
    pub const ALL: [PfsFamily; 3] = [PfsFamily::Gumbel, PfsFamily::Logistic, PfsFamily::Normal];

    pub fn family(self) -> Family {
        match self {
            PfsFamily::Gumbel => Family::Gumbel,
            PfsFamily::Logistic => Family::Logistic,
            PfsFamily::Normal => Family::Normal,
        }
    }
}

impl PpsFamily {
    pub const ALL: [PpsFamily; 3] = [PpsFamily::Exponential, PpsFamily::Weibull, PpsFamily::Normal];

    pub fn family(self) -> Family {
        match self {
            PpsFamily::Exponential => Family::Exponential,
            PpsFamily::Weibull => Family::Weibull,
            PpsFamily::Normal => Family::TruncatedNormal,
        }
    }
}

impl CostFamily {
    pub const ALL: [CostFamily; 2] = [CostFamily::Lognormal, CostFamily::Gamma];

    pub fn family(self) -> Family {
        match self {
            CostFamily::Lognormal => Family::Lognormal,
            CostFamily::Gamma => Family::Gamma,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("prior_sd_regression must be positive, got {0}")]
    PriorSd(f64),
    #[error("sd_upper must be positive, got {0}")]
    SdUpper(f64),
}

/// Distribution choices and prior settings for one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub family_e_pfs: PfsFamily,
    pub family_e_pps: PpsFamily,
    pub family_costs: CostFamily,
    /// Standard deviation of the normal prior on every regression coefficient.
    pub prior_sd_regression: f64,
    /// Upper end of the uniform prior on every standard deviation (and on the
    /// Weibull shape).
    pub sd_upper: f64,
    pub include_covariates: bool,
    /// Enter `e_pfs` centred (at its observed arm mean) in the zero-probability
    /// regressions instead of raw.
    pub center_e_pfs_in_hurdles: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::original()
    }
}

impl ModelSpec {
    /// Gumbel / hurdle-Exponential / hurdle-Lognormal.
    pub fn original() -> Self {
        ModelSpec {
            family_e_pfs: PfsFamily::Gumbel,
            family_e_pps: PpsFamily::Exponential,
            family_costs: CostFamily::Lognormal,
            prior_sd_regression: 100.0,
            sd_upper: 10_000.0,
            include_covariates: false,
            center_e_pfs_in_hurdles: false,
        }
    }

    /// Logistic / hurdle-Weibull / hurdle-Gamma.
    pub fn alternative() -> Self {
        ModelSpec {
            family_e_pfs: PfsFamily::Logistic,
            family_e_pps: PpsFamily::Weibull,
            family_costs: CostFamily::Gamma,
            ..ModelSpec::original()
        }
    }

    pub fn with_families(pfs: PfsFamily, pps: PpsFamily, costs: CostFamily) -> Self {
        ModelSpec { family_e_pfs: pfs, family_e_pps: pps, family_costs: costs, ..ModelSpec::original() }
    }

    /// Every family combination.
    pub fn all_combinations() -> Vec<ModelSpec> {
        let mut out = Vec::new();
        for pfs in PfsFamily::ALL {
            for pps in PpsFamily::ALL {
                for c in CostFamily::ALL {
                    out.push(ModelSpec::with_families(pfs, pps, c));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if !(self.prior_sd_regression > 0.0 && self.prior_sd_regression.is_finite()) {
            return Err(SpecError::PriorSd(self.prior_sd_regression));
        }
        if !(self.sd_upper > 0.0 && self.sd_upper.is_finite()) {
            return Err(SpecError::SdUpper(self.sd_upper));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}",
            self.family_e_pfs.family().name(),
            self.family_e_pps.family().name(),
            self.family_costs.family().name()
        )
    }
}

//! Model variants and their parameter vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six model variants.
///
/// Naming: `Bb*` are continuous-tenor string correlators, `Bbd*` the discrete
/// lattice ones; the trailing digit counts free shape parameters; `Bbdl` is
/// the one-parameter lattice limit in which the line tension and psychological
/// time collapse into the single product κ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    Bb04,
    Bbl3,
    Bbl2,
    Bbd3,
    Bbd2,
    Bbdl,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Bb04 => "bb04",
            ModelVariant::Bbl3 => "bbl3",
            ModelVariant::Bbl2 => "bbl2",
            ModelVariant::Bbd3 => "bbd3",
            ModelVariant::Bbd2 => "bbd2",
            ModelVariant::Bbdl => "bbdl",
        }
    }

    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::Bb04,
        ModelVariant::Bbl3,
        ModelVariant::Bbl2,
        ModelVariant::Bbd3,
        ModelVariant::Bbd2,
        ModelVariant::Bbdl,
    ];

    /// Names of the free parameters, in canonical order.
    pub fn active_fields(self) -> &'static [&'static str] {
        match self {
            ModelVariant::Bb04 => &["psi_bar", "mu", "nu"],
            ModelVariant::Bbl3 | ModelVariant::Bbd3 => &["psi", "mu", "nu"],
            ModelVariant::Bbl2 | ModelVariant::Bbd2 => &["psi", "mu"],
            ModelVariant::Bbdl => &["kappa"],
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            ModelVariant::Bbd3 | ModelVariant::Bbd2 | ModelVariant::Bbdl
        )
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Parse {
                line: 0,
                detail: format!("unknown variant `{s}` (expected one of bb04, bbl3, bbl2, bbd3, bbd2, bbdl)"),
            })
    }
}

/// Parameter vector with variant-specific field activation.
///
/// Units: `psi` is in months; `mu` and `nu` are per-3-months for the
/// continuous variants and dimensionless for the discrete ones; `kappa` and
/// `psi_bar` are dimensionless. Fields a variant does not use must stay
/// `None` — [`ModelParams::validate`] rejects anything else, including ν set
/// explicitly on the two-parameter variants that fix ν=∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub variant: ModelVariant,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psi_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kappa: Option<f64>,
}

impl ModelParams {
    pub fn bb04(psi_bar: f64, mu: f64, nu: f64) -> Self {
        Self {
            variant: ModelVariant::Bb04,
            psi: None,
            psi_bar: Some(psi_bar),
            mu: Some(mu),
            nu: Some(nu),
            kappa: None,
        }
    }

    pub fn bbl3(psi: f64, mu: f64, nu: f64) -> Self {
        Self {
            variant: ModelVariant::Bbl3,
            psi: Some(psi),
            psi_bar: None,
            mu: Some(mu),
            nu: Some(nu),
            kappa: None,
        }
    }

    pub fn bbl2(psi: f64, mu: f64) -> Self {
        Self {
            variant: ModelVariant::Bbl2,
            psi: Some(psi),
            psi_bar: None,
            mu: Some(mu),
            nu: None,
            kappa: None,
        }
    }

    pub fn bbd3(psi: f64, mu: f64, nu: f64) -> Self {
        Self {
            variant: ModelVariant::Bbd3,
            psi: Some(psi),
            psi_bar: None,
            mu: Some(mu),
            nu: Some(nu),
            kappa: None,
        }
    }

    pub fn bbd2(psi: f64, mu: f64) -> Self {
        Self {
            variant: ModelVariant::Bbd2,
            psi: Some(psi),
            psi_bar: None,
            mu: Some(mu),
            nu: None,
            kappa: None,
        }
    }

    pub fn bbdl(kappa: f64) -> Self {
        Self {
            variant: ModelVariant::Bbdl,
            psi: None,
            psi_bar: None,
            mu: None,
            nu: None,
            kappa: Some(kappa),
        }
    }

    fn field(&self, name: &'static str) -> Option<f64> {
        match name {
            "psi" => self.psi,
            "psi_bar" => self.psi_bar,
            "mu" => self.mu,
            "nu" => self.nu,
            "kappa" => self.kappa,
            _ => None,
        }
    }

    /// Check that exactly the variant's fields are set, all strictly positive,
    /// with `psi_bar` additionally confined to (0, 1].
    pub fn validate(&self) -> Result<()> {
        let variant = self.variant.name();
        let active = self.variant.active_fields();
        for name in ["psi", "psi_bar", "mu", "nu", "kappa"] {
            let value = self.field(name);
            if active.contains(&name) {
                let v = value.ok_or(Error::MissingField { name, variant })?;
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::NonPositiveParameter { name, value: v });
                }
                if name == "psi_bar" && v > 1.0 {
                    return Err(Error::ExponentOutOfRange { value: v });
                }
            } else if value.is_some() {
                return Err(Error::InactiveField { name, variant });
            }
        }
        Ok(())
    }

    /// Active parameter values in canonical order. Panics if not validated.
    pub fn active_values(&self) -> Vec<f64> {
        self.variant
            .active_fields()
            .iter()
            .map(|name| self.field(name).expect("params validated"))
            .collect()
    }

    /// Rebuild a parameter vector of the same variant from values in canonical
    /// order (the optimizer's inverse of [`ModelParams::active_values`]).
    pub fn from_active_values(variant: ModelVariant, values: &[f64]) -> Self {
        let fields = variant.active_fields();
        assert_eq!(values.len(), fields.len(), "wrong parameter count for {variant}");
        let mut p = Self {
            variant,
            psi: None,
            psi_bar: None,
            mu: None,
            nu: None,
            kappa: None,
        };
        for (&name, &v) in fields.iter().zip(values) {
            match name {
                "psi" => p.psi = Some(v),
                "psi_bar" => p.psi_bar = Some(v),
                "mu" => p.mu = Some(v),
                "nu" => p.nu = Some(v),
                "kappa" => p.kappa = Some(v),
                _ => unreachable!(),
            }
        }
        p
    }
}

/// Time-scale and noise-scale parameters of the relaxation dynamics.
///
/// `big_d` is the D in the white-noise variance 2D·dt; `epsilon` scales the
/// idiosyncratic (per-tenor, uncorrelated) noise whose increment variance is
/// 2D·ε·Δt; `delta_t` is the observation bin width; `tau` the relaxation time,
/// in the same time units as `delta_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub tau: f64,
    pub big_d: f64,
    pub epsilon: f64,
    pub delta_t: f64,
}

impl DynamicsParams {
    pub fn new(tau: f64, big_d: f64, epsilon: f64, delta_t: f64) -> Result<Self> {
        let p = Self {
            tau,
            big_d,
            epsilon,
            delta_t,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v, strict) in [
            ("tau", self.tau, true),
            ("big_d", self.big_d, true),
            ("delta_t", self.delta_t, true),
            ("epsilon", self.epsilon, false),
        ] {
            let ok = v.is_finite() && if strict { v > 0.0 } else { v >= 0.0 };
            if !ok {
                return Err(Error::NonPositiveParameter { name, value: v });
            }
        }
        Ok(())
    }
}

//! Psychological-time changes of variable: real tenor θ → perceived tenor z(θ).
//!
//! All maps take and return tenors in **months**. Model code that works on the
//! quarterly lattice should go through [`z_lattice`], which conjugates by the
//! 3-months-per-unit conversion so that the identity map stays the identity in
//! lattice units too.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::MONTHS_PER_UNIT;
use crate::params::{ModelParams, ModelVariant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsyTimeSpec {
    /// Perceived time equals calendar time.
    Identity,
    /// z(θ) = ψ·ln(1 + θ/ψ): linear at short horizon, logarithmic at long.
    LogHyperbolic { psi: f64 },
    /// z(θ) = θ^ψ̄, the legacy power-law map.
    PowerLaw { psi_bar: f64 },
    /// z(θ) = (ψ/ζ)[(1 + θ/ψ)^ζ − 1]; ζ→0 recovers `LogHyperbolic`, ζ=1 the
    /// identity.
    RegularizedPowerLaw { psi: f64, zeta: f64 },
}

impl PsyTimeSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PsyTimeSpec::Identity => Ok(()),
            PsyTimeSpec::LogHyperbolic { psi } => check_positive("psi", psi),
            PsyTimeSpec::PowerLaw { psi_bar } => {
                check_positive("psi_bar", psi_bar)?;
                if psi_bar > 1.0 {
                    return Err(Error::ExponentOutOfRange { value: psi_bar });
                }
                Ok(())
            }
            PsyTimeSpec::RegularizedPowerLaw { psi, zeta } => {
                check_positive("psi", psi)?;
                check_positive("zeta", zeta)?;
                if zeta > 1.0 {
                    return Err(Error::ExponentOutOfRange { value: zeta });
                }
                Ok(())
            }
        }
    }

    /// The map each model variant applies before evaluating its correlator.
    pub fn for_params(params: &ModelParams) -> Self {
        match params.variant {
            ModelVariant::Bb04 => PsyTimeSpec::PowerLaw {
                psi_bar: params.psi_bar.expect("params validated"),
            },
            ModelVariant::Bbl3 | ModelVariant::Bbl2 | ModelVariant::Bbd3 | ModelVariant::Bbd2 => {
                PsyTimeSpec::LogHyperbolic {
                    psi: params.psi.expect("params validated"),
                }
            }
            // The one-parameter lattice model bakes the map's slope into κ.
            ModelVariant::Bbdl => PsyTimeSpec::Identity,
        }
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveParameter { name, value })
    }
}

/// Perceived tenor for a real tenor `theta` ≥ 0, both in months.
pub fn z(spec: PsyTimeSpec, theta: f64) -> f64 {
    debug_assert!(theta >= 0.0);
    match spec {
        PsyTimeSpec::Identity => theta,
        PsyTimeSpec::LogHyperbolic { psi } => psi * (theta / psi).ln_1p(),
        PsyTimeSpec::PowerLaw { psi_bar } => theta.powf(psi_bar),
        PsyTimeSpec::RegularizedPowerLaw { psi, zeta } => {
            // (ψ/ζ)[(1+θ/ψ)^ζ − 1] via expm1 so the ζ→0 limit is smooth.
            psi / zeta * (zeta * (theta / psi).ln_1p()).exp_m1()
        }
    }
}

/// Perceived tenor in quarterly lattice units for a tenor of `units` lattice
/// units: months in, months out, rescaled on both sides.
pub fn z_lattice(spec: PsyTimeSpec, units: f64) -> f64 {
    z(spec, units * MONTHS_PER_UNIT as f64) / MONTHS_PER_UNIT as f64
}

/// Discount factor exp(−r·z(θ)) for the log-hyperbolic map, in the closed
/// form (1+θ/ψ)^{−rψ}.
pub fn hyperbolic_discount(psi: f64, r: f64, theta: f64) -> f64 {
    debug_assert!(psi > 0.0 && r > 0.0 && theta >= 0.0);
    (-r * psi * (theta / psi).ln_1p()).exp()
}

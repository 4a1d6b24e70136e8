//! Continuous-tenor string correlator and the correlation models built on it.
//!
//! The equal-time covariance of a damped elastic string with tension μ² and
//! bending stiffness ν⁴ has the closed form
//!
//! ```text
//! D(θ,θ′) = ν⁴/(α₊−α₋) · [F(θ,θ′,√α₋)/α₋ − F(θ,θ′,√α₊)/α₊]
//! F(θ,θ′,p) = (p/2)(e^{−p(θ+θ′)} + e^{−p|θ−θ′|})
//! ```
//!
//! where α± are the roots of x² − (ν⁴/μ²)x + ν⁴. The `+` combination in F is
//! the image term enforcing a free (Neumann) boundary at the spot θ=0.
//! Correlation models normalize D to unit diagonal after a psychological-time
//! change of variable, so the overall scale of D is immaterial.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::TenorGrid;
use crate::params::{ModelParams, ModelVariant};
use crate::psytime::{self, PsyTimeSpec};
use crate::surface::CorrelationSurface;

/// Tension and stiffness scales, both per lattice unit (3 months).
/// `nu = ∞` selects the tension-only string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffStringParams {
    pub mu: f64,
    pub nu: f64,
}

impl StiffStringParams {
    pub fn new(mu: f64, nu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::NonPositiveParameter {
                name: "mu",
                value: mu,
            });
        }
        if !(nu > 0.0) {
            return Err(Error::NonPositiveParameter {
                name: "nu",
                value: nu,
            });
        }
        Ok(Self { mu, nu })
    }

    /// Tension-only string (ν = ∞).
    pub fn tension_only(mu: f64) -> Result<Self> {
        Self::new(mu, f64::INFINITY)
    }

    /// Extract the string scales from a validated continuous-variant
    /// parameter set.
    pub fn for_model(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        match params.variant {
            ModelVariant::Bb04 | ModelVariant::Bbl3 => {
                Self::new(params.mu.unwrap(), params.nu.unwrap())
            }
            ModelVariant::Bbl2 => Self::tension_only(params.mu.unwrap()),
            other => Err(Error::InvalidSurface {
                detail: format!("variant {other} is not a continuous-tenor model"),
            }),
        }
    }

    pub fn has_stiffness(&self) -> bool {
        self.nu.is_finite()
    }
}

/// The two roots α± of x² − (ν⁴/μ²)x + ν⁴, a complex-conjugate pair when
/// 4(μ/ν)⁴ > 1.
#[derive(Debug, Clone, Copy)]
pub struct AlphaPair {
    pub plus: Complex64,
    pub minus: Complex64,
}

/// α± = ν⁴/(2μ²)·[1 ± √(1 − 4(μ/ν)⁴)].
///
/// The smaller root is recovered from the product identity α₊α₋ = ν⁴ rather
/// than the subtractive closed form, which cancels catastrophically for
/// ν ≫ μ.
pub fn alpha_pm(p: &StiffStringParams) -> AlphaPair {
    assert!(
        p.has_stiffness(),
        "alpha_pm requires finite stiffness; use the tension-only branch for nu = inf"
    );
    let nu4 = p.nu.powi(4);
    let ratio4 = 4.0 * (p.mu / p.nu).powi(4);
    let s = Complex64::new(1.0 - ratio4, 0.0).sqrt();
    let plus = nu4 / (2.0 * p.mu * p.mu) * (Complex64::new(1.0, 0.0) + s);
    let minus = nu4 / plus;
    AlphaPair { plus, minus }
}

/// F(θ,θ′,p) = (p/2)(e^{−p(θ+θ′)} + e^{−p|θ−θ′|}) at a (possibly complex)
/// decay rate p with Re p ≥ 0.
fn image_kernel(theta: f64, theta_p: f64, p: Complex64) -> Complex64 {
    let sum = theta + theta_p;
    let diff = (theta - theta_p).abs();
    0.5 * p * ((-p * sum).exp() + (-p * diff).exp())
}

fn realify_scalar(v: Complex64, context: &str) -> Result<f64> {
    let scale = v.re.abs().max(1e-300);
    if v.im.abs() > 1e-10 * scale.max(1.0) {
        return Err(Error::NumericalBreakdown {
            detail: format!("{context}: imaginary residue {:.3e} on value {:.6e}", v.im, v.re),
        });
    }
    Ok(v.re)
}

fn d_bb_strict(p: &StiffStringParams, theta: f64, theta_p: f64) -> Result<f64> {
    if !p.has_stiffness() {
        // ν→∞ limit of the closed form: only the tension root survives.
        let mu = p.mu;
        let sum = theta + theta_p;
        let diff = (theta - theta_p).abs();
        return Ok(0.5 * mu * ((-mu * sum).exp() + (-mu * diff).exp()));
    }
    let AlphaPair { plus, minus } = alpha_pm(p);
    let gap = plus - minus;
    if gap.norm() < 1e-9 * plus.norm() {
        return Err(Error::DegenerateRoots {
            detail: format!(
                "root gap {:.3e} below tolerance at mu={}, nu={}",
                gap.norm(),
                p.mu,
                p.nu
            ),
        });
    }
    let nu4 = p.nu.powi(4);
    let term_minus = image_kernel(theta, theta_p, minus.sqrt()) / minus;
    let term_plus = image_kernel(theta, theta_p, plus.sqrt()) / plus;
    realify_scalar(nu4 / gap * (term_minus - term_plus), "d_bb")
}

/// Equal-time string covariance D(θ,θ′) for perceived tenors θ, θ′ ≥ 0.
///
/// At a root collision (4(μ/ν)⁴ = 1 within 1e-9 relative) the confluent
/// value is approximated by averaging evaluations at ν(1 ± 1e-6), which sits
/// well clear of the collision on both sides.
pub fn d_bb(p: &StiffStringParams, theta: f64, theta_p: f64) -> Result<f64> {
    debug_assert!(theta >= 0.0 && theta_p >= 0.0);
    match d_bb_strict(p, theta, theta_p) {
        Err(Error::DegenerateRoots { .. }) => {
            let lo = StiffStringParams::new(p.mu, p.nu * (1.0 - 1e-6))?;
            let hi = StiffStringParams::new(p.mu, p.nu * (1.0 + 1e-6))?;
            Ok(0.5 * (d_bb_strict(&lo, theta, theta_p)? + d_bb_strict(&hi, theta, theta_p)?))
        }
        other => other,
    }
}

/// Pearson correlation of the psychological-time string model at lattice
/// tenors `theta`, `theta_p` (in 3-month units, real-valued probes allowed).
pub fn rho_bbl(
    p: &StiffStringParams,
    spec: PsyTimeSpec,
    theta: f64,
    theta_p: f64,
) -> Result<f64> {
    let z = psytime::z_lattice(spec, theta);
    let z_p = psytime::z_lattice(spec, theta_p);
    let off = d_bb(p, z, z_p)?;
    let diag = d_bb(p, z, z)?;
    let diag_p = d_bb(p, z_p, z_p)?;
    Ok(off / (diag * diag_p).sqrt())
}

/// Full correlation surface of a continuous-tenor variant over `grid`.
pub fn surface(
    p: &StiffStringParams,
    spec: PsyTimeSpec,
    grid: &TenorGrid,
) -> Result<CorrelationSurface> {
    let z: Vec<f64> = grid
        .units()
        .iter()
        .map(|&u| psytime::z_lattice(spec, f64::from(u)))
        .collect();
    let mut diag = Vec::with_capacity(z.len());
    for &zi in &z {
        diag.push(d_bb(p, zi, zi)?);
    }
    CorrelationSurface::try_from_fn(grid.clone(), |i, j| {
        Ok(d_bb(p, z[i], z[j])? / (diag[i] * diag[j]).sqrt())
    })
}

//! Discrete-tenor (lattice) string correlators.
//!
//! On the quarterly tenor lattice the string dynamics diagonalize in Fourier
//! space with symbol
//!
//! ```text
//! L(ξ) = 1 + 2(1−cos ξ)/μ² + 4(1−cos ξ)²/ν⁴,   ξ ∈ [−π, π]
//! ```
//!
//! and the spot boundary is again handled by an image term, giving the family
//! of correlators
//!
//! ```text
//! D_k(θ,θ′) = (1/π) ∫₀^π 2 cos(ξθ) cos(ξθ′) / L(ξ)^k dξ .
//! ```
//!
//! `D₁` is the equal-time covariance of the relaxing field itself (up to
//! D/τ), `D₂` governs time-aggregated increments ⟨ΔA ΔA⟩ = 2DΔt·D₂ in the
//! fast-relaxation regime, and `D₃` appears in inter-bin covariances. For
//! integer tenors, substituting z = e^{iξ} turns D₁ and D₂ into contour
//! integrals over the unit circle with the poles of 1/L, which yields closed
//! forms used here as cross-validation oracles; real (psychological-time)
//! tenor arguments always go through quadrature, which is also the more
//! stable route.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::continuous::{alpha_pm, AlphaPair, StiffStringParams};
use crate::error::{Error, Result};
use crate::grid::TenorGrid;
use crate::params::{DynamicsParams, ModelParams, ModelVariant};
use crate::psytime::{self, PsyTimeSpec};
use crate::quad::{self, Tolerance};
use crate::surface::CorrelationSurface;

/// Dimensionless lattice tension (μ) and stiffness (ν) scales; `nu = ∞`
/// drops the fourth-derivative term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteSymbol {
    pub mu: f64,
    pub nu: f64,
}

impl DiscreteSymbol {
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

    pub fn tension_only(mu: f64) -> Result<Self> {
        Self::new(mu, f64::INFINITY)
    }

    pub fn for_model(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        match params.variant {
            ModelVariant::Bbd3 => Self::new(params.mu.unwrap(), params.nu.unwrap()),
            ModelVariant::Bbd2 => Self::tension_only(params.mu.unwrap()),
            other => Err(Error::InvalidSurface {
                detail: format!("variant {other} is not a discrete-tenor model"),
            }),
        }
    }

    pub fn has_stiffness(&self) -> bool {
        self.nu.is_finite()
    }
}

/// Fourier symbol of the lattice operator; even in ξ with minimum 1 at ξ=0.
pub fn l_d(sym: &DiscreteSymbol, xi: f64) -> f64 {
    let w = 1.0 - xi.cos();
    let mut l = 1.0 + 2.0 * w / (sym.mu * sym.mu);
    if sym.has_stiffness() {
        l += 4.0 * w * w / sym.nu.powi(4);
    }
    l
}

/// Quadrature tolerance pinned by the oracle-agreement requirements.
const DK_TOL: Tolerance = Tolerance {
    abs: 1e-10,
    rel: 0.0,
};

/// D_k(θ,θ′) by adaptive quadrature; `k` ∈ {1, 2, 3}, real tenors allowed.
pub fn d_k_quadrature(sym: &DiscreteSymbol, k: u8, theta: f64, theta_p: f64) -> Result<f64> {
    assert!((1..=3).contains(&k), "correlator power k must be 1, 2 or 3");
    debug_assert!(theta >= 0.0 && theta_p >= 0.0);
    quad::adaptive(0.0, PI, DK_TOL, |xi| {
        let l = l_d(sym, xi);
        2.0 * (xi * theta).cos() * (xi * theta_p).cos() / (PI * l.powi(k as i32))
    })
}

/// The four roots of the monic quartic ν⁴·z²·L(z) (two per tension/stiffness
/// quadratic factor), plus the indices of the two lying inside the unit
/// circle, which are the poles picked up by the contour integrals.
fn lattice_poles(sym: &DiscreteSymbol) -> Result<(Vec<Complex64>, Vec<usize>)> {
    let string = StiffStringParams::new(sym.mu, sym.nu)?;
    let AlphaPair { plus, minus } = alpha_pm(&string);
    let mut roots = Vec::with_capacity(4);
    for alpha in [minus, plus] {
        // Roots of z² − (2+α)z + 1: product is 1, so compute the larger one
        // by the quadratic formula and invert it for its partner.
        let b = alpha + 2.0;
        let disc = (b * b - 4.0).sqrt();
        let r1 = 0.5 * (b + disc);
        let r2 = 0.5 * (b - disc);
        let big = if r1.norm() >= r2.norm() { r1 } else { r2 };
        roots.push(big);
        roots.push(big.inv());
    }
    let inside: Vec<usize> = (0..4).filter(|&i| roots[i].norm() < 1.0).collect();
    if inside.len() != 2 {
        return Err(Error::DegenerateRoots {
            detail: format!(
                "expected 2 poles strictly inside the unit circle, found {} (moduli {:?})",
                inside.len(),
                roots.iter().map(|r| r.norm()).collect::<Vec<_>>()
            ),
        });
    }
    for &i in &inside {
        for j in 0..4 {
            if j != i && (roots[i] - roots[j]).norm() < 1e-8 * (1.0 + roots[i].norm()) {
                return Err(Error::DegenerateRoots {
                    detail: format!(
                        "confluent poles at mu={}, nu={}: |β_{i}−β_{j}| = {:.3e}",
                        sym.mu,
                        sym.nu,
                        (roots[i] - roots[j]).norm()
                    ),
                });
            }
        }
    }
    Ok((roots, inside))
}

fn realify_scalar(v: Complex64, context: &str) -> Result<f64> {
    if v.im.abs() > 1e-9 * (1.0 + v.re.abs()) {
        return Err(Error::NumericalBreakdown {
            detail: format!("{context}: imaginary residue {:.3e} on value {:.6e}", v.im, v.re),
        });
    }
    Ok(v.re)
}

/// Closed form for D₁ at integer tenors via residues of ν⁴(z^{|θ₋|+1} +
/// z^{θ₊+1})/P̃(z) at the poles inside the unit circle (P̃ the monic quartic
/// with the β roots). The ν=∞ branch has a single quadratic factor
/// μ²z − (z−1)² instead.
pub fn d_1_residue(sym: &DiscreteSymbol, theta: u32, theta_p: u32) -> Result<f64> {
    let a = theta.abs_diff(theta_p);
    let b = theta + theta_p;
    if !sym.has_stiffness() {
        let mu2 = sym.mu * sym.mu;
        let root = tension_inside_root(sym.mu);
        let norm = (mu2 * (mu2 + 4.0)).sqrt();
        return Ok(mu2 * (root.powi(a as i32) + root.powi(b as i32)) / norm);
    }
    let (roots, inside) = lattice_poles(sym)?;
    let nu4 = sym.nu.powi(4);
    let mut total = Complex64::new(0.0, 0.0);
    for &i in &inside {
        let beta = roots[i];
        let numer = beta.powu(a + 1) + beta.powu(b + 1);
        let mut denom = Complex64::new(1.0, 0.0);
        for (j, &other) in roots.iter().enumerate() {
            if j != i {
                denom *= beta - other;
            }
        }
        total += nu4 * numer / denom;
    }
    realify_scalar(total, "d_1_residue")
}

/// Closed form for D₂ at integer tenors: residues of N(z)/P̃(z)² with
/// N(z) = ν⁸(z^{|θ₋|+3} + z^{θ₊+3}) at the two double poles inside the unit
/// circle,
///
/// ```text
/// Res_i = [N′(β_i) − 2 N(β_i) Σ_{j≠i} 1/(β_i−β_j)] / Π_{j≠i}(β_i−β_j)² .
/// ```
pub fn d_2_residue(sym: &DiscreteSymbol, theta: u32, theta_p: u32) -> Result<f64> {
    let a = theta.abs_diff(theta_p);
    let b = theta + theta_p;
    if !sym.has_stiffness() {
        return Ok(d_2_residue_tension_only(sym.mu, a, b));
    }
    let (roots, inside) = lattice_poles(sym)?;
    let nu8 = sym.nu.powi(8);
    let (ea, eb) = (a + 3, b + 3);
    let mut total = Complex64::new(0.0, 0.0);
    for &i in &inside {
        let beta = roots[i];
        let n = nu8 * (beta.powu(ea) + beta.powu(eb));
        let n_prime =
            nu8 * (f64::from(ea) * beta.powu(ea - 1) + f64::from(eb) * beta.powu(eb - 1));
        let mut pole_sum = Complex64::new(0.0, 0.0);
        let mut denom = Complex64::new(1.0, 0.0);
        for (j, &other) in roots.iter().enumerate() {
            if j != i {
                let gap = beta - other;
                pole_sum += gap.inv();
                denom *= gap * gap;
            }
        }
        total += (n_prime - 2.0 * n * pole_sum) / denom;
    }
    realify_scalar(total, "d_2_residue")
}

/// Inside root β₋ of μ²z − (z−1)², in (0, 1).
fn tension_inside_root(mu: f64) -> f64 {
    let mu2 = mu * mu;
    1.0 + 0.5 * (mu2 - (mu2 * (mu2 + 4.0)).sqrt())
}

fn d_2_residue_tension_only(mu: f64, a: u32, b: u32) -> f64 {
    // Double pole at β₋: μ⁴ · d/dz[(z^{a+1}+z^{b+1})/(z−β₊)²] at z = β₋,
    // with β₋−β₊ = −√(μ⁴+4μ²).
    let mu2 = mu * mu;
    let gap2 = mu2 * (mu2 + 4.0);
    let beta = tension_inside_root(mu);
    let (ea, eb) = (f64::from(a) + 1.0, f64::from(b) + 1.0);
    let deriv = (ea * beta.powf(ea - 1.0) + eb * beta.powf(eb - 1.0)) / gap2;
    let shift = 2.0 * (beta.powf(ea) + beta.powf(eb)) / gap2.powf(1.5);
    mu2 * mu2 * (deriv + shift)
}

/// Two-time kernel G(θ,θ′; dt) = (1/π)∫₀^π [cos ξ(θ−θ′) + cos ξ(θ+θ′)]
/// e^{−L(ξ)dt/τ} dξ: the response linking a shock at tenor θ′ to tenor θ a
/// time dt later (τ sets the relaxation clock).
pub fn propagator(sym: &DiscreteSymbol, tau: f64, theta: u32, theta_p: u32, dt: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveParameter {
            name: "tau",
            value: tau,
        });
    }
    debug_assert!(dt >= 0.0);
    let diff = f64::from(theta.abs_diff(theta_p));
    let sum = f64::from(theta + theta_p);
    if dt == 0.0 {
        // Fourier orthogonality collapses the integral to Kronecker deltas.
        let mut v = if theta == theta_p { 1.0 } else { 0.0 };
        if theta + theta_p == 0 {
            v += 1.0;
        }
        return Ok(v);
    }
    quad::adaptive(0.0, PI, DK_TOL, |xi| {
        let l = l_d(sym, xi);
        ((xi * diff).cos() + (xi * sum).cos()) * (-l * dt / tau).exp() / PI
    })
}

/// Equal-time Pearson correlation of the lattice model with psychological
/// time: D₂(z(θ), z(θ′)) normalized to unit diagonal. Tenors in lattice
/// units; real-valued probes allowed.
pub fn rho_bbd(sym: &DiscreteSymbol, spec: PsyTimeSpec, theta: f64, theta_p: f64) -> Result<f64> {
    let z = psytime::z_lattice(spec, theta);
    let z_p = psytime::z_lattice(spec, theta_p);
    let off = d_k_quadrature(sym, 2, z, z_p)?;
    let diag = d_k_quadrature(sym, 2, z, z)?;
    let diag_p = d_k_quadrature(sym, 2, z_p, z_p)?;
    Ok(off / (diag * diag_p).sqrt())
}

/// Index of the (i, j) entry, j ≤ i, in a packed lower triangle.
fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

/// D₂(z_i, z_j) for every pair of a tenor grid in one shared-node quadrature
/// pass: each node needs one symbol evaluation and n cosines, amortized over
/// all n(n+1)/2 pairs.
fn d_2_packed(sym: &DiscreteSymbol, z: &[f64]) -> Result<Vec<f64>> {
    let n = z.len();
    let dim = n * (n + 1) / 2;
    let mut cosines = vec![0.0; n];
    quad::adaptive_vec(0.0, PI, dim, DK_TOL, |xi, out| {
        let l = l_d(sym, xi);
        let weight = 2.0 / (PI * l * l);
        for (c, &zi) in cosines.iter_mut().zip(z) {
            *c = (xi * zi).cos();
        }
        for i in 0..n {
            for j in 0..=i {
                out[tri_index(i, j)] = weight * cosines[i] * cosines[j];
            }
        }
    })
}

/// Full correlation surface of a discrete-tenor variant over `grid`.
pub fn surface(
    sym: &DiscreteSymbol,
    spec: PsyTimeSpec,
    grid: &TenorGrid,
) -> Result<CorrelationSurface> {
    let z: Vec<f64> = grid
        .units()
        .iter()
        .map(|&u| psytime::z_lattice(spec, f64::from(u)))
        .collect();
    let packed = d_2_packed(sym, &z)?;
    CorrelationSurface::try_from_fn(grid.clone(), |i, j| {
        let denom = packed[tri_index(i, i)] * packed[tri_index(j, j)];
        Ok(packed[tri_index(i, j)] / denom.sqrt())
    })
}

/// Fraction of a bin's worth of variance delivered after relaxation, i.e.
/// b(x) = 1 + expm1(−x)/x for x = L·Δt/τ, with a series branch guarding the
/// x → 0 cancellation. Monotone from 0 (instantaneous bins, Epps
/// suppression) to 1 (bins much longer than the relaxation time).
fn bin_fraction(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 1e-2 {
        x * (0.5
            + x * (-1.0 / 6.0 + x * (1.0 / 24.0 + x * (-1.0 / 120.0 + x * (1.0 / 720.0)))))
    } else {
        1.0 + (-x).exp_m1() / x
    }
}

/// Equal-time covariance of the binned increments ΔA at any relaxation time:
///
/// ```text
/// ⟨ΔA_θ ΔA_θ′⟩ = (2D/π) ∫₀^π 2cos(ξz)cos(ξz′)/L² · Δt·b(LΔt/τ) dξ
///               + 2DεΔt·δ_{θθ′}
/// ```
///
/// which interpolates between 2DΔt·D₂ (τ ≪ Δt) and D·Δt²/τ·D₁ (τ ≫ Δt,
/// the Epps regime where cross-tenor correlation has not yet built up). The
/// idiosyncratic white-noise term contributes only on the diagonal.
pub fn cov_delta_a_finite_tau(
    sym: &DiscreteSymbol,
    spec: PsyTimeSpec,
    dynamics: &DynamicsParams,
    theta: f64,
    theta_p: f64,
) -> Result<f64> {
    dynamics.validate()?;
    let z = psytime::z_lattice(spec, theta);
    let z_p = psytime::z_lattice(spec, theta_p);
    let DynamicsParams {
        tau,
        big_d,
        epsilon,
        delta_t,
    } = *dynamics;
    let tol = Tolerance::mixed(1e-13, 1e-10);
    let string = quad::adaptive(0.0, PI, tol, |xi| {
        let l = l_d(sym, xi);
        let kernel = delta_t * bin_fraction(l * delta_t / tau);
        2.0 * big_d * 2.0 * (xi * z).cos() * (xi * z_p).cos() / (PI * l * l) * kernel
    })?;
    let idio = if theta == theta_p {
        2.0 * big_d * epsilon * delta_t
    } else {
        0.0
    };
    Ok(string + idio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuous;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn sym(mu: f64, nu: f64) -> DiscreteSymbol {
        DiscreteSymbol::new(mu, nu).unwrap()
    }

    #[test]
    fn symbol_values_and_evenness() {
        let s = sym(1.0, f64::INFINITY);
        assert_eq!(l_d(&s, 0.0), 1.0);
        assert_relative_eq!(l_d(&s, PI), 5.0, max_relative = 1e-14);
        let t = sym(1.0, 1.0);
        assert_relative_eq!(l_d(&t, PI), 21.0, max_relative = 1e-14);
        for &xi in &[0.3, 1.1, 2.9] {
            assert_eq!(l_d(&t, xi), l_d(&t, -xi));
        }
    }

    #[test]
    fn flat_symbol_recovers_kronecker_with_doubled_origin() {
        // With μ, ν huge the symbol is ≈1 and D_k reduces to cosine
        // orthogonality.
        let s = sym(1e4, f64::INFINITY);
        for k in [1, 2, 3] {
            assert_abs_diff_eq!(
                d_k_quadrature(&s, k, 3.0, 3.0).unwrap(),
                1.0,
                epsilon = 1e-6
            );
            assert_abs_diff_eq!(
                d_k_quadrature(&s, k, 0.0, 0.0).unwrap(),
                2.0,
                epsilon = 1e-6
            );
            assert_abs_diff_eq!(
                d_k_quadrature(&s, k, 2.0, 6.0).unwrap(),
                0.0,
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn quadrature_symmetric_in_real_arguments() {
        let s = sym(1.06, 2.21);
        for k in [1, 2, 3] {
            let a = d_k_quadrature(&s, k, 3.7, 1.2).unwrap();
            let b = d_k_quadrature(&s, k, 1.2, 3.7).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn pole_selection_keeps_two_inside() {
        for (mu, nu) in [(1.06, 2.21), (1.0, 2.0), (0.5, 3.0)] {
            let (roots, inside) = lattice_poles(&sym(mu, nu)).unwrap();
            assert_eq!(inside.len(), 2);
            for &i in &inside {
                assert!(roots[i].norm() < 1.0);
            }
            // Pole pairs multiply to 1, so the other two sit outside.
            for i in 0..4 {
                if !inside.contains(&i) {
                    assert!(roots[i].norm() > 1.0);
                }
            }
        }
    }

    #[test]
    fn confluent_roots_are_flagged() {
        // The two quadratic factors share roots where the discriminant of
        // α± vanishes, at μ = ν/√2.
        let nu = 2.0;
        let s = sym(nu / 2.0_f64.sqrt(), nu);
        assert!(matches!(
            d_1_residue(&s, 2, 5),
            Err(Error::DegenerateRoots { .. })
        ));
    }

    #[test]
    fn residues_match_quadrature_spot_checks() {
        // The acceptance suite sweeps all of [0,40]²; here a few pairs per
        // branch keep the module self-checking.
        let sets = [sym(1.06, 2.21), sym(1.0, 2.0), sym(2.0, 1.0)];
        let pairs = [(0, 0), (2, 7), (5, 5), (0, 13), (11, 3)];
        for s in &sets {
            for &(t, tp) in &pairs {
                let q1 = d_k_quadrature(s, 1, f64::from(t), f64::from(tp)).unwrap();
                let q2 = d_k_quadrature(s, 2, f64::from(t), f64::from(tp)).unwrap();
                assert_abs_diff_eq!(d_1_residue(s, t, tp).unwrap(), q1, epsilon = 1e-8);
                assert_abs_diff_eq!(d_2_residue(s, t, tp).unwrap(), q2, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn tension_only_residues_match_quadrature() {
        let s = DiscreteSymbol::tension_only(1.01).unwrap();
        for &(t, tp) in &[(0, 0), (1, 4), (6, 6), (0, 9)] {
            let q1 = d_k_quadrature(&s, 1, f64::from(t), f64::from(tp)).unwrap();
            let q2 = d_k_quadrature(&s, 2, f64::from(t), f64::from(tp)).unwrap();
            assert_abs_diff_eq!(d_1_residue(&s, t, tp).unwrap(), q1, epsilon = 1e-8);
            assert_abs_diff_eq!(d_2_residue(&s, t, tp).unwrap(), q2, epsilon = 1e-8);
        }
    }

    #[test]
    fn d2_positive_diagonal_and_decaying() {
        let s = sym(1.0, 2.0);
        let origin = d_2_residue(&s, 0, 0).unwrap();
        assert!(origin > 0.0);
        assert!(d_2_residue(&s, 7, 7).unwrap() > 0.0);
        let far = d_2_residue(&s, 0, 40).unwrap();
        assert!(far.abs() / origin < 1e-3);
    }

    #[test]
    fn propagator_delta_at_zero_lag_and_decay() {
        let s = sym(1.06, 2.21);
        assert_eq!(propagator(&s, 1.0, 3, 3, 0.0).unwrap(), 1.0);
        assert_eq!(propagator(&s, 1.0, 0, 0, 0.0).unwrap(), 2.0);
        assert_eq!(propagator(&s, 1.0, 2, 5, 0.0).unwrap(), 0.0);
        let mut prev = propagator(&s, 1.0, 4, 4, 0.0).unwrap();
        for step in 1..=6 {
            let v = propagator(&s, 1.0, 4, 4, 0.3 * f64::from(step)).unwrap();
            assert!(v < prev, "propagator not decaying at step {step}");
            prev = v;
        }
    }

    #[test]
    fn propagator_matches_complex_route() {
        // Independent evaluation over the full circle with complex
        // exponentials instead of folded cosines.
        let s = sym(1.06, 2.21);
        let (tau, dt) = (0.7, 3.5);
        let (theta, theta_p) = (1u32, 4u32);
        let direct = propagator(&s, tau, theta, theta_p, dt).unwrap();
        let other = quad::adaptive(-PI, PI, Tolerance::absolute(1e-12), |xi| {
            let diff = f64::from(theta) - f64::from(theta_p);
            let sum = f64::from(theta + theta_p);
            let phase = (Complex64::new(0.0, xi * diff).exp()
                + Complex64::new(0.0, xi * sum).exp())
                * (-l_d(&s, xi) * dt / tau).exp();
            phase.re / (2.0 * PI)
        })
        .unwrap();
        assert_abs_diff_eq!(direct, other, epsilon = 1e-10);
    }

    #[test]
    fn rho_unit_diagonal_and_surface_consistency() {
        let s = sym(1.06, 2.21);
        let spec = PsyTimeSpec::LogHyperbolic { psi: 2.06 };
        assert_relative_eq!(rho_bbd(&s, spec, 5.0, 5.0).unwrap(), 1.0, max_relative = 1e-10);
        let grid = TenorGrid::new(vec![1, 4, 9, 17, 30]).unwrap();
        let surf = surface(&s, spec, &grid).unwrap();
        for (i, &u) in grid.units().iter().enumerate() {
            for (j, &v) in grid.units().iter().enumerate() {
                let single = rho_bbd(&s, spec, f64::from(u), f64::from(v)).unwrap();
                assert_abs_diff_eq!(surf.values()[(i, j)], single, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn model_surfaces_are_psd() {
        let grid = TenorGrid::standard();
        let cases = [
            (sym(1.06, 2.21), PsyTimeSpec::LogHyperbolic { psi: 2.06 }),
            (
                DiscreteSymbol::tension_only(1.01).unwrap(),
                PsyTimeSpec::LogHyperbolic { psi: 2.00 },
            ),
        ];
        for (s, spec) in cases {
            let surf = surface(&s, spec, &grid).unwrap();
            assert!(
                surf.min_eigenvalue() >= -1e-9,
                "min eigenvalue {}",
                surf.min_eigenvalue()
            );
        }
    }

    #[test]
    fn binned_covariance_reaches_both_limits() {
        let s = sym(1.06, 2.21);
        let spec = PsyTimeSpec::Identity;
        let (theta, theta_p) = (2.0, 5.0);
        let big_d = 0.8;
        let delta_t = 1.0;

        let fast = DynamicsParams::new(1e-6, big_d, 0.0, delta_t).unwrap();
        let v_fast = cov_delta_a_finite_tau(&s, spec, &fast, theta, theta_p).unwrap();
        let d2 = d_k_quadrature(&s, 2, theta, theta_p).unwrap();
        assert_relative_eq!(v_fast, 2.0 * big_d * delta_t * d2, max_relative = 1e-5);

        let slow = DynamicsParams::new(1e6, big_d, 0.0, delta_t).unwrap();
        let v_slow = cov_delta_a_finite_tau(&s, spec, &slow, theta, theta_p).unwrap();
        let d1 = d_k_quadrature(&s, 1, theta, theta_p).unwrap();
        assert_relative_eq!(
            v_slow,
            big_d * delta_t * delta_t / 1e6 * d1,
            max_relative = 1e-4
        );
    }

    #[test]
    fn binned_correlation_grows_with_bin_width() {
        let s = sym(1.06, 2.21);
        let spec = PsyTimeSpec::Identity;
        let tau = 1.0;
        let mut prev = -1.0;
        for &dt in &[0.01, 0.1, 0.5, 1.0, 5.0, 20.0, 100.0] {
            let dynamics = DynamicsParams::new(tau, 1.0, 0.0, dt).unwrap();
            let cab = cov_delta_a_finite_tau(&s, spec, &dynamics, 2.0, 5.0).unwrap();
            let caa = cov_delta_a_finite_tau(&s, spec, &dynamics, 2.0, 2.0).unwrap();
            let cbb = cov_delta_a_finite_tau(&s, spec, &dynamics, 5.0, 5.0).unwrap();
            let rho = cab / (caa * cbb).sqrt();
            assert!(
                rho >= prev - 1e-12,
                "correlation not non-decreasing at dt={dt}: {rho} < {prev}"
            );
            prev = rho;
        }
    }

    #[test]
    fn idiosyncratic_noise_hits_only_the_diagonal() {
        let s = sym(1.06, 2.21);
        let spec = PsyTimeSpec::Identity;
        let without = DynamicsParams::new(0.5, 1.0, 0.0, 1.0).unwrap();
        let with = DynamicsParams::new(0.5, 1.0, 0.3, 1.0).unwrap();
        let diag_w = cov_delta_a_finite_tau(&s, spec, &with, 4.0, 4.0).unwrap();
        let diag_wo = cov_delta_a_finite_tau(&s, spec, &without, 4.0, 4.0).unwrap();
        assert_relative_eq!(diag_w - diag_wo, 2.0 * 0.3, max_relative = 1e-10);
        let off_w = cov_delta_a_finite_tau(&s, spec, &with, 2.0, 4.0).unwrap();
        let off_wo = cov_delta_a_finite_tau(&s, spec, &without, 2.0, 4.0).unwrap();
        assert_abs_diff_eq!(off_w, off_wo, epsilon = 1e-14);
    }

    #[test]
    fn weak_coupling_collapses_both_lattice_and_continuum_models() {
        // Large μ, ν mean weak neighbour coupling: both correlation surfaces
        // are then near the identity and agree within 1e-2 at matched
        // scales. (At intermediate μ ≈ 1–3 the two decay rates genuinely
        // differ, since the lattice dispersion saturates where the continuum
        // one keeps growing.)
        let spec = PsyTimeSpec::Identity;
        let lattice = sym(6.0, 12.0);
        let string = continuous::StiffStringParams::new(6.0, 12.0).unwrap();
        for theta in [20.0, 27.0, 35.0] {
            for theta_p in [22.0, 30.0, 39.0] {
                let d = rho_bbd(&lattice, spec, theta, theta_p).unwrap();
                let c = continuous::rho_bbl(&string, spec, theta, theta_p).unwrap();
                assert_abs_diff_eq!(d, c, epsilon = 1e-2);
            }
        }
    }

    #[test]
    fn field_correlator_reaches_continuum_limit() {
        // When correlation lengths span many lattice sites (small μ, ν), the
        // lattice symbol is only probed at ξ ≪ 1 where it matches the
        // continuum envelope, so the normalized D₁ converges to the
        // normalized continuum correlator at the same scales.
        let s = sym(0.15, 0.3);
        let string = continuous::StiffStringParams::new(0.15, 0.3).unwrap();
        let norm_lattice = d_k_quadrature(&s, 1, 0.0, 0.0).unwrap();
        let norm_cont = continuous::d_bb(&string, 0.0, 0.0).unwrap();
        for &(t, tp) in &[(0.0, 5.0), (3.0, 11.0), (10.0, 20.0), (0.0, 25.0)] {
            let lattice = d_k_quadrature(&s, 1, t, tp).unwrap() / norm_lattice;
            let cont = continuous::d_bb(&string, t, tp).unwrap() / norm_cont;
            assert_abs_diff_eq!(lattice, cont, epsilon = 1e-2);
        }
    }
}

//! One-parameter lattice model: correlators from a banded relaxation operator.
//!
//! When the psychological-time scale is taken far below one lattice step, the
//! curve dynamics depend on the products κ = μ·ψ and κ₂ = ν·ψ only, and the
//! stationary correlations come from linear algebra instead of quadrature: a
//! banded operator `M` couples neighbouring tenor sites, a diagonal weight
//! `J` doubles the noise feeding the spot site (the image term of the
//! reflecting boundary), and every correlator is an arrangement of `M⁻¹J`.
//!
//! [`cov_bbdl`] gives the white-driving-noise covariance `M⁻¹J²M⁻ᵀ`,
//! [`rho_bbdl`] its normalized restriction to a tenor grid, and
//! [`FiniteTauKernel`] the finite-memory covariance across observation
//! windows via the eigendecomposition of `M`.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::TenorGrid;
use crate::linalg::{self, BandMatrix};
use crate::params::DynamicsParams;
use crate::surface::CorrelationSurface;

/// Default operator size; large compared with the ≈40 quoted tenors so that
/// the far lattice edge cannot bend on-grid correlations.
pub const DEFAULT_N_MAT: usize = 500;

/// Minimum count of buffer rows between the largest requested tenor and the
/// far lattice edge.
pub const BOUNDARY_MARGIN: usize = 100;

/// Pivot-ratio floor below which the banded factorization is reported as
/// effectively singular.
const RCOND_FLOOR: f64 = 1e-14;

/// Cap on the relative residual of the dense solve used for the five-band
/// stencil, which has no cheap conditioning estimate.
const DENSE_RESIDUAL_TOL: f64 = 1e-8;

/// Acceptable eigenbasis reconstruction error, relative to the operator norm.
const EIG_RECONSTRUCTION_TOL: f64 = 1e-6;

/// Acceptable stray imaginary part when realifying spectral sums.
const REALIFY_TOL: f64 = 1e-8;

/// The site-relaxation operator on tenors θ = 0..n_mat−1.
///
/// Row θ carries a stencil whose coefficients grow with θ; the spot row is
/// the identity (its θ-prefactors vanish), pinning the short end. With only
/// the tension product κ the stencil is tridiagonal and symmetric:
///
/// ```text
/// M[θ][θ±1] = ∓θ/κ² − θ²/κ²,   M[θ][θ] = 1 + 2θ²/κ²
/// ```
///
/// Supplying a finite stiffness product κ₂ adds third- and fourth-difference
/// bands, widening the bandwidth to two and breaking symmetry near the spot
/// row. Columns falling outside the lattice are dropped; callers keep quoted
/// tenors at least [`BOUNDARY_MARGIN`] rows away from the far edge, where
/// that truncation is felt.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    n_mat: usize,
    kappa: f64,
    /// Stiffness product ν·ψ; `f64::INFINITY` selects the tridiagonal form.
    kappa2: f64,
}

impl OperatorMatrix {
    pub fn build_m(kappa: f64, n_mat: usize, kappa2: Option<f64>) -> Result<Self> {
        if !kappa.is_finite() || kappa <= 0.0 {
            return Err(Error::NonPositiveParameter {
                name: "kappa",
                value: kappa,
            });
        }
        let kappa2 = kappa2.unwrap_or(f64::INFINITY);
        if !(kappa2 > 0.0) {
            return Err(Error::NonPositiveParameter {
                name: "kappa2",
                value: kappa2,
            });
        }
        if n_mat < 3 {
            return Err(Error::SizeTooSmall {
                n_mat,
                required: 3,
            });
        }
        Ok(Self {
            n_mat,
            kappa,
            kappa2,
        })
    }

    /// Build from the underlying scales; only the products μ·ψ and ν·ψ enter.
    pub fn from_scales(psi: f64, mu: f64, nu: f64, n_mat: usize) -> Result<Self> {
        if !psi.is_finite() || psi <= 0.0 {
            return Err(Error::NonPositiveParameter {
                name: "psi",
                value: psi,
            });
        }
        if !mu.is_finite() || mu <= 0.0 {
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
        let kappa2 = if nu.is_finite() {
            Some(psi * nu)
        } else {
            None
        };
        Self::build_m(psi * mu, n_mat, kappa2)
    }

    pub fn n_mat(&self) -> usize {
        self.n_mat
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// The stiffness product, when the five-band stencil is active.
    pub fn kappa2(&self) -> Option<f64> {
        if self.kappa2.is_finite() {
            Some(self.kappa2)
        } else {
            None
        }
    }

    pub fn is_tension_only(&self) -> bool {
        self.kappa2.is_infinite()
    }

    pub fn bandwidth(&self) -> usize {
        if self.is_tension_only() {
            1
        } else {
            2
        }
    }

    /// Nonzero coefficients of row `theta` as `(column, value)`, ascending,
    /// clipped to the lattice.
    pub fn row_coefficients(&self, theta: usize) -> Vec<(usize, f64)> {
        let n = self.n_mat;
        let t = theta as f64;
        let mut out = Vec::with_capacity(5);
        let mut push = |offset: i64, v: f64| {
            let c = theta as i64 + offset;
            if (0..n as i64).contains(&c) && (v != 0.0 || offset == 0) {
                out.push((c as usize, v));
            }
        };
        let kap_sq = self.kappa * self.kappa;
        if self.is_tension_only() {
            push(-1, t / kap_sq - t * t / kap_sq);
            push(0, 1.0 + 2.0 * t * t / kap_sq);
            push(1, -t / kap_sq - t * t / kap_sq);
        } else {
            let kap2_4 = self.kappa2.powi(4);
            let c1 = 1.0 / kap2_4 - 1.0 / kap_sq;
            let c2 = 7.0 / kap2_4 - 1.0 / kap_sq;
            let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
            push(-2, -3.0 * t3 / kap2_4 + t4 / kap2_4);
            push(
                -1,
                -0.5 * t * c1 + t2 * c2 + 6.0 * t3 / kap2_4 - 4.0 * t4 / kap2_4,
            );
            push(0, 1.0 - 2.0 * t2 * c2 + 6.0 * t4 / kap2_4);
            push(
                1,
                0.5 * t * c1 + t2 * c2 - 6.0 * t3 / kap2_4 - 4.0 * t4 / kap2_4,
            );
            push(2, 3.0 * t3 / kap2_4 + t4 / kap2_4);
        }
        out
    }

    /// Banded storage of the operator.
    pub fn band(&self) -> BandMatrix {
        let bw = self.bandwidth();
        let mut b = BandMatrix::zeros(self.n_mat, bw, bw);
        for theta in 0..self.n_mat {
            for (c, v) in self.row_coefficients(theta) {
                b.set(theta, c, v);
            }
        }
        b
    }

    pub fn dense(&self) -> Array2<f64> {
        self.band().to_dense()
    }

    /// X = M⁻¹J, the map from unit white noise to the stationary field.
    ///
    /// The tridiagonal form is strictly diagonally dominant (margin exactly
    /// one in every row), so the no-pivot banded factorization is safe; the
    /// five-band form goes through a dense pivoted solve with a residual
    /// gate standing in for a conditioning estimate.
    fn noise_transfer(&self) -> Result<Array2<f64>> {
        let n = self.n_mat;
        let j = j_diag(n);
        if self.is_tension_only() {
            let lu = self.band().factor()?;
            if lu.rcond_estimate() < RCOND_FLOOR {
                return Err(Error::SingularOperator {
                    detail: format!(
                        "pivot-ratio estimate {:.3e} below {RCOND_FLOOR:.0e}",
                        lu.rcond_estimate()
                    ),
                });
            }
            let mut x = Array2::zeros((n, n));
            for u in 0..n {
                let col = lu.solve_unit(u);
                for i in 0..n {
                    x[(i, u)] = col[i] * j[u];
                }
            }
            Ok(x)
        } else {
            let mut rhs = Array2::zeros((n, n));
            for (u, &ju) in j.iter().enumerate() {
                rhs[(u, u)] = ju;
            }
            let x = linalg::solve_dense(&self.dense(), &rhs);
            let band = self.band();
            let m_norm = band
                .to_dense()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let x_norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut resid = 0.0f64;
            let mut col = vec![0.0; n];
            for u in 0..n {
                for i in 0..n {
                    col[i] = x[(i, u)];
                }
                let mx = band.mul_vec(&col);
                for i in 0..n {
                    let want = if i == u { j[u] } else { 0.0 };
                    resid = resid.max((mx[i] - want).abs());
                }
            }
            if !x_norm.is_finite() || resid > DENSE_RESIDUAL_TOL * m_norm * x_norm.max(1.0) {
                return Err(Error::SingularOperator {
                    detail: format!(
                        "dense solve residual {resid:.3e} against operator norm {m_norm:.3e}"
                    ),
                });
            }
            Ok(x)
        }
    }
}

/// Diagonal of the boundary-image weight: 2 on the spot site, 1 elsewhere.
pub fn j_diag(n: usize) -> Vec<f64> {
    let mut j = vec![1.0; n];
    if n > 0 {
        j[0] = 2.0;
    }
    j
}

/// Stationary covariance `M⁻¹J²M⁻ᵀ` of the site field under unit white
/// driving noise. Multiply by `2DΔt` for physical increment covariances.
///
/// Assembled as `XXᵀ` with `X = M⁻¹J`, so the result is symmetric exactly
/// and positive semi-definite up to rounding.
pub fn cov_bbdl(m: &OperatorMatrix) -> Result<Array2<f64>> {
    let x = m.noise_transfer()?;
    let n = m.n_mat();
    let mut cov = Array2::zeros((n, n));
    for i in 0..n {
        let ri = x.row(i);
        let ri = ri.as_slice().expect("row-major rows are contiguous");
        for k in 0..=i {
            let rk = x.row(k);
            let rk = rk.as_slice().expect("row-major rows are contiguous");
            let s: f64 = ri.iter().zip(rk).map(|(a, b)| a * b).sum();
            cov[(i, k)] = s;
            cov[(k, i)] = s;
        }
    }
    Ok(cov)
}

/// Equal-time correlation surface of the tridiagonal-form model on a tenor
/// grid, leaving at least [`BOUNDARY_MARGIN`] buffer rows past the largest
/// tenor.
pub fn rho_bbdl(kappa: f64, grid: &TenorGrid, n_mat: usize) -> Result<CorrelationSurface> {
    let m = OperatorMatrix::build_m(kappa, n_mat, None)?;
    rho_from_operator(&m, grid)
}

/// Correlation surface of an already-built operator, restricted to a grid.
///
/// Only the grid rows of `M⁻¹` are formed (one transposed solve per tenor),
/// so the cost scales with the grid, not with `n_mat²`.
pub fn rho_from_operator(m: &OperatorMatrix, grid: &TenorGrid) -> Result<CorrelationSurface> {
    let n = m.n_mat();
    let required = grid.max_unit() as usize + BOUNDARY_MARGIN + 1;
    if n < required {
        return Err(Error::SizeTooSmall {
            n_mat: n,
            required,
        });
    }
    let rows: Vec<Vec<f64>> = if m.is_tension_only() {
        let lut = m.band().transpose().factor()?;
        grid.iter()
            .map(|g| lut.solve_unit(g as usize))
            .collect()
    } else {
        let mt = m.dense().reversed_axes().to_owned();
        let mut rhs = Array2::zeros((n, grid.len()));
        for (c, g) in grid.iter().enumerate() {
            rhs[(g as usize, c)] = 1.0;
        }
        let sol = linalg::solve_dense(&mt, &rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularOperator {
                detail: "transposed dense solve produced non-finite entries".into(),
            });
        }
        (0..grid.len())
            .map(|c| (0..n).map(|i| sol[(i, c)]).collect())
            .collect()
    };
    // With r_g the g-th row of M⁻¹ and J² = I + 3·e₀e₀ᵀ:
    //     (M⁻¹J²M⁻ᵀ)_{gg′} = r_g·r_{g′} + 3 r_g[0] r_{g′}[0]
    let k = grid.len();
    let mut x = Array2::zeros((k, k));
    for a in 0..k {
        for b in 0..=a {
            let s: f64 = rows[a].iter().zip(&rows[b]).map(|(p, q)| p * q).sum();
            let s = s + 3.0 * rows[a][0] * rows[b][0];
            x[(a, b)] = s;
            x[(b, a)] = s;
        }
    }
    for a in 0..k {
        if x[(a, a)] <= 0.0 {
            return Err(Error::SingularOperator {
                detail: format!("non-positive variance at grid row {a}"),
            });
        }
    }
    let values = Array2::from_shape_fn((k, k), |(a, b)| {
        if a == b {
            1.0
        } else {
            x[(a, b)] / (x[(a, a)] * x[(b, b)]).sqrt()
        }
    });
    CorrelationSurface::new(grid.clone(), values)
}

/// Per-mode weight of one observation window,
/// `f(λ) = Δt/λ + (τ/λ²)(e^{−Δtλ/τ} − 1)`,
/// switching to its series where the direct form cancels.
fn bin_weight(lambda: Complex64, dt: f64, tau: f64) -> Complex64 {
    let x = lambda * (dt / tau);
    if x.norm() < 1e-2 {
        // f = (Δt²/2τ)(1 − x/3 + x²/12 − x³/60 + x⁴/360 − …)
        let poly = Complex64::new(1.0, 0.0) - x / 3.0 + x * x / 12.0 - x * x * x / 60.0
            + x * x * x * x / 360.0;
        poly * (dt * dt / (2.0 * tau))
    } else {
        dt / lambda + linalg::expm1_complex(-x) * tau / (lambda * lambda)
    }
}

/// Congruence `P W Pᵀ` for symmetric `W`; the output is mirrored so it is
/// symmetric exactly.
pub(crate) fn congruence(p: &Array2<Complex64>, w: &Array2<Complex64>) -> Array2<Complex64> {
    let n = p.nrows();
    let zero = Complex64::default();
    let mut y = Array2::from_elem((n, n), zero);
    let mut yrow = vec![zero; n];
    for i in 0..n {
        yrow.fill(zero);
        for k in 0..n {
            let c = p[(i, k)];
            let wk = w.row(k);
            let wk = wk.as_slice().expect("row-major rows are contiguous");
            for (acc, &v) in yrow.iter_mut().zip(wk) {
                *acc += c * v;
            }
        }
        for (k, &v) in yrow.iter().enumerate() {
            y[(i, k)] = v;
        }
    }
    let mut z = Array2::from_elem((n, n), zero);
    for i in 0..n {
        let yi = y.row(i);
        let yi = yi.as_slice().expect("row-major rows are contiguous");
        for jj in 0..=i {
            let pj = p.row(jj);
            let pj = pj.as_slice().expect("row-major rows are contiguous");
            let mut s = zero;
            for k in 0..n {
                s += yi[k] * pj[k];
            }
            z[(i, jj)] = s;
            z[(jj, i)] = s;
        }
    }
    z
}

/// Eigendecomposition of the relaxation operator with the noise shape folded
/// in, reused across repeated finite-memory covariance evaluations.
///
/// Building the kernel costs one dense eigendecomposition; each full
/// covariance afterwards is two dense multiplies, and a cached [`PairChannel`]
/// evaluates a single entry in O(n).
pub struct FiniteTauKernel {
    n: usize,
    values: Vec<Complex64>,
    /// Right eigenvectors as columns.
    right: Array2<Complex64>,
    /// Inverse of `right`.
    inv: Array2<Complex64>,
    /// `P⁻¹ J² P⁻ᵀ`, the driving-noise shape in the eigenbasis.
    shape: Array2<Complex64>,
}

impl FiniteTauKernel {
    pub fn new(m: &OperatorMatrix) -> Result<Self> {
        let n = m.n_mat();
        let eig = linalg::eigendecompose(&m.dense(), EIG_RECONSTRUCTION_TOL)?;
        if let Some(bad) = eig.values.iter().find(|l| l.re <= 0.0) {
            return Err(Error::NumericalBreakdown {
                detail: format!("relaxation mode with non-positive real part: {bad}"),
            });
        }
        // s = B J² Bᵀ with B = P⁻¹ and J² = I + 3·e₀e₀ᵀ.
        let b = &eig.inv;
        let zero = Complex64::default();
        let mut shape = Array2::from_elem((n, n), zero);
        for k in 0..n {
            let bk = b.row(k);
            let bk = bk.as_slice().expect("row-major rows are contiguous");
            for kp in 0..=k {
                let bp = b.row(kp);
                let bp = bp.as_slice().expect("row-major rows are contiguous");
                let mut s = zero;
                for u in 0..n {
                    s += bk[u] * bp[u];
                }
                s += 3.0 * bk[0] * bp[0];
                shape[(k, kp)] = s;
                shape[(kp, k)] = s;
            }
        }
        Ok(Self {
            n,
            values: eig.values,
            right: eig.right,
            inv: eig.inv,
            shape,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Relaxation-rate spectrum of the operator.
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Right eigenvectors as columns.
    pub fn right(&self) -> &Array2<Complex64> {
        &self.right
    }

    pub fn inv(&self) -> &Array2<Complex64> {
        &self.inv
    }

    /// Driving-noise shape `P⁻¹J²P⁻ᵀ` in the eigenbasis.
    pub fn shape(&self) -> &Array2<Complex64> {
        &self.shape
    }

    /// Covariance of increments summed over windows of length `delta_t`,
    /// valid at every ratio of memory time to window:
    ///
    /// ```text
    /// cov = 2D · P [ s_{kk′} (f(λ_k) + f(λ_{k′})) / (λ_k + λ_{k′}) ] Pᵀ  +  2DεΔt·I
    /// ```
    ///
    /// The idiosyncratic term is the observation noise riding on each tenor
    /// independently. As τ/Δt → 0 this tends to `2DΔt·cov_bbdl`; as
    /// τ/Δt → ∞ it tends to [`FiniteTauKernel::epps_limit_cov`].
    pub fn cov(&self, dynamics: &DynamicsParams) -> Result<Array2<f64>> {
        dynamics.validate()?;
        let n = self.n;
        let f: Vec<Complex64> = self
            .values
            .iter()
            .map(|&l| bin_weight(l, dynamics.delta_t, dynamics.tau))
            .collect();
        let mut w = Array2::from_elem((n, n), Complex64::default());
        for k in 0..n {
            for kp in 0..n {
                w[(k, kp)] =
                    self.shape[(k, kp)] * (f[k] + f[kp]) / (self.values[k] + self.values[kp]);
            }
        }
        let z = congruence(&self.right, &w);
        let mut cov = linalg::realify(&z, REALIFY_TOL, "finite-memory covariance")?;
        let scale = 2.0 * dynamics.big_d;
        cov.mapv_inplace(|v| v * scale);
        let idio = 2.0 * dynamics.big_d * dynamics.epsilon * dynamics.delta_t;
        for i in 0..n {
            cov[(i, i)] += idio;
        }
        Ok(cov)
    }

    /// Closed form of the covariance in the τ ≫ Δt regime, where every mode
    /// contributes the same window weight Δt²/2τ:
    ///
    /// ```text
    /// cov = 2D (Δt²/τ) · P [ s_{kk′} / (λ_k + λ_{k′}) ] Pᵀ  +  2DεΔt·I
    /// ```
    ///
    /// The bracketed matrix is the solution `Y` of `M Y + Y Mᵀ = J²`.
    pub fn epps_limit_cov(&self, dynamics: &DynamicsParams) -> Result<Array2<f64>> {
        dynamics.validate()?;
        let n = self.n;
        let mut w = Array2::from_elem((n, n), Complex64::default());
        for k in 0..n {
            for kp in 0..n {
                w[(k, kp)] = self.shape[(k, kp)] / (self.values[k] + self.values[kp]);
            }
        }
        let z = congruence(&self.right, &w);
        let mut cov = linalg::realify(&z, REALIFY_TOL, "memory-dominated covariance")?;
        let scale = 2.0 * dynamics.big_d * dynamics.delta_t * dynamics.delta_t / dynamics.tau;
        cov.mapv_inplace(|v| v * scale);
        let idio = 2.0 * dynamics.big_d * dynamics.epsilon * dynamics.delta_t;
        for i in 0..n {
            cov[(i, i)] += idio;
        }
        Ok(cov)
    }

    /// Pre-contract the spectral sums for one `(θ, θ′)` entry.
    pub fn pair(&self, theta: usize, theta_p: usize) -> PairChannel {
        assert!(
            theta < self.n && theta_p < self.n,
            "tenor index outside the operator lattice"
        );
        let zero = Complex64::default();
        let mut weights = vec![zero; self.n];
        let mut total = zero;
        let mut total_abs = 0.0f64;
        for k in 0..self.n {
            let a = self.right[(theta, k)];
            for kp in 0..self.n {
                let t = a * self.shape[(k, kp)] * self.right[(theta_p, kp)]
                    / (self.values[k] + self.values[kp]);
                weights[k] += t;
                weights[kp] += t;
                total += t;
                total_abs += t.norm();
            }
        }
        PairChannel {
            diag_pair: theta == theta_p,
            weights,
            total,
            total_abs,
            values: self.values.clone(),
        }
    }
}

/// One covariance entry with its spectral sums pre-contracted, so repeated
/// evaluation at new `(τ, Δt)` costs O(n). Produced by
/// [`FiniteTauKernel::pair`].
pub struct PairChannel {
    diag_pair: bool,
    /// u_k = Σ_{k′} T_{kk′} + T_{k′k} with
    /// T_{kk′} = P_{θk} s_{kk′} P_{θ′k′}/(λ_k+λ_{k′}); the covariance entry
    /// is Σ_k f(λ_k)·u_k.
    weights: Vec<Complex64>,
    total: Complex64,
    total_abs: f64,
    values: Vec<Complex64>,
}

impl PairChannel {
    /// Finite-memory covariance entry; matches the corresponding entry of
    /// [`FiniteTauKernel::cov`].
    pub fn cov(&self, dynamics: &DynamicsParams) -> Result<f64> {
        dynamics.validate()?;
        let mut s = Complex64::default();
        let mut s_abs = 0.0f64;
        for (w, &l) in self.weights.iter().zip(&self.values) {
            let f = bin_weight(l, dynamics.delta_t, dynamics.tau);
            s += *w * f;
            s_abs += w.norm() * f.norm();
        }
        if s.im.abs() > REALIFY_TOL * s_abs.max(f64::MIN_POSITIVE) {
            return Err(Error::NumericalBreakdown {
                detail: format!(
                    "pair covariance retains imaginary part {:.3e} against scale {:.3e}",
                    s.im, s_abs
                ),
            });
        }
        let mut v = 2.0 * dynamics.big_d * s.re;
        if self.diag_pair {
            v += 2.0 * dynamics.big_d * dynamics.epsilon * dynamics.delta_t;
        }
        Ok(v)
    }

    /// Closed-form τ ≫ Δt limit of the same entry; matches
    /// [`FiniteTauKernel::epps_limit_cov`].
    pub fn epps_limit_cov(&self, dynamics: &DynamicsParams) -> Result<f64> {
        dynamics.validate()?;
        if self.total.im.abs() > REALIFY_TOL * self.total_abs.max(f64::MIN_POSITIVE) {
            return Err(Error::NumericalBreakdown {
                detail: format!(
                    "pair covariance retains imaginary part {:.3e} against scale {:.3e}",
                    self.total.im, self.total_abs
                ),
            });
        }
        let scale = 2.0 * dynamics.big_d * dynamics.delta_t * dynamics.delta_t / dynamics.tau;
        let mut v = scale * self.total.re;
        if self.diag_pair {
            v += 2.0 * dynamics.big_d * dynamics.epsilon * dynamics.delta_t;
        }
        Ok(v)
    }
}

/// Covariance of windowed increments at finite memory time; see
/// [`FiniteTauKernel::cov`]. Rebuilds the eigendecomposition on every call —
/// hold a [`FiniteTauKernel`] to amortize it.
pub fn cov_bbdl_finite_tau(m: &OperatorMatrix, dynamics: &DynamicsParams) -> Result<Array2<f64>> {
    FiniteTauKernel::new(m)?.cov(dynamics)
}

/// Closed-form τ ≫ Δt covariance; see [`FiniteTauKernel::epps_limit_cov`].
pub fn epps_limit_cov(m: &OperatorMatrix, dynamics: &DynamicsParams) -> Result<Array2<f64>> {
    FiniteTauKernel::new(m)?.epps_limit_cov(dynamics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigenvalues, min_sym_eigenvalue, solve_dense};

    fn dyn_params(tau: f64, delta_t: f64) -> DynamicsParams {
        DynamicsParams::new(tau, 0.7, 0.0, delta_t).unwrap()
    }

    #[test]
    fn huge_kappa_gives_identity_matrix() {
        let m = OperatorMatrix::build_m(1e9, 10, None).unwrap();
        let d = m.dense();
        for i in 0..10 {
            for j in 0..10 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d[(i, j)] - want).abs() < 1e-10, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn spot_row_is_identity_row() {
        let m = OperatorMatrix::build_m(0.6, 12, None).unwrap();
        assert_eq!(m.row_coefficients(0), vec![(0, 1.0)]);
        let g = OperatorMatrix::build_m(0.6, 12, Some(1.3)).unwrap();
        assert_eq!(g.row_coefficients(0), vec![(0, 1.0)]);
    }

    #[test]
    fn tridiagonal_row_matches_hand_expansion() {
        let m = OperatorMatrix::build_m(1.0, 6, None).unwrap();
        let d = m.dense();
        assert_eq!(d[(1, 0)], 0.0);
        assert_eq!(d[(1, 1)], 3.0);
        assert_eq!(d[(1, 2)], -2.0);
        // θ=2: sub 2(1−2)=−2, diag 1+8=9, super −(2+4)=−6
        assert_eq!(d[(2, 1)], -2.0);
        assert_eq!(d[(2, 2)], 9.0);
        assert_eq!(d[(2, 3)], -6.0);
    }

    #[test]
    fn five_band_row_matches_hand_expansion() {
        // κ = κ₂ = 1 at θ = 1: c₁ = 0, c₂ = 6, third/fourth-difference
        // prefactors 6 and 1; expanding the five offsets by hand gives
        // (−2, 8, −5, −4, 4) from column −1 (clipped) through +3.
        let m = OperatorMatrix::build_m(1.0, 8, Some(1.0)).unwrap();
        let d = m.dense();
        assert_eq!(d[(1, 0)], 8.0);
        assert_eq!(d[(1, 1)], -5.0);
        assert_eq!(d[(1, 2)], -4.0);
        assert_eq!(d[(1, 3)], 4.0);
        // the −2 offset at θ=1 would land on column −1 and is dropped
        assert_eq!(
            m.row_coefficients(1).first().map(|&(c, _)| c),
            Some(0usize)
        );
    }

    #[test]
    fn tridiagonal_form_is_symmetric_and_dominant() {
        let m = OperatorMatrix::build_m(0.92, 200, None).unwrap();
        let d = m.dense();
        for i in 0..200 {
            for j in 0..200 {
                let scale = d[(i, j)].abs().max(1.0);
                assert!(
                    (d[(i, j)] - d[(j, i)]).abs() <= 1e-14 * scale,
                    "({i},{j}): {} vs {}",
                    d[(i, j)],
                    d[(j, i)]
                );
            }
        }
        assert!(m.band().is_diagonally_dominant());
    }

    #[test]
    fn rejects_bad_sizes_and_parameters() {
        assert!(matches!(
            OperatorMatrix::build_m(1.0, 2, None),
            Err(Error::SizeTooSmall { required: 3, .. })
        ));
        assert!(matches!(
            OperatorMatrix::build_m(-1.0, 10, None),
            Err(Error::NonPositiveParameter { name: "kappa", .. })
        ));
        assert!(matches!(
            OperatorMatrix::build_m(1.0, 10, Some(0.0)),
            Err(Error::NonPositiveParameter { name: "kappa2", .. })
        ));
    }

    #[test]
    fn huge_kappa_covariance_is_squared_image_weight() {
        let m = OperatorMatrix::build_m(1e9, 8, None).unwrap();
        let cov = cov_bbdl(&m).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = if i != j {
                    0.0
                } else if i == 0 {
                    4.0
                } else {
                    1.0
                };
                assert!((cov[(i, j)] - want).abs() < 1e-8, "({i},{j})");
            }
        }
    }

    #[test]
    fn covariance_is_exactly_symmetric() {
        let m = OperatorMatrix::build_m(0.92, 60, None).unwrap();
        let cov = cov_bbdl(&m).unwrap();
        for i in 0..60 {
            for j in 0..60 {
                assert_eq!(cov[(i, j)], cov[(j, i)]);
            }
        }
    }

    #[test]
    fn covariance_matches_dense_reference() {
        let m = OperatorMatrix::build_m(0.7, 30, None).unwrap();
        let cov = cov_bbdl(&m).unwrap();
        // reference through an explicit inverse: M⁻¹ J² M⁻ᵀ
        let n = 30;
        let mut eye = Array2::zeros((n, n));
        for i in 0..n {
            eye[(i, i)] = 1.0;
        }
        let minv = solve_dense(&m.dense(), &eye);
        let j2 = j_diag(n).iter().map(|v| v * v).collect::<Vec<_>>();
        let mut want = Array2::zeros((n, n));
        for i in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for u in 0..n {
                    s += minv[(i, u)] * j2[u] * minv[(k, u)];
                }
                want[(i, k)] = s;
            }
        }
        let diff = (&cov - &want).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(diff < 1e-11, "max deviation {diff:.3e}");
    }

    #[test]
    fn covariance_is_psd_at_documentation_kappa() {
        let m = OperatorMatrix::build_m(0.92, DEFAULT_N_MAT, None).unwrap();
        let cov = cov_bbdl(&m).unwrap();
        let min = min_sym_eigenvalue(&cov);
        assert!(min >= -1e-10, "minimum eigenvalue {min:.3e}");
    }

    #[test]
    fn surface_respects_boundary_margin() {
        let grid = TenorGrid::standard();
        let rho = rho_bbdl(0.92, &grid, 140).unwrap();
        for i in 0..39 {
            assert_eq!(rho.values()[(i, i)], 1.0);
        }
        assert!(matches!(
            rho_bbdl(0.92, &grid, 139),
            Err(Error::SizeTooSmall { required: 140, .. })
        ));
    }

    #[test]
    fn surface_matches_covariance_normalization() {
        let n = 150;
        let m = OperatorMatrix::build_m(0.92, n, None).unwrap();
        let grid = TenorGrid::new((1..=10).collect()).unwrap();
        let rho = rho_from_operator(&m, &grid).unwrap();
        let cov = cov_bbdl(&m).unwrap();
        for (a, ga) in grid.iter().enumerate() {
            for (b, gb) in grid.iter().enumerate() {
                let (ga, gb) = (ga as usize, gb as usize);
                let want = cov[(ga, gb)] / (cov[(ga, ga)] * cov[(gb, gb)]).sqrt();
                assert!(
                    (rho.values()[(a, b)] - want).abs() < 1e-12,
                    "({a},{b}): {} vs {want}",
                    rho.values()[(a, b)]
                );
            }
        }
    }

    #[test]
    fn equal_products_give_equal_surfaces() {
        let grid = TenorGrid::new((1..=20).collect()).unwrap();
        let a = OperatorMatrix::from_scales(1e-3, 920.0, 2000.0, 400).unwrap();
        let b = OperatorMatrix::from_scales(1e-4, 9200.0, 20000.0, 400).unwrap();
        assert!(!a.is_tension_only());
        let ra = rho_from_operator(&a, &grid).unwrap();
        let rb = rho_from_operator(&b, &grid).unwrap();
        let diff = ra.max_abs_diff(&rb).unwrap();
        assert!(diff < 1e-6, "surfaces differ by {diff:.3e}");
    }

    #[test]
    fn restriction_matches_doubled_domain_construction() {
        // Build the operator on signed sites −N..N with the same row stencil,
        // check its claimed structure, and confirm that the non-negative
        // restriction of M̄⁻¹(I+Ī) is exactly our M⁻¹J.
        let kappa = 0.8f64;
        let big_n = 12i64;
        let size = (2 * big_n + 1) as usize;
        let ksq = kappa * kappa;
        let mut full = Array2::zeros((size, size));
        for t in -big_n..=big_n {
            let tf = t as f64;
            let entries = [
                (-1i64, tf / ksq - tf * tf / ksq),
                (0, 1.0 + 2.0 * tf * tf / ksq),
                (1, -tf / ksq - tf * tf / ksq),
            ];
            for (off, v) in entries {
                let c = t + off;
                if (-big_n..=big_n).contains(&c) {
                    full[((t + big_n) as usize, (c + big_n) as usize)] = v;
                }
            }
        }
        // central symmetry and decoupling of the sign blocks
        for i in 0..size {
            for j in 0..size {
                assert_eq!(full[(i, j)], full[(size - 1 - i, size - 1 - j)]);
            }
        }
        let mid = big_n as usize;
        for i in 0..size {
            for j in 0..size {
                let (si, sj) = (i as i64 - big_n, j as i64 - big_n);
                if (si > 0 && sj < 0) || (si < 0 && sj > 0) {
                    assert_eq!(full[(i, j)], 0.0, "cross-block entry ({si},{sj})");
                }
                if sj == 0 && si != 0 {
                    assert_eq!(full[(i, j)], 0.0, "spot-column entry from row {si}");
                }
            }
        }
        assert_eq!(full[(mid, mid)], 1.0);

        // M̄⁻¹(I+Ī) restricted to the non-negative block vs the direct build
        let mut mirror_rhs = Array2::zeros((size, size));
        for i in 0..size {
            mirror_rhs[(i, i)] += 1.0;
            mirror_rhs[(i, size - 1 - i)] += 1.0;
        }
        let xbar = solve_dense(&full, &mirror_rhs);
        let m = OperatorMatrix::build_m(kappa, big_n as usize + 1, None).unwrap();
        let x = m.noise_transfer().unwrap();
        for t in 0..=big_n as usize {
            for u in 0..=big_n as usize {
                let got = xbar[(t + mid, u + mid)];
                assert!(
                    (got - x[(t, u)]).abs() < 1e-11,
                    "({t},{u}): doubled {got} vs restricted {}",
                    x[(t, u)]
                );
            }
        }
    }

    #[test]
    fn small_memory_limit_recovers_stationary_covariance() {
        for kappa in [0.5, 0.92, 1.5] {
            let m = OperatorMatrix::build_m(kappa, 120, None).unwrap();
            let stationary = cov_bbdl(&m).unwrap();
            let d = dyn_params(1e-8 * 3.0, 3.0);
            let cov = cov_bbdl_finite_tau(&m, &d).unwrap();
            let scale = 2.0 * d.big_d * d.delta_t;
            let ref_norm = stationary.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut diff = 0.0f64;
            for i in 0..120 {
                for j in 0..120 {
                    diff = diff.max((cov[(i, j)] / scale - stationary[(i, j)]).abs());
                }
            }
            assert!(
                diff <= 1e-6 * ref_norm,
                "κ={kappa}: deviation {diff:.3e} vs scale {ref_norm:.3e}"
            );
        }
    }

    #[test]
    fn huge_kappa_finite_memory_matches_scalar_relaxation() {
        let m = OperatorMatrix::build_m(1e9, 6, None).unwrap();
        let d = dyn_params(0.37 * 3.0, 3.0);
        let cov = cov_bbdl_finite_tau(&m, &d).unwrap();
        let f = d.delta_t + d.tau * (-d.delta_t / d.tau).exp_m1();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i != j {
                    0.0
                } else if i == 0 {
                    2.0 * d.big_d * f * 4.0
                } else {
                    2.0 * d.big_d * f
                };
                assert!((cov[(i, j)] - want).abs() < 1e-9 * f, "({i},{j})");
            }
        }
    }

    #[test]
    fn large_memory_limit_matches_closed_form() {
        let m = OperatorMatrix::build_m(0.92, 120, None).unwrap();
        let kernel = FiniteTauKernel::new(&m).unwrap();
        let d = dyn_params(1e8 * 3.0, 3.0);
        let cov = kernel.cov(&d).unwrap();
        let want = kernel.epps_limit_cov(&d).unwrap();
        let ref_norm = want.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let diff = (&cov - &want).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(
            diff <= 1e-4 * ref_norm,
            "deviation {diff:.3e} vs scale {ref_norm:.3e}"
        );
    }

    #[test]
    fn memory_dominated_covariance_solves_continuous_balance() {
        // Y := epps_limit_cov / (2DΔt²/τ) must satisfy M Y + Y Mᵀ = J²,
        // checked directly against the banded operator.
        let n = 80;
        let m = OperatorMatrix::build_m(0.92, n, None).unwrap();
        let d = dyn_params(7.0, 3.0);
        let cov = epps_limit_cov(&m, &d).unwrap();
        let scale = 2.0 * d.big_d * d.delta_t * d.delta_t / d.tau;
        let band = m.band();
        let mut col = vec![0.0; n];
        let mut my = Array2::zeros((n, n));
        for u in 0..n {
            for i in 0..n {
                col[i] = cov[(i, u)] / scale;
            }
            let mc = band.mul_vec(&col);
            for i in 0..n {
                my[(i, u)] = mc[i];
            }
        }
        let j = j_diag(n);
        let mut worst = 0.0f64;
        for i in 0..n {
            for u in 0..n {
                let want = if i == u { j[i] * j[i] } else { 0.0 };
                worst = worst.max((my[(i, u)] + my[(u, i)] - want).abs());
            }
        }
        assert!(worst < 1e-7, "balance residual {worst:.3e}");
    }

    #[test]
    fn pair_channel_matches_full_matrix() {
        let m = OperatorMatrix::build_m(0.92, 100, None).unwrap();
        let kernel = FiniteTauKernel::new(&m).unwrap();
        let d = DynamicsParams::new(5.0 * 3.0, 0.7, 2e-3, 3.0).unwrap();
        let cov = kernel.cov(&d).unwrap();
        let epps = kernel.epps_limit_cov(&d).unwrap();
        for (a, b) in [(5usize, 9usize), (9, 9), (1, 30)] {
            let pair = kernel.pair(a, b);
            let got = pair.cov(&d).unwrap();
            assert!(
                (got - cov[(a, b)]).abs() < 1e-10 * cov[(b, b)].abs(),
                "({a},{b}): {got} vs {}",
                cov[(a, b)]
            );
            let got = pair.epps_limit_cov(&d).unwrap();
            assert!(
                (got - epps[(a, b)]).abs() < 1e-10 * epps[(b, b)].abs(),
                "({a},{b}) memory-dominated: {got} vs {}",
                epps[(a, b)]
            );
        }
    }

    #[test]
    fn spectrum_stays_in_right_half_plane() {
        for kappa in [0.3, 0.92, 1.7, 3.0] {
            let m = OperatorMatrix::build_m(kappa, DEFAULT_N_MAT, None).unwrap();
            let vals = eigenvalues(&m.dense());
            let min_re = vals.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
            assert!(
                min_re > 0.0,
                "κ={kappa}: eigenvalue with real part {min_re:.3e}"
            );
        }
    }
}

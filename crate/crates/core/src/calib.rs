//! Calibration of model variants to an empirical correlation surface, local
//! curvature analysis of the fit objective, and fitting of the correlation
//! build-up curve across observation scales.
//!
//! The fit objective throughout is the *typical error* Σ: the standard
//! deviation of the model-minus-empirical error field over the surface
//! entries. Because surface evaluations come out of quadratures and matrix
//! solves with a noise floor around 1e-10, all optimization is
//! derivative-free: a Nelder–Mead simplex over the logarithms of the active
//! parameters, restarted from several seeded points, with the best restart
//! kept under a deterministic reduction order.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbdl::{self, FiniteTauKernel, OperatorMatrix, PairChannel, BOUNDARY_MARGIN};
use crate::continuous::{self, StiffStringParams};
use crate::discrete::{self, DiscreteSymbol};
use crate::empirics::EppsCurve;
use crate::error::{Error, Result};
use crate::grid::TenorGrid;
use crate::linalg;
use crate::params::{DynamicsParams, ModelParams, ModelVariant};
use crate::psytime::{self, PsyTimeSpec};
use crate::surface::CorrelationSurface;

/// Seed used whenever the caller does not supply one.
pub const DEFAULT_SEED: u64 = 7;

/// Natural-log bounds of the parameter box: every active parameter is
/// confined to [1e-3, 1e3] (ψ̄ additionally to (0, 1]).
const LOG_LOWER: f64 = -6.907_755_278_982_137; // ln 1e-3
const LOG_UPPER: f64 = 6.907_755_278_982_137; // ln 1e3

/// Simplex stops when its ∞-norm diameter, relative to the scale of the best
/// vertex, falls below this...
const DIAMETER_TOL: f64 = 1e-6;
/// ...and the objective spread across vertices below this.
const SPREAD_TOL: f64 = 1e-10;

/// Relative step for the curvature probe of the fit objective.
const HESSIAN_STEP: f64 = 1e-3;
/// Maximum relative disagreement tolerated between the curvature estimates
/// at steps h and h/2 before the objective is declared too rough.
const RICHARDSON_REL: f64 = 0.1;

/// Log-space box for the memory-time fit: τ in seconds, ε dimensionless.
const TAU_LOG_MIN: f64 = -4.605_170_185_988_091; // ln 1e-2
const TAU_LOG_MAX: f64 = 16.118_095_650_958_32; // ln 1e7
const EPS_LOG_MIN: f64 = -23.025_850_929_940_457; // ln 1e-10
const EPS_LOG_MAX: f64 = 6.907_755_278_982_137; // ln 1e3

// ---------------------------------------------------------------------------
// Forward map: parameters -> correlation surface
// ---------------------------------------------------------------------------

/// Correlation surface predicted by `params` on `grid`.
///
/// `n_mat` is the operator size used by the one-parameter lattice variant
/// (which solves a banded system instead of a quadrature); the other variants
/// ignore it.
pub fn model_surface(
    params: &ModelParams,
    grid: &TenorGrid,
    n_mat: usize,
) -> Result<CorrelationSurface> {
    params.validate()?;
    match params.variant {
        ModelVariant::Bb04 | ModelVariant::Bbl3 | ModelVariant::Bbl2 => {
            let p = StiffStringParams::for_model(params)?;
            continuous::surface(&p, PsyTimeSpec::for_params(params), grid)
        }
        ModelVariant::Bbd3 | ModelVariant::Bbd2 => {
            let sym = DiscreteSymbol::for_model(params)?;
            discrete::surface(&sym, PsyTimeSpec::for_params(params), grid)
        }
        ModelVariant::Bbdl => bbdl::rho_bbdl(params.kappa.expect("validated"), grid, n_mat),
    }
}

// ---------------------------------------------------------------------------
// Typical error Σ
// ---------------------------------------------------------------------------

/// Typical error Σ between a model and an empirical surface: the standard
/// deviation (not the RMS) of the entrywise error field E = model − empirical.
///
/// The mean is taken over all n² entries, diagonal included, unless
/// `exclude_diagonal` is set, in which case both the mean and the variance run
/// over the n²−n off-diagonal entries only — a deterministic rescaling, since
/// diagonal errors are identically zero for valid correlation surfaces.
///
/// Mean-centering makes Σ invariant under a constant shift of every included
/// entry and under relabeling (θ, θ′) → (θ′, θ).
pub fn sigma_error(
    model: &CorrelationSurface,
    empirical: &CorrelationSurface,
    exclude_diagonal: bool,
) -> Result<f64> {
    if model.grid() != empirical.grid() {
        return Err(Error::GridMismatch);
    }
    let n = model.len();
    let m = model.values();
    let e = empirical.values();
    let mut count = 0usize;
    let mut sum = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if exclude_diagonal && i == j {
                continue;
            }
            sum += m[(i, j)] - e[(i, j)];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientData {
            detail: "no surface entries left after excluding the diagonal".to_string(),
        });
    }
    let mean = sum / count as f64;
    let mut var = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if exclude_diagonal && i == j {
                continue;
            }
            let d = m[(i, j)] - e[(i, j)] - mean;
            var += d * d;
        }
    }
    Ok((var / count as f64).max(0.0).sqrt())
}

// ---------------------------------------------------------------------------
// Nelder–Mead simplex
// ---------------------------------------------------------------------------

/// Outcome of one simplex run.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    /// Coordinates of the best vertex found.
    pub best: Vec<f64>,
    /// Objective value at `best`.
    pub value: f64,
    /// Completed simplex iterations.
    pub iterations: usize,
    /// Objective evaluations spent.
    pub evaluations: usize,
    /// Whether both the diameter and spread tolerances were met in budget.
    pub converged: bool,
    /// Best objective value after each iteration; non-increasing by
    /// construction, which the optimizer also asserts in debug builds.
    pub history: Vec<f64>,
}

/// Minimize `f` with a Nelder–Mead simplex started at `start`.
///
/// Bound constraints are the caller's business: return `f64::INFINITY` from
/// `f` outside the feasible box and the simplex will treat the wall as an
/// ordinary bad value. Convergence requires the relative simplex diameter
/// below 1e-6 *and* the objective spread below 1e-10; otherwise the run stops
/// at `max_evals` evaluations with `converged = false`.
pub fn minimize(mut f: impl FnMut(&[f64]) -> f64, start: &[f64], max_evals: usize) -> SimplexResult {
    let n = start.len();
    assert!(n >= 1, "cannot minimize over zero parameters");
    let evals = std::cell::Cell::new(0usize);
    let mut g = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // Initial simplex: the start plus one vertex displaced along each axis.
    const INIT_STEP: f64 = 0.25;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = g(start);
    simplex.push((start.to_vec(), f0));
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += INIT_STEP;
        let fv = g(&v);
        simplex.push((v, fv));
    }

    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best_f = simplex[0].1;
        if let Some(&prev) = history.last() {
            debug_assert!(best_f <= prev, "simplex best value increased");
        }
        history.push(best_f);

        let scale = simplex[0]
            .0
            .iter()
            .fold(1.0f64, |m, &v| m.max(v.abs()));
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        let spread = simplex[n].1 - simplex[0].1;
        if best_f.is_finite() && diameter / scale < DIAMETER_TOL && spread < SPREAD_TOL {
            converged = true;
            break;
        }
        if evals.get() >= max_evals {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let second_worst_f = simplex[n - 1].1;
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = g(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = g(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < second_worst_f {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(0.5); // outer contraction
                let fc = g(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5); // inner contraction
                let fc = g(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                // Shrink every non-best vertex toward the best one.
                for k in 1..=n {
                    let xk: Vec<f64> = simplex[0]
                        .0
                        .iter()
                        .zip(&simplex[k].0)
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    let fk = g(&xk);
                    simplex[k] = (xk, fk);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    SimplexResult {
        best: simplex[0].0.clone(),
        value: simplex[0].1,
        iterations,
        evaluations: evals.get(),
        converged,
        history,
    }
}

// ---------------------------------------------------------------------------
// Surface fitting
// ---------------------------------------------------------------------------

/// Knobs for [`fit`] and [`hessian`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    /// Seed for the restart points; fixed default for reproducibility.
    pub seed: u64,
    /// Number of simplex restarts.
    pub n_starts: usize,
    /// Objective-evaluation budget per restart.
    pub max_evals: usize,
    /// Operator size for the one-parameter lattice variant.
    pub n_mat: usize,
    /// Drop diagonal entries from the Σ sums (a deterministic rescaling).
    pub exclude_diagonal: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            n_starts: 10,
            max_evals: 5000,
            n_mat: 500,
            exclude_diagonal: false,
        }
    }
}

/// One restart's outcome, reported so callers can judge basin coverage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartSummary {
    /// Parameters at this restart's best vertex.
    pub params: ModelParams,
    /// Typical error Σ there (dimensionless, correlation units).
    pub sigma_error: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Result of a multi-start surface fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub variant: ModelVariant,
    /// Best parameters over all restarts.
    pub params: ModelParams,
    /// Typical error Σ at `params` (dimensionless, correlation units).
    pub sigma_error: f64,
    /// Simplex iterations of the winning restart.
    pub iterations: usize,
    /// Objective evaluations summed over every restart.
    pub evaluations: usize,
    /// Whether the winning restart met both convergence tolerances.
    pub converged: bool,
    /// Restarts attempted.
    pub n_starts: usize,
    /// Restarts that converged.
    pub n_converged: usize,
    /// Whether Σ was computed without diagonal entries.
    pub exclude_diagonal: bool,
    /// Per-restart outcomes, in start order.
    pub starts: Vec<StartSummary>,
}

/// Natural-log upper bounds per active parameter (ψ̄ may not exceed 1).
fn upper_log_bounds(variant: ModelVariant) -> Vec<f64> {
    variant
        .active_fields()
        .iter()
        .map(|&name| if name == "psi_bar" { 0.0 } else { LOG_UPPER })
        .collect()
}

/// Σ as a function of the active parameter values, with every failure mode
/// (invalid parameters, quadrature breakdown) mapped to +∞ so the simplex
/// simply avoids the region.
fn surface_objective<'a>(
    variant: ModelVariant,
    empirical: &'a CorrelationSurface,
    n_mat: usize,
    exclude_diagonal: bool,
) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    move |p: &[f64]| {
        let params = ModelParams::from_active_values(variant, p);
        match model_surface(&params, empirical.grid(), n_mat)
            .and_then(|m| sigma_error(&m, empirical, exclude_diagonal))
        {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    }
}

/// Prefer converged outcomes, then lower Σ; ties keep the earlier start.
fn preferable(a: &SimplexResult, b: &SimplexResult) -> bool {
    if a.converged != b.converged {
        return a.converged;
    }
    a.value < b.value
}

/// Fit `variant` to an empirical surface by minimizing Σ over the logs of the
/// active parameters, restarted from `n_starts` seeded points drawn
/// log-uniformly in [0.1, 10].
///
/// Restarts run concurrently; the winner is chosen by a deterministic
/// reduction (converged first, then lower Σ, then start order), so the report
/// depends only on the inputs and the seed. Errs with `NonConvergence` only
/// when *no* restart meets the tolerances.
pub fn fit(
    variant: ModelVariant,
    empirical: &CorrelationSurface,
    opts: &FitOptions,
) -> Result<FitReport> {
    if opts.n_starts == 0 {
        return Err(Error::NonPositiveParameter {
            name: "n_starts",
            value: 0.0,
        });
    }
    let dim = variant.active_fields().len();
    // Probe the forward map once so configuration errors (e.g. an operator
    // too small for the grid) surface as themselves instead of as a fit
    // that mysteriously never converges.
    let centre = ModelParams::from_active_values(variant, &vec![1.0; dim]);
    let probe = model_surface(&centre, empirical.grid(), opts.n_mat)?;
    sigma_error(&probe, empirical, opts.exclude_diagonal)?;

    let upper = upper_log_bounds(variant);
    let objective = surface_objective(variant, empirical, opts.n_mat, opts.exclude_diagonal);
    let boxed = {
        let upper = upper.clone();
        move |y: &[f64]| {
            if y.iter()
                .zip(&upper)
                .any(|(&yi, &ub)| !(LOG_LOWER..=ub).contains(&yi))
            {
                return f64::INFINITY;
            }
            let p: Vec<f64> = y.iter().map(|v| v.exp()).collect();
            objective(&p)
        }
    };

    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.n_starts)
        .map(|_| {
            (0..dim)
                .map(|i| {
                    let hi = upper[i].min(10.0f64.ln());
                    rng.gen_range(0.1f64.ln()..hi)
                })
                .collect()
        })
        .collect();

    let outcomes: Vec<SimplexResult> = starts
        .par_iter()
        .map(|s| minimize(|y| boxed(y), s, opts.max_evals))
        .collect();

    let n_converged = outcomes.iter().filter(|o| o.converged).count();
    if n_converged == 0 {
        let best = outcomes
            .iter()
            .map(|o| o.value)
            .fold(f64::INFINITY, f64::min);
        return Err(Error::NonConvergence {
            starts: opts.n_starts,
            best,
        });
    }
    let mut best_idx = 0;
    for i in 1..outcomes.len() {
        if preferable(&outcomes[i], &outcomes[best_idx]) {
            best_idx = i;
        }
    }
    let params_of = |y: &[f64]| {
        let p: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        ModelParams::from_active_values(variant, &p)
    };
    let winner = &outcomes[best_idx];
    let starts_summary = outcomes
        .iter()
        .map(|o| StartSummary {
            params: params_of(&o.best),
            sigma_error: o.value,
            converged: o.converged,
            iterations: o.iterations,
            evaluations: o.evaluations,
        })
        .collect();
    Ok(FitReport {
        variant,
        params: params_of(&winner.best),
        sigma_error: winner.value,
        iterations: winner.iterations,
        evaluations: outcomes.iter().map(|o| o.evaluations).sum(),
        converged: winner.converged,
        n_starts: opts.n_starts,
        n_converged,
        exclude_diagonal: opts.exclude_diagonal,
        starts: starts_summary,
    })
}

// ---------------------------------------------------------------------------
// Scaled Hessian of the fit objective
// ---------------------------------------------------------------------------

/// Curvature report at a fit optimum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianReport {
    /// Point at which the curvature was probed.
    pub params: ModelParams,
    /// Active parameter names, fixing the row/column order below.
    pub param_names: Vec<String>,
    /// Scaled curvature matrix H with H_ij = p*_i p*_j ∂²Σ/∂p_i∂p_j —
    /// the Hessian of Σ with respect to log-parameters when the gradient
    /// vanishes. Symmetric.
    pub hessian: Vec<Vec<f64>>,
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[k]` is the unit eigenvector paired with
    /// `eigenvalues[k]`, components in `param_names` order.
    pub eigenvectors: Vec<Vec<f64>>,
}

/// Single-step estimate of H_ij = p_i p_j ∂²f/∂p_i∂p_j by central
/// differences on multiplicative bumps p_i(1 ± h).
fn raw_scaled_hessian(
    f: &impl Fn(&[f64]) -> f64,
    p: &[f64],
    h: f64,
) -> Result<Array2<f64>> {
    let n = p.len();
    let eval = |bumps: &[(usize, f64)]| -> Result<f64> {
        let mut x = p.to_vec();
        for &(i, s) in bumps {
            x[i] *= 1.0 + s * h;
        }
        let v = f(&x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NumericalBreakdown {
                detail: format!(
                    "objective is not finite at a curvature probe (relative step {h:.1e})"
                ),
            })
        }
    };
    let f0 = eval(&[])?;
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let fp = eval(&[(i, 1.0)])?;
        let fm = eval(&[(i, -1.0)])?;
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let fpp = eval(&[(i, 1.0), (j, 1.0)])?;
            let fpm = eval(&[(i, 1.0), (j, -1.0)])?;
            let fmp = eval(&[(i, -1.0), (j, 1.0)])?;
            let fmm = eval(&[(i, -1.0), (j, -1.0)])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Scaled curvature matrix H_ij = p*_i p*_j ∂²f/∂p_i∂p_j of an arbitrary
/// objective, estimated at relative step `step` and verified against the
/// estimate at `step/2`: entries must agree within 10% (plus a small
/// absolute floor) or the objective is declared too rough and the
/// computation fails with `NumericalBreakdown`. The refined estimate is
/// returned, symmetrized.
pub fn scaled_hessian(
    f: impl Fn(&[f64]) -> f64,
    p_star: &[f64],
    step: f64,
) -> Result<Array2<f64>> {
    for &p in p_star {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::NonPositiveParameter {
                name: "p_star",
                value: p,
            });
        }
    }
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::NonPositiveParameter {
            name: "step",
            value: step,
        });
    }
    let coarse = raw_scaled_hessian(&f, p_star, step)?;
    let fine = raw_scaled_hessian(&f, p_star, 0.5 * step)?;
    let scale = fine.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * (1.0 + scale);
    for (c, fv) in coarse.iter().zip(fine.iter()) {
        if (c - fv).abs() > RICHARDSON_REL * fv.abs() + floor {
            return Err(Error::NumericalBreakdown {
                detail: format!(
                    "curvature estimates at steps h and h/2 disagree beyond 10%: \
                     {c:.6e} vs {fv:.6e}; the objective is not smooth at this scale"
                ),
            });
        }
    }
    Ok(0.5 * (&fine + &fine.t()))
}

/// Eigendecomposition with eigenvalues descending and row-vectors aligned.
fn sorted_sym_eigen(h: &Array2<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (vals, vecs) = linalg::sym_eigen(h);
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let eigenvalues = idx.iter().map(|&k| vals[k]).collect();
    let eigenvectors = idx.iter().map(|&k| vecs.column(k).to_vec()).collect();
    (eigenvalues, eigenvectors)
}

/// Scaled Hessian of Σ at `p_star` against `empirical`, with its
/// eigenstructure: a dominant eigenvalue far above the rest marks a stiff
/// parameter combination, the small ones mark sloppy directions along which
/// the data barely constrain the parameters.
pub fn hessian(
    p_star: &ModelParams,
    empirical: &CorrelationSurface,
    opts: &FitOptions,
) -> Result<HessianReport> {
    p_star.validate()?;
    let objective = surface_objective(
        p_star.variant,
        empirical,
        opts.n_mat,
        opts.exclude_diagonal,
    );
    let values = p_star.active_values();
    let h = scaled_hessian(|p| objective(p), &values, HESSIAN_STEP)?;
    let (eigenvalues, eigenvectors) = sorted_sym_eigen(&h);
    Ok(HessianReport {
        params: p_star.clone(),
        param_names: p_star
            .variant
            .active_fields()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        hessian: h.rows().into_iter().map(|r| r.to_vec()).collect(),
        eigenvalues,
        eigenvectors,
    })
}

// ---------------------------------------------------------------------------
// Correlation build-up fit (memory time and idiosyncratic noise)
// ---------------------------------------------------------------------------

/// Which correlation model supplies the theoretical build-up curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EppsModelSpec {
    /// Finite relaxation lattice with the spot boundary: exact spectral
    /// kernel of the `n_mat × n_mat` operator, pair entries indexed by
    /// lattice site. Suits regimes where tenors are effectively adjacent
    /// lattice sites.
    Lattice { kappa: f64, n_mat: usize },
    /// Infinite-lattice symbol under a perceived-time map with slope
    /// parameter `psi` (months); `nu: None` disables the stiffness term.
    /// Suits regimes where the time map stretches tenors far apart.
    Symbol {
        psi: f64,
        mu: f64,
        nu: Option<f64>,
    },
}

enum EvalInner {
    Lattice {
        aa: PairChannel,
        ab: PairChannel,
        bb: PairChannel,
    },
    Symbol {
        sym: DiscreteSymbol,
        spec: PsyTimeSpec,
        a: f64,
        b: f64,
    },
}

/// Cached evaluator of the model correlation of one tenor pair as a function
/// of (observation scale Δt, memory time τ, idiosyncratic weight ε).
///
/// The overall noise amplitude cancels in the correlation, so it is fixed
/// internally; times are in seconds throughout.
pub struct EppsEvaluator {
    inner: EvalInner,
}

impl EppsEvaluator {
    pub fn new(model: &EppsModelSpec, pair: (u32, u32)) -> Result<Self> {
        let inner = match *model {
            EppsModelSpec::Lattice { kappa, n_mat } => {
                let max_unit = pair.0.max(pair.1) as usize;
                let required = max_unit + BOUNDARY_MARGIN + 1;
                if n_mat < required {
                    return Err(Error::SizeTooSmall {
                        n_mat,
                        required,
                    });
                }
                let m = OperatorMatrix::build_m(kappa, n_mat, None)?;
                let kernel = FiniteTauKernel::new(&m)?;
                EvalInner::Lattice {
                    aa: kernel.pair(pair.0 as usize, pair.0 as usize),
                    ab: kernel.pair(pair.0 as usize, pair.1 as usize),
                    bb: kernel.pair(pair.1 as usize, pair.1 as usize),
                }
            }
            EppsModelSpec::Symbol { psi, mu, nu } => {
                let sym = match nu {
                    Some(v) => DiscreteSymbol::new(mu, v)?,
                    None => DiscreteSymbol::tension_only(mu)?,
                };
                let spec = PsyTimeSpec::LogHyperbolic { psi };
                spec.validate()?;
                EvalInner::Symbol {
                    sym,
                    spec,
                    a: f64::from(pair.0),
                    b: f64::from(pair.1),
                }
            }
        };
        Ok(Self { inner })
    }

    /// Model correlation of the pair's increments over bins of width
    /// `delta_t` seconds, at memory time `tau` seconds and idiosyncratic
    /// weight `epsilon`.
    pub fn correlation(&self, delta_t: f64, tau: f64, epsilon: f64) -> Result<f64> {
        let dynamics = DynamicsParams::new(tau, 0.5, epsilon, delta_t)?;
        let (cab, caa, cbb) = match &self.inner {
            EvalInner::Lattice { aa, ab, bb } => (
                ab.cov(&dynamics)?,
                aa.cov(&dynamics)?,
                bb.cov(&dynamics)?,
            ),
            EvalInner::Symbol { sym, spec, a, b } => (
                discrete::cov_delta_a_finite_tau(sym, *spec, &dynamics, *a, *b)?,
                discrete::cov_delta_a_finite_tau(sym, *spec, &dynamics, *a, *a)?,
                discrete::cov_delta_a_finite_tau(sym, *spec, &dynamics, *b, *b)?,
            ),
        };
        let denom = caa * cbb;
        if !(denom > 0.0) {
            return Err(Error::NumericalBreakdown {
                detail: format!("non-positive variance product {denom:.3e} in the build-up curve"),
            });
        }
        Ok(cab / denom.sqrt())
    }

    /// Scale-free limit of [`EppsEvaluator::correlation`] for Δt ≪ τ: the
    /// intrinsic short-scale correlation with no idiosyncratic noise.
    pub fn short_scale_limit(&self) -> Result<f64> {
        // Any (τ, Δt) pair works: the limit entries all scale as Δt²/τ.
        let dynamics = DynamicsParams::new(1.0, 0.5, 0.0, 1.0)?;
        match &self.inner {
            EvalInner::Lattice { aa, ab, bb } => {
                let cab = ab.epps_limit_cov(&dynamics)?;
                let caa = aa.epps_limit_cov(&dynamics)?;
                let cbb = bb.epps_limit_cov(&dynamics)?;
                Ok(cab / (caa * cbb).sqrt())
            }
            EvalInner::Symbol { sym, spec, a, b } => {
                let za = psytime::z_lattice(*spec, *a);
                let zb = psytime::z_lattice(*spec, *b);
                let cab = discrete::d_k_quadrature(sym, 1, za, zb)?;
                let caa = discrete::d_k_quadrature(sym, 1, za, za)?;
                let cbb = discrete::d_k_quadrature(sym, 1, zb, zb)?;
                Ok(cab / (caa * cbb).sqrt())
            }
        }
    }
}

/// Knobs for [`fit_epps`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EppsFitOptions {
    pub seed: u64,
    pub n_starts: usize,
    pub max_evals: usize,
}

impl Default for EppsFitOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            n_starts: 8,
            max_evals: 5000,
        }
    }
}

/// Fitted memory time and idiosyncratic weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EppsFit {
    /// Memory time of the relaxation dynamics, in minutes.
    pub tau_minutes: f64,
    /// Idiosyncratic (uncorrelated per-tenor) noise weight, dimensionless.
    pub epsilon: f64,
    /// Root-mean-square correlation residual across the fitted scales.
    pub residual: f64,
    pub converged: bool,
    /// Objective evaluations summed over every restart.
    pub evaluations: usize,
}

/// Least-squares fit of (τ, ε) to an empirical correlation build-up curve:
/// minimizes the mean squared difference between model and empirical
/// correlations over the curve's scales, all scales weighted equally, by a
/// multi-start simplex over (ln τ, ln ε).
pub fn fit_epps(
    curve: &EppsCurve,
    model: &EppsModelSpec,
    opts: &EppsFitOptions,
) -> Result<EppsFit> {
    if curve.scales.len() < 5 {
        return Err(Error::InsufficientData {
            detail: format!(
                "build-up fit needs at least 5 scales spanning both regimes, got {}",
                curve.scales.len()
            ),
        });
    }
    if opts.n_starts == 0 {
        return Err(Error::NonPositiveParameter {
            name: "n_starts",
            value: 0.0,
        });
    }
    let eval = EppsEvaluator::new(model, curve.pair)?;
    let objective = |y: &[f64]| -> f64 {
        if !(TAU_LOG_MIN..=TAU_LOG_MAX).contains(&y[0])
            || !(EPS_LOG_MIN..=EPS_LOG_MAX).contains(&y[1])
        {
            return f64::INFINITY;
        }
        let tau = y[0].exp();
        let eps = y[1].exp();
        let mut sse = 0.0;
        for (&dt, &r) in curve.scales.iter().zip(&curve.correlations) {
            match eval.correlation(dt, tau, eps) {
                Ok(m) if m.is_finite() => sse += (m - r) * (m - r),
                _ => return f64::INFINITY,
            }
        }
        sse / curve.scales.len() as f64
    };

    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.n_starts)
        .map(|_| {
            vec![
                rng.gen_range(30.0f64.ln()..2.0e4f64.ln()),
                rng.gen_range(1.0e-5f64.ln()..0.1f64.ln()),
            ]
        })
        .collect();
    let outcomes: Vec<SimplexResult> = starts
        .par_iter()
        .map(|s| minimize(|y| objective(y), s, opts.max_evals))
        .collect();

    let n_converged = outcomes.iter().filter(|o| o.converged).count();
    if n_converged == 0 {
        let best = outcomes
            .iter()
            .map(|o| o.value)
            .fold(f64::INFINITY, f64::min);
        return Err(Error::NonConvergence {
            starts: opts.n_starts,
            best,
        });
    }
    let mut best_idx = 0;
    for i in 1..outcomes.len() {
        if preferable(&outcomes[i], &outcomes[best_idx]) {
            best_idx = i;
        }
    }
    let winner = &outcomes[best_idx];
    Ok(EppsFit {
        tau_minutes: winner.best[0].exp() / 60.0,
        epsilon: winner.best[1].exp(),
        residual: winner.value.max(0.0).sqrt(),
        converged: winner.converged,
        evaluations: outcomes.iter().map(|o| o.evaluations).sum(),
    })
}

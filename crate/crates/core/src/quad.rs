//! Adaptive Gauss-Legendre quadrature on finite intervals.
//!
//! A fixed 16-point rule is applied per panel and the panel count is doubled
//! until two successive refinements agree within tolerance. The integrands in
//! this crate are smooth but oscillatory (products of cosines with decaying
//! rational envelopes), for which panel-doubling Gauss rules converge
//! spectrally once the panels resolve the oscillation.

use crate::error::{Error, Result};

/// Points per panel. Exact for polynomials of degree ≤ 31 on each panel.
const PANEL_POINTS: usize = 16;

/// Hard cap on total nodes before reporting non-convergence.
const MAX_NODES: usize = 1 << 15;

/// Mixed absolute/relative stopping rule: accept when the difference between
/// refinements is below `abs + rel·scale`, where `scale` is the magnitude of
/// the current estimate.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn absolute(abs: f64) -> Self {
        Self { abs, rel: 0.0 }
    }

    pub fn relative(rel: f64) -> Self {
        Self { abs: 0.0, rel }
    }

    pub fn mixed(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    fn met(self, err: f64, scale: f64) -> bool {
        err <= self.abs + self.rel * scale
    }
}

/// Nodes and weights of an n-point Gauss-Legendre rule on [−1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Compute the rule by Newton iteration on the Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Tricomi-style initial guess, accurate to ~1e-3.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    let (_, d2) = legendre_with_derivative(n, x);
                    dp = d2;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrate `f` over [a, b] with this rule applied once.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Nodes and weights mapped onto [a, b] split into `panels` equal panels.
    pub fn paneled_nodes(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let width = (b - a) / panels as f64;
        let mut out = Vec::with_capacity(panels * self.len());
        for p in 0..panels {
            let lo = a + p as f64 * width;
            let half = 0.5 * width;
            let mid = lo + half;
            for (&x, &w) in self.nodes.iter().zip(&self.weights) {
                out.push((mid + half * x, w * half));
            }
        }
        out
    }
}

/// (P_n(x), P_n'(x)) by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    let d = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, d)
}

/// Integrate a scalar integrand over [a, b], doubling panels until converged.
pub fn adaptive<F: FnMut(f64) -> f64>(a: f64, b: f64, tol: Tolerance, mut f: F) -> Result<f64> {
    let rule = base_rule();
    let mut panels = 2;
    let mut prev = rule
        .paneled_nodes(a, b, panels)
        .iter()
        .map(|&(x, w)| w * f(x))
        .sum::<f64>();
    loop {
        panels *= 2;
        if panels * PANEL_POINTS > MAX_NODES {
            return Err(Error::QuadratureNonConvergence {
                nodes: panels / 2 * PANEL_POINTS,
                err: f64::NAN,
            });
        }
        let cur = rule
            .paneled_nodes(a, b, panels)
            .iter()
            .map(|&(x, w)| w * f(x))
            .sum::<f64>();
        let err = (cur - prev).abs();
        if tol.met(err, cur.abs()) {
            return Ok(cur);
        }
        if panels * PANEL_POINTS == MAX_NODES {
            return Err(Error::QuadratureNonConvergence {
                nodes: panels * PANEL_POINTS,
                err,
            });
        }
        prev = cur;
    }
}

/// Integrate a vector-valued integrand over [a, b] with one shared node set.
///
/// `f(x, out)` writes the `dim` components at abscissa `x` into `out`. All
/// components are refined together; convergence is judged in the max norm
/// against the largest component magnitude, so tiny components ride along
/// with the dominant ones. This is the workhorse for whole-surface
/// quadrature, where evaluating the shared spectral envelope once per node
/// amortizes over every tenor pair.
pub fn adaptive_vec<F: FnMut(f64, &mut [f64])>(
    a: f64,
    b: f64,
    dim: usize,
    tol: Tolerance,
    mut f: F,
) -> Result<Vec<f64>> {
    let rule = base_rule();
    let mut panels = 2;
    let mut scratch = vec![0.0; dim];
    let mut sum_at = |panels: usize, scratch: &mut [f64]| -> Vec<f64> {
        let mut acc = vec![0.0; dim];
        for (x, w) in rule.paneled_nodes(a, b, panels) {
            f(x, scratch);
            for (a_i, s_i) in acc.iter_mut().zip(scratch.iter()) {
                *a_i += w * s_i;
            }
        }
        acc
    };
    let mut prev = sum_at(panels, &mut scratch);
    loop {
        panels *= 2;
        if panels * PANEL_POINTS > MAX_NODES {
            return Err(Error::QuadratureNonConvergence {
                nodes: panels / 2 * PANEL_POINTS,
                err: f64::NAN,
            });
        }
        let cur = sum_at(panels, &mut scratch);
        let err = cur
            .iter()
            .zip(&prev)
            .map(|(c, p)| (c - p).abs())
            .fold(0.0, f64::max);
        let scale = cur.iter().map(|c| c.abs()).fold(0.0, f64::max);
        if tol.met(err, scale) {
            return Ok(cur);
        }
        if panels * PANEL_POINTS == MAX_NODES {
            return Err(Error::QuadratureNonConvergence {
                nodes: panels * PANEL_POINTS,
                err,
            });
        }
        prev = cur;
    }
}

fn base_rule() -> &'static GaussLegendre {
    use std::sync::OnceLock;
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_POINTS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use std::f64::consts::PI;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(16);
        // Degree-31 monomial is within the rule's exactness bound.
        let v = rule.integrate(0.0, 1.0, |x| x.powi(31));
        assert_relative_eq!(v, 1.0 / 32.0, max_relative = 1e-13);
        let w = rule.integrate(-1.0, 1.0, |x| x * x);
        assert_relative_eq!(w, 2.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn rule_weights_sum_to_interval() {
        for n in [2, 5, 16, 31] {
            let rule = GaussLegendre::new(n);
            let total: f64 = rule.weights.iter().sum();
            assert_relative_eq!(total, 2.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn adaptive_handles_oscillatory_integrand() {
        // ∫₀^π cos(aξ) e^{−ξ} dξ in closed form.
        let a = 7.3;
        let exact = (1.0 - (-PI).exp() * (a * PI).cos() + a * (-PI).exp() * (a * PI).sin())
            / (1.0 + a * a);
        let v = adaptive(0.0, PI, Tolerance::absolute(1e-12), |x| {
            (a * x).cos() * (-x).exp()
        })
        .unwrap();
        assert_abs_diff_eq!(v, exact, epsilon = 1e-11);
    }

    #[test]
    fn adaptive_pure_cosines_vanish() {
        for k in [1.0, 13.0, 40.0] {
            let v = adaptive(0.0, PI, Tolerance::absolute(1e-12), |x| (2.0 * k * x).cos()).unwrap();
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn adaptive_reports_non_convergence() {
        // An inverse-square-root endpoint singularity defeats panel doubling
        // at this tolerance before the node cap.
        let r = adaptive(0.0, 1.0, Tolerance::absolute(1e-14), |x| 1.0 / x.sqrt());
        assert!(matches!(r, Err(Error::QuadratureNonConvergence { .. })));
    }

    #[test]
    fn vector_quadrature_matches_scalar() {
        let a = 0.0;
        let b = PI;
        let tol = Tolerance::absolute(1e-12);
        let vec = adaptive_vec(a, b, 2, tol, |x, out| {
            out[0] = (3.0 * x).cos() * (-x).exp();
            out[1] = x.sin();
        })
        .unwrap();
        let s0 = adaptive(a, b, tol, |x| (3.0 * x).cos() * (-x).exp()).unwrap();
        let s1 = adaptive(a, b, tol, |x| x.sin()).unwrap();
        assert_abs_diff_eq!(vec[0], s0, epsilon = 1e-12);
        assert_abs_diff_eq!(vec[1], s1, epsilon = 1e-12);
    }

    #[test]
    fn relative_tolerance_tracks_small_magnitudes() {
        // A smooth integrand of tiny magnitude converges under relative
        // tolerance even though its absolute scale is far below 1e-12.
        let v = adaptive(0.0, 1.0, Tolerance::relative(1e-10), |x| {
            1e-9 * (x * x).exp()
        })
        .unwrap();
        let exact = 1e-9 * 1.4626517459071816_f64; // ∫₀¹ e^{x²} dx
        assert_relative_eq!(v, exact, max_relative = 1e-9);
    }
}

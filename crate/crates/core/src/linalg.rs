//! Small linear-algebra layer: banded LU for the string operators, plus
//! bridges to `faer` for dense solves, eigendecompositions, and Cholesky.
//!
//! The banded path exists because calibration loops factor the (bandwidth ≤ 2)
//! lattice operator thousands of times; an O(N) no-pivot solve keeps that cheap.
//! It is restricted to weakly diagonally dominant matrices, which the operators
//! built in this crate satisfy by construction; anything else falls back to a
//! dense pivoted solve.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Banded matrix with `kl` sub- and `ku` super-diagonals, row-major band storage.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row i occupies `data[i*w..(i+1)*w]` with `w = kl+ku+1`; column j sits at
    /// offset `j - i + kl`.
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        let w = self.kl + self.ku + 1;
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        if j < lo || j > hi {
            None
        } else {
            Some(i * w + (j + self.kl - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .idx(i, j)
            .unwrap_or_else(|| panic!("({i},{j}) outside band (kl={}, ku={})", self.kl, self.ku));
        self.data[k] = v;
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for j in i.saturating_sub(self.kl)..=(i + self.ku).min(self.n - 1) {
                a[(i, j)] = self.get(i, j);
            }
        }
        a
    }

    /// Matrix-vector product, touching stored bands only.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let mut s = 0.0;
            for j in i.saturating_sub(self.kl)..=(i + self.ku).min(self.n - 1) {
                s += self.get(i, j) * x[j];
            }
            y[i] = s;
        }
        y
    }

    /// Transpose; bands swap roles.
    pub fn transpose(&self) -> BandMatrix {
        let mut t = BandMatrix::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            for j in i.saturating_sub(self.kl)..=(i + self.ku).min(self.n - 1) {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Weak row diagonal dominance with a nonzero diagonal — the precondition
    /// for the no-pivot factorization.
    pub fn is_diagonally_dominant(&self) -> bool {
        (0..self.n).all(|i| {
            let d = self.get(i, i).abs();
            let off: f64 = (i.saturating_sub(self.kl)..=(i + self.ku).min(self.n - 1))
                .filter(|&j| j != i)
                .map(|j| self.get(i, j).abs())
                .sum();
            d > 0.0 && d >= off
        })
    }

    /// No-pivot LU. Errors unless the matrix is weakly diagonally dominant
    /// (growth-free without pivoting); callers should fall back to a dense
    /// pivoted solve in that case.
    pub fn factor(mut self) -> Result<BandLu> {
        if !self.is_diagonally_dominant() {
            return Err(Error::NumericalBreakdown {
                detail: "banded factorization requires diagonal dominance".into(),
            });
        }
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut pivot_min = f64::INFINITY;
        let mut pivot_max = 0.0f64;
        for k in 0..n {
            let piv = self.get(k, k);
            if piv == 0.0 || !piv.is_finite() {
                return Err(Error::SingularOperator {
                    detail: format!("zero or non-finite pivot at row {k}"),
                });
            }
            pivot_min = pivot_min.min(piv.abs());
            pivot_max = pivot_max.max(piv.abs());
            for i in (k + 1)..=(k + kl).min(n - 1) {
                let l = self.get(i, k) / piv;
                self.set(i, k, l);
                for j in (k + 1)..=(k + ku).min(n - 1) {
                    let v = self.get(i, j) - l * self.get(k, j);
                    self.set(i, j, v);
                }
            }
        }
        Ok(BandLu {
            mat: self,
            rcond_estimate: pivot_min / pivot_max,
        })
    }
}

/// Factored form produced by [`BandMatrix::factor`].
pub struct BandLu {
    mat: BandMatrix,
    /// Crude reciprocal-conditioning proxy: min |U_ii| / max |U_ii|.
    rcond_estimate: f64,
}

impl BandLu {
    pub fn rcond_estimate(&self) -> f64 {
        self.rcond_estimate
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.mat;
        let n = m.n;
        debug_assert_eq!(b.len(), n);
        // forward: L y = b (unit diagonal)
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(m.kl)..i {
                s -= m.get(i, j) * b[j];
            }
            b[i] = s;
        }
        // backward: U x = y
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in (i + 1)..=(i + m.ku).min(n - 1) {
                s -= m.get(i, j) * b[j];
            }
            b[i] = s / m.get(i, i);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solve for the canonical basis vector e_k.
    pub fn solve_unit(&self, k: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.mat.n];
        x[k] = 1.0;
        self.solve_in_place(&mut x);
        x
    }
}

// ---- faer bridges ----

fn to_faer(a: &Array2<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m.read(i, j))
}

fn from_faer_c(m: faer::MatRef<'_, faer::complex_native::c64>) -> Array2<Complex64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| {
        let v = m.read(i, j);
        Complex64::new(v.re, v.im)
    })
}

/// Dense solve A X = B via partial-pivot LU.
pub fn solve_dense(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    use faer::prelude::*;
    let lu = to_faer(a).partial_piv_lu();
    let x = lu.solve(to_faer(b));
    from_faer(x.as_ref())
}

/// Eigendecomposition of a real non-symmetric matrix, with the inverse
/// eigenvector matrix and a reconstruction check.
pub struct EigDecomp {
    /// Eigenvalues, in the order faer returns them.
    pub values: Vec<Complex64>,
    /// Right eigenvectors as columns.
    pub right: Array2<Complex64>,
    /// Inverse of `right`; its rows are the left eigenvectors (up to scaling).
    pub inv: Array2<Complex64>,
}

/// Decompose `a = P Λ P⁻¹`.
///
/// Fails with `NonDiagonalizable` when the reconstruction residual
/// ‖PΛP⁻¹ − A‖_max exceeds `tol · ‖A‖_max`, which catches both defective
/// matrices and hopelessly ill-conditioned eigenbases.
pub fn eigendecompose(a: &Array2<f64>, tol: f64) -> Result<EigDecomp> {
    use faer::prelude::*;
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigendecompose requires a square matrix");
    let fa = to_faer(a);
    let evd = fa.eigendecomposition::<faer::complex_native::c64>();
    let values: Vec<Complex64> = (0..n)
        .map(|i| {
            let v = evd.s().column_vector().read(i);
            Complex64::new(v.re, v.im)
        })
        .collect();
    let right = from_faer_c(evd.u());

    // invert P with a complex dense LU
    let p = faer::Mat::<faer::complex_native::c64>::from_fn(n, n, |i, j| {
        faer::complex_native::c64::new(right[(i, j)].re, right[(i, j)].im)
    });
    let lu = p.partial_piv_lu();
    let id = faer::Mat::<faer::complex_native::c64>::identity(n, n);
    let inv = from_faer_c(lu.solve(id).as_ref());

    let decomp = EigDecomp { values, right, inv };

    // reconstruction residual
    let norm_a = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut resid = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for k in 0..n {
                s += decomp.right[(i, k)] * decomp.values[k] * decomp.inv[(k, j)];
            }
            resid = resid.max((s - Complex64::new(a[(i, j)], 0.0)).norm());
        }
    }
    if resid > tol * norm_a {
        return Err(Error::NonDiagonalizable {
            detail: format!(
                "eigenbasis reconstruction residual {:.3e} exceeds {:.1e} of scale {:.3e}",
                resid, tol, norm_a
            ),
        });
    }
    Ok(decomp)
}

/// Eigenvalues only, skipping the eigenvector accumulation and inversion that
/// [`eigendecompose`] performs.
pub fn eigenvalues(a: &Array2<f64>) -> Vec<Complex64> {
    assert_eq!(a.nrows(), a.ncols(), "eigenvalues requires a square matrix");
    to_faer(a)
        .eigenvalues::<faer::complex_native::c64>()
        .into_iter()
        .map(|v| Complex64::new(v.re, v.im))
        .collect()
}

/// Eigenvalues and eigenvectors of a symmetric matrix, ascending.
pub fn sym_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let evd = to_faer(a).selfadjoint_eigendecomposition(faer::Side::Lower);
    let n = a.nrows();
    let vals: Vec<f64> = (0..n).map(|i| evd.s().column_vector().read(i)).collect();
    let vecs = from_faer(evd.u());
    (vals, vecs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_sym_eigenvalue(a: &Array2<f64>) -> f64 {
    sym_eigen(a)
        .0
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Lower Cholesky factor of a symmetric PSD matrix.
///
/// Tolerates slightly indefinite inputs (roundoff on a theoretically PSD
/// matrix) by escalating a diagonal jitter up to `1e-8` of the mean diagonal.
pub fn cholesky_factor(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).sum::<f64>() / n as f64;
    let mut jitter = 0.0;
    for _ in 0..5 {
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Ok(ch) = to_faer(&m).cholesky(faer::Side::Lower) {
            let mut l = from_faer(ch.compute_l().as_ref());
            // zero the strict upper triangle; faer leaves it unspecified
            for i in 0..n {
                for j in (i + 1)..n {
                    l[(i, j)] = 0.0;
                }
            }
            return Ok(l);
        }
        jitter = if jitter == 0.0 { scale * 1e-14 } else { jitter * 100.0 };
        if jitter > scale * 1e-8 {
            break;
        }
    }
    Err(Error::NumericalBreakdown {
        detail: "matrix is not positive semidefinite within jitter tolerance".into(),
    })
}

/// Realify a complex matrix, checking the imaginary part is negligible
/// relative to the real scale.
pub fn realify(a: &Array2<Complex64>, rel_tol: f64, context: &str) -> Result<Array2<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.re.abs())).max(1e-300);
    let worst_im = a.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    if worst_im > rel_tol * scale {
        return Err(Error::NumericalBreakdown {
            detail: format!(
                "{context}: imaginary residue {:.3e} exceeds {:.1e} of scale {:.3e}",
                worst_im, rel_tol, scale
            ),
        });
    }
    Ok(a.mapv(|v| v.re))
}

/// exp(-1) etc. for complex arguments, accurate for small |x|:
/// returns exp(x) − 1.
pub fn expm1_complex(x: Complex64) -> Complex64 {
    if x.norm() < 1e-3 {
        // x + x²/2 + x³/6 + x⁴/24 + x⁵/120; next term ~ 1e-21 ≪ f64 eps
        let mut term = x;
        let mut sum = x;
        for k in 2..=5 {
            term *= x / k as f64;
            sum += term;
        }
        sum
    } else {
        x.exp() - Complex64::new(1.0, 0.0)
    }
}

/// Solve the small symmetric 3×3 normal equations of a quadratic least-squares
/// fit; used by the curvature diagnostic.
pub fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let m = Array2::from_shape_fn((3, 3), |(i, j)| a[i][j]);
    let rhs = Array2::from_shape_fn((3, 1), |(i, _)| b[i]);
    let x = solve_dense(&m, &rhs);
    let out = [x[(0, 0)], x[(1, 0)], x[(2, 0)]];
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Matrix-vector product for ndarray without pulling in BLAS.
pub fn matvec(a: &Array2<f64>, x: &[f64]) -> Array1<f64> {
    let n = a.nrows();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..a.ncols() {
            s += a[(i, j)] * x[j];
        }
        y[i] = s;
    }
    y
}

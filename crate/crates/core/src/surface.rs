//! Correlation surfaces: the n×n Pearson matrices the whole crate produces,
//! consumes, and calibrates against.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TenorGrid;
use crate::linalg;

/// Tolerance applied when validating symmetry, unit diagonal, and range on
/// construction. Surfaces built by this crate satisfy the invariants exactly;
/// the slack only absorbs decimal round-trips through CSV/JSON.
const VALIDATION_TOL: f64 = 1e-9;

/// A symmetric matrix of Pearson correlations over a tenor grid.
///
/// Invariants enforced on construction: square and matching the grid,
/// symmetric, unit diagonal, entries in [−1, 1]. Positive semidefiniteness is
/// *not* required here — pairwise-complete empirical estimates can violate it —
/// but model-generated surfaces are PSD and tested as such where they are made.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface {
    grid: TenorGrid,
    values: Array2<f64>,
}

impl CorrelationSurface {
    pub fn new(grid: TenorGrid, values: Array2<f64>) -> Result<Self> {
        let n = grid.len();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::InvalidSurface {
                detail: format!(
                    "{}×{} values for a {n}-tenor grid",
                    values.nrows(),
                    values.ncols()
                ),
            });
        }
        for i in 0..n {
            let d = values[(i, i)];
            if (d - 1.0).abs() > VALIDATION_TOL {
                return Err(Error::InvalidSurface {
                    detail: format!("diagonal entry ({i},{i}) = {d} is not 1"),
                });
            }
            for j in 0..i {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if (a - b).abs() > VALIDATION_TOL {
                    return Err(Error::InvalidSurface {
                        detail: format!("asymmetry at ({i},{j}): {a} vs {b}"),
                    });
                }
                if !a.is_finite() || a.abs() > 1.0 + VALIDATION_TOL {
                    return Err(Error::InvalidSurface {
                        detail: format!("entry ({i},{j}) = {a} outside [-1, 1]"),
                    });
                }
            }
        }
        Ok(Self { grid, values })
    }

    /// Build from a function of grid *positions* (i, j); only the lower
    /// triangle is evaluated and the result is symmetrized with a unit
    /// diagonal, so the invariants hold by construction.
    pub fn from_fn(grid: TenorGrid, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::try_from_fn(grid, |i, j| Ok(f(i, j)))
    }

    /// Fallible variant of [`CorrelationSurface::from_fn`] for entries that
    /// come out of numerical evaluators.
    pub fn try_from_fn(
        grid: TenorGrid,
        mut f: impl FnMut(usize, usize) -> Result<f64>,
    ) -> Result<Self> {
        let n = grid.len();
        let mut values = Array2::zeros((n, n));
        for i in 0..n {
            values[(i, i)] = 1.0;
            for j in 0..i {
                let v = f(i, j)?;
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &TenorGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Smallest eigenvalue; slightly negative values flag non-PSD estimates.
    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_sym_eigenvalue(&self.values)
    }

    /// Largest absolute elementwise difference to another surface on the same grid.
    pub fn max_abs_diff(&self, other: &CorrelationSurface) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// CSV layout: one header row of tenor labels in months, then n rows of n
    /// decimals. Floats use the shortest round-trip representation.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let header: Vec<String> = self.grid.months().iter().map(u32::to_string).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = (0..self.len())
                .map(|j| format!("{}", self.values[(i, j)]))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or(Error::BadHeader {
            expected: "tenor labels in months".into(),
            found: "<empty file>".into(),
        })??;
        let months: Vec<u32> = header
            .split(',')
            .map(|t| {
                t.trim().parse::<u32>().map_err(|_| Error::BadHeader {
                    expected: "comma-separated tenor labels in months".into(),
                    found: header.clone(),
                })
            })
            .collect::<Result<_>>()?;
        let grid = TenorGrid::from_months(&months)?;
        let n = grid.len();
        let mut values = Array2::zeros((n, n));
        for i in 0..n {
            let line = lines.next().ok_or_else(|| Error::Parse {
                line: (i + 2) as u64,
                detail: format!("expected {n} data rows, file ended after {i}"),
            })??;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n {
                return Err(Error::Parse {
                    line: (i + 2) as u64,
                    detail: format!("expected {n} columns, found {}", fields.len()),
                });
            }
            for (j, f) in fields.iter().enumerate() {
                values[(i, j)] = f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: (i + 2) as u64,
                    detail: format!("unparseable value `{f}`"),
                })?;
            }
        }
        Self::new(grid, values)
    }

    pub fn write_json(&self, w: &mut impl Write) -> Result<()> {
        let repr = SurfaceRepr {
            tenors: self.grid.months(),
            values: (0..self.len())
                .map(|i| self.values.row(i).to_vec())
                .collect(),
        };
        serde_json::to_writer_pretty(&mut *w, &repr)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_json(r: impl Read) -> Result<Self> {
        let repr: SurfaceRepr = serde_json::from_reader(r)?;
        let grid = TenorGrid::from_months(&repr.tenors)?;
        let n = grid.len();
        let mut values = Array2::zeros((n, n));
        for (i, row) in repr.values.iter().enumerate() {
            if i >= n || row.len() != n {
                return Err(Error::InvalidSurface {
                    detail: "JSON values block does not match tenor count".into(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                values[(i, j)] = v;
            }
        }
        if repr.values.len() != n {
            return Err(Error::InvalidSurface {
                detail: "JSON values block does not match tenor count".into(),
            });
        }
        Self::new(grid, values)
    }
}

/// JSON shape: `{"tenors": [months...], "values": [[...], ...]}`.
#[derive(Serialize, Deserialize)]
struct SurfaceRepr {
    tenors: Vec<u32>,
    values: Vec<Vec<f64>>,
}

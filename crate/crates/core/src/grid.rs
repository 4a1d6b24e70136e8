//! Tenor grids in 3-month lattice units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Months per lattice step: quoted contracts are spaced quarterly.
pub const MONTHS_PER_UNIT: u32 = 3;

/// An ordered set of tenors, stored in 3-month units.
///
/// Entries are strictly increasing integers ≥ 1; θ=0 is reserved for the spot
/// boundary node and never appears on a quoted grid. Convert to months with
/// [`TenorGrid::months`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct TenorGrid {
    tenors: Vec<u32>,
}

impl TenorGrid {
    pub fn new(tenors: Vec<u32>) -> Result<Self> {
        if tenors.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for (i, &t) in tenors.iter().enumerate() {
            let ok = t >= 1 && (i == 0 || t > tenors[i - 1]);
            if !ok {
                return Err(Error::InvalidGrid { index: i });
            }
        }
        Ok(Self { tenors })
    }

    /// The 39-tenor quarterly grid spanning 3 to 117 months.
    pub fn standard() -> Self {
        Self {
            tenors: (1..=39).collect(),
        }
    }

    /// Build from tenors quoted in months; each must be a positive multiple of 3.
    pub fn from_months(months: &[u32]) -> Result<Self> {
        let mut units = Vec::with_capacity(months.len());
        for (i, &m) in months.iter().enumerate() {
            if m == 0 || m % MONTHS_PER_UNIT != 0 {
                return Err(Error::InvalidGrid { index: i });
            }
            units.push(m / MONTHS_PER_UNIT);
        }
        Self::new(units)
    }

    pub fn len(&self) -> usize {
        self.tenors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tenors.is_empty()
    }

    /// Tenors in lattice units.
    pub fn units(&self) -> &[u32] {
        &self.tenors
    }

    /// Tenors in months.
    pub fn months(&self) -> Vec<u32> {
        self.tenors.iter().map(|t| t * MONTHS_PER_UNIT).collect()
    }

    pub fn max_unit(&self) -> u32 {
        *self.tenors.last().expect("grid is non-empty")
    }

    /// Position of a tenor (in units) on this grid, if present.
    pub fn position(&self, unit: u32) -> Option<usize> {
        self.tenors.binary_search(&unit).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.tenors.iter().copied()
    }
}

impl TryFrom<Vec<u32>> for TenorGrid {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TenorGrid> for Vec<u32> {
    fn from(g: TenorGrid) -> Self {
        g.tenors
    }
}

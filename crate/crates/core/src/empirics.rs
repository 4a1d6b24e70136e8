//! Ingestion of futures-price series and the statistics read off them:
//! Pearson correlation surfaces of binned increments, per-tenor descriptive
//! statistics, correlation-vs-time-scale curves, and anti-diagonal curvature
//! of a correlation surface.
//!
//! Prices enter as `(timestamp, tenor, mid price)` ticks. Correlations of
//! increments are invariant under per-tenor affine maps, so it makes no
//! difference whether the column holds futures prices or the implied
//! forward rates (`rate ≈ 100 − price`); ingestion takes mid prices as-is.

use chrono::{DateTime, SecondsFormat, Utc};
use ndarray::Array2;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{TenorGrid, MONTHS_PER_UNIT};
use crate::linalg;
use crate::surface::CorrelationSurface;

/// Default floor on paired observations for a correlation estimate.
pub const DEFAULT_MIN_PAIRED: usize = 30;

/// Annualization factor for volatilities estimated from daily increments.
pub fn daily_annualization() -> f64 {
    252f64.sqrt()
}

/// Tick-level mid-price observations, keyed by tenor in 3-month units and
/// sorted in time within each tenor.
#[derive(Debug, Clone, Default)]
pub struct PriceSeries {
    by_tenor: BTreeMap<u32, Vec<(DateTime<Utc>, f64)>>,
}

impl PriceSeries {
    /// Tenors present, in 3-month units, ascending.
    pub fn tenors(&self) -> Vec<u32> {
        self.by_tenor.keys().copied().collect()
    }

    /// Total number of observations across tenors.
    pub fn len(&self) -> usize {
        self.by_tenor.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_tenor.is_empty()
    }

    /// Time-sorted observations for one tenor (3-month units).
    pub fn observations(&self, tenor: u32) -> Option<&[(DateTime<Utc>, f64)]> {
        self.by_tenor.get(&tenor).map(Vec::as_slice)
    }

    /// Append one observation, enforcing per-tenor time order and
    /// uniqueness. `line` feeds error reports.
    pub fn push(
        &mut self,
        timestamp: DateTime<Utc>,
        tenor: u32,
        price: f64,
        line: u64,
    ) -> Result<()> {
        let obs = self.by_tenor.entry(tenor).or_default();
        if let Some(&(last, _)) = obs.last() {
            if timestamp < last {
                return Err(Error::NonMonotoneTime {
                    line,
                    tenor_months: tenor * MONTHS_PER_UNIT,
                });
            }
            if timestamp == last {
                return Err(Error::DuplicateRecord {
                    line,
                    tenor_months: tenor * MONTHS_PER_UNIT,
                    timestamp: timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
                });
            }
        }
        obs.push((timestamp, price));
        Ok(())
    }

    /// The sub-series containing only the given tenors.
    pub fn restrict(&self, tenors: &[u32]) -> PriceSeries {
        PriceSeries {
            by_tenor: self
                .by_tenor
                .iter()
                .filter(|(t, _)| tenors.contains(t))
                .map(|(t, v)| (*t, v.clone()))
                .collect(),
        }
    }
}

const EXPECTED_HEADER: &str = "timestamp,tenor_months,price";

/// Read a tick CSV with header `timestamp,tenor_months,price`
/// (ISO-8601 UTC timestamps, tenors in months as multiples of 3).
///
/// Malformed rows are rejected with their line number; out-of-order or
/// duplicated `(timestamp, tenor)` rows are reported as such. A file with
/// no content at all yields an empty series.
pub fn ingest_csv_reader(input: impl Read) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(PriceSeries::default());
    }
    let found = headers.iter().collect::<Vec<_>>().join(",");
    if found != EXPECTED_HEADER {
        return Err(Error::BadHeader {
            expected: EXPECTED_HEADER.into(),
            found,
        });
    }
    let mut series = PriceSeries::default();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize, name: &str| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::Parse {
                line,
                detail: format!("missing field `{name}`"),
            })
        };
        let timestamp = DateTime::parse_from_rfc3339(field(0, "timestamp")?)
            .map_err(|e| Error::Parse {
                line,
                detail: format!("bad timestamp: {e}"),
            })?
            .with_timezone(&Utc);
        let months: u32 = field(1, "tenor_months")?.parse().map_err(|e| Error::Parse {
            line,
            detail: format!("bad tenor_months: {e}"),
        })?;
        if months == 0 || months % MONTHS_PER_UNIT != 0 {
            return Err(Error::Parse {
                line,
                detail: format!("tenor_months {months} is not a positive multiple of 3"),
            });
        }
        let price: f64 = field(2, "price")?.parse().map_err(|e| Error::Parse {
            line,
            detail: format!("bad price: {e}"),
        })?;
        if !price.is_finite() {
            return Err(Error::Parse {
                line,
                detail: format!("price {price} is not finite"),
            });
        }
        series.push(timestamp, months / MONTHS_PER_UNIT, price, line)?;
    }
    Ok(series)
}

/// [`ingest_csv_reader`] on a file path.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<PriceSeries> {
    ingest_csv_reader(std::fs::File::open(path)?)
}

/// How bin boundaries are anchored in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinAlignment {
    /// Bins are `[k·Δt, (k+1)·Δt)` measured from the Unix epoch, so daily
    /// bins are calendar UTC days, hourly bins start on the hour, and so on.
    Epoch,
    /// Bins measured from an explicit instant.
    Anchor(DateTime<Utc>),
}

/// Per-tenor increments of binned prices; missing entries are NaN.
#[derive(Debug, Clone)]
pub struct IncrementPanel {
    /// Tenors covered, in 3-month units, ascending.
    pub tenors: Vec<u32>,
    /// End instant of each increment's bin; one per row.
    pub bin_ends: Vec<DateTime<Utc>>,
    /// Rows are consecutive bins, columns follow `tenors`; an entry is NaN
    /// when the bin or its predecessor had no observation for that tenor.
    pub values: Array2<f64>,
}

/// Bin a series into non-overlapping windows of `delta_t` and difference
/// the last price in each bin against the last price in the previous bin.
///
/// Bins where either endpoint has no observation yield NaN, never zero.
/// With `n` populated bins the panel has `n − 1` rows.
pub fn increments(
    series: &PriceSeries,
    delta_t: chrono::Duration,
    alignment: BinAlignment,
) -> Result<IncrementPanel> {
    let dt_ms = delta_t.num_milliseconds();
    if dt_ms <= 0 {
        return Err(Error::NonPositiveParameter {
            name: "delta_t",
            value: dt_ms as f64 / 1000.0,
        });
    }
    let anchor_ms = match alignment {
        BinAlignment::Epoch => 0,
        BinAlignment::Anchor(t) => t.timestamp_millis(),
    };
    let tenors = series.tenors();
    if tenors.is_empty() {
        return Ok(IncrementPanel {
            tenors,
            bin_ends: Vec::new(),
            values: Array2::zeros((0, 0)),
        });
    }
    let bin_of = |t: DateTime<Utc>| (t.timestamp_millis() - anchor_ms).div_euclid(dt_ms);
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for obs in series.by_tenor.values() {
        lo = lo.min(bin_of(obs[0].0));
        hi = hi.max(bin_of(obs[obs.len() - 1].0));
    }
    let n_bins = (hi - lo + 1) as usize;
    let n = tenors.len();
    // last observed price per bin, per tenor
    let mut sampled = Array2::from_elem((n_bins, n), f64::NAN);
    for (j, tenor) in tenors.iter().enumerate() {
        for &(t, p) in &series.by_tenor[tenor] {
            sampled[((bin_of(t) - lo) as usize, j)] = p;
        }
    }
    let rows = n_bins.saturating_sub(1);
    let mut values = Array2::from_elem((rows, n), f64::NAN);
    for k in 1..n_bins {
        for j in 0..n {
            values[(k - 1, j)] = sampled[(k, j)] - sampled[(k - 1, j)];
        }
    }
    let bin_ends = (1..n_bins)
        .map(|k| {
            DateTime::from_timestamp_millis(anchor_ms + (lo + k as i64 + 1) * dt_ms)
                .expect("bin end representable")
        })
        .collect();
    Ok(IncrementPanel {
        tenors,
        bin_ends,
        values,
    })
}

/// Pearson correlation between two columns over rows where both are finite.
/// Returns the coefficient and the number of paired rows used.
fn paired_pearson(values: &Array2<f64>, i: usize, j: usize) -> (f64, usize) {
    let (xs, ys) = (values.column(i), values.column(j));
    let mut n = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        if x.is_finite() && y.is_finite() {
            n += 1;
            sx += x;
            sy += y;
        }
    }
    if n < 2 {
        return (f64::NAN, n);
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        if x.is_finite() && y.is_finite() {
            let (dx, dy) = (x - mx, y - my);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return (f64::NAN, n);
    }
    ((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0), n)
}

/// Pairwise-complete Pearson correlation surface of an increment panel over
/// a tenor grid.
///
/// Each pair uses exactly the rows where both tenors are present; pairs
/// falling below `min_paired` rows (or with a degenerate column) are
/// reported, never silently filled.
pub fn pearson_surface(
    panel: &IncrementPanel,
    grid: &TenorGrid,
    min_paired: usize,
) -> Result<CorrelationSurface> {
    let col_of: BTreeMap<u32, usize> = panel
        .tenors
        .iter()
        .enumerate()
        .map(|(j, &t)| (t, j))
        .collect();
    let mut cols = Vec::with_capacity(grid.len());
    for &u in grid.units() {
        match col_of.get(&u) {
            Some(&j) => cols.push(j),
            None => {
                return Err(Error::InsufficientData {
                    detail: format!("tenor {} months has no data", u * MONTHS_PER_UNIT),
                })
            }
        }
    }
    let n = grid.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let computed: Vec<((usize, usize), (f64, usize))> = pairs
        .par_iter()
        .map(|&(i, j)| ((i, j), paired_pearson(&panel.values, cols[i], cols[j])))
        .collect();
    let mut values = Array2::zeros((n, n));
    let mut starved = Vec::new();
    for ((i, j), (rho, count)) in computed {
        if count < min_paired || !rho.is_finite() {
            starved.push(((i, j), count));
            continue;
        }
        if i == j {
            values[(i, i)] = 1.0;
        } else {
            values[(i, j)] = rho;
            values[(j, i)] = rho;
        }
    }
    if let Some(&((i, j), count)) = starved.first() {
        return Err(Error::InsufficientData {
            detail: format!(
                "{} pair(s) below the floor of {min_paired} paired observations; \
                 first: tenors ({}, {}) months with {count}",
                starved.len(),
                grid.units()[i] * MONTHS_PER_UNIT,
                grid.units()[j] * MONTHS_PER_UNIT
            ),
        });
    }
    CorrelationSurface::new(grid.clone(), values)
}

/// Per-tenor unconditional level and increment-volatility summary.
#[derive(Debug, Clone)]
pub struct TenorStats {
    /// Tenors in 3-month units, following the grid.
    pub tenors: Vec<u32>,
    /// Mean of price levels; NaN where the tenor has no data.
    pub mean_level: Vec<f64>,
    /// Standard deviation of daily increments scaled by the annualization
    /// factor; NaN where fewer than two increments exist.
    pub volatility: Vec<f64>,
}

/// Mean level and annualized daily-increment volatility per grid tenor.
/// `annualization` scales the raw daily standard deviation
/// (use [`daily_annualization`] for the √252 convention).
pub fn descriptive_stats(
    series: &PriceSeries,
    grid: &TenorGrid,
    annualization: f64,
) -> Result<TenorStats> {
    let panel = increments(series, chrono::Duration::days(1), BinAlignment::Epoch)?;
    let col_of: BTreeMap<u32, usize> = panel
        .tenors
        .iter()
        .enumerate()
        .map(|(j, &t)| (t, j))
        .collect();
    let mut mean_level = Vec::with_capacity(grid.len());
    let mut volatility = Vec::with_capacity(grid.len());
    for &u in grid.units() {
        let mean = series
            .observations(u)
            .filter(|obs| !obs.is_empty())
            .map(|obs| obs.iter().map(|&(_, p)| p).sum::<f64>() / obs.len() as f64)
            .unwrap_or(f64::NAN);
        mean_level.push(mean);
        let vol = col_of
            .get(&u)
            .map(|&j| {
                let col: Vec<f64> = panel
                    .values
                    .column(j)
                    .iter()
                    .copied()
                    .filter(|v| v.is_finite())
                    .collect();
                if col.len() < 2 {
                    return f64::NAN;
                }
                let m = col.iter().sum::<f64>() / col.len() as f64;
                let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                    / (col.len() as f64 - 1.0);
                var.sqrt() * annualization
            })
            .unwrap_or(f64::NAN);
        volatility.push(vol);
    }
    Ok(TenorStats {
        tenors: grid.units().to_vec(),
        mean_level,
        volatility,
    })
}

/// Correlation of one tenor pair as a function of the bin width used to
/// define increments.
#[derive(Debug, Clone)]
pub struct EppsCurve {
    /// The two tenors, in 3-month units.
    pub pair: (u32, u32),
    /// Bin widths in seconds, strictly increasing.
    pub scales: Vec<f64>,
    /// Pearson coefficient at each scale.
    pub correlations: Vec<f64>,
}

impl EppsCurve {
    pub fn new(pair: (u32, u32), scales: Vec<f64>, correlations: Vec<f64>) -> Result<Self> {
        if scales.len() != correlations.len() {
            return Err(Error::InsufficientData {
                detail: format!(
                    "{} scales against {} correlations",
                    scales.len(),
                    correlations.len()
                ),
            });
        }
        if scales.is_empty() {
            return Err(Error::InsufficientData {
                detail: "a correlation-vs-scale curve needs at least one scale".into(),
            });
        }
        for (k, w) in scales.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Parse {
                    line: k as u64 + 2,
                    detail: format!("scales must increase strictly: {} then {}", w[0], w[1]),
                });
            }
        }
        if let Some(bad) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::NonPositiveParameter {
                name: "scale_seconds",
                value: *bad,
            });
        }
        if let Some(bad) = correlations.iter().find(|c| !(c.abs() <= 1.0)) {
            return Err(Error::InvalidSurface {
                detail: format!("correlation {bad} outside [-1, 1]"),
            });
        }
        Ok(Self {
            pair,
            scales,
            correlations,
        })
    }

    /// CSV with columns `scale_seconds,correlation`.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "scale_seconds,correlation")?;
        for (s, c) in self.scales.iter().zip(&self.correlations) {
            writeln!(w, "{s},{c}")?;
        }
        Ok(())
    }

    /// Read the CSV written by [`Self::write_csv`]; the tenor pair is not
    /// stored in the file and must be supplied.
    pub fn read_csv(input: impl Read, pair: (u32, u32)) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = reader.headers()?.clone();
        let found = headers.iter().collect::<Vec<_>>().join(",");
        if found != "scale_seconds,correlation" {
            return Err(Error::BadHeader {
                expected: "scale_seconds,correlation".into(),
                found,
            });
        }
        let mut scales = Vec::new();
        let mut correlations = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse = |idx: usize| -> Result<f64> {
                record
                    .get(idx)
                    .ok_or(Error::Parse {
                        line,
                        detail: "missing field".into(),
                    })?
                    .parse()
                    .map_err(|e| Error::Parse {
                        line,
                        detail: format!("{e}"),
                    })
            };
            scales.push(parse(0)?);
            correlations.push(parse(1)?);
        }
        Self::new(pair, scales, correlations)
    }
}

/// Correlation of a tenor pair at each requested bin width (seconds), from
/// non-overlapping epoch-aligned bins. Each scale must retain at least
/// [`DEFAULT_MIN_PAIRED`] paired increments.
pub fn epps_curve(series: &PriceSeries, pair: (u32, u32), scales: &[f64]) -> Result<EppsCurve> {
    let sub = series.restrict(&[pair.0, pair.1]);
    let mut correlations = Vec::with_capacity(scales.len());
    for &scale in scales {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::NonPositiveParameter {
                name: "scale_seconds",
                value: scale,
            });
        }
        let delta_t = chrono::Duration::milliseconds((scale * 1e3).round() as i64);
        let panel = increments(&sub, delta_t, BinAlignment::Epoch)?;
        let find = |t: u32| panel.tenors.iter().position(|&u| u == t);
        let (ca, cb) = match (find(pair.0), find(pair.1)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::InsufficientData {
                    detail: format!(
                        "pair ({}, {}) months not covered by the series",
                        pair.0 * MONTHS_PER_UNIT,
                        pair.1 * MONTHS_PER_UNIT
                    ),
                })
            }
        };
        let (rho, count) = paired_pearson(&panel.values, ca, cb);
        if count < DEFAULT_MIN_PAIRED || !rho.is_finite() {
            return Err(Error::InsufficientData {
                detail: format!(
                    "scale {scale} s has {count} paired increments \
                     (floor {DEFAULT_MIN_PAIRED})"
                ),
            });
        }
        correlations.push(rho);
    }
    EppsCurve::new(pair, scales.to_vec(), correlations)
}

/// Least-squares parabola `a + b·x + c·x²` through `(x, y)` points; returns
/// `(a, b, c)`.
fn fit_parabola(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let n = points.len() as f64;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    let (mut t0, mut t1, mut t2) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let x2 = x * x;
        s1 += x;
        s2 += x2;
        s3 += x2 * x;
        s4 += x2 * x2;
        t0 += y;
        t1 += x * y;
        t2 += x2 * y;
    }
    let a = [[n, s1, s2], [s1, s2, s3], [s2, s3, s4]];
    let sol = linalg::solve3(a, [t0, t1, t2]).ok_or_else(|| Error::SingularOperator {
        detail: "degenerate abscissae in parabola fit".into(),
    })?;
    Ok((sol[0], sol[1], sol[2]))
}

/// Curvature of each anti-diagonal of a correlation surface.
///
/// Entries with equal tenor sum Θ = θ+θ′ form one anti-diagonal; the ten
/// points nearest its center (smallest |θ−θ′|, ties toward negative) are
/// fitted with a least-squares parabola in θ−θ′, and the curvature is `c`
/// in `ρ ≈ ρ₀ − c·(θ−θ′)²`, i.e. minus the fitted second-order
/// coefficient. Returns `(Θ, c)` pairs ascending in Θ for every
/// anti-diagonal holding at least ten points.
pub fn antidiagonal_curvature(surface: &CorrelationSurface) -> Result<Vec<(u32, f64)>> {
    let units = surface.grid().units();
    let values = surface.values();
    let mut groups: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, &ui) in units.iter().enumerate() {
        for (j, &uj) in units.iter().enumerate() {
            groups
                .entry(ui + uj)
                .or_default()
                .push((ui as f64 - uj as f64, values[(i, j)]));
        }
    }
    let mut out = Vec::new();
    for (theta_sum, mut points) in groups {
        if points.len() < 10 {
            continue;
        }
        points.sort_by(|a, b| {
            (a.0.abs(), a.0)
                .partial_cmp(&(b.0.abs(), b.0))
                .expect("finite anti-diagonal offsets")
        });
        points.truncate(10);
        let (_, _, c2) = fit_parabola(&points)?;
        out.push((theta_sum, -c2));
    }
    if out.is_empty() {
        return Err(Error::InsufficientData {
            detail: "no anti-diagonal holds ten points".into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbdl::{self, OperatorMatrix};
    use crate::params::DynamicsParams;
    use crate::sim::{self, Integrator, OperatorSpec, SimConfig};
    use chrono::TimeZone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn ts(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    #[test]
    fn well_formed_csv_parses() {
        let data = "timestamp,tenor_months,price\n\
                    2020-01-02T17:00:00Z,3,98.25\n\
                    2020-01-02T17:00:00Z,6,98.00\n\
                    2020-01-03T17:00:00Z,3,98.30\n";
        let series = ingest_csv_reader(data.as_bytes()).unwrap();
        assert_eq!(series.len(), 3);
        assert_eq!(series.tenors(), vec![1, 2]);
        assert_eq!(series.observations(1).unwrap()[1].1, 98.30);
    }

    #[test]
    fn duplicate_row_reports_line() {
        let data = "timestamp,tenor_months,price\n\
                    2020-01-02T17:00:00Z,3,98.25\n\
                    2020-01-02T17:00:00Z,3,98.26\n";
        match ingest_csv_reader(data.as_bytes()) {
            Err(Error::DuplicateRecord {
                line, tenor_months, ..
            }) => {
                assert_eq!(line, 3);
                assert_eq!(tenor_months, 3);
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn backwards_time_reports_line() {
        let data = "timestamp,tenor_months,price\n\
                    2020-01-03T17:00:00Z,3,98.25\n\
                    2020-01-02T17:00:00Z,3,98.26\n";
        match ingest_csv_reader(data.as_bytes()) {
            Err(Error::NonMonotoneTime { line, tenor_months }) => {
                assert_eq!(line, 3);
                assert_eq!(tenor_months, 3);
            }
            other => panic!("expected time-order error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_fields_report_line() {
        for (row, needle) in [
            ("not-a-time,3,98.25", "timestamp"),
            ("2020-01-02T17:00:00Z,five,98.25", "tenor_months"),
            ("2020-01-02T17:00:00Z,4,98.25", "multiple of 3"),
            ("2020-01-02T17:00:00Z,3,ninety", "price"),
        ] {
            let data = format!("timestamp,tenor_months,price\n{row}\n");
            match ingest_csv_reader(data.as_bytes()) {
                Err(Error::Parse { line, detail }) => {
                    assert_eq!(line, 2);
                    assert!(detail.contains(needle), "{detail} missing {needle}");
                }
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn wrong_header_and_empty_input() {
        let data = "time,tenor,px\n2020-01-02T17:00:00Z,3,98.25\n";
        assert!(matches!(
            ingest_csv_reader(data.as_bytes()),
            Err(Error::BadHeader { .. })
        ));
        let empty = ingest_csv_reader("".as_bytes()).unwrap();
        assert!(empty.is_empty());
        let header_only = ingest_csv_reader("timestamp,tenor_months,price\n".as_bytes()).unwrap();
        assert!(header_only.is_empty());
    }

    #[test]
    fn daily_bins_difference_last_prices() {
        // five consecutive trading days, two ticks per day (the later wins)
        let mut series = PriceSeries::default();
        for (day, px) in [(6, 100.0), (7, 101.0), (8, 103.0), (9, 99.0), (10, 100.5)] {
            series
                .push(ts(&format!("2020-01-{day:02}T11:00:00Z")), 1, px - 0.5, 0)
                .unwrap();
            series
                .push(ts(&format!("2020-01-{day:02}T17:00:00Z")), 1, px, 0)
                .unwrap();
        }
        let panel = increments(&series, chrono::Duration::days(1), BinAlignment::Epoch).unwrap();
        let col: Vec<f64> = panel.values.column(0).to_vec();
        assert_eq!(col, vec![1.0, 2.0, -4.0, 1.5], "four increments from five days");
    }

    #[test]
    fn empty_bins_mark_increments_missing() {
        // a gap on Jan 8 leaves both adjacent increments undefined
        let mut series = PriceSeries::default();
        for (day, px) in [(6, 100.0), (7, 101.0), (9, 99.0), (10, 100.5)] {
            series
                .push(ts(&format!("2020-01-{day:02}T17:00:00Z")), 1, px, 0)
                .unwrap();
        }
        let panel = increments(&series, chrono::Duration::days(1), BinAlignment::Epoch).unwrap();
        let col: Vec<f64> = panel.values.column(0).to_vec();
        assert_eq!(col.len(), 4);
        assert_eq!(col[0], 1.0);
        assert!(col[1].is_nan() && col[2].is_nan());
        assert_eq!(col[3], 1.5);
    }

    #[test]
    fn second_scale_bin_count() {
        let mut series = PriceSeries::default();
        let base = ts("2021-04-07T09:00:00Z");
        for k in 0..900 {
            series
                .push(base + chrono::Duration::seconds(4 * k), 1, k as f64, 0)
                .unwrap();
        }
        let panel = increments(&series, chrono::Duration::seconds(4), BinAlignment::Epoch).unwrap();
        // one hour of 4-second bins: 900 bins, hence 899 increments
        assert_eq!(panel.values.nrows(), 899);
        assert!(panel.values.column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn identical_tenors_correlate_perfectly() {
        let mut series = PriceSeries::default();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let base = ts("2021-04-07T00:00:00Z");
        let mut p = 100.0f64;
        for k in 0..200 {
            p += rng.sample::<f64, _>(StandardNormal);
            series.push(base + chrono::Duration::days(k), 1, p, 0).unwrap();
            series.push(base + chrono::Duration::days(k), 2, p + 3.0, 0).unwrap();
        }
        let panel = increments(&series, chrono::Duration::days(1), BinAlignment::Epoch).unwrap();
        let grid = TenorGrid::new(vec![1, 2]).unwrap();
        let surface = pearson_surface(&panel, &grid, DEFAULT_MIN_PAIRED).unwrap();
        assert!((surface.values()[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_noise_decorrelates() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n_rows = 10_000;
        let mut values = Array2::zeros((n_rows, 3));
        for v in values.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        let panel = IncrementPanel {
            tenors: vec![1, 2, 3],
            bin_ends: Vec::new(),
            values,
        };
        let grid = TenorGrid::new(vec![1, 2, 3]).unwrap();
        let surface = pearson_surface(&panel, &grid, DEFAULT_MIN_PAIRED).unwrap();
        for i in 0..3 {
            for j in 0..i {
                assert!(surface.values()[(i, j)].abs() < 0.05);
            }
        }
    }

    #[test]
    fn pairwise_floor_is_enforced_and_reported() {
        let mut values = Array2::from_elem((100, 2), f64::NAN);
        for k in 0..100 {
            values[(k, 0)] = k as f64;
            if k < 20 {
                values[(k, 1)] = -(k as f64);
            }
        }
        let panel = IncrementPanel {
            tenors: vec![1, 2],
            bin_ends: Vec::new(),
            values,
        };
        let grid = TenorGrid::new(vec![1, 2]).unwrap();
        match pearson_surface(&panel, &grid, 30) {
            Err(Error::InsufficientData { detail }) => {
                assert!(detail.contains("(3, 6) months"), "{detail}");
                assert!(detail.contains("20"), "{detail}");
            }
            other => panic!("expected starving pair, got {other:?}"),
        }
        // a laxer floor succeeds using only the complete rows
        let surface = pearson_surface(&panel, &grid, 10).unwrap();
        assert!((surface.values()[(0, 1)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_ignores_per_tenor_affine_maps() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut values = Array2::zeros((400, 3));
        for r in 0..400 {
            let common: f64 = rng.sample(StandardNormal);
            for c in 0..3 {
                values[(r, c)] = common + rng.sample::<f64, _>(StandardNormal);
            }
        }
        let grid = TenorGrid::new(vec![1, 2, 3]).unwrap();
        let base = pearson_surface(
            &IncrementPanel {
                tenors: vec![1, 2, 3],
                bin_ends: Vec::new(),
                values: values.clone(),
            },
            &grid,
            DEFAULT_MIN_PAIRED,
        )
        .unwrap();
        let scales = [0.02, 5.0, 300.0];
        let shifts = [-4.0, 0.3, 11.0];
        for c in 0..3 {
            for r in 0..400 {
                values[(r, c)] = values[(r, c)] * scales[c] + shifts[c];
            }
        }
        let mapped = pearson_surface(
            &IncrementPanel {
                tenors: vec![1, 2, 3],
                bin_ends: Vec::new(),
                values,
            },
            &grid,
            DEFAULT_MIN_PAIRED,
        )
        .unwrap();
        assert!(base.max_abs_diff(&mapped).unwrap() < 1e-12);
    }

    #[test]
    fn simulated_lattice_reproduces_model_surface() {
        // end-to-end: window samples → panel → Pearson vs the normalized
        // model covariance on the same lattice
        let kappa = 0.92;
        let n_sites = 13;
        let cfg = SimConfig {
            operator: OperatorSpec::MMatrix { kappa, kappa2: None },
            n_tenors: n_sites,
            tau: 0.01,
            big_d: 0.5,
            dt_step: 0.001,
            n_steps: 1,
            burn_in: 100,
            seed: 2024,
            sigma: Vec::new(),
            epsilon: 0.0,
            integrator: Integrator::ExactOu,
        };
        let n_bins = 20_000;
        let bins = sim::simulate_windows(&cfg, 1.0, n_bins).unwrap();
        let units: Vec<u32> = (1..n_sites as u32).collect();
        let panel = IncrementPanel {
            tenors: units.clone(),
            bin_ends: Vec::new(),
            values: bins.slice(ndarray::s![.., 1..]).to_owned(),
        };
        let grid = TenorGrid::new(units).unwrap();
        let surface = pearson_surface(&panel, &grid, DEFAULT_MIN_PAIRED).unwrap();
        let m = OperatorMatrix::build_m(kappa, n_sites, None).unwrap();
        let cov = bbdl::cov_bbdl(&m).unwrap();
        let tol = 4.0 / (n_bins as f64).sqrt() + 0.01;
        for i in 1..n_sites {
            for j in 1..n_sites {
                let want = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
                let got = surface.values()[(i - 1, j - 1)];
                assert!(
                    (got - want).abs() < tol * (1.0 - want * want).max(0.05),
                    "({i},{j}): got {got:.4} want {want:.4}"
                );
            }
        }
    }

    #[test]
    fn constant_series_has_zero_volatility() {
        let mut series = PriceSeries::default();
        let base = ts("2021-04-07T12:00:00Z");
        for k in 0..40 {
            series
                .push(base + chrono::Duration::days(k), 1, 97.5, 0)
                .unwrap();
        }
        let grid = TenorGrid::new(vec![1]).unwrap();
        let stats = descriptive_stats(&series, &grid, daily_annualization()).unwrap();
        assert_eq!(stats.mean_level[0], 97.5);
        assert_eq!(stats.volatility[0], 0.0);
    }

    #[test]
    fn volatility_profile_is_recovered() {
        let sigmas = [0.4, 1.0, 2.5];
        let n_days = 4000i64;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut series = PriceSeries::default();
        let base = ts("2000-01-01T16:00:00Z");
        let mut levels = [100.0f64; 3];
        for k in 0..n_days {
            for (c, sig) in sigmas.iter().enumerate() {
                levels[c] += sig * rng.sample::<f64, _>(StandardNormal);
                series
                    .push(base + chrono::Duration::days(k), c as u32 + 1, levels[c], 0)
                    .unwrap();
            }
        }
        let grid = TenorGrid::new(vec![1, 2, 3]).unwrap();
        let stats = descriptive_stats(&series, &grid, daily_annualization()).unwrap();
        for (c, sig) in sigmas.iter().enumerate() {
            let want = sig * daily_annualization();
            // SE of a standard deviation ≈ σ/√(2n)
            let se = want / (2.0 * n_days as f64).sqrt();
            assert!(
                (stats.volatility[c] - want).abs() < 3.0 * se,
                "tenor {c}: {} vs {want}",
                stats.volatility[c]
            );
        }
    }

    #[test]
    fn single_observation_leaves_volatility_undefined() {
        let mut series = PriceSeries::default();
        series.push(ts("2021-04-07T12:00:00Z"), 1, 99.0, 0).unwrap();
        let grid = TenorGrid::new(vec![1]).unwrap();
        let stats = descriptive_stats(&series, &grid, daily_annualization()).unwrap();
        assert_eq!(stats.mean_level[0], 99.0);
        assert!(stats.volatility[0].is_nan());
    }

    /// Ticks every `tick_s` seconds from exact window integrals of the
    /// relaxation lattice, cumulated into price levels.
    fn lattice_tick_series(
        cfg: &SimConfig,
        tick_s: i64,
        n_ticks: usize,
        pair: (u32, u32),
    ) -> PriceSeries {
        let bins = sim::simulate_windows(cfg, tick_s as f64, n_ticks).unwrap();
        let mut series = PriceSeries::default();
        let base = Utc.with_ymd_and_hms(2022, 1, 3, 0, 0, 0).unwrap();
        for &u in &[pair.0, pair.1] {
            let mut level = 100.0;
            for k in 0..n_ticks {
                level += bins[(k, u as usize)];
                series
                    .push(
                        base + chrono::Duration::seconds(tick_s * (k as i64 + 1)),
                        u,
                        level,
                        0,
                    )
                    .unwrap();
            }
        }
        series
    }

    #[test]
    fn epps_curve_rises_to_the_model_plateau() {
        // memory time 36 min, observation noise strong enough to kill
        // short-scale correlation; ticks are exact window integrals so the
        // measured curve follows the finite-memory kernel at every scale
        let tau = 2160.0;
        let pair = (2u32, 6u32);
        let cfg = SimConfig {
            operator: OperatorSpec::MMatrix { kappa: 0.92, kappa2: None },
            n_tenors: 11,
            tau,
            big_d: 0.5,
            dt_step: tau / 10.0,
            n_steps: 1,
            burn_in: 100,
            seed: 77,
            sigma: Vec::new(),
            epsilon: 0.01,
            integrator: Integrator::ExactOu,
        };
        let tick = 240i64;
        let n_ticks = 48_000;
        let series = lattice_tick_series(&cfg, tick, n_ticks, pair);
        let scales = [240.0, 960.0, 3840.0, 28_800.0];
        let curve = epps_curve(&series, pair, &scales).unwrap();
        let m = OperatorMatrix::build_m(0.92, cfg.n_tenors, None).unwrap();
        let kernel = bbdl::FiniteTauKernel::new(&m).unwrap();
        let (a, b) = (pair.0 as usize, pair.1 as usize);
        let model_rho = |delta_t: f64| {
            let dynamics = DynamicsParams::new(tau, cfg.big_d, cfg.epsilon, delta_t).unwrap();
            let cab = kernel.pair(a, b).cov(&dynamics).unwrap();
            let caa = kernel.pair(a, a).cov(&dynamics).unwrap();
            let cbb = kernel.pair(b, b).cov(&dynamics).unwrap();
            cab / (caa * cbb).sqrt()
        };
        // rising shape with a depressed short end
        assert!(curve.correlations[0] < curve.correlations[3] - 0.1);
        for (k, &s) in scales.iter().enumerate() {
            let want = model_rho(s);
            let n_bins = n_ticks as f64 * tick as f64 / s;
            let se = (1.0 - want * want) / n_bins.sqrt();
            assert!(
                (curve.correlations[k] - want).abs() < 4.0 * se + 0.01,
                "scale {s}: got {:.4} want {want:.4}",
                curve.correlations[k]
            );
        }
    }

    #[test]
    fn singleton_scale_matches_surface_entry() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut series = PriceSeries::default();
        let base = ts("2022-01-03T00:00:00Z");
        let mut pa = 100.0;
        let mut pb = 50.0;
        for k in 0..300 {
            let common: f64 = rng.sample(StandardNormal);
            pa += common + rng.sample::<f64, _>(StandardNormal);
            pb += common + rng.sample::<f64, _>(StandardNormal);
            let t = base + chrono::Duration::seconds(60 * k);
            series.push(t, 1, pa, 0).unwrap();
            series.push(t, 3, pb, 0).unwrap();
        }
        let curve = epps_curve(&series, (1, 3), &[300.0]).unwrap();
        let panel = increments(&series, chrono::Duration::seconds(300), BinAlignment::Epoch)
            .unwrap();
        let grid = TenorGrid::new(vec![1, 3]).unwrap();
        let surface = pearson_surface(&panel, &grid, DEFAULT_MIN_PAIRED).unwrap();
        assert!((curve.correlations[0] - surface.values()[(0, 1)]).abs() < 1e-12);
    }

    #[test]
    fn pure_noise_curve_stays_flat() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let mut series = PriceSeries::default();
        let base = ts("2022-01-03T00:00:00Z");
        let (mut pa, mut pb) = (100.0, 50.0);
        for k in 0..20_000 {
            pa += rng.sample::<f64, _>(StandardNormal);
            pb += rng.sample::<f64, _>(StandardNormal);
            let t = base + chrono::Duration::seconds(60 * k);
            series.push(t, 1, pa, 0).unwrap();
            series.push(t, 3, pb, 0).unwrap();
        }
        let curve = epps_curve(&series, (1, 3), &[60.0, 600.0, 6000.0]).unwrap();
        for (k, &rho) in curve.correlations.iter().enumerate() {
            let n_bins = 20_000.0 * 60.0 / curve.scales[k];
            assert!(rho.abs() < 4.0 / n_bins.sqrt(), "scale {k}: {rho}");
        }
    }

    #[test]
    fn exact_parabola_curvature_is_recovered() {
        let grid = TenorGrid::standard();
        // contiguous grid: index differences equal unit differences
        let c_true = 1e-3;
        let surface = CorrelationSurface::from_fn(grid, |i, j| {
            1.0 - c_true * (i as f64 - j as f64).powi(2)
        })
        .unwrap();
        let curve = antidiagonal_curvature(&surface).unwrap();
        assert!(!curve.is_empty());
        for &(theta, c) in &curve {
            assert!(
                (c - c_true).abs() < 1e-10,
                "anti-diagonal {theta}: {c} vs {c_true}"
            );
        }
        let thetas: Vec<u32> = curve.iter().map(|&(t, _)| t).collect();
        assert_eq!(*thetas.first().unwrap(), 11);
        assert_eq!(*thetas.last().unwrap(), 69);
    }

    #[test]
    fn flat_surface_has_zero_curvature() {
        let grid = TenorGrid::standard();
        let surface = CorrelationSurface::from_fn(grid, |_, _| 1.0).unwrap();
        for &(_, c) in &antidiagonal_curvature(&surface).unwrap() {
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_surfaces_are_rejected() {
        let grid = TenorGrid::new(vec![1, 2, 3]).unwrap();
        let surface =
            CorrelationSurface::from_fn(grid, |i, j| if i == j { 1.0 } else { 0.5 }).unwrap();
        assert!(matches!(
            antidiagonal_curvature(&surface),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn model_surface_curvature_decays() {
        let grid = TenorGrid::new((1..=20).collect()).unwrap();
        let surface = bbdl::rho_bbdl(0.92, &grid, 200).unwrap();
        let curve = antidiagonal_curvature(&surface).unwrap();
        assert!(curve.len() > 5);
        for w in curve.windows(2) {
            assert!(
                w[1].1 < w[0].1,
                "curvature not decreasing: {:?} then {:?}",
                w[0],
                w[1]
            );
        }
        assert!(curve.iter().all(|&(_, c)| c > 0.0));
    }
}


//! Correlation models for forward-rate curves built from an elastic string
//! relaxing in psychological time.
//!
//! The crate covers the full pipeline: closed-form and quadrature evaluation
//! of the string correlators (continuous and lattice), finite-relaxation-time
//! covariances and their short-scale (Epps) behaviour, Langevin simulation of
//! the lattice dynamics, ingestion of price histories into empirical
//! correlation surfaces, and calibration with sloppiness diagnostics.

pub mod bbdl;
pub mod calib;
pub mod continuous;
pub mod discrete;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod params;
pub mod empirics;
pub mod psytime;
pub mod sim;
pub mod quad;
pub mod surface;

pub use error::{Error, ErrorCategory, Result};
pub use grid::{TenorGrid, MONTHS_PER_UNIT};
pub use params::{DynamicsParams, ModelParams, ModelVariant};
pub use psytime::PsyTimeSpec;
pub use surface::CorrelationSurface;

/// Library version, embedded at compile time.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

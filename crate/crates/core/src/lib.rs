//! Exact likelihood-based confidence regions for non-linear models.
//!
//! Confidence boundaries are traced as integral curves of vector fields that
//! annihilate the log-likelihood, and pointwise confidence bands are obtained
//! by evaluating the model on those boundaries only.
//!
//! ```
//! use confbound::bands::{linear_grid, BandOptions};
//! use confbound::boundary::trace_region;
//! use confbound::estimate::{fit, FitOptions};
//! use confbound::{confidence_band, AnyModel, ConfidenceLevel, DataSet, GaussianLogDensity, MeshOptions, Model, RegionSpec};
//!
//! # fn main() -> confbound::Result<()> {
//! let model = AnyModel::builtin("toy-repar-4")?;
//! let data = DataSet::toy();
//! let f = fit(&model, &data, &model.initial_guess(), &FitOptions::default())?;
//! let spec = RegionSpec::from_fit(&f, ConfidenceLevel::from_sigma(1.0)?)?;
//! let density = GaussianLogDensity::new(&model, &data)?;
//! let boundary = trace_region(&density, &spec, None, &MeshOptions::default())?;
//! let band = confidence_band(&model, &boundary, &f.theta_mle, &linear_grid(0.0, 10.0, 200), &BandOptions::default())?;
//! assert!(band.width(0).iter().all(|w| *w > 0.0));
//! # Ok(())
//! # }
//! ```

pub mod bands;
pub mod boundary;
pub mod diff;
pub mod error;
pub mod estimate;
pub mod gridoracle;
pub mod infogeo;
pub mod model;
pub mod ode;
pub mod parallel;
pub mod quad;
pub mod stats;

pub use bands::{confidence_band, ConfidenceBand};
pub use boundary::{Boundary, BoundaryCurve, BoundaryMesh, MeshOptions, RegionSpec, TraceOptions};
pub use diff::{Dual, Scalar, ScalarFn, VectorFn};
pub use error::{Error, Result};
pub use model::{AnyModel, DataSet, GaussianLogDensity, Model, ParamDomain};
pub use stats::{ConfidenceLevel, Covariance, LogDensity};

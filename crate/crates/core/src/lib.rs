//! Width transfer for CNN architecture specs.
//!
//! The pipeline: describe a network as an [`ArchSpec`], project it (and its dataset
//! descriptor) to a cheap proxy, run a width optimizer on the proxy, then extrapolate
//! the optimized [`WidthVector`] back to the full network at equal FLOPs.
//!
//! Every width-valued computation is generic over [`Scalar`]; the aliases below pin
//! the common choices.

pub mod analysis;
pub mod archspec;
pub mod digest;
mod error;
pub mod extrapolation;
pub mod optimizers;
pub mod projection;
pub mod scalar;

pub use archspec::{
    apply_width, build_preset, flops, validate, width_units, ArchSpec, FlopsReport, WidthVector,
};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub use num_rational::Rational64;

/// Width vector over `f64`, the default for pipelines and the CLI.
pub type Widths = WidthVector<f64>;
/// Single-precision width vector.
pub type Widths32 = WidthVector<f32>;
/// Exact width vector; ratios and averages carry no rounding error.
pub type ExactWidths = WidthVector<Rational64>;

pub type Projection = projection::ProjectionConfig<f64>;
pub type ExactProjection = projection::ProjectionConfig<Rational64>;

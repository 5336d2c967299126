//! Semantic palette-guided color propagation.
//!
//! The pipeline turns an RGB image plus a per-pixel semantic feature field
//! into a small *semantic palette* of 6-D points (RGB + 3-D semantics), fits
//! Gaussian RBF similarity weights of every pixel to each palette entry, and
//! then propagates sparse user strokes by solving a box-constrained quadratic
//! energy over the palette color deltas.
//!
//! Stage by stage:
//!
//! * [`imgio`]: PNG images, feature tensors, stroke and palette files.
//! * [`features`]: PCA reduction, normalization and a fallback feature generator.
//! * [`superpixels`]: SLIC segmentation and centroid sampling.
//! * [`palette`]: greedy importance seeding and k-means refinement.
//! * [`weights`]: RBF interpolation weights (partition of unity).
//! * [`editor`]: edit energy, box-constrained solve and color transfer.
//! * [`metrics`]: MSE, PSNR and SSIM.
//! * [`pipeline`]: the precomputed state shared by the CLI and the HTTP service.

pub mod config;
pub mod editor;
mod error;
pub mod features;
pub mod imgio;
pub mod metrics;
pub mod palette;
pub mod pipeline;
mod qp;
pub mod superpixels;
pub mod weights;

pub use error::{Error, ErrorKind, Result};
pub use features::{FeatureField, FeaturePoint};
pub use imgio::{ImageRgb, RawFeatureTensor, Stroke, StrokeSet};
pub use palette::{PaletteConfig, SemanticPalette};

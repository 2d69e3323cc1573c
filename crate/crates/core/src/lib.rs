//! Statistical shape and appearance models (SAM) for landmark-annotated,
//! multi-channel 2D body scans.
//!
//! The crate is organized along the pipeline:
//!
//! 1. [`model_io`] – point files, triangulations, 16-bit images, cohort
//!    tables and the `SAMM0001` model container.
//! 2. [`geometry`] – centroid alignment, barycentric coordinates, mesh
//!    rasterization and piecewise-affine warping.
//! 3. [`pca`] – mean-centred PCA with exact and randomized solvers.
//! 4. [`shape`] – sex-specific shape models over aligned landmarks.
//! 5. [`appearance`] – warped texture models and joint shape+texture
//!    appearance models, image reconstruction.
//! 6. [`keypoints`] – PCK / EPE / NME landmark placement metrics.
//! 7. [`association`] – percentile-tail KS tests, Spearman correlations,
//!    Bonferroni control and representative images.
//! 8. [`phantom`] – synthetic scans with known latent factors.
//! 9. [`cli`] – the `samforge` command line front end.
//!
//! Runnable walkthroughs for each stage live in `examples/`.

pub mod appearance;
pub mod association;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod keypoints;
pub mod model_io;
pub mod pca;
pub mod phantom;
pub mod shape;

pub use error::{Error, Result};
pub use model_io::{ImagingMode, PointSet, ScanImage, Sex, Triangulation};

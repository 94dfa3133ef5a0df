//! Orthogonal rotation-invariant image moments on the unit disk.
//!
//! Three classical families share one pipeline: Zernike, pseudo-Zernike and
//! orthogonal Fourier-Mellin moments. An `M`x`M` image is mapped onto the unit
//! disk, projected onto precomputed complex kernels `lambda_p * R_pq(r) *
//! exp(-i q theta)`, and the coefficient magnitudes form a feature vector that
//! is invariant to rotation and reflection (and to translation when the grid
//! is re-centered on the image centroid).
//!
//! Layout of the crate:
//! - [`unit_disk`]: pixel-grid to unit-disk mapping, masks, centroids.
//! - [`basis`]: radial polynomials, kernel tables, orthogonality checks.
//! - [`moments`]: discrete moments, central moments, invariant features.
//! - [`transforms`]: grid-exact and interpolated image transforms plus
//!   quantitative checks of the invariance relations.
//! - [`oracle`]: slow, independent reference implementations used by tests.
//! - [`data`]: IDX/PGM input, synthetic analytic images, rotated splits.

pub mod basis;
pub mod data;
pub mod error;
pub mod moments;
pub mod oracle;
pub mod transforms;
pub mod unit_disk;

pub use error::OrimError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, OrimError>;

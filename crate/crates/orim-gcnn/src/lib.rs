//! Group-equivariant CNN layers with an invariant-moment transition head.
//!
//! Feature maps carry an explicit orientation axis: a [`layers::Map4`] is
//! indexed `[row, col, theta, channel]`, where theta runs over the rotations
//! (and reflections) of the chosen symmetry group. [`layers::LiftConv`] takes a
//! planar image onto that stack, [`layers::GroupConv`] convolves while keeping
//! the stack equivariant, and [`transition::OrimTransition`] collapses it into
//! rotation-invariant moment magnitudes before the classifier.

pub mod error;
pub mod group;
pub mod layers;
pub mod model;
pub mod oracle;
pub mod train;
pub mod transition;

pub use error::GcnnError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, GcnnError>;

//! Discrete moments over precomputed kernel tables.
//!
//! The continuous moment `OM_pq = lambda_p * integral O(r, theta) R_pq(r)
//! exp(-i q theta) r dr dtheta` is approximated by the pixel-center sum
//! `delta^2 * sum_px O(px) * V_pq(px)` over masked pixels. The elemental-area
//! factor `delta^2` makes values comparable across image sizes and lets the
//! quadrature oracle serve as ground truth.

use crate::basis::{MomentBasis, MomentSpec};
use crate::unit_disk::{Centroid, DiskMode, UnitDiskGrid};
use crate::{OrimError, Result};
use ndarray::{ArrayView2, ArrayView3};
use num_complex::Complex64;

/// Complex moment coefficients aligned with the basis pair enumeration.
#[derive(Debug, Clone)]
pub struct MomentVector {
    pub spec: MomentSpec,
    pub source_size: usize,
    pub pairs: Vec<(u32, u32)>,
    pub values: Vec<Complex64>,
}

/// Non-negative invariant features: coefficient magnitudes, one block of
/// `pairs.len()` values per input channel, concatenated channel-major.
#[derive(Debug, Clone)]
pub struct InvariantFeatures {
    pub spec: MomentSpec,
    pub channels: usize,
    pub magnitudes: Vec<f64>,
}

/// Project an image onto every kernel row of `basis`.
///
/// The summation order is the fixed masked row-major order, so results are
/// reproducible bit-for-bit regardless of caller threading.
pub fn compute_moments(image: ArrayView2<'_, f64>, basis: &MomentBasis) -> Result<MomentVector> {
    let m = basis.grid().m();
    let (rows, cols) = image.dim();
    if rows != m || cols != m {
        return Err(OrimError::SizeMismatch {
            got: rows,
            got2: cols,
            want: m,
        });
    }
    let owned;
    let flat: &[f64] = match image.as_slice() {
        Some(s) => s,
        None => {
            owned = image.to_owned();
            owned.as_slice().unwrap()
        }
    };

    let d2 = basis.grid().delta() * basis.grid().delta();
    let idx = basis.masked_pixel_indices();
    let n = basis.pairs().len();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let row = basis.kernel_row(i);
        let mut re = 0.0;
        let mut im = 0.0;
        for (j, &px) in idx.iter().enumerate() {
            let v = flat[px as usize];
            re += v * row[j].re;
            im += v * row[j].im;
        }
        values.push(Complex64::new(re * d2, im * d2));
    }
    Ok(MomentVector {
        spec: basis.spec(),
        source_size: m,
        pairs: basis.pairs().to_vec(),
        values,
    })
}

/// Moments over a grid re-centered on the image centroid.
///
/// Centroid, centered grid, and kernel table are derived from the image
/// itself; a blank image falls back to the geometric center and yields the
/// all-zero vector.
pub fn compute_central_moments(
    image: ArrayView2<'_, f64>,
    spec: MomentSpec,
    mode: DiskMode,
) -> Result<MomentVector> {
    let (rows, cols) = image.dim();
    if rows != cols {
        return Err(OrimError::SizeMismatch {
            got: rows,
            got2: cols,
            want: rows,
        });
    }
    let centroid = Centroid::of_image(image);
    let grid = UnitDiskGrid::build_centered(rows, mode, centroid)?;
    let basis = MomentBasis::build(spec, &grid)?;
    compute_moments(image, &basis)
}

/// Element-wise complex modulus; the rotation/reflection-invariant features.
pub fn magnitudes(mv: &MomentVector) -> InvariantFeatures {
    InvariantFeatures {
        spec: mv.spec,
        channels: 1,
        magnitudes: mv.values.iter().map(|v| v.norm()).collect(),
    }
}

/// Per-channel invariant features of an `M x M x F` stack (channel-last),
/// concatenated channel-major.
///
/// Uses the inscribed-disk mapping. With `central = false` one kernel table
/// is shared by all channels; with `central = true` each channel is
/// re-centered on its own centroid.
pub fn extract_invariants(
    stack: ArrayView3<'_, f64>,
    spec: MomentSpec,
    central: bool,
) -> Result<InvariantFeatures> {
    let (rows, cols, channels) = stack.dim();
    if rows != cols {
        return Err(OrimError::SizeMismatch {
            got: rows,
            got2: cols,
            want: rows,
        });
    }
    let shared = if central {
        None
    } else {
        let grid = UnitDiskGrid::build(rows, DiskMode::Inner)?;
        Some(MomentBasis::build(spec, &grid)?)
    };
    let mut magnitudes_out = Vec::with_capacity(channels * spec.pairs().len());
    for f in 0..channels {
        let plane = stack.index_axis(ndarray::Axis(2), f);
        let mv = match &shared {
            Some(basis) => compute_moments(plane, basis)?,
            None => compute_central_moments(plane, spec, DiskMode::Inner)?,
        };
        magnitudes_out.extend(mv.values.iter().map(|v| v.norm()));
    }
    Ok(InvariantFeatures {
        spec,
        channels,
        magnitudes: magnitudes_out,
    })
}

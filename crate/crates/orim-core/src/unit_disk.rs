//! Mapping of square pixel grids onto the unit disk.
//!
//! Pixel `(s, t)` (column, row) of an `M`x`M` image is assigned the
//! coordinates `x_s = (2s + 1 - M) / D`, `y_t = (2t + 1 - M) / D`, where the
//! normalizing diameter `D` is `M` for the inscribed disk or `M * sqrt(2)`
//! when the whole image must fit inside the disk. The per-pixel polar pair
//! `(r, theta)` and the inside-disk mask drive every moment computation.
//!
//! A variant grid re-centers the mapping on an image centroid, which is what
//! makes centroid-normalized moments translation invariant.

use crate::{OrimError, Result};
use ndarray::ArrayView2;

/// Which disk circumscribes what: `Inner` inscribes the disk in the image
/// square (pixels outside the disk are masked off), `Outer` scales the square
/// to fit entirely inside the disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiskMode {
    Inner,
    Outer,
}

impl DiskMode {
    /// Normalizing diameter `D` for an `M`-pixel image side.
    pub fn diameter(self, m: usize) -> f64 {
        match self {
            DiskMode::Inner => m as f64,
            DiskMode::Outer => m as f64 * std::f64::consts::SQRT_2,
        }
    }

    /// Stable one-byte tag used by the basis file format.
    pub fn code(self) -> u8 {
        match self {
            DiskMode::Inner => 0,
            DiskMode::Outer => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DiskMode::Inner),
            1 => Some(DiskMode::Outer),
            _ => None,
        }
    }
}

/// Mass centroid of an image in 0-indexed pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub cx: f64,
    pub cy: f64,
}

impl Centroid {
    /// Geometric center of an `M`x`M` grid; the fallback for zero-mass input.
    pub fn geometric(m: usize) -> Self {
        let c = (m as f64 - 1.0) / 2.0;
        Centroid { cx: c, cy: c }
    }

    /// Mass-weighted mean position. Rows index `y`, columns index `x`.
    ///
    /// A blank (all-zero) image has no defined centroid; the geometric center
    /// is returned so downstream grids degenerate to the standard mapping.
    pub fn of_image(image: ArrayView2<'_, f64>) -> Self {
        let (rows, cols) = image.dim();
        let mut mass = 0.0;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for t in 0..rows {
            for s in 0..cols {
                let v = image[[t, s]];
                mass += v;
                sx += s as f64 * v;
                sy += t as f64 * v;
            }
        }
        if mass > 0.0 {
            Centroid {
                cx: sx / mass,
                cy: sy / mass,
            }
        } else {
            Centroid::geometric(rows)
        }
    }
}

/// Precomputed disk geometry for an `M`x`M` image.
///
/// All per-pixel arrays are row-major (`index = t * M + s`). `r` and `theta`
/// are zero for pixels outside the mask.
#[derive(Debug, Clone)]
pub struct UnitDiskGrid {
    m: usize,
    mode: DiskMode,
    d: f64,
    delta: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
    mask: Vec<bool>,
    r: Vec<f64>,
    theta: Vec<f64>,
    masked: usize,
}

impl UnitDiskGrid {
    /// Standard centered mapping: `x_s = (2s + 1 - M) / D`.
    ///
    /// The numerators are formed in integer arithmetic so the coordinate sets
    /// are bitwise symmetric about zero; 90-degree index rotations then
    /// permute radii exactly.
    pub fn build(m: usize, mode: DiskMode) -> Result<Self> {
        if m < 2 {
            return Err(OrimError::InvalidGridSize { m });
        }
        let d = mode.diameter(m);
        let axis: Vec<f64> = (0..m)
            .map(|s| (2 * s as i64 + 1 - m as i64) as f64 / d)
            .collect();
        Ok(Self::from_axes(m, mode, axis.clone(), axis))
    }

    /// Centroid-shifted mapping: `x_s = 2 (s - cx) / D`.
    ///
    /// When the centroid sits at the geometric center `(M-1)/2` the numerator
    /// `2s - 2cx` equals `2s + 1 - M` exactly and the grid is bit-identical
    /// to [`UnitDiskGrid::build`].
    pub fn build_centered(m: usize, mode: DiskMode, centroid: Centroid) -> Result<Self> {
        if m < 2 {
            return Err(OrimError::InvalidGridSize { m });
        }
        let d = mode.diameter(m);
        let xs: Vec<f64> = (0..m)
            .map(|s| (2.0 * s as f64 - 2.0 * centroid.cx) / d)
            .collect();
        let ys: Vec<f64> = (0..m)
            .map(|t| (2.0 * t as f64 - 2.0 * centroid.cy) / d)
            .collect();
        Ok(Self::from_axes(m, mode, xs, ys))
    }

    fn from_axes(m: usize, mode: DiskMode, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let d = mode.diameter(m);
        let mut mask = vec![false; m * m];
        let mut r = vec![0.0; m * m];
        let mut theta = vec![0.0; m * m];
        let mut masked = 0;
        for t in 0..m {
            for s in 0..m {
                let (x, y) = (xs[s], ys[t]);
                let r2 = x * x + y * y;
                if r2 <= 1.0 {
                    let i = t * m + s;
                    mask[i] = true;
                    masked += 1;
                    r[i] = r2.sqrt();
                    let a = y.atan2(x);
                    // atan2 lands in (-pi, pi]; fold into [0, 2pi).
                    theta[i] = if a < 0.0 {
                        a + 2.0 * std::f64::consts::PI
                    } else {
                        a
                    };
                }
            }
        }
        UnitDiskGrid {
            m,
            mode,
            d,
            delta: 2.0 / d,
            xs,
            ys,
            mask,
            r,
            theta,
            masked,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mode(&self) -> DiskMode {
        self.mode
    }

    pub fn diameter(&self) -> f64 {
        self.d
    }

    /// Elemental side length of one pixel in disk units (`2 / D`).
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn x(&self, s: usize) -> f64 {
        self.xs[s]
    }

    pub fn y(&self, t: usize) -> f64 {
        self.ys[t]
    }

    pub fn is_inside(&self, t: usize, s: usize) -> bool {
        self.mask[t * self.m + s]
    }

    pub fn radius(&self, t: usize, s: usize) -> f64 {
        self.r[t * self.m + s]
    }

    pub fn angle(&self, t: usize, s: usize) -> f64 {
        self.theta[t * self.m + s]
    }

    pub fn masked_count(&self) -> usize {
        self.masked
    }

    /// Masked pixels in row-major order as `(t, s, r, theta)`.
    pub fn masked_pixels(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        (0..self.m * self.m).filter_map(move |i| {
            if self.mask[i] {
                Some((i / self.m, i % self.m, self.r[i], self.theta[i]))
            } else {
                None
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::f64::consts::PI;

    #[test]
    fn center_pixel_of_odd_grid_maps_to_origin() {
        let g = UnitDiskGrid::build(3, DiskMode::Inner).unwrap();
        assert_eq!(g.x(1), 0.0);
        assert_eq!(g.y(1), 0.0);
        assert_eq!(g.radius(1, 1), 0.0);
    }

    #[test]
    fn two_pixel_inner_grid() {
        let g = UnitDiskGrid::build(2, DiskMode::Inner).unwrap();
        assert_eq!(g.x(0), -0.5);
        assert_eq!(g.x(1), 0.5);
        for t in 0..2 {
            for s in 0..2 {
                assert!(g.is_inside(t, s));
                assert!((g.radius(t, s) - 0.5f64.sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_pixel_outer_grid() {
        let g = UnitDiskGrid::build(2, DiskMode::Outer).unwrap();
        let expect = 1.0 / (2.0 * 2.0f64.sqrt());
        assert!((g.x(1) - expect).abs() < 1e-15);
        assert_eq!(g.masked_count(), 4);
    }

    #[test]
    fn rejects_degenerate_size() {
        assert!(matches!(
            UnitDiskGrid::build(1, DiskMode::Inner),
            Err(OrimError::InvalidGridSize { m: 1 })
        ));
        assert!(matches!(
            UnitDiskGrid::build_centered(0, DiskMode::Inner, Centroid::geometric(1)),
            Err(OrimError::InvalidGridSize { m: 0 })
        ));
    }

    #[test]
    fn delta_is_two_over_diameter() {
        for mode in [DiskMode::Inner, DiskMode::Outer] {
            let g = UnitDiskGrid::build(17, mode).unwrap();
            assert_eq!(g.delta(), 2.0 / mode.diameter(17));
        }
    }

    #[test]
    fn coordinates_are_bitwise_symmetric() {
        for m in [2usize, 5, 8, 64, 127] {
            let g = UnitDiskGrid::build(m, DiskMode::Inner).unwrap();
            for s in 0..m {
                // Value equality tolerates the 0.0 == -0.0 midpoint; the
                // magnitude bits must match exactly.
                assert_eq!(g.x(s), -g.x(m - 1 - s));
                assert_eq!(g.x(s).abs().to_bits(), g.x(m - 1 - s).abs().to_bits());
                assert_eq!(g.y(s), -g.y(m - 1 - s));
                assert_eq!(g.y(s).abs().to_bits(), g.y(m - 1 - s).abs().to_bits());
            }
        }
    }

    #[test]
    fn quarter_turn_permutes_mask_and_radii_exactly() {
        for m in [8usize, 15, 64] {
            let g = UnitDiskGrid::build(m, DiskMode::Inner).unwrap();
            for t in 0..m {
                for s in 0..m {
                    // Index rotation (t, s) -> (s, m-1-t) swaps |numerators|.
                    let (t2, s2) = (s, m - 1 - t);
                    assert_eq!(g.is_inside(t, s), g.is_inside(t2, s2));
                    if g.is_inside(t, s) {
                        assert_eq!(g.radius(t, s).to_bits(), g.radius(t2, s2).to_bits());
                        if g.radius(t, s) > 0.0 {
                            let want = (g.angle(t, s) + PI / 2.0) % (2.0 * PI);
                            let diff = (g.angle(t2, s2) - want).abs();
                            assert!(diff < 1e-12 || (diff - 2.0 * PI).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn flips_negate_one_axis_exactly() {
        let m = 9;
        let g = UnitDiskGrid::build(m, DiskMode::Inner).unwrap();
        for s in 0..m {
            assert_eq!(g.x(m - 1 - s), -g.x(s));
            assert_eq!(g.x(m - 1 - s).abs().to_bits(), g.x(s).abs().to_bits());
        }
        for t in 0..m {
            assert_eq!(g.y(m - 1 - t), -g.y(t));
            assert_eq!(g.y(m - 1 - t).abs().to_bits(), g.y(t).abs().to_bits());
        }
    }

    #[test]
    fn inner_mask_fraction_approaches_quarter_pi() {
        let g = UnitDiskGrid::build(128, DiskMode::Inner).unwrap();
        let frac = g.masked_count() as f64 / (128.0 * 128.0);
        assert!((frac / (PI / 4.0) - 1.0).abs() < 0.02, "fraction {frac}");
    }

    #[test]
    fn outer_mode_masks_every_pixel() {
        for m in [2usize, 7, 32] {
            let g = UnitDiskGrid::build(m, DiskMode::Outer).unwrap();
            assert_eq!(g.masked_count(), m * m);
        }
    }

    #[test]
    fn constant_image_centroid_is_geometric_center() {
        for m in [4usize, 7] {
            let img = Array2::from_elem((m, m), 0.37);
            let c = Centroid::of_image(img.view());
            let want = (m as f64 - 1.0) / 2.0;
            assert!((c.cx - want).abs() < 1e-12);
            assert!((c.cy - want).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_centroid() {
        let mut img = Array2::zeros((8, 8));
        img[[5, 3]] = 1.0; // row t=5, column s=3
        let c = Centroid::of_image(img.view());
        assert_eq!((c.cx, c.cy), (3.0, 5.0));
    }

    #[test]
    fn two_point_centroid_is_midpoint() {
        let mut img = Array2::zeros((8, 8));
        img[[0, 0]] = 1.0;
        img[[0, 4]] = 1.0;
        let c = Centroid::of_image(img.view());
        assert_eq!((c.cx, c.cy), (2.0, 0.0));
    }

    #[test]
    fn zero_image_falls_back_to_geometric_center() {
        let img = Array2::zeros((6, 6));
        let c = Centroid::of_image(img.view());
        assert_eq!((c.cx, c.cy), (2.5, 2.5));
    }

    #[test]
    fn centered_grid_at_geometric_center_equals_standard_grid() {
        for m in [5usize, 6, 64] {
            let a = UnitDiskGrid::build(m, DiskMode::Inner).unwrap();
            let b =
                UnitDiskGrid::build_centered(m, DiskMode::Inner, Centroid::geometric(m)).unwrap();
            for s in 0..m {
                assert_eq!(a.x(s).to_bits(), b.x(s).to_bits());
                assert_eq!(a.y(s).to_bits(), b.y(s).to_bits());
            }
            assert_eq!(a.masked_count(), b.masked_count());
        }
    }

    #[test]
    fn centered_grid_hand_check() {
        let g = UnitDiskGrid::build_centered(
            4,
            DiskMode::Inner,
            Centroid { cx: 0.5, cy: 1.5 },
        )
        .unwrap();
        assert_eq!(
            (0..4).map(|s| g.x(s)).collect::<Vec<_>>(),
            vec![-0.25, 0.25, 0.75, 1.25]
        );
        assert_eq!(
            (0..4).map(|t| g.y(t)).collect::<Vec<_>>(),
            vec![-0.75, -0.25, 0.25, 0.75]
        );
        // x = 1.25 lies outside the disk regardless of y.
        for t in 0..4 {
            assert!(!g.is_inside(t, 3));
        }
        assert!(g.is_inside(1, 1) && g.is_inside(2, 2));
    }
}

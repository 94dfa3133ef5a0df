//! Image transforms and quantitative invariance checks.
//!
//! Quarter-turn rotations, axis flips, and integer translations are pure
//! index permutations (no interpolation), so the moment relations they induce
//! hold to accumulation noise. Arbitrary-angle rotation uses bilinear
//! interpolation and is checked by convergence, not equality.
//!
//! Relations verified here, for a real image `O` and its transforms:
//!
//! - rotation by `alpha`:   `OM_pq(O) = OM_pq(O^alpha) * exp(-i q alpha)`,
//!   and in particular `|OM_pq(O^alpha)| = |OM_pq(O)|`;
//! - horizontal flip:       `OM_pq(O^hf) = (-1)^q * conj(OM_pq(O))`;
//! - vertical flip:         `OM_pq(O^vf) = conj(OM_pq(O))`;
//! - translation:           centroid-re-centered magnitudes agree.

use crate::basis::{MomentBasis, MomentSpec};
use crate::moments::{compute_central_moments, compute_moments, magnitudes};
use crate::unit_disk::{DiskMode, UnitDiskGrid};
use crate::Result;
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use std::f64::consts::PI;

/// A geometric transform of a square image.
///
/// `Rotate90`, the flips, and `Translate` permute pixels exactly;
/// `RotateArbitrary` resamples bilinearly about the image center with zero
/// fill outside the support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformKind {
    /// `k` quarter turns, `k` in `0..=3`.
    Rotate90(u8),
    /// Rotation by `alpha` radians (bilinear).
    RotateArbitrary(f64),
    FlipHorizontal,
    FlipVertical,
    /// Shift by `(ds, dt)` pixels with zero fill.
    Translate { ds: i64, dt: i64 },
}

/// Apply a transform. The rotation convention matches the moment relations:
/// the rotated image sampled at angle `theta` equals the original at
/// `theta + alpha`.
pub fn apply(image: ArrayView2<'_, f64>, kind: TransformKind) -> Array2<f64> {
    let (h, w) = image.dim();
    assert_eq!(h, w, "transforms operate on square images");
    let m = h;
    match kind {
        TransformKind::Rotate90(k) => {
            let mut out = image.to_owned();
            for _ in 0..(k % 4) {
                let prev = out;
                out = Array2::from_shape_fn((m, m), |(t2, s2)| prev[[s2, m - 1 - t2]]);
            }
            out
        }
        TransformKind::FlipHorizontal => {
            Array2::from_shape_fn((m, m), |(t, s)| image[[t, m - 1 - s]])
        }
        TransformKind::FlipVertical => {
            Array2::from_shape_fn((m, m), |(t, s)| image[[m - 1 - t, s]])
        }
        TransformKind::Translate { ds, dt } => Array2::from_shape_fn((m, m), |(t, s)| {
            let (src_s, src_t) = (s as i64 - ds, t as i64 - dt);
            if (0..m as i64).contains(&src_s) && (0..m as i64).contains(&src_t) {
                image[[src_t as usize, src_s as usize]]
            } else {
                0.0
            }
        }),
        TransformKind::RotateArbitrary(alpha) => {
            let c = (m as f64 - 1.0) / 2.0;
            let (sin, cos) = alpha.sin_cos();
            Array2::from_shape_fn((m, m), |(t2, s2)| {
                let dx = s2 as f64 - c;
                let dy = t2 as f64 - c;
                // Source point at angle theta + alpha.
                let sx = dx * cos - dy * sin + c;
                let sy = dx * sin + dy * cos + c;
                bilinear(image, sy, sx)
            })
        }
    }
}

/// Bilinear sample at fractional (row, col); zero outside the image.
fn bilinear(image: ArrayView2<'_, f64>, row: f64, col: f64) -> f64 {
    let (h, w) = image.dim();
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let mut acc = 0.0;
    for (dr, wr) in [(0i64, 1.0 - fr), (1, fr)] {
        for (dc, wc) in [(0i64, 1.0 - fc), (1, fc)] {
            let rr = r0 as i64 + dr;
            let cc = c0 as i64 + dc;
            if wr * wc != 0.0 && (0..h as i64).contains(&rr) && (0..w as i64).contains(&cc) {
                acc += wr * wc * image[[rr as usize, cc as usize]];
            }
        }
    }
    acc
}

/// Residuals of the rotation relation for one image and angle.
#[derive(Debug, Clone)]
pub struct RotationCheck {
    pub pairs: Vec<(u32, u32)>,
    /// `OM_pq(O) - OM_pq(O^alpha) exp(-i q alpha)` per pair.
    pub phase_residuals: Vec<Complex64>,
    /// `| |OM_pq(O)| - |OM_pq(O^alpha)| |` per pair.
    pub magnitude_residuals: Vec<f64>,
    /// Largest original coefficient magnitude, for relative comparisons.
    pub scale: f64,
}

impl RotationCheck {
    pub fn max_relative_residual(&self) -> f64 {
        let s = self.scale.max(f64::MIN_POSITIVE);
        self.phase_residuals
            .iter()
            .map(|z| z.norm())
            .chain(self.magnitude_residuals.iter().copied())
            .fold(0.0f64, f64::max)
            / s
    }
}

/// Verify `OM(O) = OM(O^alpha) exp(-i q alpha)` on a concrete image.
///
/// Multiples of a quarter turn use the exact index rotation; anything else
/// resamples bilinearly.
pub fn check_rotation_relation(
    image: ArrayView2<'_, f64>,
    alpha: f64,
    basis: &MomentBasis,
) -> Result<RotationCheck> {
    let quarter = alpha / (PI / 2.0);
    let rotated = if (quarter - quarter.round()).abs() < 1e-12 {
        let k = ((quarter.round() as i64) % 4 + 4) % 4;
        apply(image, TransformKind::Rotate90(k as u8))
    } else {
        apply(image, TransformKind::RotateArbitrary(alpha))
    };

    let original = compute_moments(image, basis)?;
    let turned = compute_moments(rotated.view(), basis)?;
    let scale = original
        .values
        .iter()
        .map(|v| v.norm())
        .fold(0.0f64, f64::max);
    let mut phase = Vec::with_capacity(original.values.len());
    let mut mag = Vec::with_capacity(original.values.len());
    for (i, &(_, q)) in original.pairs.iter().enumerate() {
        let twist = Complex64::new(0.0, -(q as f64) * alpha).exp();
        phase.push(original.values[i] - turned.values[i] * twist);
        mag.push((original.values[i].norm() - turned.values[i].norm()).abs());
    }
    Ok(RotationCheck {
        pairs: original.pairs,
        phase_residuals: phase,
        magnitude_residuals: mag,
        scale,
    })
}

/// Residuals of both flip relations for one image.
#[derive(Debug, Clone)]
pub struct ReflectionCheck {
    pub pairs: Vec<(u32, u32)>,
    /// `OM(O^hf) - (-1)^q conj(OM(O))` per pair.
    pub horizontal_residuals: Vec<Complex64>,
    /// `OM(O^vf) - conj(OM(O))` per pair.
    pub vertical_residuals: Vec<Complex64>,
    pub scale: f64,
}

impl ReflectionCheck {
    pub fn max_relative_residual(&self) -> f64 {
        let s = self.scale.max(f64::MIN_POSITIVE);
        self.horizontal_residuals
            .iter()
            .chain(&self.vertical_residuals)
            .map(|z| z.norm())
            .fold(0.0f64, f64::max)
            / s
    }
}

/// Verify the conjugation relations under both axis flips.
pub fn check_reflection_relation(
    image: ArrayView2<'_, f64>,
    basis: &MomentBasis,
) -> Result<ReflectionCheck> {
    let original = compute_moments(image, basis)?;
    let hflip = compute_moments(
        apply(image, TransformKind::FlipHorizontal).view(),
        basis,
    )?;
    let vflip = compute_moments(apply(image, TransformKind::FlipVertical).view(), basis)?;
    let scale = original
        .values
        .iter()
        .map(|v| v.norm())
        .fold(0.0f64, f64::max);
    let mut horizontal = Vec::with_capacity(original.values.len());
    let mut vertical = Vec::with_capacity(original.values.len());
    for (i, &(_, q)) in original.pairs.iter().enumerate() {
        let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
        horizontal.push(hflip.values[i] - sign * original.values[i].conj());
        vertical.push(vflip.values[i] - original.values[i].conj());
    }
    Ok(ReflectionCheck {
        pairs: original.pairs,
        horizontal_residuals: horizontal,
        vertical_residuals: vertical,
        scale,
    })
}

/// Outcome of one shift in a translation-invariance check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftOutcome {
    /// Relative infinity-norm deviation between the central-moment magnitude
    /// vectors of the original and the shifted copy.
    Deviation(f64),
    /// The shift pushes object mass outside the masked disk; the relation
    /// carries no guarantee there.
    Unsupported,
}

/// Compare centroid-normalized magnitudes of an image against shifted copies.
///
/// Object support is the set of pixels above `10^-6` of the image peak. A
/// shift is checked before any clipping happens: if some support pixel would
/// land outside the image bounds or outside the inscribed disk, the shift is
/// reported as [`ShiftOutcome::Unsupported`] rather than silently compared.
pub fn check_translation_invariance(
    image: ArrayView2<'_, f64>,
    shifts: &[(i64, i64)],
    spec: MomentSpec,
) -> Result<Vec<ShiftOutcome>> {
    let m = image.dim().0;
    let grid = UnitDiskGrid::build(m, DiskMode::Inner)?;
    let reference = magnitudes(&compute_central_moments(image, spec, DiskMode::Inner)?);
    let scale = reference
        .magnitudes
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
        .max(f64::MIN_POSITIVE);
    let peak = image.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let support: Vec<(usize, usize)> = (0..m)
        .flat_map(|t| (0..m).map(move |s| (t, s)))
        .filter(|&(t, s)| image[[t, s]].abs() > 1e-6 * peak)
        .collect();
    let shift_supported = |ds: i64, dt: i64| -> bool {
        support.iter().all(|&(t, s)| {
            let (s2, t2) = (s as i64 + ds, t as i64 + dt);
            (0..m as i64).contains(&s2)
                && (0..m as i64).contains(&t2)
                && grid.is_inside(t2 as usize, s2 as usize)
        })
    };

    let mut out = Vec::with_capacity(shifts.len());
    for &(ds, dt) in shifts {
        if !shift_supported(0, 0) || !shift_supported(ds, dt) {
            out.push(ShiftOutcome::Unsupported);
            continue;
        }
        let shifted = apply(image, TransformKind::Translate { ds, dt });
        let moved = magnitudes(&compute_central_moments(shifted.view(), spec, DiskMode::Inner)?);
        let worst = reference
            .magnitudes
            .iter()
            .zip(&moved.magnitudes)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        out.push(ShiftOutcome::Deviation(worst / scale));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Family;
    use crate::data::{synth_image, SynthKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_image(m: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Array2::from_shape_fn((m, m), |_| rng.gen::<f64>())
    }

    fn build_basis(family: Family, p_max: u32, m: usize) -> MomentBasis {
        let spec = MomentSpec::with_q_zero(family, p_max, true).unwrap();
        let grid = UnitDiskGrid::build(m, DiskMode::Inner).unwrap();
        MomentBasis::build(spec, &grid).unwrap()
    }

    #[test]
    fn quarter_turn_identities() {
        let img = random_image(9, 1);
        let same = apply(img.view(), TransformKind::Rotate90(0));
        assert_eq!(img, same);

        let mut four = img.clone();
        for _ in 0..4 {
            four = apply(four.view(), TransformKind::Rotate90(1));
        }
        for (a, b) in img.iter().zip(four.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let k3 = apply(img.view(), TransformKind::Rotate90(3));
        let step3 = apply(
            apply(
                apply(img.view(), TransformKind::Rotate90(1)).view(),
                TransformKind::Rotate90(1),
            )
            .view(),
            TransformKind::Rotate90(1),
        );
        assert_eq!(k3, step3);
    }

    #[test]
    fn flips_are_involutions() {
        let img = random_image(8, 2);
        for kind in [TransformKind::FlipHorizontal, TransformKind::FlipVertical] {
            let twice = apply(apply(img.view(), kind).view(), kind);
            for (a, b) in img.iter().zip(twice.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn translation_shifts_with_zero_fill() {
        let mut img = Array2::zeros((4, 4));
        img[[1, 2]] = 5.0;
        let out = apply(img.view(), TransformKind::Translate { ds: 1, dt: -1 });
        assert_eq!(out[[0, 3]], 5.0);
        assert_eq!(out.sum(), 5.0);
        let gone = apply(img.view(), TransformKind::Translate { ds: 3, dt: 0 });
        assert_eq!(gone.sum(), 0.0);
    }

    #[test]
    fn zero_angle_bilinear_rotation_is_exact() {
        let img = random_image(11, 3);
        let out = apply(img.view(), TransformKind::RotateArbitrary(0.0));
        for (a, b) in img.iter().zip(out.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rotation_relation_zero_angle_residual_is_zero() {
        let basis = build_basis(Family::Zernike, 4, 16);
        let img = random_image(16, 4);
        let check = check_rotation_relation(img.view(), 0.0, &basis).unwrap();
        assert!(check.phase_residuals.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn quarter_turn_relation_smoke() {
        let basis = build_basis(Family::PseudoZernike, 4, 16);
        let img = random_image(16, 5);
        for k in 1..4u8 {
            let check =
                check_rotation_relation(img.view(), k as f64 * PI / 2.0, &basis).unwrap();
            assert!(
                check.max_relative_residual() <= 1e-9,
                "k={k}: {}",
                check.max_relative_residual()
            );
        }
    }

    #[test]
    fn reflection_relation_smoke() {
        let basis = build_basis(Family::FourierMellin, 4, 16);
        let img = random_image(16, 6);
        let check = check_reflection_relation(img.view(), &basis).unwrap();
        assert!(check.max_relative_residual() <= 1e-9);
    }

    #[test]
    fn symmetric_image_has_imaginary_odd_q_coefficients() {
        // If the image equals its horizontal flip, the relation forces
        // OM = (-1)^q conj(OM): odd-q coefficients are purely imaginary.
        let m = 32;
        let img = Array2::from_shape_fn((m, m), |(t, s)| {
            let x = (2.0 * s as f64 + 1.0 - m as f64).abs();
            let y = 2.0 * t as f64 + 1.0 - m as f64;
            (-(x * x + y * y) / 80.0).exp() + 0.2 * (-((y - 6.0) * (y - 6.0) + x * x) / 30.0).exp()
        });
        let flipped = apply(img.view(), TransformKind::FlipHorizontal);
        assert_eq!(img, flipped);
        let basis = build_basis(Family::Zernike, 5, m);
        let mv = compute_moments(img.view(), &basis).unwrap();
        let scale = mv.values.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        for (i, &(_, q)) in mv.pairs.iter().enumerate() {
            if q % 2 == 1 {
                assert!(
                    mv.values[i].re.abs() <= 1e-9 * scale,
                    "pair {:?}: {}",
                    mv.pairs[i],
                    mv.values[i]
                );
            }
        }
    }

    #[test]
    fn translation_outcomes() {
        // Asymmetric compact object: a pair of blobs keeps the q >= 1
        // moments well away from zero so the deviation ratio means something.
        let m = 64;
        let a = synth_image(
            SynthKind::GaussianBlob {
                cx: 28.0,
                cy: 31.0,
                sigma: 3.0,
            },
            m,
        );
        let b = synth_image(
            SynthKind::GaussianBlob {
                cx: 35.0,
                cy: 34.0,
                sigma: 2.5,
            },
            m,
        );
        let blob = &a + &(0.5 * &b);
        let spec = MomentSpec::new(Family::PseudoZernike, 5).unwrap();
        let out = check_translation_invariance(
            blob.view(),
            &[(0, 0), (3, -2), (40, 0)],
            spec,
        )
        .unwrap();
        match out[0] {
            ShiftOutcome::Deviation(d) => assert_eq!(d, 0.0),
            other => panic!("expected zero deviation, got {other:?}"),
        }
        match out[1] {
            ShiftOutcome::Deviation(d) => assert!(d <= 1e-3, "deviation {d}"),
            other => panic!("expected small deviation, got {other:?}"),
        }
        assert_eq!(out[2], ShiftOutcome::Unsupported);
    }
}

//! Heads that collapse a group feature map into a classifier input.
//!
//! Both heads start with the same theta-max projection. The invariant head
//! then replaces spatial flattening with per-channel moment magnitudes; the
//! flatten head keeps the raw pixels and serves as the control.

use crate::{GcnnError, Result};
use ndarray::{Array1, Array3};
use num_complex::Complex64;
use orim_core::basis::{MomentBasis, MomentSpec};
use orim_core::moments::compute_moments;
use orim_core::unit_disk::{Centroid, DiskMode, UnitDiskGrid};

use crate::layers::Map4;

/// Elementwise max over the theta axis; ties break to the lowest slice so
/// the routed gradient is reproducible.
fn theta_max(x: &Map4) -> (Array3<f64>, Array3<u8>) {
    let (h, w, t_len, f_len) = x.dim();
    let mut out = Array3::zeros((h, w, f_len));
    let mut arg = Array3::zeros((h, w, f_len));
    for t in 0..h {
        for s in 0..w {
            for f in 0..f_len {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0u8;
                for th in 0..t_len {
                    let v = x[[t, s, th, f]];
                    if v > best {
                        best = v;
                        best_i = th as u8;
                    }
                }
                out[[t, s, f]] = best;
                arg[[t, s, f]] = best_i;
            }
        }
    }
    (out, arg)
}

fn scatter_theta(grad2: &Array3<f64>, arg: &Array3<u8>, t_len: usize) -> Map4 {
    let (h, w, f_len) = grad2.dim();
    let mut out = Map4::zeros((h, w, t_len, f_len));
    for t in 0..h {
        for s in 0..w {
            for f in 0..f_len {
                out[[t, s, arg[[t, s, f]] as usize, f]] = grad2[[t, s, f]];
            }
        }
    }
    out
}

/// Moment-magnitude head: theta-max projection, then per-channel invariant
/// features of length `pairs * channels`, optionally L2-normalized as one
/// vector. Normalization cancels the global amplitude wobble that
/// interpolated rotations introduce; the default is raw magnitudes.
#[derive(Debug, Clone)]
pub struct OrimTransition {
    spec: MomentSpec,
    side: usize,
    channels: usize,
    central: bool,
    normalize: bool,
    /// Shared basis for the non-central path.
    basis: MomentBasis,
}

pub struct OrimCache {
    argmax: Array3<u8>,
    t_len: usize,
    /// Complex coefficients per channel.
    moments: Vec<Vec<Complex64>>,
    /// Centered bases per channel when `central`; empty otherwise.
    central_bases: Vec<MomentBasis>,
    /// Normalized output and the norm it was divided by, when `normalize`.
    normalized: Option<(Array1<f64>, f64)>,
}

impl OrimTransition {
    pub fn new(spec: MomentSpec, side: usize, channels: usize, central: bool) -> Result<Self> {
        let grid = UnitDiskGrid::build(side, DiskMode::Inner)?;
        let basis = MomentBasis::build(spec, &grid)?;
        Ok(OrimTransition {
            spec,
            side,
            channels,
            central,
            normalize: false,
            basis,
        })
    }

    /// Enable or disable L2 normalization of the feature vector.
    pub fn with_normalize(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn spec(&self) -> MomentSpec {
        self.spec
    }

    pub fn feature_len(&self) -> usize {
        self.basis.pairs().len() * self.channels
    }

    pub fn forward(&self, x: &Map4) -> Result<(Array1<f64>, OrimCache)> {
        let (h, w, t_len, f_len) = x.dim();
        if h != self.side || w != self.side || f_len != self.channels {
            return Err(GcnnError::ShapeMismatch {
                got: vec![h, w, t_len, f_len],
                want: format!("{0} x {0} x theta x {1}", self.side, self.channels),
            });
        }
        let (projected, argmax) = theta_max(x);
        let n_pairs = self.basis.pairs().len();
        let mut features = Array1::zeros(n_pairs * f_len);
        let mut moments = Vec::with_capacity(f_len);
        let mut central_bases = Vec::new();
        for f in 0..f_len {
            let channel = projected.index_axis(ndarray::Axis(2), f).to_owned();
            let mv = if self.central {
                let centroid = Centroid::of_image(channel.view());
                let grid = UnitDiskGrid::build_centered(self.side, DiskMode::Inner, centroid)?;
                let basis = MomentBasis::build(self.spec, &grid)?;
                let mv = compute_moments(channel.view(), &basis)?;
                central_bases.push(basis);
                mv
            } else {
                compute_moments(channel.view(), &self.basis)?
            };
            for (i, v) in mv.values.iter().enumerate() {
                features[f * n_pairs + i] = v.norm();
            }
            moments.push(mv.values);
        }
        let mut normalized = None;
        if self.normalize {
            let norm = features.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                features.mapv_inplace(|v| v / norm);
                normalized = Some((features.clone(), norm));
            }
        }
        Ok((
            features,
            OrimCache {
                argmax,
                t_len,
                moments,
                central_bases,
                normalized,
            },
        ))
    }

    /// Gradient of the magnitudes with respect to the projected pixels:
    /// the moment map is linear, so `d|OM| / dpixel` is the real part of
    /// `conj(OM)/|OM|` times the pixel's kernel weight. Coefficients below
    /// `1e-12` in magnitude contribute the zero subgradient. For the
    /// central variant the centroid is held fixed (its dependence on the
    /// pixels is deliberately not differentiated).
    pub fn backward(&self, cache: &OrimCache, grad: &Array1<f64>) -> Map4 {
        let n_pairs = self.basis.pairs().len();
        // Through the L2 normalization y = f / n first:
        // dL/df = (g - y (y . g)) / n.
        let grad = match &cache.normalized {
            Some((y, n)) => {
                let dot = y.iter().zip(grad.iter()).map(|(a, b)| a * b).sum::<f64>();
                Array1::from_shape_fn(grad.len(), |i| (grad[i] - y[i] * dot) / n)
            }
            None => grad.clone(),
        };
        let grad = &grad;
        let mut grad2 = Array3::zeros((self.side, self.side, self.channels));
        for f in 0..self.channels {
            let basis = if self.central {
                &cache.central_bases[f]
            } else {
                &self.basis
            };
            let delta_sq = basis.grid().delta() * basis.grid().delta();
            let pixel_index = basis.masked_pixel_indices();
            for (i, om) in cache.moments[f].iter().enumerate() {
                let upstream = grad[f * n_pairs + i];
                if upstream == 0.0 || om.norm() < 1e-12 {
                    continue;
                }
                let w = om.conj() / om.norm();
                let row = basis.kernel_row(i);
                for (k, &pix) in pixel_index.iter().enumerate() {
                    let (t, s) = (pix as usize / self.side, pix as usize % self.side);
                    grad2[[t, s, f]] += upstream * (w * row[k] * delta_sq).re;
                }
            }
        }
        scatter_theta(&grad2, &cache.argmax, cache.t_len)
    }
}

/// Control head: theta-max projection followed by plain flattening in
/// row-major `(t, s, f)` order.
#[derive(Debug, Clone)]
pub struct ThetaMaxFlatten;

pub struct FlattenCache {
    argmax: Array3<u8>,
    t_len: usize,
}

impl ThetaMaxFlatten {
    pub fn forward(&self, x: &Map4) -> (Array1<f64>, FlattenCache) {
        let (_, _, t_len, _) = x.dim();
        let (projected, argmax) = theta_max(x);
        let flat = projected.iter().cloned().collect::<Vec<f64>>();
        (Array1::from_vec(flat), FlattenCache { argmax, t_len })
    }

    pub fn backward(&self, cache: &FlattenCache, grad: &Array1<f64>) -> Map4 {
        let (h, w, f_len) = cache.argmax.dim();
        let grad2 = Array3::from_shape_vec((h, w, f_len), grad.to_vec()).expect("length");
        scatter_theta(&grad2, &cache.argmax, cache.t_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use orim_core::basis::Family;
    use orim_core::moments::compute_central_moments;

    #[test]
    fn theta_max_is_identity_for_single_slice() {
        let x = Array4::from_shape_fn((3, 3, 1, 2), |(t, s, _, f)| (t + 2 * s + f) as f64);
        let (y, arg) = theta_max(&x);
        for t in 0..3 {
            for s in 0..3 {
                for f in 0..2 {
                    assert_eq!(y[[t, s, f]], x[[t, s, 0, f]]);
                    assert_eq!(arg[[t, s, f]], 0);
                }
            }
        }
    }

    #[test]
    fn dominant_slice_wins_everywhere() {
        let mut x = Array4::zeros((2, 2, 4, 1));
        for t in 0..2 {
            for s in 0..2 {
                for th in 0..4 {
                    x[[t, s, th, 0]] = if th == 2 { 5.0 } else { th as f64 * 0.1 };
                }
            }
        }
        let (y, arg) = theta_max(&x);
        assert!(y.iter().all(|&v| v == 5.0));
        assert!(arg.iter().all(|&a| a == 2));
    }

    #[test]
    fn ties_route_to_lowest_theta() {
        let x = Array4::from_elem((1, 1, 3, 1), 1.5);
        let (_, arg) = theta_max(&x);
        assert_eq!(arg[[0, 0, 0]], 0);
        let grad2 = Array3::from_elem((1, 1, 1), 2.0);
        let back = scatter_theta(&grad2, &arg, 3);
        assert_eq!(back[[0, 0, 0, 0]], 2.0);
        assert_eq!(back.sum(), 2.0);
    }

    #[test]
    fn zero_map_gives_zero_features() {
        let head = OrimTransition::new(
            MomentSpec::new(Family::PseudoZernike, 3).unwrap(),
            8,
            2,
            false,
        )
        .unwrap();
        let x = Array4::zeros((8, 8, 4, 2));
        let (features, _) = head.forward(&x).unwrap();
        assert_eq!(features.len(), head.feature_len());
        assert!(features.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_length_is_pairs_times_channels() {
        let head = OrimTransition::new(
            MomentSpec::new(Family::PseudoZernike, 5).unwrap(),
            4,
            10,
            false,
        )
        .unwrap();
        assert_eq!(head.feature_len(), 150);
    }

    #[test]
    fn central_forward_matches_core_central_moments() {
        let spec = MomentSpec::new(Family::PseudoZernike, 3).unwrap();
        let head = OrimTransition::new(spec, 8, 1, true).unwrap();
        let x = Array4::from_shape_fn((8, 8, 2, 1), |(t, s, th, _)| {
            ((t * 3 + s * 5 + th * 7) % 11) as f64 / 11.0
        });
        let (features, _) = head.forward(&x).unwrap();
        let (projected, _) = theta_max(&x);
        let channel = projected.index_axis(ndarray::Axis(2), 0).to_owned();
        let mv = compute_central_moments(channel.view(), spec, DiskMode::Inner).unwrap();
        for (i, v) in mv.values.iter().enumerate() {
            assert!((features[i] - v.norm()).abs() < 1e-14);
        }
    }

    #[test]
    fn normalized_features_have_unit_length() {
        let head = OrimTransition::new(
            MomentSpec::new(Family::PseudoZernike, 3).unwrap(),
            8,
            2,
            false,
        )
        .unwrap()
        .with_normalize(true);
        let x = Array4::from_shape_fn((8, 8, 4, 2), |(t, s, th, f)| {
            ((t * 5 + s * 3 + th * 2 + f) % 7) as f64 / 7.0
        });
        let (features, _) = head.forward(&x).unwrap();
        let norm = features.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_cancels_global_scaling() {
        let head = OrimTransition::new(
            MomentSpec::new(Family::PseudoZernike, 3).unwrap(),
            8,
            2,
            false,
        )
        .unwrap()
        .with_normalize(true);
        let x = Array4::from_shape_fn((8, 8, 4, 2), |(t, s, th, f)| {
            ((t * 5 + s * 3 + th * 2 + f) % 7) as f64 / 7.0
        });
        let scaled = x.mapv(|v| 3.5 * v);
        let (a, _) = head.forward(&x).unwrap();
        let (b, _) = head.forward(&scaled).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_map_stays_zero_under_normalization() {
        let head = OrimTransition::new(
            MomentSpec::new(Family::PseudoZernike, 3).unwrap(),
            8,
            1,
            false,
        )
        .unwrap()
        .with_normalize(true);
        let x = Array4::zeros((8, 8, 4, 1));
        let (features, cache) = head.forward(&x).unwrap();
        assert!(features.iter().all(|&v| v == 0.0));
        let grad = Array1::from_elem(head.feature_len(), 1.0);
        let back = head.backward(&cache, &grad);
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gradient_is_zero() {
        let head = OrimTransition::new(
            MomentSpec::new(Family::PseudoZernike, 3).unwrap(),
            8,
            2,
            false,
        )
        .unwrap();
        let x = Array4::from_shape_fn((8, 8, 4, 2), |(t, s, th, f)| {
            ((t + s + th + f) % 5) as f64 * 0.2
        });
        let (_, cache) = head.forward(&x).unwrap();
        let grad = Array1::zeros(head.feature_len());
        let back = head.backward(&cache, &grad);
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flatten_round_trips_gradient() {
        let x = Array4::from_shape_fn((4, 4, 4, 3), |(t, s, th, f)| {
            (t as f64) + 0.1 * s as f64 + 0.01 * th as f64 + 0.001 * f as f64
        });
        let head = ThetaMaxFlatten;
        let (flat, cache) = head.forward(&x);
        assert_eq!(flat.len(), 48);
        let grad = Array1::from_shape_fn(48, |i| i as f64);
        let back = head.backward(&cache, &grad);
        assert_eq!(back.sum(), grad.sum());
        // Every gradient entry lands on the argmax slice (theta = 3 here,
        // the largest contribution).
        for t in 0..4 {
            for s in 0..4 {
                for f in 0..3 {
                    assert_eq!(back[[t, s, 3, f]], grad[(t * 4 + s) * 3 + f]);
                }
            }
        }
    }
}

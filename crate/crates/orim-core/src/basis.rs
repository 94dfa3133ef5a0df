//! Radial polynomial families and precomputed complex kernel tables.
//!
//! Each moment family is defined by a real radial polynomial `R_pq(r)` and the
//! shared normalization `lambda_p = (p + 1) / pi`; the complex kernel of the
//! pair `(p, q)` is `V_pq(r, theta) = lambda_p * R_pq(r) * exp(-i q theta)`.
//!
//! The three families:
//!
//! - Zernike: `R_pq(r) = sum_k c_k r^(p-2k)` over `k = 0 .. (p-|q|)/2`, with
//!   `c_k = (-1)^k (p-k)! / [k! ((p+|q|)/2-k)! ((p-|q|)/2-k)!]`; requires
//!   `|q| <= p` and `p - |q|` even.
//! - Pseudo-Zernike: `R_pq(r) = sum_k c_k r^(p-k)` over `k = 0 .. p-|q|`,
//!   with `c_k = (-1)^k (2p+1-k)! / [k! (p-|q|-k)! (p+|q|+1-k)!]`; `|q| <= p`.
//! - Orthogonal Fourier-Mellin: `R_p(r) = sum_k c_k r^k` over `k = 0 .. p`,
//!   with `c_k = (-1)^(p+k) (p+k+1)! / [k! (k+1)! (p-k)!]`; independent of q,
//!   `|q| <= p`.
//!
//! Coefficients are materialized as exact integers through consecutive-term
//! ratio recurrences (factorials never appear in floating point), and they all
//! stay below 2^53 within the supported order caps, so the `f64` images of the
//! coefficients are exact. Evaluation uses error-compensated Horner so that
//! even the badly cancelling high-order pseudo-Zernike and Fourier-Mellin sums
//! stay at a few ulps.

use crate::unit_disk::{DiskMode, UnitDiskGrid};
use crate::{OrimError, Result};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::{Read, Write};

/// Moment family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Zernike moments.
    Zernike,
    /// Pseudo-Zernike moments.
    PseudoZernike,
    /// Orthogonal Fourier-Mellin moments.
    FourierMellin,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Zernike => "ZM",
            Family::PseudoZernike => "PZM",
            Family::FourierMellin => "OFMM",
        })
    }
}

impl Family {
    /// Highest order with trustworthy double-precision evaluation. Requests
    /// beyond the cap are rejected rather than silently degraded.
    pub fn order_cap(self) -> u32 {
        match self {
            Family::Zernike => 20,
            Family::PseudoZernike => 15,
            Family::FourierMellin => 15,
        }
    }

    /// Is `(p, q)` an admissible order/repetition pair?
    pub fn pair_valid(self, p: u32, q: i32) -> bool {
        let qa = q.unsigned_abs();
        match self {
            Family::Zernike => qa <= p && (p - qa) % 2 == 0,
            Family::PseudoZernike | Family::FourierMellin => qa <= p,
        }
    }

    /// Stable one-byte tag used by the basis file format.
    pub fn code(self) -> u8 {
        match self {
            Family::Zernike => 0,
            Family::PseudoZernike => 1,
            Family::FourierMellin => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Family::Zernike),
            1 => Some(Family::PseudoZernike),
            2 => Some(Family::FourierMellin),
            _ => None,
        }
    }
}

/// Normalization constant `lambda_p = (p + 1) / pi`, common to all families.
pub fn lambda(p: u32) -> f64 {
    (p as f64 + 1.0) / PI
}

/// Identifies one feature extractor: family, maximum order, and whether the
/// phase-free `q = 0` coefficients join the enumeration.
///
/// Negative repetitions are never enumerated: `|OM_p,-q| = |OM_p,q|` for real
/// images, so they add no information to magnitude features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MomentSpec {
    pub family: Family,
    pub p_max: u32,
    pub include_q_zero: bool,
}

impl MomentSpec {
    /// Spec with the default `q >= 1` enumeration.
    pub fn new(family: Family, p_max: u32) -> Result<Self> {
        Self::with_q_zero(family, p_max, false)
    }

    pub fn with_q_zero(family: Family, p_max: u32, include_q_zero: bool) -> Result<Self> {
        if p_max > family.order_cap() {
            return Err(OrimError::OrderAboveCap {
                family,
                p_max,
                cap: family.order_cap(),
            });
        }
        Ok(MomentSpec {
            family,
            p_max,
            include_q_zero,
        })
    }

    /// All admissible `(p, q)` pairs, ascending in `p` then in `q`.
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        let q_lo = if self.include_q_zero { 0 } else { 1 };
        let mut out = Vec::new();
        for p in 0..=self.p_max {
            for q in q_lo..=p {
                if self.family.pair_valid(p, q as i32) {
                    out.push((p, q));
                }
            }
        }
        out
    }

    /// Closed-form count of the default (`q >= 1`) enumeration.
    pub fn pair_count(family: Family, p_max: u32) -> u32 {
        match family {
            // Equals (1/8) [2 p^2 + 4 p + (-1)^(2p) + (-1)^(p+1)]; the two
            // parity branches below are that expression with the signs
            // resolved, and both are exact integers.
            Family::Zernike => {
                if p_max % 2 == 0 {
                    p_max * (p_max + 2) / 4
                } else {
                    (p_max + 1) * (p_max + 1) / 4
                }
            }
            Family::PseudoZernike | Family::FourierMellin => p_max * (p_max + 1) / 2,
        }
    }
}

/// One radial polynomial with exact integer coefficients.
#[derive(Debug, Clone)]
pub struct RadialPoly {
    pub family: Family,
    pub p: u32,
    /// Repetition magnitude; `R_p,q = R_p,-q` in every family.
    pub q_abs: u32,
    /// `(power, coefficient)` terms, descending in power.
    terms: Vec<(u32, i128)>,
    /// Dense coefficients indexed by power, for Horner evaluation.
    dense: Vec<f64>,
}

impl RadialPoly {
    pub fn build(family: Family, p: u32, q: i32) -> Result<Self> {
        if p > family.order_cap() {
            return Err(OrimError::OrderAboveCap {
                family,
                p_max: p,
                cap: family.order_cap(),
            });
        }
        if !family.pair_valid(p, q) {
            return Err(OrimError::InvalidPair { family, p, q });
        }
        let qa = q.unsigned_abs();
        let terms = match family {
            Family::Zernike => zernike_terms(p, qa),
            Family::PseudoZernike => pseudo_zernike_terms(p, qa),
            Family::FourierMellin => fourier_mellin_terms(p),
        };
        let deg = terms.iter().map(|&(pw, _)| pw).max().unwrap_or(0);
        let mut dense = vec![0.0; deg as usize + 1];
        for &(pw, c) in &terms {
            // All coefficients fit below 2^53 within the order caps, so this
            // conversion is exact.
            dense[pw as usize] = c as f64;
        }
        Ok(RadialPoly {
            family,
            p,
            q_abs: qa,
            terms,
            dense,
        })
    }

    /// Exact `(power, coefficient)` terms, descending in power.
    pub fn terms(&self) -> &[(u32, i128)] {
        &self.terms
    }

    /// Evaluate at `r` with compensated Horner; accurate to a few ulps even
    /// where the terms cancel by six orders of magnitude.
    pub fn eval(&self, r: f64) -> f64 {
        let mut s = *self.dense.last().unwrap();
        let mut e = 0.0;
        for &c in self.dense[..self.dense.len() - 1].iter().rev() {
            let p = s * r;
            let pe = s.mul_add(r, -p); // exact product residue
            let (s2, se) = two_sum(p, c);
            s = s2;
            e = e * r + (pe + se);
        }
        s + e
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

/// `R_pq(r)` for a single radius. Convenience wrapper over [`RadialPoly`].
pub fn radial_eval(family: Family, p: u32, q: i32, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(OrimError::RadiusOutOfRange { r });
    }
    Ok(RadialPoly::build(family, p, q)?.eval(r))
}

fn binom(n: u32, k: u32) -> i128 {
    let mut acc: i128 = 1;
    for i in 0..k.min(n - k) {
        acc = acc * (n - i) as i128 / (i + 1) as i128;
    }
    acc
}

/// Advance one coefficient of a term recurrence: `c * num / den` with the
/// divisibility that the factorial ratios guarantee.
fn ratio_step(c: i128, num: i128, den: i128) -> i128 {
    let t = c * num;
    assert!(t % den == 0, "non-integral coefficient step");
    t / den
}

fn zernike_terms(p: u32, qa: u32) -> Vec<(u32, i128)> {
    let half_sum = ((p + qa) / 2) as i128;
    let half_diff = ((p - qa) / 2) as i128;
    let mut c = binom(p, (p - qa) / 2);
    let mut terms = Vec::with_capacity(half_diff as usize + 1);
    for k in 0..=half_diff {
        terms.push((p - 2 * k as u32, c));
        if k < half_diff {
            c = ratio_step(
                c,
                -(half_sum - k) * (half_diff - k),
                (p as i128 - k) * (k + 1),
            );
        }
    }
    terms
}

fn pseudo_zernike_terms(p: u32, qa: u32) -> Vec<(u32, i128)> {
    let kmax = (p - qa) as i128;
    let mut c = binom(2 * p + 1, p - qa);
    let mut terms = Vec::with_capacity(kmax as usize + 1);
    for k in 0..=kmax {
        terms.push((p - k as u32, c));
        if k < kmax {
            c = ratio_step(
                c,
                -(kmax - k) * (p as i128 + qa as i128 + 1 - k),
                (2 * p as i128 + 1 - k) * (k + 1),
            );
        }
    }
    terms
}

fn fourier_mellin_terms(p: u32) -> Vec<(u32, i128)> {
    let mut c: i128 = if p % 2 == 0 {
        p as i128 + 1
    } else {
        -(p as i128 + 1)
    };
    let mut terms = Vec::with_capacity(p as usize + 1);
    for k in 0..=p as i128 {
        terms.push((k as u32, c));
        if k < p as i128 {
            c = ratio_step(c, -(p as i128 + k + 2) * (p as i128 - k), (k + 1) * (k + 2));
        }
    }
    // Ascending powers were produced; flip to the descending convention.
    terms.reverse();
    terms
}

/// Precomputed complex kernel table `V_pq` over the masked pixels of a grid.
///
/// Rows are pair-major and contiguous: row `i` holds the kernel of
/// `pairs()[i]` over masked pixels in row-major pixel order. Tables include
/// `lambda_p` but not the elemental area `delta^2`, which the moment
/// dot-product applies once.
#[derive(Debug, Clone)]
pub struct MomentBasis {
    spec: MomentSpec,
    grid: UnitDiskGrid,
    pairs: Vec<(u32, u32)>,
    /// Flat pixel index (`t * M + s`) of each masked pixel, row-major.
    pixel_index: Vec<u32>,
    kernels: Vec<Complex64>,
}

impl MomentBasis {
    /// Build the kernel table for `spec` over `grid`.
    ///
    /// Radial values are produced from shared powers of `r` (one power ladder
    /// per pixel), so the per-pixel cost of one coefficient is proportional
    /// to its term count, not to a fresh polynomial evaluation.
    pub fn build(spec: MomentSpec, grid: &UnitDiskGrid) -> Result<Self> {
        if spec.p_max > spec.family.order_cap() {
            return Err(OrimError::OrderAboveCap {
                family: spec.family,
                p_max: spec.p_max,
                cap: spec.family.order_cap(),
            });
        }
        let pairs = spec.pairs();
        let polys: Vec<RadialPoly> = pairs
            .iter()
            .map(|&(p, q)| RadialPoly::build(spec.family, p, q as i32))
            .collect::<Result<_>>()?;

        let m = grid.m();
        let masked: Vec<(u32, f64, f64)> = grid
            .masked_pixels()
            .map(|(t, s, r, th)| ((t * m + s) as u32, r, th))
            .collect();
        let n_px = masked.len();
        let mut kernels = vec![Complex64::new(0.0, 0.0); pairs.len() * n_px];
        let mut powers = vec![0.0f64; spec.p_max as usize + 1];

        for (j, &(_, r, theta)) in masked.iter().enumerate() {
            powers[0] = 1.0;
            for k in 1..=spec.p_max as usize {
                powers[k] = powers[k - 1] * r;
            }
            for (i, poly) in polys.iter().enumerate() {
                let mut radial = 0.0;
                for &(pw, c) in poly.terms() {
                    radial += c as f64 * powers[pw as usize];
                }
                let (p, q) = pairs[i];
                let (sin, cos) = (-(q as f64) * theta).sin_cos();
                let v = lambda(p) * radial;
                kernels[i * n_px + j] = Complex64::new(v * cos, v * sin);
            }
        }

        Ok(MomentBasis {
            spec,
            grid: grid.clone(),
            pairs,
            pixel_index: masked.iter().map(|&(i, _, _)| i).collect(),
            kernels,
        })
    }

    pub fn spec(&self) -> MomentSpec {
        self.spec
    }

    pub fn grid(&self) -> &UnitDiskGrid {
        &self.grid
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    /// Kernel row of pair index `i`, one complex value per masked pixel.
    pub fn kernel_row(&self, i: usize) -> &[Complex64] {
        let n = self.pixel_index.len();
        &self.kernels[i * n..(i + 1) * n]
    }

    /// Flat pixel indices (`t * M + s`) aligned with every kernel row.
    pub fn masked_pixel_indices(&self) -> &[u32] {
        &self.pixel_index
    }

    /// Pairwise deviation of the discrete inner products from orthonormality.
    ///
    /// The continuous kernels satisfy `<V_i, V_j> = delta_ij * lambda_p`, so
    /// the discrete Gram matrix `sum_px V_i conj(V_j) delta^2`, rescaled by
    /// `1 / sqrt(lambda_i lambda_j)`, should approach the identity. Entry
    /// `(i, j)` of the result is the modulus of the deviation from identity.
    pub fn orthogonality_check(&self) -> ndarray::Array2<f64> {
        let n_pairs = self.pairs.len();
        let n_px = self.pixel_index.len();
        let d2 = self.grid.delta() * self.grid.delta();
        let mut out = ndarray::Array2::zeros((n_pairs, n_pairs));
        for i in 0..n_pairs {
            let row_i = &self.kernels[i * n_px..(i + 1) * n_px];
            for j in 0..n_pairs {
                let row_j = &self.kernels[j * n_px..(j + 1) * n_px];
                let mut acc = Complex64::new(0.0, 0.0);
                for (a, b) in row_i.iter().zip(row_j) {
                    acc += a * b.conj();
                }
                let scale = (lambda(self.pairs[i].0) * lambda(self.pairs[j].0)).sqrt();
                let target = if i == j { 1.0 } else { 0.0 };
                out[[i, j]] = (acc * d2 / scale - target).norm();
            }
        }
        out
    }

    /// Serialize to the `ORIMBAS1` little-endian binary layout: header
    /// (magic, family code u8, p_max u16, M u32, disk mode u8, pair count
    /// u32), pair list (p u16, q i16), then complex-interleaved f64 kernel
    /// rows over masked pixels in row-major pixel order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"ORIMBAS1")?;
        w.write_all(&[self.spec.family.code()])?;
        w.write_all(&(self.spec.p_max as u16).to_le_bytes())?;
        w.write_all(&(self.grid.m() as u32).to_le_bytes())?;
        w.write_all(&[self.grid.mode().code()])?;
        w.write_all(&(self.pairs.len() as u32).to_le_bytes())?;
        for &(p, q) in &self.pairs {
            w.write_all(&(p as u16).to_le_bytes())?;
            w.write_all(&(q as i16).to_le_bytes())?;
        }
        for v in &self.kernels {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// Parse the `ORIMBAS1` layout written by [`MomentBasis::write_to`].
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"ORIMBAS1" {
            return Err(OrimError::BasisFormat(format!(
                "bad magic {:?}",
                &magic[..]
            )));
        }
        let family = Family::from_code(read_u8(r)?)
            .ok_or_else(|| OrimError::BasisFormat("unknown family code".into()))?;
        let p_max = read_u16(r)? as u32;
        let m = read_u32(r)? as usize;
        let mode = DiskMode::from_code(read_u8(r)?)
            .ok_or_else(|| OrimError::BasisFormat("unknown disk mode".into()))?;
        let n_pairs = read_u32(r)? as usize;

        let mut pairs = Vec::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let p = read_u16(r)? as u32;
            let q = read_i16(r)?;
            if q < 0 || !family.pair_valid(p, q as i32) {
                return Err(OrimError::BasisFormat(format!(
                    "pair (p={p}, q={q}) invalid for {family}"
                )));
            }
            pairs.push((p, q as u32));
        }
        let include_q_zero = pairs.iter().any(|&(_, q)| q == 0);
        let spec = MomentSpec::with_q_zero(family, p_max, include_q_zero)?;
        if pairs != spec.pairs() {
            return Err(OrimError::BasisFormat(
                "pair list does not match the family enumeration".into(),
            ));
        }

        let grid = UnitDiskGrid::build(m, mode)?;
        let n_px = grid.masked_count();
        let mut kernels = Vec::with_capacity(n_pairs * n_px);
        let mut buf = [0u8; 16];
        for k in 0..n_pairs * n_px {
            r.read_exact(&mut buf).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    OrimError::BasisFormat(format!(
                        "kernel payload truncated at value {k} of {}",
                        n_pairs * n_px
                    ))
                } else {
                    OrimError::Io(e)
                }
            })?;
            kernels.push(Complex64::new(
                f64::from_le_bytes(buf[..8].try_into().unwrap()),
                f64::from_le_bytes(buf[8..].try_into().unwrap()),
            ));
        }
        let m_u = grid.m();
        Ok(MomentBasis {
            spec,
            pixel_index: grid
                .masked_pixels()
                .map(|(t, s, _, _)| (t * m_u + s) as u32)
                .collect(),
            grid,
            pairs,
            kernels,
        })
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_i16<R: Read>(r: &mut R) -> Result<i16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(i16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

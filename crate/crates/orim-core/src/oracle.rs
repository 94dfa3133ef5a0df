//! Slow, independent references for the fast paths.
//!
//! Everything here favors obviousness over speed and shares no code with the
//! implementations it checks: radial coefficients come from big-integer
//! factorials (not ratio recurrences), polynomial values from exact rational
//! arithmetic (not compensated floating point), and integrals from brute
//! midpoint quadrature (not pixel sums).

use crate::basis::{lambda, Family};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

fn factorial(n: u32) -> BigInt {
    let mut acc = BigInt::from(1u32);
    for i in 2..=n {
        acc *= i;
    }
    acc
}

/// Exact `(power, coefficient)` expansion of a radial polynomial, built from
/// factorials alone. Supported up to `p = 15`.
pub fn rational_radial(family: Family, p: u32, q: i32) -> Vec<(u32, BigInt)> {
    assert!(p <= 15, "rational oracle supports p <= 15");
    let qa = q.unsigned_abs();
    assert!(family.pair_valid(p, q), "invalid pair ({p}, {q})");
    let mut terms = Vec::new();
    match family {
        Family::Zernike => {
            for k in 0..=(p - qa) / 2 {
                let num = factorial(p - k);
                let den =
                    factorial(k) * factorial((p + qa) / 2 - k) * factorial((p - qa) / 2 - k);
                let mut c = num / den;
                if k % 2 == 1 {
                    c = -c;
                }
                terms.push((p - 2 * k, c));
            }
        }
        Family::PseudoZernike => {
            for k in 0..=p - qa {
                let num = factorial(2 * p + 1 - k);
                let den = factorial(k) * factorial(p - qa - k) * factorial(p + qa + 1 - k);
                let mut c = num / den;
                if k % 2 == 1 {
                    c = -c;
                }
                terms.push((p - k, c));
            }
        }
        Family::FourierMellin => {
            for k in 0..=p {
                let num = factorial(p + k + 1);
                let den = factorial(k) * factorial(k + 1) * factorial(p - k);
                let mut c = num / den;
                if (p + k) % 2 == 1 {
                    c = -c;
                }
                terms.push((k, c));
            }
        }
    }
    terms
}

/// Evaluate a radial polynomial in exact rational arithmetic and round once
/// at the end. The only floating-point operation is the final conversion.
pub fn exact_radial_eval(family: Family, p: u32, q: i32, r: f64) -> f64 {
    let r_exact = BigRational::from_float(r).expect("finite radius");
    let mut acc = BigRational::zero();
    for (power, c) in rational_radial(family, p, q) {
        let mut term = BigRational::from_integer(c);
        for _ in 0..power {
            term *= &r_exact;
        }
        acc += term;
    }
    rational_to_f64(&acc)
}

/// Correctly-rounded-to-a-few-ulps conversion of an exact rational.
///
/// The quotient is formed with 56 significant bits and rounded, so the
/// result is within ~1 ulp of the true value regardless of how large the
/// numerator and denominator have grown.
pub fn rational_to_f64(x: &BigRational) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    let neg = x.is_negative();
    let a = x.numer().abs();
    let b = x.denom().abs();
    let shift: i64 = 56 - (a.bits() as i64 - b.bits() as i64);
    let (num, den) = if shift >= 0 {
        (&a << shift as u64, b)
    } else {
        (a, &b << (-shift) as u64)
    };
    let mut q = &num / &den;
    let rem = &num - &q * &den;
    if &rem * 2 >= den {
        q += 1;
    }
    let v = q.to_u64().expect("56-bit quotient") as f64 * (shift as f64).exp2().recip();
    if neg {
        -v
    } else {
        v
    }
}

/// Independent pair enumeration: every `(p, q)` the family admits, ascending.
pub fn enumerate_pairs_brute(family: Family, p_max: u32, include_q_zero: bool) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for p in 0..=p_max {
        for q in 0..=p {
            if q == 0 && !include_q_zero {
                continue;
            }
            let even_gap_ok = match family {
                Family::Zernike => (p - q) % 2 == 0,
                _ => true,
            };
            if even_gap_ok {
                out.push((p, q));
            }
        }
    }
    out
}

/// Midpoint-rule approximation of a continuous moment plus a step-halving
/// error estimate.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureResult {
    pub value: Complex64,
    /// `|value - coarser_value|` with half the subdivisions per axis; a
    /// convergence indicator, not a bound.
    pub richardson_gap: f64,
}

/// Brute-force the defining integral `lambda_p * int int O(r, theta)
/// R_pq(r) exp(-i q theta) r dr dtheta` by the midpoint rule.
pub fn quadrature_moment(
    image: &dyn Fn(f64, f64) -> f64,
    family: Family,
    p: u32,
    q: i32,
    radial_divs: usize,
    angular_divs: usize,
) -> QuadratureResult {
    assert!(
        radial_divs >= 256 && angular_divs >= 1024,
        "resolution below the supported floor"
    );
    let fine = midpoint_moment(image, family, p, q, radial_divs, angular_divs);
    let coarse = midpoint_moment(image, family, p, q, radial_divs / 2, angular_divs / 2);
    QuadratureResult {
        value: fine,
        richardson_gap: (fine - coarse).norm(),
    }
}

fn midpoint_moment(
    image: &dyn Fn(f64, f64) -> f64,
    family: Family,
    p: u32,
    q: i32,
    radial_divs: usize,
    angular_divs: usize,
) -> Complex64 {
    // Plain-float Horner over the exact integer coefficients; the oracle
    // tolerances (1e-6 scale) leave this ample headroom.
    let coeffs = rational_radial(family, p, q);
    let dense_deg = coeffs.iter().map(|&(pw, _)| pw).max().unwrap_or(0) as usize;
    let mut dense = vec![0.0f64; dense_deg + 1];
    for (pw, c) in &coeffs {
        dense[*pw as usize] = c.to_f64().expect("coefficient fits f64");
    }
    let radial = |r: f64| -> f64 {
        let mut acc = 0.0;
        for &c in dense.iter().rev() {
            acc = acc * r + c;
        }
        acc
    };

    let dr = 1.0 / radial_divs as f64;
    let dtheta = 2.0 * std::f64::consts::PI / angular_divs as f64;
    let phases: Vec<Complex64> = (0..angular_divs)
        .map(|j| {
            let theta = (j as f64 + 0.5) * dtheta;
            Complex64::new(0.0, -(q as f64) * theta).exp()
        })
        .collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..radial_divs {
        let r = (i as f64 + 0.5) * dr;
        let w = radial(r) * r;
        let mut ring = Complex64::new(0.0, 0.0);
        for (j, phase) in phases.iter().enumerate() {
            let theta = (j as f64 + 0.5) * dtheta;
            ring += image(r, theta) * phase;
        }
        acc += w * ring;
    }
    lambda(p) * acc * dr * dtheta
}
